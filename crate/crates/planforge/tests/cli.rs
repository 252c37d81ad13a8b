//! End-to-end tests of the `planforge` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use planforge::raster::{encode_plan, RasterPlan, SemanticLabel};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_planforge"))
}

fn run_ok(args: &[&str]) -> Output {
    let out = bin().args(args).output().expect("binary runs");
    assert!(
        out.status.success(),
        "command {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// A plan with the living room spanning the left side and kitchen, bedroom
/// and bathroom stacked on the right, everything adjacent to the living
/// room through one-pixel walls.
fn pipeline_plan() -> RasterPlan {
    let size = 48u32;
    let mut labels = vec![SemanticLabel::ExternalArea; (size * size) as usize];
    let mut rect = |x0: u32, y0: u32, x1: u32, y1: u32, label: SemanticLabel| {
        for y in y0..=y1 {
            for x in x0..=x1 {
                labels[(y * size + x) as usize] = label;
            }
        }
    };
    rect(2, 2, 45, 45, SemanticLabel::ExteriorWall);
    rect(4, 4, 43, 43, SemanticLabel::InteriorWall);
    rect(4, 4, 27, 43, SemanticLabel::Living);
    rect(29, 4, 43, 16, SemanticLabel::Kitchen);
    rect(29, 18, 43, 30, SemanticLabel::Bedroom);
    rect(29, 32, 43, 43, SemanticLabel::Bathroom);
    rect(10, 2, 11, 3, SemanticLabel::FrontDoor);
    RasterPlan::from_label_grid(size, size, labels).unwrap()
}

fn write_plan(dir: &Path, name: &str) -> PathBuf {
    let path = dir.join(name);
    encode_plan(&pipeline_plan()).save(&path).unwrap();
    path
}

#[test]
fn unknown_subcommand_exits_2() {
    let out = bin().arg("frobnicate").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());
}

#[test]
fn help_exits_0() {
    let out = bin().arg("--help").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn show_config_prints_defaults() {
    let out = run_ok(&["--show-config"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("area_divisor = 100"));
    assert!(text.contains("canny_sigma = 1"));
}

#[test]
fn extract_graph_counts_rooms_on_a_two_room_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let size = 32u32;
    let mut labels = vec![SemanticLabel::ExternalArea; (size * size) as usize];
    for y in 4..12 {
        for x in 4..12 {
            labels[(y * size + x) as usize] = SemanticLabel::Living;
        }
    }
    for y in 4..12 {
        for x in 14..24 {
            labels[(y * size + x) as usize] = SemanticLabel::Bedroom;
        }
    }
    let plan = RasterPlan::from_label_grid(size, size, labels).unwrap();
    let plan_path = dir.path().join("two_rooms.png");
    encode_plan(&plan).save(&plan_path).unwrap();
    let kg_path = dir.path().join("kg.json");
    run_ok(&[
        "extract-graph",
        plan_path.to_str().unwrap(),
        "--out",
        kg_path.to_str().unwrap(),
    ]);
    let kg = planforge::graph::deserialize_graph(&fs::read_to_string(&kg_path).unwrap()).unwrap();
    assert_eq!(kg.nodes.len(), 2);
}

#[test]
fn parse_prompt_reads_a_file_and_emits_the_constraint_document() {
    let dir = tempfile::tempdir().unwrap();
    let prompt_path = dir.path().join("row1.txt");
    fs::write(
        &prompt_path,
        "<p>The room has 2_bedroom, 1_bathroom, 1_living_room, 1_kitchen,1_balcony, \
         bedroom1_space_17, bathroom_space_5, living_room_space_73, bedroom2_space_11, \
         kitchen_space_5, balcony_space_7, bedroom_1 connect bathroom,bedroom_1 connect \
         living_room,bedroom_1 connect balcony, bathroom connect living_room, bathroom \
         connect bedroom_2,living_room connect bedroom_2,living_room connect kitchen, \
         living_room connect balcony,bedroom_2 connect kitchen.</p>",
    )
    .unwrap();
    let out = run_ok(&["parse-prompt", "--in", prompt_path.to_str().unwrap()]);
    let cs: planforge::prompt::ConstraintSet =
        serde_json::from_slice(&out.stdout).expect("stdout is a constraint document");
    assert_eq!(cs.count_of(planforge::raster::RoomClass::Bedroom), Some(2));
    assert_eq!(cs.areas.unwrap().len(), 6);
    assert_eq!(cs.connections.unwrap().len(), 9);
}

#[test]
fn malformed_plan_reports_a_domain_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.png");
    // Interior pixel with an unknown channel-2 value.
    let mut img = image::RgbaImage::new(4, 4);
    for p in img.pixels_mut() {
        *p = image::Rgba([0, 42, 0, 255]);
    }
    img.save(&path).unwrap();
    let out = bin()
        .args(["extract-graph", path.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("error[UnknownChannel2Value]"), "{stderr}");
}

#[test]
fn full_pipeline_self_compliance() {
    let dir = tempfile::tempdir().unwrap();
    let plan_path = write_plan(dir.path(), "plan.png");
    let recolored = dir.path().join("recolored.png");
    let kg_path = dir.path().join("kg.json");
    let prompt_path = dir.path().join("prompt.txt");
    let report_path = dir.path().join("report.json");

    // preprocess (factor 2) -> extract from the recolored output.
    run_ok(&[
        "preprocess",
        plan_path.to_str().unwrap(),
        "--out",
        recolored.to_str().unwrap(),
        "--factor",
        "2",
    ]);
    run_ok(&[
        "extract-graph",
        recolored.to_str().unwrap(),
        "--out",
        kg_path.to_str().unwrap(),
        "--dilation",
        "2",
    ]);
    // Area divisor scales by factor^2: 100 -> 400.
    run_ok(&[
        "emit-prompt",
        kg_path.to_str().unwrap(),
        "--area-divisor",
        "400",
        "--out",
        prompt_path.to_str().unwrap(),
    ]);
    let parse_out = run_ok(&["parse-prompt", "--in", prompt_path.to_str().unwrap()]);
    assert!(parse_out.status.success());
    run_ok(&[
        "check",
        "--graph",
        kg_path.to_str().unwrap(),
        "--prompt",
        prompt_path.to_str().unwrap(),
        "--plan",
        recolored.to_str().unwrap(),
        "--area-divisor",
        "400",
        "--out",
        report_path.to_str().unwrap(),
    ]);
    let report: planforge::prompt::ComplianceReport =
        serde_json::from_str(&fs::read_to_string(&report_path).unwrap()).unwrap();
    assert!(report.passed(), "{report:#?}");
    // The norm rule applies here: living room adjacent to kitchen.
    assert_eq!(
        report.design_norms.status,
        planforge::prompt::RuleStatus::Pass
    );
    assert_eq!(
        report.compactness.status,
        planforge::prompt::RuleStatus::Pass
    );
}

#[test]
fn config_env_var_supplies_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("planforge.conf");
    fs::write(&cfg_path, "area_divisor = 400\ncanny_low = 0.07\n").unwrap();
    let out = bin()
        .env("PLANFORGE_CONFIG", &cfg_path)
        .arg("--show-config")
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("area_divisor = 400"), "{text}");
    assert!(text.contains("canny_low = 0.07"), "{text}");
    // An explicit --config wins over the environment.
    let other = dir.path().join("other.conf");
    fs::write(&other, "area_divisor = 250\n").unwrap();
    let out = bin()
        .env("PLANFORGE_CONFIG", &cfg_path)
        .args(["--config", other.to_str().unwrap(), "--show-config"])
        .output()
        .unwrap();
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("area_divisor = 250"), "{text}");
}

#[test]
fn canny_accepts_a_plain_grayscale_image() {
    let dir = tempfile::tempdir().unwrap();
    let mut img = image::GrayImage::new(24, 24);
    for (x, _, p) in img.enumerate_pixels_mut() {
        *p = image::Luma([if x < 12 { 0 } else { 255 }]);
    }
    let input = dir.path().join("step.png");
    img.save(&input).unwrap();
    let out_path = dir.path().join("edges.png");
    run_ok(&[
        "canny",
        input.to_str().unwrap(),
        "--source",
        "image",
        "--out",
        out_path.to_str().unwrap(),
    ]);
    let edges = image::open(&out_path).unwrap().to_luma8();
    assert!(edges.pixels().any(|p| p.0[0] == 255));
}

#[test]
fn canny_writes_an_edge_map_png() {
    let dir = tempfile::tempdir().unwrap();
    let plan_path = write_plan(dir.path(), "plan.png");
    let edges_path = dir.path().join("edges.png");
    run_ok(&[
        "canny",
        plan_path.to_str().unwrap(),
        "--out",
        edges_path.to_str().unwrap(),
    ]);
    let img = image::open(&edges_path).unwrap().to_luma8();
    let values: std::collections::BTreeSet<u8> = img.pixels().map(|p| p.0[0]).collect();
    assert!(values.iter().all(|v| *v == 0 || *v == 255));
    assert!(values.contains(&255), "edge map is not empty");
}

#[test]
fn eval_reports_means_over_a_directory_pair() {
    let dir = tempfile::tempdir().unwrap();
    let gen_dir = dir.path().join("generated");
    let ref_dir = dir.path().join("reference");
    fs::create_dir_all(&gen_dir).unwrap();
    fs::create_dir_all(&ref_dir).unwrap();
    for i in 0..3 {
        let mut a = image::GrayImage::new(24, 24);
        let mut b = image::GrayImage::new(24, 24);
        for (x, y, p) in a.enumerate_pixels_mut() {
            *p = image::Luma([((x * 7 + y * 3 + i) % 251) as u8]);
        }
        for (x, y, p) in b.enumerate_pixels_mut() {
            *p = image::Luma([((x * 7 + y * 3 + i + 2) % 251) as u8]);
        }
        a.save(gen_dir.join(format!("{i}.png"))).unwrap();
        b.save(ref_dir.join(format!("{i}.png"))).unwrap();
    }
    let report_path = dir.path().join("report.json");
    let out = run_ok(&[
        "eval",
        "--generated",
        gen_dir.to_str().unwrap(),
        "--reference",
        ref_dir.to_str().unwrap(),
        "--out",
        report_path.to_str().unwrap(),
    ]);
    let printed = String::from_utf8(out.stdout).unwrap();
    assert!(printed.contains("FID"), "{printed}");
    let report: planforge::metrics::BatchReport =
        serde_json::from_str(&fs::read_to_string(&report_path).unwrap()).unwrap();
    assert_eq!(report.pair_count, 3);
    assert!(report.psnr_mean_db.unwrap() > 0.0);
}

#[test]
fn difflab_train_and_sample_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let params = dir.path().join("params.json");
    let trace = dir.path().join("trace.csv");
    run_ok(&[
        "difflab",
        "train",
        "--steps",
        "60",
        "--hidden-dim",
        "12",
        "--batch-size",
        "8",
        "--out-params",
        params.to_str().unwrap(),
        "--out-trace",
        trace.to_str().unwrap(),
    ]);
    let trace_text = fs::read_to_string(&trace).unwrap();
    assert_eq!(trace_text.lines().count(), 60);
    let samples = run_ok(&[
        "difflab",
        "sample",
        "--params",
        params.to_str().unwrap(),
        "--count",
        "5",
        "--seed",
        "3",
    ]);
    let text = String::from_utf8(samples.stdout).unwrap();
    assert_eq!(text.lines().count(), 5);
    for line in text.lines() {
        line.trim().parse::<f64>().expect("one value per 1-d sample row");
    }
}

#[test]
fn difflab_gradcheck_passes_in_all_modes() {
    for extra in [vec![], vec!["--lora"], vec!["--control"], vec!["--lora", "--control"]] {
        let mut args = vec!["difflab", "gradcheck"];
        args.extend(extra.iter().copied());
        let out = run_ok(&args);
        let text = String::from_utf8(out.stdout).unwrap();
        assert!(text.contains("max relative error"), "{text}");
    }
}
