//! Acceptance suite: one test per criterion, each printing a `[PASS]` line
//! with its runtime (visible with `--nocapture`).
//!
//! Time budgets are asserted in optimized builds; debug builds run the same
//! checks and report the elapsed time without failing on it. For the
//! readable report run:
//! `cargo test --release --test acceptance -- --nocapture --test-threads=1`

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use planforge::boundary::{boundary_image, canny, GrayImage};
use planforge::difflab::{
    control_forward, forward_step, forward_to, gradient_check, lora_forward, make_schedule,
    sample_batch, train, ControlBranch, ControlSettings, DenoiserConfig, DiffusionModel,
    Embedding, GradCheckFixture, LoRAAdapter, LoraSettings, ScheduleSpec, TrainConfig,
};
use planforge::graph::{extract_graph, BBox, KnowledgeGraph, RoomNode};
use planforge::metrics::{
    feature_stats, frechet_distance, lpips, psnr, ssim, FeatureMap, FeatureStats, LayerFeatures,
    Matrix, Plane, PsnrValue, SsimConfig,
};
use planforge::prompt::{
    check_compliance, check_consistency, emit_prompt, kg_to_constraints, parse_prompt,
    ComplianceConfig, ConsistencyWarning, PromptSections, RuleStatus,
};
use planforge::raster::{
    encode_plan, RasterPlan, RoomClass, SemanticLabel, SemanticPalette,
};
use planforge::synth::{random_connected_graph, random_graph, synth_plan, SynthPlanConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn finish(name: &str, budget: Duration, started: Instant) {
    let elapsed = started.elapsed();
    println!("[PASS] {name} ({elapsed:.2?}, budget {budget:.0?})");
    if !cfg!(debug_assertions) {
        assert!(
            elapsed <= budget,
            "{name} took {elapsed:?}, budget {budget:?}"
        );
    }
}

// ---------------------------------------------------------------------------
// 1. Palette fidelity
// ---------------------------------------------------------------------------

#[test]
fn criterion_1_palette_fidelity() {
    let started = Instant::now();
    let table: [(SemanticLabel, [u8; 4], &[u8]); 11] = [
        (SemanticLabel::Living, [244, 242, 229, 255], &[0, 4, 10]),
        (SemanticLabel::Bedroom, [253, 244, 171, 255], &[1, 5, 6, 7, 8]),
        (SemanticLabel::Kitchen, [234, 216, 214, 255], &[2]),
        (SemanticLabel::Bathroom, [205, 233, 252, 255], &[3, 12]),
        (SemanticLabel::Balcony, [208, 216, 135, 255], &[9]),
        (SemanticLabel::Storage, [249, 222, 189, 255], &[11]),
        (SemanticLabel::ExternalArea, [0, 0, 0, 255], &[13]),
        (SemanticLabel::ExteriorWall, [79, 79, 79, 255], &[14]),
        (SemanticLabel::FrontDoor, [255, 225, 25, 255], &[15]),
        (SemanticLabel::InteriorWall, [128, 128, 128, 255], &[16]),
        (SemanticLabel::InteriorDoor, [255, 255, 255, 255], &[17]),
    ];
    let mut assignments = 0;
    for (label, color, values) in table {
        assert_eq!(SemanticPalette::color_of(label), color, "{label:?} color");
        assert_eq!(
            SemanticPalette::label_of_color(color),
            Some(label),
            "{label:?} color round trip"
        );
        assert_eq!(
            SemanticPalette::channel2_values_of(label),
            values,
            "{label:?} channel-2 set"
        );
        for v in values {
            assert_eq!(
                SemanticPalette::label_of_channel2(*v),
                Some(label),
                "channel-2 value {v}"
            );
            assignments += 1;
        }
    }
    assert_eq!(assignments, 18);
    assert_eq!(SemanticPalette::label_of_channel2(18), None);
    finish(
        "criterion 1: palette fidelity (11 colors, 18 channel-2 values)",
        Duration::from_secs(1),
        started,
    );
}

// ---------------------------------------------------------------------------
// 2. Graph-extraction oracle
// ---------------------------------------------------------------------------

type Desc = (RoomClass, (u32, u32, u32, u32));

/// Independent segmentation by min-label propagation to a fixpoint.
fn oracle_components(plan: &RasterPlan) -> Vec<Desc> {
    let (w, h) = (plan.width() as usize, plan.height() as usize);
    let mut ids: Vec<Option<usize>> = (0..w * h)
        .map(|i| plan.labels()[i].room_class().map(|_| i))
        .collect();
    let mut changed = true;
    while changed {
        changed = false;
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let Some(current) = ids[i] else { continue };
                let label = plan.labels()[i];
                let mut best = current;
                if x > 0 && plan.labels()[i - 1] == label {
                    best = best.min(ids[i - 1].unwrap());
                }
                if x + 1 < w && plan.labels()[i + 1] == label {
                    best = best.min(ids[i + 1].unwrap());
                }
                if y > 0 && plan.labels()[i - w] == label {
                    best = best.min(ids[i - w].unwrap());
                }
                if y + 1 < h && plan.labels()[i + w] == label {
                    best = best.min(ids[i + w].unwrap());
                }
                if best < current {
                    ids[i] = Some(best);
                    changed = true;
                }
            }
        }
    }
    let mut groups: std::collections::BTreeMap<usize, (RoomClass, u32, u32, u32, u32)> =
        std::collections::BTreeMap::new();
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if let Some(id) = ids[i] {
                let class = plan.labels()[i].room_class().unwrap();
                let e = groups
                    .entry(id)
                    .or_insert((class, x as u32, y as u32, x as u32, y as u32));
                e.1 = e.1.min(x as u32);
                e.2 = e.2.min(y as u32);
                e.3 = e.3.max(x as u32);
                e.4 = e.4.max(y as u32);
            }
        }
    }
    groups
        .into_values()
        .map(|(c, x0, y0, x1, y1)| (c, (x0, y0, x1, y1)))
        .collect()
}

fn oracle_edge_set(plan: &RasterPlan, dilation: u32) -> BTreeSet<(Desc, Desc)> {
    let descs = oracle_components(plan);
    let d = dilation as i64;
    let mut edges = BTreeSet::new();
    for i in 0..descs.len() {
        for j in (i + 1)..descs.len() {
            let a = descs[i].1;
            let b = descs[j].1;
            let x_apart = a.2 as i64 + d < b.0 as i64 - d || b.2 as i64 + d < a.0 as i64 - d;
            let y_apart = a.3 as i64 + d < b.1 as i64 - d || b.3 as i64 + d < a.1 as i64 - d;
            if !(x_apart || y_apart) {
                edges.insert((descs[i].min(descs[j]), descs[i].max(descs[j])));
            }
        }
    }
    edges
}

fn extracted_edge_set(kg: &KnowledgeGraph) -> BTreeSet<(Desc, Desc)> {
    let desc = |id: usize| {
        let n = kg.node_by_id(id).unwrap();
        (n.class, (n.bbox.x0, n.bbox.y0, n.bbox.x1, n.bbox.y1))
    };
    kg.edges
        .iter()
        .map(|&(u, v)| {
            let (a, b) = (desc(u), desc(v));
            (a.min(b), a.max(b))
        })
        .collect()
}

#[test]
fn criterion_2_graph_extraction_oracle() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xA11CE);
    let mut checked = 0;
    while checked < 220 {
        let rooms = 2 + checked % 7;
        let dilation = rng.random_range(0..=2);
        let synth = synth_plan(&mut rng, SynthPlanConfig { rooms, ..Default::default() });
        let kg = extract_graph(&synth.plan, dilation);
        kg.validate().unwrap();
        assert_eq!(
            extracted_edge_set(&kg),
            oracle_edge_set(&synth.plan, dilation),
            "plan {checked} (rooms {rooms}, dilation {dilation})"
        );
        checked += 1;
    }
    finish(
        "criterion 2: graph-extraction oracle (220 randomized plans)",
        Duration::from_secs(30),
        started,
    );
}

// ---------------------------------------------------------------------------
// 3. Prompt round trip
// ---------------------------------------------------------------------------

const ROW1_PRINTED: &str = "<p>The room has 2_bedroom, 1_bathroom, 1_living_room, \
    1_kitchen,1_balcony, bedroom1_space_17, bathroom_space_5, living_room_space_73, \
    bedroom2_space_11, kitchen_space_5, balcony_space_7, bedroom_1 connect bathroom,\
    bedroom_1 connect living_room,bedroom_1 connect balcony, bathroom connect living_room, \
    bathroom connect bedroom_2,living_room connect bedroom_2,living_room connect kitchen, \
    living_room connect balcony,bedroom_2 connect kitchen.</p>";

const ROW2_PRINTED: &str = "<p>The room has 2_bedroom,1_bathroom,1_living_room,1_kitchen,\
    1_balcony,bedroom1_space_17,bathroom_space_5,living_room_space_73,bedroom2_space_11,\
    kitchen_space_5,balcony_space_7, bedroom_1 connect bedroom_2,bedroom_1 connect balcony,\
    bedroom_1 connect living_room,bedroom_2 connect bedroom_3,bedroom_2 connect balcony,\
    bedroom_2 connect living_room,bedroom_3 connect living_room, kitchen connect bathroom, \
    kitchen connect living_room, bathroom connect living_room.</p>";

#[test]
fn criterion_3_prompt_round_trip() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xB0B);
    for i in 0..520 {
        let kg = random_graph(&mut rng);
        let text = emit_prompt(&kg, 100.0, PromptSections::default()).unwrap();
        let parsed = parse_prompt(&text).unwrap();
        assert_eq!(parsed, kg_to_constraints(&kg, 100.0), "graph {i}: {text}");
    }

    let cs = parse_prompt(ROW1_PRINTED).unwrap();
    let counts = cs.counts.as_ref().unwrap();
    assert_eq!(counts.len(), 5);
    let expected_counts = [
        (RoomClass::Bedroom, 2),
        (RoomClass::Bathroom, 1),
        (RoomClass::Living, 1),
        (RoomClass::Kitchen, 1),
        (RoomClass::Balcony, 1),
    ];
    assert_eq!(counts.as_slice(), expected_counts.as_slice());
    let areas = cs.areas.as_ref().unwrap();
    assert_eq!(areas.len(), 6);
    let tokens: Vec<(RoomClass, Option<u32>, u64)> = areas
        .iter()
        .map(|e| (e.room.class, e.room.index, e.tokens))
        .collect();
    assert_eq!(
        tokens,
        vec![
            (RoomClass::Bedroom, Some(1), 17),
            (RoomClass::Bathroom, None, 5),
            (RoomClass::Living, None, 73),
            (RoomClass::Bedroom, Some(2), 11),
            (RoomClass::Kitchen, None, 5),
            (RoomClass::Balcony, None, 7),
        ]
    );
    assert_eq!(cs.connections.as_ref().unwrap().len(), 9);
    assert!(check_consistency(&cs).is_empty());

    let cs2 = parse_prompt(ROW2_PRINTED).unwrap();
    let warnings = check_consistency(&cs2);
    assert_eq!(
        warnings,
        vec![ConsistencyWarning::IndexExceedsCount {
            class: RoomClass::Bedroom,
            index: 3,
            count: 2,
        }]
    );
    finish(
        "criterion 3: prompt round trip (520 graphs + printed fixtures)",
        Duration::from_secs(10),
        started,
    );
}

// ---------------------------------------------------------------------------
// 4. Self-compliance and single-rule mutations
// ---------------------------------------------------------------------------

fn mk_node(id: usize, class: RoomClass, index: u32, area: u64) -> RoomNode {
    let side = (area as f64).sqrt().ceil() as u32;
    let x0 = (id as u32 % 3) * 85;
    let y0 = (id as u32 / 3) * 85;
    let bbox = BBox { x0, y0, x1: x0 + side - 1, y1: y0 + side - 1 };
    RoomNode { id, class, index, area, center: bbox.center(), radius: bbox.width(), bbox }
}

/// The mutation fixture: a living-room hub with two bedrooms, kitchen and
/// bathroom, plus one cycle edge between bedroom 1 and the bathroom.
fn mutation_fixture() -> KnowledgeGraph {
    KnowledgeGraph {
        image_width: 256,
        image_height: 256,
        nodes: vec![
            mk_node(0, RoomClass::Living, 1, 7000),
            mk_node(1, RoomClass::Bedroom, 1, 2000),
            mk_node(2, RoomClass::Bedroom, 2, 1500),
            mk_node(3, RoomClass::Kitchen, 1, 600),
            mk_node(4, RoomClass::Bathroom, 1, 500),
        ],
        edges: vec![(0, 1), (0, 2), (0, 3), (0, 4), (1, 4)],
    }
}

fn abcd(report: &planforge::prompt::ComplianceReport) -> [RuleStatus; 4] {
    [
        report.counts.status,
        report.areas.status,
        report.existence.status,
        report.connectivity.status,
    ]
}

#[test]
fn criterion_4_self_compliance_and_mutations() {
    let started = Instant::now();
    let cfg = ComplianceConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0xC0FFEE);
    for i in 0..120 {
        let kg = random_connected_graph(&mut rng);
        let cs = kg_to_constraints(&kg, 100.0);
        let report = check_compliance(&kg, &cs, &cfg).unwrap();
        assert_eq!(
            abcd(&report),
            [RuleStatus::Pass; 4],
            "fixture {i}: {report:#?}"
        );
    }

    let base = mutation_fixture();
    base.validate().unwrap();
    let cs = kg_to_constraints(&base, 100.0);
    assert_eq!(
        abcd(&check_compliance(&base, &cs, &cfg).unwrap()),
        [RuleStatus::Pass; 4]
    );

    // Delete a room: the smaller bedroom disappears, counts alone must flip.
    let mut deleted = base.clone();
    deleted.nodes.retain(|n| n.id != 2);
    deleted.edges.retain(|&(u, v)| u != 2 && v != 2);
    let report = check_compliance(&deleted, &cs, &cfg).unwrap();
    assert_eq!(
        abcd(&report),
        [RuleStatus::Fail, RuleStatus::Pass, RuleStatus::Pass, RuleStatus::Pass],
        "delete mutation: {report:#?}"
    );

    // Shrink an area 2x: the kitchen halves, areas alone must flip.
    let mut shrunk = base.clone();
    shrunk.nodes[3].area /= 2;
    let report = check_compliance(&shrunk, &cs, &cfg).unwrap();
    assert_eq!(
        abcd(&report),
        [RuleStatus::Pass, RuleStatus::Fail, RuleStatus::Pass, RuleStatus::Pass],
        "shrink mutation: {report:#?}"
    );

    // Cut an edge: the bedroom-bathroom cycle edge goes away, connectivity
    // alone must flip (the graph stays connected through the living room).
    let mut cut = base.clone();
    cut.edges.retain(|&e| e != (1, 4));
    assert!(cut.is_connected());
    let report = check_compliance(&cut, &cs, &cfg).unwrap();
    assert_eq!(
        abcd(&report),
        [RuleStatus::Pass, RuleStatus::Pass, RuleStatus::Pass, RuleStatus::Fail],
        "cut mutation: {report:#?}"
    );
    finish(
        "criterion 4: self-compliance (120 fixtures) + single-rule mutations",
        Duration::from_secs(10),
        started,
    );
}

// ---------------------------------------------------------------------------
// 5. Metric oracles
// ---------------------------------------------------------------------------

#[test]
fn criterion_5_metric_oracles() {
    let started = Instant::now();

    // PSNR hand cases.
    let zeros = Plane::new(8, 8, vec![0.0; 64]).unwrap();
    let full = Plane::new(8, 8, vec![255.0; 64]).unwrap();
    let v = psnr(&zeros, &full, 255.0).unwrap().finite().unwrap();
    assert!(v.abs() <= 1e-9, "0 dB case: {v}");
    let ramp = Plane::new(8, 8, (0..64).map(|i| (i % 40) as f64).collect()).unwrap();
    let offset = Plane::new(8, 8, ramp.data.iter().map(|v| v + 16.0).collect()).unwrap();
    let v = psnr(&ramp, &offset, 255.0).unwrap().finite().unwrap();
    let expected = 10.0 * (65025.0_f64 / 256.0).log10();
    assert!((v - expected).abs() <= 1e-9, "{v} vs {expected}");
    assert_eq!(psnr(&ramp, &ramp, 255.0).unwrap(), PsnrValue::Infinite);

    // SSIM identical images.
    let img = Plane::new(16, 16, (0..256).map(|i| ((i * 37) % 229) as f64).collect()).unwrap();
    for cfg in [SsimConfig::windowed(255.0), SsimConfig::global(255.0)] {
        let s = ssim(&img, &img, &cfg).unwrap();
        assert!((s - 1.0).abs() <= 1e-12, "{s}");
    }

    // Fréchet: identical stats, then 100 random diagonal cases against the
    // scalar closed form.
    let m = Matrix::new(
        32,
        6,
        (0..192).map(|i| ((i * 31 + 7) % 97) as f64 / 10.0).collect(),
    )
    .unwrap();
    let stats = feature_stats(&m).unwrap();
    let d = frechet_distance(&stats, &stats).unwrap();
    assert!(d.abs() <= 1e-8, "identical stats: {d}");

    let mut rng = ChaCha8Rng::seed_from_u64(0xF1D);
    for case in 0..100 {
        let dim = rng.random_range(1..=8);
        let mu1: Vec<f64> = (0..dim).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
        let mu2: Vec<f64> = (0..dim).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
        let var1: Vec<f64> = (0..dim).map(|_| rng.random::<f64>() * 3.0 + 0.05).collect();
        let var2: Vec<f64> = (0..dim).map(|_| rng.random::<f64>() * 3.0 + 0.05).collect();
        let diag = |v: &[f64]| {
            let mut data = vec![0.0; v.len() * v.len()];
            for (i, x) in v.iter().enumerate() {
                data[i * v.len() + i] = *x;
            }
            Matrix::new(v.len(), v.len(), data).unwrap()
        };
        let s1 = FeatureStats::from_parts(mu1.clone(), diag(&var1), 10).unwrap();
        let s2 = FeatureStats::from_parts(mu2.clone(), diag(&var2), 10).unwrap();
        let got = frechet_distance(&s1, &s2).unwrap();
        let expected: f64 = (0..dim)
            .map(|i| {
                let dm = mu1[i] - mu2[i];
                dm * dm + var1[i] + var2[i] - 2.0 * (var1[i] * var2[i]).sqrt()
            })
            .sum();
        assert!(
            (got - expected).abs() <= 1e-6,
            "case {case} (dim {dim}): {got} vs {expected}"
        );
    }

    // LPIPS hand case: one layer, weight 2, maps differing by ones over 4
    // entries.
    let a = FeatureMap::new(2.0, 1, 4, vec![0.25; 4]).unwrap();
    let b = FeatureMap::new(2.0, 1, 4, vec![1.25; 4]).unwrap();
    let got = lpips(
        &LayerFeatures { layers: vec![a] },
        &LayerFeatures { layers: vec![b] },
        false,
    )
    .unwrap();
    assert_eq!(got, 8.0);

    finish(
        "criterion 5: metric oracles (PSNR, SSIM, FID x100, LPIPS)",
        Duration::from_secs(30),
        started,
    );
}

// ---------------------------------------------------------------------------
// 6. Canny fixtures
// ---------------------------------------------------------------------------

#[test]
fn criterion_6_canny_fixtures() {
    let started = Instant::now();

    // Constant image: no edges.
    let flat = GrayImage::new(24, 24, vec![0.6; 576]).unwrap();
    assert_eq!(canny(&flat, 1.0, 0.1, 0.2).unwrap().edge_count(), 0);

    // Vertical step: one edge column at the step, covering interior rows.
    let (w, h) = (32u32, 20u32);
    let step = GrayImage::new(
        w,
        h,
        (0..h)
            .flat_map(|_| (0..w).map(|x| if x < w / 2 { 0.0 } else { 1.0 }))
            .collect(),
    )
    .unwrap();
    let edges = canny(&step, 1.0, 0.1, 0.2).unwrap();
    let mut columns = BTreeSet::new();
    for y in 0..h {
        for x in 0..w {
            if edges.is_edge(x, y) {
                columns.insert(x);
            }
        }
    }
    assert_eq!(columns.len(), 1, "columns {columns:?}");
    let col = *columns.first().unwrap();
    assert!(col == w / 2 - 1 || col == w / 2, "column {col}");
    for y in 1..h - 1 {
        assert!(edges.is_edge(col, y), "row {y} misses the edge");
    }

    // Rectangular boundaries: every edge pixel of the contour has at least
    // two 8-connected edge neighbors (closed contours).
    let mut rng = ChaCha8Rng::seed_from_u64(0xCA33);
    for rooms in [2usize, 4, 6, 8] {
        let synth = synth_plan(&mut rng, SynthPlanConfig { rooms, ..Default::default() });
        let img = boundary_image(&synth.plan);
        let edges = canny(&img, 1.0, 0.1, 0.2).unwrap();
        assert!(edges.edge_count() > 0);
        for y in 0..edges.height() {
            for x in 0..edges.width() {
                if !edges.is_edge(x, y) {
                    continue;
                }
                let mut neighbors = 0;
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        if dx == 0 && dy == 0 {
                            continue;
                        }
                        let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                        if nx >= 0
                            && ny >= 0
                            && (nx as u32) < edges.width()
                            && (ny as u32) < edges.height()
                            && edges.is_edge(nx as u32, ny as u32)
                        {
                            neighbors += 1;
                        }
                    }
                }
                assert!(
                    neighbors >= 2,
                    "rooms {rooms}: edge pixel ({x}, {y}) has {neighbors} neighbors"
                );
            }
        }
    }

    // Raising `high` never adds edge pixels, over 20 random images.
    for i in 0..20 {
        let mut img_rng = ChaCha8Rng::seed_from_u64(0xD00D + i);
        let img = GrayImage::new(
            24,
            24,
            (0..576).map(|_| img_rng.random::<f64>()).collect(),
        )
        .unwrap();
        let low_high = canny(&img, 1.0, 0.05, 0.15).unwrap();
        let high_high = canny(&img, 1.0, 0.05, 0.5).unwrap();
        for (a, b) in low_high.edges().iter().zip(high_high.edges().iter()) {
            assert!(*a || !*b, "image {i}: raising high added an edge pixel");
        }
    }

    finish(
        "criterion 6: canny fixtures (constant, step, contours, monotonicity)",
        Duration::from_secs(30),
        started,
    );
}

// ---------------------------------------------------------------------------
// 7. DiffLab math
// ---------------------------------------------------------------------------

#[test]
fn criterion_7_difflab_math() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xD1FF);
    let rand_mat = |rows: usize, cols: usize, rng: &mut ChaCha8Rng| {
        DMatrix::from_fn(rows, cols, |_, _| rng.random::<f64>() * 2.0 - 1.0)
    };

    // LoRA dense-oracle equivalence over 100 random shapes and ranks.
    for _ in 0..100 {
        let d = rng.random_range(2..=9);
        let k = rng.random_range(2..=9);
        let rank = rng.random_range(1..=d.min(k));
        let base = rand_mat(d, k, &mut rng);
        let mut adapter =
            LoRAAdapter::init(base, rank, rng.random::<f64>() * 3.0, &mut rng).unwrap();
        adapter.up = rand_mat(rank, k, &mut rng);
        adapter.bias = DVector::from_fn(k, |_, _| rng.random::<f64>());
        let x = rand_mat(4, d, &mut rng);
        let fast = lora_forward(&x, &adapter).unwrap();
        let mut dense = &x * adapter.effective_weights();
        for mut row in dense.row_iter_mut() {
            row += adapter.bias.transpose();
        }
        assert!((fast - dense).abs().max() <= 1e-12);
    }

    // Control dense-oracle equivalence over 100 random shapes, and the
    // zero-init identity, bit for bit.
    for case in 0..100 {
        let d = rng.random_range(2..=8);
        let k = rng.random_range(2..=8);
        let m = rng.random_range(1..=5);
        let base = rand_mat(d, k, &mut rng);
        let mut branch = ControlBranch::init(base.clone(), m, 1.25);
        let x = rand_mat(3, d, &mut rng);
        let features = DVector::from_fn(m, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        // at init: identical to the base pass, bitwise
        let at_init = control_forward(&x, &branch, &features).unwrap();
        assert_eq!(at_init, &x * &base, "case {case}: zero-init identity");
        // trained: matches explicit materialization
        branch.zero_conv = rand_mat(m, d * k, &mut rng);
        let got = control_forward(&x, &branch, &features).unwrap();
        let flat = branch.zero_conv.transpose() * &features;
        let mut dense = base.clone();
        for i in 0..d {
            for j in 0..k {
                dense[(i, j)] += 1.25 * flat[i * k + j];
            }
        }
        assert!((got - &x * dense).abs().max() <= 1e-12);
    }

    // Gradient checks: plain, and adapted with control, every trainable
    // tensor against central differences.
    let cfg = DenoiserConfig { data_dim: 2, hidden_dim: 6, time_embed_dim: 4, cond_dim: 3 };
    let mut plain = DiffusionModel::init(cfg, None, None, &mut rng).unwrap();
    let fixture = GradCheckFixture::for_model(&plain, 5, 10, 1.0, 0.0, &mut rng).unwrap();
    let report = gradient_check(&mut plain, &fixture, 1e-5).unwrap();
    assert!(report.max_rel_err <= 1e-4, "plain: {report:?}");

    let mut adapted = DiffusionModel::init(
        cfg,
        Some(LoraSettings { rank: 2, scale: 2.0 }),
        Some(ControlSettings { feature_dim: 3, scale: 0.7 }),
        &mut rng,
    )
    .unwrap();
    if let Some(conv) = &mut adapted.control {
        conv.zero_conv = rand_mat(3, conv.zero_conv.ncols(), &mut rng) * 0.1;
    }
    if let planforge::difflab::ModelLayer::Lora(adapter) = &mut adapted.layer1 {
        adapter.up = rand_mat(adapter.up.nrows(), adapter.up.ncols(), &mut rng) * 0.1;
    }
    let fixture = GradCheckFixture::for_model(&adapted, 5, 10, 1.0, 0.01, &mut rng).unwrap();
    let report = gradient_check(&mut adapted, &fixture, 1e-5).unwrap();
    assert!(report.max_rel_err <= 1e-4, "adapted: {report:?}");

    // Forward-process Monte-Carlo statistics on 1e5 samples.
    let n = 100_000;
    let schedule = make_schedule(5, ScheduleSpec::Constant { alpha: 0.9 }).unwrap();
    let mut mc = ChaCha8Rng::seed_from_u64(0x5EED);
    let x_prev = 1.25;
    let samples: Vec<f64> = (0..n)
        .map(|_| forward_step(&[x_prev], 1, &schedule, &mut mc)[0])
        .collect();
    let mean = samples.iter().sum::<f64>() / n as f64;
    let var = samples.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    let em = 0.9f64.sqrt() * x_prev;
    assert!((mean - em).abs() <= 0.01 * em.abs(), "step mean {mean} vs {em}");
    assert!((var - 0.1).abs() <= 0.02 * 0.1, "step var {var} vs 0.1");

    let deep = make_schedule(200, ScheduleSpec::Constant { alpha: 0.9 }).unwrap();
    let samples: Vec<f64> = (0..n)
        .map(|_| forward_to(&[3.0], 200, &deep, &mut mc)[0])
        .collect();
    let mean = samples.iter().sum::<f64>() / n as f64;
    let var = samples.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    assert!(mean.abs() <= 0.02, "deep mean {mean}");
    assert!((var - 1.0).abs() <= 0.05, "deep var {var}");

    let mixed = make_schedule(
        50,
        ScheduleSpec::Linear { beta_start: 1e-3, beta_end: 0.05 },
    )
    .unwrap();
    for t in [10usize, 50] {
        let samples: Vec<f64> = (0..n)
            .map(|i| {
                let x0 = if i % 2 == 0 { 2.0 } else { -2.0 };
                forward_to(&[x0], t, &mixed, &mut mc)[0]
            })
            .collect();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let abar = mixed.alpha_bar(t);
        let expected = abar * 4.0 + (1.0 - abar);
        assert!(
            (var - expected).abs() <= 0.02 * expected,
            "variance law at t={t}: {var} vs {expected}"
        );
    }

    finish(
        "criterion 7: difflab math (dense oracles, zero-init, gradients, MC stats)",
        Duration::from_secs(120),
        started,
    );
}

// ---------------------------------------------------------------------------
// 8. DiffLab end-to-end toy
// ---------------------------------------------------------------------------

fn mixture_samples(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let sign: f64 = if rng.random::<bool>() { 2.0 } else { -2.0 };
            let z: f64 = rng.sample(StandardNormal);
            sign + 0.3 * z
        })
        .collect()
}

fn tv_distance(p_samples: &[f64], q_samples: &[f64]) -> f64 {
    let (lo, hi, bins) = (-4.0, 4.0, 40usize);
    let width = (hi - lo) / bins as f64;
    let hist = |samples: &[f64]| {
        let mut h = vec![0.0f64; bins];
        for s in samples {
            let idx = (((s - lo) / width).floor() as i64).clamp(0, bins as i64 - 1) as usize;
            h[idx] += 1.0 / samples.len() as f64;
        }
        h
    };
    let p = hist(p_samples);
    let q = hist(q_samples);
    0.5 * p.iter().zip(&q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

#[test]
fn criterion_8_difflab_end_to_end_toy() {
    let started = Instant::now();
    let mut data_rng = ChaCha8Rng::seed_from_u64(0x746f79);
    let rows = mixture_samples(&mut data_rng, 512);
    let dataset = DMatrix::from_column_slice(512, 1, &rows);
    let cfg = TrainConfig {
        schedule_steps: 200,
        schedule: ScheduleSpec::Linear { beta_start: 1e-4, beta_end: 0.05 },
        steps: 12_000,
        learning_rate: 0.05,
        hidden_dim: 64,
        batch_size: 64,
        seed: 7,
        condition: Embedding::zeros(4),
        ..TrainConfig::default()
    };
    let outcome = train(&dataset, &cfg).unwrap();
    let trace = &outcome.loss_trace;
    let smooth = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let initial = smooth(&trace[..100]);
    let final_ = smooth(&trace[trace.len() - 100..]);
    assert!(
        final_ < 0.5 * initial,
        "smoothed loss {initial:.4} -> {final_:.4} misses the 0.5x bar"
    );

    let mut sample_rng = ChaCha8Rng::seed_from_u64(99);
    let generated = sample_batch(
        &outcome.model,
        &cfg.condition,
        None,
        &outcome.schedule,
        &mut sample_rng,
        outcome.schedule.len(),
        10_000,
    )
    .unwrap();
    let model_samples: Vec<f64> = generated.column(0).iter().copied().collect();
    let mut target_rng = ChaCha8Rng::seed_from_u64(1234);
    let target = mixture_samples(&mut target_rng, 100_000);
    let tv = tv_distance(&model_samples, &target);
    assert!(tv <= 0.15, "total variation {tv:.4} exceeds 0.15");

    finish(
        &format!(
            "criterion 8: difflab toy (loss {initial:.3} -> {final_:.3}, TV {tv:.3})"
        ),
        Duration::from_secs(600),
        started,
    );
}

// ---------------------------------------------------------------------------
// 9. Pipeline determinism
// ---------------------------------------------------------------------------

fn run_cli(args: &[&str]) {
    let out = std::process::Command::new(env!("CARGO_BIN_EXE_planforge"))
        .args(args)
        .output()
        .expect("binary runs");
    assert!(
        out.status.success(),
        "command {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn fixture_corpus(dir: &Path) -> Vec<PathBuf> {
    std::fs::create_dir_all(dir).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0xDE7);
    let mut paths = Vec::new();
    for (i, rooms) in [3usize, 5, 7].into_iter().enumerate() {
        let synth = synth_plan(&mut rng, SynthPlanConfig { rooms, ..Default::default() });
        let path = dir.join(format!("plan_{i}.png"));
        encode_plan(&synth.plan).save(&path).unwrap();
        paths.push(path);
    }
    paths
}

fn run_pipeline(plans: &Path, out: &Path) {
    std::fs::create_dir_all(out).unwrap();
    let recolored = out.join("recolored");
    let planfiles = out.join("plans");
    let graphs = out.join("graphs");
    let edges = out.join("edges");
    run_cli(&[
        "preprocess",
        plans.to_str().unwrap(),
        "--out",
        recolored.to_str().unwrap(),
        "--out-plan",
        planfiles.to_str().unwrap(),
        "--factor",
        "2",
    ]);
    run_cli(&[
        "extract-graph",
        recolored.to_str().unwrap(),
        "--out",
        graphs.to_str().unwrap(),
        "--dilation",
        "2",
    ]);
    run_cli(&[
        "canny",
        planfiles.to_str().unwrap(),
        "--out",
        edges.to_str().unwrap(),
    ]);
    let mut graph_files: Vec<PathBuf> = std::fs::read_dir(&graphs)
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    graph_files.sort();
    for kg in graph_files {
        let stem = kg.file_stem().unwrap().to_str().unwrap().to_string();
        let prompt = out.join(format!("{stem}.prompt.txt"));
        let cs = out.join(format!("{stem}.constraints.json"));
        let report = out.join(format!("{stem}.report.json"));
        run_cli(&[
            "emit-prompt",
            kg.to_str().unwrap(),
            "--area-divisor",
            "400",
            "--out",
            prompt.to_str().unwrap(),
        ]);
        run_cli(&[
            "parse-prompt",
            "--in",
            prompt.to_str().unwrap(),
            "--out",
            cs.to_str().unwrap(),
        ]);
        run_cli(&[
            "check",
            "--graph",
            kg.to_str().unwrap(),
            "--prompt",
            prompt.to_str().unwrap(),
            "--area-divisor",
            "400",
            "--out",
            report.to_str().unwrap(),
        ]);
    }
    let params = out.join("difflab_params.json");
    let trace = out.join("difflab_trace.csv");
    let samples = out.join("difflab_samples.csv");
    run_cli(&[
        "difflab",
        "train",
        "--steps",
        "120",
        "--hidden-dim",
        "16",
        "--batch-size",
        "8",
        "--seed",
        "11",
        "--out-params",
        params.to_str().unwrap(),
        "--out-trace",
        trace.to_str().unwrap(),
    ]);
    run_cli(&[
        "difflab",
        "sample",
        "--params",
        params.to_str().unwrap(),
        "--count",
        "16",
        "--seed",
        "5",
        "--out",
        samples.to_str().unwrap(),
    ]);
}

fn snapshot(dir: &Path) -> std::collections::BTreeMap<String, Vec<u8>> {
    let mut files = std::collections::BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(dir).unwrap().to_str().unwrap().to_string();
                files.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    files
}

#[test]
fn criterion_9_pipeline_determinism() {
    let started = Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let plans = tmp.path().join("corpus");
    fixture_corpus(&plans);
    let run1 = tmp.path().join("run1");
    let run2 = tmp.path().join("run2");
    run_pipeline(&plans, &run1);
    run_pipeline(&plans, &run2);
    let a = snapshot(&run1);
    let b = snapshot(&run2);
    assert_eq!(
        a.keys().collect::<Vec<_>>(),
        b.keys().collect::<Vec<_>>(),
        "file sets differ"
    );
    let mut compared = 0;
    for (name, bytes) in &a {
        assert_eq!(bytes, &b[name], "{name} differs between runs");
        compared += 1;
    }
    assert!(compared >= 20, "only {compared} outputs compared");
    finish(
        &format!("criterion 9: pipeline determinism ({compared} outputs byte-identical)"),
        Duration::from_secs(60),
        started,
    );
}
