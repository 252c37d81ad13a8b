//! Implementations of the CLI subcommands.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{
    CannyArgs, CannySource, CheckArgs, DifflabGradcheckArgs, DifflabSampleArgs, DifflabTrainArgs,
    EmitPromptArgs, EvalArgs, ExtractGraphArgs, Failure, ParsePromptArgs, PipelineConfig,
    PreprocessArgs,
};
use crate::boundary::{self, GrayImage};
use crate::difflab::{
    embed_text, gradient_check, sample_batch, train, ControlSettings, DenoiserConfig,
    DiffusionModel, Embedding, GradCheckFixture, LoraSettings, NoiseSchedule, TrainConfig,
};
use crate::featfile;
use crate::graph::{deserialize_graph, extract_graph as graph_extract, serialize_graph};
use crate::metrics::{
    evaluate_batch, BatchConfig, LayerFeatures, Matrix, Plane, SsimConfig, SsimMode,
};
use crate::prompt::{
    check_compliance, check_consistency, emit_prompt as prompt_emit,
    parse_prompt as prompt_parse, ComplianceConfig, ConstraintSet, PromptSections,
};
use crate::raster::{encode_plan, load_plan_any, recolor, upsample};

fn read_text_input(path: Option<&Path>) -> Result<String, Failure> {
    match path {
        Some(p) => Ok(fs::read_to_string(p)?),
        None => {
            let mut buf = String::new();
            std::io::stdin().read_to_string(&mut buf)?;
            Ok(buf)
        }
    }
}

fn write_text_output(path: Option<&Path>, text: &str) -> Result<(), Failure> {
    match path {
        Some(p) => {
            fs::write(p, text)?;
            Ok(())
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// Files with the given extension, sorted by name for deterministic order.
fn files_sorted(dir: &Path, extension: &str) -> Result<Vec<PathBuf>, Failure> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .map(|e| e.path())
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| e.eq_ignore_ascii_case(extension))
        })
        .collect();
    paths.sort();
    Ok(paths)
}

fn json_doc<T: Serialize>(value: &T) -> Result<String, Failure> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

pub(super) fn preprocess(args: &PreprocessArgs, cfg: &PipelineConfig) -> Result<(), Failure> {
    let factor = args.factor.unwrap_or(cfg.upsample_factor);
    let one = |input: &Path, out: &Path, out_plan: Option<&Path>| -> Result<(), Failure> {
        let plan = load_plan_any(input)?;
        let plan = upsample(&plan, factor)?;
        recolor(&plan)
            .save(out)
            .map_err(crate::raster::RasterError::Image)?;
        if let Some(plan_path) = out_plan {
            encode_plan(&plan)
                .save(plan_path)
                .map_err(crate::raster::RasterError::Image)?;
        }
        Ok(())
    };
    if args.input.is_dir() {
        fs::create_dir_all(&args.out)?;
        if let Some(dir) = &args.out_plan {
            fs::create_dir_all(dir)?;
        }
        for input in files_sorted(&args.input, "png")? {
            let name = input.file_name().expect("listed files have names");
            let out_plan = args.out_plan.as_ref().map(|d| d.join(name));
            one(&input, &args.out.join(name), out_plan.as_deref())?;
        }
        Ok(())
    } else {
        one(&args.input, &args.out, args.out_plan.as_deref())
    }
}

pub(super) fn extract_graph(args: &ExtractGraphArgs, cfg: &PipelineConfig) -> Result<(), Failure> {
    let dilation = args.dilation.unwrap_or(cfg.graph_dilation);
    let one = |input: &Path| -> Result<String, Failure> {
        let plan = load_plan_any(input)?;
        Ok(serialize_graph(&graph_extract(&plan, dilation)) + "\n")
    };
    if args.input.is_dir() {
        let out = args.out.as_deref().ok_or_else(|| {
            Failure::new("MissingOutput", "--out directory is required for batch input")
        })?;
        fs::create_dir_all(out)?;
        for input in files_sorted(&args.input, "png")? {
            let stem = input.file_stem().expect("listed files have names");
            let mut name = stem.to_os_string();
            name.push(".json");
            fs::write(out.join(name), one(&input)?)?;
        }
        Ok(())
    } else {
        let doc = one(&args.input)?;
        write_text_output(args.out.as_deref(), &doc)
    }
}

fn parse_sections(spec: &str) -> Result<PromptSections, Failure> {
    let mut sections = PromptSections { counts: false, areas: false, connections: false };
    for part in spec.split(',') {
        match part.trim() {
            "counts" => sections.counts = true,
            "areas" => sections.areas = true,
            "connections" => sections.connections = true,
            other => {
                return Err(Failure::new(
                    "UnknownSection",
                    format!("{other:?} is not counts|areas|connections"),
                ))
            }
        }
    }
    Ok(sections)
}

pub(super) fn emit_prompt(args: &EmitPromptArgs, cfg: &PipelineConfig) -> Result<(), Failure> {
    let text = read_text_input(args.input.as_deref())?;
    let kg = deserialize_graph(&text)?;
    let sections = match &args.sections {
        Some(spec) => parse_sections(spec)?,
        None => PromptSections::default(),
    };
    let divisor = args.area_divisor.unwrap_or(cfg.area_divisor);
    let prompt = prompt_emit(&kg, divisor, sections)?;
    write_text_output(args.out.as_deref(), &(prompt + "\n"))
}

pub(super) fn parse_prompt(args: &ParsePromptArgs) -> Result<(), Failure> {
    let text = read_text_input(args.input.as_deref())?;
    let cs = prompt_parse(&text)?;
    let warnings = check_consistency(&cs);
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    if args.deny_warnings && !warnings.is_empty() {
        return Err(Failure::new(
            "ConsistencyWarnings",
            format!("{} consistency warnings", warnings.len()),
        ));
    }
    write_text_output(args.out.as_deref(), &json_doc(&cs)?)
}

pub(super) fn check(args: &CheckArgs, cfg: &PipelineConfig) -> Result<(), Failure> {
    let kg = deserialize_graph(&fs::read_to_string(&args.graph)?)?;
    let cs: ConstraintSet = match (&args.prompt, &args.constraints) {
        (Some(prompt_path), None) => prompt_parse(&fs::read_to_string(prompt_path)?)?,
        (None, Some(cs_path)) => serde_json::from_str(&fs::read_to_string(cs_path)?)?,
        _ => {
            return Err(Failure::new(
                "MissingConstraints",
                "provide exactly one of --prompt or --constraints",
            ))
        }
    };
    let interior_pixels = match &args.plan {
        Some(path) => Some(load_plan_any(path)?.interior_pixel_count()),
        None => None,
    };
    let norm_rules = match &args.norm_rules {
        Some(spec) => super::parse_norm_rules(spec)?,
        None => cfg.norm_rules.clone(),
    };
    let compliance_cfg = ComplianceConfig {
        area_divisor: Some(args.area_divisor.unwrap_or(cfg.area_divisor)),
        area_rel_tol: args.area_rel_tol.unwrap_or(cfg.area_rel_tol),
        compactness_threshold: args.compactness_threshold.or(cfg.compactness_threshold),
        interior_pixels,
        norm_rules,
    };
    let report = check_compliance(&kg, &cs, &compliance_cfg)?;
    write_text_output(args.out.as_deref(), &json_doc(&report)?)
}

pub(super) fn canny(args: &CannyArgs, cfg: &PipelineConfig) -> Result<(), Failure> {
    let sigma = args.sigma.unwrap_or(cfg.canny_sigma);
    let low = args.low.unwrap_or(cfg.canny_low);
    let high = args.high.unwrap_or(cfg.canny_high);
    let one = |input: &Path, out: &Path| -> Result<(), Failure> {
        let gray = match args.source {
            CannySource::Boundary => {
                let plan = load_plan_any(input)?;
                boundary::boundary_image(&plan)
            }
            CannySource::Image => {
                let img = image::open(input).map_err(crate::raster::RasterError::Image)?;
                GrayImage::from_luma8(&img.to_luma8())
            }
        };
        let edges = boundary::canny(&gray, sigma, low, high)?;
        edges
            .to_luma8()
            .save(out)
            .map_err(crate::raster::RasterError::Image)?;
        Ok(())
    };
    if args.input.is_dir() {
        fs::create_dir_all(&args.out)?;
        for input in files_sorted(&args.input, "png")? {
            let name = input.file_name().expect("listed files have names");
            one(&input, &args.out.join(name))?;
        }
        Ok(())
    } else {
        one(&args.input, &args.out)
    }
}

fn load_plane(path: &Path) -> Result<Plane, Failure> {
    let img = image::open(path).map_err(crate::raster::RasterError::Image)?;
    Ok(Plane::from_luma8(&img.to_luma8()))
}

pub(super) fn eval(args: &EvalArgs, cfg: &PipelineConfig) -> Result<(), Failure> {
    let generated = files_sorted(&args.generated, "png")?;
    let reference = files_sorted(&args.reference, "png")?;
    if generated.len() != reference.len() {
        return Err(Failure::new(
            "PairCountMismatch",
            format!("{} generated vs {} reference images", generated.len(), reference.len()),
        ));
    }
    let mut pairs = Vec::with_capacity(generated.len());
    for (g, r) in generated.iter().zip(&reference) {
        pairs.push((load_plane(g)?, load_plane(r)?));
    }
    let fid_matrices: Option<(Matrix, Matrix)> = match (&args.fid_generated, &args.fid_reference) {
        (Some(a), Some(b)) => Some((featfile::load_matrix(a)?, featfile::load_matrix(b)?)),
        (None, None) => None,
        _ => {
            return Err(Failure::new(
                "MissingFeatureFile",
                "--fid-generated and --fid-reference must be given together",
            ))
        }
    };
    let lpips_pairs: Option<Vec<(LayerFeatures, LayerFeatures)>> =
        match (&args.lpips_generated, &args.lpips_reference) {
            (Some(da), Some(db)) => {
                let fa = files_sorted(da, "plnl")?;
                let fb = files_sorted(db, "plnl")?;
                if fa.len() != fb.len() || fa.len() != pairs.len() {
                    return Err(Failure::new(
                        "PairCountMismatch",
                        format!(
                            "{} and {} layer-feature files for {} image pairs",
                            fa.len(),
                            fb.len(),
                            pairs.len()
                        ),
                    ));
                }
                let mut out = Vec::with_capacity(fa.len());
                for (a, b) in fa.iter().zip(&fb) {
                    out.push((featfile::load_layers(a)?, featfile::load_layers(b)?));
                }
                Some(out)
            }
            (None, None) => None,
            _ => {
                return Err(Failure::new(
                    "MissingFeatureFile",
                    "--lpips-generated and --lpips-reference must be given together",
                ))
            }
        };
    let mode = match args.ssim_mode.as_deref() {
        Some("windowed") => SsimMode::Windowed,
        Some("global") => SsimMode::Global,
        Some(other) => {
            return Err(Failure::new(
                "ConfigError",
                format!("ssim mode {other:?} is not windowed|global"),
            ))
        }
        None => cfg.ssim_mode,
    };
    let batch_cfg = BatchConfig {
        max_value: 255.0,
        ssim: SsimConfig { mode, ..SsimConfig::windowed(255.0) },
        lpips_normalize: args.lpips_normalize || cfg.lpips_normalize,
    };
    let report = evaluate_batch(
        &pairs,
        fid_matrices.as_ref().map(|(a, b)| (a, b)),
        lpips_pairs.as_deref(),
        &batch_cfg,
    )?;
    println!("{report}");
    if let Some(out) = &args.out {
        fs::write(out, json_doc(&report)?)?;
    }
    Ok(())
}

/// A trained model with everything needed to sample from it again.
#[derive(Debug, Serialize, Deserialize)]
pub(crate) struct Checkpoint {
    pub model: DiffusionModel,
    pub schedule: NoiseSchedule,
    pub control_features: Option<Vec<f64>>,
}

const TOY_SEED_SALT: u64 = 0x746f79; // "toy"

/// The built-in 1-D training target: an equal mixture of Gaussians at
/// -2 and +2 with standard deviation 0.3.
pub(crate) fn toy_mixture(seed: u64, rows: usize) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ TOY_SEED_SALT);
    DMatrix::from_fn(rows, 1, |_, _| {
        let sign = if rng.random::<bool>() { 2.0 } else { -2.0 };
        let z: f64 = rng.sample(StandardNormal);
        sign + 0.3 * z
    })
}

fn featmatrix_to_dmatrix(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows, m.cols, &m.data)
}

fn dmatrix_to_featmatrix(m: &DMatrix<f64>) -> Matrix {
    let mut data = Vec::with_capacity(m.nrows() * m.ncols());
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            data.push(m[(r, c)]);
        }
    }
    Matrix { rows: m.nrows(), cols: m.ncols(), data }
}

pub(super) fn difflab_train(args: &DifflabTrainArgs, cfg: &PipelineConfig) -> Result<(), Failure> {
    let seed = args.seed.unwrap_or(cfg.difflab_seed);
    let dataset = match &args.data {
        Some(path) => featmatrix_to_dmatrix(&featfile::load_matrix(path)?),
        None => toy_mixture(seed, 512),
    };
    let train_cfg = TrainConfig {
        schedule_steps: cfg.difflab_t,
        schedule: cfg.difflab_schedule,
        lora: args.lora,
        control: args.control,
        lambda1: cfg.difflab_lambda1,
        lambda2: cfg.difflab_lambda2,
        learning_rate: args.learning_rate.unwrap_or(cfg.difflab_learning_rate),
        steps: args.steps.unwrap_or(cfg.difflab_steps),
        seed,
        batch_size: args.batch_size.unwrap_or(32),
        hidden_dim: args.hidden_dim.unwrap_or(48),
        ..TrainConfig::default()
    };
    let outcome = train(&dataset, &train_cfg)?;
    let trace = &outcome.loss_trace;
    let window = trace.len().clamp(1, 100);
    let smooth = |slice: &[f64]| slice.iter().sum::<f64>() / slice.len() as f64;
    println!(
        "trained {} steps; smoothed loss {:.6} -> {:.6}",
        trace.len(),
        smooth(&trace[..window]),
        smooth(&trace[trace.len() - window..])
    );
    if let Some(path) = &args.out_params {
        let checkpoint = Checkpoint {
            model: outcome.model,
            schedule: outcome.schedule,
            control_features: outcome.control_features,
        };
        fs::write(path, json_doc(&checkpoint)?)?;
    }
    if let Some(path) = &args.out_trace {
        let m = Matrix { rows: trace.len(), cols: 1, data: trace.clone() };
        featfile::save_matrix_csv(path, &m)?;
    }
    Ok(())
}

pub(super) fn difflab_sample(args: &DifflabSampleArgs, cfg: &PipelineConfig) -> Result<(), Failure> {
    let checkpoint: Checkpoint = serde_json::from_str(&fs::read_to_string(&args.params)?)?;
    let condition = match &args.prompt {
        Some(path) => {
            let cs = prompt_parse(&fs::read_to_string(path)?)?;
            embed_text(&cs, checkpoint.model.cfg.cond_dim)
        }
        None => Embedding::zeros(checkpoint.model.cfg.cond_dim),
    };
    let control = checkpoint
        .control_features
        .as_ref()
        .map(|v| DVector::from_vec(v.clone()));
    let steps = args.steps.unwrap_or(checkpoint.schedule.len());
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed.unwrap_or(cfg.difflab_seed));
    let samples = sample_batch(
        &checkpoint.model,
        &condition,
        control.as_ref(),
        &checkpoint.schedule,
        &mut rng,
        steps,
        args.count,
    )?;
    let csv = featfile::matrix_to_csv(&dmatrix_to_featmatrix(&samples));
    write_text_output(args.out.as_deref(), &csv)
}

pub(super) fn difflab_gradcheck(
    args: &DifflabGradcheckArgs,
    cfg: &PipelineConfig,
) -> Result<(), Failure> {
    let seed = args.seed.unwrap_or(cfg.difflab_seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model_cfg = DenoiserConfig { data_dim: 2, hidden_dim: 6, time_embed_dim: 4, cond_dim: 3 };
    let lora = args.lora.then_some(LoraSettings { rank: 2, scale: 2.0 });
    let control = args.control.then_some(ControlSettings { feature_dim: 3, scale: 0.7 });
    let mut model = DiffusionModel::init(model_cfg, lora, control, &mut rng)?;
    // Move adapters and the control map off their zero init so every
    // gradient path is exercised at a generic point.
    if let Some(conv) = &mut model.control {
        conv.zero_conv = DMatrix::from_fn(conv.zero_conv.nrows(), conv.zero_conv.ncols(), |_, _| {
            rng.random::<f64>() * 0.2 - 0.1
        });
    }
    for layer in [&mut model.layer1, &mut model.layer2] {
        if let crate::difflab::ModelLayer::Lora(adapter) = layer {
            adapter.up = DMatrix::from_fn(adapter.up.nrows(), adapter.up.ncols(), |_, _| {
                rng.random::<f64>() * 0.2 - 0.1
            });
        }
    }
    let lambda2 = if args.lora { 0.01 } else { 0.0 };
    let fixture = GradCheckFixture::for_model(&model, 5, 10, 1.0, lambda2, &mut rng)?;
    let report = gradient_check(&mut model, &fixture, 1e-5)?;
    for (tensor, err) in &report.per_tensor {
        println!("{tensor}: max relative error {err:.3e}");
    }
    println!("max relative error: {:.3e}", report.max_rel_err);
    if report.max_rel_err <= 1e-4 {
        Ok(())
    } else {
        Err(Failure::new(
            "GradientMismatch",
            format!("max relative error {:.3e} exceeds 1e-4", report.max_rel_err),
        ))
    }
}

