//! The `planforge` command-line interface.
//!
//! Subcommands cover the pipeline end to end: `preprocess`, `extract-graph`,
//! `emit-prompt`, `parse-prompt`, `check`, `canny`, `eval`, and
//! `difflab train|sample|gradcheck`. Exit codes: 0 on success, 1 on domain
//! errors (printed as `error[Code]: message`), 2 on usage errors. Batch
//! subcommands accept directories and process entries in sorted order;
//! single-item text commands read stdin and write stdout when no paths are
//! given.

mod commands;
mod config;

pub use config::{parse_norm_rules, ConfigError, PipelineConfig, CONFIG_ENV_VAR};

use std::ffi::OsString;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "planforge", version, about = "Floor-plan graphs, prompts, checks and metrics")]
struct Cli {
    /// Config file in key = value form (default: $PLANFORGE_CONFIG).
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Print the effective configuration and exit.
    #[arg(long, global = true)]
    show_config: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Decode a plan, upsample it and write the recolored image.
    Preprocess(PreprocessArgs),
    /// Extract the room knowledge graph from a plan image.
    ExtractGraph(ExtractGraphArgs),
    /// Emit the prompt text for a graph document.
    EmitPrompt(EmitPromptArgs),
    /// Parse prompt text into a constraint-set document.
    ParsePrompt(ParsePromptArgs),
    /// Check a graph against constraints under the design-rule taxonomy.
    Check(CheckArgs),
    /// Run Canny edge detection on a plan boundary or a grayscale image.
    Canny(CannyArgs),
    /// Compute batch image metrics over paired directories.
    Eval(EvalArgs),
    /// Diffusion laboratory experiments.
    #[command(subcommand)]
    Difflab(DifflabCommand),
}

#[derive(Args, Debug)]
struct PreprocessArgs {
    /// Input plan PNG, or a directory of plans.
    input: PathBuf,
    /// Output recolored PNG path, or a directory for batch input.
    #[arg(long)]
    out: PathBuf,
    /// Also write the upsampled plan in the raw 4-channel encoding.
    #[arg(long)]
    out_plan: Option<PathBuf>,
    /// Upsampling factor (1 disables resampling).
    #[arg(long)]
    factor: Option<u32>,
}

#[derive(Args, Debug)]
struct ExtractGraphArgs {
    /// Input plan PNG, or a directory of plans.
    input: PathBuf,
    /// Output graph JSON (stdout when omitted); a directory for batch input.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Bounding-box dilation in pixels.
    #[arg(long)]
    dilation: Option<u32>,
}

#[derive(Args, Debug)]
struct EmitPromptArgs {
    /// Graph JSON file (stdin when omitted).
    input: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    area_divisor: Option<f64>,
    /// Comma-separated subset of counts,areas,connections.
    #[arg(long)]
    sections: Option<String>,
}

#[derive(Args, Debug)]
struct ParsePromptArgs {
    /// Prompt text file (stdin when omitted).
    #[arg(long = "in", value_name = "FILE")]
    input: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Fail (exit 1) when consistency warnings are found.
    #[arg(long)]
    deny_warnings: bool,
}

#[derive(Args, Debug)]
struct CheckArgs {
    /// Graph JSON file.
    #[arg(long)]
    graph: PathBuf,
    /// Prompt text file to check against.
    #[arg(long, conflicts_with = "constraints")]
    prompt: Option<PathBuf>,
    /// Constraint-set JSON file to check against.
    #[arg(long)]
    constraints: Option<PathBuf>,
    /// Source plan PNG; enables the compactness denominator.
    #[arg(long)]
    plan: Option<PathBuf>,
    #[arg(long)]
    area_divisor: Option<f64>,
    #[arg(long)]
    area_rel_tol: Option<f64>,
    #[arg(long)]
    compactness_threshold: Option<f64>,
    /// Norm rules as class:class[,class:class...].
    #[arg(long)]
    norm_rules: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum CannySource {
    /// Mask exterior walls and front doors from a decoded plan.
    Boundary,
    /// Use the input PNG as a grayscale image.
    Image,
}

#[derive(Args, Debug)]
struct CannyArgs {
    /// Input PNG, or a directory of PNGs.
    input: PathBuf,
    /// Output edge-map PNG, or a directory for batch input.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    low: Option<f64>,
    #[arg(long)]
    high: Option<f64>,
    #[arg(long, value_enum, default_value_t = CannySource::Boundary)]
    source: CannySource,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Directory of generated PNGs.
    #[arg(long)]
    generated: PathBuf,
    /// Directory of reference PNGs, matched to generated by sorted order.
    #[arg(long)]
    reference: PathBuf,
    /// Pooled feature matrix (csv or PLNF) for the generated population.
    #[arg(long)]
    fid_generated: Option<PathBuf>,
    /// Pooled feature matrix for the reference population.
    #[arg(long)]
    fid_reference: Option<PathBuf>,
    /// Directory of per-pair PLNL layer features for generated images.
    #[arg(long)]
    lpips_generated: Option<PathBuf>,
    /// Directory of per-pair PLNL layer features for reference images.
    #[arg(long)]
    lpips_reference: Option<PathBuf>,
    #[arg(long)]
    ssim_mode: Option<String>,
    #[arg(long)]
    lpips_normalize: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum DifflabCommand {
    /// Train the toy denoiser; writes a checkpoint and a loss trace.
    Train(DifflabTrainArgs),
    /// Sample from a trained checkpoint.
    Sample(DifflabSampleArgs),
    /// Verify analytic gradients against central finite differences.
    Gradcheck(DifflabGradcheckArgs),
}

#[derive(Args, Debug)]
struct DifflabTrainArgs {
    /// Training data as a csv/PLNF matrix, one sample per row. Defaults to
    /// the built-in two-Gaussian toy mixture.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out_params: Option<PathBuf>,
    #[arg(long)]
    out_trace: Option<PathBuf>,
    #[arg(long)]
    lora: bool,
    #[arg(long)]
    control: bool,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    hidden_dim: Option<usize>,
}

#[derive(Args, Debug)]
struct DifflabSampleArgs {
    /// Checkpoint JSON written by `difflab train`.
    #[arg(long)]
    params: PathBuf,
    #[arg(long, default_value_t = 16)]
    count: usize,
    #[arg(long)]
    seed: Option<u64>,
    /// Reverse steps to run (defaults to the full schedule).
    #[arg(long)]
    steps: Option<usize>,
    /// Prompt file whose embedding conditions the sampler.
    #[arg(long)]
    prompt: Option<PathBuf>,
    /// Output csv of samples (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct DifflabGradcheckArgs {
    #[arg(long)]
    lora: bool,
    #[arg(long)]
    control: bool,
    #[arg(long)]
    seed: Option<u64>,
}

/// A domain failure carrying its machine-readable code.
#[derive(Debug)]
pub(crate) struct Failure {
    code: String,
    message: String,
}

impl Failure {
    pub(crate) fn new(code: impl Into<String>, message: impl Into<String>) -> Failure {
        Failure { code: code.into(), message: message.into() }
    }
}

macro_rules! failure_from {
    ($ty:ty) => {
        impl From<$ty> for Failure {
            fn from(e: $ty) -> Failure {
                Failure::new(e.code(), e.to_string())
            }
        }
    };
}

failure_from!(crate::raster::RasterError);
failure_from!(crate::graph::GraphError);
failure_from!(crate::prompt::PromptError);
failure_from!(crate::boundary::BoundaryError);
failure_from!(crate::metrics::MetricsError);
failure_from!(crate::featfile::FeatFileError);
failure_from!(crate::difflab::DiffLabError);

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Failure {
        Failure::new("IoError", e.to_string())
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Failure {
        Failure::new("ConfigError", e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Failure {
        Failure::new("JsonError", e.to_string())
    }
}

/// Entry point used by the binary: parses `argv`, runs the command, and
/// returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = e.print();
            return code;
        }
    };
    let cfg = match PipelineConfig::resolve(cli.config.as_deref()) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error[ConfigError]: {e}");
            return 1;
        }
    };
    if cli.show_config {
        print!("{}", cfg.render());
        return 0;
    }
    let Some(command) = cli.command else {
        eprintln!("error: a subcommand is required; see --help");
        return 2;
    };
    let result = match command {
        Command::Preprocess(args) => commands::preprocess(&args, &cfg),
        Command::ExtractGraph(args) => commands::extract_graph(&args, &cfg),
        Command::EmitPrompt(args) => commands::emit_prompt(&args, &cfg),
        Command::ParsePrompt(args) => commands::parse_prompt(&args),
        Command::Check(args) => commands::check(&args, &cfg),
        Command::Canny(args) => commands::canny(&args, &cfg),
        Command::Eval(args) => commands::eval(&args, &cfg),
        Command::Difflab(DifflabCommand::Train(args)) => commands::difflab_train(&args, &cfg),
        Command::Difflab(DifflabCommand::Sample(args)) => commands::difflab_sample(&args, &cfg),
        Command::Difflab(DifflabCommand::Gradcheck(args)) => {
            commands::difflab_gradcheck(&args, &cfg)
        }
    };
    match result {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error[{}]: {}", f.code, f.message);
            1
        }
    }
}

/// Runs with the process arguments.
pub fn run_from_env() -> i32 {
    run(std::env::args_os())
}
