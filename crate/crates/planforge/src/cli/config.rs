//! Pipeline configuration: a `key = value` text file, overridable per-flag.
//!
//! The default path comes from the `PLANFORGE_CONFIG` environment variable;
//! every value has a baked-in default printed by `--show-config`. Lines
//! starting with `#` and blank lines are ignored.

use std::fmt::Write as _;
use std::path::Path;

use crate::difflab::ScheduleSpec;
use crate::metrics::SsimMode;
use crate::prompt::NormRule;
use crate::raster::RoomClass;

pub const CONFIG_ENV_VAR: &str = "PLANFORGE_CONFIG";

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub area_divisor: f64,
    pub graph_dilation: u32,
    pub upsample_factor: u32,
    pub canny_sigma: f64,
    pub canny_low: f64,
    pub canny_high: f64,
    pub ssim_mode: SsimMode,
    pub lpips_normalize: bool,
    pub area_rel_tol: f64,
    pub compactness_threshold: Option<f64>,
    pub norm_rules: Vec<NormRule>,
    pub difflab_t: usize,
    pub difflab_schedule: ScheduleSpec,
    pub difflab_lambda1: f64,
    pub difflab_lambda2: f64,
    pub difflab_learning_rate: f64,
    pub difflab_steps: usize,
    pub difflab_seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            area_divisor: 100.0,
            graph_dilation: 0,
            upsample_factor: 2,
            canny_sigma: 1.0,
            canny_low: 0.1,
            canny_high: 0.2,
            ssim_mode: SsimMode::Windowed,
            lpips_normalize: false,
            area_rel_tol: 0.15,
            compactness_threshold: None,
            norm_rules: vec![NormRule { a: RoomClass::Living, b: RoomClass::Kitchen }],
            difflab_t: 200,
            difflab_schedule: ScheduleSpec::Linear { beta_start: 1e-4, beta_end: 0.02 },
            difflab_lambda1: 1.0,
            difflab_lambda2: 0.0,
            difflab_learning_rate: 0.05,
            difflab_steps: 2000,
            difflab_seed: 0,
        }
    }
}

#[derive(Debug, thiserror::Error)]
#[error("config error: {0}")]
pub struct ConfigError(pub String);

fn bad(msg: impl Into<String>) -> ConfigError {
    ConfigError(msg.into())
}

fn parse_schedule(value: &str) -> Result<ScheduleSpec, ConfigError> {
    let parts: Vec<&str> = value.split(':').collect();
    match parts.as_slice() {
        ["linear", start, end] => Ok(ScheduleSpec::Linear {
            beta_start: start.parse().map_err(|_| bad("bad beta_start"))?,
            beta_end: end.parse().map_err(|_| bad("bad beta_end"))?,
        }),
        ["constant", alpha] => Ok(ScheduleSpec::Constant {
            alpha: alpha.parse().map_err(|_| bad("bad alpha"))?,
        }),
        _ => Err(bad(format!(
            "schedule {value:?} is not linear:<beta_start>:<beta_end> or constant:<alpha>"
        ))),
    }
}

fn schedule_to_string(spec: ScheduleSpec) -> String {
    match spec {
        ScheduleSpec::Linear { beta_start, beta_end } => format!("linear:{beta_start}:{beta_end}"),
        ScheduleSpec::Constant { alpha } => format!("constant:{alpha}"),
    }
}

pub fn parse_norm_rules(value: &str) -> Result<Vec<NormRule>, ConfigError> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value
        .split(',')
        .map(|pair| {
            let (a, b) = pair
                .trim()
                .split_once(':')
                .ok_or_else(|| bad(format!("norm rule {pair:?} is not <class>:<class>")))?;
            let parse = |s: &str| {
                RoomClass::from_name(s.trim())
                    .ok_or_else(|| bad(format!("unknown room class {s:?}")))
            };
            Ok(NormRule { a: parse(a)?, b: parse(b)? })
        })
        .collect()
}

fn norm_rules_to_string(rules: &[NormRule]) -> String {
    rules
        .iter()
        .map(|r| format!("{}:{}", r.a.name(), r.b.name()))
        .collect::<Vec<_>>()
        .join(",")
}

impl PipelineConfig {
    pub fn apply_kv(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let parse_f64 = |v: &str| v.parse::<f64>().map_err(|_| bad(format!("bad number {v:?}")));
        let parse_usize =
            |v: &str| v.parse::<usize>().map_err(|_| bad(format!("bad integer {v:?}")));
        match key {
            "area_divisor" => self.area_divisor = parse_f64(value)?,
            "graph_dilation" => {
                self.graph_dilation =
                    value.parse().map_err(|_| bad(format!("bad integer {value:?}")))?
            }
            "upsample_factor" => {
                self.upsample_factor =
                    value.parse().map_err(|_| bad(format!("bad integer {value:?}")))?
            }
            "canny_sigma" => self.canny_sigma = parse_f64(value)?,
            "canny_low" => self.canny_low = parse_f64(value)?,
            "canny_high" => self.canny_high = parse_f64(value)?,
            "ssim_mode" => {
                self.ssim_mode = match value {
                    "windowed" => SsimMode::Windowed,
                    "global" => SsimMode::Global,
                    _ => return Err(bad(format!("ssim_mode {value:?} is not windowed|global"))),
                }
            }
            "lpips_normalize" => {
                self.lpips_normalize =
                    value.parse().map_err(|_| bad(format!("bad bool {value:?}")))?
            }
            "area_rel_tol" => self.area_rel_tol = parse_f64(value)?,
            "compactness_threshold" => {
                self.compactness_threshold = if value.is_empty() {
                    None
                } else {
                    Some(parse_f64(value)?)
                }
            }
            "norm_rules" => self.norm_rules = parse_norm_rules(value)?,
            "difflab_t" => self.difflab_t = parse_usize(value)?,
            "difflab_schedule" => self.difflab_schedule = parse_schedule(value)?,
            "difflab_lambda1" => self.difflab_lambda1 = parse_f64(value)?,
            "difflab_lambda2" => self.difflab_lambda2 = parse_f64(value)?,
            "difflab_learning_rate" => self.difflab_learning_rate = parse_f64(value)?,
            "difflab_steps" => self.difflab_steps = parse_usize(value)?,
            "difflab_seed" => {
                self.difflab_seed =
                    value.parse().map_err(|_| bad(format!("bad integer {value:?}")))?
            }
            _ => return Err(bad(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    pub fn load_str(text: &str) -> Result<PipelineConfig, ConfigError> {
        let mut cfg = PipelineConfig::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("line {}: expected key = value", lineno + 1)))?;
            cfg.apply_kv(key.trim(), value.trim())
                .map_err(|e| bad(format!("line {}: {}", lineno + 1, e.0)))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<PipelineConfig, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| bad(format!("cannot read {}: {e}", path.display())))?;
        Self::load_str(&text)
    }

    /// Config from an explicit path, else `PLANFORGE_CONFIG`, else defaults.
    pub fn resolve(explicit: Option<&Path>) -> Result<PipelineConfig, ConfigError> {
        if let Some(path) = explicit {
            return Self::load(path);
        }
        if let Ok(path) = std::env::var(CONFIG_ENV_VAR) {
            return Self::load(Path::new(&path));
        }
        Ok(PipelineConfig::default())
    }

    /// The effective configuration in reloadable `key = value` form.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "area_divisor = {}", self.area_divisor);
        let _ = writeln!(out, "graph_dilation = {}", self.graph_dilation);
        let _ = writeln!(out, "upsample_factor = {}", self.upsample_factor);
        let _ = writeln!(out, "canny_sigma = {}", self.canny_sigma);
        let _ = writeln!(out, "canny_low = {}", self.canny_low);
        let _ = writeln!(out, "canny_high = {}", self.canny_high);
        let _ = writeln!(
            out,
            "ssim_mode = {}",
            match self.ssim_mode {
                SsimMode::Windowed => "windowed",
                SsimMode::Global => "global",
            }
        );
        let _ = writeln!(out, "lpips_normalize = {}", self.lpips_normalize);
        let _ = writeln!(out, "area_rel_tol = {}", self.area_rel_tol);
        let _ = writeln!(
            out,
            "compactness_threshold = {}",
            self.compactness_threshold.map_or(String::new(), |v| v.to_string())
        );
        let _ = writeln!(out, "norm_rules = {}", norm_rules_to_string(&self.norm_rules));
        let _ = writeln!(out, "difflab_t = {}", self.difflab_t);
        let _ = writeln!(out, "difflab_schedule = {}", schedule_to_string(self.difflab_schedule));
        let _ = writeln!(out, "difflab_lambda1 = {}", self.difflab_lambda1);
        let _ = writeln!(out, "difflab_lambda2 = {}", self.difflab_lambda2);
        let _ = writeln!(out, "difflab_learning_rate = {}", self.difflab_learning_rate);
        let _ = writeln!(out, "difflab_steps = {}", self.difflab_steps);
        let _ = writeln!(out, "difflab_seed = {}", self.difflab_seed);
        out
    }
}
