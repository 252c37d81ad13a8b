//! Noise schedules and the forward diffusion process.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::difflab::DiffLabError;

/// How the per-step noise levels are generated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ScheduleSpec {
    /// `beta_t` interpolated linearly from `beta_start` to `beta_end`,
    /// `alpha_t = 1 - beta_t`.
    Linear { beta_start: f64, beta_end: f64 },
    /// The same `alpha` at every step.
    Constant { alpha: f64 },
}

/// Per-step retention factors `alpha_t` and their running products.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    /// Number of steps `T`.
    pub fn len(&self) -> usize {
        self.alphas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alphas.is_empty()
    }

    /// `alpha_t` for `t` in `1..=T`.
    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t - 1]
    }

    /// Cumulative product for `t` in `0..=T`, with the `t = 0` boundary
    /// defined as 1.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }
}

/// Builds a schedule, checking every `alpha_t` stays inside `(0, 1)`.
pub fn make_schedule(steps: usize, spec: ScheduleSpec) -> Result<NoiseSchedule, DiffLabError> {
    if steps == 0 {
        return Err(DiffLabError::InvalidSpec("schedule needs at least 1 step".into()));
    }
    let alphas: Vec<f64> = match spec {
        ScheduleSpec::Constant { alpha } => vec![alpha; steps],
        ScheduleSpec::Linear { beta_start, beta_end } => (0..steps)
            .map(|i| {
                let frac = if steps == 1 { 0.0 } else { i as f64 / (steps - 1) as f64 };
                1.0 - (beta_start + (beta_end - beta_start) * frac)
            })
            .collect(),
    };
    for (i, a) in alphas.iter().enumerate() {
        if !(*a > 0.0 && *a < 1.0) {
            return Err(DiffLabError::InvalidSpec(format!(
                "alpha_{} = {a} leaves (0, 1)",
                i + 1
            )));
        }
    }
    let mut alpha_bars = Vec::with_capacity(steps);
    let mut product = 1.0;
    for a in &alphas {
        product *= a;
        alpha_bars.push(product);
    }
    Ok(NoiseSchedule { alphas, alpha_bars })
}

/// One forward step: `sqrt(alpha_t) x + sqrt(1 - alpha_t) eps`.
pub fn forward_step<R: Rng>(
    x_prev: &[f64],
    t: usize,
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Vec<f64> {
    let alpha = schedule.alpha(t);
    x_prev
        .iter()
        .map(|x| {
            let eps: f64 = rng.sample(StandardNormal);
            alpha.sqrt() * x + (1.0 - alpha).sqrt() * eps
        })
        .collect()
}

/// Jump straight to step `t` with the closed form
/// `sqrt(abar_t) x0 + sqrt(1 - abar_t) eps`; `t = 0` returns `x0` exactly.
pub fn forward_to<R: Rng>(
    x0: &[f64],
    t: usize,
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Vec<f64> {
    if t == 0 {
        return x0.to_vec();
    }
    let abar = schedule.alpha_bar(t);
    x0.iter()
        .map(|x| {
            let eps: f64 = rng.sample(StandardNormal);
            abar.sqrt() * x + (1.0 - abar).sqrt() * eps
        })
        .collect()
}
