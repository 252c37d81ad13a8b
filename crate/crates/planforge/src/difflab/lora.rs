//! Low-rank adaptation of frozen weight matrices.
//!
//! The adapter keeps the pre-trained weights frozen and routes updates
//! through the decomposition `A x B` scaled by `scale / rank`:
//! `y = x (W' + (scale/rank) (A B)) + b`. Training touches only `A`, `B`
//! and the bias.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::difflab::DiffLabError;

/// Task-loss kind for the adaptation loss. Mean squared error is the only
/// implemented kind and the default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum TaskLoss {
    #[default]
    MeanSquaredError,
}

/// Regularizer kind. The squared Frobenius norm of `A` and `B` is the only
/// implemented kind and the default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Regularizer {
    #[default]
    SquaredFrobenius,
}

/// Weights for the combined adaptation loss
/// `lambda1 * task + lambda2 * reg`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub task: TaskLoss,
    pub regularizer: Regularizer,
}

impl LossConfig {
    pub fn new(lambda1: f64, lambda2: f64) -> Result<LossConfig, DiffLabError> {
        if lambda1 < 0.0 || lambda2 < 0.0 || lambda1 + lambda2 <= 0.0 {
            return Err(DiffLabError::InvalidConfig(
                "lambda1 and lambda2 must be non-negative with a positive sum".into(),
            ));
        }
        Ok(LossConfig {
            lambda1,
            lambda2,
            task: TaskLoss::default(),
            regularizer: Regularizer::default(),
        })
    }
}

/// A frozen base matrix with a trainable low-rank update and bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoRAAdapter {
    /// Pre-trained weights `W'` (`d x k`), never modified by training.
    base: DMatrix<f64>,
    /// Down projection `A` (`d x rank`).
    pub down: DMatrix<f64>,
    /// Up projection `B` (`rank x k`).
    pub up: DMatrix<f64>,
    /// Scaling factor; the applied update is `(scale / rank) A B`.
    pub scale: f64,
    pub bias: DVector<f64>,
}

impl LoRAAdapter {
    /// Wraps `base` with a rank-`rank` adapter: `A` small random, `B` zero,
    /// so the adapter starts as an exact no-op.
    pub fn init<R: Rng>(
        base: DMatrix<f64>,
        rank: usize,
        scale: f64,
        rng: &mut R,
    ) -> Result<LoRAAdapter, DiffLabError> {
        let (d, k) = (base.nrows(), base.ncols());
        if rank < 1 || rank > d.min(k) {
            return Err(DiffLabError::InvalidConfig(format!(
                "rank {rank} outside 1..=min({d}, {k})"
            )));
        }
        let spread = 1.0 / (d as f64).sqrt();
        let down = DMatrix::from_fn(d, rank, |_, _| (rng.random::<f64>() * 2.0 - 1.0) * spread);
        let up = DMatrix::zeros(rank, k);
        let bias = DVector::zeros(k);
        Ok(LoRAAdapter { base, down, up, scale, bias })
    }

    pub fn from_parts(
        base: DMatrix<f64>,
        down: DMatrix<f64>,
        up: DMatrix<f64>,
        scale: f64,
        bias: DVector<f64>,
    ) -> Result<LoRAAdapter, DiffLabError> {
        let (d, k) = (base.nrows(), base.ncols());
        let rank = down.ncols();
        if rank < 1 || rank > d.min(k) || down.nrows() != d || up.nrows() != rank
            || up.ncols() != k || bias.len() != k
        {
            return Err(DiffLabError::DimensionMismatch(format!(
                "adapter parts around base {d}x{k}: A {}x{}, B {}x{}, b {}",
                down.nrows(),
                down.ncols(),
                up.nrows(),
                up.ncols(),
                bias.len()
            )));
        }
        Ok(LoRAAdapter { base, down, up, scale, bias })
    }

    pub fn base(&self) -> &DMatrix<f64> {
        &self.base
    }

    pub fn rank(&self) -> usize {
        self.down.ncols()
    }

    /// `scale / rank`, the factor applied to `A B`.
    pub fn update_factor(&self) -> f64 {
        self.scale / self.rank() as f64
    }

    /// Dense materialization `W' + (scale/rank) A B`.
    pub fn effective_weights(&self) -> DMatrix<f64> {
        &self.base + (&self.down * &self.up) * self.update_factor()
    }

    /// Squared Frobenius norms of the trainable matrices.
    pub fn regularization(&self) -> f64 {
        self.down.iter().map(|v| v * v).sum::<f64>()
            + self.up.iter().map(|v| v * v).sum::<f64>()
    }
}

/// Applies the adapter to a batch of row vectors (`n x d`), factored as
/// `x W' + (scale/rank) ((x A) B) + b` so the dense update is never formed.
pub fn lora_forward(
    x: &DMatrix<f64>,
    adapter: &LoRAAdapter,
) -> Result<DMatrix<f64>, DiffLabError> {
    if x.ncols() != adapter.base.nrows() {
        return Err(DiffLabError::DimensionMismatch(format!(
            "input width {} vs base rows {}",
            x.ncols(),
            adapter.base.nrows()
        )));
    }
    let mut y = x * &adapter.base + (x * &adapter.down) * &adapter.up * adapter.update_factor();
    for mut row in y.row_iter_mut() {
        row += adapter.bias.transpose();
    }
    Ok(y)
}

/// The adaptation loss `lambda1 * MSE(y_hat, y) + lambda2 * (|A|_F^2 + |B|_F^2)`.
pub fn lora_loss(
    y_hat: &DMatrix<f64>,
    y: &DMatrix<f64>,
    adapter: &LoRAAdapter,
    cfg: &LossConfig,
) -> Result<f64, DiffLabError> {
    if y_hat.shape() != y.shape() {
        return Err(DiffLabError::DimensionMismatch(format!(
            "{:?} vs {:?}",
            y_hat.shape(),
            y.shape()
        )));
    }
    let n = (y_hat.nrows() * y_hat.ncols()) as f64;
    let mse = y_hat
        .iter()
        .zip(y.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n;
    Ok(cfg.lambda1 * mse + cfg.lambda2 * adapter.regularization())
}
