//! Desk-scale diffusion laboratory.
//!
//! Implements the generative mathematics end to end at a size where every
//! piece is verifiable: the forward/reverse diffusion processes over a noise
//! schedule, deterministic bag-of-tokens text embeddings with cosine
//! similarity, LoRA low-rank adapters with their regularized loss, a
//! zero-initialized control branch driven by boundary edge features, and a
//! small fully-connected noise-prediction network trained by plain SGD with
//! hand-derived gradients. Everything is double precision and deterministic
//! given a seed.

mod control;
mod lora;
mod model;
mod schedule;
mod train;

pub use control::{control_forward, edge_features, ControlBranch};
pub use lora::{lora_forward, lora_loss, LoRAAdapter, LossConfig, Regularizer, TaskLoss};
pub use model::{
    reverse_step, sample, sample_batch, ControlConv, ControlSettings, DenoiserConfig,
    DiffusionModel, LoraSettings, ModelLayer,
};
pub use schedule::{forward_step, forward_to, make_schedule, NoiseSchedule, ScheduleSpec};
pub use train::{
    gradient_check, train, GradCheckFixture, GradCheckReport, TrainConfig, TrainOutcome,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompt::ConstraintSet;

#[derive(Debug, Error)]
pub enum DiffLabError {
    #[error("invalid schedule: {0}")]
    InvalidSpec(String),
    #[error("cosine similarity of a zero vector is undefined")]
    ZeroVector,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-finite loss {loss} at step {step}")]
    NonFiniteLoss { step: usize, loss: f64 },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

impl DiffLabError {
    pub fn code(&self) -> &'static str {
        match self {
            DiffLabError::InvalidSpec(_) => "InvalidSpec",
            DiffLabError::ZeroVector => "ZeroVector",
            DiffLabError::DimensionMismatch(_) => "DimensionMismatch",
            DiffLabError::NonFiniteLoss { .. } => "NonFiniteLoss",
            DiffLabError::EmptyDataset => "EmptyDataset",
            DiffLabError::InvalidConfig(_) => "InvalidConfig",
        }
    }
}

/// A fixed-dimension real vector used as a conditioning input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding(pub Vec<f64>);

impl Embedding {
    pub fn zeros(dim: usize) -> Embedding {
        Embedding(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// Default dimension for text embeddings.
pub const DEFAULT_EMBED_DIM: usize = 32;

/// Cosine similarity `v . t / (|v| |t|)`.
pub fn cosine_sim(v: &Embedding, t: &Embedding) -> Result<f64, DiffLabError> {
    if v.dim() != t.dim() {
        return Err(DiffLabError::DimensionMismatch(format!(
            "embedding dims {} vs {}",
            v.dim(),
            t.dim()
        )));
    }
    let dot: f64 = v.0.iter().zip(&t.0).map(|(a, b)| a * b).sum();
    let nv: f64 = v.0.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nt: f64 = t.0.iter().map(|a| a * a).sum::<f64>().sqrt();
    if nv == 0.0 || nt == 0.0 {
        return Err(DiffLabError::ZeroVector);
    }
    Ok(dot / (nv * nt))
}

/// 64-bit FNV-1a, used for stable token hashing across runs and platforms.
fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Deterministic bag-of-tokens embedding of a constraint set.
///
/// Counts, bucketed area tokens and connection pairs are hashed into a
/// fixed-dimension histogram which is then L2-normalized. Identical
/// constraint sets embed identically; an entirely empty set embeds to the
/// zero vector.
pub fn embed_text(cs: &ConstraintSet, dim: usize) -> Embedding {
    let mut values = vec![0.0f64; dim];
    let mut add = |token: String| {
        values[(fnv1a(&token) % dim as u64) as usize] += 1.0;
    };
    if let Some(counts) = &cs.counts {
        for (class, k) in counts {
            add(format!("count:{}:{k}", class.name()));
        }
    }
    if let Some(areas) = &cs.areas {
        for e in areas {
            let bucket = e.tokens.max(1).ilog2();
            add(format!("area:{}:{bucket}", e.room.display_ref()));
        }
    }
    if let Some(conns) = &cs.connections {
        for c in conns {
            add(format!("conn:{}:{}", c.first(), c.second()));
        }
    }
    let norm: f64 = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        for v in &mut values {
            *v /= norm;
        }
    }
    Embedding(values)
}
