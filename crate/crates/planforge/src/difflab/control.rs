//! Zero-initialized control branch.
//!
//! The branch perturbs frozen base weights with a learnable linear map of
//! boundary edge features: `W_eff = W + scale * ZeroConv(c)`. The map is
//! zero-initialized, so before any training step the branch is exactly the
//! base forward pass.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::boundary::EdgeMap;
use crate::difflab::DiffLabError;

/// Frozen base weights plus the zero-initialized control map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlBranch {
    /// Base weights `W` (`d x k`), frozen under control training.
    base: DMatrix<f64>,
    /// The zero-conv map (`feature_dim x (d * k)`), zero at initialization.
    pub zero_conv: DMatrix<f64>,
    /// Scaling factor applied to the zero-conv output.
    pub scale: f64,
}

impl ControlBranch {
    pub fn init(base: DMatrix<f64>, feature_dim: usize, scale: f64) -> ControlBranch {
        let n = base.nrows() * base.ncols();
        ControlBranch {
            base,
            zero_conv: DMatrix::zeros(feature_dim, n),
            scale,
        }
    }

    pub fn base(&self) -> &DMatrix<f64> {
        &self.base
    }

    pub fn feature_dim(&self) -> usize {
        self.zero_conv.nrows()
    }

    /// The weight perturbation for a feature vector: the zero-conv output
    /// reshaped to the base's `d x k` shape (row-major).
    pub fn delta_weights(&self, features: &DVector<f64>) -> Result<DMatrix<f64>, DiffLabError> {
        if features.len() != self.feature_dim() {
            return Err(DiffLabError::DimensionMismatch(format!(
                "{} features for a {}-feature branch",
                features.len(),
                self.feature_dim()
            )));
        }
        let flat = self.zero_conv.transpose() * features;
        let (d, k) = (self.base.nrows(), self.base.ncols());
        Ok(DMatrix::from_fn(d, k, |i, j| flat[i * k + j]))
    }

    /// `W + scale * ZeroConv(c)`.
    pub fn effective_weights(&self, features: &DVector<f64>) -> Result<DMatrix<f64>, DiffLabError> {
        Ok(&self.base + self.delta_weights(features)? * self.scale)
    }
}

/// Applies the control-adjusted weights to a batch of row vectors.
pub fn control_forward(
    x: &DMatrix<f64>,
    branch: &ControlBranch,
    features: &DVector<f64>,
) -> Result<DMatrix<f64>, DiffLabError> {
    if x.ncols() != branch.base.nrows() {
        return Err(DiffLabError::DimensionMismatch(format!(
            "input width {} vs base rows {}",
            x.ncols(),
            branch.base.nrows()
        )));
    }
    Ok(x * branch.effective_weights(features)?)
}

/// Pools an edge map into a fixed-dimension feature vector by averaging
/// edge density over a near-square grid of cells.
pub fn edge_features(edges: &EdgeMap, dim: usize) -> DVector<f64> {
    let cols = (dim as f64).sqrt().ceil() as u32;
    let rows = (dim as u32).div_ceil(cols);
    let mut out = DVector::zeros(dim);
    for (i, v) in out.iter_mut().enumerate() {
        let cx = i as u32 % cols;
        let cy = i as u32 / cols;
        let x0 = cx * edges.width() / cols;
        let x1 = ((cx + 1) * edges.width() / cols).max(x0 + 1).min(edges.width());
        let y0 = cy * edges.height() / rows;
        let y1 = ((cy + 1) * edges.height() / rows).max(y0 + 1).min(edges.height());
        let mut count = 0u64;
        let mut total = 0u64;
        for y in y0..y1 {
            for x in x0..x1 {
                total += 1;
                count += u64::from(edges.is_edge(x, y));
            }
        }
        *v = if total > 0 { count as f64 / total as f64 } else { 0.0 };
    }
    out
}
