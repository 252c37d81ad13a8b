//! The small noise-prediction network and the reverse diffusion process.
//!
//! A two-layer tanh network maps `[x_t, time embedding, condition]` to the
//! predicted noise. Either layer can carry a LoRA adapter (frozen base,
//! trainable low-rank update); the first layer can additionally be perturbed
//! by a zero-initialized control map of boundary features. The reverse step
//! uses the noise parameterization of the posterior mean with the variance
//! fixed to `1 - alpha_t`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::difflab::{DiffLabError, Embedding, LoRAAdapter, NoiseSchedule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    pub data_dim: usize,
    pub hidden_dim: usize,
    /// Sinusoidal time-embedding width; must be even.
    pub time_embed_dim: usize,
    pub cond_dim: usize,
}

impl DenoiserConfig {
    pub fn input_dim(&self) -> usize {
        self.data_dim + self.time_embed_dim + self.cond_dim
    }
}

/// A dense layer, either fully trainable or adapted with frozen base.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ModelLayer {
    Plain { weight: DMatrix<f64>, bias: DVector<f64> },
    Lora(LoRAAdapter),
}

impl ModelLayer {
    pub fn effective_weights(&self) -> DMatrix<f64> {
        match self {
            ModelLayer::Plain { weight, .. } => weight.clone(),
            ModelLayer::Lora(adapter) => adapter.effective_weights(),
        }
    }

    pub fn bias(&self) -> &DVector<f64> {
        match self {
            ModelLayer::Plain { bias, .. } => bias,
            ModelLayer::Lora(adapter) => &adapter.bias,
        }
    }

    pub fn bias_mut(&mut self) -> &mut DVector<f64> {
        match self {
            ModelLayer::Plain { bias, .. } => bias,
            ModelLayer::Lora(adapter) => &mut adapter.bias,
        }
    }

    pub fn lora(&self) -> Option<&LoRAAdapter> {
        match self {
            ModelLayer::Lora(adapter) => Some(adapter),
            ModelLayer::Plain { .. } => None,
        }
    }

    /// Squared Frobenius norm of the trainable low-rank matrices, zero for
    /// plain layers.
    pub fn regularization(&self) -> f64 {
        match self {
            ModelLayer::Plain { .. } => 0.0,
            ModelLayer::Lora(adapter) => adapter.regularization(),
        }
    }
}

/// The zero-initialized control map attached to the first layer. Its output
/// is reshaped to the layer's weight shape and added, scaled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlConv {
    /// `feature_dim x (in_dim * hidden_dim)`, zero at initialization.
    pub zero_conv: DMatrix<f64>,
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionModel {
    pub cfg: DenoiserConfig,
    pub layer1: ModelLayer,
    pub layer2: ModelLayer,
    pub control: Option<ControlConv>,
}

#[derive(Debug, Clone, Copy)]
pub struct LoraSettings {
    pub rank: usize,
    pub scale: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct ControlSettings {
    pub feature_dim: usize,
    pub scale: f64,
}

fn xavier<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    DMatrix::from_fn(rows, cols, |_, _| (rng.random::<f64>() * 2.0 - 1.0) * bound)
}

impl DiffusionModel {
    /// Builds a freshly initialized model. With LoRA settings both layers
    /// get adapters around frozen bases; with control settings the first
    /// layer gets a zero-initialized control map.
    pub fn init<R: Rng>(
        cfg: DenoiserConfig,
        lora: Option<LoraSettings>,
        control: Option<ControlSettings>,
        rng: &mut R,
    ) -> Result<DiffusionModel, DiffLabError> {
        if !cfg.time_embed_dim.is_multiple_of(2) {
            return Err(DiffLabError::InvalidConfig(
                "time_embed_dim must be even".into(),
            ));
        }
        let in_dim = cfg.input_dim();
        let mk_layer = |rows: usize, cols: usize, rng: &mut R| -> Result<ModelLayer, DiffLabError> {
            let weight = xavier(rows, cols, rng);
            match lora {
                None => Ok(ModelLayer::Plain { weight, bias: DVector::zeros(cols) }),
                Some(s) => {
                    // Narrow layers cap the usable rank.
                    let rank = s.rank.clamp(1, rows.min(cols));
                    Ok(ModelLayer::Lora(LoRAAdapter::init(weight, rank, s.scale, rng)?))
                }
            }
        };
        let layer1 = mk_layer(in_dim, cfg.hidden_dim, rng)?;
        let layer2 = mk_layer(cfg.hidden_dim, cfg.data_dim, rng)?;
        let control = control.map(|s| ControlConv {
            zero_conv: DMatrix::zeros(s.feature_dim, in_dim * cfg.hidden_dim),
            scale: s.scale,
        });
        Ok(DiffusionModel { cfg, layer1, layer2, control })
    }

    /// First-layer weights with the control perturbation applied.
    pub fn layer1_effective(
        &self,
        control_features: Option<&DVector<f64>>,
    ) -> Result<DMatrix<f64>, DiffLabError> {
        let mut w = self.layer1.effective_weights();
        if let Some(conv) = &self.control {
            let features = control_features.ok_or_else(|| {
                DiffLabError::InvalidConfig(
                    "model has a control branch but no control features were given".into(),
                )
            })?;
            if features.len() != conv.zero_conv.nrows() {
                return Err(DiffLabError::DimensionMismatch(format!(
                    "{} control features for a {}-feature map",
                    features.len(),
                    conv.zero_conv.nrows()
                )));
            }
            let flat = conv.zero_conv.transpose() * features;
            let cols = w.ncols();
            for i in 0..w.nrows() {
                for j in 0..cols {
                    w[(i, j)] += conv.scale * flat[i * cols + j];
                }
            }
        }
        Ok(w)
    }

    /// Assembles `[x_t, time embedding, condition]` input rows.
    pub fn assemble_input(
        &self,
        x_t: &DMatrix<f64>,
        ts: &[usize],
        total_steps: usize,
        condition: &Embedding,
    ) -> Result<DMatrix<f64>, DiffLabError> {
        if x_t.ncols() != self.cfg.data_dim {
            return Err(DiffLabError::DimensionMismatch(format!(
                "{} data columns, model expects {}",
                x_t.ncols(),
                self.cfg.data_dim
            )));
        }
        if ts.len() != x_t.nrows() {
            return Err(DiffLabError::DimensionMismatch(format!(
                "{} time steps for {} rows",
                ts.len(),
                x_t.nrows()
            )));
        }
        if condition.dim() != self.cfg.cond_dim {
            return Err(DiffLabError::DimensionMismatch(format!(
                "condition dim {} vs configured {}",
                condition.dim(),
                self.cfg.cond_dim
            )));
        }
        let n = x_t.nrows();
        let mut input = DMatrix::zeros(n, self.cfg.input_dim());
        for r in 0..n {
            for c in 0..self.cfg.data_dim {
                input[(r, c)] = x_t[(r, c)];
            }
            let temb = time_embedding(ts[r], total_steps, self.cfg.time_embed_dim);
            for (c, v) in temb.iter().enumerate() {
                input[(r, self.cfg.data_dim + c)] = *v;
            }
            for (c, v) in condition.0.iter().enumerate() {
                input[(r, self.cfg.data_dim + self.cfg.time_embed_dim + c)] = *v;
            }
        }
        Ok(input)
    }

    /// Predicted noise for a batch of noisy rows.
    pub fn predict_batch(
        &self,
        x_t: &DMatrix<f64>,
        ts: &[usize],
        total_steps: usize,
        condition: &Embedding,
        control_features: Option<&DVector<f64>>,
    ) -> Result<DMatrix<f64>, DiffLabError> {
        let input = self.assemble_input(x_t, ts, total_steps, condition)?;
        Ok(self.forward_cached(&input, control_features)?.0)
    }

    /// Forward pass keeping the activations needed for backprop.
    pub(crate) fn forward_cached(
        &self,
        input: &DMatrix<f64>,
        control_features: Option<&DVector<f64>>,
    ) -> Result<(DMatrix<f64>, ForwardCache), DiffLabError> {
        let w1 = self.layer1_effective(control_features)?;
        let w2 = self.layer2.effective_weights();
        let mut z1 = input * &w1;
        for mut row in z1.row_iter_mut() {
            row += self.layer1.bias().transpose();
        }
        let hidden = z1.map(f64::tanh);
        let mut out = &hidden * &w2;
        for mut row in out.row_iter_mut() {
            row += self.layer2.bias().transpose();
        }
        let cache = ForwardCache {
            input: input.clone(),
            hidden: hidden.clone(),
            w2,
            control_features: control_features.cloned(),
        };
        Ok((out, cache))
    }

    /// Backpropagates `d loss / d out` through the cached pass. The
    /// returned gradients cover only what is trainable: effective-weight
    /// gradients are projected onto LoRA factors when a layer is adapted,
    /// and onto the zero-conv map when control is attached.
    pub(crate) fn backward(&self, cache: &ForwardCache, dout: &DMatrix<f64>) -> Gradients {
        let db2 = column_sums(dout);
        let dw2_eff = cache.hidden.transpose() * dout;
        let dh = dout * cache.w2.transpose();
        let dz1 = dh.zip_map(&cache.hidden, |g, h| g * (1.0 - h * h));
        let db1 = column_sums(&dz1);
        let dw1_eff = cache.input.transpose() * &dz1;

        let zero_conv = self.control.as_ref().map(|conv| {
            let features = cache
                .control_features
                .as_ref()
                .expect("control features were checked in the forward pass");
            let cols = dw1_eff.ncols();
            DMatrix::from_fn(conv.zero_conv.nrows(), conv.zero_conv.ncols(), |f, idx| {
                conv.scale * features[f] * dw1_eff[(idx / cols, idx % cols)]
            })
        });

        Gradients {
            layer1: layer_grads(&self.layer1, dw1_eff, db1),
            layer2: layer_grads(&self.layer2, dw2_eff, db2),
            zero_conv,
        }
    }
}

fn column_sums(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_fn(m.ncols(), |c, _| m.column(c).sum())
}

fn layer_grads(layer: &ModelLayer, dw_eff: DMatrix<f64>, bias: DVector<f64>) -> LayerGrads {
    match layer {
        ModelLayer::Plain { .. } => LayerGrads { weight: Some(dw_eff), bias, lora: None },
        ModelLayer::Lora(adapter) => {
            let f = adapter.update_factor();
            let d_down = &dw_eff * adapter.up.transpose() * f;
            let d_up = adapter.down.transpose() * &dw_eff * f;
            LayerGrads { weight: None, bias, lora: Some((d_down, d_up)) }
        }
    }
}

pub(crate) struct ForwardCache {
    input: DMatrix<f64>,
    hidden: DMatrix<f64>,
    w2: DMatrix<f64>,
    control_features: Option<DVector<f64>>,
}

pub(crate) struct Gradients {
    pub layer1: LayerGrads,
    pub layer2: LayerGrads,
    pub zero_conv: Option<DMatrix<f64>>,
}

pub(crate) struct LayerGrads {
    /// Present only when the layer's dense weights are trainable.
    pub weight: Option<DMatrix<f64>>,
    pub bias: DVector<f64>,
    /// Gradients of the LoRA factors when the layer is adapted.
    pub lora: Option<(DMatrix<f64>, DMatrix<f64>)>,
}

/// Sinusoidal features of the normalized step `t / total`.
pub(crate) fn time_embedding(t: usize, total: usize, dim: usize) -> Vec<f64> {
    let tau = t as f64 / total.max(1) as f64;
    let mut out = Vec::with_capacity(dim);
    for i in 0..dim / 2 {
        let freq = std::f64::consts::PI * 2f64.powi(i as i32);
        out.push((freq * tau).sin());
        out.push((freq * tau).cos());
    }
    out
}

/// One reverse step with the noise parameterization:
/// `mu = (x_t - (1 - alpha_t) / sqrt(1 - abar_t) * eps_hat) / sqrt(alpha_t)`,
/// variance fixed to `1 - alpha_t`, and the noise forced to zero at `t = 1`.
pub fn reverse_step<R: Rng>(
    x_t: &[f64],
    t: usize,
    model: &DiffusionModel,
    condition: &Embedding,
    control_features: Option<&DVector<f64>>,
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Result<Vec<f64>, DiffLabError> {
    let x = DMatrix::from_row_slice(1, x_t.len(), x_t);
    let out = reverse_step_batch(&x, t, model, condition, control_features, schedule, rng)?;
    Ok(out.row(0).iter().copied().collect())
}

pub(crate) fn reverse_step_batch<R: Rng>(
    x_t: &DMatrix<f64>,
    t: usize,
    model: &DiffusionModel,
    condition: &Embedding,
    control_features: Option<&DVector<f64>>,
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Result<DMatrix<f64>, DiffLabError> {
    let ts = vec![t; x_t.nrows()];
    let eps_hat = model.predict_batch(x_t, &ts, schedule.len(), condition, control_features)?;
    let alpha = schedule.alpha(t);
    let abar = schedule.alpha_bar(t);
    let coeff = (1.0 - alpha) / (1.0 - abar).sqrt();
    let sigma = (1.0 - alpha).sqrt();
    let mut out = DMatrix::zeros(x_t.nrows(), x_t.ncols());
    for r in 0..x_t.nrows() {
        for c in 0..x_t.ncols() {
            let mu = (x_t[(r, c)] - coeff * eps_hat[(r, c)]) / alpha.sqrt();
            let z: f64 = if t == 1 { 0.0 } else { rng.sample(StandardNormal) };
            out[(r, c)] = mu + sigma * z;
        }
    }
    Ok(out)
}

/// Draws one sample by running `steps` reverse steps from standard normal
/// noise.
pub fn sample<R: Rng>(
    model: &DiffusionModel,
    condition: &Embedding,
    control_features: Option<&DVector<f64>>,
    schedule: &NoiseSchedule,
    rng: &mut R,
    steps: usize,
) -> Result<Vec<f64>, DiffLabError> {
    let out = sample_batch(model, condition, control_features, schedule, rng, steps, 1)?;
    Ok(out.row(0).iter().copied().collect())
}

/// Draws `count` samples in one batched reverse chain.
pub fn sample_batch<R: Rng>(
    model: &DiffusionModel,
    condition: &Embedding,
    control_features: Option<&DVector<f64>>,
    schedule: &NoiseSchedule,
    rng: &mut R,
    steps: usize,
    count: usize,
) -> Result<DMatrix<f64>, DiffLabError> {
    if steps == 0 || steps > schedule.len() {
        return Err(DiffLabError::InvalidConfig(format!(
            "steps {steps} outside 1..={}",
            schedule.len()
        )));
    }
    let d = model.cfg.data_dim;
    let mut x = DMatrix::from_fn(count, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    for t in (1..=steps).rev() {
        x = reverse_step_batch(&x, t, model, condition, control_features, schedule, rng)?;
    }
    Ok(x)
}
