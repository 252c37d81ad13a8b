//! Training loop and gradient verification.
//!
//! Plain stochastic gradient descent over the regularized noise-prediction
//! loss. Frozen tensors follow the adaptation contracts: LoRA base weights
//! are never updated, and attaching a control branch freezes the first
//! layer's dense weights so only the zero-conv map moves. The whole loop is
//! deterministic per seed.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::difflab::model::{ControlSettings, Gradients, LoraSettings};
use crate::difflab::{
    make_schedule, DenoiserConfig, DiffLabError, DiffusionModel, Embedding, LossConfig,
    ModelLayer, NoiseSchedule, ScheduleSpec,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub schedule_steps: usize,
    pub schedule: ScheduleSpec,
    pub lora: bool,
    pub lora_rank: usize,
    pub lora_scale: f64,
    pub control: bool,
    pub control_feature_dim: usize,
    pub control_scale: f64,
    /// Boundary features fed to the control branch during training; a
    /// constant unit vector when absent.
    pub control_features: Option<Vec<f64>>,
    pub lambda1: f64,
    pub lambda2: f64,
    pub learning_rate: f64,
    pub steps: usize,
    pub seed: u64,
    pub batch_size: usize,
    pub hidden_dim: usize,
    pub time_embed_dim: usize,
    pub condition: Embedding,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            schedule_steps: 200,
            schedule: ScheduleSpec::Linear { beta_start: 1e-4, beta_end: 0.02 },
            lora: false,
            lora_rank: 4,
            lora_scale: 4.0,
            control: false,
            control_feature_dim: 8,
            control_scale: 1.0,
            control_features: None,
            lambda1: 1.0,
            lambda2: 0.0,
            learning_rate: 0.05,
            steps: 2000,
            seed: 0,
            batch_size: 32,
            hidden_dim: 48,
            time_embed_dim: 8,
            condition: Embedding::zeros(4),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub model: DiffusionModel,
    pub schedule: NoiseSchedule,
    pub loss_trace: Vec<f64>,
    /// The control features used, when a control branch was trained.
    pub control_features: Option<Vec<f64>>,
}

fn loss_config(cfg: &TrainConfig) -> Result<LossConfig, DiffLabError> {
    LossConfig::new(cfg.lambda1, cfg.lambda2)
}

/// Full loss and analytic gradients for one fixed batch: the task term on
/// the predicted noise plus the Frobenius regularizer of any adapters.
#[allow(clippy::too_many_arguments)]
fn loss_and_grads(
    model: &DiffusionModel,
    x_t: &DMatrix<f64>,
    ts: &[usize],
    total_steps: usize,
    condition: &Embedding,
    control_features: Option<&DVector<f64>>,
    eps_target: &DMatrix<f64>,
    loss_cfg: &LossConfig,
) -> Result<(f64, Gradients), DiffLabError> {
    let input = model.assemble_input(x_t, ts, total_steps, condition)?;
    let (out, cache) = model.forward_cached(&input, control_features)?;
    let n_total = (out.nrows() * out.ncols()) as f64;
    let mse = out
        .iter()
        .zip(eps_target.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n_total;
    let reg = model.layer1.regularization() + model.layer2.regularization();
    let loss = loss_cfg.lambda1 * mse + loss_cfg.lambda2 * reg;

    let scale = 2.0 * loss_cfg.lambda1 / n_total;
    let dout = (out - eps_target) * scale;
    let mut grads = model.backward(&cache, &dout);
    for (layer, layer_grads) in [
        (&model.layer1, &mut grads.layer1),
        (&model.layer2, &mut grads.layer2),
    ] {
        if let (ModelLayer::Lora(adapter), Some((d_down, d_up))) = (layer, &mut layer_grads.lora) {
            *d_down += &adapter.down * (2.0 * loss_cfg.lambda2);
            *d_up += &adapter.up * (2.0 * loss_cfg.lambda2);
        }
    }
    Ok((loss, grads))
}

/// Evaluation-only loss for finite differencing.
#[allow(clippy::too_many_arguments)]
fn loss_only(
    model: &DiffusionModel,
    x_t: &DMatrix<f64>,
    ts: &[usize],
    total_steps: usize,
    condition: &Embedding,
    control_features: Option<&DVector<f64>>,
    eps_target: &DMatrix<f64>,
    loss_cfg: &LossConfig,
) -> Result<f64, DiffLabError> {
    let input = model.assemble_input(x_t, ts, total_steps, condition)?;
    let (out, _) = model.forward_cached(&input, control_features)?;
    let n_total = (out.nrows() * out.ncols()) as f64;
    let mse = out
        .iter()
        .zip(eps_target.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n_total;
    let reg = model.layer1.regularization() + model.layer2.regularization();
    Ok(loss_cfg.lambda1 * mse + loss_cfg.lambda2 * reg)
}

/// Applies one SGD step, honoring the freeze contracts: adapter bases are
/// untouched by construction, and the first layer's dense weights do not
/// move while a control branch is attached.
fn apply_sgd(model: &mut DiffusionModel, grads: &Gradients, lr: f64) {
    let control_attached = model.control.is_some();
    for (layer, layer_grads, frozen_dense) in [
        (&mut model.layer1, &grads.layer1, control_attached),
        (&mut model.layer2, &grads.layer2, false),
    ] {
        match layer {
            ModelLayer::Plain { weight, bias } => {
                if !frozen_dense {
                    if let Some(dw) = &layer_grads.weight {
                        *weight -= dw * lr;
                    }
                }
                *bias -= &layer_grads.bias * lr;
            }
            ModelLayer::Lora(adapter) => {
                if let Some((d_down, d_up)) = &layer_grads.lora {
                    adapter.down -= d_down * lr;
                    adapter.up -= d_up * lr;
                }
                adapter.bias -= &layer_grads.bias * lr;
            }
        }
    }
    if let (Some(conv), Some(dz)) = (&mut model.control, &grads.zero_conv) {
        conv.zero_conv -= dz * lr;
    }
}

fn control_vector(cfg: &TrainConfig) -> Result<Option<DVector<f64>>, DiffLabError> {
    if !cfg.control {
        return Ok(None);
    }
    match &cfg.control_features {
        Some(values) => {
            if values.len() != cfg.control_feature_dim {
                return Err(DiffLabError::DimensionMismatch(format!(
                    "{} control features for configured dim {}",
                    values.len(),
                    cfg.control_feature_dim
                )));
            }
            Ok(Some(DVector::from_vec(values.clone())))
        }
        None => {
            let m = cfg.control_feature_dim;
            Ok(Some(DVector::from_element(m, 1.0 / (m as f64).sqrt())))
        }
    }
}

/// Trains a denoiser on rows of `dataset` by plain SGD, recording the loss
/// at every step. Deterministic given the seed.
pub fn train(dataset: &DMatrix<f64>, cfg: &TrainConfig) -> Result<TrainOutcome, DiffLabError> {
    if dataset.nrows() == 0 {
        return Err(DiffLabError::EmptyDataset);
    }
    if cfg.batch_size == 0 || cfg.steps == 0 {
        return Err(DiffLabError::InvalidConfig(
            "batch_size and steps must be at least 1".into(),
        ));
    }
    if !cfg.learning_rate.is_finite() || cfg.learning_rate <= 0.0 {
        return Err(DiffLabError::InvalidConfig("learning rate must be positive".into()));
    }
    let loss_cfg = loss_config(cfg)?;
    let schedule = make_schedule(cfg.schedule_steps, cfg.schedule)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let model_cfg = DenoiserConfig {
        data_dim: dataset.ncols(),
        hidden_dim: cfg.hidden_dim,
        time_embed_dim: cfg.time_embed_dim,
        cond_dim: cfg.condition.dim(),
    };
    let lora = cfg.lora.then_some(LoraSettings { rank: cfg.lora_rank, scale: cfg.lora_scale });
    let control = cfg.control.then_some(ControlSettings {
        feature_dim: cfg.control_feature_dim,
        scale: cfg.control_scale,
    });
    let mut model = DiffusionModel::init(model_cfg, lora, control, &mut rng)?;
    let ctrl = control_vector(cfg)?;

    let total = schedule.len();
    let (n, d) = (dataset.nrows(), dataset.ncols());
    let mut loss_trace = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let mut x_t = DMatrix::zeros(cfg.batch_size, d);
        let mut eps = DMatrix::zeros(cfg.batch_size, d);
        let mut ts = Vec::with_capacity(cfg.batch_size);
        for r in 0..cfg.batch_size {
            let row = rng.random_range(0..n);
            let t = rng.random_range(1..=total);
            ts.push(t);
            let abar = schedule.alpha_bar(t);
            for c in 0..d {
                let e: f64 = rng.sample(StandardNormal);
                eps[(r, c)] = e;
                x_t[(r, c)] = abar.sqrt() * dataset[(row, c)] + (1.0 - abar).sqrt() * e;
            }
        }
        let (loss, grads) = loss_and_grads(
            &model,
            &x_t,
            &ts,
            total,
            &cfg.condition,
            ctrl.as_ref(),
            &eps,
            &loss_cfg,
        )?;
        if !loss.is_finite() {
            return Err(DiffLabError::NonFiniteLoss { step, loss });
        }
        apply_sgd(&mut model, &grads, cfg.learning_rate);
        loss_trace.push(loss);
    }
    Ok(TrainOutcome {
        model,
        schedule,
        loss_trace,
        control_features: ctrl.map(|v| v.iter().copied().collect()),
    })
}

/// Result of comparing analytic gradients against central finite
/// differences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub per_tensor: Vec<(String, f64)>,
}

/// The trainable tensors of a model, in a fixed order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Tensor {
    L1Weight,
    L1Bias,
    L1Down,
    L1Up,
    L2Weight,
    L2Bias,
    L2Down,
    L2Up,
    ZeroConv,
}

impl Tensor {
    fn name(self) -> &'static str {
        match self {
            Tensor::L1Weight => "layer1.weight",
            Tensor::L1Bias => "layer1.bias",
            Tensor::L1Down => "layer1.lora.down",
            Tensor::L1Up => "layer1.lora.up",
            Tensor::L2Weight => "layer2.weight",
            Tensor::L2Bias => "layer2.bias",
            Tensor::L2Down => "layer2.lora.down",
            Tensor::L2Up => "layer2.lora.up",
            Tensor::ZeroConv => "control.zero_conv",
        }
    }
}

fn trainable_tensors(model: &DiffusionModel) -> Vec<Tensor> {
    let mut tensors = Vec::new();
    match &model.layer1 {
        ModelLayer::Plain { .. } => {
            if model.control.is_none() {
                tensors.push(Tensor::L1Weight);
            }
            tensors.push(Tensor::L1Bias);
        }
        ModelLayer::Lora(_) => {
            tensors.extend([Tensor::L1Down, Tensor::L1Up, Tensor::L1Bias]);
        }
    }
    match &model.layer2 {
        ModelLayer::Plain { .. } => tensors.extend([Tensor::L2Weight, Tensor::L2Bias]),
        ModelLayer::Lora(_) => tensors.extend([Tensor::L2Down, Tensor::L2Up, Tensor::L2Bias]),
    }
    if model.control.is_some() {
        tensors.push(Tensor::ZeroConv);
    }
    tensors
}

fn tensor_values_mut(model: &mut DiffusionModel, tensor: Tensor) -> &mut [f64] {
    match tensor {
        Tensor::L1Weight => match &mut model.layer1 {
            ModelLayer::Plain { weight, .. } => weight.as_mut_slice(),
            ModelLayer::Lora(_) => unreachable!("plain tensor on adapted layer"),
        },
        Tensor::L2Weight => match &mut model.layer2 {
            ModelLayer::Plain { weight, .. } => weight.as_mut_slice(),
            ModelLayer::Lora(_) => unreachable!("plain tensor on adapted layer"),
        },
        Tensor::L1Bias => model.layer1.bias_mut().as_mut_slice(),
        Tensor::L2Bias => model.layer2.bias_mut().as_mut_slice(),
        Tensor::L1Down | Tensor::L1Up => match &mut model.layer1 {
            ModelLayer::Lora(adapter) => {
                if tensor == Tensor::L1Down {
                    adapter.down.as_mut_slice()
                } else {
                    adapter.up.as_mut_slice()
                }
            }
            ModelLayer::Plain { .. } => unreachable!("lora tensor on plain layer"),
        },
        Tensor::L2Down | Tensor::L2Up => match &mut model.layer2 {
            ModelLayer::Lora(adapter) => {
                if tensor == Tensor::L2Down {
                    adapter.down.as_mut_slice()
                } else {
                    adapter.up.as_mut_slice()
                }
            }
            ModelLayer::Plain { .. } => unreachable!("lora tensor on plain layer"),
        },
        Tensor::ZeroConv => model
            .control
            .as_mut()
            .expect("control tensor listed without a branch")
            .zero_conv
            .as_mut_slice(),
    }
}

fn tensor_grad(grads: &Gradients, tensor: Tensor) -> Vec<f64> {
    let slice: &[f64] = match tensor {
        Tensor::L1Weight => grads.layer1.weight.as_ref().unwrap().as_slice(),
        Tensor::L2Weight => grads.layer2.weight.as_ref().unwrap().as_slice(),
        Tensor::L1Bias => grads.layer1.bias.as_slice(),
        Tensor::L2Bias => grads.layer2.bias.as_slice(),
        Tensor::L1Down => grads.layer1.lora.as_ref().unwrap().0.as_slice(),
        Tensor::L1Up => grads.layer1.lora.as_ref().unwrap().1.as_slice(),
        Tensor::L2Down => grads.layer2.lora.as_ref().unwrap().0.as_slice(),
        Tensor::L2Up => grads.layer2.lora.as_ref().unwrap().1.as_slice(),
        Tensor::ZeroConv => grads.zero_conv.as_ref().unwrap().as_slice(),
    };
    slice.to_vec()
}

/// A deterministic fixture batch plus everything needed to evaluate the
/// training loss on it.
pub struct GradCheckFixture {
    pub x_t: DMatrix<f64>,
    pub ts: Vec<usize>,
    pub total_steps: usize,
    pub condition: Embedding,
    pub control_features: Option<DVector<f64>>,
    pub eps_target: DMatrix<f64>,
    pub loss: LossConfig,
}

impl GradCheckFixture {
    /// Builds a well-scaled random batch for the given model.
    pub fn for_model<R: Rng>(
        model: &DiffusionModel,
        batch: usize,
        total_steps: usize,
        lambda1: f64,
        lambda2: f64,
        rng: &mut R,
    ) -> Result<GradCheckFixture, DiffLabError> {
        let d = model.cfg.data_dim;
        let x_t = DMatrix::from_fn(batch, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let eps_target = DMatrix::from_fn(batch, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let ts = (0..batch).map(|_| rng.random_range(1..=total_steps)).collect();
        let condition = Embedding(
            (0..model.cfg.cond_dim)
                .map(|_| rng.random::<f64>() * 2.0 - 1.0)
                .collect(),
        );
        let control_features = model.control.as_ref().map(|conv| {
            DVector::from_fn(conv.zero_conv.nrows(), |_, _| rng.random::<f64>() * 2.0 - 1.0)
        });
        Ok(GradCheckFixture {
            x_t,
            ts,
            total_steps,
            condition,
            control_features,
            eps_target,
            loss: LossConfig::new(lambda1, lambda2)?,
        })
    }
}

/// Verifies every trainable parameter's analytic gradient against central
/// finite differences with step `h` on the fixture batch.
pub fn gradient_check(
    model: &mut DiffusionModel,
    fixture: &GradCheckFixture,
    h: f64,
) -> Result<GradCheckReport, DiffLabError> {
    let (_, grads) = loss_and_grads(
        model,
        &fixture.x_t,
        &fixture.ts,
        fixture.total_steps,
        &fixture.condition,
        fixture.control_features.as_ref(),
        &fixture.eps_target,
        &fixture.loss,
    )?;
    let mut per_tensor = Vec::new();
    let mut max_rel = 0.0f64;
    for tensor in trainable_tensors(model) {
        let analytic = tensor_grad(&grads, tensor);
        let mut tensor_max = 0.0f64;
        #[allow(clippy::needless_range_loop)]
        for i in 0..analytic.len() {
            let original = tensor_values_mut(model, tensor)[i];
            tensor_values_mut(model, tensor)[i] = original + h;
            let plus = loss_only(
                model,
                &fixture.x_t,
                &fixture.ts,
                fixture.total_steps,
                &fixture.condition,
                fixture.control_features.as_ref(),
                &fixture.eps_target,
                &fixture.loss,
            )?;
            tensor_values_mut(model, tensor)[i] = original - h;
            let minus = loss_only(
                model,
                &fixture.x_t,
                &fixture.ts,
                fixture.total_steps,
                &fixture.condition,
                fixture.control_features.as_ref(),
                &fixture.eps_target,
                &fixture.loss,
            )?;
            tensor_values_mut(model, tensor)[i] = original;
            let numeric = (plus - minus) / (2.0 * h);
            let denom = analytic[i].abs().max(numeric.abs());
            if denom > 1e-8 {
                tensor_max = tensor_max.max((analytic[i] - numeric).abs() / denom);
            }
        }
        max_rel = max_rel.max(tensor_max);
        per_tensor.push((tensor.name().to_string(), tensor_max));
    }
    Ok(GradCheckReport { max_rel_err: max_rel, per_tensor })
}
