//! Image-quality metrics: PSNR, SSIM, Fréchet distance over feature
//! statistics, and LPIPS over externally supplied layer features.
//!
//! PSNR and SSIM work directly on images. The Fréchet distance and LPIPS
//! consume feature data produced elsewhere (the deep feature extractors are
//! out of scope); see [`crate::featfile`] for the file formats.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::boundary::GrayImage;

/// A real-valued image plane without range restrictions (8-bit data is
/// carried as 0..=255 values).
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub width: u32,
    pub height: u32,
    pub data: Vec<f64>,
}

impl Plane {
    pub fn new(width: u32, height: u32, data: Vec<f64>) -> Result<Plane, MetricsError> {
        if data.len() != (width as usize) * (height as usize) {
            return Err(MetricsError::DimensionMismatch(format!(
                "{} values for a {width}x{height} plane",
                data.len()
            )));
        }
        Ok(Plane { width, height, data })
    }

    pub fn from_gray(img: &GrayImage) -> Plane {
        Plane {
            width: img.width(),
            height: img.height(),
            data: img.values().to_vec(),
        }
    }

    pub fn from_luma8(img: &image::GrayImage) -> Plane {
        let (width, height) = img.dimensions();
        Plane {
            width,
            height,
            data: img.pixels().map(|p| p.0[0] as f64).collect(),
        }
    }

    fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width as usize + x]
    }
}

/// A dense row-major matrix of feature rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Matrix, MetricsError> {
        if data.len() != rows * cols {
            return Err(MetricsError::DimensionMismatch(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }
}

/// Gaussian fit of a feature population: mean, covariance, sample count.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStats {
    mean: Vec<f64>,
    covariance: Matrix,
    sample_count: usize,
}

impl FeatureStats {
    /// Assembles stats from parts, checking symmetry within 1e-9.
    pub fn from_parts(
        mean: Vec<f64>,
        covariance: Matrix,
        sample_count: usize,
    ) -> Result<FeatureStats, MetricsError> {
        let d = mean.len();
        if covariance.rows != d || covariance.cols != d {
            return Err(MetricsError::DimensionMismatch(format!(
                "covariance {}x{} for a {d}-dimensional mean",
                covariance.rows, covariance.cols
            )));
        }
        for r in 0..d {
            for c in 0..r {
                if (covariance.get(r, c) - covariance.get(c, r)).abs() > 1e-9 {
                    return Err(MetricsError::DimensionMismatch(
                        "covariance is not symmetric within 1e-9".to_string(),
                    ));
                }
            }
        }
        Ok(FeatureStats { mean, covariance, sample_count })
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn covariance(&self) -> &Matrix {
        &self.covariance
    }

    pub fn sample_count(&self) -> usize {
        self.sample_count
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// One feature map with its layer weight; `data` is channel-major
/// (`data[c * spatial + s]`).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub weight: f64,
    pub channels: usize,
    pub spatial: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(
        weight: f64,
        channels: usize,
        spatial: usize,
        data: Vec<f64>,
    ) -> Result<FeatureMap, MetricsError> {
        if weight < 0.0 {
            return Err(MetricsError::LayerMismatch(format!(
                "negative layer weight {weight}"
            )));
        }
        if data.len() != channels * spatial {
            return Err(MetricsError::LayerMismatch(format!(
                "{} values for a {channels}x{spatial} feature map",
                data.len()
            )));
        }
        Ok(FeatureMap { weight, channels, spatial, data })
    }
}

/// Per-layer feature maps of one image.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LayerFeatures {
    pub layers: Vec<FeatureMap>,
}

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("non-finite value in input")]
    NonFiniteInput,
    #[error("layer mismatch: {0}")]
    LayerMismatch(String),
    #[error("batch is empty")]
    EmptyBatch,
    #[error("{0} must be positive")]
    InvalidParam(&'static str),
}

impl MetricsError {
    pub fn code(&self) -> &'static str {
        match self {
            MetricsError::DimensionMismatch(_) => "DimensionMismatch",
            MetricsError::TooFewSamples(_) => "TooFewSamples",
            MetricsError::NonFiniteInput => "NonFiniteInput",
            MetricsError::LayerMismatch(_) => "LayerMismatch",
            MetricsError::EmptyBatch => "EmptyBatch",
            MetricsError::InvalidParam(_) => "InvalidParam",
        }
    }
}

/// Peak signal-to-noise ratio in decibels; identical images give the
/// infinite sentinel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PsnrValue {
    Finite(f64),
    Infinite,
}

impl PsnrValue {
    pub fn finite(&self) -> Option<f64> {
        match self {
            PsnrValue::Finite(v) => Some(*v),
            PsnrValue::Infinite => None,
        }
    }
}

/// `10 * log10(max_value^2 / MSE)` with the mean squared per-pixel error.
pub fn psnr(a: &Plane, b: &Plane, max_value: f64) -> Result<PsnrValue, MetricsError> {
    if a.width != b.width || a.height != b.height {
        return Err(MetricsError::DimensionMismatch(format!(
            "{}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    if !max_value.is_finite() || max_value <= 0.0 {
        return Err(MetricsError::InvalidParam("max_value"));
    }
    let n = a.data.len() as f64;
    let mse: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        Ok(PsnrValue::Infinite)
    } else {
        Ok(PsnrValue::Finite(10.0 * (max_value * max_value / mse).log10()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SsimMode {
    /// One evaluation of the similarity formula over the whole image.
    Global,
    /// Mean over Gaussian-weighted sliding windows, the common convention.
    Windowed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SsimConfig {
    pub mode: SsimMode,
    pub window: usize,
    pub window_sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
}

impl SsimConfig {
    pub fn windowed(dynamic_range: f64) -> SsimConfig {
        SsimConfig {
            mode: SsimMode::Windowed,
            window: 11,
            window_sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            dynamic_range,
        }
    }

    pub fn global(dynamic_range: f64) -> SsimConfig {
        SsimConfig { mode: SsimMode::Global, ..SsimConfig::windowed(dynamic_range) }
    }
}

fn ssim_formula(
    mu_x: f64,
    mu_y: f64,
    var_x: f64,
    var_y: f64,
    cov_xy: f64,
    c1: f64,
    c2: f64,
) -> f64 {
    ((2.0 * mu_x * mu_y + c1) / (mu_x * mu_x + mu_y * mu_y + c1))
        * ((2.0 * cov_xy + c2) / (var_x + var_y + c2))
}

/// Structural similarity in `[-1, 1]`.
///
/// Images smaller than the window fall back to the global evaluation.
pub fn ssim(a: &Plane, b: &Plane, cfg: &SsimConfig) -> Result<f64, MetricsError> {
    if a.width != b.width || a.height != b.height {
        return Err(MetricsError::DimensionMismatch(format!(
            "{}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    if !cfg.dynamic_range.is_finite() || cfg.dynamic_range <= 0.0 {
        return Err(MetricsError::InvalidParam("dynamic_range"));
    }
    let c1 = (cfg.k1 * cfg.dynamic_range).powi(2);
    let c2 = (cfg.k2 * cfg.dynamic_range).powi(2);
    let (w, h) = (a.width as usize, a.height as usize);

    let global = cfg.mode == SsimMode::Global || w < cfg.window || h < cfg.window;
    if global {
        let n = (w * h) as f64;
        let mu_x = a.data.iter().sum::<f64>() / n;
        let mu_y = b.data.iter().sum::<f64>() / n;
        let mut var_x = 0.0;
        let mut var_y = 0.0;
        let mut cov = 0.0;
        for (x, y) in a.data.iter().zip(&b.data) {
            var_x += (x - mu_x) * (x - mu_x);
            var_y += (y - mu_y) * (y - mu_y);
            cov += (x - mu_x) * (y - mu_y);
        }
        var_x /= n;
        var_y /= n;
        cov /= n;
        return Ok(ssim_formula(mu_x, mu_y, var_x, var_y, cov, c1, c2));
    }

    // Gaussian window weights, normalized.
    let k = cfg.window;
    let half = (k - 1) as f64 / 2.0;
    let mut weights = vec![0.0; k * k];
    let mut sum = 0.0;
    for wy in 0..k {
        for wx in 0..k {
            let dx = wx as f64 - half;
            let dy = wy as f64 - half;
            let g = (-(dx * dx + dy * dy) / (2.0 * cfg.window_sigma * cfg.window_sigma)).exp();
            weights[wy * k + wx] = g;
            sum += g;
        }
    }
    for g in &mut weights {
        *g /= sum;
    }

    let mut total = 0.0;
    let mut windows = 0usize;
    for y0 in 0..=(h - k) {
        for x0 in 0..=(w - k) {
            let mut mu_x = 0.0;
            let mut mu_y = 0.0;
            for wy in 0..k {
                for wx in 0..k {
                    let g = weights[wy * k + wx];
                    mu_x += g * a.get(x0 + wx, y0 + wy);
                    mu_y += g * b.get(x0 + wx, y0 + wy);
                }
            }
            let mut var_x = 0.0;
            let mut var_y = 0.0;
            let mut cov = 0.0;
            for wy in 0..k {
                for wx in 0..k {
                    let g = weights[wy * k + wx];
                    let dx = a.get(x0 + wx, y0 + wy) - mu_x;
                    let dy = b.get(x0 + wx, y0 + wy) - mu_y;
                    var_x += g * dx * dx;
                    var_y += g * dy * dy;
                    cov += g * dx * dy;
                }
            }
            total += ssim_formula(mu_x, mu_y, var_x, var_y, cov, c1, c2);
            windows += 1;
        }
    }
    Ok(total / windows as f64)
}

/// Sample mean and unbiased sample covariance of feature rows.
pub fn feature_stats(features: &Matrix) -> Result<FeatureStats, MetricsError> {
    let n = features.rows;
    let d = features.cols;
    if n < 2 {
        return Err(MetricsError::TooFewSamples(n));
    }
    if features.data.iter().any(|v| !v.is_finite()) {
        return Err(MetricsError::NonFiniteInput);
    }
    let mut mean = vec![0.0; d];
    for r in 0..n {
        for (c, m) in mean.iter_mut().enumerate() {
            *m += features.get(r, c);
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mut cov = vec![0.0; d * d];
    for r in 0..n {
        for i in 0..d {
            let di = features.get(r, i) - mean[i];
            for j in i..d {
                cov[i * d + j] += di * (features.get(r, j) - mean[j]);
            }
        }
    }
    let denom = (n - 1) as f64;
    for i in 0..d {
        for j in i..d {
            cov[i * d + j] /= denom;
            cov[j * d + i] = cov[i * d + j];
        }
    }
    Ok(FeatureStats {
        mean,
        covariance: Matrix { rows: d, cols: d, data: cov },
        sample_count: n,
    })
}

/// Symmetric square root via eigendecomposition, clamping negative rounding
/// noise in the eigenvalues to zero.
fn sym_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = m.clone().symmetric_eigen();
    let sqrt_vals = eig.eigenvalues.map(|v| if v > 0.0 { v.sqrt() } else { 0.0 });
    &eig.eigenvectors * DMatrix::from_diagonal(&sqrt_vals) * eig.eigenvectors.transpose()
}

/// Fréchet distance between two Gaussian feature fits:
/// `||mu1 - mu2||^2 + Tr(S1 + S2 - 2 (S1 S2)^(1/2))`.
///
/// The matrix square root goes through the eigendecomposition of the
/// symmetrized product `S1^(1/2) S2 S1^(1/2)`; eigenvalues pushed slightly
/// negative by rounding are clamped to zero, and the result is clamped to
/// be non-negative.
pub fn frechet_distance(s1: &FeatureStats, s2: &FeatureStats) -> Result<f64, MetricsError> {
    let d = s1.dim();
    if d != s2.dim() {
        return Err(MetricsError::DimensionMismatch(format!(
            "feature dims {d} vs {}",
            s2.dim()
        )));
    }
    let finite = |s: &FeatureStats| {
        s.mean.iter().all(|v| v.is_finite()) && s.covariance.data.iter().all(|v| v.is_finite())
    };
    if !finite(s1) || !finite(s2) {
        return Err(MetricsError::NonFiniteInput);
    }
    let mean_term: f64 = s1
        .mean
        .iter()
        .zip(&s2.mean)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let a = DMatrix::from_row_slice(d, d, &s1.covariance.data);
    let b = DMatrix::from_row_slice(d, d, &s2.covariance.data);
    let sqrt_a = sym_sqrt(&a);
    let product = &sqrt_a * &b * &sqrt_a;
    let symmetrized = (&product + product.transpose()) * 0.5;
    let eig = symmetrized.symmetric_eigen();
    let trace_sqrt: f64 = eig
        .eigenvalues
        .iter()
        .map(|v| if *v > 0.0 { v.sqrt() } else { 0.0 })
        .sum();
    let value = mean_term + a.trace() + b.trace() - 2.0 * trace_sqrt;
    Ok(value.max(0.0))
}

/// Weighted squared feature-map distance, summed over layers.
///
/// The literal form (`normalize = false`) is the plain weighted squared
/// Euclidean distance over all map entries. With `normalize` set, each
/// spatial position's channel vector is unit-normalized first and the
/// squared distance is averaged over spatial positions, the usual
/// perceptual-metric convention.
pub fn lpips(
    fx: &LayerFeatures,
    fy: &LayerFeatures,
    normalize: bool,
) -> Result<f64, MetricsError> {
    if fx.layers.len() != fy.layers.len() {
        return Err(MetricsError::LayerMismatch(format!(
            "{} vs {} layers",
            fx.layers.len(),
            fy.layers.len()
        )));
    }
    let mut total = 0.0;
    for (l, (a, b)) in fx.layers.iter().zip(&fy.layers).enumerate() {
        if a.channels != b.channels || a.spatial != b.spatial {
            return Err(MetricsError::LayerMismatch(format!(
                "layer {l}: {}x{} vs {}x{}",
                a.channels, a.spatial, b.channels, b.spatial
            )));
        }
        if a.weight != b.weight {
            return Err(MetricsError::LayerMismatch(format!(
                "layer {l}: weights {} vs {}",
                a.weight, b.weight
            )));
        }
        if normalize {
            let mut spatial_sum = 0.0;
            for s in 0..a.spatial {
                let norm_of = |m: &FeatureMap| {
                    (0..m.channels)
                        .map(|c| m.data[c * m.spatial + s].powi(2))
                        .sum::<f64>()
                        .sqrt()
                        + 1e-10
                };
                let (na, nb) = (norm_of(a), norm_of(b));
                for c in 0..a.channels {
                    let ua = a.data[c * a.spatial + s] / na;
                    let ub = b.data[c * b.spatial + s] / nb;
                    spatial_sum += (ua - ub) * (ua - ub);
                }
            }
            total += a.weight * spatial_sum / a.spatial as f64;
        } else {
            let dist: f64 = a
                .data
                .iter()
                .zip(&b.data)
                .map(|(x, y)| (x - y) * (x - y))
                .sum();
            total += a.weight * dist;
        }
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchConfig {
    pub max_value: f64,
    pub ssim: SsimConfig,
    pub lpips_normalize: bool,
}

impl Default for BatchConfig {
    fn default() -> Self {
        BatchConfig {
            max_value: 255.0,
            ssim: SsimConfig::windowed(255.0),
            lpips_normalize: false,
        }
    }
}

/// Batch means in the report shape FID / PSNR / LPIPS / SSIM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    pub pair_count: usize,
    pub fid: Option<f64>,
    /// Mean over pairs with finite PSNR.
    pub psnr_mean_db: Option<f64>,
    pub psnr_infinite_count: usize,
    pub lpips_mean: Option<f64>,
    pub ssim_mean: f64,
}

impl std::fmt::Display for BatchReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let fid = self.fid.map_or("-".to_string(), |v| format!("{v:.4}"));
        let psnr = match (self.psnr_mean_db, self.psnr_infinite_count) {
            (Some(v), 0) => format!("{v:.4}"),
            (Some(v), k) => format!("{v:.4} ({k} inf)"),
            (None, k) if k > 0 => format!("inf ({k} pairs)"),
            (None, _) => "-".to_string(),
        };
        let lpips = self.lpips_mean.map_or("-".to_string(), |v| format!("{v:.4}"));
        writeln!(f, "pairs: {}", self.pair_count)?;
        writeln!(f, "FID   PSNR   LPIPS   SSIM")?;
        write!(f, "{fid}   {psnr}   {lpips}   {:.4}", self.ssim_mean)
    }
}

/// Evaluates a batch of (generated, reference) pairs: mean PSNR and SSIM
/// from the images, one FID over the two pooled feature populations, and
/// mean LPIPS over per-pair layer features, when supplied.
pub fn evaluate_batch(
    pairs: &[(Plane, Plane)],
    fid_features: Option<(&Matrix, &Matrix)>,
    lpips_pairs: Option<&[(LayerFeatures, LayerFeatures)]>,
    cfg: &BatchConfig,
) -> Result<BatchReport, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::EmptyBatch);
    }
    let mut finite_sum = 0.0;
    let mut finite_count = 0usize;
    let mut infinite_count = 0usize;
    let mut ssim_sum = 0.0;
    for (a, b) in pairs {
        match psnr(a, b, cfg.max_value)? {
            PsnrValue::Finite(v) => {
                finite_sum += v;
                finite_count += 1;
            }
            PsnrValue::Infinite => infinite_count += 1,
        }
        ssim_sum += ssim(a, b, &cfg.ssim)?;
    }
    let fid = match fid_features {
        Some((fa, fb)) => Some(frechet_distance(&feature_stats(fa)?, &feature_stats(fb)?)?),
        None => None,
    };
    let lpips_mean = match lpips_pairs {
        Some(feature_pairs) => {
            if feature_pairs.len() != pairs.len() {
                return Err(MetricsError::LayerMismatch(format!(
                    "{} feature pairs for {} image pairs",
                    feature_pairs.len(),
                    pairs.len()
                )));
            }
            let mut sum = 0.0;
            for (fx, fy) in feature_pairs {
                sum += lpips(fx, fy, cfg.lpips_normalize)?;
            }
            Some(sum / feature_pairs.len() as f64)
        }
        None => None,
    };
    Ok(BatchReport {
        pair_count: pairs.len(),
        fid,
        psnr_mean_db: (finite_count > 0).then(|| finite_sum / finite_count as f64),
        psnr_infinite_count: infinite_count,
        lpips_mean,
        ssim_mean: ssim_sum / pairs.len() as f64,
    })
}
