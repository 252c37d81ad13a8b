//! Boundary conditioning images and Canny edge detection.
//!
//! The boundary image masks exterior walls and front doors to 1.0 and
//! everything else to 0.0; the Canny preprocessor sharpens it into a binary
//! edge map for the control branch. The pipeline is the standard one:
//! Gaussian blur truncated at three sigma, Sobel gradients, four-bin
//! direction quantization, non-maximum suppression, and double-threshold
//! hysteresis with 8-connected weak-edge linking. Gradient magnitudes are
//! normalized by their maximum before thresholding so thresholds are
//! image-scale-free.

use image::GrayImage as LumaImage;
use thiserror::Error;

use crate::raster::{RasterPlan, SemanticLabel};

/// A real-valued intensity image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: u32,
    height: u32,
    values: Vec<f64>,
}

/// A binary edge map with the dimensions of its source image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeMap {
    width: u32,
    height: u32,
    edges: Vec<bool>,
}

#[derive(Debug, Error)]
pub enum BoundaryError {
    #[error("intensity {value} at ({x}, {y}) outside [0, 1]")]
    ValueOutOfRange { value: f64, x: u32, y: u32 },
    #[error("grid size {actual} does not match {width}x{height}")]
    DimensionMismatch { width: u32, height: u32, actual: usize },
    #[error("low threshold {low} exceeds high threshold {high}")]
    InvalidThresholds { low: f64, high: f64 },
    #[error("sigma must be positive, got {0}")]
    InvalidSigma(f64),
}

impl BoundaryError {
    pub fn code(&self) -> &'static str {
        match self {
            BoundaryError::ValueOutOfRange { .. } => "ValueOutOfRange",
            BoundaryError::DimensionMismatch { .. } => "DimensionMismatch",
            BoundaryError::InvalidThresholds { .. } => "InvalidThresholds",
            BoundaryError::InvalidSigma(_) => "InvalidSigma",
        }
    }
}

impl GrayImage {
    pub fn new(width: u32, height: u32, values: Vec<f64>) -> Result<GrayImage, BoundaryError> {
        if values.len() != (width as usize) * (height as usize) {
            return Err(BoundaryError::DimensionMismatch {
                width,
                height,
                actual: values.len(),
            });
        }
        for (i, v) in values.iter().enumerate() {
            if !(0.0..=1.0).contains(v) {
                return Err(BoundaryError::ValueOutOfRange {
                    value: *v,
                    x: i as u32 % width,
                    y: i as u32 / width,
                });
            }
        }
        Ok(GrayImage { width, height, values })
    }

    /// 8-bit grayscale scaled into `[0, 1]`.
    pub fn from_luma8(img: &LumaImage) -> GrayImage {
        let (width, height) = img.dimensions();
        let values = img.pixels().map(|p| p.0[0] as f64 / 255.0).collect();
        GrayImage { width, height, values }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, x: u32, y: u32) -> f64 {
        self.values[(y * self.width + x) as usize]
    }
}

impl EdgeMap {
    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn is_edge(&self, x: u32, y: u32) -> bool {
        self.edges[(y * self.width + x) as usize]
    }

    pub fn edge_count(&self) -> usize {
        self.edges.iter().filter(|e| **e).count()
    }

    pub fn edges(&self) -> &[bool] {
        &self.edges
    }

    /// 0/255 grayscale rendering for PNG export.
    pub fn to_luma8(&self) -> LumaImage {
        let mut out = LumaImage::new(self.width, self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                let v = if self.is_edge(x, y) { 255 } else { 0 };
                out.put_pixel(x, y, image::Luma([v]));
            }
        }
        out
    }

    /// Edge intensities as a `[0, 1]` image, the control-branch input form.
    pub fn to_gray(&self) -> GrayImage {
        GrayImage {
            width: self.width,
            height: self.height,
            values: self.edges.iter().map(|e| if *e { 1.0 } else { 0.0 }).collect(),
        }
    }
}

/// Masks exterior walls and front doors to 1.0, everything else to 0.0.
/// Depends only on those two structural labels.
pub fn boundary_image(plan: &RasterPlan) -> GrayImage {
    let values = plan
        .labels()
        .iter()
        .map(|l| match l {
            SemanticLabel::ExteriorWall | SemanticLabel::FrontDoor => 1.0,
            _ => 0.0,
        })
        .collect();
    GrayImage {
        width: plan.width(),
        height: plan.height(),
        values,
    }
}

/// Replicate-padded sample.
fn sample(values: &[f64], width: i64, height: i64, x: i64, y: i64) -> f64 {
    let cx = x.clamp(0, width - 1);
    let cy = y.clamp(0, height - 1);
    values[(cy * width + cx) as usize]
}

/// Separable Gaussian blur with kernel truncated at three sigma.
fn gaussian_blur(img: &GrayImage, sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let mut kernel = Vec::with_capacity((2 * radius + 1) as usize);
    for i in -radius..=radius {
        kernel.push((-((i * i) as f64) / (2.0 * sigma * sigma)).exp());
    }
    let norm: f64 = kernel.iter().sum();
    for k in &mut kernel {
        *k /= norm;
    }
    let (w, h) = (img.width as i64, img.height as i64);
    let mut horizontal = vec![0.0; (w * h) as usize];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (ki, k) in kernel.iter().enumerate() {
                acc += k * sample(&img.values, w, h, x + ki as i64 - radius, y);
            }
            horizontal[(y * w + x) as usize] = acc;
        }
    }
    let mut out = vec![0.0; (w * h) as usize];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (ki, k) in kernel.iter().enumerate() {
                acc += k * sample(&horizontal, w, h, x, y + ki as i64 - radius);
            }
            out[(y * w + x) as usize] = acc;
        }
    }
    out
}

/// Sobel gradients with replicate padding.
fn sobel(values: &[f64], w: i64, h: i64) -> (Vec<f64>, Vec<f64>) {
    let mut gx = vec![0.0; (w * h) as usize];
    let mut gy = vec![0.0; (w * h) as usize];
    for y in 0..h {
        for x in 0..w {
            let p = |dx: i64, dy: i64| sample(values, w, h, x + dx, y + dy);
            gx[(y * w + x) as usize] = (p(1, -1) + 2.0 * p(1, 0) + p(1, 1))
                - (p(-1, -1) + 2.0 * p(-1, 0) + p(-1, 1));
            gy[(y * w + x) as usize] = (p(-1, 1) + 2.0 * p(0, 1) + p(1, 1))
                - (p(-1, -1) + 2.0 * p(0, -1) + p(1, -1));
        }
    }
    (gx, gy)
}

/// Offset of the neighbor in the positive gradient direction, one of the
/// eight compass directions.
fn gradient_offset(gx: f64, gy: f64) -> (i64, i64) {
    let angle = gy.atan2(gx);
    let sector = (angle / (std::f64::consts::PI / 4.0)).round() as i64;
    match sector.rem_euclid(8) {
        0 => (1, 0),
        1 => (1, 1),
        2 => (0, 1),
        3 => (-1, 1),
        4 => (-1, 0),
        5 => (-1, -1),
        6 => (0, -1),
        _ => (1, -1),
    }
}

/// Canny edge detection on a `[0, 1]` image.
///
/// `low` and `high` are thresholds on the max-normalized gradient magnitude.
/// Suppression keeps a pixel when its magnitude strictly exceeds the
/// neighbor along the gradient and is at least the neighbor against it,
/// which thins symmetric step responses to a single pixel. Border pixels
/// are never reported as edges.
pub fn canny(img: &GrayImage, sigma: f64, low: f64, high: f64) -> Result<EdgeMap, BoundaryError> {
    if !sigma.is_finite() || sigma <= 0.0 {
        return Err(BoundaryError::InvalidSigma(sigma));
    }
    if low > high {
        return Err(BoundaryError::InvalidThresholds { low, high });
    }
    let (w, h) = (img.width as i64, img.height as i64);
    let n = (w * h) as usize;

    let blurred = gaussian_blur(img, sigma);
    let (gx, gy) = sobel(&blurred, w, h);
    let mut magnitude: Vec<f64> = gx
        .iter()
        .zip(gy.iter())
        .map(|(a, b)| a.hypot(*b))
        .collect();
    let max_mag = magnitude.iter().cloned().fold(0.0, f64::max);
    if max_mag == 0.0 {
        return Ok(EdgeMap {
            width: img.width,
            height: img.height,
            edges: vec![false; n],
        });
    }
    for m in &mut magnitude {
        *m /= max_mag;
    }

    // Non-maximum suppression over interior pixels.
    let mut thinned = vec![0.0; n];
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let idx = (y * w + x) as usize;
            let m = magnitude[idx];
            if m == 0.0 {
                continue;
            }
            let (dx, dy) = gradient_offset(gx[idx], gy[idx]);
            let ahead = magnitude[((y + dy) * w + (x + dx)) as usize];
            let behind = magnitude[((y - dy) * w + (x - dx)) as usize];
            if m > ahead && m >= behind {
                thinned[idx] = m;
            }
        }
    }

    // Hysteresis: strong seeds, weak pixels joined over 8-connectivity.
    let mut edges = vec![false; n];
    let mut stack = Vec::new();
    for idx in 0..n {
        if thinned[idx] >= high && !edges[idx] {
            edges[idx] = true;
            stack.push(idx);
            while let Some(i) = stack.pop() {
                let (x, y) = ((i as i64) % w, (i as i64) / w);
                for dy in -1..=1i64 {
                    for dx in -1..=1i64 {
                        let (nx, ny) = (x + dx, y + dy);
                        if nx < 0 || ny < 0 || nx >= w || ny >= h {
                            continue;
                        }
                        let ni = (ny * w + nx) as usize;
                        if !edges[ni] && thinned[ni] >= low {
                            edges[ni] = true;
                            stack.push(ni);
                        }
                    }
                }
            }
        }
    }

    Ok(EdgeMap {
        width: img.width,
        height: img.height,
        edges,
    })
}

/// Default parameters: plan boundaries are high-contrast, so a light blur
/// and low normalized thresholds recover them cleanly.
pub const DEFAULT_SIGMA: f64 = 1.0;
pub const DEFAULT_LOW: f64 = 0.1;
pub const DEFAULT_HIGH: f64 = 0.2;
