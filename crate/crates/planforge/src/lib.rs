//! planforge turns raster residential floor plans into knowledge graphs and a
//! constrained prompt grammar (and back), checks layouts against design rules,
//! computes image-quality metrics, and ships a small, fully verifiable
//! diffusion/LoRA/ControlNet laboratory.
//!
//! The crate is organized around the pipeline stages:
//!
//! - [`raster`]: decode 4-channel plan images into semantic label grids,
//!   recolor and upsample them.
//! - [`graph`]: extract room knowledge graphs (nodes + bbox-adjacency edges).
//! - [`prompt`]: emit/parse the constrained natural-language grammar and run
//!   design-rule compliance checks.
//! - [`boundary`]: boundary conditioning images and Canny edge detection.
//! - [`metrics`]: PSNR, SSIM, Fréchet distance and LPIPS, plus batch reports.
//! - [`featfile`]: matrix and layer-feature file formats used by `metrics`.
//! - [`difflab`]: forward/reverse diffusion, LoRA adapters, zero-conv control
//!   branch, and a small trainable denoiser with exact gradients.
//! - [`synth`]: deterministic synthetic plan/graph generators for fixtures.
//! - [`cli`]: the `planforge` command-line entry point.

pub mod boundary;
pub mod cli;
pub mod difflab;
pub mod featfile;
pub mod graph;
pub mod metrics;
pub mod prompt;
pub mod raster;
pub mod synth;
