//! Generative latent alignment for radar presence detection.
//!
//! The crate covers the whole desk-scale pipeline:
//!
//! - [`rf_synth`]: labeled Range-Angle heatmaps from a simulated FMCW chain
//!   (ADC cube, range/Doppler FFT, MVDR beamforming) or a fast image renderer.
//! - [`frames`]: frame model, normalization, colormaps, resizing, persistence.
//! - [`vae`]: convolutional VAE with hand-written forward/backward passes.
//! - [`anchors`]: frozen text anchors, projection head and alignment loss.
//! - [`gradcam`]: latent Grad-CAM on the encoder's third block, perturbation
//!   averaging, top-quantile masks and localization metrics.
//! - [`trainer`]: combined objective, Adam, early stopping, checkpoints.
//! - [`reports`]: panel figures, prompt ablation, and the `gla` CLI commands.

pub mod anchors;
pub mod error;
pub mod frames;
pub mod gradcam;
pub mod reports;
pub mod rf_synth;
pub mod seed;
pub mod trainer;
pub mod util;
pub mod vae;

pub use error::{GlaError, Result};
