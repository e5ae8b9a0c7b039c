//! Learnable HSI color space and a compact dual-branch white-balance network.
//!
//! The crate is built from a handful of layers:
//!
//! * [`numerics`] - `f64` tensors and a reverse-mode tape,
//! * [`lhsi`] - the learnable cylindrical color space and its monotone maps,
//! * [`refspaces`] - fixed HSV / HSI / CIELAB / HVI transforms,
//! * [`metrics`] - MSE, angular error and CIEDE2000 with quartile summaries,
//! * [`dclan`] - the state-space + cross-attention encoder/decoder,
//! * [`train`] - losses, Adam, schedules, synthetic casts and checkpoints,
//! * [`dataio`] - PNG / PPM / PFM files, crops and resizing,
//! * [`exec`] - sequential or rayon-backed batch execution,
//! * [`gradsuite`] - finite-difference checks of every differentiable part.

pub mod dataio;
pub mod dclan;
pub mod error;
pub mod exec;
pub mod gradsuite;
pub mod image;
pub mod lhsi;
pub mod metrics;
pub mod numerics;
pub mod refspaces;
pub mod train;

pub use error::{Error, Result};
pub use image::PlanarImage;
