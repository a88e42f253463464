//! Auto-encoder based semi-supervised domain adaptation with a simultaneous
//! learning scheme.
//!
//! Two auto-encoders (source and target) are trained on a single computation
//! graph, with a class-wise centroid-distance loss tying their bottleneck
//! feature spaces together. A classifier is then trained on frozen source
//! features and fine-tuned on the handful of labeled target samples.
//!
//! Everything runs on a small reverse-mode tape over dense f64 tensors; runs
//! are bitwise deterministic for a fixed seed.

pub mod error;
pub mod losses;
pub mod tensor;

pub use error::{Error, Result};
