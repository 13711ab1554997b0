//! Reprogramming a frozen vision-language model for deepfake detection.
//!
//! The pipeline learns a single additive border perturbation (the *visual
//! prompt*) on top of a frozen image/text/face encoder triple. Class text
//! prompts optionally carry a projected face-identity embedding, so the fake
//! class can be described by a per-sample "pseudo-word". Everything trainable
//! lives in the prompt; the encoders are never touched.
//!
//! Modules follow the pipeline stages:
//!
//! - [`encoders`] — frozen-encoder contract plus the deterministic toy backend
//! - [`transform`] — border mask, resize, prompt merge, parameter accounting
//! - [`face2text`] — text templates, face projection, `[ID]` substitution
//! - [`objective`] — class probabilities, cross-entropy loss, prompt gradient
//! - [`trainer`] — the optimization loop (adamw-like or plain gradient)
//! - [`data`] — manifests, face cropping, video-level splits, synthetic data
//! - [`eval`] — AUC metrics, evaluation protocol, sweeps, feature dumps
//! - [`checkpoint`] — the binary prompt checkpoint format

pub mod checkpoint;
pub mod data;
pub mod encoders;
pub mod error;
pub mod eval;
pub mod face2text;
pub mod objective;
pub mod seed;
pub mod trainer;
pub mod transform;

pub use error::{Error, Result};

use ndarray::{Array1, Array2, Array3};

/// H×W×3 image in model-input space, values typically in `[0, 1]`.
pub type ImageTensor = Array3<f64>;
/// Feature vector produced by the image or text encoder (dim `N`).
pub type FeatureVec = Array1<f64>;
/// Face-identity embedding (dim `D_face`).
pub type FaceVec = Array1<f64>;
/// Binary border mask, entries exactly 0.0 or 1.0.
pub type BorderMask = Array2<f64>;
