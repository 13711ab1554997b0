//! Frozen-encoder contract and backend registry.
//!
//! A backend supplies three encoders (image, text, face) plus the softmax
//! temperature. Backends are frozen: nothing in the pipeline ever updates
//! their parameters, and `weights_digest` recomputes a content hash of the
//! parameters on every call so frozenness is testable.
//!
//! The image encoder must be differentiable with respect to its input; the
//! prompt gradient is pulled back through [`ImageEncoder::encode_vjp`]. Real
//! pretrained backends (e.g. a CLIP adapter) plug in by implementing the same
//! three traits and registering a factory under a new key.

pub mod toy;

use std::collections::BTreeMap;
use std::sync::Arc;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::face2text::TokenEmbeddingSequence;
use crate::seed::hex_digest;
use crate::{FaceVec, FeatureVec, ImageTensor};

/// Pulls a cotangent `dL/df` on the feature back to `dL/dx` on the image.
pub type ImagePullback<'a> = Box<dyn FnOnce(&FeatureVec) -> Result<ImageTensor> + 'a>;

/// Image branch `E_I`. Consumes model-input-sized images.
pub trait ImageEncoder: Send + Sync {
    /// Forward pass: image → feature vector of dim `N`.
    fn encode(&self, x: &ImageTensor) -> Result<FeatureVec>;

    /// Forward pass that also returns a vector-Jacobian pullback.
    ///
    /// This is the only gradient the pipeline ever needs; a real backend can
    /// implement it with its framework's autograd.
    fn encode_with_pullback<'a>(&'a self, x: &ImageTensor) -> Result<(FeatureVec, ImagePullback<'a>)>;

    /// Content hash of the encoder parameters, recomputed on each call.
    fn weights_digest(&self) -> String;
}

/// Text branch `E_T`. Consumes token-embedding sequences.
pub trait TextEncoder: Send + Sync {
    fn encode(&self, seq: &TokenEmbeddingSequence) -> Result<FeatureVec>;

    /// Longest sequence the backend accepts.
    fn max_sequence_len(&self) -> usize;

    fn weights_digest(&self) -> String;
}

/// Face-identity branch `F_id`. Consumes the raw (untransformed) image.
pub trait FaceEncoder: Send + Sync {
    fn encode(&self, x: &ImageTensor) -> Result<FaceVec>;

    fn weights_digest(&self) -> String;
}

/// The frozen encoder triple plus the dimensions the pipeline needs.
#[derive(Clone)]
pub struct FrozenEncoders {
    pub image: Arc<dyn ImageEncoder>,
    pub text: Arc<dyn TextEncoder>,
    pub face: Arc<dyn FaceEncoder>,
    /// Feature dimension `N` shared by image and text branches.
    pub embed_dim: usize,
    /// Face embedding dimension `D_face`.
    pub face_dim: usize,
    /// Token embedding dimension `D_tok`.
    pub token_embed_dim: usize,
    /// Model input size `(H, W)`; prompt geometry must match.
    pub input_size: (usize, usize),
    /// Softmax temperature τ.
    pub temperature: f64,
}

impl std::fmt::Debug for FrozenEncoders {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FrozenEncoders")
            .field("embed_dim", &self.embed_dim)
            .field("face_dim", &self.face_dim)
            .field("token_embed_dim", &self.token_embed_dim)
            .field("input_size", &self.input_size)
            .field("temperature", &self.temperature)
            .finish_non_exhaustive()
    }
}

impl FrozenEncoders {
    /// Combined content hash over all three encoders' parameters.
    pub fn weights_digest(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.image.weights_digest().as_bytes());
        hasher.update(self.text.weights_digest().as_bytes());
        hasher.update(self.face.weights_digest().as_bytes());
        hex_digest(&hasher.finalize())
    }

    fn check_input(&self, x: &ImageTensor, what: &str) -> Result<()> {
        let (h, w) = self.input_size;
        if x.dim() != (h, w, 3) {
            return Err(Error::Input(format!(
                "{what} expects {h}x{w}x3 input, got {:?}",
                x.dim()
            )));
        }
        Ok(())
    }
}

/// `f = E_I(x)` with shape validation.
pub fn encode_image(enc: &FrozenEncoders, x: &ImageTensor) -> Result<FeatureVec> {
    enc.check_input(x, "image encoder")?;
    enc.image.encode(x)
}

/// `w = E_T(seq)` with length validation.
pub fn encode_text(enc: &FrozenEncoders, seq: &TokenEmbeddingSequence) -> Result<FeatureVec> {
    if seq.is_empty() {
        return Err(Error::Input("empty token sequence".into()));
    }
    let max = enc.text.max_sequence_len();
    if seq.len() > max {
        return Err(Error::Input(format!(
            "sequence length {} exceeds backend limit {max}",
            seq.len()
        )));
    }
    enc.text.encode(seq)
}

/// Face-identity embedding of a raw image.
pub fn encode_face(enc: &FrozenEncoders, x: &ImageTensor) -> Result<FaceVec> {
    enc.check_input(x, "face encoder")?;
    enc.face.encode(x)
}

/// Configuration handed to backend factories.
///
/// The toy backend consumes every field; real-backend adapters read what
/// applies to them (typically `options` for weight paths) and report their own
/// fixed dimensions in the returned [`FrozenEncoders`].
#[derive(Debug, Clone)]
pub struct BackendConfig {
    pub seed: u64,
    pub embed_dim: usize,
    pub face_dim: usize,
    pub token_embed_dim: usize,
    pub hidden_layers: usize,
    pub input_size: (usize, usize),
    pub temperature: f64,
    /// Adapter-specific settings (e.g. a weights path).
    pub options: BTreeMap<String, String>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            embed_dim: 32,
            face_dim: 16,
            token_embed_dim: 24,
            hidden_layers: 2,
            input_size: (32, 32),
            // Frozen CLIP's learned logit scale of 100, expressed as temperature.
            temperature: 0.01,
            options: BTreeMap::new(),
        }
    }
}

pub type BackendFactory = Arc<dyn Fn(&BackendConfig) -> Result<FrozenEncoders> + Send + Sync>;

/// Named registry of backend factories. `"toy"` is built in.
pub struct BackendRegistry {
    factories: BTreeMap<String, BackendFactory>,
}

impl BackendRegistry {
    pub fn with_builtins() -> Self {
        let mut reg = Self { factories: BTreeMap::new() };
        reg.register("toy", Arc::new(|cfg: &BackendConfig| {
            toy::build_toy_backend(&toy::ToyBackendSpec::from_config(cfg))
        }));
        reg
    }

    pub fn register(&mut self, key: &str, factory: BackendFactory) {
        self.factories.insert(key.to_string(), factory);
    }

    pub fn build(&self, key: &str, cfg: &BackendConfig) -> Result<FrozenEncoders> {
        match self.factories.get(key) {
            Some(f) => f(cfg),
            None => Err(Error::Config(format!(
                "unknown backend '{key}' (registered: {})",
                self.keys().join(", ")
            ))),
        }
    }

    pub fn keys(&self) -> Vec<String> {
        self.factories.keys().cloned().collect()
    }
}

impl Default for BackendRegistry {
    fn default() -> Self {
        Self::with_builtins()
    }
}
