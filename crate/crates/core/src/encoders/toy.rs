//! Deterministic seeded toy backend.
//!
//! Small smooth multilayer maps (affine + tanh) stand in for the pretrained
//! encoders so the whole pipeline can be verified at desk scale. The image
//! encoder adds a random linear skip path, which keeps the map responsive to
//! border perturbations even when hidden units saturate. Outputs are left
//! un-normalized; cosine similarity downstream absorbs the scale.
//!
//! Same seed ⇒ bit-identical parameters: all weights are drawn from one
//! ChaCha stream in a fixed construction order.

use std::sync::Arc;

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::face2text::TokenEmbeddingSequence;
use crate::seed::hex_digest;
use crate::{FaceVec, FeatureVec, ImageTensor};

use super::{BackendConfig, FaceEncoder, FrozenEncoders, ImageEncoder, TextEncoder};

const IMAGE_HIDDEN: usize = 64;
const FACE_HIDDEN: usize = 48;
const TEXT_HIDDEN: usize = 48;
const MAX_SEQUENCE_LEN: usize = 16;
const BIAS_STD: f64 = 0.1;
// The image branch keeps a strong linear path beside the tanh stack so input
// gradients stay informative even when hidden units saturate.
const SKIP_GAIN: f64 = 3.0;

/// Parameters of the toy backend.
#[derive(Debug, Clone)]
pub struct ToyBackendSpec {
    pub seed: u64,
    pub embed_dim: usize,
    pub face_dim: usize,
    pub token_embed_dim: usize,
    pub hidden_layers: usize,
    pub input_size: (usize, usize),
    pub temperature: f64,
}

impl Default for ToyBackendSpec {
    fn default() -> Self {
        Self::from_config(&BackendConfig::default())
    }
}

impl ToyBackendSpec {
    pub fn from_config(cfg: &BackendConfig) -> Self {
        Self {
            seed: cfg.seed,
            embed_dim: cfg.embed_dim,
            face_dim: cfg.face_dim,
            token_embed_dim: cfg.token_embed_dim,
            hidden_layers: cfg.hidden_layers,
            input_size: cfg.input_size,
            temperature: cfg.temperature,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.face_dim == 0 || self.token_embed_dim == 0 {
            return Err(Error::Config("encoder dimensions must be positive".into()));
        }
        if self.hidden_layers == 0 {
            return Err(Error::Config("hidden_layers must be positive".into()));
        }
        let (h, w) = self.input_size;
        if h < 8 || w < 8 {
            return Err(Error::Config(format!("input size {h}x{w} below minimum 8x8")));
        }
        if self.temperature <= 0.0 {
            return Err(Error::Config("temperature must be positive".into()));
        }
        Ok(())
    }
}

/// Builds the deterministic toy encoder triple.
pub fn build_toy_backend(spec: &ToyBackendSpec) -> Result<FrozenEncoders> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (h, w) = spec.input_size;
    let image_in = h * w * 3;

    let image = ToyImageEncoder {
        net: Mlp::init(&mut rng, image_in, IMAGE_HIDDEN, spec.hidden_layers, spec.embed_dim),
        skip: sample_matrix(&mut rng, spec.embed_dim, image_in, SKIP_GAIN / (image_in as f64).sqrt()),
        input_size: spec.input_size,
    };
    let text = ToyTextEncoder {
        positions: sample_matrix(&mut rng, MAX_SEQUENCE_LEN, spec.token_embed_dim, 1.0),
        net: Mlp::init(&mut rng, spec.token_embed_dim, TEXT_HIDDEN, spec.hidden_layers, spec.embed_dim),
        token_dim: spec.token_embed_dim,
    };
    let face = ToyFaceEncoder {
        net: Mlp::init(&mut rng, image_in, FACE_HIDDEN, spec.hidden_layers, spec.face_dim),
        input_size: spec.input_size,
    };

    Ok(FrozenEncoders {
        image: Arc::new(image),
        text: Arc::new(text),
        face: Arc::new(face),
        embed_dim: spec.embed_dim,
        face_dim: spec.face_dim,
        token_embed_dim: spec.token_embed_dim,
        input_size: spec.input_size,
        temperature: spec.temperature,
    })
}

fn sample_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Array2<f64> {
    let dist = Normal::new(0.0, std).expect("valid std");
    let data: Vec<f64> = (0..rows * cols).map(|_| dist.sample(rng)).collect();
    Array2::from_shape_vec((rows, cols), data).expect("shape matches data")
}

fn sample_vector(rng: &mut ChaCha8Rng, len: usize, std: f64) -> Array1<f64> {
    let dist = Normal::new(0.0, std).expect("valid std");
    Array1::from_iter((0..len).map(|_| dist.sample(rng)))
}

fn hash_array(hasher: &mut Sha256, label: &str, data: &[f64]) {
    hasher.update(label.as_bytes());
    hasher.update((data.len() as u64).to_le_bytes());
    for v in data {
        hasher.update(v.to_le_bytes());
    }
}

/// `y = W x + b` layer.
struct Affine {
    weight: Array2<f64>,
    bias: Array1<f64>,
}

impl Affine {
    fn init(rng: &mut ChaCha8Rng, out_dim: usize, in_dim: usize) -> Self {
        Self {
            weight: sample_matrix(rng, out_dim, in_dim, 1.0 / (in_dim as f64).sqrt()),
            bias: sample_vector(rng, out_dim, BIAS_STD),
        }
    }

    fn forward(&self, x: &Array1<f64>) -> Array1<f64> {
        self.weight.dot(x) + &self.bias
    }

    fn hash_into(&self, hasher: &mut Sha256, label: &str) {
        hash_array(hasher, label, self.weight.as_slice().expect("contiguous"));
        hash_array(hasher, label, self.bias.as_slice().expect("contiguous"));
    }
}

/// Tanh MLP: `hidden_layers` tanh blocks followed by a linear head.
struct Mlp {
    hidden: Vec<Affine>,
    out: Affine,
}

impl Mlp {
    fn init(rng: &mut ChaCha8Rng, in_dim: usize, width: usize, layers: usize, out_dim: usize) -> Self {
        let mut hidden = Vec::with_capacity(layers);
        let mut dim = in_dim;
        for _ in 0..layers {
            hidden.push(Affine::init(rng, width, dim));
            dim = width;
        }
        Self { hidden, out: Affine::init(rng, out_dim, dim) }
    }

    fn forward(&self, x: &Array1<f64>) -> Array1<f64> {
        let mut h = x.clone();
        for layer in &self.hidden {
            h = layer.forward(&h).mapv(f64::tanh);
        }
        self.out.forward(&h)
    }

    /// Forward pass keeping post-activation values for the backward pass.
    fn forward_trace(&self, x: &Array1<f64>) -> (Array1<f64>, Vec<Array1<f64>>) {
        let mut activations = Vec::with_capacity(self.hidden.len());
        let mut h = x.clone();
        for layer in &self.hidden {
            h = layer.forward(&h).mapv(f64::tanh);
            activations.push(h.clone());
        }
        (self.out.forward(&h), activations)
    }

    /// Pulls a cotangent on the output back to the input.
    fn input_vjp(&self, activations: &[Array1<f64>], cotangent: &Array1<f64>) -> Array1<f64> {
        let mut g = self.out.weight.t().dot(cotangent);
        for (layer, act) in self.hidden.iter().zip(activations.iter()).rev() {
            // d tanh(z)/dz = 1 − tanh²(z), and act = tanh(z).
            let gated = &g * &act.mapv(|a| 1.0 - a * a);
            g = layer.weight.t().dot(&gated);
        }
        g
    }

    fn hash_into(&self, hasher: &mut Sha256, label: &str) {
        for (i, layer) in self.hidden.iter().enumerate() {
            layer.hash_into(hasher, &format!("{label}.hidden{i}"));
        }
        self.out.hash_into(hasher, &format!("{label}.out"));
    }
}

fn flatten(x: &ImageTensor) -> Array1<f64> {
    Array1::from_iter(x.iter().cloned())
}

struct ToyImageEncoder {
    net: Mlp,
    skip: Array2<f64>,
    input_size: (usize, usize),
}

impl ToyImageEncoder {
    /// Front end: center pixels at 0.5 and apply a 2×2 box blur
    /// (antialiasing). Linear, so the pullback is its transpose.
    fn preprocess(&self, x: &ImageTensor) -> Array1<f64> {
        let (h, w) = self.input_size;
        let mut out = Array1::zeros(h * w * 3);
        let mut idx = 0;
        for r in 0..h {
            let r1 = (r + 1).min(h - 1);
            for c in 0..w {
                let c1 = (c + 1).min(w - 1);
                for ch in 0..3 {
                    let sum = x[[r, c, ch]] + x[[r, c1, ch]] + x[[r1, c, ch]] + x[[r1, c1, ch]];
                    out[idx] = sum / 4.0 - 0.5;
                    idx += 1;
                }
            }
        }
        out
    }

    fn preprocess_vjp(&self, grad: &Array1<f64>) -> ImageTensor {
        let (h, w) = self.input_size;
        let mut out = ImageTensor::zeros((h, w, 3));
        let mut idx = 0;
        for r in 0..h {
            let r1 = (r + 1).min(h - 1);
            for c in 0..w {
                let c1 = (c + 1).min(w - 1);
                for ch in 0..3 {
                    let g = grad[idx] / 4.0;
                    out[[r, c, ch]] += g;
                    out[[r, c1, ch]] += g;
                    out[[r1, c, ch]] += g;
                    out[[r1, c1, ch]] += g;
                    idx += 1;
                }
            }
        }
        out
    }
}

impl ImageEncoder for ToyImageEncoder {
    fn encode(&self, x: &ImageTensor) -> Result<FeatureVec> {
        let flat = self.preprocess(x);
        Ok(self.net.forward(&flat) + self.skip.dot(&flat))
    }

    fn encode_with_pullback<'a>(
        &'a self,
        x: &ImageTensor,
    ) -> Result<(FeatureVec, super::ImagePullback<'a>)> {
        let flat = self.preprocess(x);
        let (mlp_out, activations) = self.net.forward_trace(&flat);
        let f = mlp_out + self.skip.dot(&flat);
        let pullback = move |cotangent: &FeatureVec| -> Result<ImageTensor> {
            let grad_flat =
                self.net.input_vjp(&activations, cotangent) + self.skip.t().dot(cotangent);
            Ok(self.preprocess_vjp(&grad_flat))
        };
        Ok((f, Box::new(pullback)))
    }

    fn weights_digest(&self) -> String {
        let mut hasher = Sha256::new();
        self.net.hash_into(&mut hasher, "image");
        hash_array(&mut hasher, "image.skip", self.skip.as_slice().expect("contiguous"));
        hex_digest(&hasher.finalize())
    }
}

struct ToyTextEncoder {
    /// Per-position modulation vectors; make the pooled sum order-sensitive.
    positions: Array2<f64>,
    net: Mlp,
    token_dim: usize,
}

impl TextEncoder for ToyTextEncoder {
    fn encode(&self, seq: &TokenEmbeddingSequence) -> Result<FeatureVec> {
        if seq.is_empty() {
            return Err(Error::Input("empty token sequence".into()));
        }
        if seq.len() > MAX_SEQUENCE_LEN {
            return Err(Error::Input(format!(
                "sequence length {} exceeds toy limit {MAX_SEQUENCE_LEN}",
                seq.len()
            )));
        }
        let mut pooled = Array1::zeros(self.token_dim);
        for (t, emb) in seq.embeddings().iter().enumerate() {
            if emb.len() != self.token_dim {
                return Err(Error::Input(format!(
                    "token embedding dim {} != backend dim {}",
                    emb.len(),
                    self.token_dim
                )));
            }
            pooled += &(emb * &self.positions.row(t));
        }
        Ok(self.net.forward(&pooled))
    }

    fn max_sequence_len(&self) -> usize {
        MAX_SEQUENCE_LEN
    }

    fn weights_digest(&self) -> String {
        let mut hasher = Sha256::new();
        hash_array(&mut hasher, "text.positions", self.positions.as_slice().expect("contiguous"));
        self.net.hash_into(&mut hasher, "text");
        hex_digest(&hasher.finalize())
    }
}

struct ToyFaceEncoder {
    net: Mlp,
    input_size: (usize, usize),
}

/// Fixed local-contrast energy front end: squared Laplacian response.
/// Identity-style texture descriptors respond to local contrast energy, not
/// to smooth shading or to the sign of an edge. Out-of-bounds neighbors clamp
/// to the center pixel, so flat regions map to zero. Smooth (polynomial).
fn contrast_energy(x: &ImageTensor) -> ImageTensor {
    let (h, w, _) = x.dim();
    let mut out = ImageTensor::zeros((h, w, 3));
    for r in 0..h {
        for c in 0..w {
            for ch in 0..3 {
                let center = x[[r, c, ch]];
                let up = if r > 0 { x[[r - 1, c, ch]] } else { center };
                let down = if r + 1 < h { x[[r + 1, c, ch]] } else { center };
                let left = if c > 0 { x[[r, c - 1, ch]] } else { center };
                let right = if c + 1 < w { x[[r, c + 1, ch]] } else { center };
                let lap = 4.0 * center - up - down - left - right;
                out[[r, c, ch]] = lap * lap;
            }
        }
    }
    out
}

impl FaceEncoder for ToyFaceEncoder {
    fn encode(&self, x: &ImageTensor) -> Result<FaceVec> {
        let (h, w) = self.input_size;
        if x.dim() != (h, w, 3) {
            return Err(Error::Input(format!(
                "face encoder expects {h}x{w}x3 input, got {:?}",
                x.dim()
            )));
        }
        Ok(self.net.forward(&flatten(&contrast_energy(x))))
    }

    fn weights_digest(&self) -> String {
        let mut hasher = Sha256::new();
        self.net.hash_into(&mut hasher, "face");
        hex_digest(&hasher.finalize())
    }
}
