//! Face2Text prompts: class templates, face projection, `[ID]` substitution.
//!
//! The candidate templates are fixed verbatim:
//!
//! | id | template                        |
//! |----|---------------------------------|
//! | T0 | "A real photo of person"        |
//! | T1 | "A fake photo of person"        |
//! | T2 | "A real photo of [ID] person"   |
//! | T3 | "A fake photo of [ID] person"   |
//!
//! A template config pairs one real-class and one fake-class template (or the
//! "RAND" control, two frozen random embedding sequences). The `[ID]`
//! placeholder is substituted at the token-embedding level with the projected
//! face embedding `S* = f_map(F_id(X))`, so templates carrying it produce
//! per-sample dynamic text features.

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use crate::encoders::{encode_face, encode_text, FrozenEncoders};
use crate::error::{Error, Result};
use crate::seed::{derive_seed, hex_digest};
use crate::transform::resize_bilinear;
use crate::{FaceVec, FeatureVec, ImageTensor};

pub const TEMPLATE_T0: &str = "A real photo of person";
pub const TEMPLATE_T1: &str = "A fake photo of person";
pub const TEMPLATE_T2: &str = "A real photo of [ID] person";
pub const TEMPLATE_T3: &str = "A fake photo of [ID] person";

/// The `[ID]` placeholder token; never looked up in the vocabulary.
pub const ID_TOKEN: &str = "[ID]";

/// One of the four candidate templates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TemplateId {
    T0,
    T1,
    T2,
    T3,
}

impl TemplateId {
    pub fn text(self) -> &'static str {
        match self {
            TemplateId::T0 => TEMPLATE_T0,
            TemplateId::T1 => TEMPLATE_T1,
            TemplateId::T2 => TEMPLATE_T2,
            TemplateId::T3 => TEMPLATE_T3,
        }
    }

    /// Whether the template carries the `[ID]` placeholder.
    pub fn has_id_slot(self) -> bool {
        matches!(self, TemplateId::T2 | TemplateId::T3)
    }
}

/// A pair of class templates, or the random-embedding control.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TemplateConfig {
    /// `real ∈ {T0, T2}`, `fake ∈ {T1, T3}`.
    Pair { real: TemplateId, fake: TemplateId },
    /// Two frozen random embedding sequences, same length as T0/T1.
    Rand,
}

impl TemplateConfig {
    /// Parses one of `"T0T1" | "T2T1" | "T2T3" | "T0T3" | "RAND"`.
    pub fn from_id(id: &str) -> Result<Self> {
        match id {
            "T0T1" => Ok(Self::Pair { real: TemplateId::T0, fake: TemplateId::T1 }),
            "T2T1" => Ok(Self::Pair { real: TemplateId::T2, fake: TemplateId::T1 }),
            "T2T3" => Ok(Self::Pair { real: TemplateId::T2, fake: TemplateId::T3 }),
            "T0T3" => Ok(Self::Pair { real: TemplateId::T0, fake: TemplateId::T3 }),
            "RAND" => Ok(Self::Rand),
            other => Err(Error::Config(format!(
                "unknown template config '{other}' (expected T0T1, T2T1, T2T3, T0T3 or RAND)"
            ))),
        }
    }

    pub fn id(&self) -> &'static str {
        match self {
            Self::Pair { real: TemplateId::T0, fake: TemplateId::T1 } => "T0T1",
            Self::Pair { real: TemplateId::T2, fake: TemplateId::T1 } => "T2T1",
            Self::Pair { real: TemplateId::T2, fake: TemplateId::T3 } => "T2T3",
            Self::Pair { real: TemplateId::T0, fake: TemplateId::T3 } => "T0T3",
            Self::Pair { .. } => unreachable!("constructors only build the four valid pairs"),
            Self::Rand => "RAND",
        }
    }

    /// Stable numeric code used by the checkpoint header.
    pub fn code(&self) -> u8 {
        match self.id() {
            "T0T1" => 0,
            "T2T1" => 1,
            "T2T3" => 2,
            "T0T3" => 3,
            _ => 4,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        let id = match code {
            0 => "T0T1",
            1 => "T2T1",
            2 => "T2T3",
            3 => "T0T3",
            4 => "RAND",
            other => {
                return Err(Error::Config(format!("unknown template config code {other}")))
            }
        };
        Self::from_id(id)
    }

    pub fn all_ids() -> [&'static str; 5] {
        ["T0T1", "T2T1", "T2T3", "T0T3", "RAND"]
    }
}

/// A sequence of token embeddings with an optional `[ID]` slot index.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenEmbeddingSequence {
    embeddings: Vec<Array1<f64>>,
    id_slot: Option<usize>,
}

impl TokenEmbeddingSequence {
    pub fn new(embeddings: Vec<Array1<f64>>, id_slot: Option<usize>) -> Result<Self> {
        if let Some(slot) = id_slot {
            if slot >= embeddings.len() {
                return Err(Error::Input(format!(
                    "id_slot {slot} out of range for sequence of length {}",
                    embeddings.len()
                )));
            }
        }
        Ok(Self { embeddings, id_slot })
    }

    pub fn embeddings(&self) -> &[Array1<f64>] {
        &self.embeddings
    }

    pub fn id_slot(&self) -> Option<usize> {
        self.id_slot
    }

    pub fn len(&self) -> usize {
        self.embeddings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.is_empty()
    }
}

/// Seeded embedding table over the template words.
///
/// The toy stand-in for a real tokenizer + embedding layer. `[ID]` is reserved
/// and never looked up; its slot holds zeros until substitution.
#[derive(Debug, Clone)]
pub struct Vocab {
    words: Vec<(String, Array1<f64>)>,
    dim: usize,
    seed: u64,
}

const TEMPLATE_WORDS: [&str; 6] = ["a", "real", "fake", "photo", "of", "person"];

impl Vocab {
    /// Builds the toy vocabulary covering all template words.
    pub fn toy(seed: u64, dim: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "vocab"));
        let dist = Normal::new(0.0, 1.0).expect("valid std");
        let words = TEMPLATE_WORDS
            .iter()
            .map(|w| {
                let emb = Array1::from_iter((0..dim).map(|_| dist.sample(&mut rng)));
                (w.to_string(), emb)
            })
            .collect();
        Self { words, dim, seed }
    }

    /// Test-only constructor with explicit entries.
    pub fn from_entries(entries: Vec<(String, Array1<f64>)>, dim: usize, seed: u64) -> Self {
        Self { words: entries, dim, seed }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Case-insensitive lookup.
    pub fn lookup(&self, word: &str) -> Result<&Array1<f64>> {
        let lower = word.to_lowercase();
        self.words
            .iter()
            .find(|(w, _)| *w == lower)
            .map(|(_, e)| e)
            .ok_or_else(|| Error::Config(format!("word '{word}' not in vocabulary")))
    }

    /// Tokenizes a template into an embedding sequence, recording the `[ID]`
    /// slot if present. The slot holds a zero vector until substitution.
    pub fn embed_template(&self, template: &str) -> Result<TokenEmbeddingSequence> {
        let mut embeddings = Vec::new();
        let mut id_slot = None;
        for (i, tok) in template.split_whitespace().enumerate() {
            if tok == ID_TOKEN {
                if id_slot.is_some() {
                    return Err(Error::Config(format!(
                        "template '{template}' has multiple {ID_TOKEN} placeholders"
                    )));
                }
                id_slot = Some(i);
                embeddings.push(Array1::zeros(self.dim));
            } else {
                embeddings.push(self.lookup(tok)?.clone());
            }
        }
        TokenEmbeddingSequence::new(embeddings, id_slot)
    }

    /// Frozen random sequence for the "RAND" control; `class_tag` picks the
    /// real or fake stream. Same vocab seed ⇒ same sequences, always.
    pub fn rand_sequence(&self, class_tag: &str, len: usize) -> TokenEmbeddingSequence {
        let mut rng =
            ChaCha8Rng::seed_from_u64(derive_seed(self.seed, &format!("rand-text.{class_tag}")));
        let dist = Normal::new(0.0, 1.0).expect("valid std");
        let embeddings = (0..len)
            .map(|_| Array1::from_iter((0..self.dim).map(|_| dist.sample(&mut rng))))
            .collect();
        TokenEmbeddingSequence { embeddings, id_slot: None }
    }
}

/// Builds the (real, fake) embedding sequences for a template config.
pub fn build_template_sequences(
    cfg: &TemplateConfig,
    vocab: &Vocab,
) -> Result<(TokenEmbeddingSequence, TokenEmbeddingSequence)> {
    match cfg {
        TemplateConfig::Pair { real, fake } => Ok((
            vocab.embed_template(real.text())?,
            vocab.embed_template(fake.text())?,
        )),
        TemplateConfig::Rand => {
            let len = TEMPLATE_T0.split_whitespace().count();
            Ok((
                vocab.rand_sequence("real", len),
                vocab.rand_sequence("fake", len),
            ))
        }
    }
}

/// The frozen random projection `f_map` aligning `D_face` to `D_tok`.
#[derive(Debug, Clone, PartialEq)]
pub enum FaceProjection {
    /// Dimensions already aligned; passthrough.
    Identity { dim: usize },
    /// Fixed Gaussian matrix `D_tok × D_face`, entries ~ N(0, 1/D_tok).
    Matrix(Array2<f64>),
}

/// Initializes `f_map`. Identity when the dimensions already align, otherwise
/// a seeded Gaussian matrix with std `1/D_tok`, frozen thereafter.
pub fn init_projection(face_dim: usize, token_dim: usize, seed: u64) -> Result<FaceProjection> {
    if face_dim == 0 || token_dim == 0 {
        return Err(Error::Config("projection dimensions must be positive".into()));
    }
    if face_dim == token_dim {
        return Ok(FaceProjection::Identity { dim: face_dim });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "projection"));
    let dist = Normal::new(0.0, 1.0 / token_dim as f64).expect("valid std");
    let data: Vec<f64> = (0..token_dim * face_dim).map(|_| dist.sample(&mut rng)).collect();
    let matrix = Array2::from_shape_vec((token_dim, face_dim), data).expect("shape matches data");
    Ok(FaceProjection::Matrix(matrix))
}

impl FaceProjection {
    pub fn face_dim(&self) -> usize {
        match self {
            Self::Identity { dim } => *dim,
            Self::Matrix(m) => m.ncols(),
        }
    }

    pub fn token_dim(&self) -> usize {
        match self {
            Self::Identity { dim } => *dim,
            Self::Matrix(m) => m.nrows(),
        }
    }

    /// Content hash, for the frozenness check.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        match self {
            Self::Identity { dim } => {
                hasher.update(b"identity");
                hasher.update((*dim as u64).to_le_bytes());
            }
            Self::Matrix(m) => {
                hasher.update(b"matrix");
                hasher.update((m.nrows() as u64).to_le_bytes());
                hasher.update((m.ncols() as u64).to_le_bytes());
                for v in m.iter() {
                    hasher.update(v.to_le_bytes());
                }
            }
        }
        hex_digest(&hasher.finalize())
    }
}

/// `S* = f_map(e)`: projects a face embedding into token-embedding space.
pub fn project_face(proj: &FaceProjection, e: &FaceVec) -> Result<Array1<f64>> {
    if e.len() != proj.face_dim() {
        return Err(Error::Input(format!(
            "face embedding dim {} != projection input dim {}",
            e.len(),
            proj.face_dim()
        )));
    }
    match proj {
        FaceProjection::Identity { .. } => Ok(e.clone()),
        FaceProjection::Matrix(m) => Ok(m.dot(e)),
    }
}

/// Replaces the `[ID]` slot embedding with `s_star`; everything else unchanged.
pub fn substitute_id(
    seq: &TokenEmbeddingSequence,
    s_star: &Array1<f64>,
) -> Result<TokenEmbeddingSequence> {
    let slot = seq
        .id_slot
        .ok_or_else(|| Error::Contract("sequence has no [ID] slot to substitute".into()))?;
    let mut embeddings = seq.embeddings.clone();
    if s_star.len() != embeddings[slot].len() {
        return Err(Error::Input(format!(
            "substituted embedding dim {} != token dim {}",
            s_star.len(),
            embeddings[slot].len()
        )));
    }
    embeddings[slot] = s_star.clone();
    Ok(TokenEmbeddingSequence { embeddings, id_slot: seq.id_slot })
}

/// Resizes a raw image to the face/image input size when needed.
fn to_backend_input(enc: &FrozenEncoders, x: &ImageTensor) -> ImageTensor {
    let (h, w) = enc.input_size;
    if x.dim() == (h, w, 3) {
        x.clone()
    } else {
        resize_bilinear(x, h, w)
    }
}

/// Computes `(w_real, w_fake)` for one image.
///
/// Templates carrying `[ID]` get the projected face embedding of the raw image
/// substituted before encoding, so their features are per-sample dynamic;
/// templates without it are image-independent.
pub fn class_text_features(
    enc: &FrozenEncoders,
    cfg: &TemplateConfig,
    proj: &FaceProjection,
    vocab: &Vocab,
    x: &ImageTensor,
) -> Result<(FeatureVec, FeatureVec)> {
    let (real_seq, fake_seq) = build_template_sequences(cfg, vocab)?;
    let mut features = Vec::with_capacity(2);
    for seq in [&real_seq, &fake_seq] {
        let w = if seq.id_slot().is_some() {
            let face = encode_face(enc, &to_backend_input(enc, x))?;
            let s_star = project_face(proj, &face)?;
            encode_text(enc, &substitute_id(seq, &s_star)?)?
        } else {
            encode_text(enc, seq)?
        };
        features.push(w);
    }
    let w_fake = features.pop().expect("two features");
    let w_real = features.pop().expect("two features");
    Ok((w_real, w_fake))
}

/// Precomputed text features for a fixed `(cfg, proj, vocab)` triple.
///
/// Static (no `[ID]`) sides are encoded once and reused; dynamic sides are
/// recomputed per image. Results are bit-identical to calling
/// [`class_text_features`] every time.
pub struct TextFeatureCache {
    cfg: TemplateConfig,
    real_seq: TokenEmbeddingSequence,
    fake_seq: TokenEmbeddingSequence,
    static_real: Option<FeatureVec>,
    static_fake: Option<FeatureVec>,
}

impl TextFeatureCache {
    pub fn new(enc: &FrozenEncoders, cfg: &TemplateConfig, vocab: &Vocab) -> Result<Self> {
        let (real_seq, fake_seq) = build_template_sequences(cfg, vocab)?;
        let static_real = if real_seq.id_slot().is_none() {
            Some(encode_text(enc, &real_seq)?)
        } else {
            None
        };
        let static_fake = if fake_seq.id_slot().is_none() {
            Some(encode_text(enc, &fake_seq)?)
        } else {
            None
        };
        Ok(Self { cfg: *cfg, real_seq, fake_seq, static_real, static_fake })
    }

    pub fn config(&self) -> &TemplateConfig {
        &self.cfg
    }

    pub fn features(
        &self,
        enc: &FrozenEncoders,
        proj: &FaceProjection,
        x: &ImageTensor,
    ) -> Result<(FeatureVec, FeatureVec)> {
        let mut face_cache: Option<Array1<f64>> = None;
        let mut dynamic = |seq: &TokenEmbeddingSequence| -> Result<FeatureVec> {
            let s_star = match &face_cache {
                Some(s) => s.clone(),
                None => {
                    let face = encode_face(enc, &to_backend_input(enc, x))?;
                    let s = project_face(proj, &face)?;
                    face_cache = Some(s.clone());
                    s
                }
            };
            encode_text(enc, &substitute_id(seq, &s_star)?)
        };
        let w_real = match &self.static_real {
            Some(w) => w.clone(),
            None => dynamic(&self.real_seq)?,
        };
        let w_fake = match &self.static_fake {
            Some(w) => w.clone(),
            None => dynamic(&self.fake_seq)?,
        };
        Ok((w_real, w_fake))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::toy::{build_toy_backend, ToyBackendSpec};
    use rand::{Rng, SeedableRng};

    fn toy() -> FrozenEncoders {
        build_toy_backend(&ToyBackendSpec { seed: 7, ..ToyBackendSpec::default() }).unwrap()
    }

    fn random_image(seed: u64) -> ImageTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..32 * 32 * 3).map(|_| rng.random::<f64>()).collect();
        ImageTensor::from_shape_vec((32, 32, 3), data).unwrap()
    }

    #[test]
    fn template_config_ids_round_trip() {
        for id in TemplateConfig::all_ids() {
            let cfg = TemplateConfig::from_id(id).unwrap();
            assert_eq!(cfg.id(), id);
            assert_eq!(TemplateConfig::from_code(cfg.code()).unwrap(), cfg);
        }
        assert!(matches!(TemplateConfig::from_id("T1T0"), Err(Error::Config(_))));
        assert!(matches!(TemplateConfig::from_code(9), Err(Error::Config(_))));
    }

    #[test]
    fn t0t3_slots() {
        let vocab = Vocab::toy(7, 24);
        let cfg = TemplateConfig::from_id("T0T3").unwrap();
        let (real, fake) = build_template_sequences(&cfg, &vocab).unwrap();
        assert_eq!(real.id_slot(), None);
        assert_eq!(fake.id_slot(), Some(4));
        assert_eq!(real.len(), 5);
        assert_eq!(fake.len(), 6);
    }

    #[test]
    fn t0t1_no_slots_t2t3_both() {
        let vocab = Vocab::toy(7, 24);
        let (r, f) =
            build_template_sequences(&TemplateConfig::from_id("T0T1").unwrap(), &vocab).unwrap();
        assert!(r.id_slot().is_none() && f.id_slot().is_none());
        let (r, f) =
            build_template_sequences(&TemplateConfig::from_id("T2T3").unwrap(), &vocab).unwrap();
        assert!(r.id_slot().is_some() && f.id_slot().is_some());
    }

    #[test]
    fn rand_sequences_frozen_and_t0_length() {
        let vocab = Vocab::toy(7, 24);
        let (r1, f1) =
            build_template_sequences(&TemplateConfig::Rand, &vocab).unwrap();
        let (r2, f2) =
            build_template_sequences(&TemplateConfig::Rand, &vocab).unwrap();
        assert_eq!(r1, r2);
        assert_eq!(f1, f2);
        assert_ne!(r1, f1);
        assert_eq!(r1.len(), 5);
        assert!(r1.id_slot().is_none());
    }

    #[test]
    fn projection_identity_when_dims_align() {
        let p = init_projection(512, 512, 3).unwrap();
        assert_eq!(p, FaceProjection::Identity { dim: 512 });
    }

    #[test]
    fn projection_seeded_deterministic() {
        let a = init_projection(512, 768, 3).unwrap();
        let b = init_projection(512, 768, 3).unwrap();
        assert_eq!(a, b);
        let c = init_projection(512, 768, 4).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn projection_entry_std_near_inverse_token_dim() {
        let p = init_projection(512, 768, 3).unwrap();
        let FaceProjection::Matrix(m) = p else { panic!("expected matrix") };
        let n = m.len() as f64;
        let mean = m.iter().sum::<f64>() / n;
        let var = m.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        let target = 1.0 / 768.0;
        assert!(
            (std - target).abs() / target < 0.2,
            "sample std {std} not within 20% of {target}"
        );
    }

    #[test]
    fn project_face_identity_and_linearity() {
        let id = init_projection(16, 16, 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let e = Array1::from_iter((0..16).map(|_| rng.random::<f64>() - 0.5));
        assert_eq!(project_face(&id, &e).unwrap(), e);

        let proj = init_projection(16, 24, 0).unwrap();
        let zero = Array1::zeros(16);
        assert_eq!(project_face(&proj, &zero).unwrap(), Array1::<f64>::zeros(24));
        let twice = project_face(&proj, &(&e * 2.0)).unwrap();
        let one = project_face(&proj, &e).unwrap();
        for (a, b) in twice.iter().zip(one.iter()) {
            assert!((a - 2.0 * b).abs() < 1e-12);
        }
    }

    #[test]
    fn project_face_rejects_dim_mismatch() {
        let proj = init_projection(16, 24, 0).unwrap();
        let e = Array1::zeros(8);
        assert!(matches!(project_face(&proj, &e), Err(Error::Input(_))));
    }

    #[test]
    fn substitute_id_single_slot_semantics() {
        let vocab = Vocab::toy(7, 24);
        let seq = vocab.embed_template(TEMPLATE_T3).unwrap();
        let slot = seq.id_slot().unwrap();

        // Substituting the current content is a no-op.
        let same = substitute_id(&seq, &seq.embeddings()[slot].clone()).unwrap();
        assert_eq!(same, seq);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s_star = Array1::from_iter((0..24).map(|_| rng.random::<f64>()));
        let subst = substitute_id(&seq, &s_star).unwrap();
        let diffs: Vec<usize> = (0..seq.len())
            .filter(|&i| subst.embeddings()[i] != seq.embeddings()[i])
            .collect();
        assert_eq!(diffs, vec![slot]);
        assert_eq!(subst.len(), seq.len());
    }

    #[test]
    fn substitute_id_requires_slot() {
        let vocab = Vocab::toy(7, 24);
        let seq = vocab.embed_template(TEMPLATE_T0).unwrap();
        let s = Array1::zeros(24);
        assert!(matches!(substitute_id(&seq, &s), Err(Error::Contract(_))));
    }

    #[test]
    fn substitution_changes_encoded_text() {
        let enc = toy();
        let vocab = Vocab::toy(7, 24);
        let seq = vocab.embed_template(TEMPLATE_T3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s_star = Array1::from_iter((0..24).map(|_| rng.random::<f64>() - 0.5));
        let w_before = encode_text(&enc, &seq).unwrap();
        let w_after = encode_text(&enc, &substitute_id(&seq, &s_star).unwrap()).unwrap();
        assert_ne!(w_before, w_after);
    }

    #[test]
    fn class_features_static_vs_dynamic() {
        let enc = toy();
        let vocab = Vocab::toy(7, 24);
        let proj = init_projection(enc.face_dim, enc.token_embed_dim, 7).unwrap();
        let x1 = random_image(100);
        let x2 = random_image(200);

        // T0T1: both sides image-independent.
        let cfg = TemplateConfig::from_id("T0T1").unwrap();
        let (r1, f1) = class_text_features(&enc, &cfg, &proj, &vocab, &x1).unwrap();
        let (r2, f2) = class_text_features(&enc, &cfg, &proj, &vocab, &x2).unwrap();
        assert_eq!(r1, r2);
        assert_eq!(f1, f2);

        // T0T3: w_real static, w_fake varies with the face.
        let cfg = TemplateConfig::from_id("T0T3").unwrap();
        let (r1, f1) = class_text_features(&enc, &cfg, &proj, &vocab, &x1).unwrap();
        let (r2, f2) = class_text_features(&enc, &cfg, &proj, &vocab, &x2).unwrap();
        assert_eq!(r1, r2);
        assert_ne!(f1, f2);

        // RAND: constant and image-independent.
        let cfg = TemplateConfig::Rand;
        let (r1, f1) = class_text_features(&enc, &cfg, &proj, &vocab, &x1).unwrap();
        let (r2, f2) = class_text_features(&enc, &cfg, &proj, &vocab, &x2).unwrap();
        assert_eq!(r1, r2);
        assert_eq!(f1, f2);
    }

    #[test]
    fn cache_matches_direct_computation() {
        let enc = toy();
        let vocab = Vocab::toy(7, 24);
        let proj = init_projection(enc.face_dim, enc.token_embed_dim, 7).unwrap();
        for id in TemplateConfig::all_ids() {
            let cfg = TemplateConfig::from_id(id).unwrap();
            let cache = TextFeatureCache::new(&enc, &cfg, &vocab).unwrap();
            for img_seed in [10, 20] {
                let x = random_image(img_seed);
                let direct = class_text_features(&enc, &cfg, &proj, &vocab, &x).unwrap();
                let cached = cache.features(&enc, &proj, &x).unwrap();
                assert_eq!(direct.0, cached.0, "config {id}");
                assert_eq!(direct.1, cached.1, "config {id}");
            }
        }
    }

    #[test]
    fn projection_digest_stable() {
        let proj = init_projection(16, 24, 7).unwrap();
        assert_eq!(proj.digest(), proj.digest());
        let other = init_projection(16, 24, 8).unwrap();
        assert_ne!(proj.digest(), other.digest());
    }
}
