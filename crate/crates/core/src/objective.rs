//! Class probabilities, training loss, and the prompt gradient.
//!
//! Prediction is a two-class softmax over cosine logits,
//! `P(y = i | x) = exp(cos(w_i, f)/τ) / Σ_j exp(cos(w_j, f)/τ)`,
//! and training minimizes cross-entropy against the ground-truth label.
//! Gradients flow to δ only through the image branch: the face embedding is a
//! function of the raw image, not the prompted one, so text features are
//! constants for the purposes of `∂L/∂δ`.

use ndarray::Array3;

use crate::data::Label;
use crate::encoders::FrozenEncoders;
use crate::error::{Error, Result};
use crate::face2text::{FaceProjection, TemplateConfig, TextFeatureCache, Vocab};
use crate::transform::{apply_input_transform, VisualPrompt};
use crate::{FeatureVec, ImageTensor};

/// Probability floor before taking logs in [`loss`]; guards the saturated
/// regime of small temperatures.
pub const PROB_EPSILON: f64 = 1e-12;

/// Two-class prediction: probabilities plus the raw cosine logits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassScores {
    pub p_real: f64,
    pub p_fake: f64,
    /// `(cos(w_real, f)/τ, cos(w_fake, f)/τ)`.
    pub logits: (f64, f64),
}

fn cosine(a: &FeatureVec, b: &FeatureVec) -> Result<f64> {
    let na = a.dot(a).sqrt();
    let nb = b.dot(b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Numeric("cosine of zero-norm vector is undefined".into()));
    }
    Ok(a.dot(b) / (na * nb))
}

/// ∂cos(w, f)/∂f for fixed w.
fn cosine_grad_wrt_f(w: &FeatureVec, f: &FeatureVec) -> Result<FeatureVec> {
    let nw = w.dot(w).sqrt();
    let nf = f.dot(f).sqrt();
    if nw == 0.0 || nf == 0.0 {
        return Err(Error::Numeric("cosine of zero-norm vector is undefined".into()));
    }
    let cos = w.dot(f) / (nw * nf);
    Ok(w / (nw * nf) - &(f * (cos / (nf * nf))))
}

/// Numerically stable two-class softmax over `(logit_real, logit_fake)`.
fn softmax2(logit_real: f64, logit_fake: f64) -> (f64, f64) {
    let m = logit_real.max(logit_fake);
    let er = (logit_real - m).exp();
    let ef = (logit_fake - m).exp();
    let z = er + ef;
    (er / z, ef / z)
}

/// Scores from precomputed text features and an image feature.
pub fn scores_from_features(
    w_real: &FeatureVec,
    w_fake: &FeatureVec,
    f: &FeatureVec,
    temperature: f64,
) -> Result<ClassScores> {
    let logit_real = cosine(w_real, f)? / temperature;
    let logit_fake = cosine(w_fake, f)? / temperature;
    let (p_real, p_fake) = softmax2(logit_real, logit_fake);
    Ok(ClassScores { p_real, p_fake, logits: (logit_real, logit_fake) })
}

/// Full prediction for one image under the current prompt.
pub fn predict(
    enc: &FrozenEncoders,
    vp: &VisualPrompt,
    cfg: &TemplateConfig,
    proj: &FaceProjection,
    vocab: &Vocab,
    x: &ImageTensor,
) -> Result<ClassScores> {
    let cache = TextFeatureCache::new(enc, cfg, vocab)?;
    predict_cached(enc, vp, &cache, proj, x)
}

/// Prediction reusing a [`TextFeatureCache`]; bit-identical to [`predict`].
pub fn predict_cached(
    enc: &FrozenEncoders,
    vp: &VisualPrompt,
    cache: &TextFeatureCache,
    proj: &FaceProjection,
    x: &ImageTensor,
) -> Result<ClassScores> {
    if vp.geometry() != enc.input_size {
        return Err(Error::Config(format!(
            "prompt geometry {:?} does not match backend input size {:?}",
            vp.geometry(),
            enc.input_size
        )));
    }
    let prompted = apply_input_transform(x, vp)?;
    let f = crate::encoders::encode_image(enc, &prompted.pixels)?;
    let (w_real, w_fake) = cache.features(enc, proj, x)?;
    scores_from_features(&w_real, &w_fake, &f, enc.temperature)
}

/// Cross-entropy `−log P(y_label | x)` with probability floor [`PROB_EPSILON`].
pub fn loss(scores: &ClassScores, label: Label) -> f64 {
    let p = match label {
        Label::Real => scores.p_real,
        Label::Fake => scores.p_fake,
    };
    -p.max(PROB_EPSILON).ln()
}

/// Cross-entropy from logits in smooth log-sum-exp form.
///
/// Equal to [`loss`] wherever the probability floor is inactive, and the exact
/// (unclamped) value where softmax underflows; this is the quantity whose
/// gradient [`loss_and_grad_delta`] computes.
pub fn ce_from_logits(logit_real: f64, logit_fake: f64, label: Label) -> f64 {
    let m = logit_real.max(logit_fake);
    let lse = m + ((logit_real - m).exp() + (logit_fake - m).exp()).ln();
    let target = match label {
        Label::Real => logit_real,
        Label::Fake => logit_fake,
    };
    lse - target
}

/// Mean loss and `∂L/∂δ` over a batch.
///
/// The gradient is pulled back through the frozen image encoder only and
/// masked by `M_p`, so interior entries are exactly zero. Samples are reduced
/// in batch order; results are run-to-run identical.
pub fn loss_and_grad_delta(
    enc: &FrozenEncoders,
    vp: &VisualPrompt,
    cache: &TextFeatureCache,
    proj: &FaceProjection,
    batch: &[(&ImageTensor, Label)],
) -> Result<(f64, Array3<f64>)> {
    if batch.is_empty() {
        return Err(Error::Input("empty batch".into()));
    }
    let (h, w) = vp.geometry();
    let tau = enc.temperature;
    let mut grad = Array3::<f64>::zeros((h, w, 3));
    let mut total_loss = 0.0;

    for (x, label) in batch {
        let prompted = apply_input_transform(x, vp)?;
        let (f, pullback) = enc.image.encode_with_pullback(&prompted.pixels)?;
        let (w_real, w_fake) = cache.features(enc, proj, x)?;

        let logit_real = cosine(&w_real, &f)? / tau;
        let logit_fake = cosine(&w_fake, &f)? / tau;
        total_loss += ce_from_logits(logit_real, logit_fake, *label);

        let (p_real, p_fake) = softmax2(logit_real, logit_fake);
        let (y_real, y_fake) = match label {
            Label::Real => (1.0, 0.0),
            Label::Fake => (0.0, 1.0),
        };
        // dL/dcos_i = (p_i − y_i)/τ; chain through both cosine terms.
        let cot = cosine_grad_wrt_f(&w_real, &f)? * ((p_real - y_real) / tau)
            + &(cosine_grad_wrt_f(&w_fake, &f)? * ((p_fake - y_fake) / tau));
        let dl_dx = pullback(&cot)?;

        for r in 0..h {
            for c in 0..w {
                if vp.mask()[[r, c]] != 0.0 {
                    for ch in 0..3 {
                        grad[[r, c, ch]] += dl_dx[[r, c, ch]];
                    }
                }
            }
        }
    }

    let n = batch.len() as f64;
    grad.mapv_inplace(|g| g / n);
    Ok((total_loss / n, grad))
}

/// Mean gradient of the loss over a batch with respect to δ.
pub fn grad_delta(
    enc: &FrozenEncoders,
    vp: &VisualPrompt,
    cfg: &TemplateConfig,
    proj: &FaceProjection,
    vocab: &Vocab,
    batch: &[(&ImageTensor, Label)],
) -> Result<Array3<f64>> {
    let cache = TextFeatureCache::new(enc, cfg, vocab)?;
    loss_and_grad_delta(enc, vp, &cache, proj, batch).map(|(_, g)| g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::toy::{build_toy_backend, ToyBackendSpec};
    use crate::face2text::init_projection;
    use ndarray::Array1;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy(temperature: f64) -> FrozenEncoders {
        build_toy_backend(&ToyBackendSpec {
            seed: 7,
            temperature,
            ..ToyBackendSpec::default()
        })
        .unwrap()
    }

    fn random_image(seed: u64) -> ImageTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..32 * 32 * 3).map(|_| rng.random::<f64>()).collect();
        ImageTensor::from_shape_vec((32, 32, 3), data).unwrap()
    }

    fn random_vec(seed: u64, len: usize) -> FeatureVec {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array1::from_iter((0..len).map(|_| rng.random::<f64>() - 0.5))
    }

    #[test]
    fn identical_text_features_give_half_half() {
        let w = random_vec(1, 32);
        let f = random_vec(2, 32);
        let s = scores_from_features(&w, &w, &f, 0.01).unwrap();
        assert_eq!(s.p_real, 0.5);
        assert_eq!(s.p_fake, 0.5);
    }

    #[test]
    fn unit_cosines_tau_one() {
        // cosines (1, 0) at τ=1: p_real = e/(e+1).
        let w_real = Array1::from_vec(vec![1.0, 0.0]);
        let w_fake = Array1::from_vec(vec![0.0, 1.0]);
        let f = Array1::from_vec(vec![2.0, 0.0]);
        let s = scores_from_features(&w_real, &w_fake, &f, 1.0).unwrap();
        let expected = 1f64.exp() / (1f64.exp() + 1.0);
        assert!((s.p_real - expected).abs() < 1e-12);
        assert!((s.p_real - 0.7311).abs() < 1e-4);
    }

    #[test]
    fn scores_invariant_to_feature_scale() {
        let w_real = random_vec(1, 32);
        let w_fake = random_vec(2, 32);
        let f = random_vec(3, 32);
        let a = scores_from_features(&w_real, &w_fake, &f, 0.01).unwrap();
        let b = scores_from_features(&w_real, &w_fake, &(&f * 17.5), 0.01).unwrap();
        assert!((a.p_real - b.p_real).abs() < 1e-12);
        assert!((a.p_fake - b.p_fake).abs() < 1e-12);
    }

    #[test]
    fn probabilities_sum_to_one_and_swap_exactly() {
        for seed in 0..50u64 {
            let w_real = random_vec(seed * 3 + 1, 32);
            let w_fake = random_vec(seed * 3 + 2, 32);
            let f = random_vec(seed * 3 + 3, 32);
            let s = scores_from_features(&w_real, &w_fake, &f, 0.01).unwrap();
            assert!((s.p_real + s.p_fake - 1.0).abs() < 1e-12);
            assert!((0.0..=1.0).contains(&s.p_real));
            let swapped = scores_from_features(&w_fake, &w_real, &f, 0.01).unwrap();
            assert_eq!(swapped.p_real, s.p_fake);
            assert_eq!(swapped.p_fake, s.p_real);
        }
    }

    #[test]
    fn p_fake_monotone_in_fake_logit() {
        let mut prev = 0.0;
        for k in 0..20 {
            let logit_fake = -10.0 + k as f64;
            let (_, p_fake) = softmax2(3.0, logit_fake);
            assert!(p_fake > prev);
            prev = p_fake;
        }
    }

    #[test]
    fn zero_norm_feature_is_numeric_error() {
        let w = random_vec(1, 8);
        let zero = Array1::zeros(8);
        assert!(matches!(
            scores_from_features(&w, &w, &zero, 1.0),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn loss_reference_values() {
        // −ln 0.5 = 0.693147...
        let s = ClassScores { p_real: 0.5, p_fake: 0.5, logits: (0.0, 0.0) };
        assert!((loss(&s, Label::Real) - std::f64::consts::LN_2).abs() < 1e-6);
        let s = ClassScores { p_real: 1.0, p_fake: 0.0, logits: (0.0, 0.0) };
        assert_eq!(loss(&s, Label::Real), 0.0);
        let s = ClassScores { p_real: 0.9, p_fake: 0.1, logits: (0.0, 0.0) };
        assert!((loss(&s, Label::Real) - 0.105361).abs() < 1e-6);
        // Probability floor keeps the loss finite.
        let s = ClassScores { p_real: 0.0, p_fake: 1.0, logits: (0.0, 0.0) };
        assert!(loss(&s, Label::Real).is_finite());
        assert!((loss(&s, Label::Real) - (-(PROB_EPSILON.ln()))).abs() < 1e-9);
    }

    #[test]
    fn ce_from_logits_matches_loss_in_active_region() {
        let (lr, lf) = (1.3, -0.4);
        let (p_real, p_fake) = softmax2(lr, lf);
        let s = ClassScores { p_real, p_fake, logits: (lr, lf) };
        for label in [Label::Real, Label::Fake] {
            assert!((ce_from_logits(lr, lf, label) - loss(&s, label)).abs() < 1e-12);
        }
    }

    fn grad_fixture() -> (FrozenEncoders, Vocab, FaceProjection, TemplateConfig) {
        let enc = toy(0.01);
        let vocab = Vocab::toy(7, enc.token_embed_dim);
        let proj = init_projection(enc.face_dim, enc.token_embed_dim, 7).unwrap();
        let cfg = TemplateConfig::from_id("T0T3").unwrap();
        (enc, vocab, proj, cfg)
    }

    #[test]
    fn gradient_interior_is_exactly_zero() {
        let (enc, vocab, proj, cfg) = grad_fixture();
        let vp = VisualPrompt::zeros(32, 32, 6).unwrap();
        let x1 = random_image(1);
        let x2 = random_image(2);
        let batch = vec![(&x1, Label::Real), (&x2, Label::Fake)];
        let g = grad_delta(&enc, &vp, &cfg, &proj, &vocab, &batch).unwrap();
        for r in 6..26 {
            for c in 6..26 {
                for ch in 0..3 {
                    assert_eq!(g[[r, c, ch]], 0.0);
                }
            }
        }
        // Border carries signal.
        assert!(g.iter().any(|v| *v != 0.0));
    }

    #[test]
    fn duplicate_sample_batch_equals_single_sample_gradient() {
        let (enc, vocab, proj, cfg) = grad_fixture();
        let vp = VisualPrompt::zeros(32, 32, 6).unwrap();
        let x = random_image(3);
        let single = grad_delta(&enc, &vp, &cfg, &proj, &vocab, &[(&x, Label::Fake)]).unwrap();
        let double =
            grad_delta(&enc, &vp, &cfg, &proj, &vocab, &[(&x, Label::Fake), (&x, Label::Fake)])
                .unwrap();
        for (a, b) in single.iter().zip(double.iter()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn empty_batch_rejected() {
        let (enc, vocab, proj, cfg) = grad_fixture();
        let vp = VisualPrompt::zeros(32, 32, 6).unwrap();
        assert!(matches!(
            grad_delta(&enc, &vp, &cfg, &proj, &vocab, &[]),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        // Oracle: central differences of the smooth cross-entropy computed
        // through the forward-only path (predict → logits).
        let (enc, vocab, proj, cfg) = grad_fixture();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut vp = VisualPrompt::zeros(32, 32, 6).unwrap();
        // Evaluate away from the zero point.
        let mut bump = Array3::zeros((32, 32, 3));
        for r in 0..32 {
            for c in 0..32 {
                for ch in 0..3 {
                    bump[[r, c, ch]] = (rng.random::<f64>() - 0.5) * 0.1;
                }
            }
        }
        vp.add_masked(&bump);

        let images: Vec<ImageTensor> = (0..4).map(|i| random_image(50 + i)).collect();
        let labels = [Label::Real, Label::Fake, Label::Fake, Label::Real];
        let batch: Vec<(&ImageTensor, Label)> =
            images.iter().zip(labels.iter().copied()).collect();

        let cache = TextFeatureCache::new(&enc, &cfg, &vocab).unwrap();
        let (_, grad) = loss_and_grad_delta(&enc, &vp, &cache, &proj, &batch).unwrap();

        let mean_ce = |vp: &VisualPrompt| -> f64 {
            batch
                .iter()
                .map(|(x, label)| {
                    let s = predict_cached(&enc, vp, &cache, &proj, x).unwrap();
                    ce_from_logits(s.logits.0, s.logits.1, *label)
                })
                .sum::<f64>()
                / batch.len() as f64
        };

        let h = 1e-4;
        let mut checked = 0;
        while checked < 12 {
            let r = rng.random_range(0..32);
            let c = rng.random_range(0..32);
            let ch = rng.random_range(0..3);
            if vp.mask()[[r, c]] == 0.0 {
                continue;
            }
            let mut plus = vp.clone();
            let mut e = Array3::zeros((32, 32, 3));
            e[[r, c, ch]] = h;
            plus.add_masked(&e);
            let mut minus = vp.clone();
            e[[r, c, ch]] = -2.0 * h;
            plus_into_minus(&mut minus, &mut e, r, c, ch, h);
            let fd = (mean_ce(&plus) - mean_ce(&minus)) / (2.0 * h);
            let an = grad[[r, c, ch]];
            let denom = an.abs().max(fd.abs()).max(1e-10);
            assert!(
                ((an - fd) / denom).abs() < 1e-4,
                "gradient mismatch at ({r},{c},{ch}): analytic {an}, fd {fd}"
            );
            checked += 1;
        }
    }

    fn plus_into_minus(
        minus: &mut VisualPrompt,
        e: &mut Array3<f64>,
        r: usize,
        c: usize,
        ch: usize,
        h: f64,
    ) {
        e.fill(0.0);
        e[[r, c, ch]] = -h;
        minus.add_masked(e);
    }
}
