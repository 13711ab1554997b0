//! Prompt optimization loop.
//!
//! Two update rules are provided: `adamw-like` (first/second-moment adaptive
//! update with decoupled weight decay, the practical default) and
//! `plain-gradient` (`δ ← δ − γ∇L`, the literal rule, kept for oracle tests).
//! Both touch border coordinates only; the interior stays exactly zero for
//! the lifetime of the prompt. Everything is seeded: same seed, same data,
//! same config ⇒ bit-identical prompts and checkpoints.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Array3;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::checkpoint::{save_checkpoint, Checkpoint};
use crate::data::{Label, LoadedSample, Split};
use crate::encoders::FrozenEncoders;
use crate::error::{Error, Result};
use crate::eval::auc;
use crate::face2text::{init_projection, FaceProjection, TemplateConfig, TextFeatureCache, Vocab};
use crate::objective::{loss_and_grad_delta, predict_cached};
use crate::seed::derive_seed;
use crate::transform::VisualPrompt;
use crate::ImageTensor;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Update rule selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    /// Adaptive moments with decoupled weight decay (β = 0.9/0.999, ε = 1e-8).
    AdamWLike,
    /// Literal gradient descent, `δ ← δ − γ∇L`.
    PlainGradient,
}

impl OptimizerKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "adamw-like" => Ok(Self::AdamWLike),
            "plain-gradient" => Ok(Self::PlainGradient),
            other => Err(Error::Config(format!(
                "unknown optimizer '{other}' (expected adamw-like or plain-gradient)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::AdamWLike => "adamw-like",
            Self::PlainGradient => "plain-gradient",
        }
    }
}

/// Training hyperparameters.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub border_width: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub template_config: TemplateConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            border_width: 34,
            learning_rate: 1.0,
            weight_decay: 0.0,
            batch_size: 32,
            epochs: 10,
            seed: 0,
            optimizer: OptimizerKind::AdamWLike,
            template_config: TemplateConfig::from_id("T0T3").expect("valid default"),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::Config("learning_rate must be finite and >= 0".into()));
        }
        if !self.weight_decay.is_finite() || self.weight_decay < 0.0 {
            return Err(Error::Config("weight_decay must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// Frozen dependencies shared by training and evaluation: the encoder triple,
/// the embedding vocabulary and the face projection.
#[derive(Clone)]
pub struct PipelineDeps {
    pub encoders: FrozenEncoders,
    pub vocab: Vocab,
    pub projection: FaceProjection,
}

impl PipelineDeps {
    /// Builds vocabulary and projection from one seed.
    pub fn new(encoders: FrozenEncoders, seed: u64) -> Result<Self> {
        let vocab = Vocab::toy(seed, encoders.token_embed_dim);
        let projection = init_projection(encoders.face_dim, encoders.token_embed_dim, seed)?;
        Ok(Self { encoders, vocab, projection })
    }
}

/// Mutable optimization state: δ, step counter, moments, data-order stream.
pub struct TrainState {
    pub vp: VisualPrompt,
    pub step: u64,
    first_moment: Array3<f64>,
    second_moment: Array3<f64>,
    rng: ChaCha8Rng,
}

impl TrainState {
    pub fn new(height: usize, width: usize, border_width: usize, seed: u64) -> Result<Self> {
        let vp = init_prompt(height, width, border_width)?;
        Ok(Self {
            vp,
            step: 0,
            first_moment: Array3::zeros((height, width, 3)),
            second_moment: Array3::zeros((height, width, 3)),
            rng: ChaCha8Rng::seed_from_u64(derive_seed(seed, "batch-order")),
        })
    }

    /// Second-moment tensor; support indicates which coordinates ever saw a
    /// nonzero gradient.
    pub fn second_moment(&self) -> &Array3<f64> {
        &self.second_moment
    }
}

/// Zero-initialized prompt.
pub fn init_prompt(height: usize, width: usize, border_width: usize) -> Result<VisualPrompt> {
    VisualPrompt::zeros(height, width, border_width)
}

/// Per-step statistics, logged as JSON lines.
#[derive(Debug, Clone, Copy)]
pub struct StepStats {
    pub loss: f64,
    pub grad_max: f64,
}

fn max_abs_or_nan(grad: &Array3<f64>) -> f64 {
    let mut mx = 0.0f64;
    for v in grad.iter() {
        if !v.is_finite() {
            return f64::NAN;
        }
        mx = mx.max(v.abs());
    }
    mx
}

/// One optimization step over a batch. Only border coordinates change.
pub fn train_step(
    state: &mut TrainState,
    batch: &[(&ImageTensor, Label)],
    cfg: &TrainConfig,
    deps: &PipelineDeps,
    cache: &TextFeatureCache,
) -> Result<StepStats> {
    let (loss, grad) =
        loss_and_grad_delta(&deps.encoders, &state.vp, cache, &deps.projection, batch)?;
    let grad_max = max_abs_or_nan(&grad);
    if !grad_max.is_finite() {
        return Err(Error::Numeric(format!(
            "non-finite gradient at step {}: max|grad| = {grad_max}",
            state.step
        )));
    }
    state.step += 1;

    let (h, w) = state.vp.geometry();
    let mut update = Array3::zeros((h, w, 3));
    match cfg.optimizer {
        OptimizerKind::PlainGradient => {
            for r in 0..h {
                for c in 0..w {
                    if state.vp.mask()[[r, c]] != 0.0 {
                        for ch in 0..3 {
                            update[[r, c, ch]] = -cfg.learning_rate * grad[[r, c, ch]];
                        }
                    }
                }
            }
        }
        OptimizerKind::AdamWLike => {
            let t = state.step as i32;
            let bias1 = 1.0 - ADAM_BETA1.powi(t);
            let bias2 = 1.0 - ADAM_BETA2.powi(t);
            for r in 0..h {
                for c in 0..w {
                    if state.vp.mask()[[r, c]] == 0.0 {
                        continue;
                    }
                    for ch in 0..3 {
                        let g = grad[[r, c, ch]];
                        let m = ADAM_BETA1 * state.first_moment[[r, c, ch]]
                            + (1.0 - ADAM_BETA1) * g;
                        let v = ADAM_BETA2 * state.second_moment[[r, c, ch]]
                            + (1.0 - ADAM_BETA2) * g * g;
                        state.first_moment[[r, c, ch]] = m;
                        state.second_moment[[r, c, ch]] = v;
                        let m_hat = m / bias1;
                        let v_hat = v / bias2;
                        update[[r, c, ch]] = -cfg.learning_rate
                            * (m_hat / (v_hat.sqrt() + ADAM_EPS)
                                + cfg.weight_decay * state.vp.delta()[[r, c, ch]]);
                    }
                }
            }
        }
    }
    state.vp.add_masked(&update);
    Ok(StepStats { loss, grad_max })
}

#[derive(Debug, Clone, Serialize)]
struct StepLogLine {
    event: &'static str,
    step: u64,
    epoch: usize,
    loss: f64,
    lr: f64,
    grad_max: f64,
    wallclock: f64,
}

#[derive(Debug, Clone, Serialize)]
struct EpochLogLine {
    event: &'static str,
    epoch: usize,
    mean_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    val_auc: Option<f64>,
    wallclock: f64,
}

/// Per-epoch summary returned by [`train`].
#[derive(Debug, Clone, Serialize)]
pub struct EpochSummary {
    pub epoch: usize,
    pub mean_loss: f64,
    pub val_auc: Option<f64>,
}

/// Outcome of a training run.
pub struct TrainResult {
    pub prompt: VisualPrompt,
    pub epochs: Vec<EpochSummary>,
    /// Epoch with the best validation AUC, if a validation split was present.
    pub best_epoch: Option<usize>,
    pub final_checkpoint: Option<PathBuf>,
    pub best_checkpoint: Option<PathBuf>,
}

struct LogWriter {
    file: Option<fs::File>,
}

impl LogWriter {
    fn new(out_dir: Option<&Path>) -> Result<Self> {
        let file = match out_dir {
            Some(dir) => {
                fs::create_dir_all(dir)?;
                Some(
                    fs::OpenOptions::new()
                        .create(true)
                        .append(true)
                        .open(dir.join("train_log.jsonl"))?,
                )
            }
            None => None,
        };
        Ok(Self { file })
    }

    fn write<T: Serialize>(&mut self, line: &T) -> Result<()> {
        if let Some(f) = &mut self.file {
            let json = serde_json::to_string(line)
                .map_err(|e| Error::Config(format!("log serialization failed: {e}")))?;
            writeln!(f, "{json}")?;
        }
        Ok(())
    }
}

/// Scores `p_fake` for each sample under the current prompt.
fn score_samples(
    samples: &[&LoadedSample],
    vp: &VisualPrompt,
    deps: &PipelineDeps,
    cache: &TextFeatureCache,
) -> Result<Vec<f64>> {
    samples
        .iter()
        .map(|s| {
            predict_cached(&deps.encoders, vp, cache, &deps.projection, &s.image)
                .map(|sc| sc.p_fake)
        })
        .collect()
}

/// Runs the full optimization loop over the train split of `samples`.
///
/// Writes a JSONL training log plus per-epoch, best-validation and final
/// checkpoints under `out_dir` when given. Validation AUC (frame-level, over
/// the val split) selects the best epoch; ties keep the earlier epoch.
pub fn train(
    samples: &[LoadedSample],
    cfg: &TrainConfig,
    deps: &PipelineDeps,
    out_dir: Option<&Path>,
) -> Result<TrainResult> {
    cfg.validate()?;
    let train_set: Vec<&LoadedSample> = samples.iter().filter(|s| s.split == Split::Train).collect();
    let val_set: Vec<&LoadedSample> = samples.iter().filter(|s| s.split == Split::Val).collect();
    if train_set.is_empty() {
        return Err(Error::Config("manifest has no training samples".into()));
    }

    let (h, w) = deps.encoders.input_size;
    let mut state = TrainState::new(h, w, cfg.border_width, cfg.seed)?;
    let cache = TextFeatureCache::new(&deps.encoders, &cfg.template_config, &deps.vocab)?;
    let mut log = LogWriter::new(out_dir)?;
    let start = Instant::now();

    let mut epochs = Vec::new();
    let mut best: Option<(usize, f64, VisualPrompt)> = None;

    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut state.rng);

        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<(&ImageTensor, Label)> = chunk
                .iter()
                .map(|&i| (&train_set[i].image, train_set[i].label))
                .collect();
            let stats = train_step(&mut state, &batch, cfg, deps, &cache)?;
            loss_sum += stats.loss * batch.len() as f64;
            log.write(&StepLogLine {
                event: "step",
                step: state.step,
                epoch,
                loss: stats.loss,
                lr: cfg.learning_rate,
                grad_max: stats.grad_max,
                wallclock: start.elapsed().as_secs_f64(),
            })?;
        }
        let mean_loss = loss_sum / train_set.len() as f64;

        let val_auc = if val_set.is_empty() {
            None
        } else {
            let scores = score_samples(&val_set, &state.vp, deps, &cache)?;
            let labels: Vec<Label> = val_set.iter().map(|s| s.label).collect();
            Some(auc(&scores, &labels)?)
        };
        if let Some(a) = val_auc {
            let improved = match &best {
                Some((_, best_auc, _)) => a > *best_auc,
                None => true,
            };
            if improved {
                best = Some((epoch, a, state.vp.clone()));
            }
        }
        log.write(&EpochLogLine {
            event: "epoch",
            epoch,
            mean_loss,
            val_auc,
            wallclock: start.elapsed().as_secs_f64(),
        })?;
        epochs.push(EpochSummary { epoch, mean_loss, val_auc });

        if let Some(dir) = out_dir {
            let ckpt = Checkpoint::new(
                state.vp.clone(),
                cfg.template_config,
                deps.projection.clone(),
            );
            save_checkpoint(&dir.join(format!("epoch_{epoch:03}.rpdf")), &ckpt)?;
        }
    }

    let mut final_checkpoint = None;
    let mut best_checkpoint = None;
    if let Some(dir) = out_dir {
        let final_ckpt =
            Checkpoint::new(state.vp.clone(), cfg.template_config, deps.projection.clone());
        let final_path = dir.join("final.rpdf");
        save_checkpoint(&final_path, &final_ckpt)?;
        final_checkpoint = Some(final_path);

        let best_prompt = best.as_ref().map(|(_, _, vp)| vp.clone()).unwrap_or_else(|| state.vp.clone());
        let best_ckpt = Checkpoint::new(best_prompt, cfg.template_config, deps.projection.clone());
        let best_path = dir.join("best.rpdf");
        save_checkpoint(&best_path, &best_ckpt)?;
        best_checkpoint = Some(best_path);
    }

    Ok(TrainResult {
        prompt: state.vp,
        epochs,
        best_epoch: best.map(|(e, _, _)| e),
        final_checkpoint,
        best_checkpoint,
    })
}
