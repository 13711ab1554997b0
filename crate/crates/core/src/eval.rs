//! Evaluation: AUC metrics, the cross-dataset protocol, sweeps and analyses.
//!
//! The detection score is the fake-class probability. Frame-level AUC ranks
//! individual frames; video-level AUC ranks per-video means of frame scores.
//! Ties contribute 0.5 per pair (Mann-Whitney convention), and the rank-based
//! computation equals the exhaustive pairwise definition exactly.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read as _, Write as _};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::data::{Label, LoadedSample, Split};
use crate::encoders::encode_image;
use crate::error::{Error, Result};
use crate::face2text::{
    project_face, substitute_id, TemplateConfig, TemplateId, TextFeatureCache,
};
use crate::objective::predict_cached;
use crate::trainer::{train, PipelineDeps, TrainConfig};
use crate::transform::{apply_input_transform, prompt_param_count, resize_bilinear, VisualPrompt};
use crate::encoders::encode_face;
use crate::encoders::encode_text;

/// Default border width for 224×224 backbones; sweep rows at this value are
/// flagged as the reference setting.
pub const DEFAULT_BORDER_WIDTH: usize = 34;

/// Area under the ROC curve via tie-averaged ranks.
///
/// Equals `P(score_fake > score_real) + 0.5·P(tie)` over all fake/real pairs,
/// computed exactly.
pub fn auc(scores: &[f64], labels: &[Label]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Input(format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Input("non-finite score".into()));
    }
    let n = scores.len();
    let n_pos = labels.iter().filter(|l| **l == Label::Fake).count();
    let n_neg = n - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric(
            "AUC needs both classes present".into(),
        ));
    }

    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let mut rank_sum_pos = 0.0f64;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        // 1-based average rank of the tie group [i, j].
        let avg_rank = (i + j + 2) as f64 / 2.0;
        for &k in &idx[i..=j] {
            if labels[k] == Label::Fake {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let min_rank_sum = (n_pos * (n_pos + 1) / 2) as f64;
    Ok((rank_sum_pos - min_rank_sum) / (n_pos as f64 * n_neg as f64))
}

/// Per-video arithmetic mean of frame scores.
///
/// Frames are summed in sorted order, so the result is invariant to frame
/// order within a video.
pub fn video_scores(frame_scores: &BTreeMap<String, Vec<f64>>) -> Result<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    for (video, scores) in frame_scores {
        if scores.is_empty() {
            return Err(Error::Input(format!("video '{video}' has no frames")));
        }
        let mut sorted = scores.clone();
        sorted.sort_by(f64::total_cmp);
        out.insert(video.clone(), sorted.iter().sum::<f64>() / sorted.len() as f64);
    }
    Ok(out)
}

/// Frame- and video-level AUC for one dataset slice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub dataset: String,
    pub frame_auc: f64,
    pub video_auc: f64,
    pub n_frames: usize,
    pub n_videos: usize,
    pub prompt_checkpoint: String,
    pub template_config: String,
}

fn dataset_report(
    dataset: &str,
    frames: &[(&LoadedSample, f64)],
    checkpoint_label: &str,
    template: &TemplateConfig,
) -> Result<EvalReport> {
    let scores: Vec<f64> = frames.iter().map(|(_, s)| *s).collect();
    let labels: Vec<Label> = frames.iter().map(|(s, _)| s.label).collect();
    let frame_auc = auc(&scores, &labels)?;

    let mut by_video: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut video_labels: BTreeMap<String, Label> = BTreeMap::new();
    for (sample, score) in frames {
        by_video.entry(sample.video_id.clone()).or_default().push(*score);
        video_labels.entry(sample.video_id.clone()).or_insert(sample.label);
    }
    let per_video = video_scores(&by_video)?;
    let v_scores: Vec<f64> = per_video.values().copied().collect();
    let v_labels: Vec<Label> = per_video.keys().map(|v| video_labels[v]).collect();
    let video_auc = auc(&v_scores, &v_labels)?;

    Ok(EvalReport {
        dataset: dataset.to_string(),
        frame_auc,
        video_auc,
        n_frames: frames.len(),
        n_videos: per_video.len(),
        prompt_checkpoint: checkpoint_label.to_string(),
        template_config: template.id().to_string(),
    })
}

/// Scores every sample with `p_fake` under a prompt and produces one report
/// per dataset, preceded by an aggregated `"all"` row when the manifest spans
/// several datasets.
pub fn evaluate_prompt(
    samples: &[LoadedSample],
    vp: &VisualPrompt,
    template: &TemplateConfig,
    projection: &crate::face2text::FaceProjection,
    deps: &PipelineDeps,
    checkpoint_label: &str,
) -> Result<Vec<EvalReport>> {
    if vp.geometry() != deps.encoders.input_size {
        return Err(Error::Config(format!(
            "checkpoint geometry {:?} does not match backend input size {:?}",
            vp.geometry(),
            deps.encoders.input_size
        )));
    }
    if samples.is_empty() {
        return Err(Error::Config("no samples to evaluate".into()));
    }
    let cache = TextFeatureCache::new(&deps.encoders, template, &deps.vocab)?;
    let scored: Vec<(&LoadedSample, f64)> = samples
        .iter()
        .map(|s| {
            predict_cached(&deps.encoders, vp, &cache, projection, &s.image)
                .map(|sc| (s, sc.p_fake))
        })
        .collect::<Result<_>>()?;

    let mut by_dataset: BTreeMap<String, Vec<(&LoadedSample, f64)>> = BTreeMap::new();
    for (sample, score) in &scored {
        by_dataset
            .entry(sample.dataset.clone())
            .or_default()
            .push((sample, *score));
    }

    let mut reports = Vec::new();
    if by_dataset.len() > 1 {
        reports.push(dataset_report("all", &scored, checkpoint_label, template)?);
    }
    for (dataset, frames) in &by_dataset {
        reports.push(dataset_report(dataset, frames, checkpoint_label, template)?);
    }
    Ok(reports)
}

/// Applies a stored checkpoint to every sample (the checkpoint supplies δ,
/// the template configuration and the projection).
pub fn evaluate(
    samples: &[LoadedSample],
    ckpt: &Checkpoint,
    deps: &PipelineDeps,
    checkpoint_label: &str,
) -> Result<Vec<EvalReport>> {
    evaluate_prompt(
        samples,
        &ckpt.prompt,
        &ckpt.template,
        &ckpt.projection,
        deps,
        checkpoint_label,
    )
}

/// Frame- and video-level AUC pair for a sweep cell.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DatasetAuc {
    pub frame: f64,
    pub video: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BorderSweepRow {
    pub p: usize,
    pub param_count: u64,
    pub is_default: bool,
    pub per_dataset: BTreeMap<String, DatasetAuc>,
    pub avg_frame_auc: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TemplateSweepRow {
    pub config: String,
    pub per_dataset: BTreeMap<String, DatasetAuc>,
    pub avg_frame_auc: f64,
}

fn test_split(samples: &[LoadedSample]) -> Vec<LoadedSample> {
    samples.iter().filter(|s| s.split == Split::Test).cloned().collect()
}

fn sweep_cell(reports: &[EvalReport]) -> (BTreeMap<String, DatasetAuc>, f64) {
    let mut per_dataset = BTreeMap::new();
    let mut sum = 0.0;
    let mut count = 0usize;
    for r in reports {
        if r.dataset == "all" {
            continue;
        }
        per_dataset.insert(
            r.dataset.clone(),
            DatasetAuc { frame: r.frame_auc, video: r.video_auc },
        );
        sum += r.frame_auc;
        count += 1;
    }
    (per_dataset, sum / count as f64)
}

/// One full train+eval per border width. The `#Para` column is exact.
pub fn sweep_border_width(
    samples: &[LoadedSample],
    p_values: &[usize],
    base_cfg: &TrainConfig,
    deps: &PipelineDeps,
) -> Result<Vec<BorderSweepRow>> {
    let (h, w) = deps.encoders.input_size;
    let held_out = test_split(samples);
    let mut rows = Vec::new();
    for &p in p_values {
        let param_count = prompt_param_count(h, w, p)?;
        let cfg = TrainConfig { border_width: p, ..base_cfg.clone() };
        let result = train(samples, &cfg, deps, None)?;
        let reports = evaluate_prompt(
            &held_out,
            &result.prompt,
            &cfg.template_config,
            &deps.projection,
            deps,
            &format!("sweep:p={p}"),
        )?;
        let (per_dataset, avg_frame_auc) = sweep_cell(&reports);
        rows.push(BorderSweepRow {
            p,
            param_count,
            is_default: p == DEFAULT_BORDER_WIDTH,
            per_dataset,
            avg_frame_auc,
        });
    }
    Ok(rows)
}

/// One full train+eval per template configuration (including "RAND").
pub fn sweep_templates(
    samples: &[LoadedSample],
    config_ids: &[String],
    base_cfg: &TrainConfig,
    deps: &PipelineDeps,
) -> Result<Vec<TemplateSweepRow>> {
    let held_out = test_split(samples);
    let mut rows = Vec::new();
    for id in config_ids {
        let template = TemplateConfig::from_id(id)?;
        let cfg = TrainConfig { template_config: template, ..base_cfg.clone() };
        let result = train(samples, &cfg, deps, None)?;
        let reports = evaluate_prompt(
            &held_out,
            &result.prompt,
            &template,
            &deps.projection,
            deps,
            &format!("sweep:templates={id}"),
        )?;
        let (per_dataset, avg_frame_auc) = sweep_cell(&reports);
        rows.push(TemplateSweepRow { config: id.clone(), per_dataset, avg_frame_auc });
    }
    Ok(rows)
}

/// Mean cosine between image features and each candidate template's text
/// feature, per dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimilarityRow {
    pub dataset: String,
    /// Means for T0, T1, T2, T3 in order.
    pub mean_cos: [f64; 4],
    pub n_frames: usize,
}

fn cosine(a: &crate::FeatureVec, b: &crate::FeatureVec) -> Result<f64> {
    let na = a.dot(a).sqrt();
    let nb = b.dot(b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Numeric("cosine of zero-norm vector is undefined".into()));
    }
    Ok(a.dot(b) / (na * nb))
}

/// Computes mean `cos(w_T, f)` for every template T0..T3 over the manifest,
/// under the given (possibly zero-initialized) prompt.
pub fn similarity_analysis(
    samples: &[LoadedSample],
    vp: &VisualPrompt,
    deps: &PipelineDeps,
) -> Result<Vec<SimilarityRow>> {
    if samples.is_empty() {
        return Err(Error::Config("no samples to analyze".into()));
    }
    let templates = [TemplateId::T0, TemplateId::T1, TemplateId::T2, TemplateId::T3];
    let sequences: Vec<_> = templates
        .iter()
        .map(|t| deps.vocab.embed_template(t.text()))
        .collect::<Result<_>>()?;

    let mut sums: BTreeMap<String, ([f64; 4], usize)> = BTreeMap::new();
    for sample in samples {
        let prompted = apply_input_transform(&sample.image, vp)?;
        let f = encode_image(&deps.encoders, &prompted.pixels)?;
        let entry = sums.entry(sample.dataset.clone()).or_insert(([0.0; 4], 0));
        for (i, seq) in sequences.iter().enumerate() {
            let w = if seq.id_slot().is_some() {
                let (h, wd) = deps.encoders.input_size;
                let raw = if sample.image.dim() == (h, wd, 3) {
                    sample.image.clone()
                } else {
                    resize_bilinear(&sample.image, h, wd)
                };
                let face = encode_face(&deps.encoders, &raw)?;
                let s_star = project_face(&deps.projection, &face)?;
                encode_text(&deps.encoders, &substitute_id(seq, &s_star)?)?
            } else {
                encode_text(&deps.encoders, seq)?
            };
            entry.0[i] += cosine(&w, &f)?;
        }
        entry.1 += 1;
    }

    Ok(sums
        .into_iter()
        .map(|(dataset, (totals, n))| SimilarityRow {
            dataset,
            mean_cos: [
                totals[0] / n as f64,
                totals[1] / n as f64,
                totals[2] / n as f64,
                totals[3] / n as f64,
            ],
            n_frames: n,
        })
        .collect())
}

/// Header of a feature dump file.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FeatureDumpHeader {
    pub format: String,
    pub version: u16,
    pub dim: usize,
    pub count: usize,
    pub variants: Vec<String>,
    pub labels: Vec<u8>,
    pub video_ids: Vec<String>,
    pub datasets: Vec<String>,
    pub image_paths: Vec<String>,
}

/// A loaded feature dump: header plus `count × variants` rows of `dim` floats.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDump {
    pub header: FeatureDumpHeader,
    /// Row-major, frame-major: row `2i` is the raw variant of frame `i`,
    /// row `2i+1` the prompted variant.
    pub rows: Vec<Vec<f32>>,
}

/// Writes per-frame features for both the raw and prompted image variants.
///
/// File layout: one JSON header line, then `count × 2 × dim` little-endian
/// f32 values. The raw variant is the plain resize to model input (no border,
/// no δ) and does not depend on the checkpoint.
pub fn dump_features(
    samples: &[LoadedSample],
    vp: &VisualPrompt,
    deps: &PipelineDeps,
    path: &Path,
) -> Result<()> {
    let (h, w) = deps.encoders.input_size;
    let dim = deps.encoders.embed_dim;
    let header = FeatureDumpHeader {
        format: "repdfd-features".to_string(),
        version: 1,
        dim,
        count: samples.len(),
        variants: vec!["raw".to_string(), "prompted".to_string()],
        labels: samples.iter().map(|s| u8::from(s.label)).collect(),
        video_ids: samples.iter().map(|s| s.video_id.clone()).collect(),
        datasets: samples.iter().map(|s| s.dataset.clone()).collect(),
        image_paths: samples.iter().map(|s| s.image_path.clone()).collect(),
    };
    let mut file = fs::File::create(path)?;
    let json = serde_json::to_string(&header)
        .map_err(|e| Error::Config(format!("header serialization failed: {e}")))?;
    writeln!(file, "{json}")?;
    for sample in samples {
        let raw = resize_bilinear(&sample.image, h, w);
        let f_raw = encode_image(&deps.encoders, &raw)?;
        let prompted = apply_input_transform(&sample.image, vp)?;
        let f_prompted = encode_image(&deps.encoders, &prompted.pixels)?;
        for feature in [&f_raw, &f_prompted] {
            for v in feature.iter() {
                file.write_all(&(*v as f32).to_le_bytes())?;
            }
        }
    }
    Ok(())
}

/// Reads a feature dump back; lossless for what was written.
pub fn load_features(path: &Path) -> Result<FeatureDump> {
    let bytes = fs::read(path)?;
    let newline = bytes
        .iter()
        .position(|b| *b == b'\n')
        .ok_or_else(|| Error::Input("feature dump missing header line".into()))?;
    let header: FeatureDumpHeader = serde_json::from_slice(&bytes[..newline])
        .map_err(|e| Error::Input(format!("bad feature dump header: {e}")))?;
    let mut rest = &bytes[newline + 1..];
    let expected = header.count * header.variants.len() * header.dim * 4;
    if rest.len() != expected {
        return Err(Error::Input(format!(
            "feature dump payload is {} bytes, expected {expected}",
            rest.len()
        )));
    }
    let mut rows = Vec::with_capacity(header.count * header.variants.len());
    for _ in 0..header.count * header.variants.len() {
        let mut row = Vec::with_capacity(header.dim);
        for _ in 0..header.dim {
            let mut buf = [0u8; 4];
            rest.read_exact(&mut buf)?;
            row.push(f32::from_le_bytes(buf));
        }
        rows.push(row);
    }
    Ok(FeatureDump { header, rows })
}

/// Aligned plain-text rendering of evaluation reports.
pub fn render_reports(reports: &[EvalReport]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<12} {:>10} {:>10} {:>9} {:>9}  {:<10}\n",
        "dataset", "frame_auc", "video_auc", "n_frames", "n_videos", "templates"
    ));
    for r in reports {
        out.push_str(&format!(
            "{:<12} {:>10.4} {:>10.4} {:>9} {:>9}  {:<10}\n",
            r.dataset, r.frame_auc, r.video_auc, r.n_frames, r.n_videos, r.template_config
        ));
    }
    out
}

/// Aligned plain-text rendering of a border-width sweep.
pub fn render_border_sweep(rows: &[BorderSweepRow]) -> String {
    let mut datasets: Vec<String> = Vec::new();
    for row in rows {
        for d in row.per_dataset.keys() {
            if !datasets.contains(d) {
                datasets.push(d.clone());
            }
        }
    }
    let mut out = String::new();
    out.push_str(&format!("{:>5} {:>10}", "p", "#Para"));
    for d in &datasets {
        out.push_str(&format!(" {d:>10}"));
    }
    out.push_str(&format!(" {:>10}\n", "avg"));
    for row in rows {
        let marker = if row.is_default { "*" } else { " " };
        out.push_str(&format!("{marker}{:>4} {:>10}", row.p, row.param_count));
        for d in &datasets {
            match row.per_dataset.get(d) {
                Some(a) => out.push_str(&format!(" {:>10.4}", a.frame)),
                None => out.push_str(&format!(" {:>10}", "-")),
            }
        }
        out.push_str(&format!(" {:>10.4}\n", row.avg_frame_auc));
    }
    out
}

/// Aligned plain-text rendering of a template sweep.
pub fn render_template_sweep(rows: &[TemplateSweepRow]) -> String {
    let mut datasets: Vec<String> = Vec::new();
    for row in rows {
        for d in row.per_dataset.keys() {
            if !datasets.contains(d) {
                datasets.push(d.clone());
            }
        }
    }
    let mut out = String::new();
    out.push_str(&format!("{:<8}", "config"));
    for d in &datasets {
        out.push_str(&format!(" {d:>10}"));
    }
    out.push_str(&format!(" {:>10}\n", "avg"));
    for row in rows {
        out.push_str(&format!("{:<8}", row.config));
        for d in &datasets {
            match row.per_dataset.get(d) {
                Some(a) => out.push_str(&format!(" {:>10.4}", a.frame)),
                None => out.push_str(&format!(" {:>10}", "-")),
            }
        }
        out.push_str(&format!(" {:>10.4}\n", row.avg_frame_auc));
    }
    out
}

/// Aligned plain-text rendering of the similarity analysis.
pub fn render_similarity(rows: &[SimilarityRow]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<12} {:>8} {:>8} {:>8} {:>8} {:>9}\n",
        "dataset", "T0", "T1", "T2", "T3", "n_frames"
    ));
    for r in rows {
        out.push_str(&format!(
            "{:<12} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>9}\n",
            r.dataset, r.mean_cos[0], r.mean_cos[1], r.mean_cos[2], r.mean_cos[3], r.n_frames
        ));
    }
    out
}
