//! Command implementations.

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::json;

use repdfd_core::checkpoint::{load_checkpoint, Checkpoint};
use repdfd_core::data::synth::generate_synthetic_dataset;
use repdfd_core::data::{load_manifest, load_samples, LoadedSample, Split};
use repdfd_core::encoders::{BackendRegistry, FrozenEncoders};
use repdfd_core::error::{Error, Result};
use repdfd_core::eval::{
    dump_features, evaluate, render_border_sweep, render_reports, render_similarity,
    render_template_sweep, similarity_analysis, sweep_border_width, sweep_templates,
};
use repdfd_core::seed::sha256_hex;
use repdfd_core::trainer::{train, PipelineDeps};
use repdfd_core::transform::VisualPrompt;

use crate::settings::Settings;
use crate::Command;

fn build_deps(settings: &Settings) -> Result<PipelineDeps> {
    let registry = BackendRegistry::with_builtins();
    let encoders: FrozenEncoders = registry.build(&settings.backend, &settings.backend_config())?;
    PipelineDeps::new(encoders, settings.seed)
}

fn load_manifest_samples(
    settings: &Settings,
    manifest: &Path,
    split: Option<Split>,
) -> Result<Vec<LoadedSample>> {
    let records = load_manifest(manifest)?;
    let base_dir = manifest.parent().unwrap_or_else(|| Path::new("."));
    let samples = load_samples(&records, base_dir, Some(&settings.crop_spec()))?;
    Ok(match split {
        Some(s) => samples.into_iter().filter(|r| r.split == s).collect(),
        None => samples,
    })
}

fn parse_split(split: &str) -> Result<Option<Split>> {
    if split == "all" {
        Ok(None)
    } else {
        Split::parse(split).map(Some)
    }
}

fn file_sha256(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}

/// Writes the reproducibility manifest next to the command's output.
fn write_run_manifest(
    target: &Path,
    command: &str,
    settings: &Settings,
    deps: Option<&PipelineDeps>,
    extra: serde_json::Value,
) -> Result<()> {
    let manifest_path = if target.is_dir() {
        target.join("run_manifest.json")
    } else {
        let mut name = target.file_name().unwrap_or_default().to_os_string();
        name.push(".run.json");
        target.with_file_name(name)
    };
    let doc = json!({
        "command": command,
        "settings": settings,
        "backend_digest": deps.map(|d| d.encoders.weights_digest()),
        "projection_digest": deps.map(|d| d.projection.digest()),
        "details": extra,
    });
    let body = serde_json::to_string_pretty(&doc)
        .map_err(|e| Error::Config(format!("run manifest serialization failed: {e}")))?;
    fs::write(manifest_path, body)?;
    Ok(())
}

fn zero_prompt_for(settings: &Settings, deps: &PipelineDeps, p: Option<usize>) -> Result<VisualPrompt> {
    let (h, w) = deps.encoders.input_size;
    VisualPrompt::zeros(h, w, p.unwrap_or(settings.p))
}

/// Loads a checkpoint or falls back to a zero prompt of width `p`.
fn prompt_source(
    settings: &Settings,
    deps: &PipelineDeps,
    checkpoint: Option<&PathBuf>,
    p: Option<usize>,
) -> Result<(Checkpoint, String)> {
    match checkpoint {
        Some(path) => {
            let ckpt = load_checkpoint(path)?;
            Ok((ckpt, path.display().to_string()))
        }
        None => {
            let prompt = zero_prompt_for(settings, deps, p)?;
            let template = settings.train_config()?.template_config;
            let ckpt = Checkpoint::new(prompt, template, deps.projection.clone());
            Ok((ckpt, "<zero-init>".to_string()))
        }
    }
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Prepare { common, out } => {
            let settings = common.resolve()?;
            let spec = settings.synth_spec();
            let records = generate_synthetic_dataset(&spec, &out)?;
            let n_videos: std::collections::BTreeSet<_> =
                records.iter().map(|r| r.video_id.clone()).collect();
            println!(
                "wrote {} frames across {} videos to {}",
                records.len(),
                n_videos.len(),
                out.display()
            );
            write_run_manifest(
                &out,
                "prepare",
                &settings,
                None,
                json!({
                    "manifest": out.join("manifest.jsonl"),
                    "manifest_sha256": file_sha256(&out.join("manifest.jsonl"))?,
                    "frames": records.len(),
                }),
            )
        }
        Command::Train { common, manifest, out, p, templates, epochs, lr, batch_size } => {
            let mut settings = common.resolve()?;
            apply_train_flags(&mut settings, p, templates, epochs, lr, batch_size)?;
            let deps = build_deps(&settings)?;
            let samples = load_manifest_samples(&settings, &manifest, None)?;
            let cfg = settings.train_config()?;
            let result = train(&samples, &cfg, &deps, Some(&out))?;
            for e in &result.epochs {
                match e.val_auc {
                    Some(auc) => println!(
                        "epoch {:3}: loss {:.6}, val AUC {:.4}",
                        e.epoch, e.mean_loss, auc
                    ),
                    None => println!("epoch {:3}: loss {:.6}", e.epoch, e.mean_loss),
                }
            }
            let final_path = result.final_checkpoint.as_deref().expect("out dir given");
            let best_path = result.best_checkpoint.as_deref().expect("out dir given");
            println!("final checkpoint: {}", final_path.display());
            write_run_manifest(
                &out,
                "train",
                &settings,
                Some(&deps),
                json!({
                    "manifest": manifest,
                    "checkpoint_final": final_path,
                    "checkpoint_final_sha256": file_sha256(final_path)?,
                    "checkpoint_best": best_path,
                    "checkpoint_best_sha256": file_sha256(best_path)?,
                    "best_epoch": result.best_epoch,
                }),
            )
        }
        Command::Eval { common, manifest, checkpoint, out, split, p } => {
            let settings = common.resolve()?;
            let deps = build_deps(&settings)?;
            let ckpt = load_checkpoint(&checkpoint)?;
            let expected_p = p.or_else(|| settings.was_set("p").then_some(settings.p));
            if let Some(expected) = expected_p {
                if expected != ckpt.prompt.border_width() {
                    return Err(Error::Config(format!(
                        "border width mismatch: checkpoint has p={}, configuration says p={expected}",
                        ckpt.prompt.border_width()
                    )));
                }
            }
            let samples = load_manifest_samples(&settings, &manifest, parse_split(&split)?)?;
            let reports = evaluate(&samples, &ckpt, &deps, &checkpoint.display().to_string())?;
            print!("{}", render_reports(&reports));
            if let Some(out_path) = &out {
                let body = serde_json::to_string_pretty(&reports)
                    .map_err(|e| Error::Config(format!("report serialization failed: {e}")))?;
                fs::write(out_path, body)?;
                write_run_manifest(
                    out_path,
                    "eval",
                    &settings,
                    Some(&deps),
                    json!({
                        "manifest": manifest,
                        "checkpoint": checkpoint,
                        "checkpoint_sha256": file_sha256(&checkpoint)?,
                        "split": split,
                    }),
                )?;
            }
            Ok(())
        }
        Command::SweepP { common, manifest, p, out, templates, epochs, lr, batch_size } => {
            let mut settings = common.resolve()?;
            apply_train_flags(&mut settings, None, templates, epochs, lr, batch_size)?;
            let p_values: Vec<usize> = p
                .split(',')
                .map(|tok| {
                    tok.trim()
                        .parse()
                        .map_err(|_| Error::Config(format!("invalid border width '{tok}'")))
                })
                .collect::<Result<_>>()?;
            let deps = build_deps(&settings)?;
            let samples = load_manifest_samples(&settings, &manifest, None)?;
            let cfg = settings.train_config()?;
            let rows = sweep_border_width(&samples, &p_values, &cfg, &deps)?;
            print!("{}", render_border_sweep(&rows));
            fs::create_dir_all(&out)?;
            let json_path = out.join("sweep_p.json");
            fs::write(
                &json_path,
                serde_json::to_string_pretty(&rows)
                    .map_err(|e| Error::Config(format!("sweep serialization failed: {e}")))?,
            )?;
            fs::write(out.join("sweep_p.txt"), render_border_sweep(&rows))?;
            write_run_manifest(
                &out,
                "sweep-p",
                &settings,
                Some(&deps),
                json!({ "manifest": manifest, "p_values": p_values, "table": json_path }),
            )
        }
        Command::SweepTemplates { common, manifest, templates, out, p, epochs, lr, batch_size } => {
            let mut settings = common.resolve()?;
            apply_train_flags(&mut settings, p, None, epochs, lr, batch_size)?;
            let ids: Vec<String> = match templates {
                Some(list) => list.split(',').map(|s| s.trim().to_string()).collect(),
                None => repdfd_core::face2text::TemplateConfig::all_ids()
                    .iter()
                    .map(|s| s.to_string())
                    .collect(),
            };
            let deps = build_deps(&settings)?;
            let samples = load_manifest_samples(&settings, &manifest, None)?;
            let cfg = settings.train_config()?;
            let rows = sweep_templates(&samples, &ids, &cfg, &deps)?;
            print!("{}", render_template_sweep(&rows));
            fs::create_dir_all(&out)?;
            let json_path = out.join("sweep_templates.json");
            fs::write(
                &json_path,
                serde_json::to_string_pretty(&rows)
                    .map_err(|e| Error::Config(format!("sweep serialization failed: {e}")))?,
            )?;
            fs::write(out.join("sweep_templates.txt"), render_template_sweep(&rows))?;
            write_run_manifest(
                &out,
                "sweep-templates",
                &settings,
                Some(&deps),
                json!({ "manifest": manifest, "configs": ids, "table": json_path }),
            )
        }
        Command::AnalyzeSim { common, manifest, checkpoint, out, p, split } => {
            let settings = common.resolve()?;
            let deps = build_deps(&settings)?;
            let (ckpt, label) = prompt_source(&settings, &deps, checkpoint.as_ref(), p)?;
            let samples = load_manifest_samples(&settings, &manifest, parse_split(&split)?)?;
            let rows = similarity_analysis(&samples, &ckpt.prompt, &deps)?;
            print!("{}", render_similarity(&rows));
            if let Some(out_path) = &out {
                fs::write(
                    out_path,
                    serde_json::to_string_pretty(&rows)
                        .map_err(|e| Error::Config(format!("serialization failed: {e}")))?,
                )?;
                write_run_manifest(
                    out_path,
                    "analyze-sim",
                    &settings,
                    Some(&deps),
                    json!({ "manifest": manifest, "prompt": label, "split": split }),
                )?;
            }
            Ok(())
        }
        Command::DumpFeatures { common, manifest, checkpoint, out, p, split } => {
            let settings = common.resolve()?;
            let deps = build_deps(&settings)?;
            let (ckpt, label) = prompt_source(&settings, &deps, checkpoint.as_ref(), p)?;
            let samples = load_manifest_samples(&settings, &manifest, parse_split(&split)?)?;
            dump_features(&samples, &ckpt.prompt, &deps, &out)?;
            println!("wrote {} frames × 2 variants to {}", samples.len(), out.display());
            write_run_manifest(
                &out,
                "dump-features",
                &settings,
                Some(&deps),
                json!({
                    "manifest": manifest,
                    "prompt": label,
                    "split": split,
                    "features_sha256": file_sha256(&out)?,
                }),
            )
        }
    }
}

fn apply_train_flags(
    settings: &mut Settings,
    p: Option<usize>,
    templates: Option<String>,
    epochs: Option<usize>,
    lr: Option<f64>,
    batch_size: Option<usize>,
) -> Result<()> {
    if let Some(v) = p {
        settings.set("p", &v.to_string())?;
    }
    if let Some(v) = templates {
        settings.set("templates", &v)?;
    }
    if let Some(v) = epochs {
        settings.set("epochs", &v.to_string())?;
    }
    if let Some(v) = lr {
        settings.set("lr", &v.to_string())?;
    }
    if let Some(v) = batch_size {
        settings.set("batch_size", &v.to_string())?;
    }
    Ok(())
}
