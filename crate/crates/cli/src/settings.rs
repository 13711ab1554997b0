//! Resolved run settings: defaults, then config file, then CLI flags.
//!
//! The config file is flat `key = value` lines with `#` comments. Every key
//! maps onto one field here; unknown keys are rejected so typos fail fast.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::Serialize;

use repdfd_core::data::CropSpec;
use repdfd_core::data::synth::SynthSpec;
use repdfd_core::encoders::BackendConfig;
use repdfd_core::error::{Error, Result};
use repdfd_core::face2text::TemplateConfig;
use repdfd_core::trainer::{OptimizerKind, TrainConfig};

#[derive(Debug, Clone, Serialize)]
pub struct Settings {
    pub seed: u64,
    pub backend: String,
    pub p: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub optimizer: String,
    pub templates: String,
    pub embed_dim: usize,
    pub face_dim: usize,
    pub token_dim: usize,
    pub hidden_layers: usize,
    pub input_h: usize,
    pub input_w: usize,
    pub temperature: f64,
    pub enlarge_factor: f64,
    pub crop_h: usize,
    pub crop_w: usize,
    pub train_videos: usize,
    pub val_videos: usize,
    pub test_videos: usize,
    pub frames_per_video: usize,
    pub overlay_amplitude: f64,
    pub noise_amplitude: f64,
    /// Keys set explicitly by the user (config file or flag).
    #[serde(skip)]
    explicit: BTreeSet<String>,
}

impl Default for Settings {
    fn default() -> Self {
        let synth = SynthSpec::default();
        Self {
            seed: 7,
            backend: std::env::var("REPDFD_BACKEND").unwrap_or_else(|_| "toy".to_string()),
            p: 34,
            lr: 1.0,
            weight_decay: 0.0,
            batch_size: 32,
            epochs: 10,
            optimizer: "adamw-like".to_string(),
            templates: "T0T3".to_string(),
            embed_dim: 32,
            face_dim: 16,
            token_dim: 24,
            hidden_layers: 2,
            input_h: 32,
            input_w: 32,
            temperature: 0.01,
            enlarge_factor: 1.3,
            crop_h: 224,
            crop_w: 224,
            train_videos: synth.train_videos,
            val_videos: synth.val_videos,
            test_videos: synth.test_videos,
            frames_per_video: synth.frames_per_video,
            overlay_amplitude: synth.overlay_amplitude,
            noise_amplitude: synth.noise_amplitude,
            explicit: BTreeSet::new(),
        }
    }
}

const KNOWN_KEYS: [&str; 25] = [
    "seed",
    "backend",
    "p",
    "lr",
    "weight_decay",
    "batch_size",
    "epochs",
    "optimizer",
    "templates",
    "embed_dim",
    "face_dim",
    "token_dim",
    "hidden_layers",
    "input_h",
    "input_w",
    "temperature",
    "enlarge_factor",
    "crop_h",
    "crop_w",
    "train_videos",
    "val_videos",
    "test_videos",
    "frames_per_video",
    "overlay_amplitude",
    "noise_amplitude",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("invalid value '{value}' for key '{key}'")))
}

impl Settings {
    /// Sets one key from its string form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse(key, value)?,
            "backend" => self.backend = value.trim().to_string(),
            "p" => self.p = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "weight_decay" => self.weight_decay = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "optimizer" => self.optimizer = value.trim().to_string(),
            "templates" => self.templates = value.trim().to_string(),
            "embed_dim" => self.embed_dim = parse(key, value)?,
            "face_dim" => self.face_dim = parse(key, value)?,
            "token_dim" => self.token_dim = parse(key, value)?,
            "hidden_layers" => self.hidden_layers = parse(key, value)?,
            "input_h" => self.input_h = parse(key, value)?,
            "input_w" => self.input_w = parse(key, value)?,
            "temperature" => self.temperature = parse(key, value)?,
            "enlarge_factor" => self.enlarge_factor = parse(key, value)?,
            "crop_h" => self.crop_h = parse(key, value)?,
            "crop_w" => self.crop_w = parse(key, value)?,
            "train_videos" => self.train_videos = parse(key, value)?,
            "val_videos" => self.val_videos = parse(key, value)?,
            "test_videos" => self.test_videos = parse(key, value)?,
            "frames_per_video" => self.frames_per_video = parse(key, value)?,
            "overlay_amplitude" => self.overlay_amplitude = parse(key, value)?,
            "noise_amplitude" => self.noise_amplitude = parse(key, value)?,
            other => {
                return Err(Error::Config(format!(
                    "unknown config key '{other}' (known keys: {})",
                    KNOWN_KEYS.join(", ")
                )))
            }
        }
        self.explicit.insert(key.to_string());
        Ok(())
    }

    /// Loads a flat `key = value` config file.
    pub fn apply_config_file(&mut self, path: &Path) -> Result<()> {
        let content = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        for (i, raw) in content.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!(
                    "config line {} is not 'key = value': '{raw}'",
                    i + 1
                ))
            })?;
            self.set(key.trim(), value)?;
        }
        Ok(())
    }

    /// Applies a `key=value` override from the command line.
    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        let (key, value) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override '{kv}' is not key=value")))?;
        self.set(key.trim(), value)
    }

    pub fn was_set(&self, key: &str) -> bool {
        self.explicit.contains(key)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        Ok(TrainConfig {
            border_width: self.p,
            learning_rate: self.lr,
            weight_decay: self.weight_decay,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed: self.seed,
            optimizer: OptimizerKind::parse(&self.optimizer)?,
            template_config: TemplateConfig::from_id(&self.templates)?,
        })
    }

    pub fn backend_config(&self) -> BackendConfig {
        BackendConfig {
            seed: self.seed,
            embed_dim: self.embed_dim,
            face_dim: self.face_dim,
            token_embed_dim: self.token_dim,
            hidden_layers: self.hidden_layers,
            input_size: (self.input_h, self.input_w),
            temperature: self.temperature,
            options: Default::default(),
        }
    }

    pub fn synth_spec(&self) -> SynthSpec {
        SynthSpec {
            seed: self.seed,
            train_videos: self.train_videos,
            val_videos: self.val_videos,
            test_videos: self.test_videos,
            frames_per_video: self.frames_per_video,
            image_size: (self.input_h, self.input_w),
            overlay_amplitude: self.overlay_amplitude,
            noise_amplitude: self.noise_amplitude,
        }
    }

    pub fn crop_spec(&self) -> CropSpec {
        CropSpec {
            enlarge_factor: self.enlarge_factor,
            output_size: (self.crop_h, self.crop_w),
        }
    }
}
