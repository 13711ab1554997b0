//! Bundled synthetic task for desk-scale verification.
//!
//! Two image families share the same per-video identity structure (smooth
//! random gratings plus per-frame noise); the fake family additionally carries
//! a fixed high-frequency overlay, a planted statistical pattern that a border
//! prompt can learn to expose through the toy encoder. Videos are balanced
//! between labels and frames within a video stay close to their identity base.

use std::fs;
use std::path::Path;

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{save_image, write_manifest, Label, SampleRecord, Split};
use crate::error::Result;
use crate::seed::derive_seed;
use crate::ImageTensor;

/// Generator parameters. Defaults match the bundled acceptance task:
/// 40 training videos and 20 test videos of 10 frames each, 32×32 images.
#[derive(Debug, Clone)]
pub struct SynthSpec {
    pub seed: u64,
    pub train_videos: usize,
    pub val_videos: usize,
    pub test_videos: usize,
    pub frames_per_video: usize,
    pub image_size: (usize, usize),
    /// Amplitude of the planted pattern on fake frames.
    pub overlay_amplitude: f64,
    /// Per-frame pixel jitter.
    pub noise_amplitude: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            seed: 7,
            train_videos: 40,
            val_videos: 0,
            test_videos: 20,
            frames_per_video: 10,
            image_size: (32, 32),
            overlay_amplitude: 0.3,
            noise_amplitude: 0.02,
        }
    }
}

/// Smooth per-video identity pattern: three random gratings per channel.
fn identity_base(rng: &mut ChaCha8Rng, h: usize, w: usize) -> ImageTensor {
    let mut gratings = Vec::new();
    for _ in 0..3 {
        let amp = 0.05 + rng.random::<f64>() * 0.09;
        let freq = 0.5 + rng.random::<f64>() * 2.5;
        let theta = rng.random::<f64>() * std::f64::consts::PI;
        let phases = [
            rng.random::<f64>() * std::f64::consts::TAU,
            rng.random::<f64>() * std::f64::consts::TAU,
            rng.random::<f64>() * std::f64::consts::TAU,
        ];
        gratings.push((amp, freq, theta, phases));
    }
    let mut img = Array3::from_elem((h, w, 3), 0.5);
    for r in 0..h {
        for c in 0..w {
            let u = c as f64 / w as f64;
            let v = r as f64 / h as f64;
            for ch in 0..3 {
                let mut val = 0.0;
                for (amp, freq, theta, phases) in &gratings {
                    let t = theta.cos() * u + theta.sin() * v;
                    val += amp * (std::f64::consts::TAU * freq * t + phases[ch]).sin();
                }
                img[[r, c, ch]] += val;
            }
        }
    }
    img
}

/// The planted pattern carried by fake frames: a pixel checkerboard with
/// alternating channel signs. Being at the pixel Nyquist rate it is strongly
/// attenuated by the shrinking resize of the input transform, while the face
/// branch sees the raw image at full amplitude. `phase` flips the board;
/// fake videos alternate phases so resize-alias residues cancel across the
/// dataset instead of forming a class-coherent shortcut.
fn fake_overlay(h: usize, w: usize, amplitude: f64, phase: usize) -> ImageTensor {
    let mut overlay = Array3::zeros((h, w, 3));
    let signs = [1.0, -1.0, 1.0];
    for r in 0..h {
        for c in 0..w {
            let parity = if (r + c + phase).is_multiple_of(2) { 1.0 } else { -1.0 };
            for ch in 0..3 {
                overlay[[r, c, ch]] = amplitude * signs[ch] * parity;
            }
        }
    }
    overlay
}

/// Generates one frame of one video.
fn render_frame(
    spec: &SynthSpec,
    base: &ImageTensor,
    overlay: Option<&ImageTensor>,
    video_tag: &str,
    frame: usize,
) -> ImageTensor {
    let (h, w) = spec.image_size;
    let mut rng =
        ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &format!("frame.{video_tag}.{frame}")));
    let mut img = base.clone();
    if let Some(ov) = overlay {
        img += ov;
    }
    for r in 0..h {
        for c in 0..w {
            for ch in 0..3 {
                img[[r, c, ch]] += (rng.random::<f64>() - 0.5) * 2.0 * spec.noise_amplitude;
                img[[r, c, ch]] = img[[r, c, ch]].clamp(0.0, 1.0);
            }
        }
    }
    img
}

/// Writes the synthetic dataset under `out_dir` (`images/` plus
/// `manifest.jsonl`) and returns the records. Fully determined by `spec`.
pub fn generate_synthetic_dataset(spec: &SynthSpec, out_dir: &Path) -> Result<Vec<SampleRecord>> {
    let images_dir = out_dir.join("images");
    fs::create_dir_all(&images_dir)?;
    let (h, w) = spec.image_size;
    let overlays = [
        fake_overlay(h, w, spec.overlay_amplitude, 0),
        fake_overlay(h, w, spec.overlay_amplitude, 1),
    ];

    let mut records = Vec::new();
    let groups = [
        (Split::Train, "train", spec.train_videos),
        (Split::Val, "val", spec.val_videos),
        (Split::Test, "test", spec.test_videos),
    ];
    for (split, tag, n_videos) in groups {
        for vid in 0..n_videos {
            let video_tag = format!("{tag}{vid:03}");
            // Alternate labels so every split is balanced; fake videos
            // alternate overlay phases for the same reason.
            let label = if vid % 2 == 0 { Label::Real } else { Label::Fake };
            let mut id_rng = ChaCha8Rng::seed_from_u64(derive_seed(
                spec.seed,
                &format!("identity.{video_tag}"),
            ));
            let base = identity_base(&mut id_rng, h, w);
            let ov = match label {
                Label::Real => None,
                Label::Fake => Some(&overlays[(vid / 2) % 2]),
            };
            for frame in 0..spec.frames_per_video {
                let img = render_frame(spec, &base, ov, &video_tag, frame);
                let file = format!("images/{video_tag}_{frame:03}.png");
                save_image(&out_dir.join(&file), &img)?;
                records.push(SampleRecord {
                    image_path: file,
                    label,
                    video_id: video_tag.clone(),
                    split,
                    dataset: "toy".to_string(),
                    bbox: None,
                });
            }
        }
    }
    write_manifest(&out_dir.join("manifest.jsonl"), &records)?;
    Ok(records)
}
