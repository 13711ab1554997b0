//! Dataset manifests, face-crop preprocessing, and video-level splits.
//!
//! Manifests are JSON-lines: one [`SampleRecord`] per line, optionally with a
//! `bbox` column when images are not pre-cropped. Face detection itself is an
//! external step; this module only applies the crop contract (enlarge the box
//! about its center, clamp, resize).

pub mod synth;

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use ndarray::Array3;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::transform::resize_bilinear;
use crate::ImageTensor;

/// Binary class label: 0 real, 1 fake.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Label {
    Real,
    Fake,
}

impl TryFrom<u8> for Label {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            0 => Ok(Label::Real),
            1 => Ok(Label::Fake),
            other => Err(format!("label must be 0 (real) or 1 (fake), got {other}")),
        }
    }
}

impl From<Label> for u8 {
    fn from(l: Label) -> u8 {
        match l {
            Label::Real => 0,
            Label::Fake => 1,
        }
    }
}

/// Dataset split assignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split '{other}'"))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Split::Train => write!(f, "train"),
            Split::Val => write!(f, "val"),
            Split::Test => write!(f, "test"),
        }
    }
}

/// One face crop with its label, video grouping and split assignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub image_path: String,
    pub label: Label,
    pub video_id: String,
    pub split: Split,
    pub dataset: String,
    /// `[x0, y0, x1, y1]` in pixel coordinates; present when the image is not
    /// pre-cropped.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bbox: Option<[f64; 4]>,
}

/// Face-crop contract: enlarge the detector box, clamp, resize.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CropSpec {
    pub enlarge_factor: f64,
    pub output_size: (usize, usize),
}

impl Default for CropSpec {
    fn default() -> Self {
        Self { enlarge_factor: 1.3, output_size: (224, 224) }
    }
}

impl CropSpec {
    fn validate(&self) -> Result<()> {
        if self.enlarge_factor < 1.0 {
            return Err(Error::Config(format!(
                "enlarge_factor must be >= 1, got {}",
                self.enlarge_factor
            )));
        }
        if self.output_size.0 == 0 || self.output_size.1 == 0 {
            return Err(Error::Config("crop output size must be positive".into()));
        }
        Ok(())
    }
}

/// Loads and validates a JSON-lines manifest. Blank lines are ignored;
/// duplicate `image_path` entries and empty `video_id`s are rejected.
pub fn load_manifest(path: &Path) -> Result<Vec<SampleRecord>> {
    let content = fs::read_to_string(path)?;
    let mut records = Vec::new();
    let mut seen_paths = BTreeSet::new();
    for (i, line) in content.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record: SampleRecord = serde_json::from_str(line)
            .map_err(|e| Error::Manifest { line: line_no, msg: e.to_string() })?;
        if record.video_id.is_empty() {
            return Err(Error::Manifest {
                line: line_no,
                msg: "video_id must be non-empty".into(),
            });
        }
        if !seen_paths.insert(record.image_path.clone()) {
            return Err(Error::Manifest {
                line: line_no,
                msg: format!("duplicate image_path '{}'", record.image_path),
            });
        }
        records.push(record);
    }
    Ok(records)
}

/// Writes a manifest; `load_manifest(write_manifest(r)) == r`.
pub fn write_manifest(path: &Path, records: &[SampleRecord]) -> Result<()> {
    let mut file = fs::File::create(path)?;
    for record in records {
        let line = serde_json::to_string(record)
            .map_err(|e| Error::Config(format!("manifest serialization failed: {e}")))?;
        writeln!(file, "{line}")?;
    }
    Ok(())
}

/// Enlarges a bbox about its center and clamps it to the image bounds.
pub fn enlarged_clamped_bbox(
    bbox: [f64; 4],
    factor: f64,
    image_size: (usize, usize),
) -> Result<[f64; 4]> {
    let [x0, y0, x1, y1] = bbox;
    if x1 <= x0 || y1 <= y0 {
        return Err(Error::Input(format!("degenerate bbox {bbox:?}")));
    }
    let (h, w) = image_size;
    let cx = (x0 + x1) / 2.0;
    let cy = (y0 + y1) / 2.0;
    let half_w = (x1 - x0) / 2.0 * factor;
    let half_h = (y1 - y0) / 2.0 * factor;
    let nx0 = (cx - half_w).max(0.0);
    let ny0 = (cy - half_h).max(0.0);
    let nx1 = (cx + half_w).min(w as f64);
    let ny1 = (cy + half_h).min(h as f64);
    if nx1 <= nx0 || ny1 <= ny0 {
        return Err(Error::Input(format!("bbox {bbox:?} falls outside the image")));
    }
    Ok([nx0, ny0, nx1, ny1])
}

/// Crops the enlarged facial region and resizes it to `spec.output_size`.
pub fn crop_face(image: &ImageTensor, bbox: [f64; 4], spec: &CropSpec) -> Result<ImageTensor> {
    spec.validate()?;
    let (h, w, _) = image.dim();
    let [x0, y0, x1, y1] = enlarged_clamped_bbox(bbox, spec.enlarge_factor, (h, w))?;
    let ix0 = x0.floor() as usize;
    let iy0 = y0.floor() as usize;
    let ix1 = (x1.ceil() as usize).min(w);
    let iy1 = (y1.ceil() as usize).min(h);
    let region = image
        .slice(ndarray::s![iy0..iy1, ix0..ix1, ..])
        .to_owned();
    let (out_h, out_w) = spec.output_size;
    Ok(resize_bilinear(&region, out_h, out_w))
}

/// Reassigns splits so that all frames of a video land in exactly one split.
///
/// `fractions` are `(train, val, test)` and must sum to 1. Videos are shuffled
/// with the seed and allocated by cumulative rounding, so the same seed always
/// produces the same partition.
pub fn split_by_video(
    records: &[SampleRecord],
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<Vec<SampleRecord>> {
    let (ft, fv, fe) = fractions;
    if ft < 0.0 || fv < 0.0 || fe < 0.0 || (ft + fv + fe - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split fractions must be non-negative and sum to 1, got {fractions:?}"
        )));
    }
    let mut videos: Vec<String> = Vec::new();
    for r in records {
        if !videos.contains(&r.video_id) {
            videos.push(r.video_id.clone());
        }
    }
    let n_splits = [ft, fv, fe].iter().filter(|f| **f > 0.0).count();
    if videos.len() < n_splits {
        return Err(Error::Config(format!(
            "{} videos cannot cover {n_splits} splits",
            videos.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    videos.shuffle(&mut rng);

    let n = videos.len() as f64;
    let cut_train = (ft * n).round() as usize;
    let cut_val = ((ft + fv) * n).round() as usize;
    let assignment = |video: &str| -> Split {
        let idx = videos.iter().position(|v| v == video).expect("video present");
        if idx < cut_train {
            Split::Train
        } else if idx < cut_val {
            Split::Val
        } else {
            Split::Test
        }
    };
    Ok(records
        .iter()
        .map(|r| {
            let mut out = r.clone();
            out.split = assignment(&r.video_id);
            out
        })
        .collect())
}

/// Loads an 8-bit RGB image into `[0, 1]` floats.
pub fn load_image(path: &Path) -> Result<ImageTensor> {
    let img = image::open(path)
        .map_err(|e| Error::Input(format!("failed to read image {}: {e}", path.display())))?
        .to_rgb8();
    let (w, h) = img.dimensions();
    let mut out = Array3::zeros((h as usize, w as usize, 3));
    for (x, y, pixel) in img.enumerate_pixels() {
        for ch in 0..3 {
            out[[y as usize, x as usize, ch]] = pixel.0[ch] as f64 / 255.0;
        }
    }
    Ok(out)
}

/// Saves a `[0, 1]` float image as 8-bit RGB PNG.
pub fn save_image(path: &Path, img: &ImageTensor) -> Result<()> {
    let (h, w, _) = img.dim();
    let mut buf = image::RgbImage::new(w as u32, h as u32);
    for r in 0..h {
        for c in 0..w {
            let px = [
                (img[[r, c, 0]].clamp(0.0, 1.0) * 255.0).round() as u8,
                (img[[r, c, 1]].clamp(0.0, 1.0) * 255.0).round() as u8,
                (img[[r, c, 2]].clamp(0.0, 1.0) * 255.0).round() as u8,
            ];
            buf.put_pixel(c as u32, r as u32, image::Rgb(px));
        }
    }
    buf.save(path)
        .map_err(|e| Error::Input(format!("failed to write image {}: {e}", path.display())))
}

/// A manifest record with its image decoded (and cropped when a bbox is set).
#[derive(Debug, Clone)]
pub struct LoadedSample {
    pub image: ImageTensor,
    pub label: Label,
    pub video_id: String,
    pub dataset: String,
    pub split: Split,
    pub image_path: String,
}

/// Decodes all records, resolving relative paths against `base_dir` and
/// applying the crop contract to records that carry a bbox.
pub fn load_samples(
    records: &[SampleRecord],
    base_dir: &Path,
    crop: Option<&CropSpec>,
) -> Result<Vec<LoadedSample>> {
    records
        .iter()
        .map(|r| {
            let path = {
                let p = Path::new(&r.image_path);
                if p.is_absolute() {
                    p.to_path_buf()
                } else {
                    base_dir.join(p)
                }
            };
            let mut image = load_image(&path)?;
            if let Some(bbox) = r.bbox {
                let spec = crop.copied().unwrap_or_default();
                image = crop_face(&image, bbox, &spec)?;
            }
            Ok(LoadedSample {
                image,
                label: r.label,
                video_id: r.video_id.clone(),
                dataset: r.dataset.clone(),
                split: r.split,
                image_path: r.image_path.clone(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use tempfile::tempdir;

    fn record(path: &str, label: u8, video: &str, split: Split) -> SampleRecord {
        SampleRecord {
            image_path: path.to_string(),
            label: Label::try_from(label).unwrap(),
            video_id: video.to_string(),
            split,
            dataset: "toy".to_string(),
            bbox: None,
        }
    }

    #[test]
    fn empty_manifest_is_empty_list() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        fs::write(&path, "").unwrap();
        assert!(load_manifest(&path).unwrap().is_empty());
    }

    #[test]
    fn manifest_preserves_order() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        let records = vec![
            record("a.png", 0, "v1", Split::Train),
            record("b.png", 1, "v1", Split::Train),
            record("c.png", 0, "v2", Split::Test),
        ];
        write_manifest(&path, &records).unwrap();
        let loaded = load_manifest(&path).unwrap();
        assert_eq!(loaded, records);
    }

    #[test]
    fn manifest_rejects_bad_label_with_line_number() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        let good = serde_json::to_string(&record("a.png", 0, "v1", Split::Train)).unwrap();
        let bad = good.replace("\"label\":0", "\"label\":2").replace("a.png", "b.png");
        fs::write(&path, format!("{good}\n{bad}\n")).unwrap();
        match load_manifest(&path) {
            Err(Error::Manifest { line, msg }) => {
                assert_eq!(line, 2);
                assert!(msg.contains("label"), "unexpected message: {msg}");
            }
            other => panic!("expected manifest error, got {other:?}"),
        }
    }

    #[test]
    fn manifest_rejects_duplicates_and_garbage() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        let line = serde_json::to_string(&record("a.png", 0, "v1", Split::Train)).unwrap();
        fs::write(&path, format!("{line}\n{line}\n")).unwrap();
        assert!(matches!(load_manifest(&path), Err(Error::Manifest { line: 2, .. })));

        fs::write(&path, "not json\n").unwrap();
        assert!(matches!(load_manifest(&path), Err(Error::Manifest { line: 1, .. })));
    }

    #[test]
    fn bbox_enlargement_arithmetic() {
        // Centered 100×100 box in 300×300, factor 1.3 → 130×130 region.
        let out = enlarged_clamped_bbox([100.0, 100.0, 200.0, 200.0], 1.3, (300, 300)).unwrap();
        assert_eq!(out, [85.0, 85.0, 215.0, 215.0]);
    }

    #[test]
    fn bbox_clamps_at_edges() {
        let out = enlarged_clamped_bbox([0.0, 0.0, 100.0, 100.0], 1.3, (300, 300)).unwrap();
        assert_eq!(out, [0.0, 0.0, 115.0, 115.0]);
    }

    #[test]
    fn crop_full_image_factor_one_is_resize() {
        let mut img = Array3::zeros((30, 30, 3));
        for r in 0..30 {
            for c in 0..30 {
                for ch in 0..3 {
                    img[[r, c, ch]] = ((r + c + ch) % 7) as f64 / 7.0;
                }
            }
        }
        let spec = CropSpec { enlarge_factor: 1.0, output_size: (16, 16) };
        let cropped = crop_face(&img, [0.0, 0.0, 30.0, 30.0], &spec).unwrap();
        assert_eq!(cropped, resize_bilinear(&img, 16, 16));
    }

    #[test]
    fn crop_edge_bbox_keeps_output_size() {
        let img = Array3::from_elem((240, 320, 3), 0.5);
        let spec = CropSpec::default();
        let out = crop_face(&img, [280.0, 200.0, 319.0, 239.0], &spec).unwrap();
        assert_eq!(out.dim(), (224, 224, 3));
    }

    #[test]
    fn crop_rejects_degenerate_bbox() {
        let img = Array3::zeros((64, 64, 3));
        let spec = CropSpec::default();
        assert!(matches!(
            crop_face(&img, [10.0, 10.0, 10.0, 40.0], &spec),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn split_single_video_lands_in_one_split() {
        let records = vec![
            record("a.png", 0, "v1", Split::Train),
            record("b.png", 0, "v1", Split::Train),
        ];
        let out = split_by_video(&records, (1.0, 0.0, 0.0), 3).unwrap();
        assert!(out.iter().all(|r| r.split == Split::Train));
    }

    #[test]
    fn split_rejects_too_few_videos() {
        let records = vec![record("a.png", 0, "v1", Split::Train)];
        assert!(matches!(
            split_by_video(&records, (0.5, 0.25, 0.25), 3),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn split_seeded_determinism() {
        let records: Vec<SampleRecord> = (0..30)
            .map(|i| record(&format!("{i}.png"), 0, &format!("v{}", i / 3), Split::Train))
            .collect();
        let a = split_by_video(&records, (0.6, 0.2, 0.2), 9).unwrap();
        let b = split_by_video(&records, (0.6, 0.2, 0.2), 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn load_samples_applies_bbox_crop() {
        let dir = tempdir().unwrap();
        let img_path = dir.path().join("big.png");
        let mut img = Array3::zeros((60, 80, 3));
        for r in 0..60 {
            for c in 0..80 {
                for ch in 0..3 {
                    img[[r, c, ch]] = ((r + 2 * c + ch) % 11) as f64 / 11.0;
                }
            }
        }
        save_image(&img_path, &img).unwrap();
        let mut rec = record("big.png", 0, "v1", Split::Train);
        rec.bbox = Some([10.0, 10.0, 40.0, 40.0]);
        let spec = CropSpec { enlarge_factor: 1.3, output_size: (32, 32) };
        let loaded = load_samples(&[rec], dir.path(), Some(&spec)).unwrap();
        assert_eq!(loaded[0].image.dim(), (32, 32, 3));

        let direct = crop_face(&load_image(&img_path).unwrap(), [10.0, 10.0, 40.0, 40.0], &spec)
            .unwrap();
        assert_eq!(loaded[0].image, direct);
    }

    #[test]
    fn image_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("img.png");
        let mut img = Array3::zeros((8, 8, 3));
        for r in 0..8 {
            for c in 0..8 {
                for ch in 0..3 {
                    img[[r, c, ch]] = ((r * 8 + c + ch * 3) % 256) as f64 / 255.0;
                }
            }
        }
        save_image(&path, &img).unwrap();
        let loaded = load_image(&path).unwrap();
        for (a, b) in img.iter().zip(loaded.iter()) {
            assert!((a - b).abs() < 1.0 / 255.0 / 2.0 + 1e-12);
        }
    }

    proptest! {
        #[test]
        fn splits_are_video_disjoint(n_videos in 3usize..20, seed in 0u64..100) {
            let records: Vec<SampleRecord> = (0..n_videos * 4)
                .map(|i| record(&format!("{i}.png"), (i % 2) as u8,
                                &format!("v{}", i % n_videos), Split::Train))
                .collect();
            let out = split_by_video(&records, (0.5, 0.25, 0.25), seed).unwrap();
            let mut by_split: std::collections::BTreeMap<&str, BTreeSet<&str>> = Default::default();
            for r in &out {
                let key = match r.split {
                    Split::Train => "train",
                    Split::Val => "val",
                    Split::Test => "test",
                };
                by_split.entry(key).or_default().insert(r.video_id.as_str());
            }
            let splits: Vec<&BTreeSet<&str>> = by_split.values().collect();
            for i in 0..splits.len() {
                for j in i + 1..splits.len() {
                    prop_assert!(splits[i].is_disjoint(splits[j]));
                }
            }
        }
    }
}
