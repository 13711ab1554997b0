//! Binary prompt checkpoint format.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   b"RPDF"
//! version u16
//! H, W, p u16 ×3
//! template-config id  u8
//! resize-kernel id    u8
//! D_face, D_tok       u16 ×2
//! projection matrix   f32 LE, D_face×D_tok row-major (omitted when D_face == D_tok)
//! delta               f32 LE, H×W×3 row-major
//! ```
//!
//! δ interior zeros are enforced on load; a nonzero interior entry, truncation
//! or trailing bytes all fail with a corrupt-checkpoint error.

use std::fs;
use std::path::Path;

use ndarray::{Array2, Array3};

use crate::error::{Error, Result};
use crate::face2text::{FaceProjection, TemplateConfig};
use crate::transform::{build_border_mask, VisualPrompt, RESIZE_KERNEL_BILINEAR};

pub const MAGIC: [u8; 4] = *b"RPDF";
pub const VERSION: u16 = 1;

/// Everything needed to evaluate a trained prompt: δ with its geometry, the
/// template configuration, the resize kernel and the frozen projection.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub prompt: VisualPrompt,
    pub template: TemplateConfig,
    pub resize_kernel: u8,
    pub projection: FaceProjection,
}

impl Checkpoint {
    pub fn new(prompt: VisualPrompt, template: TemplateConfig, projection: FaceProjection) -> Self {
        Self { prompt, template, resize_kernel: RESIZE_KERNEL_BILINEAR, projection }
    }
}

fn push_u16(buf: &mut Vec<u8>, v: usize, what: &str) -> Result<()> {
    let v16 = u16::try_from(v)
        .map_err(|_| Error::Config(format!("{what} {v} exceeds checkpoint u16 range")))?;
    buf.extend_from_slice(&v16.to_le_bytes());
    Ok(())
}

/// Serializes a checkpoint to bytes.
pub fn checkpoint_bytes(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let (h, w) = ckpt.prompt.geometry();
    let p = ckpt.prompt.border_width();
    let mut buf = Vec::new();
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    push_u16(&mut buf, h, "height")?;
    push_u16(&mut buf, w, "width")?;
    push_u16(&mut buf, p, "border width")?;
    buf.push(ckpt.template.code());
    buf.push(ckpt.resize_kernel);
    let d_face = ckpt.projection.face_dim();
    let d_tok = ckpt.projection.token_dim();
    push_u16(&mut buf, d_face, "face dim")?;
    push_u16(&mut buf, d_tok, "token dim")?;
    match &ckpt.projection {
        FaceProjection::Identity { .. } => {}
        FaceProjection::Matrix(m) => {
            // Stored as D_face×D_tok row-major (row-vector convention); the
            // in-memory matrix is D_tok×D_face, so write its transpose.
            for i in 0..d_face {
                for j in 0..d_tok {
                    buf.extend_from_slice(&(m[[j, i]] as f32).to_le_bytes());
                }
            }
        }
    }
    for v in ckpt.prompt.delta().iter() {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    Ok(buf)
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    fs::write(path, checkpoint_bytes(ckpt)?)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::CorruptCheckpoint(format!(
                "truncated: wanted {n} bytes at offset {}, file has {}",
                self.pos,
                self.bytes.len()
            )));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

/// Parses checkpoint bytes, enforcing the interior-zero invariant.
pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::CorruptCheckpoint("bad magic".into()));
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(Error::CorruptCheckpoint(format!(
            "unsupported version {version} (expected {VERSION})"
        )));
    }
    let h = r.u16()? as usize;
    let w = r.u16()? as usize;
    let p = r.u16()? as usize;
    let template = TemplateConfig::from_code(r.u8()?)
        .map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
    let resize_kernel = r.u8()?;
    if resize_kernel != RESIZE_KERNEL_BILINEAR {
        return Err(Error::CorruptCheckpoint(format!(
            "unknown resize kernel id {resize_kernel}"
        )));
    }
    let d_face = r.u16()? as usize;
    let d_tok = r.u16()? as usize;
    let projection = if d_face == d_tok {
        FaceProjection::Identity { dim: d_face }
    } else {
        let mut m = Array2::zeros((d_tok, d_face));
        for i in 0..d_face {
            for j in 0..d_tok {
                m[[j, i]] = r.f32()? as f64;
            }
        }
        FaceProjection::Matrix(m)
    };

    let mask = build_border_mask(h, w, p)
        .map_err(|e| Error::CorruptCheckpoint(format!("invalid geometry: {e}")))?;
    let mut delta = Array3::zeros((h, w, 3));
    for row in 0..h {
        for col in 0..w {
            for ch in 0..3 {
                let v = r.f32()? as f64;
                if mask[[row, col]] == 0.0 && v != 0.0 {
                    return Err(Error::CorruptCheckpoint(format!(
                        "nonzero interior entry at ({row},{col},{ch})"
                    )));
                }
                delta[[row, col, ch]] = v;
            }
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::CorruptCheckpoint(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    let prompt = VisualPrompt::from_delta(delta, p)
        .map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
    Ok(Checkpoint { prompt, template, resize_kernel, projection })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    checkpoint_from_bytes(&fs::read(path)?)
}
