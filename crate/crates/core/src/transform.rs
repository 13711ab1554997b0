//! Input transformation: border mask, resize, prompt merge, parameter accounting.
//!
//! The prompted image is `Resize_p(X) + M_p ⊙ δ`: the source image is shrunk
//! to `(H−2p)×(W−2p)`, centered on a zero canvas, and the learnable border
//! perturbation is added on the ring of width `p`. The interior of the result
//! is bit-identical to the resized source, so the perturbation never occludes
//! image content.

use ndarray::{s, Array2, Array3};

use crate::error::{Error, Result};
use crate::{BorderMask, ImageTensor};

/// Resize kernel identifier stored in checkpoints. Only bilinear with
/// half-pixel centers (corner alignment disabled) is implemented.
pub const RESIZE_KERNEL_BILINEAR: u8 = 0;

/// The learnable border perturbation δ together with its geometry and mask.
///
/// Invariant: `delta` is exactly zero wherever `mask` is zero. Constructors
/// and the trainer preserve this; [`crate::checkpoint`] enforces it on load.
#[derive(Debug, Clone)]
pub struct VisualPrompt {
    delta: Array3<f64>,
    mask: BorderMask,
    border_width: usize,
}

impl VisualPrompt {
    /// Zero-initialized prompt for the given model-input geometry.
    pub fn zeros(height: usize, width: usize, border_width: usize) -> Result<Self> {
        let mask = build_border_mask(height, width, border_width)?;
        Ok(Self {
            delta: Array3::zeros((height, width, 3)),
            mask,
            border_width,
        })
    }

    /// Wraps an existing δ, validating geometry and the interior-zero invariant.
    pub fn from_delta(delta: Array3<f64>, border_width: usize) -> Result<Self> {
        let (h, w, c) = delta.dim();
        if c != 3 {
            return Err(Error::Input(format!("delta must have 3 channels, got {c}")));
        }
        let mask = build_border_mask(h, w, border_width)?;
        for r in 0..h {
            for col in 0..w {
                if mask[[r, col]] == 0.0 {
                    for ch in 0..3 {
                        if delta[[r, col, ch]] != 0.0 {
                            return Err(Error::Input(format!(
                                "delta interior entry ({r},{col},{ch}) is nonzero"
                            )));
                        }
                    }
                }
            }
        }
        Ok(Self { delta, mask, border_width })
    }

    pub fn delta(&self) -> &Array3<f64> {
        &self.delta
    }

    pub fn mask(&self) -> &BorderMask {
        &self.mask
    }

    pub fn border_width(&self) -> usize {
        self.border_width
    }

    /// Model-input geometry `(H, W)`.
    pub fn geometry(&self) -> (usize, usize) {
        let (h, w, _) = self.delta.dim();
        (h, w)
    }

    /// Applies a masked additive update `δ += update ⊙ M_p`.
    ///
    /// Masking keeps the interior exactly zero even if the caller passes an
    /// update with (numerically) nonzero interior entries.
    pub fn add_masked(&mut self, update: &Array3<f64>) {
        let (h, w, _) = self.delta.dim();
        for r in 0..h {
            for c in 0..w {
                if self.mask[[r, c] ] != 0.0 {
                    for ch in 0..3 {
                        self.delta[[r, c, ch]] += update[[r, c, ch]];
                    }
                }
            }
        }
    }

    /// Maximum absolute entry of δ.
    pub fn max_abs(&self) -> f64 {
        self.delta.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// A source image merged with the visual prompt.
#[derive(Debug, Clone)]
pub struct PromptedImage {
    pub pixels: ImageTensor,
    pub source_id: Option<String>,
}

fn check_geometry(height: usize, width: usize, p: usize) -> Result<()> {
    if 2 * p >= height.min(width) {
        return Err(Error::Geometry(format!(
            "border width {p} leaves no interior for {height}x{width} (need 2p < min(H, W))"
        )));
    }
    Ok(())
}

/// Binary mask with ones on the border ring of width `p` and zeros inside.
///
/// `mask[r][c] == 1` iff `r < p || r >= H−p || c < p || c >= W−p`.
pub fn build_border_mask(height: usize, width: usize, p: usize) -> Result<BorderMask> {
    check_geometry(height, width, p)?;
    let mut mask = Array2::zeros((height, width));
    for r in 0..height {
        for c in 0..width {
            if r < p || r >= height - p || c < p || c >= width - p {
                mask[[r, c]] = 1.0;
            }
        }
    }
    Ok(mask)
}

/// Number of trainable prompt parameters: `3(HW − H′W′) = 6p(H+W) − 12p²`.
pub fn prompt_param_count(height: usize, width: usize, p: usize) -> Result<u64> {
    check_geometry(height, width, p)?;
    let (h, w, p) = (height as u64, width as u64, p as u64);
    Ok(6 * p * (h + w) - 12 * p * p)
}

/// Bilinear resize with half-pixel sampling (corner alignment disabled).
///
/// Interpolation is lerp-of-lerps, so constant images stay exactly constant
/// and same-size resizes are the identity.
pub fn resize_bilinear(src: &ImageTensor, out_h: usize, out_w: usize) -> ImageTensor {
    let (src_h, src_w, _) = src.dim();
    let mut out = Array3::zeros((out_h, out_w, 3));
    let scale_y = src_h as f64 / out_h as f64;
    let scale_x = src_w as f64 / out_w as f64;
    for r in 0..out_h {
        let sy = ((r as f64 + 0.5) * scale_y - 0.5).clamp(0.0, (src_h - 1) as f64);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(src_h - 1);
        let fy = sy - y0 as f64;
        for c in 0..out_w {
            let sx = ((c as f64 + 0.5) * scale_x - 0.5).clamp(0.0, (src_w - 1) as f64);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(src_w - 1);
            let fx = sx - x0 as f64;
            for ch in 0..3 {
                let a = src[[y0, x0, ch]];
                let b = src[[y0, x1, ch]];
                let c2 = src[[y1, x0, ch]];
                let d = src[[y1, x1, ch]];
                let top = a + fx * (b - a);
                let bottom = c2 + fx * (d - c2);
                out[[r, c, ch]] = top + fy * (bottom - top);
            }
        }
    }
    out
}

/// Shrinks a source image to `(H−2p)×(W−2p)` so the border ring stays free.
pub fn resize_for_prompt(src: &ImageTensor, height: usize, width: usize, p: usize) -> Result<ImageTensor> {
    check_geometry(height, width, p)?;
    Ok(resize_bilinear(src, height - 2 * p, width - 2 * p))
}

/// Merges a source image with the prompt: centered resize plus masked δ.
///
/// The interior of the output equals `resize_for_prompt(x, p)` bit-exactly;
/// the border equals δ (the canvas under the ring is zero).
pub fn apply_input_transform(src: &ImageTensor, vp: &VisualPrompt) -> Result<PromptedImage> {
    let (h, w) = vp.geometry();
    let p = vp.border_width();
    let resized = resize_for_prompt(src, h, w, p)?;
    let mut pixels = Array3::zeros((h, w, 3));
    pixels
        .slice_mut(s![p..h - p, p..w - p, ..])
        .assign(&resized);
    // M_p ⊙ δ == δ by the interior-zero invariant.
    pixels += vp.delta();
    Ok(PromptedImage { pixels, source_id: None })
}
