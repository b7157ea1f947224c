//! Synthetic local degradations: block-DCT quantization (the compression
//! stand-in), additive Gaussian noise, and box blur. Every kind has a
//! bounded spatial footprint.

use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DegradationKind {
    /// Per-block orthonormal DCT, uniform coefficient quantization with
    /// step (101 - quality) / 1020, inverse DCT.
    BlockQuant { block: usize, quality: u32 },
    /// Per-pixel Gaussian noise; `quantized` snaps the result to the
    /// 256-level grid.
    AddNoise { sigma: f64, quantized: bool },
    /// Box mean over a (2r+1)^2 window with replicated edges.
    BoxBlur { radius: usize },
}

impl DegradationKind {
    pub fn validate(&self) -> Result<()> {
        match *self {
            DegradationKind::BlockQuant { block, quality } => {
                if block == 0 {
                    return Err(Error::InvalidArgument("block size must be positive".into()));
                }
                if !(1..=100).contains(&quality) {
                    return Err(Error::InvalidArgument(format!(
                        "quality must lie in [1,100], got {quality}"
                    )));
                }
            }
            DegradationKind::AddNoise { sigma, .. } => {
                if sigma < 0.0 || !sigma.is_finite() {
                    return Err(Error::InvalidArgument(format!("bad sigma {sigma}")));
                }
            }
            DegradationKind::BoxBlur { radius } => {
                if radius == 0 {
                    return Err(Error::InvalidArgument("blur radius must be >= 1".into()));
                }
            }
        }
        Ok(())
    }

    /// Chebyshev radius within which one condition pixel can influence the
    /// degraded image.
    pub fn footprint(&self) -> usize {
        match *self {
            DegradationKind::BlockQuant { block, .. } => block - 1,
            DegradationKind::AddNoise { .. } => 0,
            DegradationKind::BoxBlur { radius } => radius,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            DegradationKind::BlockQuant { .. } => "blockquant",
            DegradationKind::AddNoise { .. } => "addnoise",
            DegradationKind::BoxBlur { .. } => "boxblur",
        }
    }

    /// Applies the degradation. The output is always snapped to the
    /// 256-level grid except for `AddNoise { quantized: false }`.
    pub fn apply(&self, condition: &Image, rng: &mut Rng) -> Result<Image> {
        self.validate()?;
        match *self {
            DegradationKind::BlockQuant { block, quality } => {
                block_quantize(condition, block, quality).map(|img| img.quantized())
            }
            DegradationKind::AddNoise { sigma, quantized } => {
                let noisy = Image::from_fn(
                    condition.height(),
                    condition.width(),
                    condition.channels(),
                    |r, c, ch| {
                        let v = condition.get(r, c, ch) as f64 + sigma * rng.standard_normal();
                        v.clamp(0.0, 1.0) as f32
                    },
                )?;
                Ok(if quantized { noisy.quantized() } else { noisy })
            }
            DegradationKind::BoxBlur { radius } => box_blur(condition, radius).map(|i| i.quantized()),
        }
    }
}

/// Orthonormal DCT-II basis value for frequency u at position x in a block
/// of size f.
fn dct_basis(u: usize, x: usize, f: usize) -> f64 {
    let alpha = if u == 0 {
        (1.0 / f as f64).sqrt()
    } else {
        (2.0 / f as f64).sqrt()
    };
    alpha * (((2 * x + 1) as f64) * u as f64 * std::f64::consts::PI / (2.0 * f as f64)).cos()
}

/// Forward 2-D DCT of one f x f block.
pub fn dct_block(pixels: &[f64], f: usize) -> Vec<f64> {
    let mut coeffs = vec![0.0f64; f * f];
    for u in 0..f {
        for v in 0..f {
            let mut acc = 0.0;
            for x in 0..f {
                for y in 0..f {
                    acc += pixels[x * f + y] * dct_basis(u, x, f) * dct_basis(v, y, f);
                }
            }
            coeffs[u * f + v] = acc;
        }
    }
    coeffs
}

/// Inverse 2-D DCT of one f x f block.
pub fn idct_block(coeffs: &[f64], f: usize) -> Vec<f64> {
    let mut pixels = vec![0.0f64; f * f];
    for x in 0..f {
        for y in 0..f {
            let mut acc = 0.0;
            for u in 0..f {
                for v in 0..f {
                    acc += coeffs[u * f + v] * dct_basis(u, x, f) * dct_basis(v, y, f);
                }
            }
            pixels[x * f + y] = acc;
        }
    }
    pixels
}

/// Coefficient quantization step for a quality setting in [1,100].
pub fn quant_step(quality: u32) -> f64 {
    (101 - quality) as f64 / 1020.0
}

fn block_quantize(img: &Image, block: usize, quality: u32) -> Result<Image> {
    if img.height() % block != 0 || img.width() % block != 0 {
        return Err(Error::InvalidArgument(format!(
            "block {block} must divide image {}x{}",
            img.height(),
            img.width()
        )));
    }
    let step = quant_step(quality);
    let (h, w, c) = (img.height(), img.width(), img.channels());
    let mut out = vec![0.0f32; h * w * c];
    let mut buf = vec![0.0f64; block * block];
    for ch in 0..c {
        for br in (0..h).step_by(block) {
            for bc in (0..w).step_by(block) {
                for x in 0..block {
                    for y in 0..block {
                        buf[x * block + y] = img.get(br + x, bc + y, ch) as f64;
                    }
                }
                let mut coeffs = dct_block(&buf, block);
                for cc in coeffs.iter_mut() {
                    *cc = (*cc / step).round() * step;
                }
                let pixels = idct_block(&coeffs, block);
                for x in 0..block {
                    for y in 0..block {
                        out[((br + x) * w + (bc + y)) * c + ch] =
                            pixels[x * block + y].clamp(0.0, 1.0) as f32;
                    }
                }
            }
        }
    }
    Image::new(crate::tensor::Tensor::from_vec(vec![h, w, c], out)?)
}

fn box_blur(img: &Image, radius: usize) -> Result<Image> {
    let (h, w, c) = (img.height(), img.width(), img.channels());
    let r = radius as i64;
    Image::from_fn(h, w, c, |row, col, ch| {
        let mut acc = 0.0f64;
        let mut count = 0usize;
        for dr in -r..=r {
            for dc in -r..=r {
                let rr = (row as i64 + dr).clamp(0, h as i64 - 1) as usize;
                let cc = (col as i64 + dc).clamp(0, w as i64 - 1) as usize;
                acc += img.get(rr, cc, ch) as f64;
                count += 1;
            }
        }
        (acc / count as f64) as f32
    })
}
