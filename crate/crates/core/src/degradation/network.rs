//! The causal conditional network: a downward stream (masked to rows
//! strictly above) and a rightward stream (masked to columns strictly left,
//! center-inclusive after the first layer), followed by gated conditional
//! blocks that each receive the condition image through a 1x1 injection,
//! and a 1x1 head emitting per-pixel mixture parameters.
//!
//! All feature math runs in f64 with activations cached for the hand-written
//! backward pass. Weights are stored as f32 tensors; masked kernel entries
//! are zero and stay zero because their gradients are never computed.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Which kernel entries a masked convolution may use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskKind {
    /// k x k kernel, rows strictly above center (the downward stream).
    RowsAbove,
    /// 1 x k kernel, columns strictly left of center (first rightward layer).
    StrictLeft,
    /// 1 x k kernel, columns up to and including center (later rightward layers).
    LeftInclusive,
    /// Every kernel entry; breaks causality. Audit negative control only.
    Unmasked2d,
}

impl MaskKind {
    fn kernel_dims(&self, k: usize) -> (usize, usize) {
        match self {
            MaskKind::RowsAbove | MaskKind::Unmasked2d => (k, k),
            MaskKind::StrictLeft | MaskKind::LeftInclusive => (1, k),
        }
    }

    fn taps(&self, k: usize) -> Vec<(i64, i64)> {
        let half = (k / 2) as i64;
        let mut taps = Vec::new();
        match self {
            MaskKind::RowsAbove => {
                for dy in -half..0 {
                    for dx in -half..=half {
                        taps.push((dy, dx));
                    }
                }
            }
            MaskKind::StrictLeft => {
                for dx in -half..0 {
                    taps.push((0, dx));
                }
            }
            MaskKind::LeftInclusive => {
                for dx in -half..=0 {
                    taps.push((0, dx));
                }
            }
            MaskKind::Unmasked2d => {
                for dy in -half..=half {
                    for dx in -half..=half {
                        taps.push((dy, dx));
                    }
                }
            }
        }
        taps
    }
}

#[derive(Debug, Clone, Copy)]
pub struct MapDims {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl MapDims {
    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn len(&self) -> usize {
        self.c * self.h * self.w
    }
}

/// Masked convolution with an explicit active-tap list.
#[derive(Debug, Clone)]
pub struct MaskedConv {
    pub weight: Tensor, // [c_out, c_in, kh, kw]
    pub bias: Tensor,   // [c_out]
    pub mask: MaskKind,
    pub k: usize,
    taps: Vec<(i64, i64)>,
}

impl MaskedConv {
    pub fn init(c_in: usize, c_out: usize, k: usize, mask: MaskKind, rng: &mut Rng) -> Result<Self> {
        if k % 2 == 0 {
            return Err(Error::InvalidArgument("kernel size must be odd".into()));
        }
        let taps = mask.taps(k);
        let (kh, kw) = mask.kernel_dims(k);
        let fan_in = (c_in * taps.len().max(1)) as f64;
        let scale = (1.0 / fan_in).sqrt();
        let mut weight = Tensor::zeros(vec![c_out, c_in, kh, kw])?;
        {
            let data = weight.data_mut();
            for co in 0..c_out {
                for ci in 0..c_in {
                    for &(dy, dx) in &taps {
                        let ky = (dy + (kh as i64 / 2)) as usize;
                        let kx = (dx + (kw as i64 / 2)) as usize;
                        data[((co * c_in + ci) * kh + ky) * kw + kx] =
                            (rng.standard_normal() * scale) as f32;
                    }
                }
            }
        }
        Ok(MaskedConv {
            weight,
            bias: Tensor::zeros(vec![c_out])?,
            mask,
            k,
            taps,
        })
    }

    pub fn c_out(&self) -> usize {
        self.bias.len()
    }

    pub fn c_in(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn taps(&self) -> &[(i64, i64)] {
        &self.taps
    }

    fn weight_at(&self, co: usize, ci: usize, dy: i64, dx: i64) -> f64 {
        let (kh, kw) = self.mask.kernel_dims(self.k);
        let ky = (dy + (kh as i64 / 2)) as usize;
        let kx = (dx + (kw as i64 / 2)) as usize;
        self.weight.data()[((co * self.c_in() + ci) * kh + ky) * kw + kx] as f64
    }

    pub fn forward(&self, input: &[f64], dims: MapDims) -> (Vec<f64>, MapDims) {
        let (c_out, c_in) = (self.c_out(), self.c_in());
        debug_assert_eq!(dims.c, c_in);
        let (h, w) = (dims.h, dims.w);
        let plane = h * w;
        let mut out = vec![0.0f64; c_out * plane];
        for co in 0..c_out {
            let b = self.bias.data()[co] as f64;
            let out_plane = &mut out[co * plane..(co + 1) * plane];
            for v in out_plane.iter_mut() {
                *v = b;
            }
            for ci in 0..c_in {
                let in_plane = &input[ci * plane..(ci + 1) * plane];
                for &(dy, dx) in &self.taps {
                    let wv = self.weight_at(co, ci, dy, dx);
                    if wv == 0.0 {
                        continue;
                    }
                    let r0 = (-dy).max(0) as usize;
                    let r1 = ((h as i64 - dy).min(h as i64)).max(0) as usize;
                    let c0 = (-dx).max(0) as usize;
                    let c1 = ((w as i64 - dx).min(w as i64)).max(0) as usize;
                    for r in r0..r1 {
                        let src = &in_plane[((r as i64 + dy) as usize) * w..];
                        let dst = &mut out_plane[r * w..(r + 1) * w];
                        for c in c0..c1 {
                            dst[c] += wv * src[(c as i64 + dx) as usize];
                        }
                    }
                }
            }
        }
        (
            out,
            MapDims {
                c: c_out,
                h,
                w,
            },
        )
    }

    /// dL/dinput from dL/doutput.
    pub fn backward_input(&self, dout: &[f64], dims_in: MapDims) -> Vec<f64> {
        let (c_out, c_in) = (self.c_out(), self.c_in());
        let (h, w) = (dims_in.h, dims_in.w);
        let plane = h * w;
        let mut din = vec![0.0f64; c_in * plane];
        for co in 0..c_out {
            let dout_plane = &dout[co * plane..(co + 1) * plane];
            for ci in 0..c_in {
                let din_plane = &mut din[ci * plane..(ci + 1) * plane];
                for &(dy, dx) in &self.taps {
                    let wv = self.weight_at(co, ci, dy, dx);
                    if wv == 0.0 {
                        continue;
                    }
                    let r0 = (-dy).max(0) as usize;
                    let r1 = ((h as i64 - dy).min(h as i64)).max(0) as usize;
                    let c0 = (-dx).max(0) as usize;
                    let c1 = ((w as i64 - dx).min(w as i64)).max(0) as usize;
                    for r in r0..r1 {
                        let dst = &mut din_plane[((r as i64 + dy) as usize) * w..];
                        let src = &dout_plane[r * w..(r + 1) * w];
                        for c in c0..c1 {
                            dst[(c as i64 + dx) as usize] += wv * src[c];
                        }
                    }
                }
            }
        }
        din
    }

    /// Accumulates dL/dweight and dL/dbias into `grads`.
    pub fn backward_params(
        &self,
        input: &[f64],
        dout: &[f64],
        dims_in: MapDims,
        grads: &mut ConvGrads,
    ) {
        let (c_out, c_in) = (self.c_out(), self.c_in());
        let (h, w) = (dims_in.h, dims_in.w);
        let plane = h * w;
        let (kh, kw) = self.mask.kernel_dims(self.k);
        for co in 0..c_out {
            let dout_plane = &dout[co * plane..(co + 1) * plane];
            grads.bias[co] += dout_plane.iter().sum::<f64>();
            for ci in 0..c_in {
                let in_plane = &input[ci * plane..(ci + 1) * plane];
                for &(dy, dx) in &self.taps {
                    let r0 = (-dy).max(0) as usize;
                    let r1 = ((h as i64 - dy).min(h as i64)).max(0) as usize;
                    let c0 = (-dx).max(0) as usize;
                    let c1 = ((w as i64 - dx).min(w as i64)).max(0) as usize;
                    let mut acc = 0.0f64;
                    for r in r0..r1 {
                        let src = &in_plane[((r as i64 + dy) as usize) * w..];
                        let dst = &dout_plane[r * w..(r + 1) * w];
                        for c in c0..c1 {
                            acc += dst[c] * src[(c as i64 + dx) as usize];
                        }
                    }
                    let ky = (dy + (kh as i64 / 2)) as usize;
                    let kx = (dx + (kw as i64 / 2)) as usize;
                    grads.weight[((co * c_in + ci) * kh + ky) * kw + kx] += acc;
                }
            }
        }
    }

    /// Replaces this convolution with an unmasked one (fresh seeded weights
    /// on every kernel entry). Audit negative control.
    pub fn unmask(&mut self, rng: &mut Rng) {
        let (c_in, c_out) = (self.c_in(), self.c_out());
        *self = MaskedConv::init(c_in, c_out, self.k, MaskKind::Unmasked2d, rng)
            .expect("dims already validated");
    }
}

/// 1x1 convolution (a per-pixel linear map across channels).
#[derive(Debug, Clone)]
pub struct Conv1x1 {
    pub weight: Tensor, // [c_out, c_in]
    pub bias: Tensor,   // [c_out]
}

impl Conv1x1 {
    pub fn init(c_in: usize, c_out: usize, rng: &mut Rng) -> Result<Self> {
        let scale = (1.0 / c_in as f64).sqrt();
        let data: Vec<f32> = (0..c_out * c_in)
            .map(|_| (rng.standard_normal() * scale) as f32)
            .collect();
        Ok(Conv1x1 {
            weight: Tensor::from_vec(vec![c_out, c_in], data)?,
            bias: Tensor::zeros(vec![c_out])?,
        })
    }

    pub fn c_out(&self) -> usize {
        self.bias.len()
    }

    pub fn c_in(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn forward(&self, input: &[f64], dims: MapDims) -> (Vec<f64>, MapDims) {
        let (c_out, c_in) = (self.c_out(), self.c_in());
        debug_assert_eq!(dims.c, c_in);
        let plane = dims.plane();
        let mut out = vec![0.0f64; c_out * plane];
        for co in 0..c_out {
            let b = self.bias.data()[co] as f64;
            let out_plane = &mut out[co * plane..(co + 1) * plane];
            for v in out_plane.iter_mut() {
                *v = b;
            }
            for ci in 0..c_in {
                let wv = self.weight.data()[co * c_in + ci] as f64;
                if wv == 0.0 {
                    continue;
                }
                let in_plane = &input[ci * plane..(ci + 1) * plane];
                for (o, &x) in out_plane.iter_mut().zip(in_plane) {
                    *o += wv * x;
                }
            }
        }
        (
            out,
            MapDims {
                c: c_out,
                h: dims.h,
                w: dims.w,
            },
        )
    }

    pub fn backward_input(&self, dout: &[f64], plane: usize) -> Vec<f64> {
        let (c_out, c_in) = (self.c_out(), self.c_in());
        let mut din = vec![0.0f64; c_in * plane];
        for co in 0..c_out {
            let dout_plane = &dout[co * plane..(co + 1) * plane];
            for ci in 0..c_in {
                let wv = self.weight.data()[co * c_in + ci] as f64;
                let din_plane = &mut din[ci * plane..(ci + 1) * plane];
                for (d, &g) in din_plane.iter_mut().zip(dout_plane) {
                    *d += wv * g;
                }
            }
        }
        din
    }

    pub fn backward_params(
        &self,
        input: &[f64],
        dout: &[f64],
        plane: usize,
        grads: &mut ConvGrads,
    ) {
        let (c_out, c_in) = (self.c_out(), self.c_in());
        for co in 0..c_out {
            let dout_plane = &dout[co * plane..(co + 1) * plane];
            grads.bias[co] += dout_plane.iter().sum::<f64>();
            for ci in 0..c_in {
                let in_plane = &input[ci * plane..(ci + 1) * plane];
                let mut acc = 0.0;
                for (&g, &x) in dout_plane.iter().zip(in_plane) {
                    acc += g * x;
                }
                grads.weight[co * c_in + ci] += acc;
            }
        }
    }
}

/// f64 gradient buffers matching one convolution's weight and bias.
#[derive(Debug, Clone)]
pub struct ConvGrads {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvGrads {
    pub fn zeros_like(weight: &Tensor, bias: &Tensor) -> Self {
        ConvGrads {
            weight: vec![0.0; weight.len()],
            bias: vec![0.0; bias.len()],
        }
    }
}

/// Gated unit: splits 2C channels into (a, b), returns tanh(a) * sigmoid(b).
pub fn gate_forward(pre: &[f64], c: usize, plane: usize) -> Vec<f64> {
    let mut out = vec![0.0f64; c * plane];
    for ch in 0..c {
        for i in 0..plane {
            let a = pre[ch * plane + i];
            let b = pre[(c + ch) * plane + i];
            out[ch * plane + i] = a.tanh() * sigmoid(b);
        }
    }
    out
}

/// dL/dpre from dL/dgate_output.
pub fn gate_backward(pre: &[f64], dout: &[f64], c: usize, plane: usize) -> Vec<f64> {
    let mut dpre = vec![0.0f64; 2 * c * plane];
    for ch in 0..c {
        for i in 0..plane {
            let a = pre[ch * plane + i];
            let b = pre[(c + ch) * plane + i];
            let (ta, sb) = (a.tanh(), sigmoid(b));
            let g = dout[ch * plane + i];
            dpre[ch * plane + i] = g * sb * (1.0 - ta * ta);
            dpre[(c + ch) * plane + i] = g * ta * sb * (1.0 - sb);
        }
    }
    dpre
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}
