//! Toy generative prior: a mapping network defining the latent W
//! distribution, a multi-style synthesis network producing images, prior
//! sample banks, and mean-latent initialization.
//!
//! The architecture is fixed in-repo: the mapping network is a 3-layer
//! perceptron with leaky-rectifier units (slope 0.2), and synthesis starts
//! from a learned 4x4 base followed by two nearest-neighbor-upsample +
//! 3x3 convolution stages, each modulated multiplicatively by an affine
//! function of its own style vector, with a logistic squash to [0,1] at the
//! output. Weights are generated from a seed and frozen; there is no
//! training path for the generator.

use crate::error::{Error, Result};
use crate::image::Image;
use crate::mmd::SampleSet;
use crate::rng::{derive_seed, sample_standard_normal, Rng};
use crate::tensor::Tensor;

/// The k per-layer style vectors being optimized, stored as a [k, d] set.
pub type LatentSet = SampleSet;

const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone)]
pub struct LinearLayer {
    pub weight: Tensor, // [out, in]
    pub bias: Tensor,   // [out]
}

impl LinearLayer {
    pub fn new(weight: Tensor, bias: Tensor) -> Result<Self> {
        if weight.rank() != 2 || bias.rank() != 1 || weight.shape()[0] != bias.shape()[0] {
            return Err(Error::ShapeMismatch(format!(
                "linear layer: weight {:?} vs bias {:?}",
                weight.shape(),
                bias.shape()
            )));
        }
        Ok(LinearLayer { weight, bias })
    }

    fn out_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    fn in_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    fn forward(&self, x: &[f64]) -> Vec<f64> {
        let (out, inp) = (self.out_dim(), self.in_dim());
        let w = self.weight.data();
        let mut y = vec![0.0; out];
        for o in 0..out {
            let mut acc = self.bias.data()[o] as f64;
            let row = &w[o * inp..(o + 1) * inp];
            for i in 0..inp {
                acc += row[i] as f64 * x[i];
            }
            y[o] = acc;
        }
        y
    }

    /// dL/dx given dL/dy.
    fn backward_input(&self, dy: &[f64]) -> Vec<f64> {
        let (out, inp) = (self.out_dim(), self.in_dim());
        let w = self.weight.data();
        let mut dx = vec![0.0; inp];
        for o in 0..out {
            let row = &w[o * inp..(o + 1) * inp];
            let g = dy[o];
            for i in 0..inp {
                dx[i] += row[i] as f64 * g;
            }
        }
        dx
    }
}

/// Mapping network z -> w. Deterministic given its weights and input.
#[derive(Debug, Clone)]
pub struct MappingNetwork {
    layers: Vec<LinearLayer>,
    seed: Option<u64>,
}

impl MappingNetwork {
    pub fn from_layers(layers: Vec<LinearLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("mapping network needs >= 1 layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::ShapeMismatch(format!(
                    "layer chain breaks: {} -> {}",
                    pair[0].out_dim(),
                    pair[1].in_dim()
                )));
            }
        }
        Ok(MappingNetwork { layers, seed: None })
    }

    /// The fixed toy architecture: 3 layers z_dim -> w_dim -> w_dim -> w_dim,
    /// weights generated from `seed` and frozen.
    pub fn toy(z_dim: usize, w_dim: usize, seed: u64) -> Result<Self> {
        if z_dim == 0 || w_dim == 0 {
            return Err(Error::InvalidArgument("dims must be positive".into()));
        }
        let mut rng = Rng::from_seed(derive_seed(seed, &[1]));
        let dims = [z_dim, w_dim, w_dim, w_dim];
        let mut layers = Vec::with_capacity(3);
        for l in 0..3 {
            let (inp, out) = (dims[l], dims[l + 1]);
            let gain = (2.0 / inp as f64).sqrt();
            let w: Vec<f32> = (0..out * inp)
                .map(|_| (rng.standard_normal() * gain) as f32)
                .collect();
            let b: Vec<f32> = (0..out)
                .map(|_| (rng.standard_normal() * 0.2) as f32)
                .collect();
            layers.push(LinearLayer::new(
                Tensor::from_vec(vec![out, inp], w)?,
                Tensor::from_vec(vec![out], b)?,
            )?);
        }
        let mut net = MappingNetwork::from_layers(layers)?;
        net.seed = Some(seed);
        Ok(net)
    }

    /// Single identity layer; w == z. Test fixture.
    pub fn identity(dim: usize) -> Result<Self> {
        let mut w = vec![0.0f32; dim * dim];
        for i in 0..dim {
            w[i * dim + i] = 1.0;
        }
        MappingNetwork::from_layers(vec![LinearLayer::new(
            Tensor::from_vec(vec![dim, dim], w)?,
            Tensor::zeros(vec![dim])?,
        )?])
    }

    pub fn z_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn w_dim(&self) -> usize {
        self.layers.last().expect("non-empty").out_dim()
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn layers(&self) -> &[LinearLayer] {
        &self.layers
    }

    fn forward_cached(&self, z: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
        let last = self.layers.len() - 1;
        let mut pres = Vec::with_capacity(self.layers.len());
        let mut act: Vec<f64> = z.to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            let pre = layer.forward(&act);
            act = if l < last {
                pre.iter()
                    .map(|&p| if p >= 0.0 { p } else { LEAKY_SLOPE * p })
                    .collect()
            } else {
                pre.clone()
            };
            pres.push(pre);
        }
        (act, pres)
    }

    pub fn map_latent(&self, z: &Tensor) -> Result<Tensor> {
        if z.rank() != 1 || z.len() != self.z_dim() {
            return Err(Error::ShapeMismatch(format!(
                "expected z of shape [{}], got {:?}",
                self.z_dim(),
                z.shape()
            )));
        }
        let zin: Vec<f64> = z.data().iter().map(|&v| v as f64).collect();
        let (w, _) = self.forward_cached(&zin);
        Tensor::from_f64(vec![self.w_dim()], &w)
    }

    /// Vector-Jacobian product: dL/dz given dL/dw.
    pub fn map_latent_vjp(&self, z: &Tensor, upstream: &Tensor) -> Result<Tensor> {
        if upstream.rank() != 1 || upstream.len() != self.w_dim() {
            return Err(Error::ShapeMismatch(format!(
                "expected upstream of shape [{}], got {:?}",
                self.w_dim(),
                upstream.shape()
            )));
        }
        let zin: Vec<f64> = z.data().iter().map(|&v| v as f64).collect();
        let (_, pres) = self.forward_cached(&zin);
        let last = self.layers.len() - 1;
        let mut g: Vec<f64> = upstream.data().iter().map(|&v| v as f64).collect();
        for l in (0..self.layers.len()).rev() {
            if l < last {
                for (gi, &p) in g.iter_mut().zip(&pres[l]) {
                    if p < 0.0 {
                        *gi *= LEAKY_SLOPE;
                    }
                }
            }
            g = self.layers[l].backward_input(&g);
        }
        Tensor::from_f64(vec![self.z_dim()], &g)
    }

    /// Smallest |pre-activation| over all hidden rectifier units for this
    /// input. Gradient checks use it to stay clear of the rectifier kink.
    pub fn preactivation_margin(&self, z: &Tensor) -> Result<f64> {
        let zin: Vec<f64> = z.data().iter().map(|&v| v as f64).collect();
        let (_, pres) = self.forward_cached(&zin);
        let last = self.layers.len() - 1;
        let mut margin = f64::INFINITY;
        for pre in pres.iter().take(last) {
            for &p in pre {
                margin = margin.min(p.abs());
            }
        }
        Ok(margin)
    }
}

/// A fixed set of mapped prior samples standing in for the W distribution.
#[derive(Debug, Clone)]
pub struct PriorBank {
    samples: SampleSet,
    seed: u64,
}

impl PriorBank {
    pub fn samples(&self) -> &SampleSet {
        &self.samples
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn count(&self) -> usize {
        self.samples.count()
    }

    pub fn dim(&self) -> usize {
        self.samples.dim()
    }

    /// Mean Euclidean norm of the bank rows; the data-driven sphere radius.
    pub fn mean_row_norm(&self) -> f64 {
        let n = self.samples.count();
        let mut acc = 0.0;
        for i in 0..n {
            acc += self.samples.row(i).iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
        }
        acc / n as f64
    }
}

/// Draws `count` Gaussian latents and maps them into W space. The bank
/// records the generator's construction seed as its provenance.
pub fn sample_prior_bank(net: &MappingNetwork, count: usize, rng: &mut Rng) -> Result<PriorBank> {
    if count < 2 {
        return Err(Error::InvalidArgument(format!(
            "prior bank needs >= 2 samples, got {count}"
        )));
    }
    let seed = rng.seed();
    let d = net.w_dim();
    let mut flat = Vec::with_capacity(count * d);
    for _ in 0..count {
        let z = sample_standard_normal(rng, vec![net.z_dim()])?;
        let w = net.map_latent(&z)?;
        flat.extend_from_slice(w.data());
    }
    Ok(PriorBank {
        samples: SampleSet::new(Tensor::from_vec(vec![count, d], flat)?)?,
        seed,
    })
}

/// Sample mean of mapped latents over `n_samples` Gaussian draws.
pub fn mean_latent(net: &MappingNetwork, n_samples: usize, rng: &mut Rng) -> Result<Tensor> {
    if n_samples == 0 {
        return Err(Error::InvalidArgument("n_samples must be >= 1".into()));
    }
    let d = net.w_dim();
    let mut acc = vec![0.0f64; d];
    for _ in 0..n_samples {
        let z = sample_standard_normal(rng, vec![net.z_dim()])?;
        let w = net.map_latent(&z)?;
        for (a, &v) in acc.iter_mut().zip(w.data()) {
            *a += v as f64;
        }
    }
    for a in &mut acc {
        *a /= n_samples as f64;
    }
    Tensor::from_f64(vec![d], &acc)
}

// ---------------------------------------------------------------------------
// Synthesis network
// ---------------------------------------------------------------------------

/// One modulated convolution site: input channels are scaled by an affine
/// function of the site's style vector, then convolved 3x3 (zero padding).
#[derive(Debug, Clone)]
struct ModulatedConv {
    affine_w: Tensor, // [c_in, d]
    affine_b: Tensor, // [c_in]
    conv_w: Tensor,   // [c_out, c_in, 3, 3]
    conv_b: Tensor,   // [c_out]
}

impl ModulatedConv {
    fn c_in(&self) -> usize {
        self.affine_b.len()
    }

    fn c_out(&self) -> usize {
        self.conv_b.len()
    }

    fn modulation(&self, style: &[f32]) -> Vec<f64> {
        let (c, d) = (self.c_in(), style.len());
        let aw = self.affine_w.data();
        let ab = self.affine_b.data();
        let mut m = vec![0.0; c];
        for ch in 0..c {
            let mut acc = ab[ch] as f64;
            for t in 0..d {
                acc += aw[ch * d + t] as f64 * style[t] as f64;
            }
            m[ch] = acc;
        }
        m
    }
}

#[derive(Debug, Clone, Copy)]
struct MapDims {
    c: usize,
    h: usize,
    w: usize,
}

fn conv3x3(input: &[f64], dims: MapDims, weight: &Tensor, bias: &Tensor) -> (Vec<f64>, MapDims) {
    let c_out = bias.len();
    let (ci, h, w) = (dims.c, dims.h, dims.w);
    let wd = weight.data();
    let mut out = vec![0.0f64; c_out * h * w];
    for co in 0..c_out {
        let b = bias.data()[co] as f64;
        let out_plane = &mut out[co * h * w..(co + 1) * h * w];
        for v in out_plane.iter_mut() {
            *v = b;
        }
        for cin in 0..ci {
            let in_plane = &input[cin * h * w..(cin + 1) * h * w];
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let wv = wd[((co * ci + cin) * 3 + (dy + 1) as usize) * 3 + (dx + 1) as usize]
                        as f64;
                    if wv == 0.0 {
                        continue;
                    }
                    let r0 = (-dy).max(0) as usize;
                    let r1 = (h as i64 - dy).min(h as i64) as usize;
                    for r in r0..r1 {
                        let src_row = &in_plane[((r as i64 + dy) as usize) * w..];
                        let dst_row = &mut out_plane[r * w..(r + 1) * w];
                        let c0 = (-dx).max(0) as usize;
                        let c1 = (w as i64 - dx).min(w as i64) as usize;
                        for c in c0..c1 {
                            dst_row[c] += wv * src_row[(c as i64 + dx) as usize];
                        }
                    }
                }
            }
        }
    }
    (out, MapDims { c: c_out, h, w })
}

/// dL/dinput for conv3x3 given dL/doutput.
fn conv3x3_backward_input(
    dout: &[f64],
    dims_in: MapDims,
    weight: &Tensor,
    c_out: usize,
) -> Vec<f64> {
    let (ci, h, w) = (dims_in.c, dims_in.h, dims_in.w);
    let wd = weight.data();
    let mut din = vec![0.0f64; ci * h * w];
    for co in 0..c_out {
        let dout_plane = &dout[co * h * w..(co + 1) * h * w];
        for cin in 0..ci {
            let din_plane = &mut din[cin * h * w..(cin + 1) * h * w];
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let wv = wd[((co * ci + cin) * 3 + (dy + 1) as usize) * 3 + (dx + 1) as usize]
                        as f64;
                    if wv == 0.0 {
                        continue;
                    }
                    let r0 = (-dy).max(0) as usize;
                    let r1 = (h as i64 - dy).min(h as i64) as usize;
                    for r in r0..r1 {
                        let dst_row = &mut din_plane[((r as i64 + dy) as usize) * w..];
                        let src_row = &dout_plane[r * w..(r + 1) * w];
                        let c0 = (-dx).max(0) as usize;
                        let c1 = (w as i64 - dx).min(w as i64) as usize;
                        for c in c0..c1 {
                            dst_row[(c as i64 + dx) as usize] += wv * src_row[c];
                        }
                    }
                }
            }
        }
    }
    din
}

fn upsample2(input: &[f64], dims: MapDims) -> (Vec<f64>, MapDims) {
    let (c, h, w) = (dims.c, dims.h, dims.w);
    let (oh, ow) = (h * 2, w * 2);
    let mut out = vec![0.0f64; c * oh * ow];
    for ch in 0..c {
        for r in 0..oh {
            for cc in 0..ow {
                out[(ch * oh + r) * ow + cc] = input[(ch * h + r / 2) * w + cc / 2];
            }
        }
    }
    (out, MapDims { c, h: oh, w: ow })
}

fn upsample2_backward(dout: &[f64], dims_in: MapDims) -> Vec<f64> {
    let (c, h, w) = (dims_in.c, dims_in.h, dims_in.w);
    let (oh, ow) = (h * 2, w * 2);
    let mut din = vec![0.0f64; c * h * w];
    for ch in 0..c {
        for r in 0..oh {
            for cc in 0..ow {
                din[(ch * h + r / 2) * w + cc / 2] += dout[(ch * oh + r) * ow + cc];
            }
        }
    }
    din
}

/// Frozen toy synthesis network: learned 4x4 base, two upsample+conv stages,
/// and an output head, each site modulated by its own style vector.
#[derive(Debug, Clone)]
pub struct SynthesisNetwork {
    style_dim: usize,
    base: Tensor, // [c0, 4, 4]
    base_affine_w: Tensor,
    base_affine_b: Tensor,
    stages: Vec<ModulatedConv>,
    head: ModulatedConv,
    seed: u64,
}

impl SynthesisNetwork {
    /// Builds the fixed architecture from a seed: base 4x4 with `channels`
    /// feature maps, two modulated upsample+conv stages, and a modulated
    /// head producing `out_channels` maps at 16x16.
    pub fn toy(style_dim: usize, channels: usize, out_channels: usize, seed: u64) -> Result<Self> {
        if out_channels != 1 && out_channels != 3 {
            return Err(Error::InvalidArgument(
                "out_channels must be 1 or 3".into(),
            ));
        }
        if style_dim == 0 || channels == 0 {
            return Err(Error::InvalidArgument("dims must be positive".into()));
        }
        let mut rng = Rng::from_seed(derive_seed(seed, &[2]));
        let d = style_dim;
        let normal_tensor = |rng: &mut Rng, shape: Vec<usize>, scale: f64| -> Result<Tensor> {
            let n: usize = shape.iter().product();
            let data: Vec<f32> = (0..n).map(|_| (rng.standard_normal() * scale) as f32).collect();
            Tensor::from_vec(shape, data)
        };
        let affine = |rng: &mut Rng, c: usize| -> Result<(Tensor, Tensor)> {
            let w = normal_tensor(rng, vec![c, d], 0.5 / (d as f64).sqrt())?;
            let b = Tensor::filled(vec![c], 1.0)?;
            Ok((w, b))
        };

        let base = normal_tensor(&mut rng, vec![channels, 4, 4], 1.0)?;
        let (base_affine_w, base_affine_b) = affine(&mut rng, channels)?;

        let mut stages = Vec::with_capacity(2);
        for _ in 0..2 {
            let (aw, ab) = affine(&mut rng, channels)?;
            let gain = (2.0 / (channels as f64 * 9.0)).sqrt();
            stages.push(ModulatedConv {
                affine_w: aw,
                affine_b: ab,
                conv_w: normal_tensor(&mut rng, vec![channels, channels, 3, 3], gain * 1.6)?,
                conv_b: Tensor::zeros(vec![channels])?,
            });
        }
        let (haw, hab) = affine(&mut rng, channels)?;
        let gain = (2.0 / (channels as f64 * 9.0)).sqrt();
        let head = ModulatedConv {
            affine_w: haw,
            affine_b: hab,
            conv_w: normal_tensor(&mut rng, vec![out_channels, channels, 3, 3], gain * 2.0)?,
            conv_b: Tensor::zeros(vec![out_channels])?,
        };

        Ok(SynthesisNetwork {
            style_dim,
            base,
            base_affine_w,
            base_affine_b,
            stages,
            head,
            seed,
        })
    }

    /// Number of style inputs (base + stages + head).
    pub fn style_count(&self) -> usize {
        self.stages.len() + 2
    }

    pub fn style_dim(&self) -> usize {
        self.style_dim
    }

    pub fn out_channels(&self) -> usize {
        self.head.c_out()
    }

    pub fn output_size(&self) -> (usize, usize) {
        let side = 4 << self.stages.len();
        (side, side)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn check_styles(&self, styles: &LatentSet) -> Result<()> {
        if styles.count() != self.style_count() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} styles, got {}",
                self.style_count(),
                styles.count()
            )));
        }
        if styles.dim() != self.style_dim {
            return Err(Error::ShapeMismatch(format!(
                "expected style dim {}, got {}",
                self.style_dim,
                styles.dim()
            )));
        }
        Ok(())
    }

    fn base_modulation(&self, style: &[f32]) -> Vec<f64> {
        let (c, d) = (self.base.shape()[0], self.style_dim);
        let aw = self.base_affine_w.data();
        let ab = self.base_affine_b.data();
        let mut m = vec![0.0; c];
        for ch in 0..c {
            let mut acc = ab[ch] as f64;
            for t in 0..d {
                acc += aw[ch * d + t] as f64 * style[t] as f64;
            }
            m[ch] = acc;
        }
        m
    }

    fn forward_cached(&self, styles: &LatentSet) -> ForwardTrace {
        let c0 = self.base.shape()[0];
        let mut dims = MapDims { c: c0, h: 4, w: 4 };

        let base_mod = self.base_modulation(styles.row(0));
        let mut x: Vec<f64> = Vec::with_capacity(c0 * 16);
        for ch in 0..c0 {
            for i in 0..16 {
                x.push(self.base.data()[ch * 16 + i] as f64 * base_mod[ch]);
            }
        }

        let mut stage_caches = Vec::with_capacity(self.stages.len());
        for (s, stage) in self.stages.iter().enumerate() {
            let (up, up_dims) = upsample2(&x, dims);
            let m = stage.modulation(styles.row(s + 1));
            let mut modded = up.clone();
            for ch in 0..up_dims.c {
                let plane = &mut modded[ch * up_dims.h * up_dims.w..(ch + 1) * up_dims.h * up_dims.w];
                for v in plane.iter_mut() {
                    *v *= m[ch];
                }
            }
            let (pre, out_dims) = conv3x3(&modded, up_dims, &stage.conv_w, &stage.conv_b);
            let act: Vec<f64> = pre.iter().map(|&v| v.tanh()).collect();
            stage_caches.push(StageCache {
                upsampled: up,
                up_dims,
                modulation: m,
                pre_activation: pre,
            });
            x = act;
            dims = out_dims;
        }

        let head_style = styles.row(self.style_count() - 1);
        let hm = self.head.modulation(head_style);
        let mut modded = x.clone();
        for ch in 0..dims.c {
            let plane = &mut modded[ch * dims.h * dims.w..(ch + 1) * dims.h * dims.w];
            for v in plane.iter_mut() {
                *v *= hm[ch];
            }
        }
        let (logits, out_dims) = conv3x3(&modded, dims, &self.head.conv_w, &self.head.conv_b);
        let pixels: Vec<f64> = logits.iter().map(|&v| 1.0 / (1.0 + (-v).exp())).collect();

        ForwardTrace {
            stage_caches,
            feature_in: x,
            feature_dims: dims,
            head_mod: hm,
            out_dims,
            pixels,
        }
    }
}

struct StageCache {
    upsampled: Vec<f64>,
    up_dims: MapDims,
    modulation: Vec<f64>,
    pre_activation: Vec<f64>,
}

struct ForwardTrace {
    stage_caches: Vec<StageCache>,
    feature_in: Vec<f64>, // input to the head (post-activation of last stage)
    feature_dims: MapDims,
    head_mod: Vec<f64>,
    out_dims: MapDims,
    pixels: Vec<f64>, // [c][h][w]
}

/// Runs the synthesis network; output values lie strictly inside (0, 1).
pub fn synthesize(net: &SynthesisNetwork, styles: &LatentSet) -> Result<Image> {
    net.check_styles(styles)?;
    let trace = net.forward_cached(styles);
    let MapDims { c, h, w } = trace.out_dims;
    // [c][h][w] -> [h][w][c]
    let mut data = vec![0.0f32; c * h * w];
    for ch in 0..c {
        for r in 0..h {
            for cc in 0..w {
                data[(r * w + cc) * c + ch] = trace.pixels[(ch * h + r) * w + cc] as f32;
            }
        }
    }
    Image::new(Tensor::from_vec(vec![h, w, c], data)?)
}

/// Exact vector-Jacobian product of [`synthesize`] with respect to the
/// styles: given dL/dimage (shape [h, w, c]), returns dL/dstyles [k, d].
pub fn synthesize_vjp(
    net: &SynthesisNetwork,
    styles: &LatentSet,
    upstream: &Tensor,
) -> Result<Tensor> {
    net.check_styles(styles)?;
    let (h, w) = net.output_size();
    let c = net.out_channels();
    if upstream.shape() != [h, w, c] {
        return Err(Error::ShapeMismatch(format!(
            "expected upstream [{h}, {w}, {c}], got {:?}",
            upstream.shape()
        )));
    }
    let trace = net.forward_cached(styles);
    let d = net.style_dim();
    let k = net.style_count();
    let mut style_grads = vec![0.0f64; k * d];

    // Head: sigmoid, conv, modulation.
    let mut dlogits = vec![0.0f64; c * h * w];
    for ch in 0..c {
        for r in 0..h {
            for cc in 0..w {
                let p = trace.pixels[(ch * h + r) * w + cc];
                dlogits[(ch * h + r) * w + cc] =
                    upstream.data()[(r * w + cc) * c + ch] as f64 * p * (1.0 - p);
            }
        }
    }
    let fd = trace.feature_dims;
    let dmodded = conv3x3_backward_input(&dlogits, fd, &net.head.conv_w, c);
    let plane = fd.h * fd.w;
    // d modulation and d feature.
    let mut dfeat = vec![0.0f64; fd.c * plane];
    {
        let mut dmod = vec![0.0f64; fd.c];
        for ch in 0..fd.c {
            let mut acc = 0.0;
            for i in 0..plane {
                let idx = ch * plane + i;
                acc += dmodded[idx] * trace.feature_in[idx];
                dfeat[idx] = dmodded[idx] * trace.head_mod[ch];
            }
            dmod[ch] = acc;
        }
        let aw = net.head.affine_w.data();
        let gk = &mut style_grads[(k - 1) * d..k * d];
        for ch in 0..fd.c {
            for t in 0..d {
                gk[t] += aw[ch * d + t] as f64 * dmod[ch];
            }
        }
    }

    // Stages in reverse.
    let mut dact = dfeat;
    for (s, stage) in net.stages.iter().enumerate().rev() {
        let cache = &trace.stage_caches[s];
        let up_dims = cache.up_dims;
        let plane = up_dims.h * up_dims.w;
        // through tanh
        let mut dpre = dact;
        for (g, &pre) in dpre.iter_mut().zip(&cache.pre_activation) {
            let t = pre.tanh();
            *g *= 1.0 - t * t;
        }
        let dmodded = conv3x3_backward_input(&dpre, up_dims, &stage.conv_w, up_dims.c);
        let mut dup = vec![0.0f64; up_dims.c * plane];
        let mut dmod = vec![0.0f64; up_dims.c];
        for ch in 0..up_dims.c {
            let mut acc = 0.0;
            for i in 0..plane {
                let idx = ch * plane + i;
                acc += dmodded[idx] * cache.upsampled[idx];
                dup[idx] = dmodded[idx] * cache.modulation[ch];
            }
            dmod[ch] = acc;
        }
        let aw = stage.affine_w.data();
        let gk = &mut style_grads[(s + 1) * d..(s + 2) * d];
        for ch in 0..up_dims.c {
            for t in 0..d {
                gk[t] += aw[ch * d + t] as f64 * dmod[ch];
            }
        }
        let low_dims = MapDims {
            c: up_dims.c,
            h: up_dims.h / 2,
            w: up_dims.w / 2,
        };
        dact = upsample2_backward(&dup, low_dims);
    }

    // Base modulation.
    {
        let c0 = net.base.shape()[0];
        let mut dmod = vec![0.0f64; c0];
        for ch in 0..c0 {
            let mut acc = 0.0;
            for i in 0..16 {
                acc += dact[ch * 16 + i] * net.base.data()[ch * 16 + i] as f64;
            }
            dmod[ch] = acc;
        }
        let aw = net.base_affine_w.data();
        let gk = &mut style_grads[0..d];
        for ch in 0..c0 {
            for t in 0..d {
                gk[t] += aw[ch * d + t] as f64 * dmod[ch];
            }
        }
    }

    Tensor::from_f64(vec![k, d], &style_grads)
}

/// k independent style vectors drawn by mapping Gaussian latents.
pub fn sample_styles(
    mapping: &MappingNetwork,
    k: usize,
    rng: &mut Rng,
) -> Result<LatentSet> {
    let d = mapping.w_dim();
    let mut flat = Vec::with_capacity(k * d);
    for _ in 0..k {
        let z = sample_standard_normal(rng, vec![mapping.z_dim()])?;
        flat.extend_from_slice(mapping.map_latent(&z)?.data());
    }
    SampleSet::new(Tensor::from_vec(vec![k, d], flat)?)
}

/// The identical-styles configuration: one vector replicated k times.
pub fn replicate_style(w: &Tensor, k: usize) -> Result<LatentSet> {
    if w.rank() != 1 {
        return Err(Error::ShapeMismatch(format!(
            "style vector must be rank 1, got {:?}",
            w.shape()
        )));
    }
    let mut flat = Vec::with_capacity(k * w.len());
    for _ in 0..k {
        flat.extend_from_slice(w.data());
    }
    SampleSet::new(Tensor::from_vec(vec![k, w.len()], flat)?)
}
