//! Discretized mixture likelihoods over 256 pixel levels.
//!
//! The grid is fixed on [-1, 1]: level L maps to x = L/127.5 - 1 with bin
//! half-width 1/255, and the edge bins (levels 0 and 255) integrate to
//! -inf / +inf. Component CDFs are Gaussian by default; a logistic variant
//! exists for comparison and a uniform mode serves as the 8 bits/dim
//! baseline.

use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MIN_LOG_SCALE: f64 = -7.0;
pub const BIN_HALF_WIDTH: f64 = 1.0 / 255.0;
const LN_2PI: f64 = 1.8378770664093453;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MixtureKind {
    Gaussian,
    Logistic,
    /// Ignores the parameters and puts 1/256 on every level.
    Uniform,
}

impl MixtureKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(MixtureKind::Gaussian),
            "logistic" => Ok(MixtureKind::Logistic),
            "uniform" => Ok(MixtureKind::Uniform),
            other => Err(Error::Config(format!("unknown mixture kind {other:?}"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            MixtureKind::Gaussian => "gaussian",
            MixtureKind::Logistic => "logistic",
            MixtureKind::Uniform => "uniform",
        }
    }
}

/// Pixel level L as a grid coordinate in [-1, 1].
#[inline]
pub fn level_to_x(level: u8) -> f64 {
    level as f64 / 127.5 - 1.0
}

#[inline]
fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

#[inline]
fn ln_normal_pdf(z: f64) -> f64 {
    -0.5 * z * z - 0.5 * LN_2PI
}

/// log Phi(z), with the Mills-ratio asymptotic in the far lower tail.
fn ln_normal_cdf(z: f64) -> f64 {
    if z > -12.0 {
        normal_cdf(z).ln()
    } else {
        let z2 = z * z;
        -0.5 * z2 - 0.5 * LN_2PI - (-z).ln() + (1.0 - 1.0 / z2 + 3.0 / (z2 * z2)).ln()
    }
}

/// phi(z) / Phi(z), stable for any z.
fn normal_hazard_lower(z: f64) -> f64 {
    (ln_normal_pdf(z) - ln_normal_cdf(z)).exp()
}

#[inline]
fn logistic_cdf(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn ln_logistic_cdf(z: f64) -> f64 {
    -softplus(-z)
}

fn ln_logistic_pdf(z: f64) -> f64 {
    -z - 2.0 * softplus(-z)
}

fn logistic_hazard_lower(z: f64) -> f64 {
    (ln_logistic_pdf(z) - ln_logistic_cdf(z)).exp()
}

/// One pixel-channel mixture in evaluation form: normalized log-weights,
/// means, and positive scales (log-scales already clamped at -7).
#[derive(Debug, Clone)]
pub struct PixelMixture {
    pub log_weights: Vec<f64>,
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
    pub kind: MixtureKind,
}

impl PixelMixture {
    /// Normalizes raw logits and clamps raw log-scales.
    pub fn from_raw(
        logits: &[f64],
        means: &[f64],
        log_scales: &[f64],
        kind: MixtureKind,
    ) -> Result<Self> {
        let m = logits.len();
        if m == 0 || means.len() != m || log_scales.len() != m {
            return Err(Error::ShapeMismatch(
                "mixture parameter lengths differ or are empty".into(),
            ));
        }
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max
            + logits
                .iter()
                .map(|&l| (l - max).exp())
                .sum::<f64>()
                .ln();
        Ok(PixelMixture {
            log_weights: logits.iter().map(|&l| l - lse).collect(),
            means: means.to_vec(),
            scales: log_scales
                .iter()
                .map(|&ls| ls.max(MIN_LOG_SCALE).exp())
                .collect(),
            kind,
        })
    }

    pub fn component_count(&self) -> usize {
        self.log_weights.len()
    }

    /// Mixture weights after exponentiation; they sum to 1.
    pub fn weights(&self) -> Vec<f64> {
        self.log_weights.iter().map(|&lw| lw.exp()).collect()
    }

    /// log probability of one level's bin per component.
    fn component_ln_bin_prob(&self, comp: usize, level: u8) -> f64 {
        let (mu, s) = (self.means[comp], self.scales[comp]);
        let x = level_to_x(level);
        let (ln_cdf, cdf, ln_pdf): (fn(f64) -> f64, fn(f64) -> f64, fn(f64) -> f64) =
            match self.kind {
                MixtureKind::Gaussian => (ln_normal_cdf, normal_cdf, ln_normal_pdf),
                MixtureKind::Logistic => (ln_logistic_cdf, logistic_cdf, ln_logistic_pdf),
                MixtureKind::Uniform => unreachable!("uniform handled before components"),
            };
        match level {
            0 => ln_cdf((x + BIN_HALF_WIDTH - mu) / s),
            255 => ln_cdf(-((x - BIN_HALF_WIDTH - mu) / s)),
            _ => {
                let zhi = (x + BIN_HALF_WIDTH - mu) / s;
                let zlo = (x - BIN_HALF_WIDTH - mu) / s;
                let delta = cdf(zhi) - cdf(zlo);
                if delta > 1e-12 {
                    delta.ln()
                } else {
                    // Far tail: approximate the bin with its midpoint density.
                    let zmid = (x - mu) / s;
                    ln_pdf(zmid) - s.ln() + (2.0 * BIN_HALF_WIDTH).ln()
                }
            }
        }
    }

    /// log P(level) under the mixture.
    pub fn logprob(&self, level: u8) -> f64 {
        if self.kind == MixtureKind::Uniform {
            return -(256.0f64).ln();
        }
        let m = self.component_count();
        let mut terms = Vec::with_capacity(m);
        for c in 0..m {
            terms.push(self.log_weights[c] + self.component_ln_bin_prob(c, level));
        }
        let max = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return f64::NEG_INFINITY;
        }
        max + terms.iter().map(|&t| (t - max).exp()).sum::<f64>().ln()
    }

    /// Probability mass over all 256 levels.
    pub fn pmf(&self) -> [f64; 256] {
        let mut out = [0.0f64; 256];
        for (level, slot) in out.iter_mut().enumerate() {
            *slot = self.logprob(level as u8).exp();
        }
        out
    }

    /// Inverse-CDF draw from the (renormalized) PMF.
    pub fn sample_level(&self, u: f64) -> u8 {
        let pmf = self.pmf();
        let total: f64 = pmf.iter().sum();
        let target = u * total;
        let mut acc = 0.0;
        for (level, &p) in pmf.iter().enumerate() {
            acc += p;
            if acc >= target {
                return level as u8;
            }
        }
        255
    }

    /// log P(level) together with its gradient in raw parameter space:
    /// (d/dlogits, d/dmeans, d/dlog_scales). Raw log-scales at the clamp
    /// floor receive zero gradient.
    pub fn logprob_grad(&self, level: u8, raw_log_scales: &[f64]) -> (f64, MixtureGrad) {
        let m = self.component_count();
        let mut grad = MixtureGrad {
            logits: vec![0.0; m],
            means: vec![0.0; m],
            log_scales: vec![0.0; m],
        };
        if self.kind == MixtureKind::Uniform {
            return (-(256.0f64).ln(), grad);
        }

        let x = level_to_x(level);
        let mut terms = Vec::with_capacity(m);
        let mut dmu = vec![0.0f64; m];
        let mut dls = vec![0.0f64; m];
        for c in 0..m {
            let (mu, s) = (self.means[c], self.scales[c]);
            let (lnp, dmu_c, dls_c) = match level {
                0 => {
                    let z = (x + BIN_HALF_WIDTH - mu) / s;
                    let hazard = match self.kind {
                        MixtureKind::Gaussian => normal_hazard_lower(z),
                        MixtureKind::Logistic => logistic_hazard_lower(z),
                        MixtureKind::Uniform => unreachable!(),
                    };
                    let lnp = match self.kind {
                        MixtureKind::Gaussian => ln_normal_cdf(z),
                        MixtureKind::Logistic => ln_logistic_cdf(z),
                        MixtureKind::Uniform => unreachable!(),
                    };
                    // d lnP/dmu = -hazard/s ; d lnP/d ln s = -z * hazard
                    (lnp, -hazard / s, -z * hazard)
                }
                255 => {
                    let z = (x - BIN_HALF_WIDTH - mu) / s;
                    // P = 1 - CDF(z) = CDF(-z) by symmetry of both families.
                    let hazard = match self.kind {
                        MixtureKind::Gaussian => normal_hazard_lower(-z),
                        MixtureKind::Logistic => logistic_hazard_lower(-z),
                        MixtureKind::Uniform => unreachable!(),
                    };
                    let lnp = match self.kind {
                        MixtureKind::Gaussian => ln_normal_cdf(-z),
                        MixtureKind::Logistic => ln_logistic_cdf(-z),
                        MixtureKind::Uniform => unreachable!(),
                    };
                    (lnp, hazard / s, z * hazard)
                }
                _ => {
                    let zhi = (x + BIN_HALF_WIDTH - mu) / s;
                    let zlo = (x - BIN_HALF_WIDTH - mu) / s;
                    let (cdf, pdf_of): (fn(f64) -> f64, fn(f64) -> f64) = match self.kind {
                        MixtureKind::Gaussian => (normal_cdf, |z| ln_normal_pdf(z).exp()),
                        MixtureKind::Logistic => (logistic_cdf, |z| ln_logistic_pdf(z).exp()),
                        MixtureKind::Uniform => unreachable!(),
                    };
                    let delta = cdf(zhi) - cdf(zlo);
                    let (phi_hi, phi_lo) = (pdf_of(zhi), pdf_of(zlo));
                    if delta > 1e-12 {
                        (
                            delta.ln(),
                            (phi_lo - phi_hi) / (s * delta),
                            (zlo * phi_lo - zhi * phi_hi) / delta,
                        )
                    } else {
                        let zmid = (x - mu) / s;
                        let lnp = match self.kind {
                            MixtureKind::Gaussian => ln_normal_pdf(zmid),
                            MixtureKind::Logistic => ln_logistic_pdf(zmid),
                            MixtureKind::Uniform => unreachable!(),
                        } - s.ln()
                            + (2.0 * BIN_HALF_WIDTH).ln();
                        let dlnpdf_dz = match self.kind {
                            MixtureKind::Gaussian => -zmid,
                            MixtureKind::Logistic => 1.0 - 2.0 * logistic_cdf(zmid),
                            MixtureKind::Uniform => unreachable!(),
                        };
                        // lnp = ln pdf(zmid) - ln s + const
                        (lnp, dlnpdf_dz * (-1.0 / s), dlnpdf_dz * -zmid - 1.0)
                    }
                }
            };
            terms.push(self.log_weights[c] + lnp);
            dmu[c] = dmu_c;
            dls[c] = dls_c;
        }

        let max = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = terms.iter().map(|&t| (t - max).exp()).sum();
        let logprob = max + sum.ln();
        for c in 0..m {
            let resp = (terms[c] - logprob).exp();
            let weight = self.log_weights[c].exp();
            grad.logits[c] = resp - weight;
            grad.means[c] = resp * dmu[c];
            grad.log_scales[c] = if raw_log_scales[c] > MIN_LOG_SCALE {
                resp * dls[c]
            } else {
                0.0
            };
        }
        (logprob, grad)
    }
}

/// Gradient of one pixel-channel log probability in raw parameter space.
#[derive(Debug, Clone)]
pub struct MixtureGrad {
    pub logits: Vec<f64>,
    pub means: Vec<f64>,
    pub log_scales: Vec<f64>,
}

/// Per-pixel mixture parameters for a whole image, reported as f32 tensors
/// of shape [h, w, c, M]. Log-scales are stored post-clamp.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureParams {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub mixtures: usize,
    pub kind: MixtureKind,
    pub logits: Tensor,
    pub means: Tensor,
    pub log_scales: Tensor,
}

impl MixtureParams {
    /// The mixture at one pixel-channel, in evaluation form.
    pub fn at(&self, r: usize, c: usize, ch: usize) -> Result<PixelMixture> {
        if r >= self.height || c >= self.width || ch >= self.channels {
            return Err(Error::InvalidArgument(format!(
                "pixel ({r},{c},{ch}) outside {}x{}x{}",
                self.height, self.width, self.channels
            )));
        }
        let m = self.mixtures;
        let base = ((r * self.width + c) * self.channels + ch) * m;
        let to64 = |t: &Tensor| -> Vec<f64> {
            t.data()[base..base + m].iter().map(|&v| v as f64).collect()
        };
        PixelMixture::from_raw(
            &to64(&self.logits),
            &to64(&self.means),
            &to64(&self.log_scales),
            self.kind,
        )
    }
}

/// log P(level) of a pixel mixture; errors if the mixture is malformed.
pub fn discretized_mixture_logprob(params: &PixelMixture, level: u8) -> f64 {
    params.logprob(level)
}
