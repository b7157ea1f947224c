//! The restoration optimizer: spherical gradient descent over the style
//! vectors against a weighted sum of the degradation likelihood (or an L2
//! super-resolution fidelity), the squared MMD to the prior bank, and the
//! cross-style regularizer.
//!
//! The optimizer state is kept in f64 so the sphere constraint holds to
//! 1e-9 at every step; style snapshots are rounded to f32 sample sets when
//! the objective is evaluated and when the result is reported.

use crate::degradation::{nll_and_condition_grad, DegradationModel};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::mmd::{bandwidth_from_bank, bank_self_term, mmd2_grad, mmd2_with_bank_term, MmdConfig, SampleSet};
use crate::prior::{
    mean_latent, replicate_style, sample_styles, synthesize, synthesize_vjp, LatentSet,
    MappingNetwork, PriorBank, SynthesisNetwork,
};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// How the sphere radius is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RadiusRule {
    /// Mean row norm of the prior bank (data-driven default).
    BankMean,
    /// sqrt(d), the Gaussian-prior preset.
    SqrtD,
    Fixed(f64),
}

/// How the kernel bandwidth is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GammaRule {
    /// 512, the reference setting for the full-scale prior.
    Paper,
    /// Median pairwise bank distance, for priors on other scales.
    BankMedian,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RestoreConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub radius: RadiusRule,
    /// Weight of the degradation NLL (or SR fidelity) term; 1/10/50 presets.
    pub coeff: f64,
    pub lambda_mmd: f64,
    pub lambda_cross: f64,
    pub gamma: GammaRule,
    pub squared_exponent: bool,
    pub use_mmd: bool,
    pub use_mean_init: bool,
    pub use_spherical: bool,
    /// Tangential projection before the retraction; `false` renormalizes only.
    pub tangential: bool,
    pub mean_latent_samples: usize,
    pub sr_factor: usize,
    pub seed: u64,
}

impl Default for RestoreConfig {
    fn default() -> Self {
        RestoreConfig {
            steps: 100,
            learning_rate: 0.05,
            radius: RadiusRule::BankMean,
            coeff: 10.0,
            lambda_mmd: 1.0,
            lambda_cross: 0.01,
            gamma: GammaRule::BankMedian,
            squared_exponent: false,
            use_mmd: true,
            use_mean_init: true,
            use_spherical: true,
            tangential: true,
            mean_latent_samples: 10_000,
            sr_factor: 4,
            seed: 0,
        }
    }
}

impl RestoreConfig {
    fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidArgument("steps must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidArgument("learning rate must be positive".into()));
        }
        if self.coeff < 0.0 || self.lambda_mmd < 0.0 || self.lambda_cross < 0.0 {
            return Err(Error::InvalidArgument("coefficients must be non-negative".into()));
        }
        if let RadiusRule::Fixed(r) = self.radius {
            if !(r > 0.0) {
                return Err(Error::InvalidArgument("radius must be positive".into()));
            }
        }
        if self.use_mean_init && self.mean_latent_samples < 10_000 {
            return Err(Error::InvalidArgument(
                "mean-latent initialization needs >= 10000 samples".into(),
            ));
        }
        Ok(())
    }

    pub fn resolve_radius(&self, bank: &PriorBank) -> f64 {
        match self.radius {
            RadiusRule::BankMean => bank.mean_row_norm(),
            RadiusRule::SqrtD => (bank.dim() as f64).sqrt(),
            RadiusRule::Fixed(r) => r,
        }
    }

    pub fn resolve_gamma(&self, bank: &PriorBank) -> Result<f64> {
        match self.gamma {
            GammaRule::Paper => Ok(512.0),
            GammaRule::BankMedian => bandwidth_from_bank(bank.samples()),
            GammaRule::Fixed(g) if g > 0.0 => Ok(g),
            GammaRule::Fixed(g) => Err(Error::InvalidArgument(format!(
                "gamma must be positive, got {g}"
            ))),
        }
    }
}

/// One spherical descent step: project the gradient onto the tangent space
/// at `w`, take the Euclidean step, and retract back to the radius-`r`
/// sphere. The result's norm equals `r` to 1e-9.
pub fn spherical_step(w: &[f64], grad: &[f64], lr: f64, r: f64) -> Result<Vec<f64>> {
    if w.len() != grad.len() {
        return Err(Error::ShapeMismatch(format!(
            "style {} vs gradient {}",
            w.len(),
            grad.len()
        )));
    }
    if !(r > 0.0) {
        return Err(Error::InvalidArgument("radius must be positive".into()));
    }
    let norm: f64 = w.iter().map(|v| v * v).sum::<f64>().sqrt();
    if (norm - r).abs() > 1e-6 * r.max(1.0) {
        return Err(Error::InvalidArgument(format!(
            "spherical step expects |w| = {r}, got {norm}"
        )));
    }
    let radial: f64 = w.iter().zip(grad).map(|(a, b)| a * b).sum::<f64>() / (r * r);
    let moved: Vec<f64> = w
        .iter()
        .zip(grad)
        .map(|(&wi, &gi)| wi - lr * (gi - radial * wi))
        .collect();
    retract(&moved, r)
}

/// Renormalization-only variant: Euclidean step, then projection to the sphere.
pub fn renorm_step(w: &[f64], grad: &[f64], lr: f64, r: f64) -> Result<Vec<f64>> {
    let moved: Vec<f64> = w.iter().zip(grad).map(|(&wi, &gi)| wi - lr * gi).collect();
    retract(&moved, r)
}

fn retract(v: &[f64], r: f64) -> Result<Vec<f64>> {
    let n: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n < 1e-12 {
        return Err(Error::Degenerate(
            "step passed through the origin; cannot retract to the sphere".into(),
        ));
    }
    Ok(v.iter().map(|&x| x * r / n).collect())
}

/// Mean squared pairwise distance between the k styles; zero iff all equal.
pub fn cross_loss(styles: &LatentSet) -> Result<f64> {
    let k = styles.count();
    if k < 2 {
        return Err(Error::InvalidArgument("cross loss needs k >= 2 styles".into()));
    }
    let mut acc = 0.0f64;
    for i in 0..k {
        for j in (i + 1)..k {
            let (a, b) = (styles.row(i), styles.row(j));
            acc += a
                .iter()
                .zip(b)
                .map(|(&x, &y)| {
                    let d = x as f64 - y as f64;
                    d * d
                })
                .sum::<f64>();
        }
    }
    Ok(acc / (k * (k - 1) / 2) as f64)
}

/// Gradient of [`cross_loss`] with respect to every style, shape [k, d].
pub fn cross_loss_grad(styles: &LatentSet) -> Result<Tensor> {
    let (k, d) = (styles.count(), styles.dim());
    if k < 2 {
        return Err(Error::InvalidArgument("cross loss needs k >= 2 styles".into()));
    }
    let pairs = (k * (k - 1) / 2) as f64;
    let mut grad = vec![0.0f64; k * d];
    for a in 0..k {
        for b in 0..k {
            if a == b {
                continue;
            }
            let (wa, wb) = (styles.row(a), styles.row(b));
            let ga = &mut grad[a * d..(a + 1) * d];
            for t in 0..d {
                ga[t] += 2.0 * (wa[t] as f64 - wb[t] as f64) / pairs;
            }
        }
    }
    Tensor::from_f64(vec![k, d], &grad)
}

/// Box-filter downscale by an integer factor dividing both dimensions.
pub fn downscale(img: &Image, factor: usize) -> Result<Image> {
    if factor == 0 || img.height() % factor != 0 || img.width() % factor != 0 {
        return Err(Error::InvalidArgument(format!(
            "factor {factor} must divide {}x{}",
            img.height(),
            img.width()
        )));
    }
    let (h, w, c) = (img.height() / factor, img.width() / factor, img.channels());
    let norm = (factor * factor) as f64;
    Image::from_fn(h, w, c, |r, cc, ch| {
        let mut acc = 0.0f64;
        for dr in 0..factor {
            for dc in 0..factor {
                acc += img.get(r * factor + dr, cc * factor + dc, ch) as f64;
            }
        }
        (acc / norm) as f32
    })
}

/// Adjoint of [`downscale`]: spreads each low-res gradient uniformly over
/// its block, divided by factor^2 (the map is linear).
pub fn downscale_vjp(upstream: &Tensor, factor: usize, h: usize, w: usize) -> Result<Tensor> {
    let shape = upstream.shape();
    if shape.len() != 3 || shape[0] * factor != h || shape[1] * factor != w {
        return Err(Error::ShapeMismatch(format!(
            "upstream {shape:?} does not upscale to {h}x{w} by {factor}"
        )));
    }
    let c = shape[2];
    let norm = (factor * factor) as f64;
    let (lh, lw) = (shape[0], shape[1]);
    let mut out = vec![0.0f32; h * w * c];
    for r in 0..lh {
        for cc in 0..lw {
            for ch in 0..c {
                let g = upstream.data()[(r * lw + cc) * c + ch] as f64 / norm;
                for dr in 0..factor {
                    for dc in 0..factor {
                        out[((r * factor + dr) * w + (cc * factor + dc)) * c + ch] = g as f32;
                    }
                }
            }
        }
    }
    Tensor::from_vec(vec![h, w, c], out)
}

/// Fidelity mode: the learned likelihood or the L2 super-resolution baseline.
enum FidelityTerm<'a> {
    DegradationNll {
        model: &'a DegradationModel,
        observed: &'a Image,
    },
    SrL2 {
        observed_lr: &'a Image,
        factor: usize,
    },
}

/// Everything fixed across steps of one restoration run.
pub struct ObjectiveContext<'a> {
    synthesis: &'a SynthesisNetwork,
    bank: &'a PriorBank,
    fidelity: FidelityTerm<'a>,
    mmd_cfg: MmdConfig,
    bank_term: f64,
    coeff: f64,
    lambda_mmd: f64,
    lambda_cross: f64,
}

/// The three logged loss components; `total` is their sum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveParts {
    pub total: f64,
    pub fidelity: f64,
    pub mmd: f64,
    pub cross: f64,
}

impl<'a> ObjectiveContext<'a> {
    pub fn for_restore(
        synthesis: &'a SynthesisNetwork,
        model: &'a DegradationModel,
        observed: &'a Image,
        bank: &'a PriorBank,
        cfg: &RestoreConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        Self::build(
            synthesis,
            bank,
            FidelityTerm::DegradationNll { model, observed },
            cfg,
        )
    }

    pub fn for_sr(
        synthesis: &'a SynthesisNetwork,
        observed_lr: &'a Image,
        bank: &'a PriorBank,
        cfg: &RestoreConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        let (h, w) = synthesis.output_size();
        if observed_lr.height() * cfg.sr_factor != h || observed_lr.width() * cfg.sr_factor != w {
            return Err(Error::ShapeMismatch(format!(
                "observed {}x{} does not match synthesized {h}x{w} / {}",
                observed_lr.height(),
                observed_lr.width(),
                cfg.sr_factor
            )));
        }
        Self::build(
            synthesis,
            bank,
            FidelityTerm::SrL2 {
                observed_lr,
                factor: cfg.sr_factor,
            },
            cfg,
        )
    }

    fn build(
        synthesis: &'a SynthesisNetwork,
        bank: &'a PriorBank,
        fidelity: FidelityTerm<'a>,
        cfg: &RestoreConfig,
    ) -> Result<Self> {
        let mmd_cfg = MmdConfig {
            gamma: cfg.resolve_gamma(bank)?,
            squared_exponent: cfg.squared_exponent,
        };
        let lambda_mmd = if cfg.use_mmd { cfg.lambda_mmd } else { 0.0 };
        let bank_term = if lambda_mmd > 0.0 {
            bank_self_term(bank.samples(), &mmd_cfg)?
        } else {
            0.0
        };
        Ok(ObjectiveContext {
            synthesis,
            bank,
            fidelity,
            mmd_cfg,
            bank_term,
            coeff: cfg.coeff,
            lambda_mmd,
            lambda_cross: cfg.lambda_cross,
        })
    }

    pub fn gamma(&self) -> f64 {
        self.mmd_cfg.gamma
    }

    /// Objective value, its logged components, and the gradient w.r.t. the
    /// styles [k, d].
    pub fn eval(&self, styles: &LatentSet) -> Result<(ObjectiveParts, Tensor)> {
        let (k, d) = (styles.count(), styles.dim());
        let mut grad = Tensor::zeros(vec![k, d])?;

        let fidelity = match &self.fidelity {
            FidelityTerm::DegradationNll { model, observed } => {
                let synth = synthesize(self.synthesis, styles)?;
                let (nll, dimg) = nll_and_condition_grad(model, observed, &synth)?;
                if self.coeff > 0.0 {
                    let g = synthesize_vjp(self.synthesis, styles, &dimg)?;
                    grad = grad.add_scaled(&g, self.coeff)?;
                }
                nll
            }
            FidelityTerm::SrL2 { observed_lr, factor } => {
                let synth = synthesize(self.synthesis, styles)?;
                let low = downscale(&synth, *factor)?;
                let n = (low.height() * low.width() * low.channels()) as f64;
                let mut acc = 0.0f64;
                let mut residual = vec![0.0f32; low.values().len()];
                for (i, (&a, &b)) in low
                    .values()
                    .data()
                    .iter()
                    .zip(observed_lr.values().data())
                    .enumerate()
                {
                    let diff = a as f64 - b as f64;
                    acc += diff * diff;
                    residual[i] = (2.0 * diff / n) as f32;
                }
                let upstream = Tensor::from_vec(
                    vec![low.height(), low.width(), low.channels()],
                    residual,
                )?;
                let dimg =
                    downscale_vjp(&upstream, *factor, synth.height(), synth.width())?;
                if self.coeff > 0.0 {
                    let g = synthesize_vjp(self.synthesis, styles, &dimg)?;
                    grad = grad.add_scaled(&g, self.coeff)?;
                }
                acc / n
            }
        };

        let mmd = if self.lambda_mmd > 0.0 {
            let v = mmd2_with_bank_term(styles, self.bank.samples(), self.bank_term, &self.mmd_cfg)?;
            let g = mmd2_grad(styles, self.bank.samples(), &self.mmd_cfg)?;
            grad = grad.add_scaled(&g, self.lambda_mmd)?;
            self.lambda_mmd * v
        } else {
            0.0
        };

        let cross = if self.lambda_cross > 0.0 && k >= 2 {
            let v = cross_loss(styles)?;
            let g = cross_loss_grad(styles)?;
            grad = grad.add_scaled(&g, self.lambda_cross)?;
            self.lambda_cross * v
        } else {
            0.0
        };

        let fid_term = self.coeff * fidelity;
        let parts = ObjectiveParts {
            total: fid_term + mmd + cross,
            fidelity: fid_term,
            mmd,
            cross,
        };
        if !parts.total.is_finite() {
            return Err(Error::NonFinite(format!("objective value {}", parts.total)));
        }
        Ok((parts, grad))
    }
}

/// Weighted objective for a single style configuration; the public
/// entry point mirroring the optimizer's inner evaluation.
pub fn total_objective(
    styles: &LatentSet,
    observed: &Image,
    model: &DegradationModel,
    bank: &PriorBank,
    synthesis: &SynthesisNetwork,
    cfg: &RestoreConfig,
) -> Result<(ObjectiveParts, Tensor)> {
    ObjectiveContext::for_restore(synthesis, model, observed, bank, cfg)?.eval(styles)
}

/// One row of the per-step trace, recorded before each update.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub total: f64,
    pub fidelity: f64,
    pub mmd: f64,
    pub cross: f64,
    pub style_norms: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct RestoreResult {
    pub final_styles: LatentSet,
    pub final_image: Image,
    pub trace: Vec<TraceRow>,
    pub radius: f64,
    pub gamma: f64,
    /// Norms of the optimizer state after the last step.
    pub final_norms: Vec<f64>,
}

/// Renders the trace as CSV: `step,total,nll,mmd,cross`, LF endings.
pub fn trace_to_csv(trace: &[TraceRow]) -> String {
    let mut out = String::from("step,total,nll,mmd,cross\n");
    for row in trace {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            row.step, row.total, row.fidelity, row.mmd, row.cross
        ));
    }
    out
}

fn snapshot(state: &[Vec<f64>]) -> Result<LatentSet> {
    let k = state.len();
    let d = state[0].len();
    let mut flat = Vec::with_capacity(k * d);
    for row in state {
        flat.extend(row.iter().map(|&v| v as f32));
    }
    SampleSet::new(Tensor::from_vec(vec![k, d], flat)?)
}

fn optimize(
    ctx: &ObjectiveContext<'_>,
    mapping: &MappingNetwork,
    cfg: &RestoreConfig,
) -> Result<RestoreResult> {
    cfg.validate()?;
    let k = ctx.synthesis.style_count();
    let d = ctx.synthesis.style_dim();
    let r = cfg.resolve_radius(ctx.bank);
    let mut rng = Rng::from_seed(cfg.seed);

    let init: LatentSet = if cfg.use_mean_init {
        let mean = mean_latent(mapping, cfg.mean_latent_samples, &mut rng)?;
        replicate_style(&mean, k)?
    } else {
        sample_styles(mapping, k, &mut rng)?
    };
    if init.dim() != d {
        return Err(Error::ShapeMismatch(format!(
            "mapping dim {} vs synthesis style dim {d}",
            init.dim()
        )));
    }

    // f64 optimizer state; projected to the sphere when spherical mode is on.
    let mut state: Vec<Vec<f64>> = (0..k)
        .map(|i| init.row(i).iter().map(|&v| v as f64).collect())
        .collect();
    if cfg.use_spherical {
        for row in &mut state {
            *row = retract(row, r)?;
        }
    }

    let mut trace = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let styles = snapshot(&state)?;
        let (parts, grad) = ctx.eval(&styles).map_err(|e| match e {
            Error::NonFinite(msg) => Error::StepDiverged { step, reason: msg },
            other => other,
        })?;
        trace.push(TraceRow {
            step,
            total: parts.total,
            fidelity: parts.fidelity,
            mmd: parts.mmd,
            cross: parts.cross,
            style_norms: state
                .iter()
                .map(|row| row.iter().map(|v| v * v).sum::<f64>().sqrt())
                .collect(),
        });

        for (i, row) in state.iter_mut().enumerate() {
            let g: Vec<f64> = grad.row(i).iter().map(|&v| v as f64).collect();
            let updated = if cfg.use_spherical {
                if cfg.tangential {
                    spherical_step(row, &g, cfg.learning_rate, r)?
                } else {
                    renorm_step(row, &g, cfg.learning_rate, r)?
                }
            } else {
                row.iter().zip(&g).map(|(&w, &gi)| w - cfg.learning_rate * gi).collect()
            };
            if updated.iter().any(|v| !v.is_finite()) {
                return Err(Error::StepDiverged {
                    step,
                    reason: format!("style {i} became non-finite"),
                });
            }
            *row = updated;
        }
    }

    let final_norms: Vec<f64> = state
        .iter()
        .map(|row| row.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    let final_styles = snapshot(&state)?;
    let final_image = synthesize(ctx.synthesis, &final_styles)?;
    Ok(RestoreResult {
        final_styles,
        final_image,
        trace,
        radius: r,
        gamma: ctx.gamma(),
        final_norms,
    })
}

/// Restores against the learned degradation likelihood.
pub fn restore(
    observed: &Image,
    mapping: &MappingNetwork,
    synthesis: &SynthesisNetwork,
    model: &DegradationModel,
    bank: &PriorBank,
    cfg: &RestoreConfig,
) -> Result<RestoreResult> {
    let ctx = ObjectiveContext::for_restore(synthesis, model, observed, bank, cfg)?;
    optimize(&ctx, mapping, cfg)
}

/// Super-resolution: the fidelity term is the squared error between the
/// box-downscaled synthesis and the observed low-resolution image.
pub fn restore_sr(
    observed_lr: &Image,
    mapping: &MappingNetwork,
    synthesis: &SynthesisNetwork,
    bank: &PriorBank,
    cfg: &RestoreConfig,
) -> Result<RestoreResult> {
    let ctx = ObjectiveContext::for_sr(synthesis, observed_lr, bank, cfg)?;
    optimize(&ctx, mapping, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::finite_difference_gradient;
    use crate::rng::sample_standard_normal;
    use crate::tensor::relative_error;

    #[test]
    fn radial_gradient_is_a_no_op() {
        let w = vec![2.0, 0.0, 0.0];
        let g = vec![5.0, 0.0, 0.0]; // parallel to w
        let w2 = spherical_step(&w, &g, 0.1, 2.0).unwrap();
        for (a, b) in w.iter().zip(&w2) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn spherical_step_rotates_and_preserves_norm() {
        let r = 2.0f64;
        let lr = 0.05f64;
        let w = vec![r, 0.0];
        let g = vec![0.0, 1.0];
        let w2 = spherical_step(&w, &g, lr, r).unwrap();
        // Moves against the gradient: negative y, norm exactly r.
        assert!(w2[1] < 0.0);
        let norm: f64 = w2.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - r).abs() < 1e-9);
        let theta = (lr / r).atan();
        assert!((w2[0] - r * theta.cos()).abs() < 1e-12);
        assert!((w2[1] + r * theta.sin()).abs() < 1e-12);
    }

    #[test]
    fn spherical_step_requires_on_sphere_input() {
        let w = vec![1.0, 1.0];
        assert!(spherical_step(&w, &[0.0, 0.0], 0.1, 5.0).is_err());
    }

    #[test]
    fn degenerate_overshoot_is_an_error() {
        let w = vec![1.0, 0.0];
        // Renorm-only step straight through the origin.
        let g = vec![1.0, 0.0];
        assert!(renorm_step(&w, &g, 1.0, 1.0).is_err());
    }

    #[test]
    fn cross_loss_values() {
        let same = SampleSet::from_rows(&[vec![1.0, 2.0], vec![1.0, 2.0]]).unwrap();
        assert_eq!(cross_loss(&same).unwrap(), 0.0);
        let pair = SampleSet::from_rows(&[vec![0.0, 0.0], vec![3.0, 4.0]]).unwrap();
        assert!((cross_loss(&pair).unwrap() - 25.0).abs() < 1e-10);
        let single = SampleSet::from_rows(&[vec![1.0]]).unwrap();
        assert!(cross_loss(&single).is_err());
    }

    #[test]
    fn cross_loss_grad_matches_finite_differences() {
        let mut rng = Rng::from_seed(21);
        for _ in 0..10 {
            let styles = SampleSet::new(
                sample_standard_normal(&mut rng, vec![4, 5]).unwrap(),
            )
            .unwrap();
            let analytic = cross_loss_grad(&styles).unwrap();
            let numeric = finite_difference_gradient(
                |t| cross_loss(&SampleSet::new(t.clone())?),
                styles.rows(),
                1e-3,
            )
            .unwrap();
            let rel = relative_error(&analytic, &numeric, 1e-8).unwrap();
            assert!(rel < 1e-5, "rel {rel}");
        }
    }

    #[test]
    fn downscale_box_average() {
        let img = Image::from_fn(2, 2, 1, |r, c, _| ((r + c) % 2) as f32).unwrap();
        let low = downscale(&img, 2).unwrap();
        assert_eq!(low.height(), 1);
        assert!((low.get(0, 0, 0) - 0.5).abs() < 1e-7);
        let flat = Image::from_fn(4, 4, 1, |_, _, _| 0.25).unwrap();
        let lf = downscale(&flat, 2).unwrap();
        assert!(lf.values().data().iter().all(|&v| (v - 0.25).abs() < 1e-7));
        assert!(downscale(&img, 3).is_err());
    }

    #[test]
    fn downscale_vjp_is_exact_adjoint() {
        let mut rng = Rng::from_seed(31);
        let img = Image::from_fn(8, 8, 1, |_, _, _| rng.uniform() as f32).unwrap();
        let up = sample_standard_normal(&mut rng, vec![2, 2, 1]).unwrap();
        // <down(x), u> == <x, vjp(u)> for the linear map.
        let low = downscale(&img, 4).unwrap();
        let lhs = low.values().dot(&up).unwrap();
        let vjp = downscale_vjp(&up, 4, 8, 8).unwrap();
        let rhs = img.values().dot(&vjp).unwrap();
        assert!((lhs - rhs).abs() < 1e-6, "{lhs} vs {rhs}");
    }
}
