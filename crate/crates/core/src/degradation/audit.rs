//! Causality audit: perturb one degraded pixel and verify bit-exact
//! invariance of the predicted mixtures at that pixel and at every
//! raster-preceding pixel, while measuring how far the perturbation
//! propagates forward.

use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::Rng;

use super::model::{forward, DegradationModel};

#[derive(Debug, Clone)]
pub struct AuditReport {
    pub checks: usize,
    /// Largest Chebyshev distance from a perturbed pixel to an affected one.
    pub max_radius: usize,
    /// The model's architectural bound on that radius.
    pub radius_bound: usize,
}

/// Runs `checks` random perturbation trials (at least 20). Errors with the
/// offending pixel pair on any causality violation.
pub fn causality_audit(
    model: &DegradationModel,
    rng: &mut Rng,
    checks: usize,
) -> Result<AuditReport> {
    let checks = checks.max(20);
    let (h, w) = (16usize, 16usize);
    let img_ch = model.arch.image_channels;
    let mut max_radius = 0usize;

    for _ in 0..checks {
        let degraded = Image::from_fn(h, w, img_ch, |_, _, _| rng.uniform() as f32)?.quantized();
        let condition = Image::from_fn(h, w, img_ch, |_, _, _| rng.uniform() as f32)?.quantized();
        let pr = rng.below(h);
        let pc = rng.below(w);
        let pch = rng.below(img_ch);

        let mut levels = degraded.to_levels();
        let idx = (pr * w + pc) * img_ch + pch;
        // Flip to a guaranteed-different level.
        levels[idx] = levels[idx].wrapping_add(128);
        let perturbed = Image::from_levels(h, w, img_ch, &levels)?;

        let base = forward(model, &degraded, &condition)?;
        let alt = forward(model, &perturbed, &condition)?;

        let m = model.arch.mixtures;
        for r in 0..h {
            for c in 0..w {
                let same = {
                    let o = ((r * w + c) * img_ch) * m;
                    let n = img_ch * m;
                    let bits = |t: &crate::tensor::Tensor| {
                        t.data()[o..o + n].iter().map(|v| v.to_bits()).collect::<Vec<_>>()
                    };
                    bits(&base.logits) == bits(&alt.logits)
                        && bits(&base.means) == bits(&alt.means)
                        && bits(&base.log_scales) == bits(&alt.log_scales)
                };
                let before_or_at = (r, c) <= (pr, pc);
                if before_or_at && !same {
                    return Err(Error::CausalityViolation {
                        perturbed: (pr, pc),
                        affected: (r, c),
                    });
                }
                if !before_or_at && !same {
                    let radius = (r as i64 - pr as i64)
                        .abs()
                        .max((c as i64 - pc as i64).abs()) as usize;
                    max_radius = max_radius.max(radius);
                }
            }
        }
    }

    Ok(AuditReport {
        checks,
        max_radius,
        radius_bound: model.receptive_field_bound(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::degradation::model::DegradationArch;

    fn small_model(seed: u64) -> DegradationModel {
        DegradationModel::new(
            DegradationArch {
                hidden: 8,
                blocks: 2,
                mixtures: 2,
                ..Default::default()
            },
            seed,
        )
        .unwrap()
    }

    #[test]
    fn fresh_models_pass_the_audit() {
        for seed in 0..3 {
            let model = small_model(seed);
            let report = causality_audit(&model, &mut Rng::from_seed(seed + 50), 20).unwrap();
            assert!(report.max_radius <= report.radius_bound, "{report:?}");
        }
    }

    #[test]
    fn unmasked_fixture_fails_with_pixel_pair() {
        let mut model = small_model(9);
        model.disable_causal_masks();
        let err = causality_audit(&model, &mut Rng::from_seed(60), 20).unwrap_err();
        match err {
            Error::CausalityViolation { perturbed, affected } => {
                assert!(affected <= perturbed);
            }
            other => panic!("expected causality violation, got {other}"),
        }
    }

    #[test]
    fn radius_bound_counts_streams() {
        let model = small_model(1);
        // 2 blocks + input stage, kernel radius 1, two directions of spread.
        assert_eq!(model.receptive_field_bound(), 6);
    }
}
