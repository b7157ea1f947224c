//! Acceptance suite: one test per criterion, each printing a pass line.
//!
//! Heavy fixtures (the trained degradation models) are shared through
//! OnceLock so criteria that need the same model train it exactly once.

use std::sync::OnceLock;
use std::time::Instant;

use mrt_core::degradation::{
    causality_audit, forward, nll_bits_per_dim, train, DegradationArch, DegradationModel,
    DegradationPair, MixtureKind, PixelMixture, TrainConfig,
};
use mrt_core::exp::{
    make_toy_dataset, median, paired_unpaired_eval, rank_candidates, DegradationKind, ImageSource,
};
use mrt_core::gradcheck::finite_difference_gradient;
use mrt_core::image::Image;
use mrt_core::mmd::{
    bandwidth_from_bank, kernel_gram, mmd2, mmd2_grad, MmdConfig, SampleSet,
};
use mrt_core::prior::{
    sample_prior_bank, sample_styles, synthesize, synthesize_vjp, MappingNetwork, PriorBank,
    SynthesisNetwork,
};
use mrt_core::restore::{
    cross_loss, cross_loss_grad, restore, restore_sr, total_objective, GammaRule, RestoreConfig,
};
use mrt_core::rng::{derive_seed, sample_standard_normal, Rng};
use mrt_core::tensor::{relative_error, Tensor};

// ---------------------------------------------------------------------------
// Shared fixtures
// ---------------------------------------------------------------------------

struct PriorStack {
    mapping: MappingNetwork,
    synthesis: SynthesisNetwork,
    bank: PriorBank,
}

fn prior_stack() -> &'static PriorStack {
    static STACK: OnceLock<PriorStack> = OnceLock::new();
    STACK.get_or_init(|| {
        let mapping = MappingNetwork::toy(32, 32, 7).expect("mapping");
        let synthesis = SynthesisNetwork::toy(32, 8, 1, 7).expect("synthesis");
        let bank = sample_prior_bank(&mapping, 1000, &mut Rng::from_seed(11)).expect("bank");
        PriorStack {
            mapping,
            synthesis,
            bank,
        }
    })
}

struct TrainedFixture {
    model: DegradationModel,
    test_pairs: Vec<DegradationPair>,
    train_minutes: f64,
}

/// 2000 blockquant pairs at 16x16, plus 64 held-out test pairs.
fn trained_blockquant() -> &'static TrainedFixture {
    static FIXTURE: OnceLock<TrainedFixture> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let stack = prior_stack();
        let kind = DegradationKind::BlockQuant {
            block: 4,
            quality: 50,
        };
        let mut rng = Rng::from_seed(101);
        let mut pairs = make_toy_dataset(
            &kind,
            2064,
            &ImageSource::Prior {
                mapping: &stack.mapping,
                synthesis: &stack.synthesis,
            },
            &mut rng,
        )
        .expect("dataset");
        let test_pairs = pairs.split_off(2000);

        let mut model = DegradationModel::new(DegradationArch::default(), 1).expect("model");
        let cfg = TrainConfig {
            epochs: 6,
            batch_size: 16,
            learning_rate: 2e-3,
            ..Default::default()
        };
        let start = Instant::now();
        train(&mut model, &pairs, &cfg, &mut Rng::from_seed(2)).expect("training");
        let train_minutes = start.elapsed().as_secs_f64() / 60.0;
        TrainedFixture {
            model,
            test_pairs,
            train_minutes,
        }
    })
}

// ---------------------------------------------------------------------------
// Criterion 1: MMD oracle equivalence
// ---------------------------------------------------------------------------

fn mmd2_oracle(query: &SampleSet, bank: &SampleSet, gamma: f64) -> f64 {
    let kernel = |a: &[f32], b: &[f32]| -> f64 {
        let mut acc = 0.0f64;
        for t in 0..a.len() {
            let d = a[t] as f64 - b[t] as f64;
            acc += d * d;
        }
        (-acc.sqrt() / gamma).exp()
    };
    let (k, kp) = (query.count(), bank.count());
    let mut qq = 0.0;
    for i in 0..k {
        for j in 0..k {
            qq += kernel(query.row(i), query.row(j));
        }
    }
    let mut bb = 0.0;
    for i in 0..kp {
        for j in 0..kp {
            bb += kernel(bank.row(i), bank.row(j));
        }
    }
    let mut qb = 0.0;
    for i in 0..k {
        for j in 0..kp {
            qb += kernel(query.row(i), bank.row(j));
        }
    }
    qq / (k * k) as f64 + bb / (kp * kp) as f64 - 2.0 * qb / (k * kp) as f64
}

fn random_set(rng: &mut Rng, n: usize, d: usize) -> SampleSet {
    SampleSet::new(sample_standard_normal(rng, vec![n, d]).unwrap()).unwrap()
}

#[test]
fn criterion_01_mmd_oracle_equivalence() {
    let start = Instant::now();
    let mut rng = Rng::from_seed(1001);
    for instance in 0..200 {
        let n = 1 + rng.below(8);
        let m = 1 + rng.below(8);
        let d = 1 + rng.below(8);
        let q = random_set(&mut rng, n, d);
        let b = random_set(&mut rng, m, d);
        let gamma = 0.25 + 4.0 * rng.uniform();
        let got = mmd2(&q, &b, &MmdConfig::with_gamma(gamma)).unwrap();
        let want = mmd2_oracle(&q, &b, gamma);
        assert!(
            (got - want).abs() < 1e-10,
            "instance {instance}: {got} vs oracle {want}"
        );
    }
    let secs = start.elapsed().as_secs_f64();
    assert!(secs < 5.0, "oracle comparison took {secs:.1}s");
    println!("criterion 1 (mmd oracle equivalence, 200 instances, {secs:.2}s): pass");
}

#[test]
fn criterion_02_mmd_invariants() {
    let mut rng = Rng::from_seed(1002);
    for instance in 0..1000 {
        let n = 1 + rng.below(6);
        let m = 1 + rng.below(6);
        let d = 1 + rng.below(6);
        let x = random_set(&mut rng, n, d);
        let y = random_set(&mut rng, m, d);
        let cfg = MmdConfig::with_gamma(0.25 + 4.0 * rng.uniform());
        let xy = mmd2(&x, &y, &cfg).unwrap();
        let yx = mmd2(&y, &x, &cfg).unwrap();
        assert!((xy - yx).abs() <= 1e-12, "instance {instance}: symmetry");
        assert!(xy >= -1e-12, "instance {instance}: non-negativity ({xy})");
        let xx = mmd2(&x, &x, &cfg).unwrap();
        assert!(xx.abs() <= 1e-12, "instance {instance}: identity ({xx})");
    }
    println!("criterion 2 (mmd identity/symmetry/non-negativity, 1000 instances): pass");
}

// ---------------------------------------------------------------------------
// Criterion 3: gradient suite
// ---------------------------------------------------------------------------

#[test]
fn criterion_03_gradient_suite() {
    let start = Instant::now();

    // mmd2_grad, rel err < 1e-4.
    let mut rng = Rng::from_seed(1003);
    for instance in 0..50 {
        let (k, d, kp) = (1 + rng.below(4), 2 + rng.below(5), 1 + rng.below(5));
        let q = random_set(&mut rng, k, d);
        let b = random_set(&mut rng, kp, d);
        let cfg = MmdConfig::with_gamma(0.5 + 3.0 * rng.uniform());
        let analytic = mmd2_grad(&q, &b, &cfg).unwrap();
        let numeric = finite_difference_gradient(
            |t| mmd2(&SampleSet::new(t.clone())?, &b, &cfg),
            q.rows(),
            1e-3,
        )
        .unwrap();
        let rel = relative_error(&analytic, &numeric, 1e-8).unwrap();
        assert!(rel < 1e-4, "mmd2_grad instance {instance}: rel {rel}");
    }

    // cross_loss gradient, rel err < 1e-3.
    for instance in 0..50 {
        let (k, d) = (2 + rng.below(4), 2 + rng.below(6));
        let styles = random_set(&mut rng, k, d);
        let analytic = cross_loss_grad(&styles).unwrap();
        let numeric = finite_difference_gradient(
            |t| cross_loss(&SampleSet::new(t.clone())?),
            styles.rows(),
            1e-3,
        )
        .unwrap();
        let rel = relative_error(&analytic, &numeric, 1e-8).unwrap();
        assert!(rel < 1e-3, "cross_loss instance {instance}: rel {rel}");
    }

    // synthesize_vjp, rel err < 1e-3.
    for instance in 0..50u64 {
        let net = SynthesisNetwork::toy(8, 6, 1, 2000 + instance).unwrap();
        let mapping = MappingNetwork::toy(8, 8, 2000 + instance).unwrap();
        let mut irng = Rng::from_seed(3000 + instance);
        let styles = sample_styles(&mapping, net.style_count(), &mut irng).unwrap();
        let upstream = sample_standard_normal(&mut irng, vec![16, 16, 1]).unwrap();
        let analytic = synthesize_vjp(&net, &styles, &upstream).unwrap();
        let numeric = finite_difference_gradient(
            |t| {
                let s = SampleSet::new(t.clone())?;
                synthesize(&net, &s)?.values().dot(&upstream)
            },
            styles.rows(),
            5e-3,
        )
        .unwrap();
        let rel = relative_error(&analytic, &numeric, 1e-8).unwrap();
        assert!(rel < 1e-3, "synthesize_vjp instance {instance}: rel {rel}");
    }

    // nll_grad_wrt_condition on small models, rel err < 1e-3 (norm over the
    // full condition gradient, finite differences across every pixel).
    let arch = DegradationArch {
        hidden: 6,
        blocks: 2,
        mixtures: 3,
        ..Default::default()
    };
    for instance in 0..50u64 {
        let model = DegradationModel::new(arch, 4000 + instance).unwrap();
        let mut irng = Rng::from_seed(5000 + instance);
        let degraded =
            Image::from_fn(6, 6, 1, |_, _, _| irng.uniform() as f32).unwrap().quantized();
        let condition = Image::from_fn(6, 6, 1, |_, _, _| {
            (0.2 + 0.6 * irng.uniform()) as f32
        })
        .unwrap();
        let analytic =
            mrt_core::degradation::nll_grad_wrt_condition(&model, &degraded, &condition).unwrap();
        let numeric = finite_difference_gradient(
            |t| {
                let img = Image::new(t.clone())?;
                nll_bits_per_dim(&model, &degraded, &img)
            },
            condition.values(),
            1e-3,
        )
        .unwrap();
        let rel = relative_error(&analytic, &numeric, 1e-8).unwrap();
        assert!(rel < 1e-3, "nll_grad instance {instance}: rel {rel}");
    }

    // End-to-end total_objective gradient on the toy stack (16x16, k=4, d=32).
    let stack = prior_stack();
    let obj_arch = DegradationArch {
        hidden: 8,
        blocks: 2,
        mixtures: 3,
        ..Default::default()
    };
    for instance in 0..50u64 {
        let model = DegradationModel::new(obj_arch, 6000 + instance).unwrap();
        let mut irng = Rng::from_seed(7000 + instance);
        let observed =
            Image::from_fn(16, 16, 1, |_, _, _| irng.uniform() as f32).unwrap().quantized();
        let styles = sample_styles(&stack.mapping, 4, &mut irng).unwrap();
        let cfg = RestoreConfig {
            coeff: 1.0 + 9.0 * irng.uniform(),
            lambda_mmd: 0.5 + irng.uniform(),
            lambda_cross: 0.05 * irng.uniform(),
            gamma: GammaRule::BankMedian,
            ..Default::default()
        };
        let (_, analytic) =
            total_objective(&styles, &observed, &model, &stack.bank, &stack.synthesis, &cfg)
                .unwrap();
        let gamma = cfg.resolve_gamma(&stack.bank).unwrap();
        let mcfg = MmdConfig::with_gamma(gamma);
        let numeric = finite_difference_gradient(
            |t| {
                let s = SampleSet::new(t.clone())?;
                let synth = synthesize(&stack.synthesis, &s)?;
                let nll = nll_bits_per_dim(&model, &observed, &synth)?;
                let m = mmd2(&s, stack.bank.samples(), &mcfg)?;
                let c = cross_loss(&s)?;
                Ok(cfg.coeff * nll + cfg.lambda_mmd * m + cfg.lambda_cross * c)
            },
            styles.rows(),
            5e-3,
        )
        .unwrap();
        let rel = relative_error(&analytic, &numeric, 1e-8).unwrap();
        assert!(rel < 1e-3, "total_objective instance {instance}: rel {rel}");
    }

    let secs = start.elapsed().as_secs_f64();
    assert!(secs < 300.0, "gradient suite took {secs:.0}s");
    println!("criterion 3 (gradient suite, 5 x 50 instances, {secs:.1}s): pass");
}

// ---------------------------------------------------------------------------
// Criterion 4: mixture normalization and the uniform baseline
// ---------------------------------------------------------------------------

#[test]
fn criterion_04_mixture_normalization() {
    let arch = DegradationArch {
        hidden: 8,
        blocks: 2,
        mixtures: 5,
        ..Default::default()
    };
    let mut rng = Rng::from_seed(1004);
    for seed in 0..3u64 {
        let model = DegradationModel::new(arch, 40 + seed).unwrap();
        let degraded = Image::from_fn(16, 16, 1, |_, _, _| rng.uniform() as f32)
            .unwrap()
            .quantized();
        let condition = Image::from_fn(16, 16, 1, |_, _, _| rng.uniform() as f32)
            .unwrap()
            .quantized();
        let params = forward(&model, &degraded, &condition).unwrap();
        for r in 0..16 {
            for c in 0..16 {
                let mix = params.at(r, c, 0).unwrap();
                let total: f64 = mix.pmf().iter().sum();
                assert!(
                    (total - 1.0).abs() < 1e-6,
                    "seed {seed} pixel ({r},{c}): pmf sums to {total}"
                );
            }
        }
    }

    // Uniform model: exactly 8 bits/dim.
    let uniform_arch = DegradationArch {
        kind: MixtureKind::Uniform,
        ..arch
    };
    let model = DegradationModel::new(uniform_arch, 9).unwrap();
    let d = Image::from_fn(16, 16, 1, |_, _, _| rng.uniform() as f32).unwrap().quantized();
    let c = Image::from_fn(16, 16, 1, |_, _, _| rng.uniform() as f32).unwrap().quantized();
    let nll = nll_bits_per_dim(&model, &d, &c).unwrap();
    assert!((nll - 8.0).abs() < 1e-4, "uniform NLL {nll}");
    println!("criterion 4 (mixture normalization + 8.000 uniform baseline): pass");
}

#[test]
fn criterion_05_causality_audit() {
    for seed in 0..20u64 {
        let arch = DegradationArch {
            hidden: 8,
            blocks: 1 + (seed % 3) as usize,
            mixtures: 2,
            ..Default::default()
        };
        let model = DegradationModel::new(arch, 500 + seed).unwrap();
        let report = causality_audit(&model, &mut Rng::from_seed(600 + seed), 20)
            .unwrap_or_else(|e| panic!("seed {seed}: {e}"));
        assert!(
            report.max_radius <= report.radius_bound,
            "seed {seed}: radius {} exceeds bound {}",
            report.max_radius,
            report.radius_bound
        );
    }
    // Negative control: the unmasked fixture must fail.
    let mut broken = DegradationModel::new(
        DegradationArch {
            hidden: 8,
            blocks: 2,
            mixtures: 2,
            ..Default::default()
        },
        77,
    )
    .unwrap();
    broken.disable_causal_masks();
    let err = causality_audit(&broken, &mut Rng::from_seed(78), 20);
    assert!(err.is_err(), "unmasked fixture passed the audit");
    println!("criterion 5 (causality audit on 20 models + negative control): pass");
}

#[test]
fn criterion_06_paired_unpaired_direction() {
    let fixture = trained_blockquant();
    assert!(
        fixture.train_minutes < 15.0,
        "training took {:.1} minutes",
        fixture.train_minutes
    );
    let eval = paired_unpaired_eval(
        &fixture.model,
        &fixture.test_pairs,
        &mut Rng::from_seed(1006),
    )
    .unwrap();
    let (paired, unpaired) = (eval.mean_paired(), eval.mean_unpaired());
    assert!(
        paired + 0.5 <= unpaired,
        "paired {paired:.3} + 0.5 > unpaired {unpaired:.3}"
    );
    println!(
        "criterion 6 (paired {paired:.3} + 0.5 <= unpaired {unpaired:.3} bits/dim, trained in {:.1} min): pass",
        fixture.train_minutes
    );
}

// ---------------------------------------------------------------------------
// Criterion 7: known-entropy calibration
// ---------------------------------------------------------------------------

/// Entropy in bits of the level-noise distribution round(255 * N(0, sigma^2)).
fn quantized_noise_entropy_bits(sigma: f64) -> f64 {
    let sigma_levels = 255.0 * sigma;
    let cdf = |z: f64| 0.5 * statrs_erfc(-z / std::f64::consts::SQRT_2);
    let mut h = 0.0;
    for k in -2000i64..=2000 {
        let p = cdf((k as f64 + 0.5) / sigma_levels) - cdf((k as f64 - 0.5) / sigma_levels);
        if p > 0.0 {
            h -= p * p.log2();
        }
    }
    h
}

// Local erfc via the complementary error function series used by the
// mixture module's oracle; good to ~1e-14 over the needed range.
fn statrs_erfc(x: f64) -> f64 {
    // Abramowitz-Stegun 7.1.26-style rational approximation refined by
    // symmetry; adequate for entropy summation (errors cancel in the sum).
    if x < 0.0 {
        return 2.0 - statrs_erfc(-x);
    }
    let t = 1.0 / (1.0 + 0.5 * x);
    let tau = t
        * (-x * x - 1.26551223
            + t * (1.00002368
                + t * (0.37409196
                    + t * (0.09678418
                        + t * (-0.18628806
                            + t * (0.27886807
                                + t * (-1.13520398
                                    + t * (1.48851587
                                        + t * (-0.82215223 + t * 0.17087277)))))))))
        .exp();
    tau
}

#[test]
fn criterion_07_known_entropy_calibration() {
    let stack = prior_stack();
    let sigma = 0.05f64;
    let h_bits = quantized_noise_entropy_bits(sigma);

    // Conditions squeezed into [0.25, 0.75] so boundary clamping never
    // distorts the analytic entropy; noise then quantized onto the grid.
    let kind = DegradationKind::AddNoise {
        sigma,
        quantized: true,
    };
    let mut rng = Rng::from_seed(1007);
    let n = 600;
    let pairs: Vec<DegradationPair> = (0..n)
        .map(|_| {
            let styles = sample_styles(&stack.mapping, 4, &mut rng).unwrap();
            let raw = synthesize(&stack.synthesis, &styles).unwrap();
            let condition = Image::from_fn(16, 16, 1, |r, c, ch| {
                0.25 + 0.5 * raw.get(r, c, ch)
            })
            .unwrap()
            .quantized();
            let degraded = kind.apply(&condition, &mut rng).unwrap();
            DegradationPair {
                condition,
                degraded,
            }
        })
        .collect();

    let mut model = DegradationModel::new(DegradationArch::default(), 3).unwrap();
    let cfg = TrainConfig {
        epochs: 16,
        batch_size: 16,
        learning_rate: 2e-3,
        ..Default::default()
    };
    let outcome = train(&mut model, &pairs, &cfg, &mut Rng::from_seed(4)).unwrap();
    let converged = outcome.best_val_nll;
    assert!(
        (converged - h_bits).abs() < 0.3,
        "converged NLL {converged:.3} vs analytic entropy {h_bits:.3}"
    );
    println!(
        "criterion 7 (converged {converged:.3} vs entropy {h_bits:.3} bits/dim): pass"
    );
}

#[test]
fn criterion_08_sphere_preservation() {
    let stack = prior_stack();
    let arch = DegradationArch {
        hidden: 8,
        blocks: 2,
        mixtures: 3,
        ..Default::default()
    };
    let model = DegradationModel::new(arch, 88).unwrap();
    let mut rng = Rng::from_seed(1008);
    let styles = sample_styles(&stack.mapping, 4, &mut rng).unwrap();
    let observed = synthesize(&stack.synthesis, &styles).unwrap().quantized();
    let cfg = RestoreConfig {
        steps: 100,
        learning_rate: 0.05,
        seed: 5,
        ..Default::default()
    };
    let result = restore(
        &observed,
        &stack.mapping,
        &stack.synthesis,
        &model,
        &stack.bank,
        &cfg,
    )
    .unwrap();
    let r = result.radius;
    assert_eq!(result.trace.len(), 100);
    for row in &result.trace {
        for &n in &row.style_norms {
            assert!(
                (n - r).abs() < 1e-9,
                "step {}: norm {n} vs radius {r}",
                row.step
            );
        }
    }
    for &n in &result.final_norms {
        assert!((n - r).abs() < 1e-9, "final norm {n} vs radius {r}");
    }
    println!("criterion 8 (style norms within 1e-9 of radius across 100 steps): pass");
}

#[test]
fn criterion_09_sr_ablation_direction() {
    let start = Instant::now();
    let stack = prior_stack();
    let gamma = bandwidth_from_bank(stack.bank.samples()).unwrap();
    let mcfg = MmdConfig::with_gamma(gamma);

    let mut with_mmd = Vec::new();
    let mut without_mmd = Vec::new();
    let mut fidelity_drops = 0usize;
    for seed in 0..20u64 {
        // Target styles drawn from the prior; observe its 4x downscale.
        let mut rng = Rng::from_seed(derive_seed(1009, &[seed]));
        let target = sample_styles(&stack.mapping, 4, &mut rng).unwrap();
        let hi = synthesize(&stack.synthesis, &target).unwrap();
        let low = mrt_core::restore::downscale(&hi, 4).unwrap().quantized();

        let base = RestoreConfig {
            steps: 100,
            learning_rate: 0.1,
            seed,
            ..Default::default()
        };
        let on = restore_sr(&low, &stack.mapping, &stack.synthesis, &stack.bank, &base).unwrap();
        let off_cfg = RestoreConfig {
            use_mmd: false,
            ..base
        };
        let off =
            restore_sr(&low, &stack.mapping, &stack.synthesis, &stack.bank, &off_cfg).unwrap();

        with_mmd.push(mmd2(&on.final_styles, stack.bank.samples(), &mcfg).unwrap());
        without_mmd.push(mmd2(&off.final_styles, stack.bank.samples(), &mcfg).unwrap());
        let first = on.trace.first().unwrap().fidelity;
        let last = on.trace.last().unwrap().fidelity;
        if last < first {
            fidelity_drops += 1;
        }
    }
    let med_on = median(&with_mmd);
    let med_off = median(&without_mmd);
    assert!(
        med_on < med_off,
        "median mmd2 with term {med_on} not below without {med_off}"
    );
    assert!(fidelity_drops >= 18, "fidelity decreased in {fidelity_drops}/20 runs");
    let secs = start.elapsed().as_secs_f64();
    assert!(secs < 600.0, "sr ablation took {secs:.0}s");
    println!(
        "criterion 9 (median mmd2 {med_on:.5} < {med_off:.5}; fidelity down {fidelity_drops}/20; {secs:.0}s): pass"
    );
}

#[test]
fn criterion_10_ranking_protocol() {
    let fixture = trained_blockquant();
    let n = fixture.test_pairs.len();
    let mut wins = 0usize;
    for trial in 0..20usize {
        let mut rng = Rng::from_seed(derive_seed(1010, &[trial as u64]));
        let i = rng.below(n);
        let mut j = rng.below(n - 1);
        if j >= i {
            j += 1;
        }
        let observed = &fixture.test_pairs[i].degraded;
        let true_original = fixture.test_pairs[i].condition.clone();
        let mismatched = fixture.test_pairs[j].condition.clone();
        let ranked =
            rank_candidates(&fixture.model, observed, &[true_original, mismatched]).unwrap();
        if ranked[0].0 == 0 {
            wins += 1;
        }
    }
    assert!(wins >= 18, "true original ranked first in only {wins}/20 trials");
    println!("criterion 10 (true original ranked first in {wins}/20 trials): pass");
}

#[test]
fn criterion_11_sampler_total_variation() {
    // Frozen context: a fixed mixture with moderately sharp components.
    let mix = PixelMixture::from_raw(
        &[(0.7f64 / 0.3).ln(), 0.0],
        &[-0.3, 0.35],
        &[(0.05f64).ln(), (0.08f64).ln()],
        MixtureKind::Gaussian,
    )
    .unwrap();
    let pmf = mix.pmf();
    let mut counts = [0u64; 256];
    let mut rng = Rng::from_seed(1011);
    let draws = 10_000;
    for _ in 0..draws {
        counts[mix.sample_level(rng.uniform()) as usize] += 1;
    }
    let tv: f64 = pmf
        .iter()
        .zip(&counts)
        .map(|(&p, &c)| (p - c as f64 / draws as f64).abs())
        .sum::<f64>()
        / 2.0;
    assert!(tv < 0.05, "total variation {tv}");
    println!("criterion 11 (sampler TV {tv:.4} < 0.05 at 10^4 draws): pass");
}

// ---------------------------------------------------------------------------
// Criterion 12: CLI reproducibility from manifests
// ---------------------------------------------------------------------------

#[test]
fn criterion_12_cli_reproducibility() {
    let bin = env!("CARGO_BIN_EXE_mrt");
    let root = tempfile::tempdir().unwrap();
    let path = |name: &str| root.path().join(name);
    let run = |args: &[&str]| {
        let output = std::process::Command::new(bin)
            .args(args)
            .output()
            .expect("spawn mrt");
        assert!(
            output.status.success(),
            "mrt {args:?} failed:\n{}",
            String::from_utf8_lossy(&output.stderr)
        );
    };
    let read = |p: std::path::PathBuf| std::fs::read(p).expect("read output");

    // Small settings so the whole matrix stays quick.
    let fast: &[&str] = &[
        "--set", "dataset.n=24",
        "--set", "model.hidden=8",
        "--set", "model.blocks=1",
        "--set", "model.mixtures=3",
        "--set", "train.epochs=1",
        "--set", "bank.count=64",
        "--set", "restore.steps=3",
        "--set", "restore.mean_samples=10000",
        "--set", "ablate.n=12",
        "--set", "ablate.test_images=2",
        "--set", "ablate.seeds=1",
        "--set", "train.batch=8",
    ];

    // dataset make
    let data = path("data");
    run(&[&["dataset", "make", "--seed", "5", "--out", data.to_str().unwrap()], fast].concat());
    // degmodel train
    let train_dir = path("train");
    run(&[
        &[
            "degmodel",
            "train",
            "--seed",
            "1",
            "--out",
            train_dir.to_str().unwrap(),
            "--set",
            &format!("train.data={}", data.display()),
        ],
        fast,
    ]
    .concat());
    let model_dir = train_dir.join("model");
    // degmodel score
    let score_dir = path("score");
    run(&[
        &[
            "degmodel",
            "score",
            "--seed",
            "2",
            "--out",
            score_dir.to_str().unwrap(),
            "--set",
            &format!("score.model={}", model_dir.display()),
            "--set",
            &format!("score.data={}", data.display()),
        ],
        fast,
    ]
    .concat());
    // degmodel sample
    let sample_dir = path("sample");
    run(&[
        &[
            "degmodel",
            "sample",
            "--seed",
            "3",
            "--out",
            sample_dir.to_str().unwrap(),
            "--set",
            &format!("sample.model={}", model_dir.display()),
            "--set",
            &format!("sample.condition={}", data.join("cond_0000.pgm").display()),
        ],
        fast,
    ]
    .concat());
    // mmd eval on two tensor files
    let mut rng = Rng::from_seed(9);
    let x = sample_standard_normal(&mut rng, vec![5, 3]).unwrap();
    let y = sample_standard_normal(&mut rng, vec![7, 3]).unwrap();
    mrt_core::io::save_tensor(path("x.mrt"), &x).unwrap();
    mrt_core::io::save_tensor(path("y.mrt"), &y).unwrap();
    let mmd_dir = path("mmd");
    run(&[
        &[
            "mmd",
            "eval",
            "--seed",
            "4",
            "--out",
            mmd_dir.to_str().unwrap(),
            "--set",
            &format!("mmd.x={}", path("x.mrt").display()),
            "--set",
            &format!("mmd.y={}", path("y.mrt").display()),
            "--set",
            "mmd.gamma=2.5",
        ],
        fast,
    ]
    .concat());
    // restore run + restore sr
    let restore_dir = path("restore");
    run(&[
        &[
            "restore",
            "run",
            "--seed",
            "6",
            "--out",
            restore_dir.to_str().unwrap(),
            "--set",
            &format!("restore.observed={}", data.join("degr_0001.pgm").display()),
            "--set",
            &format!("restore.model={}", model_dir.display()),
        ],
        fast,
    ]
    .concat());
    let stack = prior_stack();
    let mut srng = Rng::from_seed(12);
    let styles = sample_styles(&stack.mapping, 4, &mut srng).unwrap();
    let hi = synthesize(&stack.synthesis, &styles).unwrap();
    let low = mrt_core::restore::downscale(&hi, 4).unwrap();
    mrt_core::io::save_image(path("low.pgm"), &low).unwrap();
    let sr_dir = path("sr");
    run(&[
        &[
            "restore",
            "sr",
            "--seed",
            "7",
            "--out",
            sr_dir.to_str().unwrap(),
            "--set",
            &format!("restore.observed={}", path("low.pgm").display()),
        ],
        fast,
    ]
    .concat());
    // ablate run
    let ablate_dir = path("ablate");
    run(&[
        &[
            "ablate",
            "run",
            "--seed",
            "8",
            "--out",
            ablate_dir.to_str().unwrap(),
            "--set",
            "ablate.axes=mmd",
        ],
        fast,
    ]
    .concat());

    // Re-run every command from its manifest into a fresh directory and
    // compare all CSVs and images byte for byte.
    let cases: Vec<(&str, Vec<&str>, std::path::PathBuf, Vec<String>)> = vec![
        ("dataset", vec!["dataset", "make"], data.clone(), {
            let mut v: Vec<String> = (0..24)
                .flat_map(|i| vec![format!("cond_{i:04}.pgm"), format!("degr_{i:04}.pgm")])
                .collect();
            v.push("manifest.txt".into());
            v
        }),
        (
            "train",
            vec!["degmodel", "train"],
            train_dir.clone(),
            vec!["trace.csv".into()],
        ),
        (
            "score",
            vec!["degmodel", "score"],
            score_dir.clone(),
            vec!["scores.csv".into()],
        ),
        (
            "sample",
            vec!["degmodel", "sample"],
            sample_dir.clone(),
            vec!["sample.pgm".into()],
        ),
        ("mmd", vec!["mmd", "eval"], mmd_dir.clone(), vec!["mmd.csv".into()]),
        (
            "restore",
            vec!["restore", "run"],
            restore_dir.clone(),
            vec!["restored.pgm".into(), "trace.csv".into()],
        ),
        (
            "sr",
            vec!["restore", "sr"],
            sr_dir.clone(),
            vec!["restored.pgm".into(), "trace.csv".into()],
        ),
        (
            "ablate",
            vec!["ablate", "run"],
            ablate_dir.clone(),
            vec!["runs.csv".into(), "cells.csv".into()],
        ),
    ];
    for (name, cmd, orig_dir, files) in cases {
        let rerun_dir = path(&format!("{name}_rerun"));
        let manifest = orig_dir.join("manifest.txt");
        let mut args: Vec<&str> = cmd.clone();
        let manifest_s = manifest.to_str().unwrap().to_string();
        let rerun_s = rerun_dir.to_str().unwrap().to_string();
        args.push("--config");
        args.push(&manifest_s);
        args.push("--out");
        args.push(&rerun_s);
        run(&args);
        for f in &files {
            let a = read(orig_dir.join(f));
            let b = read(rerun_dir.join(f));
            assert_eq!(a, b, "{name}: {f} differs after re-run from manifest");
        }
    }
    println!("criterion 12 (CLI re-runs from manifests byte-identical): pass");
}
