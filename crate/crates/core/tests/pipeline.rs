//! Cross-module integration: restoration against a trained model, the
//! restore-mode MMD ablation, sampler self-consistency, and the
//! deterministic-degradation limit.

use std::sync::OnceLock;

use mrt_core::degradation::{
    nll_bits_per_dim, sample, train, DegradationArch, DegradationModel, DegradationPair,
    TrainConfig,
};
use mrt_core::exp::{make_toy_dataset, median, DegradationKind, ImageSource};
use mrt_core::image::Image;
use mrt_core::mmd::{bandwidth_from_bank, mmd2, MmdConfig};
use mrt_core::prior::{
    sample_prior_bank, sample_styles, synthesize, MappingNetwork, PriorBank, SynthesisNetwork,
};
use mrt_core::restore::{restore, RestoreConfig};
use mrt_core::rng::{derive_seed, Rng};

struct Stack {
    mapping: MappingNetwork,
    synthesis: SynthesisNetwork,
    bank: PriorBank,
    model: DegradationModel,
    train_pairs: Vec<DegradationPair>,
    train_nll: f64,
}

/// A light noise-degradation fixture shared by the tests in this file.
fn stack() -> &'static Stack {
    static STACK: OnceLock<Stack> = OnceLock::new();
    STACK.get_or_init(|| {
        let mapping = MappingNetwork::toy(32, 32, 7).unwrap();
        let synthesis = SynthesisNetwork::toy(32, 8, 1, 7).unwrap();
        let bank = sample_prior_bank(&mapping, 500, &mut Rng::from_seed(11)).unwrap();
        let kind = DegradationKind::AddNoise {
            sigma: 0.05,
            quantized: true,
        };
        let pairs = make_toy_dataset(
            &kind,
            300,
            &ImageSource::Prior {
                mapping: &mapping,
                synthesis: &synthesis,
            },
            &mut Rng::from_seed(21),
        )
        .unwrap();
        let arch = DegradationArch {
            hidden: 16,
            blocks: 2,
            mixtures: 5,
            ..Default::default()
        };
        let mut model = DegradationModel::new(arch, 31).unwrap();
        let cfg = TrainConfig {
            epochs: 8,
            batch_size: 16,
            learning_rate: 2e-3,
            ..Default::default()
        };
        let outcome = train(&mut model, &pairs, &cfg, &mut Rng::from_seed(41)).unwrap();
        let train_nll = outcome.trace[outcome.best_epoch].train_nll;
        Stack {
            mapping,
            synthesis,
            bank,
            model,
            train_pairs: pairs,
            train_nll,
        }
    })
}

#[test]
fn restore_recovers_likelihood_on_known_targets() {
    let s = stack();
    // Observed image degraded from a synthesized target.
    let kind = DegradationKind::AddNoise {
        sigma: 0.05,
        quantized: true,
    };
    let mut ok = 0;
    for seed in 0..5u64 {
        let mut rng = Rng::from_seed(derive_seed(900, &[seed]));
        let target = sample_styles(&s.mapping, 4, &mut rng).unwrap();
        let clean = synthesize(&s.synthesis, &target).unwrap().quantized();
        let observed = kind.apply(&clean, &mut rng).unwrap();
        let cfg = RestoreConfig {
            steps: 40,
            learning_rate: 0.02,
            seed,
            ..Default::default()
        };
        let result = restore(&observed, &s.mapping, &s.synthesis, &s.model, &s.bank, &cfg)
            .unwrap();
        let first = result.trace.first().unwrap().fidelity;
        let last = result.trace.last().unwrap().fidelity;
        if last <= first {
            ok += 1;
        }
    }
    assert!(ok >= 4, "likelihood term decreased in only {ok}/5 runs");
}

#[test]
fn restore_mmd_ablation_direction() {
    let s = stack();
    let gamma = bandwidth_from_bank(s.bank.samples()).unwrap();
    let mcfg = MmdConfig::with_gamma(gamma);
    let kind = DegradationKind::AddNoise {
        sigma: 0.05,
        quantized: true,
    };
    let (mut on_vals, mut off_vals) = (Vec::new(), Vec::new());
    for seed in 0..20u64 {
        let mut rng = Rng::from_seed(derive_seed(910, &[seed]));
        let target = sample_styles(&s.mapping, 4, &mut rng).unwrap();
        let clean = synthesize(&s.synthesis, &target).unwrap().quantized();
        let observed = kind.apply(&clean, &mut rng).unwrap();
        let base = RestoreConfig {
            steps: 40,
            learning_rate: 0.02,
            seed,
            ..Default::default()
        };
        let on = restore(&observed, &s.mapping, &s.synthesis, &s.model, &s.bank, &base).unwrap();
        let off_cfg = RestoreConfig {
            use_mmd: false,
            ..base
        };
        let off =
            restore(&observed, &s.mapping, &s.synthesis, &s.model, &s.bank, &off_cfg).unwrap();
        on_vals.push(mmd2(&on.final_styles, s.bank.samples(), &mcfg).unwrap());
        off_vals.push(mmd2(&off.final_styles, s.bank.samples(), &mcfg).unwrap());
    }
    let (m_on, m_off) = (median(&on_vals), median(&off_vals));
    assert!(
        m_on < m_off,
        "median final mmd2 with term {m_on} not below without {m_off}"
    );
}

#[test]
fn samples_stay_in_the_training_likelihood_band() {
    let s = stack();
    let mut nlls = Vec::new();
    for seed in 0..2u64 {
        let cond = &s.train_pairs[seed as usize].condition;
        let sampled = sample(&s.model, cond, &mut Rng::from_seed(920 + seed)).unwrap();
        let nll = nll_bits_per_dim(&s.model, &sampled, cond).unwrap();
        assert!(nll.is_finite());
        nlls.push(nll);
    }
    let mean: f64 = nlls.iter().sum::<f64>() / nlls.len() as f64;
    assert!(
        (mean - s.train_nll).abs() < 1.0,
        "sample NLL {mean:.3} vs training NLL {:.3}",
        s.train_nll
    );
}

#[test]
fn deterministic_degradation_drives_nll_toward_zero() {
    // degraded == condition: the conditional is a delta, entropy ~ 0.
    let mapping = MappingNetwork::toy(32, 32, 51).unwrap();
    let synthesis = SynthesisNetwork::toy(32, 8, 1, 51).unwrap();
    let mut rng = Rng::from_seed(52);
    let pairs: Vec<DegradationPair> = (0..300)
        .map(|_| {
            let styles = sample_styles(&mapping, 4, &mut rng).unwrap();
            let cond = synthesize(&synthesis, &styles).unwrap().quantized();
            DegradationPair {
                degraded: cond.clone(),
                condition: cond,
            }
        })
        .collect();
    let arch = DegradationArch {
        hidden: 16,
        blocks: 2,
        mixtures: 5,
        ..Default::default()
    };
    let mut model = DegradationModel::new(arch, 53).unwrap();
    let cfg = TrainConfig {
        epochs: 14,
        batch_size: 16,
        learning_rate: 3e-3,
        patience: 14,
        ..Default::default()
    };
    let outcome = train(&mut model, &pairs, &cfg, &mut Rng::from_seed(54)).unwrap();
    let train_nll = outcome.trace.last().unwrap().train_nll;
    assert!(
        train_nll < 0.6,
        "training NLL {train_nll:.3} did not approach zero"
    );
}

#[test]
fn single_step_restoration_has_single_row_trace() {
    let s = stack();
    let observed = s.train_pairs[0].degraded.clone();
    let cfg = RestoreConfig {
        steps: 1,
        seed: 3,
        ..Default::default()
    };
    let result =
        restore(&observed, &s.mapping, &s.synthesis, &s.model, &s.bank, &cfg).unwrap();
    assert_eq!(result.trace.len(), 1);
    // Objective decomposition at every recorded step.
    for row in &result.trace {
        let sum = row.fidelity + row.mmd + row.cross;
        assert!((row.total - sum).abs() < 1e-6);
    }
}

#[test]
fn restoration_is_deterministic_per_seed() {
    let s = stack();
    let observed = s.train_pairs[1].degraded.clone();
    let cfg = RestoreConfig {
        steps: 5,
        seed: 17,
        ..Default::default()
    };
    let a = restore(&observed, &s.mapping, &s.synthesis, &s.model, &s.bank, &cfg).unwrap();
    let b = restore(&observed, &s.mapping, &s.synthesis, &s.model, &s.bank, &cfg).unwrap();
    assert_eq!(a.final_image, b.final_image);
    assert_eq!(a.final_styles.rows(), b.final_styles.rows());
    assert_eq!(a.trace.len(), b.trace.len());
    for (x, y) in a.trace.iter().zip(&b.trace) {
        assert_eq!(x.total, y.total);
    }
}
