//! Command implementations behind the `mrt` binary.
//!
//! Every command resolves its settings as defaults < config file < flag
//! overrides, executes, and writes a `manifest.txt` holding the effective
//! configuration. Re-running a command with `--config manifest.txt` into a
//! fresh directory reproduces every CSV and image byte for byte.

use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::config::Config;
use crate::degradation::{
    causality_audit, checkpoint, nll_bits_per_dim, sample as model_sample, train,
    DegradationArch, DegradationModel, MixtureKind, TrainConfig,
};
use crate::error::{Error, Result};
use crate::exp::{
    load_dataset, make_toy_dataset, paired_unpaired_eval, rank_candidates, run_ablation,
    save_dataset, AblationAxis, DegradationKind, ExperimentSpec, ImageSource,
};
use crate::io::{load_image, load_tensor, save_image};
use crate::mmd::{bandwidth_from_bank, mmd2, MmdConfig, SampleSet};
use crate::prior::{sample_prior_bank, MappingNetwork, PriorBank, SynthesisNetwork};
use crate::restore::{restore, restore_sr, GammaRule, RadiusRule, RestoreConfig};
use crate::rng::{derive_seed, Rng};

pub const MANIFEST_NAME: &str = "manifest.txt";

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn sha256_hex(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(hex(&hasher.finalize()))
}

fn write_manifest(out: &Path, command: &str, cfg: &Config) -> Result<()> {
    let mut manifest = cfg.clone();
    manifest.set("command", command);
    manifest.save(out.join(MANIFEST_NAME))
}

// ---------------------------------------------------------------------------
// Config -> domain objects
// ---------------------------------------------------------------------------

pub fn build_mapping(cfg: &Config) -> Result<MappingNetwork> {
    MappingNetwork::toy(
        cfg.usize_or("prior.z_dim", 32)?,
        cfg.usize_or("prior.w_dim", 32)?,
        cfg.u64_or("prior.seed", 7)?,
    )
}

pub fn build_synthesis(cfg: &Config) -> Result<SynthesisNetwork> {
    SynthesisNetwork::toy(
        cfg.usize_or("prior.w_dim", 32)?,
        cfg.usize_or("prior.channels", 8)?,
        cfg.usize_or("image.channels", 1)?,
        cfg.u64_or("prior.seed", 7)?,
    )
}

pub fn build_bank(cfg: &Config, mapping: &MappingNetwork) -> Result<PriorBank> {
    let mut rng = Rng::from_seed(cfg.u64_or("bank.seed", 11)?);
    sample_prior_bank(mapping, cfg.usize_or("bank.count", 1000)?, &mut rng)
}

pub fn parse_kind(cfg: &Config) -> Result<DegradationKind> {
    let kind = match cfg.str_or("dataset.kind", "blockquant").as_str() {
        "blockquant" => DegradationKind::BlockQuant {
            block: cfg.usize_or("dataset.block", 4)?,
            quality: cfg.u64_or("dataset.quality", 50)? as u32,
        },
        "addnoise" => DegradationKind::AddNoise {
            sigma: cfg.f64_or("dataset.sigma", 0.02)?,
            quantized: cfg.bool_or("dataset.quantized", true)?,
        },
        "boxblur" => DegradationKind::BoxBlur {
            radius: cfg.usize_or("dataset.radius", 1)?,
        },
        other => return Err(Error::Config(format!("unknown dataset.kind {other:?}"))),
    };
    kind.validate()?;
    Ok(kind)
}

pub fn parse_arch(cfg: &Config) -> Result<DegradationArch> {
    Ok(DegradationArch {
        image_channels: cfg.usize_or("image.channels", 1)?,
        hidden: cfg.usize_or("model.hidden", 32)?,
        blocks: cfg.usize_or("model.blocks", 3)?,
        mixtures: cfg.usize_or("model.mixtures", 10)?,
        kernel: cfg.usize_or("model.kernel", 3)?,
        kind: MixtureKind::parse(&cfg.str_or("model.kind", "gaussian"))?,
    })
}

pub fn parse_train(cfg: &Config) -> Result<TrainConfig> {
    Ok(TrainConfig {
        epochs: cfg.usize_or("train.epochs", 20)?,
        batch_size: cfg.usize_or("train.batch", 16)?,
        learning_rate: cfg.f64_or("train.lr", 1e-3)?,
        clip_norm: cfg.f64_or("train.clip", 5.0)?,
        validation_split: cfg.f64_or("train.val_split", 0.1)?,
        patience: cfg.usize_or("train.patience", 10)?,
        seed: cfg.u64_or("seed", 0)?,
    })
}

pub fn parse_restore(cfg: &Config) -> Result<RestoreConfig> {
    let gamma = match cfg.str_or("restore.gamma", "bank").as_str() {
        "paper" => GammaRule::Paper,
        "bank" => GammaRule::BankMedian,
        v => GammaRule::Fixed(
            v.parse()
                .map_err(|_| Error::Config(format!("restore.gamma: bad value {v:?}")))?,
        ),
    };
    let radius = match cfg.str_or("restore.radius", "bank_mean").as_str() {
        "bank_mean" => RadiusRule::BankMean,
        "sqrt_d" => RadiusRule::SqrtD,
        v => RadiusRule::Fixed(
            v.parse()
                .map_err(|_| Error::Config(format!("restore.radius: bad value {v:?}")))?,
        ),
    };
    Ok(RestoreConfig {
        steps: cfg.usize_or("restore.steps", 100)?,
        learning_rate: cfg.f64_or("restore.lr", 0.05)?,
        radius,
        coeff: cfg.f64_or("restore.coeff", 10.0)?,
        lambda_mmd: cfg.f64_or("restore.lambda_mmd", 1.0)?,
        lambda_cross: cfg.f64_or("restore.lambda_cross", 0.01)?,
        gamma,
        squared_exponent: cfg.bool_or("restore.squared", false)?,
        use_mmd: cfg.bool_or("restore.use_mmd", true)?,
        use_mean_init: cfg.bool_or("restore.mean_init", true)?,
        use_spherical: cfg.bool_or("restore.spherical", true)?,
        tangential: cfg.bool_or("restore.tangential", true)?,
        mean_latent_samples: cfg.usize_or("restore.mean_samples", 10_000)?,
        sr_factor: cfg.usize_or("restore.sr_factor", 4)?,
        seed: cfg.u64_or("seed", 0)?,
    })
}

fn parse_list<T: std::str::FromStr>(cfg: &Config, key: &str, default: &str) -> Result<Vec<T>> {
    cfg.str_or(key, default)
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<T>()
                .map_err(|_| Error::Config(format!("{key}: bad list item {s:?}")))
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

pub fn dataset_make(cfg: &Config, out: &Path) -> Result<()> {
    ensure_dir(out)?;
    let kind = parse_kind(cfg)?;
    let n = cfg.usize_or("dataset.n", 64)?;
    let mut rng = Rng::from_seed(cfg.u64_or("seed", 0)?);
    let pairs = match cfg.str_or("dataset.source", "prior").as_str() {
        "prior" => {
            let mapping = build_mapping(cfg)?;
            let synthesis = build_synthesis(cfg)?;
            make_toy_dataset(
                &kind,
                n,
                &ImageSource::Prior {
                    mapping: &mapping,
                    synthesis: &synthesis,
                },
                &mut rng,
            )?
        }
        "dir" => {
            let dir = PathBuf::from(cfg.str_or("dataset.dir", ""));
            make_toy_dataset(&kind, n, &ImageSource::Directory(&dir), &mut rng)?
        }
        other => return Err(Error::Config(format!("unknown dataset.source {other:?}"))),
    };
    let mut meta = cfg.clone();
    meta.set("command", "dataset make");
    save_dataset(out, &pairs, &meta)?;
    println!("dataset: wrote {} pairs to {}", pairs.len(), out.display());
    Ok(())
}

pub fn degmodel_train(cfg: &Config, out: &Path) -> Result<()> {
    ensure_dir(out)?;
    let data_dir = cfg.str_or("train.data", "");
    if data_dir.is_empty() {
        return Err(Error::Config("train.data: dataset directory required".into()));
    }
    let dataset = load_dataset(&data_dir)?;
    let arch = parse_arch(cfg)?;
    let tc = parse_train(cfg)?;
    let mut model = DegradationModel::new(arch, derive_seed(tc.seed, &[1]))?;
    let mut rng = Rng::from_seed(derive_seed(tc.seed, &[2]));
    let outcome = train(&mut model, &dataset, &tc, &mut rng)?;

    let cfg_hash = {
        let mut hasher = Sha256::new();
        hasher.update(cfg.render().as_bytes());
        hex(&hasher.finalize())
    };
    let ckpt = out.join("model");
    checkpoint::save_model(&ckpt, &model, outcome.best_epoch, &cfg_hash)?;
    write_text(
        &out.join("trace.csv"),
        &crate::degradation::trace_to_csv(&outcome.trace),
    )?;

    // Causality audit on the trained model; failure aborts the command.
    let report = causality_audit(&model, &mut Rng::from_seed(derive_seed(tc.seed, &[3])), 20)?;
    let mut manifest = cfg.clone();
    manifest.set("info.best_epoch", outcome.best_epoch);
    manifest.set("info.best_val_nll", outcome.best_val_nll);
    manifest.set("info.epochs_run", outcome.epochs_run);
    manifest.set("info.audit_max_radius", report.max_radius);
    manifest.set(
        "info.model_sha256",
        sha256_hex(&ckpt.join(checkpoint::WEIGHTS_FILE))?,
    );
    write_manifest(out, "degmodel train", &manifest)?;
    println!(
        "degmodel train: best val NLL {:.4} bits/dim at epoch {} ({} epochs run)",
        outcome.best_val_nll, outcome.best_epoch, outcome.epochs_run
    );
    Ok(())
}

pub fn degmodel_score(cfg: &Config, out: &Path) -> Result<()> {
    ensure_dir(out)?;
    let model = checkpoint::load_model(cfg.str_or("score.model", ""))?;
    let candidates = cfg.str_or("score.candidates", "");
    if !candidates.is_empty() {
        // Ranking mode: order candidate images by NLL of the observed image.
        let observed = load_image(cfg.str_or("score.observed", ""))?;
        let images: Vec<_> = candidates
            .split(',')
            .map(|p| load_image(p.trim()))
            .collect::<Result<_>>()?;
        let ranked = rank_candidates(&model, &observed, &images)?;
        let mut csv = String::from("rank,candidate,nll_bits_per_dim\n");
        for (rank, (idx, nll)) in ranked.iter().enumerate() {
            csv.push_str(&format!("{rank},{idx},{nll}\n"));
        }
        write_text(&out.join("ranking.csv"), &csv)?;
        write_manifest(out, "degmodel score", cfg)?;
        println!("degmodel score: best candidate index {}", ranked[0].0);
        return Ok(());
    }

    let dataset = load_dataset(cfg.str_or("score.data", ""))?;
    let mut rng = Rng::from_seed(cfg.u64_or("seed", 0)?);
    let eval = paired_unpaired_eval(&model, &dataset, &mut rng)?;
    let mut csv = String::from("image,paired_nll,unpaired_nll,unpaired_condition\n");
    for i in 0..eval.paired.len() {
        csv.push_str(&format!(
            "{i},{},{},{}\n",
            eval.paired[i], eval.unpaired[i], eval.permutation[i]
        ));
    }
    write_text(&out.join("scores.csv"), &csv)?;
    write_manifest(out, "degmodel score", cfg)?;
    println!(
        "degmodel score: paired {:.4} vs unpaired {:.4} bits/dim over {} pairs",
        eval.mean_paired(),
        eval.mean_unpaired(),
        eval.paired.len()
    );
    Ok(())
}

pub fn degmodel_sample(cfg: &Config, out: &Path) -> Result<()> {
    ensure_dir(out)?;
    let model = checkpoint::load_model(cfg.str_or("sample.model", ""))?;
    let condition = load_image(cfg.str_or("sample.condition", ""))?;
    let mut rng = Rng::from_seed(cfg.u64_or("seed", 0)?);
    let sampled = model_sample(&model, &condition, &mut rng)?;
    let name = if sampled.channels() == 3 {
        "sample.ppm"
    } else {
        "sample.pgm"
    };
    save_image(out.join(name), &sampled)?;
    let nll = nll_bits_per_dim(&model, &sampled, &condition)?;
    write_manifest(out, "degmodel sample", cfg)?;
    println!("degmodel sample: wrote {name} (NLL of sample {nll:.4} bits/dim)");
    Ok(())
}

pub fn mmd_eval(cfg: &Config, out: &Path) -> Result<()> {
    ensure_dir(out)?;
    let x = SampleSet::new(load_tensor(cfg.str_or("mmd.x", ""))?)?;
    let y = SampleSet::new(load_tensor(cfg.str_or("mmd.y", ""))?)?;
    let gamma = match cfg.str_or("mmd.gamma", "512").as_str() {
        "bank" => bandwidth_from_bank(&y)?,
        v => v
            .parse()
            .map_err(|_| Error::Config(format!("mmd.gamma: bad value {v:?}")))?,
    };
    let mcfg = MmdConfig {
        gamma,
        squared_exponent: cfg.bool_or("mmd.squared", false)?,
    };
    let value = mmd2(&x, &y, &mcfg)?;
    let csv = format!("mmd2,gamma,squared\n{value},{gamma},{}\n", mcfg.squared_exponent);
    write_text(&out.join("mmd.csv"), &csv)?;
    write_manifest(out, "mmd eval", cfg)?;
    println!("mmd eval: mmd2 = {value} (gamma {gamma})");
    Ok(())
}

fn restore_common(cfg: &Config, out: &Path, sr: bool) -> Result<()> {
    ensure_dir(out)?;
    let mapping = build_mapping(cfg)?;
    let synthesis = build_synthesis(cfg)?;
    let bank = build_bank(cfg, &mapping)?;
    let rcfg = parse_restore(cfg)?;
    let observed = load_image(cfg.str_or("restore.observed", ""))?;

    let mut manifest = cfg.clone();
    let result = if sr {
        restore_sr(&observed, &mapping, &synthesis, &bank, &rcfg)?
    } else {
        let ckpt = cfg.str_or("restore.model", "");
        let model = checkpoint::load_model(&ckpt)?;
        manifest.set(
            "info.model_sha256",
            sha256_hex(&Path::new(&ckpt).join(checkpoint::WEIGHTS_FILE))?,
        );
        restore(&observed, &mapping, &synthesis, &model, &bank, &rcfg)?
    };

    let name = if result.final_image.channels() == 3 {
        "restored.ppm"
    } else {
        "restored.pgm"
    };
    save_image(out.join(name), &result.final_image)?;
    write_text(&out.join("trace.csv"), &crate::restore::trace_to_csv(&result.trace))?;
    manifest.set("info.radius", result.radius);
    manifest.set("info.gamma", result.gamma);
    let last = result.trace.last().expect("steps >= 1");
    manifest.set("info.final_total", last.total);
    write_manifest(out, if sr { "restore sr" } else { "restore run" }, &manifest)?;
    println!(
        "restore{}: total {:.6} -> {:.6} over {} steps",
        if sr { " sr" } else { "" },
        result.trace[0].total,
        last.total,
        result.trace.len()
    );
    Ok(())
}

pub fn restore_run(cfg: &Config, out: &Path) -> Result<()> {
    restore_common(cfg, out, false)
}

pub fn restore_sr_cmd(cfg: &Config, out: &Path) -> Result<()> {
    restore_common(cfg, out, true)
}

pub fn ablate_run(cfg: &Config, out: &Path) -> Result<()> {
    ensure_dir(out)?;
    let axes: Vec<AblationAxis> = cfg
        .str_or("ablate.axes", "mmd")
        .split(',')
        .map(|s| AblationAxis::parse(s.trim()))
        .collect::<Result<_>>()?;
    let spec = ExperimentSpec {
        dataset_size: cfg.usize_or("ablate.n", 64)?,
        test_images: cfg.usize_or("ablate.test_images", 4)?,
        kind: parse_kind(cfg)?,
        arch: parse_arch(cfg)?,
        train: parse_train(cfg)?,
        restore: parse_restore(cfg)?,
        seeds: parse_list(cfg, "ablate.seeds", "1,2,3")?,
        prior_seed: cfg.u64_or("prior.seed", 7)?,
        bank_count: cfg.usize_or("bank.count", 1000)?,
        coeff_levels: parse_list(cfg, "ablate.coeff_levels", "1,10,50")?,
        epochs_levels: parse_list(cfg, "ablate.epochs_levels", "2,8")?,
        steps_levels: parse_list(cfg, "ablate.steps_levels", "100,1000")?,
        base_seed: cfg.u64_or("seed", 0)?,
    };
    let report = run_ablation(&spec, &axes)?;
    write_text(&out.join("runs.csv"), &report.runs_csv())?;
    write_text(&out.join("cells.csv"), &report.cells_csv())?;
    write_manifest(out, "ablate run", cfg)?;
    println!(
        "ablate run: {} cells, {} runs",
        report.cells.len(),
        report.rows.len()
    );
    for c in &report.cells {
        println!(
            "  {}: median mmd2 {:.6}, median restored NLL {:.4}",
            c.cell, c.median_mmd2, c.median_restored_nll
        );
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_restore_roundtrips_flags() {
        let cfg = Config::parse(
            "restore.steps = 7\nrestore.gamma = paper\nrestore.radius = sqrt_d\nrestore.use_mmd = off\n",
        )
        .unwrap();
        let rc = parse_restore(&cfg).unwrap();
        assert_eq!(rc.steps, 7);
        assert_eq!(rc.gamma, GammaRule::Paper);
        assert_eq!(rc.radius, RadiusRule::SqrtD);
        assert!(!rc.use_mmd);
    }

    #[test]
    fn parse_kind_variants() {
        let cfg = Config::parse("dataset.kind = addnoise\ndataset.sigma = 0.1\n").unwrap();
        assert_eq!(
            parse_kind(&cfg).unwrap(),
            DegradationKind::AddNoise {
                sigma: 0.1,
                quantized: true
            }
        );
        let bad = Config::parse("dataset.kind = jpeg\n").unwrap();
        assert!(parse_kind(&bad).is_err());
    }

    #[test]
    fn parse_lists() {
        let cfg = Config::parse("ablate.coeff_levels = 1, 10 ,50\n").unwrap();
        let v: Vec<f64> = parse_list(&cfg, "ablate.coeff_levels", "").unwrap();
        assert_eq!(v, vec![1.0, 10.0, 50.0]);
    }
}
