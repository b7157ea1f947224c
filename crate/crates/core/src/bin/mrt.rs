use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mrt_core::cli;
use mrt_core::config::Config;

/// Latent-space image restoration toolkit: toy generative prior, learned
/// degradation likelihood, MMD-constrained optimization, and experiment
/// sweeps.
#[derive(Parser)]
#[command(name = "mrt", version, about)]
struct Cli {
    /// Config file (flat `key = value` lines); flags win over file values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Base random seed (config key `seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Extra config overrides, repeatable: --set restore.steps=10
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthetic degradation datasets.
    Dataset {
        #[command(subcommand)]
        cmd: DatasetCmd,
    },
    /// The learned degradation likelihood model.
    Degmodel {
        #[command(subcommand)]
        cmd: DegmodelCmd,
    },
    /// Kernel two-sample distance between sample sets.
    Mmd {
        #[command(subcommand)]
        cmd: MmdCmd,
    },
    /// Latent-space restoration.
    Restore {
        #[command(subcommand)]
        cmd: RestoreCmd,
    },
    /// Ablation sweeps.
    Ablate {
        #[command(subcommand)]
        cmd: AblateCmd,
    },
}

#[derive(Subcommand)]
enum DatasetCmd {
    /// Generate (condition, degraded) pairs plus a manifest.
    Make,
}

#[derive(Subcommand)]
enum DegmodelCmd {
    /// Train on a dataset directory; writes a checkpoint and NLL trace.
    Train,
    /// Score paired/unpaired NLL on a dataset, or rank candidate images.
    Score,
    /// Ancestral sampling from the conditional model.
    Sample,
}

#[derive(Subcommand)]
enum MmdCmd {
    /// Compute mmd2 between two sample-set tensor files.
    Eval,
}

#[derive(Subcommand)]
enum RestoreCmd {
    /// Restore against a trained degradation model.
    Run,
    /// Super-resolution with the L2 downscale fidelity.
    Sr,
}

#[derive(Subcommand)]
enum AblateCmd {
    /// Full factorial sweep over the configured axes.
    Run,
}

fn effective_config(args: &Cli) -> anyhow::Result<Config> {
    let mut cfg = match &args.config {
        Some(path) => Config::load(path)?,
        None => Config::new(),
    };
    if let Some(seed) = args.seed {
        cfg.set("seed", seed);
    }
    for kv in &args.sets {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| anyhow::anyhow!("--set expects KEY=VALUE, got {kv:?}"))?;
        cfg.set(k.trim(), v.trim());
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let args = Cli::parse();
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(args: &Cli) -> anyhow::Result<()> {
    let cfg = effective_config(args)?;
    let out = args
        .out
        .clone()
        .ok_or_else(|| anyhow::anyhow!("--out <dir> is required"))?;
    match &args.command {
        Command::Dataset { cmd: DatasetCmd::Make } => cli::dataset_make(&cfg, &out)?,
        Command::Degmodel { cmd } => match cmd {
            DegmodelCmd::Train => cli::degmodel_train(&cfg, &out)?,
            DegmodelCmd::Score => cli::degmodel_score(&cfg, &out)?,
            DegmodelCmd::Sample => cli::degmodel_sample(&cfg, &out)?,
        },
        Command::Mmd { cmd: MmdCmd::Eval } => cli::mmd_eval(&cfg, &out)?,
        Command::Restore { cmd } => match cmd {
            RestoreCmd::Run => cli::restore_run(&cfg, &out)?,
            RestoreCmd::Sr => cli::restore_sr_cmd(&cfg, &out)?,
        },
        Command::Ablate { cmd: AblateCmd::Run } => cli::ablate_run(&cfg, &out)?,
    }
    Ok(())
}
