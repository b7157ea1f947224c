//! Ablation sweeps over the restoration configuration axes, with exact
//! aggregate bookkeeping.

use rayon::prelude::*;

use crate::degradation::{
    nll_bits_per_dim, train, DegradationArch, DegradationModel, DegradationPair, TrainConfig,
};
use crate::error::{Error, Result};
use crate::mmd::{mmd2, MmdConfig};
use crate::prior::{sample_prior_bank, MappingNetwork, PriorBank, SynthesisNetwork};
use crate::restore::{restore, RestoreConfig};
use crate::rng::{derive_seed, Rng};

use super::dataset::{make_toy_dataset, ImageSource};
use super::degrade::DegradationKind;
use super::eval::derangement;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum AblationAxis {
    MeanInit,
    Mmd,
    Spherical,
    Coeff,
    Epochs,
    Steps,
}

impl AblationAxis {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "mean_init" => Ok(AblationAxis::MeanInit),
            "mmd" => Ok(AblationAxis::Mmd),
            "spherical" => Ok(AblationAxis::Spherical),
            "coeff" => Ok(AblationAxis::Coeff),
            "epochs" => Ok(AblationAxis::Epochs),
            "steps" => Ok(AblationAxis::Steps),
            other => Err(Error::Config(format!("unknown ablation axis {other:?}"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            AblationAxis::MeanInit => "mean_init",
            AblationAxis::Mmd => "mmd",
            AblationAxis::Spherical => "spherical",
            AblationAxis::Coeff => "coeff",
            AblationAxis::Epochs => "epochs",
            AblationAxis::Steps => "steps",
        }
    }
}

/// Everything one sweep needs: data generation, training, restoration, and
/// the level lists for the non-boolean axes.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub dataset_size: usize,
    pub test_images: usize,
    pub kind: DegradationKind,
    pub arch: DegradationArch,
    pub train: TrainConfig,
    pub restore: RestoreConfig,
    pub seeds: Vec<u64>,
    pub prior_seed: u64,
    pub bank_count: usize,
    pub coeff_levels: Vec<f64>,
    pub epochs_levels: Vec<usize>,
    pub steps_levels: Vec<usize>,
    pub base_seed: u64,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dataset_size < 4 {
            return Err(Error::InvalidArgument(
                "dataset size must be >= 4 for train/val/test splitting".into(),
            ));
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidArgument("seeds list must be non-empty".into()));
        }
        if self.test_images < 2 {
            return Err(Error::InvalidArgument("need >= 2 test images".into()));
        }
        self.kind.validate()
    }
}

/// One cell of the factorial: the sparse overrides it applies.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CellSetting {
    pub mean_init: Option<bool>,
    pub mmd: Option<bool>,
    pub spherical: Option<bool>,
    pub coeff: Option<f64>,
    pub epochs: Option<usize>,
    pub steps: Option<usize>,
}

impl CellSetting {
    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if let Some(v) = self.mean_init {
            parts.push(format!("mean_init={}", if v { "on" } else { "off" }));
        }
        if let Some(v) = self.mmd {
            parts.push(format!("mmd={}", if v { "on" } else { "off" }));
        }
        if let Some(v) = self.spherical {
            parts.push(format!("spherical={}", if v { "on" } else { "off" }));
        }
        if let Some(v) = self.coeff {
            parts.push(format!("coeff={v}"));
        }
        if let Some(v) = self.epochs {
            parts.push(format!("epochs={v}"));
        }
        if let Some(v) = self.steps {
            parts.push(format!("steps={v}"));
        }
        if parts.is_empty() {
            "default".to_string()
        } else {
            parts.join("|")
        }
    }

    fn apply(&self, base: &RestoreConfig) -> RestoreConfig {
        let mut cfg = *base;
        if let Some(v) = self.mean_init {
            cfg.use_mean_init = v;
        }
        if let Some(v) = self.mmd {
            cfg.use_mmd = v;
        }
        if let Some(v) = self.spherical {
            cfg.use_spherical = v;
        }
        if let Some(v) = self.coeff {
            cfg.coeff = v;
        }
        if let Some(v) = self.steps {
            cfg.steps = v;
        }
        cfg
    }
}

/// Full factorial over the requested axes.
pub fn enumerate_cells(spec: &ExperimentSpec, axes: &[AblationAxis]) -> Result<Vec<CellSetting>> {
    let mut axes = axes.to_vec();
    axes.sort();
    axes.dedup();
    let mut cells = vec![CellSetting::default()];
    for axis in &axes {
        let mut next = Vec::new();
        for cell in &cells {
            match axis {
                AblationAxis::MeanInit => {
                    for v in [false, true] {
                        let mut c = cell.clone();
                        c.mean_init = Some(v);
                        next.push(c);
                    }
                }
                AblationAxis::Mmd => {
                    for v in [false, true] {
                        let mut c = cell.clone();
                        c.mmd = Some(v);
                        next.push(c);
                    }
                }
                AblationAxis::Spherical => {
                    for v in [false, true] {
                        let mut c = cell.clone();
                        c.spherical = Some(v);
                        next.push(c);
                    }
                }
                AblationAxis::Coeff => {
                    if spec.coeff_levels.len() < 2 {
                        return Err(Error::InvalidArgument("coeff axis needs >= 2 levels".into()));
                    }
                    for &v in &spec.coeff_levels {
                        let mut c = cell.clone();
                        c.coeff = Some(v);
                        next.push(c);
                    }
                }
                AblationAxis::Epochs => {
                    if spec.epochs_levels.len() < 2 {
                        return Err(Error::InvalidArgument("epochs axis needs >= 2 levels".into()));
                    }
                    for &v in &spec.epochs_levels {
                        let mut c = cell.clone();
                        c.epochs = Some(v);
                        next.push(c);
                    }
                }
                AblationAxis::Steps => {
                    if spec.steps_levels.len() < 2 {
                        return Err(Error::InvalidArgument("steps axis needs >= 2 levels".into()));
                    }
                    for &v in &spec.steps_levels {
                        let mut c = cell.clone();
                        c.steps = Some(v);
                        next.push(c);
                    }
                }
            }
        }
        cells = next;
    }
    Ok(cells)
}

/// One restoration run's metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRow {
    pub cell: String,
    pub image: usize,
    pub seed: u64,
    pub final_mmd2: f64,
    pub restored_nll: f64,
    pub paired_nll: f64,
    pub unpaired_nll: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellStats {
    pub cell: String,
    pub runs: usize,
    pub mean_mmd2: f64,
    pub median_mmd2: f64,
    pub mean_restored_nll: f64,
    pub median_restored_nll: f64,
}

#[derive(Debug, Clone)]
pub struct MetricsReport {
    pub rows: Vec<RunRow>,
    pub cells: Vec<CellStats>,
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite metrics"));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Aggregates rows per cell, preserving first-appearance cell order.
pub fn aggregate(rows: &[RunRow]) -> Vec<CellStats> {
    let mut order: Vec<String> = Vec::new();
    for r in rows {
        if !order.contains(&r.cell) {
            order.push(r.cell.clone());
        }
    }
    order
        .into_iter()
        .map(|cell| {
            let mmds: Vec<f64> = rows
                .iter()
                .filter(|r| r.cell == cell)
                .map(|r| r.final_mmd2)
                .collect();
            let nlls: Vec<f64> = rows
                .iter()
                .filter(|r| r.cell == cell)
                .map(|r| r.restored_nll)
                .collect();
            CellStats {
                cell,
                runs: mmds.len(),
                mean_mmd2: mean(&mmds),
                median_mmd2: median(&mmds),
                mean_restored_nll: mean(&nlls),
                median_restored_nll: median(&nlls),
            }
        })
        .collect()
}

impl MetricsReport {
    pub fn runs_csv(&self) -> String {
        let mut out =
            String::from("cell,image,seed,final_mmd2,restored_nll,paired_nll,unpaired_nll\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.cell, r.image, r.seed, r.final_mmd2, r.restored_nll, r.paired_nll, r.unpaired_nll
            ));
        }
        out
    }

    pub fn cells_csv(&self) -> String {
        let mut out = String::from(
            "cell,runs,mean_mmd2,median_mmd2,mean_restored_nll,median_restored_nll\n",
        );
        for c in &self.cells {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                c.cell, c.runs, c.mean_mmd2, c.median_mmd2, c.mean_restored_nll,
                c.median_restored_nll
            ));
        }
        out
    }
}

/// Shared fixtures for one sweep: prior networks, bank, dataset splits, and
/// one trained model per requested epoch count.
pub struct AblationContext {
    pub mapping: MappingNetwork,
    pub synthesis: SynthesisNetwork,
    pub bank: PriorBank,
    pub train_pairs: Vec<DegradationPair>,
    pub test_pairs: Vec<DegradationPair>,
    pub models: Vec<(usize, DegradationModel)>,
    pub eval_gamma: f64,
}

impl AblationContext {
    pub fn prepare(spec: &ExperimentSpec, axes: &[AblationAxis]) -> Result<Self> {
        spec.validate()?;
        let mapping = MappingNetwork::toy(32, 32, spec.prior_seed)?;
        let synthesis = SynthesisNetwork::toy(32, 8, spec.arch.image_channels, spec.prior_seed)?;
        let mut bank_rng = Rng::from_seed(derive_seed(spec.base_seed, &[11]));
        let bank = sample_prior_bank(&mapping, spec.bank_count, &mut bank_rng)?;

        let mut data_rng = Rng::from_seed(derive_seed(spec.base_seed, &[12]));
        let all = make_toy_dataset(
            &spec.kind,
            spec.dataset_size + spec.test_images,
            &ImageSource::Prior {
                mapping: &mapping,
                synthesis: &synthesis,
            },
            &mut data_rng,
        )?;
        let (train_pairs, test_pairs) = {
            let mut v = all;
            let test = v.split_off(spec.dataset_size);
            (v, test)
        };

        let mut epoch_levels: Vec<usize> = if axes.contains(&AblationAxis::Epochs) {
            spec.epochs_levels.clone()
        } else {
            vec![spec.train.epochs]
        };
        epoch_levels.sort_unstable();
        epoch_levels.dedup();

        let models = epoch_levels
            .into_iter()
            .map(|epochs| {
                let mut model = DegradationModel::new(spec.arch, derive_seed(spec.base_seed, &[13]))?;
                let cfg = TrainConfig {
                    epochs,
                    // The epochs axis must actually train that long.
                    patience: epochs,
                    ..spec.train
                };
                let mut rng = Rng::from_seed(derive_seed(spec.base_seed, &[14, epochs as u64]));
                train(&mut model, &train_pairs, &cfg, &mut rng)?;
                Ok((epochs, model))
            })
            .collect::<Result<Vec<_>>>()?;

        let eval_gamma = spec.restore.resolve_gamma(&bank)?;
        Ok(AblationContext {
            mapping,
            synthesis,
            bank,
            train_pairs,
            test_pairs,
            models,
            eval_gamma,
        })
    }

    fn model_for(&self, epochs: Option<usize>) -> &DegradationModel {
        match epochs {
            None => &self.models[0].1,
            Some(e) => {
                &self
                    .models
                    .iter()
                    .find(|(lvl, _)| *lvl == e)
                    .expect("model trained for every epochs level")
                    .1
            }
        }
    }
}

/// Runs the full factorial: every cell on every test image for every seed.
pub fn run_ablation(spec: &ExperimentSpec, axes: &[AblationAxis]) -> Result<MetricsReport> {
    let ctx = AblationContext::prepare(spec, axes)?;
    let cells = enumerate_cells(spec, axes)?;
    let eval_cfg = MmdConfig {
        gamma: ctx.eval_gamma,
        squared_exponent: spec.restore.squared_exponent,
    };

    // Fixed derangement over the test images for the unpaired column.
    let sigma = derangement(
        ctx.test_pairs.len(),
        &mut Rng::from_seed(derive_seed(spec.base_seed, &[15])),
    )?;

    struct RunDesc {
        cell_idx: usize,
        image: usize,
        seed_idx: usize,
    }
    let mut descs = Vec::new();
    for cell_idx in 0..cells.len() {
        for image in 0..ctx.test_pairs.len() {
            for seed_idx in 0..spec.seeds.len() {
                descs.push(RunDesc {
                    cell_idx,
                    image,
                    seed_idx,
                });
            }
        }
    }

    let rows: Vec<RunRow> = descs
        .par_iter()
        .map(|desc| -> Result<RunRow> {
            let cell = &cells[desc.cell_idx];
            let pair = &ctx.test_pairs[desc.image];
            let model = ctx.model_for(cell.epochs);
            let mut cfg = cell.apply(&spec.restore);
            cfg.seed = derive_seed(
                spec.base_seed,
                &[
                    desc.cell_idx as u64,
                    desc.image as u64,
                    spec.seeds[desc.seed_idx],
                ],
            );
            let result = restore(
                &pair.degraded,
                &ctx.mapping,
                &ctx.synthesis,
                model,
                &ctx.bank,
                &cfg,
            )?;
            let final_mmd2 = mmd2(&result.final_styles, ctx.bank.samples(), &eval_cfg)?;
            let restored_nll = nll_bits_per_dim(model, &pair.degraded, &result.final_image)?;
            let paired_nll = nll_bits_per_dim(model, &pair.degraded, &pair.condition)?;
            let unpaired_nll = nll_bits_per_dim(
                model,
                &pair.degraded,
                &ctx.test_pairs[sigma[desc.image]].condition,
            )?;
            Ok(RunRow {
                cell: cell.label(),
                image: desc.image,
                seed: spec.seeds[desc.seed_idx],
                final_mmd2,
                restored_nll,
                paired_nll,
                unpaired_nll,
            })
        })
        .collect::<Result<_>>()?;

    let cells_stats = aggregate(&rows);
    Ok(MetricsReport {
        rows,
        cells: cells_stats,
    })
}
