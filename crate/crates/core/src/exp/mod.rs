//! Experiment harness: synthetic degradations, dataset construction, the
//! paired/unpaired and ranking protocols, and ablation sweeps.

mod ablate;
mod dataset;
mod degrade;
mod eval;

pub use ablate::{
    aggregate, enumerate_cells, mean, median, run_ablation, AblationAxis, AblationContext,
    CellSetting, CellStats, ExperimentSpec, MetricsReport, RunRow,
};
pub use dataset::{load_dataset, make_toy_dataset, save_dataset, ImageSource};
pub use degrade::{dct_block, idct_block, quant_step, DegradationKind};
pub use eval::{derangement, paired_unpaired_eval, rank_candidates, PairedUnpaired};
