//! Learned conditional degradation density P(degraded | original): a
//! causal masked-convolution network with gated conditional blocks and a
//! discretized mixture of univariate Gaussians per pixel. Covers training,
//! NLL scoring in bits/dim, ancestral sampling, gradients with respect to
//! the conditioning image, and a causality audit.

mod audit;
mod mixture;
mod model;
mod network;
mod train;

pub mod checkpoint;

pub use audit::{causality_audit, AuditReport};
pub use mixture::{
    discretized_mixture_logprob, level_to_x, MixtureGrad, MixtureKind, MixtureParams,
    PixelMixture, BIN_HALF_WIDTH, MIN_LOG_SCALE,
};
pub use model::{
    forward, nll_and_condition_grad, nll_bits_per_dim, nll_grad_wrt_condition, sample,
    DegradationArch, DegradationModel,
};
pub use train::{train, trace_to_csv, DegradationPair, EpochStats, TrainConfig, TrainOutcome};
