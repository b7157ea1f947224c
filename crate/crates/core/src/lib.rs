//! Perceptual image restoration by latent-space optimization on a toy
//! generative prior, constrained to the prior manifold through a kernel
//! two-sample distance and guided by a learned conditional degradation
//! likelihood.
//!
//! Module map:
//! - [`tensor`], [`image`], [`rng`], [`io`], [`gradcheck`]: numeric
//!   foundation, deterministic randomness, bit-exact file formats, and the
//!   finite-difference oracle backing every analytic gradient.
//! - [`mmd`]: the prior-manifold constraint (empirical squared MMD with
//!   analytic gradients and a bandwidth heuristic).
//! - [`prior`]: toy mapping and synthesis networks standing in for a
//!   style-based generator, prior sample banks, mean-latent initialization.
//! - [`degradation`]: a causal masked-convolution conditional density over
//!   degraded images with a discretized Gaussian mixture per pixel.
//! - [`restore`]: spherical gradient descent over style vectors against
//!   likelihood + MMD + cross-style objectives; super-resolution baseline.
//! - [`exp`]: synthetic degradation datasets, paired/unpaired evaluation,
//!   candidate ranking, ablation sweeps.
//! - [`config`], [`cli`]: flat key=value configs, run manifests, and the
//!   `mrt` command-line surface.

pub mod cli;
pub mod config;
pub mod degradation;
pub mod error;
pub mod exp;
pub mod gradcheck;
pub mod image;
pub mod io;
pub mod mmd;
pub mod prior;
pub mod restore;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use image::Image;
pub use rng::Rng;
pub use tensor::Tensor;
