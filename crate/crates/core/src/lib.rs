//! Fully Bayesian sparse and deep Gaussian processes.
//!
//! Kernel hyper-parameters, inducing inputs and whitened inducing variables
//! are all treated as random and sampled jointly with stochastic-gradient
//! Hamiltonian Monte Carlo, under either a FITC (`log E p`) or a VFE
//! (`E log p`) likelihood objective. Closed-form sparse-GP baselines, a small
//! SVGP trainer and evaluation metrics are included.
//!
//! The crate is `no_std` and only needs `alloc`. Random numbers come from any
//! [`rand::Rng`] supplied by the caller.

#![no_std]

extern crate alloc;
#[cfg(any(test, feature = "std"))]
extern crate std;

pub mod baseline;
pub mod deep;
pub mod error;
pub mod eval;
pub mod kernel;
pub mod likelihood;
pub mod linalg;
pub mod model;
pub mod prior;
pub mod sampler;
pub mod special;

pub use error::{Error, Result};
pub use kernel::{chol_jitter, gram, kernel_eval, GramMatrix, KernelHyper};
pub use likelihood::{LikelihoodKind, LikelihoodParams, MarginalMoments};
pub use linalg::Mat;
pub use model::{LayerState, ModelState, Objective};
pub use prior::{HyperPriorConfig, InducingPriorConfig, InducingPriorKind};
pub use sampler::{SampleSet, SghmcConfig};
