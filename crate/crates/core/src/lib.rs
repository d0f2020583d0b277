//! Simulation and nonparametric estimation for Markov-switching nonlinear
//! autoregressive processes
//!
//! ```text
//! Y_k = r_{X_k}(Y_{k-1}) + sigma_{X_k} eps_k
//! ```
//!
//! where `X` is a finite-state Markov chain. The crate covers simulation,
//! stability checks, complete-data Nadaraya-Watson estimation, and the
//! restoration-estimation Robbins-Monro algorithm for hidden regimes.

// `!(a < b)` comparisons deliberately reject NaN; index loops mirror the formulas.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod experiment;
pub mod hmm;
pub mod kernel;
pub mod model;
pub mod nw;
pub mod rm;
pub mod rng;
pub mod saem;
pub mod simulation;

pub use error::{Error, Result};
pub use kernel::{KernelConfig, KernelFamily};
pub use model::{
    check_stability, ModelSpec, RegressionFunction, StabilityReport, TransitionMatrix,
};
pub use nw::{nw_estimate, ThetaField};
pub use rm::{run_restoration_estimation, RmConfig, RmTrace, StepSchedule};
pub use simulation::{simulate, InitialValue, Trajectory};
