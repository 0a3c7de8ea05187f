//! Exact pathwise simulation of Birth-Death-Swap population processes.
//!
//! A population is split into `p` subgroups. Individuals are born, die, or
//! swap between subgroups at rates that depend on the current state and on a
//! piecewise-constant random environment. Paths are produced by thinning a
//! dominating point process, which gives exact simulation, monotone couplings
//! between ordered models, and a common skeleton for the fast-swap regime.
//!
//! Main entry points:
//!
//! * [`engine::simulate_bds`], [`engine::coupled_pair`] and
//!   [`engine::reconstruct_by_ratio`];
//! * [`multiscale::simulate_two_timescale`] and occupation kernels;
//! * [`averaging::stationary_distribution`] and
//!   [`averaging::simulate_limit_process`];
//! * [`experiment::run`] for config-driven experiments.

// `!(x > 0.0)` is used on purpose so that NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod averaging;
pub mod engine;
pub mod environment;
pub mod error;
pub mod experiment;
pub mod intensity;
pub mod model;
pub mod multiscale;
pub mod plot;
pub mod rng;
pub mod stats;
pub mod toy;

pub use error::{BdsError, Result};
pub use model::{EventType, Population};
