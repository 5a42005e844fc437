//! Discrete-time load balancing under join-the-shortest-queue routing.
//!
//! The crate simulates `N` parallel queues fed by one batch arrival stream in
//! the many-server heavy-traffic parametrization `lambda = N (1 - N^-alpha)`,
//! and provides the statistics used to compare steady-state behaviour with
//! the exponential heavy-traffic limit:
//!
//! * [`model`]: arrival/service laws, routing policies and the one-slot transition.
//! * [`projection`]: decomposition along the all-ones direction and `||q_perp||` moments.
//! * [`estimate`]: steady-state replications, batch means, merging and an exact oracle.
//! * [`stats`]: Wasserstein distance to `Exp(1)`, empirical MGFs, the Stein bound, fits.

pub mod batch;
pub mod error;
pub mod estimate;
pub mod model;
pub mod projection;
pub mod rng;
pub mod stats;

pub use batch::Estimate;
pub use error::{Error, Result};
pub use estimate::{
    merge_replications, oracle_stationary, run_replication, run_replications, EstimatorSpec, OracleResult,
    RunSummary, Schedule,
};
pub use model::{
    make_arrival_dist, make_service_dist, Atom, DiscreteDist, Load, Policy, QueueState, SimConfig, Simulator,
    StepRecord,
};
pub use projection::{decompose, Decomposition};
pub use stats::{MgfPoint, TheoryTargets};
