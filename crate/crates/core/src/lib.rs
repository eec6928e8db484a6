//! Seeded simulator for cost-efficient distributed SGD.
//!
//! A master runs mini-batch SGD on a linear regression task with `n` workers
//! whose response times are exponential with unknown rates. Training is split
//! into rounds; in round `r` the master employs `r` workers per iteration and
//! waits for all of them. A combinatorial bandit with lower confidence bounds
//! picks which workers to employ.

pub mod analysis;
pub mod config;
pub mod error;
pub mod harness;
pub mod latency;
pub mod policies;
pub mod rng;
pub mod sgd;
pub mod verify;

pub use config::ExperimentConfig;
pub use error::{Error, Result};
pub use latency::{expected_max, variance_of_max, Superarm, WorkerPool};
pub use policies::{compute_schedule, BanditState, Policy, RadiusVariant, RoundSchedule};
pub use sgd::{convergence_bound, BoundParams, SgdProblem};
