//! Adaptive coarse ranking of noisy items into clusters of fixed sizes.
//!
//! Items are arms with unknown means in `[0, 1]`; the goal is to split them
//! into consecutive clusters of prescribed sizes using as few noisy samples
//! as possible. Pairwise preferences are handled through the Borda reduction
//! in [`env`].

pub mod baselines;
pub mod bernoulli;
pub mod complexity;
pub mod engine;
pub mod env;
pub mod harness;
pub mod metrics;
pub mod ranking;
#[cfg(feature = "service")]
pub mod session;

pub use bernoulli::{
    chernoff_information, kl_bernoulli, kl_ucb_lower, kl_ucb_upper, ExplorationSchedule, MathError,
};
pub use engine::{run_to_completion, EngineError, EngineState, RunOutcome, Sampler};
pub use ranking::{ClusterSpec, CoarseRanking, SpecError};
