//! Reactive, diffusive task offloading for bulk-synchronous codes.
//!
//! Ranks measure how long they wait on each other, agree on a critical
//! rank and temporarily ship ready tasks from it to under-employed victims.
//! The crate contains the statistics and balancing math (generic over the
//! floating point type), a per-rank task engine, a deterministic
//! discrete-event cluster simulator to drive them, and trace exports.

// range checks are written negated on purpose so that NaN fails them
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod balancer;
pub mod error;
pub mod runtime;
pub mod scalar;
pub mod scenarios;
pub mod simulator;
pub mod stats;
pub mod trace;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type MovingAverage64 = stats::MovingAverage<f64>;
pub type MovingAverage32 = stats::MovingAverage<f32>;
pub type RankStatistics64 = stats::RankStatistics<f64>;
pub type RankStatistics32 = stats::RankStatistics<f32>;
pub type WaitGraph64 = balancer::WaitGraph<f64>;
pub type WaitGraph32 = balancer::WaitGraph<f32>;
pub type Blacklist64 = balancer::Blacklist<f64>;
pub type DiffusionState64 = balancer::DiffusionState<f64>;
pub type Balancer64 = balancer::Balancer<f64>;
