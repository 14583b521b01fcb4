//! Deterministic discrete-event model of a cluster running
//! bulk-synchronous steps.

pub mod config;
pub mod sim;
pub mod workload;

pub use config::{
    BalancingConfig, BalancingMode, ClusterConfig, Disturbance, FillRule, GeneratorKind, NetworkModel, Scenario,
    WorkloadSpec,
};
pub use sim::{run_simulation, Simulation};
pub use workload::{generate_workload, rank_speeds, StepLoad};
