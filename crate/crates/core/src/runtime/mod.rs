//! Per-rank task engine: the spawn-time offload decision, the priority
//! queues, the offload/return lifecycle and urgent local recomputes.

pub mod engine;
pub mod task;

pub use engine::{Delivered, Message, RankEngine, RecomputeOutcome, SpawnDecision, StepCounters};
pub use task::{ExecKind, Priority, TaskDescriptor, TaskId, TaskState};
