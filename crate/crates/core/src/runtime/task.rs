use std::fmt;

/// Globally unique task id. Ids grow with spawn order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TaskId(pub u64);

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Priority {
    High,
    Low,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TaskState {
    Ready,
    Enqueued,
    Offloaded,
    ExecutingRemote,
    Returned,
    RecomputedLocally,
    Done,
}

impl TaskState {
    /// States from which no further transition is allowed.
    pub fn is_settled(self) -> bool {
        matches!(
            self,
            TaskState::Returned | TaskState::RecomputedLocally | TaskState::Done
        )
    }
}

/// One unit of work.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskDescriptor {
    pub id: TaskId,
    pub origin: usize,
    /// Execution time on a nominal-speed core, seconds.
    pub cost: f64,
    pub input_bytes: u64,
    pub output_bytes: u64,
    /// Compute heavy with small payloads: eligible for temporary migration.
    pub offloadable: bool,
    pub priority: Priority,
    pub state: TaskState,
}

impl TaskDescriptor {
    pub fn new(id: TaskId, origin: usize, cost: f64, input_bytes: u64, output_bytes: u64, offloadable: bool) -> Self {
        Self {
            id,
            origin,
            cost,
            input_bytes,
            output_bytes,
            offloadable,
            priority: Priority::Low,
            state: TaskState::Ready,
        }
    }
}

/// Why a task occupies a core.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ExecKind {
    /// Own task executed where it was spawned.
    Local,
    /// Stolen task executed on the victim.
    Hosted,
    /// Retained copy of an offloaded task executed after its result was late.
    Recompute,
}
