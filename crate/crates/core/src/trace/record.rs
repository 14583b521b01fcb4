use std::collections::BTreeMap;

use crate::balancer::quota::QuotaRow;

/// Rounds to 9 significant digits so that the textual exports reproduce
/// the stored value exactly.
pub fn sig9(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.8e}").parse().unwrap_or(x)
}

/// What one rank did during one step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RankStepRecord {
    pub rank: usize,
    /// From the step start until the rank ran out of work, seconds.
    pub time_in_step: f64,
    pub tasks_spawned: usize,
    /// Everything executed on this rank: own, hosted and recomputed tasks.
    pub tasks_executed: usize,
    pub tasks_offloaded_to: QuotaRow,
    /// Quota in force during the step.
    pub tasks_allowed_to: QuotaRow,
    pub tasks_hosted: usize,
    pub recomputes: usize,
    pub wasted_returns: usize,
    pub emergencies: usize,
    /// Relaxation factor after the balancing round that closed the step.
    pub omega_diff: f64,
    /// Blacklist weight of this rank as a victim after that round.
    pub blacklist_weight: f64,
}

impl RankStepRecord {
    pub fn tasks_offloaded(&self) -> usize {
        self.tasks_offloaded_to.values().sum()
    }

    /// Own tasks executed on this rank.
    pub fn local_tasks(&self) -> usize {
        self.tasks_executed - self.tasks_hosted
    }
}

/// One bulk-synchronous step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepRecord {
    /// 1-based.
    pub step: usize,
    pub start_time: f64,
    /// Barrier time minus start time, seconds.
    pub makespan: f64,
    pub per_rank: Vec<RankStepRecord>,
    /// Calibrated and reduced waits measured in this step, `(from, to, seconds)`.
    pub wait_edges: Vec<(usize, usize, f64)>,
    /// Critical rank and optimal victim picked by the round after this step.
    pub critical: Option<usize>,
    pub victim: Option<usize>,
}

impl StepRecord {
    pub fn total_wait(&self) -> f64 {
        self.wait_edges.iter().map(|e| e.2).sum()
    }

    pub fn offloaded_total(&self) -> usize {
        self.per_rank.iter().map(RankStepRecord::tasks_offloaded).sum()
    }

    pub fn hosted_total(&self) -> usize {
        self.per_rank.iter().map(|r| r.tasks_hosted).sum()
    }

    /// Waits keyed by `(from, to)`.
    pub fn wait_map(&self) -> BTreeMap<(usize, usize), f64> {
        self.wait_edges.iter().map(|&(i, j, w)| ((i, j), w)).collect()
    }
}

/// One blamed result, in the order they happened.
#[derive(Debug, Clone, PartialEq)]
pub struct EmergencyRecord {
    pub step: usize,
    pub time: f64,
    pub origin: usize,
    pub victim: usize,
    pub recomputed: bool,
}

/// Complete output of a simulation run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventLog {
    pub scenario: String,
    pub mode: String,
    pub n_ranks: usize,
    pub steps: Vec<StepRecord>,
    pub emergencies: Vec<EmergencyRecord>,
    /// Number of in-loop invariant evaluations (0 when checking is off).
    pub invariant_checks: u64,
}

impl EventLog {
    pub fn total_time(&self) -> f64 {
        self.steps.iter().map(|s| s.makespan).sum()
    }

    /// Per-step makespans, step 1 first.
    pub fn makespans(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.makespan).collect()
    }

    /// Mean makespan over the 1-based inclusive step range, `None` if empty.
    pub fn mean_makespan(&self, first: usize, last: usize) -> Option<f64> {
        let picked: Vec<f64> = self
            .steps
            .iter()
            .filter(|s| s.step >= first && s.step <= last)
            .map(|s| s.makespan)
            .collect();
        if picked.is_empty() {
            None
        } else {
            Some(picked.iter().sum::<f64>() / picked.len() as f64)
        }
    }

    pub fn max_makespan(&self) -> f64 {
        self.steps.iter().map(|s| s.makespan).fold(0.0, f64::max)
    }
}
