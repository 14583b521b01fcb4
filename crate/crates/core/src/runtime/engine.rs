use std::collections::{BTreeMap, BTreeSet, VecDeque};

use crate::balancer::quota::{OffloadQuota, QuotaRow};
use crate::error::{Error, Result};
use crate::runtime::task::{ExecKind, Priority, TaskDescriptor, TaskId, TaskState};

/// Outcome of the spawn hook.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpawnDecision {
    EnqueuedLocal,
    OffloadedTo(usize),
}

/// Messages exchanged between engines.
#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    /// A stolen task travelling from its origin to the victim.
    TaskSend { task: TaskDescriptor, victim: usize },
    /// The result of a stolen task travelling back to its origin.
    Return {
        task_id: TaskId,
        origin: usize,
        victim: usize,
        bytes: u64,
    },
}

impl Message {
    pub fn destination(&self) -> usize {
        match self {
            Message::TaskSend { victim, .. } => *victim,
            Message::Return { origin, .. } => *origin,
        }
    }

    pub fn bytes(&self) -> u64 {
        match self {
            Message::TaskSend { task, .. } => task.input_bytes,
            Message::Return { bytes, .. } => *bytes,
        }
    }
}

/// What a poll materialized.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Delivered {
    pub hosted: usize,
    pub returned: usize,
    pub wasted: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecomputeOutcome {
    pub task: TaskDescriptor,
    pub victim: usize,
    /// Set when the recompute counts as a fresh emergency for `victim`.
    pub emergency: Option<usize>,
}

#[derive(Debug, Clone)]
struct RetainedCopy {
    task: TaskDescriptor,
    victim: usize,
}

/// Per-step counters surfaced to the trace.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepCounters {
    pub spawned: usize,
    pub executed_local: usize,
    pub executed_hosted: usize,
    pub received: usize,
    /// Own offloaded tasks whose result came back in time.
    pub returned: usize,
    pub recomputes: usize,
    pub wasted_returns: usize,
    /// Victims blamed by this rank, in order.
    pub emergencies: Vec<usize>,
    /// Task sends per victim.
    pub offloaded_to: QuotaRow,
    /// Sum of execution times of everything this rank ran, seconds.
    pub busy_time: f64,
}

/// Task engine of one rank.
#[derive(Debug, Clone)]
pub struct RankEngine {
    rank: usize,
    cores: usize,
    starvation_c: usize,
    urgent: VecDeque<TaskDescriptor>,
    high: VecDeque<TaskDescriptor>,
    low: VecDeque<TaskDescriptor>,
    quota: OffloadQuota,
    round_robin_cursor: Option<usize>,
    hosted_remote: BTreeMap<TaskId, TaskDescriptor>,
    awaiting_return: BTreeMap<TaskId, RetainedCopy>,
    /// Recomputed tasks whose remote result is still travelling, by victim.
    recomputed_pending: BTreeMap<TaskId, usize>,
    emergency_mask: Option<usize>,
    blamed_this_step: BTreeSet<usize>,
    own: BTreeMap<TaskId, TaskState>,
    /// Own tasks currently in state `Offloaded`.
    in_flight: usize,
    /// Own tasks currently in state `Enqueued`.
    queued_local: usize,
    counters: StepCounters,
}

impl RankEngine {
    pub fn new(rank: usize, cores: usize, starvation_c: usize) -> Self {
        Self {
            rank,
            cores,
            starvation_c,
            urgent: VecDeque::new(),
            high: VecDeque::new(),
            low: VecDeque::new(),
            quota: OffloadQuota::default(),
            round_robin_cursor: None,
            hosted_remote: BTreeMap::new(),
            awaiting_return: BTreeMap::new(),
            recomputed_pending: BTreeMap::new(),
            emergency_mask: None,
            blamed_this_step: BTreeSet::new(),
            own: BTreeMap::new(),
            in_flight: 0,
            queued_local: 0,
            counters: StepCounters::default(),
        }
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn cores(&self) -> usize {
        self.cores
    }

    pub fn starvation_c(&self) -> usize {
        self.starvation_c
    }

    pub fn quota(&self) -> &OffloadQuota {
        &self.quota
    }

    pub fn counters(&self) -> &StepCounters {
        &self.counters
    }

    pub fn emergency_mask_active(&self) -> bool {
        self.emergency_mask.is_some()
    }

    /// Installs the quota for a new step and resets all step counters.
    pub fn begin_step(&mut self, quota: QuotaRow) {
        self.quota.reset(quota);
        self.round_robin_cursor = None;
        self.blamed_this_step.clear();
        self.own.clear();
        self.queued_local = 0;
        self.counters = StepCounters::default();
    }

    /// Ready tasks waiting for a core, all priorities.
    pub fn ready_len(&self) -> usize {
        self.urgent.len() + self.high.len() + self.low.len()
    }

    pub fn hosted_len(&self) -> usize {
        self.hosted_remote.len()
    }

    /// Own tasks of this step that are not settled yet.
    pub fn own_outstanding(&self) -> usize {
        self.queued_local + self.in_flight
    }

    /// Own tasks queued or executing here.
    pub fn own_local_outstanding(&self) -> usize {
        self.queued_local
    }

    /// Own work left on this rank: queued or running own tasks and queued
    /// recomputes.
    pub fn own_work_pending(&self) -> bool {
        !self.urgent.is_empty() || self.own_local_outstanding() > 0
    }

    /// Stolen tasks waiting for a core.
    pub fn ready_hosted_len(&self) -> usize {
        self.high.len()
    }

    pub fn awaiting_len(&self) -> usize {
        self.awaiting_return.len()
    }

    pub fn own_state(&self, id: TaskId) -> Option<TaskState> {
        self.own.get(&id).copied()
    }

    /// Next target with live quota after the cursor, wrapping around.
    fn pick_round_robin(&self) -> Option<usize> {
        let mut open = self.quota.open_targets();
        match self.round_robin_cursor {
            None => open.next(),
            Some(cursor) => {
                let open: Vec<usize> = open.collect();
                open.iter()
                    .copied()
                    .find(|&r| r > cursor)
                    .or_else(|| open.first().copied())
            }
        }
    }

    /// The spawn hook: offload the ready task when the local queue is long
    /// enough, the task is offloadable and some target has live quota;
    /// otherwise enqueue it locally with low priority.
    pub fn spawn_task(&mut self, mut task: TaskDescriptor) -> Result<SpawnDecision> {
        if task.origin != self.rank {
            return Err(Error::Consistency(format!(
                "rank {} asked to spawn task {} of rank {}",
                self.rank, task.id, task.origin
            )));
        }
        if self.own.insert(task.id, TaskState::Ready).is_some() {
            return Err(Error::Consistency(format!("task {} spawned twice", task.id)));
        }
        self.counters.spawned += 1;

        let not_starved = self.ready_len() > self.starvation_c;
        if not_starved && task.offloadable {
            if let Some(victim) = self.pick_round_robin() {
                if self.quota.try_take(victim) {
                    self.round_robin_cursor = Some(victim);
                    task.state = TaskState::Offloaded;
                    self.own.insert(task.id, TaskState::Offloaded);
                    self.in_flight += 1;
                    *self.counters.offloaded_to.entry(victim).or_insert(0) += 1;
                    self.awaiting_return.insert(task.id, RetainedCopy { task, victim });
                    return Ok(SpawnDecision::OffloadedTo(victim));
                }
            }
        }

        task.priority = Priority::Low;
        task.state = TaskState::Enqueued;
        self.own.insert(task.id, TaskState::Enqueued);
        self.queued_local += 1;
        self.low.push_back(task);
        Ok(SpawnDecision::EnqueuedLocal)
    }

    /// The retained copy of an offloaded task, for building the send.
    pub fn offloaded_copy(&self, id: TaskId) -> Option<&TaskDescriptor> {
        self.awaiting_return.get(&id).map(|c| &c.task)
    }

    /// Pops the next task for a free core: urgent recomputes, then stolen
    /// (high priority) tasks, then local low priority ones, FIFO within a class.
    pub fn execute_next(&mut self) -> Option<(TaskDescriptor, ExecKind)> {
        if let Some(t) = self.urgent.pop_front() {
            return Some((t, ExecKind::Recompute));
        }
        if let Some(mut t) = self.high.pop_front() {
            t.state = TaskState::ExecutingRemote;
            return Some((t, ExecKind::Hosted));
        }
        self.low.pop_front().map(|t| (t, ExecKind::Local))
    }

    /// True if a high priority stolen task is waiting while none runs.
    pub fn has_ready_hosted(&self) -> bool {
        !self.high.is_empty()
    }

    /// Book-keeping once a core finishes `task`. Hosted tasks produce the
    /// send-back message.
    pub fn finish(&mut self, task: &TaskDescriptor, kind: ExecKind, elapsed: f64) -> Result<Option<Message>> {
        self.counters.busy_time += elapsed;
        match kind {
            ExecKind::Local => {
                self.transition(task.id, TaskState::Enqueued, TaskState::Done)?;
                self.counters.executed_local += 1;
                Ok(None)
            }
            ExecKind::Recompute => {
                // state already moved to RecomputedLocally when the copy was issued
                match self.own.get(&task.id) {
                    Some(TaskState::RecomputedLocally) => {}
                    other => {
                        return Err(Error::Consistency(format!(
                            "recompute of {} finished in state {other:?}",
                            task.id
                        )))
                    }
                }
                self.counters.executed_local += 1;
                Ok(None)
            }
            ExecKind::Hosted => self.complete_remote(task.id).map(Some),
        }
    }

    /// A stolen task finished here: emit its send-back.
    pub fn complete_remote(&mut self, id: TaskId) -> Result<Message> {
        let task = self
            .hosted_remote
            .remove(&id)
            .ok_or_else(|| Error::Consistency(format!("rank {} completed unknown hosted task {id}", self.rank)))?;
        self.counters.executed_hosted += 1;
        Ok(Message::Return {
            task_id: id,
            origin: task.origin,
            victim: self.rank,
            bytes: task.output_bytes,
        })
    }

    /// Materializes arrived messages: task sends become high priority
    /// hosted tasks, returns settle the offloaded task (or are counted as
    /// wasted when the task was recomputed meanwhile).
    pub fn poll_incoming(&mut self, messages: impl IntoIterator<Item = Message>) -> Result<Delivered> {
        let mut delivered = Delivered::default();
        for msg in messages {
            match msg {
                Message::TaskSend { mut task, victim } => {
                    if victim != self.rank {
                        return Err(Error::Consistency(format!(
                            "task {} for rank {victim} delivered to rank {}",
                            task.id, self.rank
                        )));
                    }
                    task.priority = Priority::High;
                    task.state = TaskState::Enqueued;
                    if self.hosted_remote.insert(task.id, task.clone()).is_some() {
                        return Err(Error::Consistency(format!("task {} hosted twice", task.id)));
                    }
                    self.high.push_back(task);
                    self.counters.received += 1;
                    delivered.hosted += 1;
                }
                Message::Return { task_id, victim, .. } => {
                    if self.awaiting_return.remove(&task_id).is_some() {
                        self.transition(task_id, TaskState::Offloaded, TaskState::Returned)?;
                        self.counters.returned += 1;
                        delivered.returned += 1;
                    } else if self.recomputed_pending.remove(&task_id).is_some() {
                        self.counters.wasted_returns += 1;
                        delivered.wasted += 1;
                    } else {
                        return Err(Error::Consistency(format!(
                            "rank {} got a return for unknown task {task_id}",
                            self.rank
                        )));
                    }
                    self.maybe_clear_mask(victim);
                }
            }
        }
        Ok(delivered)
    }

    fn outstanding_toward(&self, victim: usize) -> bool {
        self.awaiting_return.values().any(|c| c.victim == victim)
            || self.recomputed_pending.values().any(|&v| v == victim)
    }

    fn maybe_clear_mask(&mut self, victim: usize) {
        if self.emergency_mask == Some(victim) && !self.outstanding_toward(victim) {
            self.emergency_mask = None;
        }
    }

    /// Earliest offloaded task whose result is still missing.
    pub fn blocked_on(&self) -> Option<(TaskId, usize)> {
        self.awaiting_return.iter().next().map(|(&id, c)| (id, c.victim))
    }

    /// Progress is blocked on a missing result and no recompute is done:
    /// blames the victim once per step.
    pub fn note_blocked(&mut self) -> Option<usize> {
        let (_, victim) = self.blocked_on()?;
        if self.blamed_this_step.insert(victim) {
            self.counters.emergencies.push(victim);
            Some(victim)
        } else {
            None
        }
    }

    /// Issues the retained copy of `id` for immediate local execution.
    /// The first recompute blames its victim and masks further blame until
    /// that victim's results are all back.
    pub fn urgent_recompute(&mut self, id: TaskId) -> Result<RecomputeOutcome> {
        let copy = self
            .awaiting_return
            .remove(&id)
            .ok_or_else(|| Error::Consistency(format!("rank {} has no retained copy of {id}", self.rank)))?;
        self.transition(id, TaskState::Offloaded, TaskState::RecomputedLocally)?;
        self.recomputed_pending.insert(id, copy.victim);
        self.counters.recomputes += 1;

        let emergency = if self.emergency_mask.is_none() {
            self.emergency_mask = Some(copy.victim);
            self.counters.emergencies.push(copy.victim);
            Some(copy.victim)
        } else {
            None
        };

        let mut task = copy.task;
        task.priority = Priority::High;
        task.state = TaskState::RecomputedLocally;
        self.urgent.push_back(task.clone());
        Ok(RecomputeOutcome {
            task,
            victim: copy.victim,
            emergency,
        })
    }

    fn transition(&mut self, id: TaskId, from: TaskState, to: TaskState) -> Result<()> {
        match self.own.get_mut(&id) {
            Some(state) if *state == from => {
                *state = to;
                match from {
                    TaskState::Offloaded => self.in_flight -= 1,
                    TaskState::Enqueued => self.queued_local -= 1,
                    _ => {}
                }
                Ok(())
            }
            other => Err(Error::Consistency(format!(
                "rank {}: task {id} expected in {from:?} for {to:?}, found {other:?}",
                self.rank
            ))),
        }
    }

    /// Nothing queued, nothing hosted, every own task settled.
    pub fn is_step_complete(&self) -> bool {
        self.ready_len() == 0 && self.hosted_remote.is_empty() && self.own_outstanding() == 0
    }

    /// Structural invariants that must hold between events.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        let rank = self.rank;
        for (&target, &allowed) in self.quota.target() {
            let live = self.quota.live_for(target);
            if live > allowed {
                return Err(format!(
                    "rank {rank}: live quota {live} > target {allowed} toward {target}"
                ));
            }
        }
        let sent: usize = self.counters.offloaded_to.values().sum();
        if sent != self.quota.used_total() {
            return Err(format!(
                "rank {rank}: {sent} offloads but quota consumed {}",
                self.quota.used_total()
            ));
        }
        for (&target, &n) in &self.counters.offloaded_to {
            if n > self.quota.target_for(target) {
                return Err(format!("rank {rank}: {n} offloads to {target} exceed quota"));
            }
        }
        if self.in_flight != self.awaiting_return.len() {
            return Err(format!(
                "rank {rank}: {} tasks in flight but {} retained copies",
                self.in_flight,
                self.awaiting_return.len()
            ));
        }
        if self
            .awaiting_return
            .keys()
            .any(|id| self.own.get(id) != Some(&TaskState::Offloaded))
        {
            return Err(format!("rank {rank}: retained copy for a task not in flight"));
        }
        for task in self.high.iter().chain(self.hosted_remote.values()) {
            if task.origin == rank {
                return Err(format!("rank {rank}: own task {} hosted as stolen", task.id));
            }
        }
        if self.high.iter().any(|t| !self.hosted_remote.contains_key(&t.id)) {
            return Err(format!("rank {rank}: queued stolen task missing from hosted set"));
        }
        Ok(())
    }

    /// [`RankEngine::check_invariants`] plus scans over every own task.
    pub fn check_invariants_full(&self) -> std::result::Result<(), String> {
        self.check_invariants()?;
        let rank = self.rank;
        let offloaded = self.own.values().filter(|s| **s == TaskState::Offloaded).count();
        if offloaded != self.in_flight {
            return Err(format!(
                "rank {rank}: in-flight counter {} but {offloaded} offloaded",
                self.in_flight
            ));
        }
        let queued = self.own.values().filter(|s| **s == TaskState::Enqueued).count();
        let unsettled = self.own.values().filter(|s| !s.is_settled()).count();
        if queued != self.queued_local || unsettled != self.own_outstanding() {
            return Err(format!(
                "rank {rank}: local counter {} but {queued} queued, {unsettled} unsettled",
                self.queued_local
            ));
        }
        if self.low.iter().any(|t| t.origin != rank) {
            return Err(format!("rank {rank}: foreign task in the local queue"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn task(id: u64, origin: usize) -> TaskDescriptor {
        TaskDescriptor::new(TaskId(id), origin, 0.01, 100, 100, true)
    }

    fn engine_with_queue(len: usize, c: usize, quota: &[(usize, usize)]) -> RankEngine {
        let mut e = RankEngine::new(0, 2, c);
        e.begin_step(quota.iter().copied().collect());
        for i in 0..len {
            let mut t = task(1000 + i as u64, 0);
            t.offloadable = false;
            assert_eq!(e.spawn_task(t).unwrap(), SpawnDecision::EnqueuedLocal);
        }
        e
    }

    #[test]
    fn queue_length_equal_to_c_keeps_task_local() {
        let mut e = engine_with_queue(4, 4, &[(1, 5)]);
        assert_eq!(e.spawn_task(task(1, 0)).unwrap(), SpawnDecision::EnqueuedLocal);
        assert_eq!(e.spawn_task(task(2, 0)).unwrap(), SpawnDecision::OffloadedTo(1));
    }

    #[test]
    fn zero_live_quota_keeps_task_local() {
        let mut e = engine_with_queue(10, 2, &[]);
        assert_eq!(e.spawn_task(task(1, 0)).unwrap(), SpawnDecision::EnqueuedLocal);
    }

    #[test]
    fn round_robin_over_positive_targets() {
        let mut e = engine_with_queue(10, 2, &[(1, 2), (3, 1)]);
        let picks: Vec<_> = (1..=3).map(|i| e.spawn_task(task(i, 0)).unwrap()).collect();
        assert_eq!(
            picks,
            vec![
                SpawnDecision::OffloadedTo(1),
                SpawnDecision::OffloadedTo(3),
                SpawnDecision::OffloadedTo(1)
            ]
        );
        assert_eq!(e.spawn_task(task(4, 0)).unwrap(), SpawnDecision::EnqueuedLocal);
        assert_eq!(e.quota().used_total(), 3);
        e.check_invariants_full().unwrap();
    }

    #[test]
    fn non_offloadable_never_leaves() {
        let mut e = engine_with_queue(10, 2, &[(1, 5)]);
        let mut t = task(1, 0);
        t.offloadable = false;
        assert_eq!(e.spawn_task(t).unwrap(), SpawnDecision::EnqueuedLocal);
    }

    #[test]
    fn foreign_task_cannot_be_spawned() {
        let mut e = RankEngine::new(0, 1, 0);
        e.begin_step(QuotaRow::new());
        assert!(e.spawn_task(task(1, 3)).is_err());
    }

    #[test]
    fn stolen_tasks_execute_first_fifo() {
        let mut e = RankEngine::new(1, 1, 0);
        e.begin_step(QuotaRow::new());
        e.spawn_task(task(10, 1)).unwrap();
        e.poll_incoming([
            Message::TaskSend {
                task: task(20, 0),
                victim: 1,
            },
            Message::TaskSend {
                task: task(21, 0),
                victim: 1,
            },
        ])
        .unwrap();
        let order: Vec<_> = std::iter::from_fn(|| e.execute_next())
            .map(|(t, k)| (t.id.0, k))
            .collect();
        assert_eq!(
            order,
            vec![(20, ExecKind::Hosted), (21, ExecKind::Hosted), (10, ExecKind::Local)]
        );
        assert!(e.execute_next().is_none());
    }

    #[test]
    fn stolen_task_returns_exactly_once() {
        let mut e = RankEngine::new(1, 1, 0);
        e.begin_step(QuotaRow::new());
        e.poll_incoming([Message::TaskSend {
            task: task(20, 0),
            victim: 1,
        }])
        .unwrap();
        let (t, kind) = e.execute_next().unwrap();
        let msg = e.finish(&t, kind, 0.01).unwrap().unwrap();
        assert_eq!(
            msg,
            Message::Return {
                task_id: TaskId(20),
                origin: 0,
                victim: 1,
                bytes: 100
            }
        );
        assert!(e.complete_remote(TaskId(20)).is_err());
        assert!(e.is_step_complete());
    }

    fn offloading_origin() -> RankEngine {
        let mut e = engine_with_queue(3, 2, &[(1, 1), (2, 1)]);
        assert_eq!(e.spawn_task(task(1, 0)).unwrap(), SpawnDecision::OffloadedTo(1));
        assert_eq!(e.spawn_task(task(2, 0)).unwrap(), SpawnDecision::OffloadedTo(2));
        e
    }

    #[test]
    fn return_settles_offloaded_task() {
        let mut e = offloading_origin();
        let d = e
            .poll_incoming([Message::Return {
                task_id: TaskId(1),
                origin: 0,
                victim: 1,
                bytes: 1,
            }])
            .unwrap();
        assert_eq!(d.returned, 1);
        assert_eq!(e.own_state(TaskId(1)), Some(TaskState::Returned));
        e.check_invariants_full().unwrap();
    }

    #[test]
    fn late_return_after_recompute_is_wasted() {
        let mut e = offloading_origin();
        let out = e.urgent_recompute(TaskId(1)).unwrap();
        assert_eq!(out.emergency, Some(1));
        assert_eq!(e.own_state(TaskId(1)), Some(TaskState::RecomputedLocally));
        let (t, kind) = e.execute_next().unwrap();
        assert_eq!(kind, ExecKind::Recompute);
        e.finish(&t, kind, 0.01).unwrap();
        let d = e
            .poll_incoming([Message::Return {
                task_id: TaskId(1),
                origin: 0,
                victim: 1,
                bytes: 1,
            }])
            .unwrap();
        assert_eq!(d.wasted, 1);
        assert_eq!(e.counters().wasted_returns, 1);
        assert_eq!(e.own_state(TaskId(1)), Some(TaskState::RecomputedLocally));
    }

    #[test]
    fn mask_suppresses_second_emergency_until_results_back() {
        let mut e = offloading_origin();
        assert_eq!(e.urgent_recompute(TaskId(1)).unwrap().emergency, Some(1));
        assert!(e.emergency_mask_active());
        assert_eq!(e.urgent_recompute(TaskId(2)).unwrap().emergency, None);
        e.poll_incoming([Message::Return {
            task_id: TaskId(1),
            origin: 0,
            victim: 1,
            bytes: 1,
        }])
        .unwrap();
        assert!(!e.emergency_mask_active());
    }

    #[test]
    fn recompute_without_copy_is_fatal() {
        let mut e = offloading_origin();
        assert!(matches!(e.urgent_recompute(TaskId(99)), Err(Error::Consistency(_))));
    }

    #[test]
    fn blocked_without_recompute_blames_once_per_victim() {
        let mut e = offloading_origin();
        assert_eq!(e.note_blocked(), Some(1));
        assert_eq!(e.note_blocked(), None);
        e.poll_incoming([Message::Return {
            task_id: TaskId(1),
            origin: 0,
            victim: 1,
            bytes: 1,
        }])
        .unwrap();
        assert_eq!(e.note_blocked(), Some(2));
    }

    #[test]
    fn begin_step_discards_unused_quota() {
        let mut e = engine_with_queue(10, 2, &[(1, 5)]);
        e.spawn_task(task(1, 0)).unwrap();
        e.begin_step([(2, 1)].into_iter().collect());
        assert_eq!(e.quota().live_for(1), 0);
        assert_eq!(e.quota().live_for(2), 1);
        assert_eq!(e.counters().spawned, 0);
    }
}
