//! The event loop.
//!
//! Every step installs the quotas, lets each rank spawn its tasks when it
//! starts (after an optional stall), and then processes task ends and
//! message arrivals in time order. Events with equal time are applied as
//! one batch before any touched rank is settled: settling picks up visible
//! messages, fills free cores and handles blocked ranks. The step ends
//! when no event is left; that instant is the barrier.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, VecDeque};

use log::debug;

use crate::balancer::{ccp_partition, Balancer, BalancerParams, QuotaRow, RoundReport, WaitGraph};
use crate::error::{Error, Result};
use crate::runtime::{ExecKind, Message, RankEngine, SpawnDecision, TaskDescriptor, TaskId};
use crate::simulator::config::{BalancingMode, Scenario};
use crate::simulator::workload::{delay_at, generate_workload, rank_speeds, speed_at, StepLoad};
use crate::stats::{apply_calibration, reduced_wait_time, RankStatistics};
use crate::trace::{sig9, EmergencyRecord, EventLog, RankStepRecord, StepRecord};

#[derive(Debug, Clone)]
enum EventKind {
    TaskEnd { core: usize },
    Arrive(Message),
    Start,
}

impl EventKind {
    fn class(&self) -> u8 {
        match self {
            EventKind::TaskEnd { .. } => 0,
            EventKind::Arrive(_) => 1,
            EventKind::Start => 2,
        }
    }
}

/// Ordered by time, then kind, rank, task id and insertion order.
#[derive(Debug, Clone)]
struct Event {
    time: f64,
    rank: usize,
    task: u64,
    seq: u64,
    kind: EventKind,
}

impl Event {
    fn key(&self) -> (u8, usize, u64, u64) {
        (self.kind.class(), self.rank, self.task, self.seq)
    }
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Event {}
impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Event {
    // reversed: BinaryHeap is a max-heap
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.key().cmp(&self.key()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Activity {
    NotStarted,
    Working,
    /// Own work exhausted; blocked on a victim's result or on the barrier.
    Waiting(Option<usize>),
}

#[derive(Debug, Clone)]
struct Running {
    task: TaskDescriptor,
    kind: ExecKind,
    start: f64,
}

#[derive(Debug, Clone)]
struct RankSim {
    engine: RankEngine,
    cores: Vec<Option<Running>>,
    inbox: Vec<Message>,
    speed: f64,
    start: f64,
    started: bool,
    complete: bool,
    finish: f64,
    activity: Activity,
    since: f64,
    waited: BTreeMap<Option<usize>, f64>,
    waiting_entered: bool,
    pending_at_wait: usize,
    received_at_wait: usize,
    executed: usize,
    exec_time: f64,
}

impl RankSim {
    fn new(rank: usize, cores: usize, c: usize) -> Self {
        Self {
            engine: RankEngine::new(rank, cores, c),
            cores: vec![None; cores],
            inbox: Vec::new(),
            speed: 1.0,
            start: 0.0,
            started: false,
            complete: false,
            finish: 0.0,
            activity: Activity::NotStarted,
            since: 0.0,
            waited: BTreeMap::new(),
            waiting_entered: false,
            pending_at_wait: 0,
            received_at_wait: 0,
            executed: 0,
            exec_time: 0.0,
        }
    }

    fn reset(&mut self, quota: QuotaRow, speed: f64, start: f64) {
        self.engine.begin_step(quota);
        self.inbox.clear();
        self.speed = speed;
        self.start = start;
        self.started = false;
        self.complete = false;
        self.finish = start;
        self.activity = Activity::NotStarted;
        self.since = start;
        self.waited.clear();
        self.waiting_entered = false;
        self.pending_at_wait = 0;
        self.received_at_wait = 0;
        self.executed = 0;
        self.exec_time = 0.0;
    }

    fn free_core(&self) -> Option<usize> {
        self.cores.iter().position(Option::is_none)
    }

    fn all_idle(&self) -> bool {
        self.cores.iter().all(Option::is_none)
    }

    fn running(&self, kind: ExecKind) -> usize {
        self.cores
            .iter()
            .filter(|c| c.as_ref().is_some_and(|r| r.kind == kind))
            .count()
    }

    fn account(&mut self, now: f64) {
        if let Activity::Waiting(on) = self.activity {
            *self.waited.entry(on).or_insert(0.0) += now - self.since;
        }
        self.since = now;
    }
}

/// Runs a whole scenario.
pub fn run_simulation(scenario: &Scenario) -> Result<EventLog> {
    Simulation::new(scenario)?.run()
}

/// A running simulation, stepped explicitly or driven by [`Simulation::run`].
pub struct Simulation {
    scenario: Scenario,
    workload: Vec<StepLoad>,
    base_speed: Vec<f64>,
    ranks: Vec<RankSim>,
    stats: Vec<RankStatistics<f64>>,
    snapshots: VecDeque<Vec<RankStatistics<f64>>>,
    balancer: Balancer<f64>,
    quotas: Vec<QuotaRow>,
    heap: BinaryHeap<Event>,
    seq: u64,
    time: f64,
    step: usize,
    next_task: u64,
    log: EventLog,
}

impl Simulation {
    pub fn new(scenario: &Scenario) -> Result<Self> {
        scenario.ensure_valid()?;
        let n = scenario.cluster.ranks;
        let b = &scenario.balancing;
        let c = b.starvation_c.unwrap_or(2 * scenario.cluster.cores_per_rank);
        let stats = (0..n)
            .map(|r| RankStatistics::new(r, b.omega_avg, b.window))
            .collect::<Result<Vec<_>>>()?;
        let balancer = Balancer::new(
            n,
            BalancerParams {
                omega_diff: b.omega_diff,
                omega_reinf: b.omega_reinf.unwrap_or(1.0),
                reinforcement: b.omega_reinf.is_some(),
                fill: b.victim_fill.into(),
            },
        )?;
        let workload = generate_workload(scenario);
        let mut sim = Self {
            base_speed: rank_speeds(&scenario.cluster),
            ranks: (0..n)
                .map(|r| RankSim::new(r, scenario.cluster.cores_per_rank, c))
                .collect(),
            stats,
            snapshots: VecDeque::new(),
            balancer,
            quotas: vec![QuotaRow::new(); n],
            heap: BinaryHeap::new(),
            seq: 0,
            time: 0.0,
            step: 0,
            next_task: 0,
            log: EventLog {
                scenario: scenario.name.clone(),
                mode: b.mode.to_string(),
                n_ranks: n,
                ..EventLog::default()
            },
            workload,
            scenario: scenario.clone(),
        };
        match b.mode {
            BalancingMode::Ccp => sim.quotas = sim.ccp_rows(0)?,
            BalancingMode::CcpDiffusion => {
                let rows = sim.ccp_rows(0)?;
                sim.balancer.warm_start(rows.clone())?;
                sim.quotas = rows;
            }
            BalancingMode::Off | BalancingMode::Diffusion => {}
        }
        Ok(sim)
    }

    fn ccp_rows(&self, step_idx: usize) -> Result<Vec<QuotaRow>> {
        let local = self.scenario.workload.local_tasks;
        let counts: Vec<usize> = self.workload[step_idx].offloadable.iter().map(|c| c + local).collect();
        ccp_partition(&counts, counts.len())
    }

    pub fn log(&self) -> &EventLog {
        &self.log
    }

    pub fn balancer(&self) -> &Balancer<f64> {
        &self.balancer
    }

    /// Quotas in force for the next step.
    pub fn quotas(&self) -> &[QuotaRow] {
        &self.quotas
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    pub fn run(mut self) -> Result<EventLog> {
        while self.step < self.scenario.steps {
            self.advance()?;
        }
        Ok(self.log)
    }

    fn push(&mut self, time: f64, rank: usize, task: u64, kind: EventKind) {
        self.seq += 1;
        self.heap.push(Event {
            time,
            rank,
            task,
            seq: self.seq,
            kind,
        });
    }

    fn send(&mut self, now: f64, msg: Message) {
        let dest = msg.destination();
        let id = match &msg {
            Message::TaskSend { task, .. } => task.id.0,
            Message::Return { task_id, .. } => task_id.0,
        };
        let arrive = now + self.scenario.cluster.network.transfer_time(msg.bytes());
        self.push(arrive, dest, id, EventKind::Arrive(msg));
    }

    fn checking(&self) -> bool {
        self.scenario.balancing.check_invariants
    }

    fn violation(&self, time: f64, message: String) -> Error {
        Error::Invariant { time, message }
    }

    /// Runs one step including the balancing round that follows it.
    pub fn advance(&mut self) -> Result<&StepRecord> {
        let step = self.step + 1;
        let idx = self.step;
        let t0 = self.time;
        let disturbances = self.scenario.disturbances.clone();
        for r in 0..self.ranks.len() {
            let speed = speed_at(self.base_speed[r], r, step, &disturbances);
            let start = t0 + delay_at(r, step, &disturbances);
            let quota = self.quotas[r].clone();
            self.ranks[r].reset(quota, speed, start);
            self.push(start, r, 0, EventKind::Start);
        }

        while let Some(first) = self.heap.pop() {
            let now = first.time;
            self.time = now;
            let mut batch = vec![first];
            while self.heap.peek().is_some_and(|e| e.time == now) {
                batch.push(self.heap.pop().expect("peeked"));
            }
            let mut dirty = BTreeSet::new();
            for ev in batch {
                dirty.insert(ev.rank);
                self.apply(ev, idx)?;
            }
            for r in dirty {
                self.settle(r, now, step)?;
            }
        }

        let barrier = self.time.max(t0);
        if let Some(stuck) = self.ranks.iter().find(|r| !r.complete) {
            let e = &stuck.engine;
            return Err(Error::Deadlock {
                step,
                time: barrier,
                diagnostic: format!(
                    "rank {} incomplete: {} ready, {} hosted, {} awaiting results, {} own outstanding",
                    e.rank(),
                    e.ready_len(),
                    e.hosted_len(),
                    e.awaiting_len(),
                    e.own_outstanding()
                ),
            });
        }
        if self.checking() {
            self.check_barrier(barrier)?;
        }
        for r in &mut self.ranks {
            r.account(barrier);
        }

        let wait_edges = self.measure_waits()?;
        let report = self.balance(step)?;
        let overhead = self.scenario.workload.serial_overhead + self.workload[idx].overhead;
        self.time = barrier + overhead;
        self.step = step;

        let per_rank = self
            .ranks
            .iter()
            .enumerate()
            .map(|(r, rs)| {
                let c = rs.engine.counters();
                RankStepRecord {
                    rank: r,
                    time_in_step: sig9(rs.finish - t0),
                    tasks_spawned: c.spawned,
                    tasks_executed: c.executed_local + c.executed_hosted,
                    tasks_offloaded_to: c.offloaded_to.clone(),
                    tasks_allowed_to: rs.engine.quota().target().clone(),
                    tasks_hosted: c.executed_hosted,
                    recomputes: c.recomputes,
                    wasted_returns: c.wasted_returns,
                    emergencies: c.emergencies.len(),
                    omega_diff: sig9(self.balancer.omega_diff(r)),
                    blacklist_weight: sig9(self.balancer.blacklist().weight(r)),
                }
            })
            .collect();
        self.log.steps.push(StepRecord {
            step,
            start_time: sig9(t0),
            makespan: sig9(self.time - t0),
            per_rank,
            wait_edges,
            critical: report.critical,
            victim: report.victim,
        });
        debug!("step {step} done at t={:.6}", self.time);
        Ok(self.log.steps.last().expect("pushed"))
    }

    fn apply(&mut self, ev: Event, idx: usize) -> Result<()> {
        let now = ev.time;
        let r = ev.rank;
        match ev.kind {
            EventKind::Start => self.spawn_all(r, now, idx)?,
            EventKind::Arrive(msg) => self.ranks[r].inbox.push(msg),
            EventKind::TaskEnd { core } => {
                let run = self.ranks[r].cores[core]
                    .take()
                    .ok_or_else(|| Error::Consistency(format!("rank {r} core {core} ended without a task")))?;
                let elapsed = now - run.start;
                let rs = &mut self.ranks[r];
                rs.executed += 1;
                rs.exec_time += elapsed;
                if let Some(msg) = rs.engine.finish(&run.task, run.kind, elapsed)? {
                    self.send(now, msg);
                }
            }
        }
        Ok(())
    }

    fn spawn_all(&mut self, r: usize, now: f64, idx: usize) -> Result<()> {
        let w = &self.scenario.workload;
        let (cost, input, output) = (w.task_cost, w.input_bytes, w.output_bytes);
        let offloadable = self.workload[idx].offloadable[r];
        let local = w.local_tasks;
        let check = self.checking();
        self.ranks[r].started = true;
        self.ranks[r].activity = Activity::Working;
        self.ranks[r].since = now;
        for k in 0..offloadable + local {
            let id = TaskId(self.next_task);
            self.next_task += 1;
            let task = TaskDescriptor::new(id, r, cost, input, output, k < offloadable);
            let ready_before = self.ranks[r].engine.ready_len();
            let decision = self.ranks[r].engine.spawn_task(task)?;
            if let SpawnDecision::OffloadedTo(victim) = decision {
                if check && ready_before <= self.ranks[r].engine.starvation_c() {
                    return Err(self.violation(
                        now,
                        format!("rank {r} offloaded {id} with only {ready_before} ready tasks"),
                    ));
                }
                let copy = self.ranks[r]
                    .engine
                    .offloaded_copy(id)
                    .cloned()
                    .ok_or_else(|| Error::Consistency(format!("no retained copy of {id}")))?;
                self.send(now, Message::TaskSend { task: copy, victim });
            }
        }
        Ok(())
    }

    fn dispatch(&mut self, r: usize, now: f64) -> Result<()> {
        while let Some(core) = self.ranks[r].free_core() {
            let hosted_waiting = self.ranks[r].engine.has_ready_hosted();
            let Some((task, kind)) = self.ranks[r].engine.execute_next() else {
                break;
            };
            if self.checking() && kind == ExecKind::Local && hosted_waiting {
                return Err(self.violation(now, format!("rank {r} ran local {} before a stolen task", task.id)));
            }
            let rs = &mut self.ranks[r];
            let end = now + task.cost / rs.speed;
            let id = task.id.0;
            rs.cores[core] = Some(Running { task, kind, start: now });
            self.push(end, r, id, EventKind::TaskEnd { core });
        }
        Ok(())
    }

    fn settle(&mut self, r: usize, now: f64, step: usize) -> Result<()> {
        if !self.ranks[r].started {
            return Ok(());
        }
        self.ranks[r].account(now);
        let eager = self.scenario.balancing.eager_pickup;
        let rs = &mut self.ranks[r];
        if !rs.inbox.is_empty() && (eager || rs.free_core().is_some()) {
            let msgs = std::mem::take(&mut rs.inbox);
            if self.scenario.balancing.check_invariants {
                for m in &msgs {
                    if let Message::TaskSend { task, .. } = m {
                        if task.origin == r {
                            return Err(self.violation(now, format!("rank {r} received its own task {}", task.id)));
                        }
                    }
                }
            }
            rs.engine.poll_incoming(msgs)?;
        }
        self.dispatch(r, now)?;

        let rs = &self.ranks[r];
        let blocked = rs.engine.ready_len() == 0
            && rs.running(ExecKind::Local) == 0
            && rs.running(ExecKind::Hosted) == 0
            && rs.engine.awaiting_len() > 0;
        if blocked {
            if self.scenario.balancing.urgent_recompute {
                while self.ranks[r].free_core().is_some() {
                    let Some((id, _)) = self.ranks[r].engine.blocked_on() else {
                        break;
                    };
                    let outcome = self.ranks[r].engine.urgent_recompute(id)?;
                    if let Some(v) = outcome.emergency {
                        self.emergency(step, now, r, v, true);
                    }
                    self.dispatch(r, now)?;
                }
            } else if let Some(v) = self.ranks[r].engine.note_blocked() {
                self.emergency(step, now, r, v, false);
            }
        }

        let rs = &mut self.ranks[r];
        let own_busy = rs.engine.own_work_pending() || rs.running(ExecKind::Recompute) > 0;
        rs.activity = if own_busy {
            Activity::Working
        } else {
            if !rs.waiting_entered {
                rs.waiting_entered = true;
                rs.pending_at_wait = rs.engine.ready_len();
                rs.received_at_wait = rs.running(ExecKind::Hosted);
            }
            Activity::Waiting(rs.engine.blocked_on().map(|(_, v)| v))
        };
        let complete = rs.engine.is_step_complete() && rs.all_idle();
        if complete && !rs.complete {
            rs.finish = now;
        }
        rs.complete = complete;

        if self.checking() {
            self.ranks[r]
                .engine
                .check_invariants()
                .map_err(|m| self.violation(now, m))?;
            self.log.invariant_checks += 1;
        }
        Ok(())
    }

    fn emergency(&mut self, step: usize, time: f64, origin: usize, victim: usize, recomputed: bool) {
        self.balancer.record_emergency(victim);
        self.log.emergencies.push(EmergencyRecord {
            step,
            time: sig9(time),
            origin,
            victim,
            recomputed,
        });
    }

    fn check_barrier(&mut self, now: f64) -> Result<()> {
        let mut sent = 0;
        let mut hosted = 0;
        for rs in &self.ranks {
            rs.engine.check_invariants_full().map_err(|m| self.violation(now, m))?;
            let c = rs.engine.counters();
            let own_local = c.executed_local - c.recomputes;
            if c.spawned != own_local + c.returned + c.recomputes {
                return Err(self.violation(
                    now,
                    format!(
                        "rank {}: {} spawned but {own_local} local + {} returned + {} recomputed",
                        rs.engine.rank(),
                        c.spawned,
                        c.returned,
                        c.recomputes
                    ),
                ));
            }
            sent += c.offloaded_to.values().sum::<usize>();
            hosted += c.received;
        }
        if sent != hosted {
            return Err(self.violation(now, format!("{sent} tasks sent but {hosted} hosted")));
        }
        self.log.invariant_checks += 1;
        Ok(())
    }

    /// Turns the step's wait spans into statistics samples and returns
    /// the calibrated, reduced edges of this step.
    fn measure_waits(&mut self) -> Result<Vec<(usize, usize, f64)>> {
        let n = self.ranks.len();
        let last = (0..n)
            .max_by(|&a, &b| self.ranks[a].finish.total_cmp(&self.ranks[b].finish).then(b.cmp(&a)))
            .unwrap_or(0);

        let mut raw = vec![0.0; n * n];
        for (i, rs) in self.ranks.iter().enumerate() {
            for (&on, &w) in &rs.waited {
                let j = on.unwrap_or(last);
                if j != i {
                    raw[i * n + j] += w;
                }
            }
            if rs.executed > 0 {
                let sample = rs.exec_time / rs.executed as f64;
                self.stats[i].record_task_cost(sample)?;
            }
        }
        let pairs: Vec<usize> = (0..n * n).filter(|k| k / n != k % n).collect();
        let mut values: Vec<f64> = pairs.iter().map(|&k| raw[k]).collect();
        if !values.is_empty() {
            apply_calibration(&mut values)?;
        }

        let fallback = self.scenario.workload.task_cost;
        let mut edges = Vec::new();
        for (&k, &w) in pairs.iter().zip(&values) {
            let (i, j) = (k / n, k % n);
            let rs = &self.ranks[i];
            let cost = self.stats[i].task_cost().unwrap_or(fallback);
            let penalty = self.scenario.balancing.penalty_per_received.unwrap_or(cost);
            let reduced = reduced_wait_time(w, rs.pending_at_wait, cost, rs.received_at_wait, penalty);
            self.stats[i].record_wait(j, reduced)?;
            if reduced > 0.0 {
                edges.push((i, j, sig9(reduced)));
            }
        }
        for (i, rs) in self.ranks.iter().enumerate() {
            self.stats[i].pending_tasks = rs.pending_at_wait;
            self.stats[i].received_tasks = rs.received_at_wait;
        }
        self.snapshots.push_back(self.stats.clone());
        while self.snapshots.len() > self.scenario.balancing.stats_lag {
            self.snapshots.pop_front();
        }
        Ok(edges)
    }

    /// Decides the quotas of the next step.
    fn balance(&mut self, step: usize) -> Result<RoundReport> {
        let snapshot = self.snapshots.front().expect("measure_waits pushed one");
        let graph = WaitGraph::from_statistics(snapshot);
        let costs: Vec<Option<f64>> = snapshot.iter().map(RankStatistics::task_cost).collect();
        let mode = self.scenario.balancing.mode;
        let report = match mode {
            BalancingMode::Diffusion | BalancingMode::CcpDiffusion => {
                let report = self.balancer.round(&graph, &costs);
                self.quotas = self.balancer.quotas().to_vec();
                report
            }
            BalancingMode::Off | BalancingMode::Ccp => {
                let mut report = RoundReport::default();
                if graph.edge_count() > 0 {
                    let critical = graph.critical_rank();
                    report.critical = Some(critical);
                    report.victim = graph.optimal_victim(&self.balancer.blacklist().ranks(), critical);
                }
                self.balancer.decay_blacklist();
                if mode == BalancingMode::Ccp && step < self.scenario.steps {
                    self.quotas = self.ccp_rows(step)?;
                }
                report
            }
        };
        Ok(report)
    }
}
