//! Turns a global statistics snapshot into the per-step offload quotas.
//!
//! A balancing round runs the reactive rule on every rank against the same
//! wait graph, adapts each rank's relaxation factor, blends the optimal
//! rows into the quotas in force and finally decays the shared blacklist.

pub mod blacklist;
pub mod ccp;
pub mod diffusion;
pub mod graph;
pub mod quota;
pub mod reactive;

pub use blacklist::Blacklist;
pub use ccp::{ccp_partition, resulting_loads};
pub use diffusion::{diffuse, DiffusionState};
pub use graph::WaitGraph;
pub use quota::{OffloadQuota, QuotaRow};
pub use reactive::{reactive_step, VictimFill};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BalancerParams<T> {
    pub omega_diff: T,
    pub omega_reinf: T,
    /// Adapt `omega_diff` every round.
    pub reinforcement: bool,
    pub fill: VictimFill,
}

/// What a round decided, for tracing.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RoundReport {
    pub critical: Option<usize>,
    pub victim: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct Balancer<T> {
    params: BalancerParams<T>,
    states: Vec<DiffusionState<T>>,
    optimal: Vec<QuotaRow>,
    offload: Vec<QuotaRow>,
    blacklist: Blacklist<T>,
    rounds: usize,
}

impl<T: Scalar> Balancer<T> {
    pub fn new(n_ranks: usize, params: BalancerParams<T>) -> Result<Self> {
        if n_ranks == 0 {
            return Err(Error::InvalidInput("balancer needs at least one rank".into()));
        }
        let state = DiffusionState::new(params.omega_diff, params.omega_reinf)?;
        Ok(Self {
            params,
            states: vec![state; n_ranks],
            optimal: vec![QuotaRow::new(); n_ranks],
            offload: vec![QuotaRow::new(); n_ranks],
            blacklist: Blacklist::new(),
            rounds: 0,
        })
    }

    pub fn n_ranks(&self) -> usize {
        self.states.len()
    }

    /// Seeds both the optimal and the applied rows, e.g. from a CCP guess.
    pub fn warm_start(&mut self, rows: Vec<QuotaRow>) -> Result<()> {
        if rows.len() != self.n_ranks() {
            return Err(Error::InvalidInput(format!(
                "warm start has {} rows for {} ranks",
                rows.len(),
                self.n_ranks()
            )));
        }
        self.optimal = rows.clone();
        self.offload = rows;
        Ok(())
    }

    /// Quotas to apply in the next step.
    pub fn quotas(&self) -> &[QuotaRow] {
        &self.offload
    }

    pub fn optimal(&self) -> &[QuotaRow] {
        &self.optimal
    }

    pub fn omega_diff(&self, rank: usize) -> T {
        self.states[rank].omega_diff()
    }

    pub fn blacklist(&self) -> &Blacklist<T> {
        &self.blacklist
    }

    pub fn record_emergency(&mut self, victim: usize) {
        self.blacklist.record_emergency(victim);
    }

    /// Ages the blacklist without touching any quota, for runs whose
    /// quotas come from elsewhere.
    pub fn decay_blacklist(&mut self) {
        self.blacklist.decay();
    }

    pub fn rounds(&self) -> usize {
        self.rounds
    }

    /// Runs one balancing round on `graph` with each rank's smoothed task cost.
    pub fn round(&mut self, graph: &WaitGraph<T>, task_costs: &[Option<T>]) -> RoundReport {
        let n = self.n_ranks();
        debug_assert_eq!(task_costs.len(), n);
        let mut report = RoundReport::default();
        if graph.edge_count() > 0 {
            report.critical = Some(graph.critical_rank());
        }

        for rank in 0..n {
            let outcome = reactive_step(
                rank,
                graph,
                task_costs,
                &self.optimal[rank],
                &self.offload[rank],
                &self.blacklist,
                self.params.fill,
            );
            if outcome.victim.is_some() {
                report.victim = outcome.victim;
            }
            let state = &mut self.states[rank];
            let omega = if self.params.reinforcement {
                let prev_prev = state.prev_offload.clone();
                state.reinforce(&outcome.optimal, &self.offload[rank], &self.optimal[rank], &prev_prev)
            } else {
                state.omega_diff()
            };
            let next = diffuse(omega, &outcome.optimal, &self.offload[rank]);
            state.prev_optimal = std::mem::replace(&mut self.optimal[rank], outcome.optimal);
            state.prev_offload = std::mem::replace(&mut self.offload[rank], next);
        }

        self.blacklist.decay();
        self.rounds += 1;
        report
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(omega: f64, reinforcement: bool) -> BalancerParams<f64> {
        BalancerParams {
            omega_diff: omega,
            omega_reinf: 1.0,
            reinforcement,
            fill: VictimFill::Replace,
        }
    }

    fn star(n: usize, sink: usize, w: f64) -> WaitGraph<f64> {
        let mut g = WaitGraph::new(n);
        for i in (0..n).filter(|&i| i != sink) {
            g.add_edge(i, sink, w).unwrap();
        }
        g
    }

    #[test]
    fn full_adoption_in_one_round() {
        let mut b = Balancer::new(3, params(1.0, false)).unwrap();
        let report = b.round(&star(3, 2, 1.0), &[Some(0.02); 3]);
        assert_eq!(report.critical, Some(2));
        assert_eq!(report.victim, Some(0));
        assert_eq!(b.quotas()[2], [(0, 25)].into_iter().collect());
        assert!(b.quotas()[0].is_empty());
    }

    #[test]
    fn blacklisted_victim_dropped_next_round() {
        let mut b = Balancer::new(3, params(1.0, false)).unwrap();
        b.round(&star(3, 2, 1.0), &[Some(0.02); 3]);
        b.record_emergency(0);
        b.round(&WaitGraph::new(3), &[Some(0.02); 3]);
        assert!(!b.quotas()[2].contains_key(&0));
    }

    #[test]
    fn reinforcement_keeps_omega_in_bounds() {
        let mut b = Balancer::new(4, params(1.0, true)).unwrap();
        for round in 0..40 {
            let sink = round % 4;
            b.round(&star(4, sink, 0.1 * (round as f64 + 1.0)), &[Some(0.01); 4]);
            for r in 0..4 {
                let w = b.omega_diff(r);
                assert!((0.1..=1.0).contains(&w), "omega {w}");
            }
        }
    }

    #[test]
    fn warm_start_shape_checked() {
        let mut b = Balancer::new(2, params(0.5, false)).unwrap();
        assert!(b.warm_start(vec![QuotaRow::new()]).is_err());
        b.warm_start(vec![[(1, 2)].into_iter().collect(), QuotaRow::new()])
            .unwrap();
        assert_eq!(b.quotas()[0].get(&1), Some(&2));
    }
}
