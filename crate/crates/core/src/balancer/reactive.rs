use crate::balancer::blacklist::Blacklist;
use crate::balancer::graph::WaitGraph;
use crate::balancer::quota::{normalized, QuotaRow};
use crate::scalar::Scalar;

/// How the critical rank updates its optimal entry toward the chosen victim.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VictimFill {
    /// The entry becomes the fill-up amount.
    Replace,
    /// The fill-up amount is added on top of the quota currently in force.
    #[default]
    Accumulate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReactiveOutcome {
    pub optimal: QuotaRow,
    /// Victim chosen in this round, if the rank was critical and found one.
    pub victim: Option<usize>,
}

/// Tasks that fill half of a victim's idle time: `floor(0.5 * wait / task_cost)`.
pub fn fill_up_tasks<T: Scalar>(max_wait: T, task_cost: T) -> usize {
    (T::lit(0.5) * max_wait / task_cost)
        .floor()
        .max(T::zero())
        .to_usize()
        .unwrap_or(0)
}

/// One round of reactive balancing as seen by `rank`.
///
/// Blacklisted targets are zeroed. If `rank` is the critical rank of the
/// snapshot it moves its entry toward the optimal victim to the fill-up
/// amount, counted in the victim's per-task time (`task_costs[victim]`,
/// falling back to the rank's own); every other entry carries over.
/// Without any task cost measurement the optimal row is returned unchanged.
pub fn reactive_step<T: Scalar>(
    rank: usize,
    graph: &WaitGraph<T>,
    task_costs: &[Option<T>],
    optimal: &QuotaRow,
    current_offload: &QuotaRow,
    blacklist: &Blacklist<T>,
    fill: VictimFill,
) -> ReactiveOutcome {
    let usable = |r: usize| {
        task_costs
            .get(r)
            .copied()
            .flatten()
            .filter(|c| *c > T::zero() && c.is_finite())
    };
    let own_cost = match usable(rank) {
        Some(c) => c,
        None => {
            return ReactiveOutcome {
                optimal: optimal.clone(),
                victim: None,
            }
        }
    };

    let mut next = optimal.clone();
    for target in blacklist.ranks() {
        next.remove(&target);
    }

    let mut victim = None;
    if graph.edge_count() > 0 && graph.critical_rank() == rank {
        victim = graph.optimal_victim(&blacklist.ranks(), rank);
        if let Some(n) = victim {
            let cost = usable(n).unwrap_or(own_cost);
            let tasks = fill_up_tasks(graph.max_outbound_edge(n), cost);
            let base = match fill {
                VictimFill::Replace => 0,
                VictimFill::Accumulate => current_offload.get(&n).copied().unwrap_or(0),
            };
            next.insert(n, base + tasks);
        }
    }

    ReactiveOutcome {
        optimal: normalized(next),
        victim,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn star(n: usize, sink: usize, waits: &[(usize, f64)]) -> WaitGraph<f64> {
        let mut g = WaitGraph::new(n);
        for &(i, w) in waits {
            g.add_edge(i, sink, w).unwrap();
        }
        g
    }

    #[test]
    fn critical_rank_fills_half_of_victim_wait() {
        let g = star(3, 1, &[(0, 1.0), (2, 0.4)]);
        let out = reactive_step(
            1,
            &g,
            &[Some(0.02); 3],
            &QuotaRow::new(),
            &QuotaRow::new(),
            &Blacklist::new(),
            VictimFill::Replace,
        );
        assert_eq!(out.victim, Some(0));
        assert_eq!(out.optimal, [(0, 25)].into_iter().collect());
    }

    #[test]
    fn non_critical_rank_keeps_its_row() {
        let g = star(3, 1, &[(0, 1.0), (2, 0.4)]);
        let prev: QuotaRow = [(2, 3)].into_iter().collect();
        let out = reactive_step(
            0,
            &g,
            &[Some(0.02); 3],
            &prev,
            &prev,
            &Blacklist::new(),
            VictimFill::Replace,
        );
        assert_eq!(out.optimal, prev);
        assert_eq!(out.victim, None);
    }

    #[test]
    fn blacklisted_partner_forced_to_zero() {
        let g = star(3, 1, &[(0, 1.0), (2, 0.4)]);
        let prev: QuotaRow = [(0, 25), (2, 4)].into_iter().collect();
        let mut bl = Blacklist::new();
        bl.record_emergency(0);
        let out = reactive_step(1, &g, &[Some(0.02); 3], &prev, &prev, &bl, VictimFill::Replace);
        // victim falls back to rank 2: floor(0.5 * 0.4 / 0.02) = 10
        assert_eq!(out.victim, Some(2));
        assert_eq!(out.optimal, [(2, 10)].into_iter().collect());
        let out = reactive_step(0, &g, &[Some(0.02); 3], &prev, &prev, &bl, VictimFill::Replace);
        assert_eq!(out.optimal, [(2, 4)].into_iter().collect());
    }

    #[test]
    fn missing_task_cost_is_noop() {
        let g = star(3, 1, &[(0, 1.0)]);
        let prev: QuotaRow = [(0, 5)].into_iter().collect();
        let mut bl = Blacklist::new();
        bl.record_emergency(0);
        let out = reactive_step(1, &g, &[None; 3], &prev, &prev, &bl, VictimFill::Replace);
        assert_eq!(out.optimal, prev);
    }

    #[test]
    fn accumulate_adds_to_current_quota() {
        let g = star(3, 1, &[(0, 1.0)]);
        let cur: QuotaRow = [(0, 5)].into_iter().collect();
        let out = reactive_step(
            1,
            &g,
            &[Some(0.02); 3],
            &cur,
            &cur,
            &Blacklist::new(),
            VictimFill::Accumulate,
        );
        assert_eq!(out.optimal, [(0, 30)].into_iter().collect());
    }

    #[test]
    fn fill_counts_in_victim_task_time() {
        let g = star(3, 1, &[(0, 1.0)]);
        let costs = [Some(0.05), Some(0.02), None];
        let out = reactive_step(
            1,
            &g,
            &costs,
            &QuotaRow::new(),
            &QuotaRow::new(),
            &Blacklist::new(),
            VictimFill::Replace,
        );
        assert_eq!(out.optimal, [(0, 10)].into_iter().collect());
        let g = star(3, 1, &[(2, 1.0)]);
        let out = reactive_step(
            1,
            &g,
            &costs,
            &QuotaRow::new(),
            &QuotaRow::new(),
            &Blacklist::new(),
            VictimFill::Replace,
        );
        assert_eq!(out.optimal, [(2, 25)].into_iter().collect());
    }
}
