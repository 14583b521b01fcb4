//! Reduced chains-on-chains partitioning under a uniform task cost.
//!
//! Tasks are laid out as one chain in rank order. With uniform cost the
//! bottleneck-optimal cut splits the chain into pieces whose sizes differ
//! by at most one; rank `r` keeps or receives positions
//! `[floor(r*T/n), floor((r+1)*T/n))` of the chain.

use crate::balancer::quota::QuotaRow;
use crate::error::{Error, Result};

/// Cut points `b_0 = 0 <= b_1 <= ... <= b_n = total`.
pub fn chain_cuts(total: usize, n_ranks: usize) -> Vec<usize> {
    (0..=n_ranks).map(|r| r * total / n_ranks).collect()
}

/// Per-rank offload rows that move every rank to the average load (+-1).
pub fn ccp_partition(task_counts: &[usize], n_ranks: usize) -> Result<Vec<QuotaRow>> {
    if n_ranks == 0 {
        return Err(Error::InvalidInput("CCP needs at least one rank".into()));
    }
    if task_counts.len() != n_ranks {
        return Err(Error::InvalidInput(format!(
            "CCP got {} task counts for {n_ranks} ranks",
            task_counts.len()
        )));
    }
    let total: usize = task_counts.iter().sum();
    let cuts = chain_cuts(total, n_ranks);

    let mut rows = vec![QuotaRow::new(); n_ranks];
    let mut owned_start = 0;
    for (owner, &count) in task_counts.iter().enumerate() {
        let owned_end = owned_start + count;
        // new owners whose piece overlaps [owned_start, owned_end)
        for target in 0..n_ranks {
            if target == owner {
                continue;
            }
            let lo = owned_start.max(cuts[target]);
            let hi = owned_end.min(cuts[target + 1]);
            if hi > lo {
                rows[owner].insert(target, hi - lo);
            }
        }
        owned_start = owned_end;
    }
    Ok(rows)
}

/// Load of every rank after applying `rows` to `task_counts`.
pub fn resulting_loads(task_counts: &[usize], rows: &[QuotaRow]) -> Vec<usize> {
    let mut loads: Vec<isize> = task_counts.iter().map(|&c| c as isize).collect();
    for (owner, row) in rows.iter().enumerate() {
        for (&target, &n) in row {
            loads[owner] -= n as isize;
            loads[target] += n as isize;
        }
    }
    loads.into_iter().map(|l| l.max(0) as usize).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn heavy_first_rank_of_eight() {
        let counts = [729, 512, 512, 512, 512, 512, 512, 512];
        let rows = ccp_partition(&counts, 8).unwrap();
        let loads = resulting_loads(&counts, &rows);
        assert!(loads.iter().all(|&l| l == 539 || l == 540), "{loads:?}");
        assert_eq!(loads.iter().sum::<usize>(), counts.iter().sum::<usize>());
    }

    #[test]
    fn balanced_input_needs_no_offloading() {
        let rows = ccp_partition(&[7, 7, 7], 3).unwrap();
        assert!(rows.iter().all(|r| r.is_empty()));
    }

    #[test]
    fn two_rank_chain_cut() {
        let rows = ccp_partition(&[4, 0], 2).unwrap();
        assert_eq!(rows[0], [(1, 2)].into_iter().collect());
        assert!(rows[1].is_empty());
    }

    #[test]
    fn invalid_inputs() {
        assert!(ccp_partition(&[], 0).is_err());
        assert!(ccp_partition(&[1, 2], 3).is_err());
    }
}
