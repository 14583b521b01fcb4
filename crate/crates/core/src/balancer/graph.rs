use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::stats::RankStatistics;

/// Directed wait graph: an edge `i -> j` of weight `w` means rank `i` spent
/// `w` seconds waiting on rank `j`. Self-edges and zero weights are never
/// stored.
#[derive(Debug, Clone, PartialEq)]
pub struct WaitGraph<T> {
    n_ranks: usize,
    edges: BTreeMap<(usize, usize), T>,
}

impl<T: Scalar> WaitGraph<T> {
    pub fn new(n_ranks: usize) -> Self {
        Self {
            n_ranks,
            edges: BTreeMap::new(),
        }
    }

    /// Builds the graph from every rank's smoothed wait statistics.
    pub fn from_statistics(stats: &[RankStatistics<T>]) -> Self {
        let mut graph = Self::new(stats.len());
        for s in stats {
            for peer in s.peers() {
                let w = s.wait_toward(peer);
                graph
                    .add_edge(s.rank(), peer, w)
                    .expect("statistics never hold self-edges");
            }
        }
        graph
    }

    /// Adds `weight` to the edge `from -> to`. Zero weights are ignored.
    pub fn add_edge(&mut self, from: usize, to: usize, weight: T) -> Result<()> {
        if from == to {
            return Err(Error::InvalidInput(format!("self-edge on rank {from}")));
        }
        if from >= self.n_ranks || to >= self.n_ranks {
            return Err(Error::InvalidInput(format!(
                "edge {from}->{to} outside of {} ranks",
                self.n_ranks
            )));
        }
        if !(weight >= T::zero()) || !weight.is_finite() {
            return Err(Error::InvalidInput(format!(
                "edge weight {weight} must be finite and >= 0"
            )));
        }
        if weight > T::zero() {
            let entry = self.edges.entry((from, to)).or_insert_with(T::zero);
            *entry = *entry + weight;
        }
        Ok(())
    }

    pub fn n_ranks(&self) -> usize {
        self.n_ranks
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, T)> + '_ {
        self.edges.iter().map(|(&(i, j), &w)| (i, j, w))
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn weight(&self, from: usize, to: usize) -> T {
        self.edges.get(&(from, to)).copied().unwrap_or_else(T::zero)
    }

    pub fn total_wait(&self) -> T {
        self.edges.values().fold(T::zero(), |acc, &w| acc + w)
    }

    /// Total wait other ranks spent on `rank`.
    pub fn inbound(&self, rank: usize) -> T {
        self.edges
            .iter()
            .filter(|(&(_, j), _)| j == rank)
            .fold(T::zero(), |acc, (_, &w)| acc + w)
    }

    /// Total wait `rank` spent on others.
    pub fn outbound(&self, rank: usize) -> T {
        self.edges
            .range((rank, 0)..(rank + 1, 0))
            .fold(T::zero(), |acc, (_, &w)| acc + w)
    }

    /// Largest single wait `rank` recorded toward any peer.
    pub fn max_outbound_edge(&self, rank: usize) -> T {
        self.edges
            .range((rank, 0)..(rank + 1, 0))
            .fold(T::zero(), |acc, (_, &w)| acc.max(w))
    }

    /// The rank most waited upon (largest total inbound wait). Ties and the
    /// edgeless graph resolve to the lowest rank id.
    pub fn critical_rank(&self) -> usize {
        let mut best = 0;
        let mut best_wait = T::neg_infinity();
        for rank in 0..self.n_ranks {
            let w = self.inbound(rank);
            if w > best_wait {
                best = rank;
                best_wait = w;
            }
        }
        best
    }

    /// The non-blacklisted rank other than `critical` that waits most in
    /// total. `None` if no candidate waits at all.
    pub fn optimal_victim(&self, blacklist: &BTreeSet<usize>, critical: usize) -> Option<usize> {
        let mut best = None;
        let mut best_wait = T::zero();
        for rank in 0..self.n_ranks {
            if rank == critical || blacklist.contains(&rank) {
                continue;
            }
            let w = self.outbound(rank);
            if w > best_wait {
                best = Some(rank);
                best_wait = w;
            }
        }
        best
    }
}
