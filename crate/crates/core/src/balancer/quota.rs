use std::collections::BTreeMap;

/// How many tasks the owning rank may send to each target rank. Zero
/// entries are never stored.
pub type QuotaRow = BTreeMap<usize, usize>;

/// Drops zero entries.
pub fn normalized(mut row: QuotaRow) -> QuotaRow {
    row.retain(|_, n| *n > 0);
    row
}

/// Sum of a row's entries.
pub fn row_total(row: &QuotaRow) -> usize {
    row.values().sum()
}

/// The per-step offload budget of one rank: the target decided by the
/// balancer and the live counters consumed while spawning.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct OffloadQuota {
    target: QuotaRow,
    live: QuotaRow,
}

impl OffloadQuota {
    pub fn new(target: QuotaRow) -> Self {
        let target = normalized(target);
        Self {
            live: target.clone(),
            target,
        }
    }

    /// Resets the live counters to a fresh target. Unused budget of the
    /// previous step is discarded.
    pub fn reset(&mut self, target: QuotaRow) {
        *self = Self::new(target);
    }

    pub fn target(&self) -> &QuotaRow {
        &self.target
    }

    pub fn target_for(&self, rank: usize) -> usize {
        self.target.get(&rank).copied().unwrap_or(0)
    }

    pub fn live_for(&self, rank: usize) -> usize {
        self.live.get(&rank).copied().unwrap_or(0)
    }

    /// Targets that still accept at least one task, ascending.
    pub fn open_targets(&self) -> impl Iterator<Item = usize> + '_ {
        self.live.iter().filter(|(_, &n)| n > 0).map(|(&r, _)| r)
    }

    /// Check-and-decrement of the live counter toward `rank`.
    pub fn try_take(&mut self, rank: usize) -> bool {
        match self.live.get_mut(&rank) {
            Some(n) if *n > 0 => {
                *n -= 1;
                true
            }
            _ => false,
        }
    }

    /// Tasks sent to `rank` since the last reset.
    pub fn used_for(&self, rank: usize) -> usize {
        self.target_for(rank) - self.live_for(rank)
    }

    /// Tasks sent since the last reset, over all targets.
    pub fn used_total(&self) -> usize {
        self.target.keys().map(|&r| self.used_for(r)).sum()
    }
}
