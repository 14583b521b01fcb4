use std::collections::{BTreeMap, BTreeSet};

use crate::scalar::Scalar;

/// Weight below which an entry leaves the blacklist.
pub const REMOVAL_THRESHOLD: f64 = 0.5;

/// Per-round multiplicative decay of every weight.
pub const DECAY_FACTOR: f64 = 0.9;

/// Victim ranks that returned stolen tasks too late, with a decaying weight.
#[derive(Debug, Clone, PartialEq)]
pub struct Blacklist<T> {
    weights: BTreeMap<usize, T>,
}

impl<T: Scalar> Default for Blacklist<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Blacklist<T> {
    pub fn new() -> Self {
        Self {
            weights: BTreeMap::new(),
        }
    }

    /// One more emergency on `victim`: its weight grows by one.
    pub fn record_emergency(&mut self, victim: usize) {
        let w = self.weights.entry(victim).or_insert_with(T::zero);
        *w = *w + T::one();
    }

    /// Applied once per rebalancing round.
    pub fn decay(&mut self) {
        let factor = T::lit(DECAY_FACTOR);
        let threshold = T::lit(REMOVAL_THRESHOLD);
        for w in self.weights.values_mut() {
            *w = *w * factor;
        }
        self.weights.retain(|_, w| *w >= threshold);
    }

    pub fn contains(&self, rank: usize) -> bool {
        self.weights.contains_key(&rank)
    }

    pub fn weight(&self, rank: usize) -> T {
        self.weights.get(&rank).copied().unwrap_or_else(T::zero)
    }

    pub fn ranks(&self) -> BTreeSet<usize> {
        self.weights.keys().copied().collect()
    }

    pub fn entries(&self) -> impl Iterator<Item = (usize, T)> + '_ {
        self.weights.iter().map(|(&r, &w)| (r, w))
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }
}
