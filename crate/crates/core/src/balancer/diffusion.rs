//! Relaxed adoption of the optimal quota and the reinforcement rule that
//! adapts the relaxation factor.

use std::collections::BTreeSet;

use crate::balancer::quota::{normalized, QuotaRow};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const OMEGA_DIFF_MIN: f64 = 0.1;
pub const OMEGA_DIFF_MAX: f64 = 1.0;
/// Additive growth of the relaxation factor.
pub const OMEGA_DIFF_STEP: f64 = 0.1;
/// Multiplicative shrink of the relaxation factor.
pub const OMEGA_DIFF_SHRINK: f64 = 0.9;

/// Per-rank diffusion parameters and the history reinforcement needs.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionState<T> {
    omega_diff: T,
    omega_reinf: T,
    /// Optimal row of the previous round.
    pub prev_optimal: QuotaRow,
    /// Offload row in force before the previous round.
    pub prev_offload: QuotaRow,
}

impl<T: Scalar> DiffusionState<T> {
    pub fn new(omega_diff: T, omega_reinf: T) -> Result<Self> {
        if !(omega_diff >= T::lit(OMEGA_DIFF_MIN) && omega_diff <= T::lit(OMEGA_DIFF_MAX)) {
            return Err(Error::InvalidInput(format!(
                "omega_diff must lie in [0.1, 1], got {omega_diff}"
            )));
        }
        if !(omega_reinf > T::zero() && omega_reinf <= T::one()) {
            return Err(Error::InvalidInput(format!(
                "omega_reinf must lie in (0, 1], got {omega_reinf}"
            )));
        }
        Ok(Self {
            omega_diff,
            omega_reinf,
            prev_optimal: QuotaRow::new(),
            prev_offload: QuotaRow::new(),
        })
    }

    pub fn omega_diff(&self) -> T {
        self.omega_diff
    }

    pub fn omega_reinf(&self) -> T {
        self.omega_reinf
    }

    /// Applies the reinforcement rule and returns the new relaxation factor.
    ///
    /// Grows `omega_diff` by 0.1 (capped at 1) when the pull of this round
    /// relative to the previous one reaches `omega_reinf`, shrinks it by 10%
    /// (floored at 0.1) otherwise. A zero denominator counts as "otherwise".
    pub fn reinforce(
        &mut self,
        optimal_now: &QuotaRow,
        offload_prev: &QuotaRow,
        optimal_prev: &QuotaRow,
        offload_prev_prev: &QuotaRow,
    ) -> T {
        let grow = match relaxation_ratio::<T>(optimal_now, offload_prev, optimal_prev, offload_prev_prev) {
            Some(ratio) => ratio >= self.omega_reinf,
            None => false,
        };
        self.omega_diff = next_omega(self.omega_diff, grow);
        self.omega_diff
    }
}

/// One step of the relaxation-factor update.
pub fn next_omega<T: Scalar>(omega: T, grow: bool) -> T {
    if grow {
        (omega + T::lit(OMEGA_DIFF_STEP)).min(T::lit(OMEGA_DIFF_MAX))
    } else {
        (omega * T::lit(OMEGA_DIFF_SHRINK)).max(T::lit(OMEGA_DIFF_MIN))
    }
}

/// `sum_j |a_j - b_j|` over the union of keys.
pub fn l1_distance(a: &QuotaRow, b: &QuotaRow) -> usize {
    let keys: BTreeSet<usize> = a.keys().chain(b.keys()).copied().collect();
    keys.into_iter()
        .map(|k| {
            let x = a.get(&k).copied().unwrap_or(0);
            let y = b.get(&k).copied().unwrap_or(0);
            x.abs_diff(y)
        })
        .sum()
}

/// Ratio of this round's pull to the previous round's pull; `None` when
/// the previous pull is zero.
pub fn relaxation_ratio<T: Scalar>(
    optimal_now: &QuotaRow,
    offload_prev: &QuotaRow,
    optimal_prev: &QuotaRow,
    offload_prev_prev: &QuotaRow,
) -> Option<T> {
    let numerator = l1_distance(optimal_now, offload_prev);
    let denominator = l1_distance(optimal_prev, offload_prev_prev);
    (denominator > 0).then(|| T::from_count(numerator) / T::from_count(denominator))
}

/// `round(omega * optimal + (1 - omega) * current)` per target, rounding
/// half away from zero.
pub fn diffuse<T: Scalar>(omega: T, optimal: &QuotaRow, current: &QuotaRow) -> QuotaRow {
    let keys: BTreeSet<usize> = optimal.keys().chain(current.keys()).copied().collect();
    let row = keys
        .into_iter()
        .map(|k| {
            let opt = T::from_count(optimal.get(&k).copied().unwrap_or(0));
            let cur = T::from_count(current.get(&k).copied().unwrap_or(0));
            let blended = (omega * opt + (T::one() - omega) * cur).round();
            let n = blended.max(T::zero()).to_usize().unwrap_or(0);
            (k, n)
        })
        .collect();
    normalized(row)
}
