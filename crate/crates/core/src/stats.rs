//! Per-rank time-series measurements.
//!
//! Every quantity the balancer consumes (wait times toward peers, the
//! per-task execution time) is smoothed through an exponentially weighted
//! moving average over a bounded window of the most recent steps. Samples
//! older than the window are dropped; with the default decay of 0.9 and a
//! capacity of 22 the dropped tail carries less than 10% of the weight.

use std::collections::{BTreeMap, VecDeque};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Default number of retained samples (the newest one included).
pub const DEFAULT_WINDOW_CAPACITY: usize = 22;

/// Default decay factor of the moving average.
pub const DEFAULT_DECAY: f64 = 0.9;

/// Weighted average `sum(decay^l * x_l) / sum(decay^l)`, where `window[0]`
/// is the most recent sample.
pub fn moving_average<T: Scalar>(window: &[T], decay: T) -> Result<T> {
    if window.is_empty() {
        return Err(Error::UndefinedStatistic("moving average of an empty window"));
    }
    if !(decay > T::zero() && decay <= T::one()) {
        return Err(Error::InvalidInput(format!(
            "moving average decay must lie in (0, 1], got {decay}"
        )));
    }
    let mut weight = T::one();
    let mut numerator = T::zero();
    let mut denominator = T::zero();
    for &sample in window {
        numerator = numerator + weight * sample;
        denominator = denominator + weight;
        weight = weight * decay;
    }
    Ok(numerator / denominator)
}

/// Raw wait minus the time the rank could have spent on its own pending
/// tasks and the penalty for the stolen tasks it hosts, clamped at zero.
pub fn reduced_wait_time<T: Scalar>(
    raw_wait: T,
    pending_tasks: usize,
    task_cost: T,
    received_tasks: usize,
    penalty_per_received: T,
) -> T {
    let reduced =
        raw_wait - T::from_count(pending_tasks) * task_cost - T::from_count(received_tasks) * penalty_per_received;
    reduced.max(T::zero())
}

/// Noise floor for wait samples: `0.95 * min + 0.05 * max`. Callers replace
/// every wait below the threshold by zero.
pub fn calibration_threshold<T: Scalar>(all_waits: &[T]) -> Result<T> {
    let (first, rest) = all_waits
        .split_first()
        .ok_or(Error::UndefinedStatistic("calibration threshold of no waits"))?;
    let (min, max) = rest
        .iter()
        .fold((*first, *first), |(lo, hi), &w| (lo.min(w), hi.max(w)));
    Ok(T::lit(0.95) * min + T::lit(0.05) * max)
}

/// Clips every wait below [`calibration_threshold`] to zero, in place.
pub fn apply_calibration<T: Scalar>(waits: &mut [T]) -> Result<T> {
    let threshold = calibration_threshold(waits)?;
    for w in waits.iter_mut() {
        if *w < threshold {
            *w = T::zero();
        }
    }
    Ok(threshold)
}

/// Bounded window of samples, most recent first.
#[derive(Debug, Clone, PartialEq)]
pub struct MovingAverage<T> {
    window: VecDeque<T>,
    decay: T,
    capacity: usize,
}

impl<T: Scalar> MovingAverage<T> {
    pub fn new(decay: T, capacity: usize) -> Result<Self> {
        if !(decay > T::zero() && decay <= T::one()) {
            return Err(Error::InvalidInput(format!(
                "moving average decay must lie in (0, 1], got {decay}"
            )));
        }
        if capacity == 0 {
            return Err(Error::InvalidInput("moving average capacity must be positive".into()));
        }
        Ok(Self {
            window: VecDeque::with_capacity(capacity),
            decay,
            capacity,
        })
    }

    /// Pushes a new most-recent sample, evicting the oldest one beyond capacity.
    pub fn push(&mut self, sample: T) {
        self.window.push_front(sample);
        self.window.truncate(self.capacity);
    }

    pub fn value(&self) -> Result<T> {
        let (head, tail) = self.window.as_slices();
        if tail.is_empty() {
            moving_average(head, self.decay)
        } else {
            let contiguous: Vec<T> = self.window.iter().copied().collect();
            moving_average(&contiguous, self.decay)
        }
    }

    /// Value, or zero while no sample has been recorded.
    pub fn value_or_zero(&self) -> T {
        self.value().unwrap_or_else(|_| T::zero())
    }

    pub fn len(&self) -> usize {
        self.window.len()
    }

    pub fn is_empty(&self) -> bool {
        self.window.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn decay(&self) -> T {
        self.decay
    }

    pub fn samples(&self) -> impl Iterator<Item = &T> {
        self.window.iter()
    }
}

/// Smoothed statistics one rank keeps about itself and its peers.
#[derive(Debug, Clone)]
pub struct RankStatistics<T> {
    rank: usize,
    decay: T,
    capacity: usize,
    wait_toward: BTreeMap<usize, MovingAverage<T>>,
    task_cost: MovingAverage<T>,
    /// Ready tasks at the last snapshot.
    pub pending_tasks: usize,
    /// Stolen tasks hosted at the last snapshot.
    pub received_tasks: usize,
}

impl<T: Scalar> RankStatistics<T> {
    pub fn new(rank: usize, decay: T, capacity: usize) -> Result<Self> {
        Ok(Self {
            rank,
            decay,
            capacity,
            wait_toward: BTreeMap::new(),
            task_cost: MovingAverage::new(decay, capacity)?,
            pending_tasks: 0,
            received_tasks: 0,
        })
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    /// Records one (already calibrated and reduced) wait sample toward `peer`.
    pub fn record_wait(&mut self, peer: usize, wait: T) -> Result<()> {
        if peer == self.rank {
            return Err(Error::InvalidInput(format!(
                "rank {} cannot record a wait toward itself",
                self.rank
            )));
        }
        if !(wait >= T::zero()) || !wait.is_finite() {
            return Err(Error::InvalidInput(format!(
                "wait sample {wait} is not a finite non-negative value"
            )));
        }
        let (decay, capacity) = (self.decay, self.capacity);
        self.wait_toward
            .entry(peer)
            .or_insert_with(|| MovingAverage::new(decay, capacity).expect("validated in constructor"))
            .push(wait);
        Ok(())
    }

    pub fn record_task_cost(&mut self, seconds: T) -> Result<()> {
        if !(seconds > T::zero()) || !seconds.is_finite() {
            return Err(Error::InvalidInput(format!(
                "task cost sample {seconds} must be positive"
            )));
        }
        self.task_cost.push(seconds);
        Ok(())
    }

    /// Smoothed wait toward `peer`; zero if never observed.
    pub fn wait_toward(&self, peer: usize) -> T {
        self.wait_toward
            .get(&peer)
            .map(MovingAverage::value_or_zero)
            .unwrap_or_else(T::zero)
    }

    /// Peers for which at least one wait sample exists.
    pub fn peers(&self) -> impl Iterator<Item = usize> + '_ {
        self.wait_toward.keys().copied()
    }

    /// Smoothed per-task execution time, `None` before the first sample.
    pub fn task_cost(&self) -> Option<T> {
        self.task_cost.value().ok()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-12 * b.abs().max(1.0)
    }

    #[test]
    fn moving_average_examples() {
        assert_eq!(moving_average(&[2.0], 0.9).unwrap(), 2.0);
        assert!(close(moving_average(&[1.0, 1.0, 1.0], 0.9).unwrap(), 1.0));
        assert!(close(moving_average(&[2.0, 1.0], 0.9).unwrap(), 2.9 / 1.9));
        assert!(close(
            moving_average(&[2.0_f64, 1.0], 0.9).unwrap(),
            1.526_315_789_473_684
        ));
    }

    #[test]
    fn moving_average_rejects_empty_and_bad_decay() {
        assert!(matches!(
            moving_average::<f64>(&[], 0.9),
            Err(Error::UndefinedStatistic(_))
        ));
        assert!(moving_average(&[1.0], 0.0).is_err());
        assert!(moving_average(&[1.0], 1.5).is_err());
    }

    #[test]
    fn moving_average_works_in_f32() {
        let v = moving_average(&[2.0_f32, 1.0], 0.9).unwrap();
        assert!((v - 2.9 / 1.9).abs() < 1e-6);
    }

    #[test]
    fn reduced_wait_examples() {
        assert!(close(reduced_wait_time(1.0, 10, 0.05, 0, 0.0), 0.5));
        assert_eq!(reduced_wait_time(0.2, 10, 0.05, 0, 0.0), 0.0);
        assert!(close(reduced_wait_time(1.0, 10, 0.05, 4, 0.05), 0.3));
    }

    #[test]
    fn calibration_examples() {
        assert!(close(calibration_threshold(&[0.0, 1.0]).unwrap(), 0.05));
        assert!(close(calibration_threshold(&[0.3, 0.3, 0.3]).unwrap(), 0.3));
        assert!(close(calibration_threshold(&[0.1, 0.2, 0.9]).unwrap(), 0.14));
        assert!(calibration_threshold::<f64>(&[]).is_err());
    }

    #[test]
    fn calibration_clips_below_threshold_only() {
        let mut waits = [0.0, 0.04, 0.05, 1.0];
        let t = apply_calibration(&mut waits).unwrap();
        assert!(close(t, 0.05));
        assert_eq!(waits, [0.0, 0.0, 0.05, 1.0]);
    }

    #[test]
    fn window_is_bounded() {
        let mut avg = MovingAverage::new(0.9, 3).unwrap();
        assert!(avg.value().is_err());
        assert_eq!(avg.value_or_zero(), 0.0);
        for x in [1.0, 2.0, 3.0, 4.0] {
            avg.push(x);
        }
        assert_eq!(avg.len(), 3);
        assert_eq!(avg.samples().copied().collect::<Vec<_>>(), vec![4.0, 3.0, 2.0]);
        assert!(close(
            avg.value().unwrap(),
            moving_average(&[4.0, 3.0, 2.0], 0.9).unwrap()
        ));
    }

    #[test]
    fn default_capacity_drops_less_than_ten_percent() {
        assert!(0.9_f64.powi(DEFAULT_WINDOW_CAPACITY as i32) < 0.1);
        assert!(0.9_f64.powi(DEFAULT_WINDOW_CAPACITY as i32 - 1) >= 0.1);
    }

    #[test]
    fn rank_statistics_rejects_self_edge() {
        let mut stats = RankStatistics::<f64>::new(2, 0.9, 22).unwrap();
        assert!(stats.record_wait(2, 1.0).is_err());
        stats.record_wait(0, 1.0).unwrap();
        stats.record_wait(0, 0.0).unwrap();
        assert!(close(stats.wait_toward(0), 0.9 / 1.9));
        assert_eq!(stats.wait_toward(1), 0.0);
        assert_eq!(stats.peers().collect::<Vec<_>>(), vec![0]);
    }

    #[test]
    fn task_cost_positive_after_first_sample() {
        let mut stats = RankStatistics::<f64>::new(0, 0.9, 22).unwrap();
        assert!(stats.task_cost().is_none());
        assert!(stats.record_task_cost(0.0).is_err());
        stats.record_task_cost(0.02).unwrap();
        assert!(stats.task_cost().unwrap() > 0.0);
    }
}
