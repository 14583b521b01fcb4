//! Per-step records and their exports.

pub mod graph;
pub mod record;
pub mod table;

pub use graph::wait_graph_dot;
pub use record::{sig9, EmergencyRecord, EventLog, RankStepRecord, StepRecord};
pub use table::{read_csv, to_csv_string, write_csv, CSV_HEADER};

use crate::error::Result;
use crate::stats::moving_average;

/// Smooths a per-step series: entry `k` is the moving average over the
/// `capacity` most recent values up to and including step `k`.
pub fn gliding_average_series(values: &[f64], decay: f64, capacity: usize) -> Result<Vec<f64>> {
    let capacity = capacity.max(1);
    let mut out = Vec::with_capacity(values.len());
    for k in 0..values.len() {
        let from = (k + 1).saturating_sub(capacity);
        let window: Vec<f64> = values[from..=k].iter().rev().copied().collect();
        out.push(moving_average(&window, decay)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_series_unchanged() {
        let s = gliding_average_series(&[3.0; 10], 0.9, 22).unwrap();
        assert!(s.iter().all(|&x| (x - 3.0).abs() < 1e-12));
    }

    #[test]
    fn spike_decays() {
        let mut v = vec![0.0; 6];
        v[0] = 1.0;
        let s = gliding_average_series(&v, 0.5, 22).unwrap();
        // weight of the spike relative to the total weight
        for (k, &x) in s.iter().enumerate() {
            let total: f64 = (0..=k).map(|l| 0.5_f64.powi(l as i32)).sum();
            assert!((x - 0.5_f64.powi(k as i32) / total).abs() < 1e-12);
        }
    }

    #[test]
    fn decay_one_is_trailing_mean() {
        let s = gliding_average_series(&[1.0, 2.0, 3.0, 4.0], 1.0, 2).unwrap();
        assert_eq!(s, vec![1.0, 1.5, 2.5, 3.5]);
    }

    #[test]
    fn sig9_is_stable() {
        for x in [0.1, 1.0 / 3.0, 123456.789123, 2.0e-7] {
            let y = sig9(x);
            assert_eq!(table::format_float(y).parse::<f64>().unwrap(), y);
            assert_eq!(sig9(y), y);
        }
    }
}
