//! Per-step task counts and per-rank speeds derived from a scenario.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::simulator::config::{ClusterConfig, Disturbance, GeneratorKind, Scenario};

/// Offloadable task counts of one step, plus extra serial time.
#[derive(Debug, Clone, PartialEq)]
pub struct StepLoad {
    pub offloadable: Vec<usize>,
    pub overhead: f64,
}

impl StepLoad {
    pub fn total(&self) -> usize {
        self.offloadable.iter().sum()
    }
}

const SPEED_STREAM: u64 = 1;
const WORKLOAD_STREAM: u64 = 2;

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Base speed of every rank: configured multiplier times the seeded jitter.
pub fn rank_speeds(cluster: &ClusterConfig) -> Vec<f64> {
    let mut r = rng(cluster.seed, SPEED_STREAM);
    (0..cluster.ranks)
        .map(|i| {
            let base = cluster.core_speed.get(i).copied().unwrap_or(1.0);
            let jitter = if cluster.speed_jitter > 0.0 {
                r.gen_range(1.0 - cluster.speed_jitter..=1.0 + cluster.speed_jitter)
            } else {
                1.0
            };
            base * jitter
        })
        .collect()
}

/// Speed of `rank` during the 1-based `step`, slowdowns applied.
pub fn speed_at(base: f64, rank: usize, step: usize, disturbances: &[Disturbance]) -> f64 {
    disturbances.iter().fold(base, |s, d| match *d {
        Disturbance::Slowdown {
            rank: r,
            from_step,
            to_step,
            speed_factor,
        } if r == rank && (from_step..=to_step).contains(&step) => s * speed_factor,
        _ => s,
    })
}

/// Start delay of `rank` in the 1-based `step`.
pub fn delay_at(rank: usize, step: usize, disturbances: &[Disturbance]) -> f64 {
    disturbances
        .iter()
        .map(|d| match *d {
            Disturbance::Delay {
                rank: r,
                period,
                delay,
                offset,
            } if r == rank && period > 0 && step % period == offset % period => delay,
            _ => 0.0,
        })
        .sum()
}

/// Even split, the remainder going to the lowest ranks.
pub fn even_split(total: usize, ranks: usize) -> Vec<usize> {
    (0..ranks)
        .map(|r| total / ranks + usize::from(r < total % ranks))
        .collect()
}

/// Skewed counts: `light` ranks at `base`, one at `heavy`, the rest
/// uniform in between, placed in random order.
fn amr_profile(r: &mut ChaCha8Rng, ranks: usize, base: usize, heavy: usize, light: usize) -> Vec<usize> {
    let mut counts = Vec::with_capacity(ranks);
    counts.extend(std::iter::repeat_n(base, light.min(ranks)));
    if counts.len() < ranks {
        counts.push(heavy);
    }
    while counts.len() < ranks {
        counts.push(r.gen_range(base..=heavy));
    }
    counts.shuffle(r);
    counts
}

/// Task counts for every step of the scenario.
pub fn generate_workload(scenario: &Scenario) -> Vec<StepLoad> {
    let w = &scenario.workload;
    let n = scenario.cluster.ranks;
    let steps = scenario.steps;
    let mut r = rng(scenario.cluster.seed, WORKLOAD_STREAM);
    let fixed = |counts: Vec<usize>| -> Vec<StepLoad> {
        (0..steps)
            .map(|_| StepLoad {
                offloadable: counts.clone(),
                overhead: 0.0,
            })
            .collect()
    };
    let light = w.light_ranks.unwrap_or((n * 2 + 3) / 7);
    let base = w.base.unwrap_or(0);
    let heavy = w.heavy.unwrap_or(base);

    match w.generator {
        GeneratorKind::Regular => fixed(even_split(w.total_tasks.unwrap_or(0), n)),
        GeneratorKind::StaticAmr => fixed(amr_profile(&mut r, n, base, heavy, light)),
        GeneratorKind::Hotspot => {
            let total = w.total_tasks.unwrap_or(0);
            let hot_rank = w.hotspot_rank.unwrap_or(0);
            let factor = w.hotspot_factor.unwrap_or(1.0);
            let hot = ((factor * total as f64 / n as f64).round() as usize).min(total);
            let mut counts = vec![hot; n];
            if n > 1 {
                let others = even_split(total - hot, n - 1);
                let mut it = others.into_iter();
                for (i, c) in counts.iter_mut().enumerate() {
                    if i != hot_rank {
                        *c = it.next().unwrap_or(0);
                    }
                }
            }
            fixed(counts)
        }
        GeneratorKind::Explicit => w
            .counts
            .clone()
            .unwrap_or_default()
            .into_iter()
            .take(steps)
            .map(|offloadable| StepLoad {
                offloadable,
                overhead: 0.0,
            })
            .collect(),
        GeneratorKind::DynamicAmr => {
            let drift = w.drift.unwrap_or(0.0);
            let period = w.remesh_period.unwrap_or(usize::MAX).max(1);
            let remesh = w.remesh_overhead.unwrap_or(0.0);
            let floor = (base / 2) as f64;
            let ceil = (heavy * 2).max(1) as f64;
            let mut level: Vec<f64> = amr_profile(&mut r, n, base, heavy, light)
                .into_iter()
                .map(|c| c as f64)
                .collect();
            let mut out = Vec::with_capacity(steps);
            for step in 1..=steps {
                let mut overhead = 0.0;
                if step > 1 && step % period == 0 {
                    level = amr_profile(&mut r, n, base, heavy, light)
                        .into_iter()
                        .map(|c| c as f64)
                        .collect();
                    overhead = remesh;
                } else if step > 1 {
                    for l in level.iter_mut() {
                        let f = if drift > 0.0 { r.gen_range(-drift..=drift) } else { 0.0 };
                        *l = (*l * (1.0 + f)).clamp(floor, ceil);
                    }
                }
                out.push(StepLoad {
                    offloadable: level.iter().map(|l| l.round() as usize).collect(),
                    overhead,
                });
            }
            out
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::config::{BalancingConfig, BalancingMode, NetworkModel, WorkloadSpec};

    fn scenario(generator: GeneratorKind, ranks: usize) -> Scenario {
        Scenario {
            name: "t".into(),
            steps: 30,
            cluster: ClusterConfig {
                ranks,
                cores_per_rank: 1,
                core_speed: vec![],
                speed_jitter: 0.0,
                seed: 3,
                network: NetworkModel::default(),
            },
            workload: WorkloadSpec {
                generator,
                task_cost: 0.01,
                input_bytes: 0,
                output_bytes: 0,
                local_tasks: 0,
                serial_overhead: 0.0,
                total_tasks: Some(4096),
                base: Some(512),
                heavy: Some(729),
                light_ranks: Some(8),
                drift: Some(0.05),
                remesh_period: Some(10),
                remesh_overhead: Some(0.1),
                hotspot_rank: Some(2),
                hotspot_factor: Some(3.0),
                counts: None,
            },
            disturbances: vec![],
            balancing: BalancingConfig::new(BalancingMode::Off),
        }
    }

    #[test]
    fn regular_split() {
        let w = generate_workload(&scenario(GeneratorKind::Regular, 8));
        assert_eq!(w[0].offloadable, vec![512; 8]);
        assert_eq!(even_split(10, 3), vec![4, 3, 3]);
    }

    #[test]
    fn static_amr_range() {
        let w = generate_workload(&scenario(GeneratorKind::StaticAmr, 28));
        let c = &w[0].offloadable;
        assert!(c.iter().all(|&x| (512..=729).contains(&x)));
        assert!(c.iter().filter(|&&x| x == 512).count() >= 8);
        assert!(c.contains(&729));
        assert!(w.iter().all(|s| s.offloadable == *c));
    }

    #[test]
    fn dynamic_amr_total_changes() {
        let w = generate_workload(&scenario(GeneratorKind::DynamicAmr, 28));
        assert_ne!(w[0].total(), w[1].total());
        assert_eq!(w[9].overhead, 0.1);
        assert_eq!(w[8].overhead, 0.0);
    }

    #[test]
    fn hotspot_holds_factor_of_average() {
        let w = generate_workload(&scenario(GeneratorKind::Hotspot, 8));
        assert_eq!(w[0].offloadable[2], 1536);
        assert_eq!(w[0].total(), 4096);
    }

    #[test]
    fn disturbances() {
        let d = vec![
            Disturbance::Delay {
                rank: 3,
                period: 10,
                delay: 1.0,
                offset: 0,
            },
            Disturbance::Slowdown {
                rank: 1,
                from_step: 50,
                to_step: 60,
                speed_factor: 0.5,
            },
        ];
        assert_eq!(delay_at(3, 20, &d), 1.0);
        assert_eq!(delay_at(3, 21, &d), 0.0);
        assert_eq!(delay_at(2, 20, &d), 0.0);
        assert_eq!(speed_at(1.0, 1, 55, &d), 0.5);
        assert_eq!(speed_at(1.0, 1, 61, &d), 1.0);
        assert_eq!(speed_at(1.0, 0, 55, &d), 1.0);
    }

    #[test]
    fn speeds_are_seeded() {
        let mut c = scenario(GeneratorKind::Regular, 10).cluster;
        c.speed_jitter = 0.1;
        let a = rank_speeds(&c);
        assert_eq!(a, rank_speeds(&c));
        assert!(a.iter().all(|s| (0.9..=1.1).contains(s)));
        c.seed = 4;
        assert_ne!(a, rank_speeds(&c));
    }
}
