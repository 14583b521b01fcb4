use proptest::prelude::*;

use reactive_offload::simulator::{run_simulation, Disturbance, Scenario, Simulation};
use reactive_offload::trace::EventLog;
use reactive_offload::{scenarios, Error};

fn scenario(body: &str) -> Scenario {
    Scenario::parse_valid(body).unwrap()
}

fn approx(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-8 * b.abs().max(1e-3)
}

fn regular(ranks: usize, cores: usize, total: usize, cost: f64, steps: usize) -> Scenario {
    scenario(&format!(
        r#"
name = "regular"
steps = {steps}
[cluster]
ranks = {ranks}
cores_per_rank = {cores}
[workload]
generator = "regular"
task_cost = {cost}
total_tasks = {total}
[balancing]
mode = "off"
"#
    ))
}

#[test]
fn ten_tasks_on_two_cores_take_five_costs() {
    let log = run_simulation(&regular(1, 2, 10, 0.01, 1)).unwrap();
    assert!(approx(log.steps[0].makespan, 0.05), "{}", log.steps[0].makespan);
}

#[test]
fn static_partition_splits_eight_tasks_evenly() {
    let s = scenario(
        r#"
name = "pair"
steps = 1
[cluster]
ranks = 2
cores_per_rank = 1
[cluster.network]
latency = 0.0
bandwidth = 1e30
[workload]
generator = "explicit"
task_cost = 0.01
counts = [[8, 0]]
[balancing]
mode = "ccp"
starvation_c = 0
"#,
    );
    let log = run_simulation(&s).unwrap();
    let step = &log.steps[0];
    assert_eq!(step.per_rank[0].tasks_allowed_to.get(&1), Some(&4));
    assert_eq!(step.per_rank[0].tasks_offloaded(), 4);
    assert_eq!(step.per_rank[1].tasks_hosted, 4);
    assert!(approx(step.makespan, 0.04), "{}", step.makespan);
}

#[test]
fn delay_propagates_through_the_barrier() {
    let mut s = regular(4, 2, 400, 0.001, 12);
    s.disturbances.push(Disturbance::Delay {
        rank: 3,
        period: 10,
        delay: 1.0,
        offset: 0,
    });
    let log = run_simulation(&s).unwrap();
    let m = log.makespans();
    assert!(m[9] >= m[8] + 1.0 - 1e-9, "{m:?}");
    assert!(approx(m[10], m[8]));
}

#[test]
fn slowdown_scales_task_cost() {
    let mut s = regular(1, 1, 10, 0.01, 3);
    s.disturbances.push(Disturbance::Slowdown {
        rank: 0,
        from_step: 2,
        to_step: 2,
        speed_factor: 0.5,
    });
    let m = run_simulation(&s).unwrap().makespans();
    assert!(approx(m[0], 0.1) && approx(m[1], 0.2) && approx(m[2], 0.1), "{m:?}");
}

#[test]
fn hosted_tasks_are_picked_up_at_the_next_task_boundary() {
    // rank 1 is mid-task when the offloads arrive; it runs them right after
    // that task and before its second own one, so the results are back
    // before rank 0 runs out of local work.
    let cost = 0.01;
    let s = scenario(&format!(
        r#"
name = "pickup"
steps = 1
[cluster]
ranks = 2
cores_per_rank = 1
[cluster.network]
latency = {latency}
bandwidth = 1e30
[workload]
generator = "explicit"
task_cost = {cost}
counts = [[8, 2]]
[balancing]
mode = "ccp"
starvation_c = 0
"#,
        latency = 0.1 * cost
    ));
    let log = run_simulation(&s).unwrap();
    let step = &log.steps[0];
    assert_eq!(step.per_rank[1].tasks_hosted, 3);
    assert!(approx(step.makespan, 5.0 * cost), "{}", step.makespan);
}

#[test]
fn invalid_scenario_rejected_before_running() {
    let mut s = regular(2, 1, 10, 0.01, 1);
    s.cluster.ranks = 0;
    assert!(matches!(run_simulation(&s), Err(Error::ScenarioInvalid(_))));
    assert!(Simulation::new(&s).is_err());
}

fn check_log_consistency(log: &EventLog) {
    for pair in log.steps.windows(2) {
        assert!(pair[1].start_time >= pair[0].start_time + pair[0].makespan - 1e-9);
    }
    for step in &log.steps {
        assert_eq!(step.per_rank.len(), log.n_ranks);
        assert_eq!(step.offloaded_total(), step.hosted_total());
        for r in &step.per_rank {
            assert!(r.time_in_step <= step.makespan + 1e-9);
            assert!((0.1..=1.0).contains(&r.omega_diff));
            for (target, &n) in &r.tasks_offloaded_to {
                assert_ne!(*target, r.rank);
                assert!(n <= r.tasks_allowed_to.get(target).copied().unwrap_or(0));
            }
        }
        let spawned: usize = step.per_rank.iter().map(|r| r.tasks_spawned).sum();
        let settled: usize = step
            .per_rank
            .iter()
            .map(|r| r.local_tasks() - r.recomputes + r.tasks_offloaded())
            .sum();
        assert_eq!(spawned, settled, "step {}", step.step);
    }
}

#[test]
fn bundled_showcase_log_is_consistent_and_reproducible() {
    let s = scenarios::bundled("showcase8").unwrap().unwrap();
    let log = run_simulation(&s).unwrap();
    check_log_consistency(&log);
    assert_eq!(log, run_simulation(&s).unwrap());
}

#[test]
fn stepping_matches_a_full_run() {
    let s = scenarios::bundled("showcase8").unwrap().unwrap();
    let mut sim = Simulation::new(&s).unwrap();
    for k in 1..=5 {
        assert_eq!(sim.advance().unwrap().step, k);
    }
    assert_eq!(sim.steps_done(), 5);
    let full = run_simulation(&s).unwrap();
    assert_eq!(&sim.log().steps[..], &full.steps[..5]);
}

#[test]
fn urgent_recompute_flags_emergencies_under_a_stalled_victim() {
    let mut s = scenarios::bundled("showcase8").unwrap().unwrap();
    s.steps = 20;
    s.balancing.urgent_recompute = true;
    s.disturbances.push(Disturbance::Slowdown {
        rank: 7,
        from_step: 8,
        to_step: 12,
        speed_factor: 0.1,
    });
    let log = run_simulation(&s).unwrap();
    check_log_consistency(&log);
    assert!(!log.emergencies.is_empty());
    assert!(log.emergencies.iter().all(|e| e.recomputed));
    let recomputes: usize = log.steps.iter().flat_map(|st| &st.per_rank).map(|r| r.recomputes).sum();
    assert!(recomputes >= log.emergencies.len());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn uniform_off_mode_meets_list_scheduling_bound(
        ranks in 1usize..5,
        cores in 1usize..5,
        per_rank in 0usize..40,
        cost in 0.001f64..0.05,
    ) {
        let log = run_simulation(&regular(ranks, cores, ranks * per_rank, cost, 2)).unwrap();
        let expect = per_rank.div_ceil(cores) as f64 * cost;
        for m in log.makespans() {
            prop_assert!((m - expect).abs() <= 1e-8 * expect.max(1e-3), "{} vs {}", m, expect);
        }
    }

    #[test]
    fn random_small_scenarios_keep_invariants(
        ranks in 2usize..6,
        cores in 1usize..3,
        counts in proptest::collection::vec(0usize..60, 6),
        mode in prop_oneof![Just("diffusion"), Just("ccp"), Just("ccp+diffusion")],
        urgent in any::<bool>(),
        seed in 0u64..1000,
    ) {
        let row: Vec<String> = counts[..ranks].iter().map(|c| c.to_string()).collect();
        let s = scenario(&format!(
            r#"
name = "random"
steps = 6
[cluster]
ranks = {ranks}
cores_per_rank = {cores}
speed_jitter = 0.3
seed = {seed}
[cluster.network]
latency = 1e-4
bandwidth = 1e8
[workload]
generator = "explicit"
task_cost = 0.002
input_bytes = 5000
output_bytes = 5000
counts = [{row}]
[balancing]
mode = "{mode}"
omega_reinf = 0.8
urgent_recompute = {urgent}
check_invariants = true
"#,
            row = vec![format!("[{}]", row.join(", ")); 6].join(", ")
        ));
        let log = run_simulation(&s).unwrap();
        prop_assert!(log.invariant_checks > 0);
        check_log_consistency(&log);
        prop_assert_eq!(&log, &run_simulation(&s).unwrap());
    }
}
