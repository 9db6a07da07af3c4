mod common;

use std::collections::HashSet;

use common::Oracle;
use patrol_core::environment::{Disturbance, DisturbanceKind, ObservationBounds, SyntheticEnv};
use patrol_core::gridmap::CellIndex;
use patrol_core::harness::metrics::strict_max_share;
use patrol_core::harness::{compare, run_episode, run_episode_in, RunConfig};
use patrol_core::{Environment, GridSpec, PatrolError, PolicyKind};
use proptest::prelude::*;

fn small(policy: &str, seed: u64) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.grid = GridSpec::unit(8, 10).unwrap();
    cfg.episode.horizon = 120;
    cfg.episode.seed = seed;
    cfg.swarm.drones = 3;
    cfg.policy.kind = policy.to_string();
    cfg
}

fn oracle_for(cfg: &RunConfig) -> Oracle {
    match cfg.environment().unwrap() {
        Environment::Synthetic(e) => Oracle::from_env(&e, cfg.reward.alpha_t, cfg.reward.alpha_i),
        Environment::Demand(_) => panic!("synthetic map expected"),
    }
}

#[test]
fn logged_trajectories_replay_to_the_same_metrics() {
    for policy in ["random", "greedy", "sweeping"] {
        for seed in [0, 7] {
            let cfg = small(policy, seed);
            let ep = run_episode(&cfg, None).unwrap();
            ep.log.check_feasible(&cfg.grid).unwrap();
            let oracle = oracle_for(&cfg);
            let mut idle = oracle.initial_idleness();
            let mut prev: Vec<(usize, usize)> = ep.log.start.iter().map(|c| (c.i, c.j)).collect();
            let mut visited: HashSet<(usize, usize)> = prev.iter().copied().collect();
            let mut cumulative = 0.0;
            for (k, (now, m)) in ep.log.positions.iter().zip(&ep.metrics.steps).enumerate() {
                let now: Vec<(usize, usize)> = now.iter().map(|c| (c.i, c.j)).collect();
                let next = oracle.step_idleness(&idle, &now);
                let score: f64 = prev.iter().zip(&now).map(|(&a, &b)| oracle.reward(&idle, &next, a, b, k, true)).sum();
                cumulative += score;
                visited.extend(now.iter().copied());
                assert_eq!(m.step, k);
                assert!((m.score - score).abs() <= 1e-12, "{policy} seed {seed} step {k}");
                assert!((m.cumulative - cumulative).abs() <= 1e-9);
                assert!((m.coverage - oracle.coverage(&next)).abs() <= 1e-12);
                assert!((m.visited_pct - 100.0 * visited.len() as f64 / 80.0).abs() <= 1e-9);
                idle = next;
                prev = now;
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn coverage_bounded_and_visits_monotone(seed in 0u64..1000, p in 0usize..3, drones in 1usize..5) {
        let mut cfg = small(["random", "greedy", "sweeping"][p], seed);
        cfg.swarm.drones = drones;
        cfg.episode.horizon = 60;
        let ep = run_episode(&cfg, None).unwrap();
        prop_assert_eq!(ep.metrics.len(), 60);
        let mut last = 0.0;
        for m in &ep.metrics.steps {
            prop_assert!((0.0..=1.0).contains(&m.coverage));
            prop_assert!(m.visited_pct >= last && m.visited_pct <= 100.0);
            last = m.visited_pct;
        }
    }
}

#[test]
fn single_cell_single_step() {
    let mut cfg = RunConfig::default();
    cfg.grid = GridSpec::unit(1, 1).unwrap();
    cfg.episode.horizon = 1;
    cfg.swarm.drones = 1;
    cfg.policy.kind = "random".into();
    let source = Disturbance { kind: DisturbanceKind::Big, origin: CellIndex::new(0, 0) };
    let env = SyntheticEnv::new(cfg.grid.clone(), vec![source], 1, 0.7, 5.0, ObservationBounds::default()).unwrap();
    let ep = run_episode_in(&cfg, &Environment::Synthetic(env.clone()), &PolicyKind::Random, None).unwrap();
    assert_eq!(ep.log.positions, vec![ep.log.start.clone()]);
    let oracle = Oracle::from_env(&env, 1.0, 1.0);
    // Only Stay is possible: the arrival and departure idleness cancel and
    // the score is the change in importance of the single cell.
    let expected = oracle.importance(0, 0, 1) - oracle.importance(0, 0, 0);
    let m = &ep.metrics.steps[0];
    assert!((m.score - expected).abs() <= 1e-12);
    assert!((m.coverage - 0.9).abs() <= 1e-12);
    assert_eq!(m.visited_pct, 100.0);
}

#[test]
fn random_swarm_covers_most_of_the_map() {
    let mut cfg = RunConfig::default();
    cfg.policy.kind = "random".into();
    let a = run_episode(&cfg, None).unwrap();
    let b = run_episode(&cfg, None).unwrap();
    assert!(a.summary().covered_pct >= 90.0, "{}", a.summary().covered_pct);
    assert_eq!(a.metrics, b.metrics);
}

#[test]
fn compare_is_order_independent() {
    let cfgs: Vec<RunConfig> = ["random", "greedy", "sweeping"].iter().map(|p| small(p, 3)).collect();
    let (_, forward) = compare(&cfgs, None).unwrap();
    let reversed: Vec<RunConfig> = cfgs.iter().rev().cloned().collect();
    let (_, backward) = compare(&reversed, None).unwrap();
    for s in &forward {
        let twin = backward.iter().find(|t| t.policy == s.policy).unwrap();
        assert_eq!(s, twin);
    }
    let total: f64 = forward.iter().map(|s| s.max_coverage_pct.unwrap()).sum();
    assert!(total <= 100.0 + 1e-9);
}

#[test]
fn compare_rejects_mismatched_runs() {
    let a = small("random", 1);
    let b = small("greedy", 2);
    assert!(matches!(compare(&[a.clone(), b], None), Err(PatrolError::IncomparableRuns(_))));
    let mut c = small("greedy", 1);
    c.episode.horizon = 50;
    assert!(matches!(compare(&[a, c], None), Err(PatrolError::IncomparableRuns(_))));
}

#[test]
fn strict_max_toy() {
    let runs = vec![vec![0.5, 0.6, 0.7, 0.1], vec![0.5, 0.4, 0.8, 0.2], vec![0.1, 0.6, 0.2, 0.3]];
    // step 0 tie between runs 0 and 1, step 1 tie between 0 and 2
    assert_eq!(strict_max_share(&runs).unwrap(), vec![0.0, 25.0, 25.0]);
    assert_eq!(strict_max_share(&runs[..1]).unwrap(), vec![0.0]);
    assert!(strict_max_share(&[vec![0.1], vec![0.1, 0.2]]).is_err());
}
