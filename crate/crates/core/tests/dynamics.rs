mod common;

use common::{cell, close, pick, replay_gap, Oracle};
use patrol_core::environment::{Disturbance, DisturbanceKind, ObservationBounds, SyntheticEnv};
use patrol_core::gridmap::{Action, CellIndex, GridSpec};
use patrol_core::learner::{CoordinationMode, IdlenessParams, OnlineConfig, OnlineLearner, ReplayBuffer, Trainer, TrainConfig, WorldState};
use patrol_core::statereward::{ArrivalMap, RewardConfig, ScoreWeights};
use patrol_core::TrafficField;
use proptest::prelude::*;

#[derive(Debug, Clone)]
struct Case {
    obstacles: Vec<(usize, usize)>,
    sources: Vec<(bool, usize, usize)>,
    starts: Vec<(usize, usize)>,
    actions: Vec<Vec<usize>>,
    alpha_t: f64,
    alpha_i: f64,
    start_k: usize,
}

fn case_strategy(rows: usize, cols: usize, drones: usize, steps: usize) -> impl Strategy<Value = Case> {
    let cells = rows * cols;
    (
        proptest::sample::subsequence((0..cells).collect::<Vec<_>>(), 0..=3),
        proptest::collection::vec((any::<bool>(), 0..rows, 0..cols), 0..=3),
        proptest::sample::subsequence((0..cells).collect::<Vec<_>>(), drones),
        proptest::collection::vec(proptest::collection::vec(0usize..5, drones), steps),
        0.1f64..2.0,
        0.1f64..2.0,
        0usize..40,
    )
        .prop_filter_map("starts must avoid obstacles", move |(obs, sources, starts, actions, alpha_t, alpha_i, start_k)| {
            let obstacles: Vec<_> = obs.iter().map(|&f| (f / cols, f % cols)).collect();
            let starts: Vec<_> = starts.iter().map(|&f| (f / cols, f % cols)).collect();
            if starts.iter().any(|s| obstacles.contains(s)) {
                return None;
            }
            Some(Case { obstacles, sources, starts, actions, alpha_t, alpha_i, start_k })
        })
}

fn build_env(case: &Case, rows: usize, cols: usize) -> SyntheticEnv<f64> {
    let grid = GridSpec::new(rows as f64, cols as f64, rows, cols, case.obstacles.iter().map(|&p| cell(p))).unwrap();
    let disturbances = case
        .sources
        .iter()
        .map(|&(big, i, j)| Disturbance { kind: if big { DisturbanceKind::Big } else { DisturbanceKind::Small }, origin: CellIndex::new(i, j) })
        .collect();
    SyntheticEnv::new(grid, disturbances, 50, 0.7, 5.0, ObservationBounds::default()).unwrap()
}

fn max_discrepancy(case: &Case, rows: usize, cols: usize, arrival: ArrivalMap) -> f64 {
    let env = build_env(case, rows, cols);
    replay_gap(&env, &case.starts, &case.actions, case.alpha_t, case.alpha_i, arrival, case.start_k)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn incremental_dynamics_match_oracle(case in case_strategy(4, 4, 2, 3)) {
        for arrival in [ArrivalMap::PreUpdate, ArrivalMap::PostUpdate] {
            let gap = max_discrepancy(&case, 4, 4, arrival);
            prop_assert!(gap <= 1e-12, "{arrival:?}: gap {gap}");
        }
    }

    #[test]
    fn larger_swarms_match_oracle(case in case_strategy(5, 6, 4, 6)) {
        let gap = max_discrepancy(&case, 5, 6, ArrivalMap::PreUpdate);
        prop_assert!(gap <= 1e-12, "gap {gap}");
    }

    #[test]
    fn literal_reading_telescopes(case in case_strategy(4, 5, 2, 8)) {
        // Under the post-update reading the cumulative score is the final
        // neighborhood value minus the initial one.
        let env = build_env(&case, 4, 5);
        let cfg = RewardConfig { weights: ScoreWeights::new(case.alpha_t, case.alpha_i).unwrap(), arrival: ArrivalMap::PostUpdate };
        let oracle = Oracle::from_env(&env, case.alpha_t, case.alpha_i);
        let start: Vec<CellIndex> = case.starts.iter().map(|&p| cell(p)).collect();
        let mut world = WorldState::new(&env, start.clone(), &IdlenessParams::default()).unwrap();
        world.k = case.start_k;
        let initial = oracle.initial_idleness();
        let mut total = 0.0;
        for ranks in &case.actions {
            let actions: Vec<Action> = world.positions.iter().zip(ranks).map(|(&c, &r)| pick(&env.grid, c, r)).collect();
            total += world.advance(&env, &actions, &cfg).unwrap().score;
        }
        let values: Vec<Vec<f64>> = (0..4).map(|i| (0..5).map(|j| world.idleness.get(CellIndex::new(i, j))).collect()).collect();
        let end: f64 = world.positions.iter().map(|c| oracle.post_value(&values, (c.i, c.j), world.k)).sum();
        let begin: f64 = start.iter().map(|c| oracle.post_value(&initial, (c.i, c.j), case.start_k)).sum();
        prop_assert!(close(total, end - begin, 1e-10), "{total} vs {}", end - begin);
    }
}

#[test]
fn stored_transitions_carry_the_step_rewards() {
    let grid = GridSpec::unit(5, 5).unwrap();
    let env = SyntheticEnv::test_map(grid, 60, 3).unwrap();
    let cfg = TrainConfig { net_dims: vec![13, 8, 5], batch_size: 4, iters_per_epoch: 1, ..TrainConfig::desk() };
    let trainer = Trainer::<f64>::new(&cfg).unwrap();
    let buffers = (0..3).map(|_| ReplayBuffer::new(100).unwrap()).collect();
    let mut learner = OnlineLearner::new(trainer, buffers, OnlineConfig { frozen: true, ..OnlineConfig::default() }, 5).unwrap();
    let starts = vec![CellIndex::new(0, 0), CellIndex::new(2, 2), CellIndex::new(4, 1)];
    let mut world = WorldState::new(&env, starts, &IdlenessParams::default()).unwrap();
    let oracle = Oracle::from_env(&env, 1.0, 1.0);
    let mut idle = oracle.initial_idleness();
    for step in 0..12 {
        let mode = if step < 6 { CoordinationMode::Coordinated } else { CoordinationMode::Decentralized };
        let before: Vec<(usize, usize)> = world.positions.iter().map(|c| (c.i, c.j)).collect();
        let k = world.k;
        let out = learner.step(&env, &mut world, mode, &RewardConfig::default()).unwrap();
        let after: Vec<(usize, usize)> = world.positions.iter().map(|c| (c.i, c.j)).collect();
        let next_idle = oracle.step_idleness(&idle, &after);
        for d in 0..3 {
            let stored = learner.buffers[d].get(step).unwrap();
            assert_eq!(stored.r, out.record.rewards[d]);
            assert_eq!(stored.u, out.record.actions[d]);
            let expected = oracle.reward(&idle, &next_idle, before[d], after[d], k, true);
            assert!((stored.r - expected).abs() <= 1e-12);
            assert_eq!(stored.feasible_next, env.grid().feasible_mask(world.positions[d]).unwrap());
        }
        idle = next_idle;
    }
}
