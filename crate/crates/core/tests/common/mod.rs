//! From-scratch reference implementations used as test oracles. They share
//! no code with the library beyond the plain data types.

#![allow(dead_code)]

use patrol_core::environment::{DisturbanceKind, SyntheticEnv};
use patrol_core::gridmap::{Action, CellIndex, GridSpec};
use patrol_core::learner::{IdlenessParams, WorldState};
use patrol_core::statereward::{ArrivalMap, RewardConfig, ScoreWeights};

pub const ETA: f64 = 0.1;
pub const DELTA: f64 = 0.025;

/// Dense description of a small world for the brute-force evaluator.
pub struct Oracle {
    pub rows: usize,
    pub cols: usize,
    pub obstacles: Vec<(usize, usize)>,
    /// (is_big, i, j)
    pub sources: Vec<(bool, usize, usize)>,
    pub horizon: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eta: f64,
    pub delta: f64,
    pub alpha_t: f64,
    pub alpha_i: f64,
}

impl Oracle {
    pub fn from_env(env: &SyntheticEnv<f64>, alpha_t: f64, alpha_i: f64) -> Self {
        Self {
            rows: env.grid.rows(),
            cols: env.grid.cols(),
            obstacles: env.grid.obstacles().iter().map(|c| (c.i, c.j)).collect(),
            sources: env
                .disturbances
                .iter()
                .map(|d| (d.kind == DisturbanceKind::Big, d.origin.i, d.origin.j))
                .collect(),
            horizon: env.horizon,
            beta1: env.beta1,
            beta2: env.beta2,
            eta: ETA,
            delta: DELTA,
            alpha_t,
            alpha_i,
        }
    }

    pub fn blocked(&self, i: usize, j: usize) -> bool {
        self.obstacles.contains(&(i, j))
    }

    pub fn importance(&self, i: usize, j: usize, k: usize) -> f64 {
        if self.blocked(i, j) {
            return 0.0;
        }
        let mut z = 0.0;
        for &(big, si, sj) in &self.sources {
            let a = if big {
                (-(k as f64) / (self.beta1 * self.horizon as f64)).exp()
            } else {
                let s = (2.0 * self.beta2 * std::f64::consts::PI * k as f64 / self.horizon as f64).sin();
                if s > 0.0 { s } else { 0.0 }
            };
            let di = i as f64 - si as f64;
            let dj = j as f64 - sj as f64;
            z += a * (-0.5 * (di * di + dj * dj)).exp();
        }
        z.clamp(0.0, 1.0)
    }

    pub fn initial_idleness(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| (0..self.cols).map(|j| if self.blocked(i, j) { 0.0 } else { 1.0 }).collect()).collect()
    }

    pub fn step_idleness(&self, idle: &[Vec<f64>], occupied: &[(usize, usize)]) -> Vec<Vec<f64>> {
        let mut next = idle.to_vec();
        for i in 0..self.rows {
            for j in 0..self.cols {
                next[i][j] = if self.blocked(i, j) {
                    0.0
                } else if occupied.contains(&(i, j)) {
                    self.eta * idle[i][j]
                } else {
                    let v = idle[i][j] + self.delta;
                    if v > 1.0 { 1.0 } else { v }
                };
            }
        }
        next
    }

    fn neighborhood(&self, i: usize, j: usize) -> Vec<(usize, usize)> {
        let (i, j) = (i as i64, j as i64);
        [(i, j), (i - 1, j), (i + 1, j), (i, j - 1), (i, j + 1)]
            .into_iter()
            .filter(|&(a, b)| a >= 0 && b >= 0 && a < self.rows as i64 && b < self.cols as i64)
            .map(|(a, b)| (a as usize, b as usize))
            .collect()
    }

    /// Weighted neighborhood value `alpha_t * sum(I T) + alpha_i * sum(I)`.
    fn value(&self, idle: &[Vec<f64>], at: (usize, usize), k: usize) -> f64 {
        let mut t = 0.0;
        let mut s = 0.0;
        for (a, b) in self.neighborhood(at.0, at.1) {
            t += idle[a][b] * self.importance(a, b, k);
            s += idle[a][b];
        }
        self.alpha_t * t + self.alpha_i * s
    }

    /// Reward of a single drone. `pre_update` selects whether the arrival
    /// neighborhood reads the idleness before or after the step.
    pub fn reward(&self, pre: &[Vec<f64>], post: &[Vec<f64>], from: (usize, usize), to: (usize, usize), k: usize, pre_update: bool) -> f64 {
        let arrival_map = if pre_update { pre } else { post };
        let arr_t: f64 = self.neighborhood(to.0, to.1).iter().map(|&(a, b)| arrival_map[a][b] * self.importance(a, b, k + 1)).sum();
        let arr_i: f64 = self.neighborhood(to.0, to.1).iter().map(|&(a, b)| arrival_map[a][b]).sum();
        let dep_t: f64 = self.neighborhood(from.0, from.1).iter().map(|&(a, b)| pre[a][b] * self.importance(a, b, k)).sum();
        let dep_i: f64 = self.neighborhood(from.0, from.1).iter().map(|&(a, b)| pre[a][b]).sum();
        self.alpha_t * (arr_t - dep_t) + self.alpha_i * (arr_i - dep_i)
    }

    pub fn coverage(&self, idle: &[Vec<f64>]) -> f64 {
        let mut total = 0.0;
        let mut n = 0usize;
        for i in 0..self.rows {
            for j in 0..self.cols {
                if !self.blocked(i, j) {
                    total += idle[i][j];
                    n += 1;
                }
            }
        }
        1.0 - total / n as f64
    }

    /// Value-function shortcut used to double-check the telescoping of the
    /// literal post-update reward.
    pub fn post_value(&self, idle: &[Vec<f64>], at: (usize, usize), k: usize) -> f64 {
        self.value(idle, at, k)
    }
}

pub fn cell(p: (usize, usize)) -> CellIndex {
    CellIndex::new(p.0, p.1)
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

/// Picks the feasible action at `rank` modulo the feasible count.
pub fn pick(grid: &GridSpec, c: CellIndex, rank: usize) -> Action {
    let feasible = grid.feasible_actions(c).unwrap();
    feasible[rank % feasible.len()]
}

/// Drives the incremental pipeline and the oracle side by side and returns
/// the largest gap seen in rewards, scores, idleness and coverage.
pub fn replay_gap(
    env: &SyntheticEnv<f64>,
    starts: &[(usize, usize)],
    ranks: &[Vec<usize>],
    alpha_t: f64,
    alpha_i: f64,
    arrival: ArrivalMap,
    start_k: usize,
) -> f64 {
    let cfg = RewardConfig { weights: ScoreWeights::new(alpha_t, alpha_i).unwrap(), arrival };
    let oracle = Oracle::from_env(env, alpha_t, alpha_i);
    let mut world = WorldState::new(env, starts.iter().map(|&p| cell(p)).collect(), &IdlenessParams::default()).unwrap();
    world.k = start_k;
    let mut idle = oracle.initial_idleness();
    let mut positions = starts.to_vec();
    let mut worst = 0.0f64;
    for step in ranks {
        let k = world.k;
        let actions: Vec<Action> = world.positions.iter().zip(step).map(|(&c, &r)| pick(&env.grid, c, r)).collect();
        let rec = world.advance(env, &actions, &cfg).unwrap();
        let next_positions: Vec<(usize, usize)> = rec.to.iter().map(|c| (c.i, c.j)).collect();
        let next_idle = oracle.step_idleness(&idle, &next_positions);
        let mut score = 0.0;
        for d in 0..positions.len() {
            let r = oracle.reward(&idle, &next_idle, positions[d], next_positions[d], k, arrival == ArrivalMap::PreUpdate);
            worst = worst.max((r - rec.rewards[d]).abs());
            score += r;
        }
        worst = worst.max((score - rec.score).abs());
        for (i, row) in next_idle.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                worst = worst.max((v - world.idleness.get(CellIndex::new(i, j))).abs());
            }
        }
        worst = worst.max((oracle.coverage(&next_idle) - world.idleness.coverage_score(&env.grid).unwrap()).abs());
        idle = next_idle;
        positions = next_positions;
    }
    worst
}
