//! Per-drone state encoding, per-drone reward and the swarm patrolling score.

use serde::{Deserialize, Serialize};

use crate::environment::TrafficField;
use crate::error::{PatrolError, Result};
use crate::gridmap::{CellIndex, GridSpec};
use crate::idleness::IdlenessMap;
use crate::scalar::Scalar;

pub const STATE_DIM: usize = 13;

/// Fixed-order drone observation:
/// `[i/n_x, j/n_y, fov0..fov4, nu_down, nu_up, nu_left, nu_right, i_cm/n_x, j_cm/n_y]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateVector<S>(pub [S; STATE_DIM]);

impl<S: Scalar> StateVector<S> {
    pub fn as_slice(&self) -> &[S] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl<S> std::ops::Index<usize> for StateVector<S> {
    type Output = S;
    fn index(&self, idx: usize) -> &S {
        &self.0[idx]
    }
}

/// Preference between collecting importance (`alpha_t`) and idleness
/// (`alpha_i`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreWeights<S> {
    pub alpha_t: S,
    pub alpha_i: S,
}

impl<S: Scalar> ScoreWeights<S> {
    pub fn new(alpha_t: S, alpha_i: S) -> Result<Self> {
        if !(alpha_t >= S::zero() && alpha_i >= S::zero()) || !(alpha_t + alpha_i > S::zero()) {
            return Err(PatrolError::InvalidParameter {
                name: "weights",
                reason: format!("need non-negative weights with a positive sum, got ({alpha_t}, {alpha_i})"),
            });
        }
        Ok(Self { alpha_t, alpha_i })
    }
}

impl<S: Scalar> Default for ScoreWeights<S> {
    fn default() -> Self {
        Self { alpha_t: S::one(), alpha_i: S::one() }
    }
}

/// Which idleness map the arrival neighborhood is scored against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArrivalMap {
    /// `I^{k+1}`: the map after the move has discounted visited cells.
    /// Summed over a horizon this telescopes to end-state minus start-state.
    PostUpdate,
    /// `I^k`: the map the drone saw when it chose to move.
    #[default]
    PreUpdate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig<S> {
    pub weights: ScoreWeights<S>,
    pub arrival: ArrivalMap,
}

impl<S: Scalar> Default for RewardConfig<S> {
    fn default() -> Self {
        Self { weights: ScoreWeights::default(), arrival: ArrivalMap::default() }
    }
}

/// Importance-weighted idleness `I(p) T(p)` over the field of view, in
/// adjacency order. Off-map and obstacle slots are zero.
pub fn fov_values<S: Scalar, E: TrafficField<S>>(
    env: &E,
    idleness: &IdlenessMap<S>,
    c: CellIndex,
    k: usize,
) -> Result<[S; 5]> {
    let adj = env.grid().adjacency(c)?;
    Ok(adj.map(|slot| slot.map_or(S::zero(), |p| idleness.get(p) * env.importance(p, k))))
}

fn mean_idleness<S: Scalar>(map: &IdlenessMap<S>, cells: impl Iterator<Item = CellIndex>) -> S {
    let (sum, n) = cells.fold((S::zero(), 0usize), |(s, n), c| (s + map.get(c), n + 1));
    if n == 0 {
        S::zero()
    } else {
        sum / S::from_usize_lossy(n)
    }
}

/// Mean idleness of free cells straight down, up, left and right of `c`.
/// An empty direction scores zero.
pub fn directional_idleness<S: Scalar>(map: &IdlenessMap<S>, grid: &GridSpec, c: CellIndex) -> Result<[S; 4]> {
    grid.check_bounds(c)?;
    let free = |p: &CellIndex| !grid.is_obstacle(*p);
    let down = mean_idleness(map, (c.i + 1..grid.rows()).map(|i| CellIndex::new(i, c.j)).filter(free));
    let up = mean_idleness(map, (0..c.i).map(|i| CellIndex::new(i, c.j)).filter(free));
    let left = mean_idleness(map, (0..c.j).map(|j| CellIndex::new(c.i, j)).filter(free));
    let right = mean_idleness(map, (c.j + 1..grid.cols()).map(|j| CellIndex::new(c.i, j)).filter(free));
    Ok([down, up, left, right])
}

/// Mean grid index of every drone except `d`.
pub fn center_of_mass<S: Scalar>(positions: &[CellIndex], d: usize) -> Result<(S, S)> {
    if positions.len() < 2 {
        return Err(PatrolError::SingleDrone);
    }
    if d >= positions.len() {
        return Err(PatrolError::InvalidParameter {
            name: "drone",
            reason: format!("index {d} out of range for {} drones", positions.len()),
        });
    }
    let (si, sj) = positions
        .iter()
        .enumerate()
        .filter(|(n, _)| *n != d)
        .fold((0usize, 0usize), |(si, sj), (_, p)| (si + p.i, sj + p.j));
    let others = S::from_usize_lossy(positions.len() - 1);
    Ok((S::from_usize_lossy(si) / others, S::from_usize_lossy(sj) / others))
}

/// Assembles the 13-element observation for drone `d` at step `k`.
/// A lone drone uses its own cell as the center of mass.
pub fn build_state<S: Scalar, E: TrafficField<S>>(
    env: &E,
    idleness: &IdlenessMap<S>,
    positions: &[CellIndex],
    d: usize,
    k: usize,
) -> Result<StateVector<S>> {
    let grid = env.grid();
    let c = *positions.get(d).ok_or(PatrolError::InvalidParameter {
        name: "drone",
        reason: format!("index {d} out of range for {} drones", positions.len()),
    })?;
    grid.check_free(c)?;
    let rows = S::from_usize_lossy(grid.rows());
    let cols = S::from_usize_lossy(grid.cols());
    let fov = fov_values(env, idleness, c, k)?;
    let nu = directional_idleness(idleness, grid, c)?;
    let (icm, jcm) = if positions.len() == 1 {
        (S::from_usize_lossy(c.i), S::from_usize_lossy(c.j))
    } else {
        center_of_mass(positions, d)?
    };
    Ok(StateVector([
        S::from_usize_lossy(c.i) / rows,
        S::from_usize_lossy(c.j) / cols,
        fov[0],
        fov[1],
        fov[2],
        fov[3],
        fov[4],
        nu[0],
        nu[1],
        nu[2],
        nu[3],
        icm / rows,
        jcm / cols,
    ]))
}

/// `(sum of I T, sum of I)` over the field of view of `c`, with the
/// idleness read from `idle` and the importance taken at step `k`.
fn neighborhood_sums<S: Scalar, E: TrafficField<S>>(
    env: &E,
    idle: &IdlenessMap<S>,
    c: CellIndex,
    k: usize,
) -> Result<(S, S)> {
    let adj = env.grid().adjacency(c)?;
    Ok(adj.iter().flatten().fold((S::zero(), S::zero()), |(t, i), &p| {
        let v = idle.get(p);
        (t + v * env.importance(p, k), i + v)
    }))
}

fn check_pair<S: Scalar>(grid: &GridSpec, pre: &IdlenessMap<S>, post: &IdlenessMap<S>, arrived: CellIndex) -> Result<()> {
    if pre.values().len() != post.values().len() || pre.values().len() != grid.num_cells() {
        return Err(PatrolError::InconsistentMaps("map shapes differ".into()));
    }
    if pre.eta() != post.eta() || pre.delta() != post.delta() {
        return Err(PatrolError::InconsistentMaps("update parameters differ".into()));
    }
    if post.get(arrived) != pre.eta() * pre.get(arrived) {
        return Err(PatrolError::InconsistentMaps(format!(
            "arrival cell ({}, {}) was not discounted between the two maps",
            arrived.i, arrived.j
        )));
    }
    Ok(())
}

/// Reward of one drone moving `from -> to` during step `k`:
/// `alpha_t * (arrival I T - departure I T) + alpha_i * (arrival I - departure I)`,
/// departure sums on `(I^k, T^k)` and arrival sums on `T^{k+1}` with the
/// idleness map chosen by `cfg.arrival`.
#[allow(clippy::too_many_arguments)]
pub fn drone_reward<S: Scalar, E: TrafficField<S>>(
    pre: &IdlenessMap<S>,
    post: &IdlenessMap<S>,
    env: &E,
    from: CellIndex,
    to: CellIndex,
    k: usize,
    cfg: &RewardConfig<S>,
) -> Result<S> {
    let grid = env.grid();
    grid.check_free(from)?;
    grid.check_free(to)?;
    if from.i.abs_diff(to.i) + from.j.abs_diff(to.j) > 1 {
        return Err(PatrolError::InvalidParameter {
            name: "move",
            reason: format!("({}, {}) -> ({}, {}) is not a single step", from.i, from.j, to.i, to.j),
        });
    }
    check_pair(grid, pre, post, to)?;
    let arrival_map = match cfg.arrival {
        ArrivalMap::PostUpdate => post,
        ArrivalMap::PreUpdate => pre,
    };
    let (t_arr, i_arr) = neighborhood_sums(env, arrival_map, to, k + 1)?;
    let (t_dep, i_dep) = neighborhood_sums(env, pre, from, k)?;
    Ok(cfg.weights.alpha_t * (t_arr - t_dep) + cfg.weights.alpha_i * (i_arr - i_dep))
}

/// Per-drone rewards for a whole fleet transition.
pub fn drone_rewards<S: Scalar, E: TrafficField<S>>(
    pre: &IdlenessMap<S>,
    post: &IdlenessMap<S>,
    env: &E,
    from: &[CellIndex],
    to: &[CellIndex],
    k: usize,
    cfg: &RewardConfig<S>,
) -> Result<Vec<S>> {
    if from.len() != to.len() {
        return Err(PatrolError::ShapeMismatch {
            expected: format!("{} next positions", from.len()),
            found: format!("{}", to.len()),
        });
    }
    from.iter().zip(to).map(|(&a, &b)| drone_reward(pre, post, env, a, b, k, cfg)).collect()
}

/// Weighted patrolling score of a fleet transition: the sum of the drones'
/// rewards.
pub fn swarm_score<S: Scalar, E: TrafficField<S>>(
    pre: &IdlenessMap<S>,
    post: &IdlenessMap<S>,
    env: &E,
    from: &[CellIndex],
    to: &[CellIndex],
    k: usize,
    cfg: &RewardConfig<S>,
) -> Result<S> {
    Ok(drone_rewards(pre, post, env, from, to, k, cfg)?.into_iter().fold(S::zero(), |a, r| a + r))
}
