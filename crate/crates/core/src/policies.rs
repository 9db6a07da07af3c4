//! Action selection: baselines (random, greedy, boustrophedon sweep), the
//! decentralized epsilon-greedy Q policy and the coordinated joint-action
//! solver that maximizes the summed Q-values under distinct destinations.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::environment::TrafficField;
use crate::error::{PatrolError, Result};
use crate::gridmap::{Action, ActionMask, CellIndex, GridSpec};
use crate::idleness::IdlenessMap;
use crate::qnet::{masked_argmax, QParams, ACTION_COUNT};
use crate::scalar::Scalar;
use crate::statereward::StateVector;

pub const DEFAULT_EPSILON: f64 = 0.05;

/// Largest swarm solved by plain enumeration; bigger swarms go through the
/// assignment formulation.
pub const EXHAUSTIVE_LIMIT: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicyKind {
    Random,
    Greedy,
    /// One sweeper, one random drone, the rest greedy.
    Sweeping,
    RlCoordinated,
    RlDecentralized { epsilon: f64 },
}

impl PolicyKind {
    pub fn name(&self) -> &'static str {
        match self {
            PolicyKind::Random => "random",
            PolicyKind::Greedy => "greedy",
            PolicyKind::Sweeping => "sweeping",
            PolicyKind::RlCoordinated => "rl",
            PolicyKind::RlDecentralized { .. } => "rl-decentralized",
        }
    }

    pub fn is_learned(&self) -> bool {
        matches!(self, PolicyKind::RlCoordinated | PolicyKind::RlDecentralized { .. })
    }
}

impl std::str::FromStr for PolicyKind {
    type Err = PatrolError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(PolicyKind::Random),
            "greedy" => Ok(PolicyKind::Greedy),
            "sweeping" | "sweep" => Ok(PolicyKind::Sweeping),
            "rl" | "rl-coordinated" => Ok(PolicyKind::RlCoordinated),
            "rl-decentralized" => Ok(PolicyKind::RlDecentralized { epsilon: DEFAULT_EPSILON }),
            other => Err(PatrolError::Config(format!("unknown policy `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepRole {
    Sweeper,
    Greedy,
    Random,
}

/// Role of every drone in a sweeping swarm: the first drone sweeps, the last
/// moves randomly and everyone in between is greedy.
pub fn sweeping_roles(n: usize) -> Vec<SweepRole> {
    (0..n)
        .map(|d| match d {
            0 => SweepRole::Sweeper,
            d if d == n - 1 => SweepRole::Random,
            _ => SweepRole::Greedy,
        })
        .collect()
}

pub fn random_policy<R: Rng>(grid: &GridSpec, c: CellIndex, rng: &mut R) -> Result<Action> {
    let actions = grid.feasible_actions(c)?;
    Ok(actions[rng.gen_range(0..actions.len())])
}

/// Move to the field-of-view cell with the largest `I T`.
pub fn greedy_policy<S: Scalar, E: TrafficField<S>>(
    env: &E,
    idleness: &IdlenessMap<S>,
    c: CellIndex,
    k: usize,
) -> Result<Action> {
    let grid = env.grid();
    let mut best: Option<(Action, S)> = None;
    for a in grid.feasible_actions(c)? {
        let dest = grid.apply_action(c, a)?;
        let value = idleness.get(dest) * env.importance(dest, k);
        if best.is_none_or(|(_, v)| value > v) {
            best = Some((a, value));
        }
    }
    best.map(|(a, _)| a).ok_or(PatrolError::NoFeasibleAction)
}

/// Cursor of a boustrophedon sweeper: position along the serpentine order
/// and whether it is currently walking it forward or backward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepState {
    pub row: usize,
    pub col: usize,
    pub forward: bool,
}

fn serpentine_rank(grid: &GridSpec, c: CellIndex) -> usize {
    let offset = if c.i % 2 == 0 { c.j } else { grid.cols() - 1 - c.j };
    c.i * grid.cols() + offset
}

fn serpentine_cell(grid: &GridSpec, rank: usize) -> CellIndex {
    let i = rank / grid.cols();
    let offset = rank % grid.cols();
    let j = if i % 2 == 0 { offset } else { grid.cols() - 1 - offset };
    CellIndex::new(i, j)
}

impl SweepState {
    /// Starts a forward sweep from `c`, or a backward one from the final cell.
    pub fn start_at(grid: &GridSpec, c: CellIndex) -> Result<Self> {
        if !grid.obstacles().is_empty() {
            return Err(PatrolError::Unsupported("sweeping requires an obstacle-free grid".into()));
        }
        grid.check_bounds(c)?;
        let last = grid.num_cells() - 1;
        Ok(Self { row: c.i, col: c.j, forward: serpentine_rank(grid, c) != last || last == 0 })
    }

    pub fn cell(&self) -> CellIndex {
        CellIndex::new(self.row, self.col)
    }
}

/// Next serpentine move. The sweeper walks rows alternately left-to-right and
/// right-to-left, reverses at either end and retraces its path, so every cell
/// is revisited with period `2 n_x n_y - 2`.
pub fn sweep_policy(grid: &GridSpec, state: SweepState) -> Result<(Action, SweepState)> {
    if !grid.obstacles().is_empty() {
        return Err(PatrolError::Unsupported("sweeping requires an obstacle-free grid".into()));
    }
    let here = state.cell();
    grid.check_bounds(here)?;
    let last = grid.num_cells() - 1;
    if last == 0 {
        return Ok((Action::Stay, state));
    }
    let rank = serpentine_rank(grid, here);
    let forward = if rank == last {
        false
    } else if rank == 0 {
        true
    } else {
        state.forward
    };
    let next_rank = if forward { rank + 1 } else { rank - 1 };
    let next = serpentine_cell(grid, next_rank);
    let action = Action::ALL[1..]
        .iter()
        .copied()
        .find(|&a| grid.offset(here, a) == Some(next))
        .expect("serpentine neighbors are adjacent");
    Ok((action, SweepState { row: next.i, col: next.j, forward }))
}

/// Epsilon-greedy selection on Q-values restricted to `mask`. One uniform
/// draw decides the branch; exploring draws a second index.
pub fn rl_decentralized<S: Scalar, R: Rng>(
    params: &QParams<S>,
    s: &StateVector<S>,
    mask: ActionMask,
    epsilon: f64,
    rng: &mut R,
) -> Result<Action> {
    if mask.is_empty() {
        return Err(PatrolError::NoFeasibleAction);
    }
    if epsilon > 0.0 && rng.gen::<f64>() < epsilon {
        let actions: Vec<Action> = mask.iter().collect();
        return Ok(actions[rng.gen_range(0..actions.len())]);
    }
    let q = params.forward(s)?;
    masked_argmax(&q, mask).ok_or(PatrolError::NoFeasibleAction)
}

/// Candidate `(action, destination)` pairs of one drone in canonical order.
fn candidates(grid: &GridSpec, c: CellIndex) -> Result<Vec<(Action, CellIndex)>> {
    grid.feasible_actions(c)?.into_iter().map(|a| Ok((a, grid.apply_action(c, a)?))).collect()
}

/// Kuhn matching of drones to destination cells; on failure returns a set of
/// drones that jointly reach fewer cells than their count.
fn hall_violation(options: &[Vec<(Action, CellIndex)>]) -> Option<Vec<usize>> {
    use std::collections::HashMap;

    fn augment(
        d: usize,
        options: &[Vec<(Action, CellIndex)>],
        owner: &mut HashMap<CellIndex, usize>,
        seen: &mut Vec<bool>,
    ) -> bool {
        for &(_, cell) in &options[d] {
            match owner.get(&cell).copied() {
                None => {
                    owner.insert(cell, d);
                    return true;
                }
                Some(other) if !seen[other] => {
                    seen[other] = true;
                    if augment(other, options, owner, seen) {
                        owner.insert(cell, d);
                        return true;
                    }
                }
                Some(_) => {}
            }
        }
        false
    }

    let mut owner: HashMap<CellIndex, usize> = HashMap::new();
    for d in 0..options.len() {
        let mut seen = vec![false; options.len()];
        seen[d] = true;
        if !augment(d, options, &mut owner, &mut seen) {
            // drones reachable through alternating paths from `d`
            let mut set = vec![d];
            let mut frontier = vec![d];
            let mut inset = vec![false; options.len()];
            inset[d] = true;
            while let Some(x) = frontier.pop() {
                for (_, cell) in &options[x] {
                    if let Some(&o) = owner.get(cell) {
                        if !inset[o] {
                            inset[o] = true;
                            set.push(o);
                            frontier.push(o);
                        }
                    }
                }
            }
            set.sort_unstable();
            return Some(set);
        }
    }
    None
}

fn check_inputs<S: Scalar>(q: &[[S; ACTION_COUNT]], positions: &[CellIndex]) -> Result<()> {
    if q.len() != positions.len() {
        return Err(PatrolError::ShapeMismatch {
            expected: format!("{} q-vectors", positions.len()),
            found: format!("{}", q.len()),
        });
    }
    if q.iter().flatten().any(|v| !v.is_finite()) {
        return Err(PatrolError::NonFinite("q-values"));
    }
    Ok(())
}

/// Summed Q-value of a joint action.
pub fn joint_value<S: Scalar>(q: &[[S; ACTION_COUNT]], actions: &[Action]) -> S {
    q.iter().zip(actions).fold(S::zero(), |acc, (qd, a)| acc + qd[a.index()])
}

/// Maximizes the summed Q-value over feasible joint actions whose
/// destinations are pairwise distinct. Swaps between neighbors are allowed.
/// Among optimal joint actions the lexicographically smallest (in canonical
/// action order) is returned.
pub fn joint_action_solve<S: Scalar>(
    q: &[[S; ACTION_COUNT]],
    positions: &[CellIndex],
    grid: &GridSpec,
) -> Result<Vec<Action>> {
    if positions.len() <= EXHAUSTIVE_LIMIT {
        solve_exhaustive(q, positions, grid)
    } else {
        solve_assignment(q, positions, grid)
    }
}

/// Depth-first enumeration of every distinct-destination joint action.
pub fn solve_exhaustive<S: Scalar>(
    q: &[[S; ACTION_COUNT]],
    positions: &[CellIndex],
    grid: &GridSpec,
) -> Result<Vec<Action>> {
    check_inputs(q, positions)?;
    let options = positions.iter().map(|&c| candidates(grid, c)).collect::<Result<Vec<_>>>()?;
    if let Some(drones) = hall_violation(&options) {
        return Err(PatrolError::NoDistinctAssignment { drones });
    }

    struct Search<'a, S> {
        q: &'a [[S; ACTION_COUNT]],
        options: &'a [Vec<(Action, CellIndex)>],
        current: Vec<Action>,
        used: Vec<CellIndex>,
        best: Option<(S, Vec<Action>)>,
    }

    impl<S: Scalar> Search<'_, S> {
        fn visit(&mut self, d: usize, acc: S) {
            if d == self.options.len() {
                if self.best.as_ref().is_none_or(|(v, _)| acc > *v) {
                    self.best = Some((acc, self.current.clone()));
                }
                return;
            }
            for &(a, dest) in &self.options[d] {
                if self.used.contains(&dest) {
                    continue;
                }
                self.current.push(a);
                self.used.push(dest);
                self.visit(d + 1, acc + self.q[d][a.index()]);
                self.used.pop();
                self.current.pop();
            }
        }
    }

    let mut search = Search { q, options: &options, current: Vec::new(), used: Vec::new(), best: None };
    search.visit(0, S::zero());
    search
        .best
        .map(|(_, actions)| actions)
        .ok_or_else(|| PatrolError::NoDistinctAssignment { drones: (0..positions.len()).collect() })
}

/// Rectangular min-cost assignment (`rows <= cols`) by shortest augmenting
/// paths with potentials. Returns the column of every row.
fn min_cost_assignment<S: Scalar>(cost: &[Vec<S>], cols: usize) -> Vec<usize> {
    let rows = cost.len();
    let inf = S::infinity();
    // 1-based with a virtual column 0, as in the classic formulation
    let mut u = vec![S::zero(); rows + 1];
    let mut v = vec![S::zero(); cols + 1];
    let mut owner = vec![0usize; cols + 1];
    let mut way = vec![0usize; cols + 1];
    for r in 1..=rows {
        owner[0] = r;
        let mut j0 = 0usize;
        let mut minv = vec![inf; cols + 1];
        let mut used = vec![false; cols + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=cols {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=cols {
                if used[j] {
                    u[owner[j]] = u[owner[j]] + delta;
                    v[j] = v[j] - delta;
                } else {
                    minv[j] = minv[j] - delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0usize; rows];
    for j in 1..=cols {
        if owner[j] != 0 {
            assignment[owner[j] - 1] = j - 1;
        }
    }
    assignment
}

/// Best summed value for drones `free` over destinations not in `taken`,
/// via the assignment solver. `None` if no distinct assignment exists.
fn assignment_optimum<S: Scalar>(
    q: &[[S; ACTION_COUNT]],
    options: &[Vec<(Action, CellIndex)>],
    free: &[usize],
    taken: &[CellIndex],
) -> Option<(S, Vec<Action>)> {
    if free.is_empty() {
        return Some((S::zero(), Vec::new()));
    }
    let sub: Vec<Vec<(Action, CellIndex)>> = free
        .iter()
        .map(|&d| options[d].iter().copied().filter(|(_, c)| !taken.contains(c)).collect())
        .collect();
    if hall_violation(&sub).is_some() {
        return None;
    }
    let mut cells: Vec<CellIndex> = sub.iter().flatten().map(|(_, c)| *c).collect();
    cells.sort_unstable();
    cells.dedup();
    let scale = free
        .iter()
        .flat_map(|&d| q[d].iter())
        .fold(S::one(), |m, v| m.max(v.abs()));
    // any forbidden edge costs more than every feasible assignment combined
    let forbidden = scale * S::from_usize_lossy(4 * (free.len() + 1));
    let cost: Vec<Vec<S>> = sub
        .iter()
        .zip(free)
        .map(|(opts, &d)| {
            cells
                .iter()
                .map(|c| opts.iter().find(|(_, dest)| dest == c).map_or(forbidden, |(a, _)| -q[d][a.index()]))
                .collect()
        })
        .collect();
    let cols = cost[0].len();
    let picks = min_cost_assignment(&cost, cols);
    let mut actions = Vec::with_capacity(free.len());
    let mut value = S::zero();
    for (n, (&col, &d)) in picks.iter().zip(free).enumerate() {
        let (a, _) = *sub[n].iter().find(|(_, dest)| *dest == cells[col])?;
        actions.push(a);
        value = value + q[d][a.index()];
    }
    Some((value, actions))
}

/// Exact solver for any swarm size through a drones-to-cells assignment
/// problem, followed by a lexicographic refinement that fixes drones one at
/// a time to the earliest action still achieving the optimum.
pub fn solve_assignment<S: Scalar>(
    q: &[[S; ACTION_COUNT]],
    positions: &[CellIndex],
    grid: &GridSpec,
) -> Result<Vec<Action>> {
    check_inputs(q, positions)?;
    let n = positions.len();
    let options = positions.iter().map(|&c| candidates(grid, c)).collect::<Result<Vec<_>>>()?;
    if let Some(drones) = hall_violation(&options) {
        return Err(PatrolError::NoDistinctAssignment { drones });
    }
    let all: Vec<usize> = (0..n).collect();
    let (opt, _) = assignment_optimum(q, &options, &all, &[])
        .ok_or_else(|| PatrolError::NoDistinctAssignment { drones: all.clone() })?;
    let scale = q.iter().flatten().fold(S::one(), |m, v| m.max(v.abs()));
    let tol = S::epsilon() * S::from_usize_lossy(64 * (n + 1)) * scale * S::from_usize_lossy(n);

    let mut fixed: Vec<Action> = Vec::with_capacity(n);
    let mut taken: Vec<CellIndex> = Vec::with_capacity(n);
    let mut acc = S::zero();
    for d in 0..n {
        let rest: Vec<usize> = (d + 1..n).collect();
        let mut chosen = None;
        let mut fallback = None;
        for &(a, dest) in &options[d] {
            if taken.contains(&dest) {
                continue;
            }
            taken.push(dest);
            let here = acc + q[d][a.index()];
            if let Some((tail, _)) = assignment_optimum(q, &options, &rest, &taken) {
                let total = here + tail;
                if total >= opt - tol {
                    chosen = Some((a, dest, here));
                    taken.pop();
                    break;
                }
                if fallback.as_ref().is_none_or(|(_, _, _, best)| total > *best) {
                    fallback = Some((a, dest, here, total));
                }
            }
            taken.pop();
        }
        let (a, dest, here) = chosen
            .or(fallback.map(|(a, dest, here, _)| (a, dest, here)))
            .ok_or_else(|| PatrolError::NoDistinctAssignment { drones: all.clone() })?;
        fixed.push(a);
        taken.push(dest);
        acc = here;
    }
    Ok(fixed)
}
