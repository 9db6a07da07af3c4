//! Shared idleness map: per-cell urgency to revisit, in `[0, 1]`.

use serde::{Deserialize, Serialize};

use crate::error::{PatrolError, Result};
use crate::gridmap::{CellIndex, GridSpec};
use crate::scalar::Scalar;

pub const DEFAULT_ETA: f64 = 0.1;
pub const DEFAULT_DELTA: f64 = 0.025;
pub const DEFAULT_FILL: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdlenessMap<S> {
    rows: usize,
    cols: usize,
    values: Vec<S>,
    /// Forgetting factor applied to visited cells.
    eta: S,
    /// Recovery increment for unvisited cells.
    delta: S,
}

fn open_unit<S: Scalar>(name: &'static str, v: S) -> Result<()> {
    if v > S::zero() && v < S::one() {
        Ok(())
    } else {
        Err(PatrolError::InvalidParameter { name, reason: format!("must lie in (0, 1), got {v}") })
    }
}

impl<S: Scalar> IdlenessMap<S> {
    /// Free cells start at `fill`, obstacles at zero.
    pub fn new(grid: &GridSpec, eta: S, delta: S, fill: S) -> Result<Self> {
        open_unit("eta", eta)?;
        open_unit("delta", delta)?;
        if !(fill >= S::zero() && fill <= S::one()) {
            return Err(PatrolError::InvalidParameter { name: "fill", reason: format!("must lie in [0, 1], got {fill}") });
        }
        let values = grid.cells().map(|c| if grid.is_obstacle(c) { S::zero() } else { fill }).collect();
        Ok(Self { rows: grid.rows(), cols: grid.cols(), values, eta, delta })
    }

    /// Builds a map from explicit row-major values. Values are validated
    /// against the map invariants.
    pub fn from_values(grid: &GridSpec, values: Vec<S>, eta: S, delta: S) -> Result<Self> {
        open_unit("eta", eta)?;
        open_unit("delta", delta)?;
        if values.len() != grid.num_cells() {
            return Err(PatrolError::ShapeMismatch {
                expected: format!("{} values", grid.num_cells()),
                found: format!("{} values", values.len()),
            });
        }
        for (c, v) in grid.cells().zip(&values) {
            let ok = if grid.is_obstacle(c) { *v == S::zero() } else { *v >= S::zero() && *v <= S::one() };
            if !ok {
                return Err(PatrolError::InvalidParameter {
                    name: "idleness",
                    reason: format!("value {v} at ({}, {}) violates map invariants", c.i, c.j),
                });
            }
        }
        Ok(Self { rows: grid.rows(), cols: grid.cols(), values, eta, delta })
    }

    pub fn eta(&self) -> S {
        self.eta
    }

    pub fn delta(&self) -> S {
        self.delta
    }

    pub fn values(&self) -> &[S] {
        &self.values
    }

    pub fn get(&self, c: CellIndex) -> S {
        self.values[c.i * self.cols + c.j]
    }

    fn check_shape(&self, grid: &GridSpec) -> Result<()> {
        if grid.rows() != self.rows || grid.cols() != self.cols {
            return Err(PatrolError::ShapeMismatch {
                expected: format!("{}x{}", grid.rows(), grid.cols()),
                found: format!("{}x{}", self.rows, self.cols),
            });
        }
        Ok(())
    }

    /// Advances the map by one step given the set of cells occupied after the
    /// move. A cell occupied by several drones is discounted once.
    pub fn step(&self, grid: &GridSpec, occupied: &[CellIndex]) -> Result<Self> {
        self.check_shape(grid)?;
        let mut visited = vec![false; self.values.len()];
        for &c in occupied {
            grid.check_free(c)?;
            visited[grid.flat(c)] = true;
        }
        let values = grid
            .cells()
            .zip(&self.values)
            .zip(&visited)
            .map(|((c, &v), &hit)| {
                if grid.is_obstacle(c) {
                    S::zero()
                } else if hit {
                    self.eta * v
                } else {
                    (v + self.delta).min(S::one())
                }
            })
            .collect();
        Ok(Self { values, ..self.clone() })
    }

    /// One minus the mean idleness over free cells.
    pub fn coverage_score(&self, grid: &GridSpec) -> Result<S> {
        self.check_shape(grid)?;
        let free = grid.num_free();
        if free == 0 {
            return Err(PatrolError::InvalidGrid("no free cells".into()));
        }
        let total = grid
            .cells()
            .zip(&self.values)
            .filter(|(c, _)| !grid.is_obstacle(*c))
            .fold(S::zero(), |acc, (_, &v)| acc + v);
        Ok(S::one() - total / S::from_usize_lossy(free))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn init_examples() {
        let g = GridSpec::new(3.0, 3.0, 3, 3, [CellIndex::new(0, 0)]).unwrap();
        let m = IdlenessMap::new(&g, 0.1, 0.025, 1.0).unwrap();
        assert_eq!(m.get(CellIndex::new(0, 0)), 0.0);
        assert!(g.free_cells().all(|c| m.get(c) == 1.0));
        let z = IdlenessMap::new(&g, 0.1, 0.025, 0.0).unwrap();
        assert!(z.values().iter().all(|v| *v == 0.0));
        assert!(IdlenessMap::new(&g, 1.0, 0.025, 1.0).is_err());
        assert!(IdlenessMap::new(&g, 0.1, 0.0, 1.0).is_err());
        assert!(IdlenessMap::new(&g, 0.1, 0.5, 1.1).is_err());
    }

    #[test]
    fn step_examples() {
        let g = GridSpec::new(2.0, 2.0, 2, 2, [CellIndex::new(1, 1)]).unwrap();
        let m = IdlenessMap::from_values(&g, vec![0.5, 0.99, 0.3, 0.0], 0.1, 0.025).unwrap();
        let next = m.step(&g, &[CellIndex::new(0, 0)]).unwrap();
        assert_relative_eq!(next.get(CellIndex::new(0, 0)), 0.05, max_relative = 1e-15);
        assert_eq!(next.get(CellIndex::new(0, 1)), 1.0);
        assert_relative_eq!(next.get(CellIndex::new(1, 0)), 0.325, max_relative = 1e-15);
        assert_eq!(next.get(CellIndex::new(1, 1)), 0.0);
        assert!(matches!(m.step(&g, &[CellIndex::new(1, 1)]), Err(PatrolError::ObstacleCell(_))));
    }

    #[test]
    fn shared_cell_discounted_once() {
        let g = GridSpec::unit(2, 2).unwrap();
        let m = IdlenessMap::new(&g, 0.1, 0.025, 1.0).unwrap();
        let c = CellIndex::new(0, 1);
        assert_eq!(m.step(&g, &[c, c]).unwrap().get(c), 0.1);
    }

    #[test]
    fn coverage_examples() {
        let g = GridSpec::unit(20, 30).unwrap();
        let zero = IdlenessMap::new(&g, 0.1, 0.025, 0.0).unwrap();
        assert_eq!(zero.coverage_score(&g).unwrap(), 1.0);
        let full = IdlenessMap::new(&g, 0.1, 0.025, 1.0).unwrap();
        assert_eq!(full.coverage_score(&g).unwrap(), 0.0);
        let half = IdlenessMap::new(&g, 0.1, 0.025, 0.5).unwrap();
        // total idleness 300 over 600 free cells
        assert_eq!(half.coverage_score(&g).unwrap(), 1.0 - 300.0 / 600.0);

        let with_obs = GridSpec::new(2.0, 2.0, 2, 2, [CellIndex::new(0, 0)]).unwrap();
        let m = IdlenessMap::from_values(&with_obs, vec![0.0, 0.3, 0.6, 0.9], 0.1, 0.025).unwrap();
        assert_relative_eq!(m.coverage_score(&with_obs).unwrap(), 0.4, max_relative = 1e-12);
    }

    #[test]
    fn convergence_rates() {
        let g = GridSpec::unit(1, 2).unwrap();
        let delta = 0.025;
        let mut m = IdlenessMap::new(&g, 0.1, delta, 0.0).unwrap();
        let a = CellIndex::new(0, 0);
        let b = CellIndex::new(0, 1);
        let bound = (1.0f64 / delta).ceil() as usize;
        for _ in 0..bound {
            m = m.step(&g, &[a]).unwrap();
        }
        assert_eq!(m.get(b), 1.0);
        assert!(m.get(a) == 0.0);

        let mut m = IdlenessMap::new(&g, 0.5, delta, 1.0).unwrap();
        for n in 1..=20 {
            m = m.step(&g, &[a]).unwrap();
            assert_eq!(m.get(a), 0.5f64.powi(n));
        }
    }

    fn map_strategy() -> impl Strategy<Value = (GridSpec, Vec<f64>, Vec<CellIndex>)> {
        (1usize..6, 1usize..6, proptest::collection::vec(0.0f64..=1.0, 36), proptest::collection::vec(any::<bool>(), 36))
            .prop_filter_map("at least one free cell", |(r, c, vals, flags)| {
                let cells: Vec<_> = (0..r).flat_map(|i| (0..c).map(move |j| CellIndex::new(i, j))).collect();
                let obstacles: Vec<_> = cells.iter().zip(&flags).filter(|(_, f)| **f).map(|(c, _)| *c).collect();
                let g = GridSpec::unit(r, c).ok()?;
                let g = GridSpec::new(g.height(), g.width(), r, c, obstacles).ok()?;
                let values = cells.iter().zip(&vals).map(|(c, v)| if g.is_obstacle(*c) { 0.0 } else { *v }).collect();
                let visited = g.free_cells().zip(&flags).filter(|(_, f)| !**f).map(|(c, _)| c).collect();
                Some((g, values, visited))
            })
    }

    proptest! {
        #[test]
        fn step_preserves_invariants((g, values, visited) in map_strategy()) {
            let m = IdlenessMap::from_values(&g, values, 0.1, 0.025).unwrap();
            let next = m.step(&g, &visited).unwrap();
            for c in g.cells() {
                let v = next.get(c);
                prop_assert!((0.0..=1.0).contains(&v));
                if g.is_obstacle(c) { prop_assert_eq!(v, 0.0); }
            }
            let cov = next.coverage_score(&g).unwrap();
            prop_assert!((0.0..=1.0).contains(&cov));
        }

        #[test]
        fn step_is_monotone((g, values, visited) in map_strategy(), bump in 0.0f64..0.5) {
            let lo = IdlenessMap::from_values(&g, values.clone(), 0.1, 0.025).unwrap();
            let raised = g.cells().zip(&values).map(|(c, v)| if g.is_obstacle(c) { 0.0 } else { (v + bump).min(1.0) }).collect();
            let hi = IdlenessMap::from_values(&g, raised, 0.1, 0.025).unwrap();
            let (a, b) = (lo.step(&g, &visited).unwrap(), hi.step(&g, &visited).unwrap());
            for c in g.cells() {
                prop_assert!(a.get(c) <= b.get(c));
            }
        }
    }
}
