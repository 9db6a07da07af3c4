//! Grid partitioning of a rectangular map, cell geometry and the per-cell
//! feasible-action model.
//!
//! Positions are carried as [`CellIndex`] values. World coordinates are only
//! produced on demand by [`GridSpec::cell_center`], so no rounding of cell
//! centers ever happens.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{PatrolError, Result};
use crate::scalar::Scalar;

/// Row/column index of a grid cell. Row `i` grows downward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellIndex {
    pub i: usize,
    pub j: usize,
}

impl CellIndex {
    pub const fn new(i: usize, j: usize) -> Self {
        Self { i, j }
    }
}

impl From<(usize, usize)> for CellIndex {
    fn from((i, j): (usize, usize)) -> Self {
        Self { i, j }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorldPoint<S> {
    pub x: S,
    pub y: S,
}

/// One of the five unit moves. The discriminant is the canonical encoding and
/// also the index of the matching Q-network output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum Action {
    Stay = 0,
    Up = 1,
    Down = 2,
    Left = 3,
    Right = 4,
}

impl Action {
    pub const ALL: [Action; 5] = [Action::Stay, Action::Up, Action::Down, Action::Left, Action::Right];

    /// Tag written into checkpoints so that output heads can be matched.
    pub const ORDER_TAG: &'static str = "stay,up,down,left,right";

    pub const fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(idx: usize) -> Option<Action> {
        Self::ALL.get(idx).copied()
    }

    pub const fn opposite(self) -> Action {
        match self {
            Action::Stay => Action::Stay,
            Action::Up => Action::Down,
            Action::Down => Action::Up,
            Action::Left => Action::Right,
            Action::Right => Action::Left,
        }
    }

    /// Index displacement `(di, dj)`.
    pub const fn delta(self) -> (isize, isize) {
        match self {
            Action::Stay => (0, 0),
            Action::Up => (-1, 0),
            Action::Down => (1, 0),
            Action::Left => (0, -1),
            Action::Right => (0, 1),
        }
    }
}

/// Bitmask over [`Action::ALL`]; bit `a.index()` set means `a` is feasible.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct ActionMask(pub u8);

impl ActionMask {
    pub const ALL: ActionMask = ActionMask(0b1_1111);
    pub const STAY_ONLY: ActionMask = ActionMask(0b0_0001);

    pub fn contains(self, a: Action) -> bool {
        self.0 & (1 << a.index()) != 0
    }

    pub fn insert(&mut self, a: Action) {
        self.0 |= 1 << a.index();
    }

    pub fn remove(&mut self, a: Action) {
        self.0 &= !(1 << a.index());
    }

    pub fn is_empty(self) -> bool {
        self.0 & 0b1_1111 == 0
    }

    pub fn count(self) -> usize {
        (self.0 & 0b1_1111).count_ones() as usize
    }

    pub fn iter(self) -> impl Iterator<Item = Action> {
        Action::ALL.into_iter().filter(move |a| self.contains(*a))
    }
}

impl FromIterator<Action> for ActionMask {
    fn from_iter<I: IntoIterator<Item = Action>>(iter: I) -> Self {
        let mut m = ActionMask(0);
        for a in iter {
            m.insert(a);
        }
        m
    }
}

/// Rectangular map of `height x width` length units split into
/// `rows x cols` cells, some of which may be obstacles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridSpecRepr", into = "GridSpecRepr")]
pub struct GridSpec {
    height: f64,
    width: f64,
    rows: usize,
    cols: usize,
    obstacles: BTreeSet<CellIndex>,
}

#[derive(Serialize, Deserialize)]
struct GridSpecRepr {
    height: f64,
    width: f64,
    n_x: usize,
    n_y: usize,
    #[serde(default)]
    obstacles: Vec<(usize, usize)>,
}

impl TryFrom<GridSpecRepr> for GridSpec {
    type Error = PatrolError;

    fn try_from(r: GridSpecRepr) -> Result<Self> {
        GridSpec::new(r.height, r.width, r.n_x, r.n_y, r.obstacles.into_iter().map(CellIndex::from))
    }
}

impl From<GridSpec> for GridSpecRepr {
    fn from(g: GridSpec) -> Self {
        GridSpecRepr {
            height: g.height,
            width: g.width,
            n_x: g.rows,
            n_y: g.cols,
            obstacles: g.obstacles.iter().map(|c| (c.i, c.j)).collect(),
        }
    }
}

impl GridSpec {
    pub fn new(
        height: f64,
        width: f64,
        rows: usize,
        cols: usize,
        obstacles: impl IntoIterator<Item = CellIndex>,
    ) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(PatrolError::InvalidGrid(format!("grid must be at least 1x1, got {rows}x{cols}")));
        }
        if !(height > 0.0 && height.is_finite() && width > 0.0 && width.is_finite()) {
            return Err(PatrolError::InvalidGrid(format!(
                "map extents must be positive and finite, got {height}x{width}"
            )));
        }
        let obstacles: BTreeSet<CellIndex> = obstacles.into_iter().collect();
        if let Some(c) = obstacles.iter().find(|c| c.i >= rows || c.j >= cols) {
            return Err(PatrolError::OutOfBounds { cell: *c, rows, cols });
        }
        if obstacles.len() >= rows * cols {
            return Err(PatrolError::InvalidGrid("every cell is an obstacle".into()));
        }
        Ok(Self { height, width, rows, cols, obstacles })
    }

    /// Obstacle-free grid whose cells are one length unit on each side.
    pub fn unit(rows: usize, cols: usize) -> Result<Self> {
        Self::new(rows as f64, cols as f64, rows, cols, [])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn height(&self) -> f64 {
        self.height
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    pub fn num_cells(&self) -> usize {
        self.rows * self.cols
    }

    pub fn obstacles(&self) -> &BTreeSet<CellIndex> {
        &self.obstacles
    }

    pub fn num_free(&self) -> usize {
        self.num_cells() - self.obstacles.len()
    }

    pub fn in_bounds(&self, c: CellIndex) -> bool {
        c.i < self.rows && c.j < self.cols
    }

    pub fn is_obstacle(&self, c: CellIndex) -> bool {
        self.obstacles.contains(&c)
    }

    /// In-bounds and not an obstacle.
    pub fn is_free(&self, c: CellIndex) -> bool {
        self.in_bounds(c) && !self.is_obstacle(c)
    }

    pub fn check_bounds(&self, c: CellIndex) -> Result<()> {
        if self.in_bounds(c) {
            Ok(())
        } else {
            Err(PatrolError::OutOfBounds { cell: c, rows: self.rows, cols: self.cols })
        }
    }

    pub fn check_free(&self, c: CellIndex) -> Result<()> {
        self.check_bounds(c)?;
        if self.is_obstacle(c) {
            return Err(PatrolError::ObstacleCell(c));
        }
        Ok(())
    }

    /// Row-major linear index.
    pub fn flat(&self, c: CellIndex) -> usize {
        c.i * self.cols + c.j
    }

    pub fn cells(&self) -> impl Iterator<Item = CellIndex> + '_ {
        (0..self.rows).flat_map(move |i| (0..self.cols).map(move |j| CellIndex::new(i, j)))
    }

    pub fn free_cells(&self) -> impl Iterator<Item = CellIndex> + '_ {
        self.cells().filter(move |c| !self.is_obstacle(*c))
    }

    /// Cell side lengths `(H / n_x, W / n_y)`.
    pub fn step_sizes<S: Scalar>(&self) -> (S, S) {
        (
            S::lit(self.height) / S::from_usize_lossy(self.rows),
            S::lit(self.width) / S::from_usize_lossy(self.cols),
        )
    }

    /// World coordinates of the center of cell `c`:
    /// `((2i+1)H / 2n_x, (2j+1)W / 2n_y)`.
    pub fn cell_center<S: Scalar>(&self, c: CellIndex) -> Result<WorldPoint<S>> {
        self.check_bounds(c)?;
        let two = S::lit(2.0);
        let x = S::from_usize_lossy(2 * c.i + 1) * S::lit(self.height) / (two * S::from_usize_lossy(self.rows));
        let y = S::from_usize_lossy(2 * c.j + 1) * S::lit(self.width) / (two * S::from_usize_lossy(self.cols));
        Ok(WorldPoint { x, y })
    }

    /// Destination of `a` from `c`, or `None` if it leaves the map.
    /// Obstacles are not checked.
    pub fn offset(&self, c: CellIndex, a: Action) -> Option<CellIndex> {
        let (di, dj) = a.delta();
        let i = c.i.checked_add_signed(di)?;
        let j = c.j.checked_add_signed(dj)?;
        let dest = CellIndex::new(i, j);
        self.in_bounds(dest).then_some(dest)
    }

    pub fn feasible_mask(&self, c: CellIndex) -> Result<ActionMask> {
        self.check_free(c)?;
        Ok(Action::ALL
            .into_iter()
            .filter(|&a| self.offset(c, a).is_some_and(|d| !self.is_obstacle(d)))
            .collect())
    }

    /// Actions whose destination stays on the map and avoids obstacles, in
    /// canonical order. Always contains [`Action::Stay`].
    pub fn feasible_actions(&self, c: CellIndex) -> Result<Vec<Action>> {
        Ok(self.feasible_mask(c)?.iter().collect())
    }

    pub fn apply_action(&self, c: CellIndex, a: Action) -> Result<CellIndex> {
        self.check_free(c)?;
        match self.offset(c, a) {
            Some(dest) if !self.is_obstacle(dest) => Ok(dest),
            _ => Err(PatrolError::InfeasibleAction { cell: c, action: a }),
        }
    }

    /// Field-of-view neighborhood in the fixed order
    /// `[center, (i-1,j), (i+1,j), (i,j-1), (i,j+1)]`; off-map slots are `None`.
    /// Obstacle cells are reported like any other cell.
    pub fn adjacency(&self, c: CellIndex) -> Result<[Option<CellIndex>; 5]> {
        self.check_bounds(c)?;
        Ok(Action::ALL.map(|a| self.offset(c, a)))
    }
}
