use std::path::PathBuf;

use thiserror::Error;

use crate::gridmap::{Action, CellIndex};

#[derive(Debug, Error)]
pub enum PatrolError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("cell ({}, {}) is outside the {rows}x{cols} grid", .cell.i, .cell.j)]
    OutOfBounds { cell: CellIndex, rows: usize, cols: usize },

    #[error("cell ({}, {}) is an obstacle", .0.i, .0.j)]
    ObstacleCell(CellIndex),

    #[error("action {action:?} is infeasible at cell ({}, {})", .cell.i, .cell.j)]
    InfeasibleAction { cell: CellIndex, action: Action },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("need at least {needed} free cells, grid has {available}")]
    GridTooSmall { needed: usize, available: usize },

    #[error("center of mass needs at least two drones")]
    SingleDrone,

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: String, found: String },

    #[error("batch is empty")]
    EmptyBatch,

    #[error("not enough transitions: requested {requested}, available {available}")]
    InsufficientData { requested: usize, available: usize },

    #[error("no feasible action available")]
    NoFeasibleAction,

    #[error("no distinct-destination joint action exists for drones {drones:?}")]
    NoDistinctAssignment { drones: Vec<usize> },

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("inconsistent idleness maps: {0}")]
    InconsistentMaps(String),

    #[error("runs cannot be compared: {0}")]
    IncomparableRuns(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error at {}: {source}", .path.display())]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

pub type Result<T, E = PatrolError> = std::result::Result<T, E>;
