//! Per-step metrics, episode summaries, trajectories and cross-run comparison.

use serde::{Deserialize, Serialize};

use crate::error::{PatrolError, Result};
use crate::gridmap::{CellIndex, GridSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub score: f64,
    pub cumulative: f64,
    pub coverage: f64,
    pub visited_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub policy: String,
    pub mean_score: f64,
    pub mean_coverage: f64,
    /// Share of steps on which this run had the strictly largest coverage
    /// among compared runs. `None` outside a comparison.
    pub max_coverage_pct: Option<f64>,
    pub covered_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsRecord {
    pub steps: Vec<StepMetrics>,
}

impl MetricsRecord {
    pub fn push(&mut self, step: usize, score: f64, coverage: f64, visited_pct: f64) {
        let cumulative = self.steps.last().map_or(0.0, |m| m.cumulative) + score;
        self.steps.push(StepMetrics { step, score, cumulative, coverage, visited_pct });
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn coverages(&self) -> Vec<f64> {
        self.steps.iter().map(|m| m.coverage).collect()
    }

    pub fn summary(&self, policy: &str) -> Summary {
        let n = self.steps.len().max(1) as f64;
        Summary {
            policy: policy.to_string(),
            mean_score: self.steps.iter().map(|m| m.score).sum::<f64>() / n,
            mean_coverage: self.steps.iter().map(|m| m.coverage).sum::<f64>() / n,
            max_coverage_pct: None,
            covered_pct: self.steps.last().map_or(0.0, |m| m.visited_pct),
        }
    }
}

/// Tracks which free cells have been occupied at least once.
#[derive(Debug, Clone, PartialEq)]
pub struct VisitTracker {
    seen: Vec<bool>,
    count: usize,
    free: usize,
}

impl VisitTracker {
    pub fn new(grid: &GridSpec) -> Self {
        Self { seen: vec![false; grid.num_cells()], count: 0, free: grid.num_free() }
    }

    pub fn visit(&mut self, grid: &GridSpec, cells: &[CellIndex]) {
        for &c in cells {
            let idx = grid.flat(c);
            if !self.seen[idx] {
                self.seen[idx] = true;
                self.count += 1;
            }
        }
    }

    pub fn percent(&self) -> f64 {
        100.0 * self.count as f64 / self.free.max(1) as f64
    }
}

/// A row-major `values` snapshot of the grid taken after step `step`.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub step: usize,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrajectoryLog {
    pub start: Vec<CellIndex>,
    /// Positions after each step.
    pub positions: Vec<Vec<CellIndex>>,
    pub frames: Vec<Frame>,
}

impl TrajectoryLog {
    pub fn new(start: Vec<CellIndex>) -> Self {
        Self { start, positions: Vec::new(), frames: Vec::new() }
    }

    /// Checks that consecutive positions differ by one feasible action.
    pub fn check_feasible(&self, grid: &GridSpec) -> Result<()> {
        let mut prev = &self.start;
        for (k, now) in self.positions.iter().enumerate() {
            if now.len() != prev.len() {
                return Err(PatrolError::ShapeMismatch { expected: format!("{} drones", prev.len()), found: format!("{} at step {k}", now.len()) });
            }
            for (d, (&a, &b)) in prev.iter().zip(now).enumerate() {
                let ok = grid.feasible_actions(a)?.into_iter().any(|u| grid.offset(a, u) == Some(b));
                if !ok {
                    return Err(PatrolError::InvalidParameter {
                        name: "trajectory",
                        reason: format!("drone {d} jumps from ({}, {}) to ({}, {}) at step {k}", a.i, a.j, b.i, b.j),
                    });
                }
            }
            prev = now;
        }
        Ok(())
    }
}

/// For every run, the percentage of steps on which its coverage is strictly
/// greater than every other run's. Ties award no one.
pub fn strict_max_share(coverages: &[Vec<f64>]) -> Result<Vec<f64>> {
    let Some(len) = coverages.first().map(Vec::len) else {
        return Ok(Vec::new());
    };
    if let Some(bad) = coverages.iter().find(|c| c.len() != len) {
        return Err(PatrolError::ShapeMismatch { expected: format!("{len} steps"), found: format!("{} steps", bad.len()) });
    }
    let mut wins = vec![0usize; coverages.len()];
    for k in 0..len {
        let mut best: Option<usize> = None;
        let mut tied = false;
        for (r, run) in coverages.iter().enumerate() {
            match best {
                None => best = Some(r),
                Some(b) if run[k] > coverages[b][k] => {
                    best = Some(r);
                    tied = false;
                }
                Some(b) if run[k] == coverages[b][k] => tied = true,
                _ => {}
            }
        }
        if let (Some(b), false) = (best, tied) {
            if coverages.len() > 1 {
                wins[b] += 1;
            }
        }
    }
    Ok(wins.iter().map(|&w| 100.0 * w as f64 / len.max(1) as f64).collect())
}
