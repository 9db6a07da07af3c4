//! CSV artifacts: per-step metrics, summaries, trajectories and frames.

use std::path::{Path, PathBuf};

use serde::Serialize;

use super::metrics::{MetricsRecord, Summary, TrajectoryLog};
use crate::error::{PatrolError, Result};
use crate::gridmap::GridSpec;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PatrolError + '_ {
    move |source| PatrolError::Io { path: path.to_path_buf(), source }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> PatrolError + '_ {
    move |source| PatrolError::Csv { path: path.to_path_buf(), source }
}

/// Creates `dir`, refusing to clobber earlier results unless `force` is set.
pub fn prepare_dir(dir: &Path, force: bool) -> Result<()> {
    let marker = ["metrics.csv", "summary.csv", "compare.csv", "q.ckpt"].iter().map(|f| dir.join(f)).find(|p| p.exists());
    if let (Some(existing), false) = (marker, force) {
        return Err(PatrolError::Config(format!("{} already exists; pass --force to overwrite", existing.display())));
    }
    std::fs::create_dir_all(dir).map_err(io_err(dir))
}

pub fn write_rows<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    for row in rows {
        w.serialize(row).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

#[derive(Serialize)]
struct TrajectoryRow {
    step: usize,
    drone: usize,
    i: usize,
    j: usize,
}

pub fn write_metrics(path: &Path, metrics: &MetricsRecord) -> Result<()> {
    write_rows(path, &metrics.steps)
}

pub fn write_summaries(path: &Path, rows: &[Summary]) -> Result<()> {
    write_rows(path, rows)
}

pub fn write_trajectory(path: &Path, log: &TrajectoryLog) -> Result<()> {
    let rows = log.positions.iter().enumerate().flat_map(|(k, ps)| {
        ps.iter().enumerate().map(move |(d, c)| TrajectoryRow { step: k, drone: d, i: c.i, j: c.j })
    });
    write_rows(path, rows)
}

/// One matrix per frame: a header row of column indices, then one line per grid row.
pub fn write_frames(dir: &Path, grid: &GridSpec, log: &TrajectoryLog) -> Result<Vec<PathBuf>> {
    if log.frames.is_empty() {
        return Ok(Vec::new());
    }
    let frames_dir = dir.join("frames");
    std::fs::create_dir_all(&frames_dir).map_err(io_err(&frames_dir))?;
    let mut written = Vec::with_capacity(log.frames.len());
    for frame in &log.frames {
        let path = frames_dir.join(format!("{:04}.csv", frame.step));
        let mut w = csv::Writer::from_path(&path).map_err(csv_err(&path))?;
        w.write_record((0..grid.cols()).map(|j| format!("c{j}"))).map_err(csv_err(&path))?;
        for row in frame.values.chunks(grid.cols()) {
            w.write_record(row.iter().map(f64::to_string)).map_err(csv_err(&path))?;
        }
        w.flush().map_err(io_err(&path))?;
        written.push(path);
    }
    Ok(written)
}

/// Writes the full artifact set of one episode into `dir`.
pub fn export(dir: &Path, grid: &GridSpec, metrics: &MetricsRecord, summary: &Summary, log: &TrajectoryLog, force: bool) -> Result<()> {
    prepare_dir(dir, force)?;
    write_metrics(&dir.join("metrics.csv"), metrics)?;
    write_summaries(&dir.join("summary.csv"), std::slice::from_ref(summary))?;
    write_trajectory(&dir.join("trajectory.csv"), log)?;
    write_frames(dir, grid, log)?;
    Ok(())
}
