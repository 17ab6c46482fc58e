//! Uniform time grids and `H`-valued trajectories sampled on them.

use std::io::{BufRead, Write};

use nalgebra::DVector;

use crate::error::{Error, Result};

/// Uniform grid `t_j = j·h`, `j = 0..=steps`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeGrid {
    h: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(h: f64, steps: usize) -> Result<Self> {
        if !(h > 0.0) || !h.is_finite() {
            return Err(Error::Config(format!("time step h = {h} must be positive")));
        }
        Ok(Self { h, steps })
    }

    /// Grid with step `h` covering `[0, horizon]`; the horizon must be a multiple of `h`.
    pub fn covering(h: f64, horizon: f64) -> Result<Self> {
        if !(horizon >= 0.0) || !horizon.is_finite() {
            return Err(Error::Config(format!("horizon T = {horizon} must be nonnegative")));
        }
        let steps = (horizon / h).round();
        if (steps * h - horizon).abs() > 1e-9 * horizon.max(h) {
            return Err(Error::Config(format!(
                "horizon {horizon} is not a multiple of the step {h}"
            )));
        }
        Self::new(h, steps as usize)
    }

    /// Validates explicit grid points: they must start at 0 and be equispaced.
    pub fn from_points(points: &[f64]) -> Result<Self> {
        if points.len() < 2 || points[0] != 0.0 {
            return Err(Error::Config("time grid must start at 0 and have at least two points".into()));
        }
        let h = points[1] - points[0];
        for (j, &t) in points.iter().enumerate() {
            if (t - j as f64 * h).abs() > 1e-9 * h.max(t.abs()) {
                return Err(Error::Config(format!("time grid is not uniform at index {j}")));
            }
        }
        Self::new(h, points.len() - 1)
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn horizon(&self) -> f64 {
        self.steps as f64 * self.h
    }

    pub fn t(&self, j: usize) -> f64 {
        j as f64 * self.h
    }

    /// Grid index of `t` when `t` is a node (to relative tolerance 1e-9).
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let pos = t / self.h;
        let j = pos.round();
        if j >= 0.0 && (pos - j).abs() <= 1e-9 * pos.abs().max(1.0) && j as usize <= self.steps {
            Some(j as usize)
        } else {
            None
        }
    }

    /// Same grid with the step multiplied by `factor`.
    pub fn coarsened(&self, factor: usize) -> Result<Self> {
        if factor == 0 || !self.steps.is_multiple_of(factor) {
            return Err(Error::Config(format!(
                "cannot coarsen {} steps by a factor {factor}",
                self.steps
            )));
        }
        Self::new(self.h * factor as f64, self.steps / factor)
    }

    /// True when both grids have the same step (to 1e-12 relative) and length.
    pub fn matches(&self, other: &TimeGrid) -> bool {
        self.steps == other.steps && (self.h - other.h).abs() <= 1e-12 * self.h
    }
}

/// An `H`-valued path sampled on a [`TimeGrid`], stored node-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    grid: TimeGrid,
    dim: usize,
    values: Vec<f64>,
}

impl Trajectory {
    pub fn zeros(grid: TimeGrid, dim: usize) -> Self {
        Self {
            grid,
            dim,
            values: vec![0.0; (grid.steps() + 1) * dim],
        }
    }

    pub fn from_values(grid: TimeGrid, dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 || values.len() != (grid.steps() + 1) * dim {
            return Err(Error::Shape(format!(
                "trajectory needs {} values, got {}",
                (grid.steps() + 1) * dim,
                values.len()
            )));
        }
        Ok(Self { grid, dim, values })
    }

    pub fn from_fn(grid: TimeGrid, dim: usize, f: impl Fn(f64) -> DVector<f64>) -> Result<Self> {
        let mut values = Vec::with_capacity((grid.steps() + 1) * dim);
        for j in 0..=grid.steps() {
            let v = f(grid.t(j));
            if v.len() != dim {
                return Err(Error::Shape(format!("path function returned length {}, expected {dim}", v.len())));
            }
            values.extend(v.iter());
        }
        Self::from_values(grid, dim, values)
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn node(&self, j: usize) -> &[f64] {
        &self.values[j * self.dim..(j + 1) * self.dim]
    }

    pub fn node_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.values[j * self.dim..(j + 1) * self.dim]
    }

    pub fn node_vector(&self, j: usize) -> DVector<f64> {
        DVector::from_column_slice(self.node(j))
    }

    pub fn last(&self) -> &[f64] {
        self.node(self.grid.steps())
    }

    /// `max_j ‖y(t_j)‖`.
    pub fn sup_norm(&self) -> f64 {
        self.values
            .chunks(self.dim)
            .map(crate::delay::euclid)
            .fold(0.0, f64::max)
    }

    /// `max_j ‖self(t_j) − other(t_j)‖`.
    pub fn sup_distance(&self, other: &Trajectory) -> Result<f64> {
        if !self.grid.matches(&other.grid) || self.dim != other.dim {
            return Err(Error::Shape("trajectories live on different grids".into()));
        }
        Ok(self
            .values
            .chunks(self.dim)
            .zip(other.values.chunks(self.dim))
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt())
            .fold(0.0, f64::max))
    }

    /// Keeps every `factor`-th node.
    pub fn subsample(&self, factor: usize) -> Result<Trajectory> {
        let grid = self.grid.coarsened(factor)?;
        let mut values = Vec::with_capacity((grid.steps() + 1) * self.dim);
        for j in 0..=grid.steps() {
            values.extend_from_slice(self.node(j * factor));
        }
        Trajectory::from_values(grid, self.dim, values)
    }

    pub fn map_nodes(&self, f: impl Fn(&[f64]) -> Vec<f64>) -> Result<Trajectory> {
        let mut values = Vec::with_capacity(self.values.len());
        for j in 0..=self.grid.steps() {
            let v = f(self.node(j));
            if v.len() != self.dim {
                return Err(Error::Shape("node map changed the dimension".into()));
            }
            values.extend(v);
        }
        Trajectory::from_values(self.grid, self.dim, values)
    }
}

/// Renders a float with 17 significant digits; parsing the result recovers the bits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes paths as CSV with header `path,t,mode,value`.
pub fn write_paths_csv<'a, W: Write>(
    mut w: W,
    paths: impl IntoIterator<Item = (usize, &'a Trajectory)>,
) -> Result<()> {
    writeln!(w, "path,t,mode,value")?;
    for (p, traj) in paths {
        for j in 0..=traj.grid().steps() {
            let t = fmt_f64(traj.grid().t(j));
            for (k, v) in traj.node(j).iter().enumerate() {
                writeln!(w, "{p},{t},{k},{}", fmt_f64(*v))?;
            }
        }
    }
    Ok(())
}

/// Reads CSV written by [`write_paths_csv`]; paths are returned in file order.
pub fn read_paths_csv<R: BufRead>(r: R) -> Result<Vec<(usize, Trajectory)>> {
    let mut lines = r.lines();
    let header = lines.next().transpose()?.unwrap_or_default();
    if header.trim() != "path,t,mode,value" {
        return Err(Error::Parse(format!("unexpected path CSV header {header:?}")));
    }
    // (path, [(t, mode, value)])
    let mut rows: Vec<(usize, Vec<(f64, usize, f64)>)> = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = || Error::Parse(format!("malformed path CSV row {}: {line:?}", lineno + 2));
        let mut it = line.split(',');
        let p: usize = it.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        let t: f64 = it.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        let k: usize = it.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        let v: f64 = it.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        if it.next().is_some() {
            return Err(bad());
        }
        match rows.last_mut() {
            Some((q, entries)) if *q == p => entries.push((t, k, v)),
            _ => rows.push((p, vec![(t, k, v)])),
        }
    }
    rows.into_iter()
        .map(|(p, entries)| {
            let dim = entries.iter().map(|e| e.1).max().unwrap_or(0) + 1;
            if entries.len() % dim != 0 {
                return Err(Error::Parse(format!("path {p} has a ragged mode layout")));
            }
            let times: Vec<f64> = entries.iter().step_by(dim).map(|e| e.0).collect();
            let grid = TimeGrid::from_points(&times)?;
            let values = entries.iter().map(|e| e.2).collect();
            Ok((p, Trajectory::from_values(grid, dim, values)?))
        })
        .collect()
}
