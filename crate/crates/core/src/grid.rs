//! Uniform time grids and matrices of simulated path values.

use std::io::Write;
use std::sync::Arc;

use crate::error::{Error, Result};

/// A uniform grid `t_0 = 0 < t_1 < ... < t_N = T_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    t_max: f64,
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(t_max: f64, n_steps: usize) -> Result<Self> {
        if !(t_max > 0.0) || !t_max.is_finite() {
            return Err(Error::domain("TimeGrid::new", format!("T_max must be positive, got {t_max}")));
        }
        if n_steps < 1 {
            return Err(Error::domain("TimeGrid::new", "need at least one step"));
        }
        Ok(TimeGrid { t_max, n_steps })
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    /// Number of steps N; the grid has N+1 nodes.
    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn n_nodes(&self) -> usize {
        self.n_steps + 1
    }

    pub fn dt(&self) -> f64 {
        self.t_max / self.n_steps as f64
    }

    /// Node time `t_i`.
    pub fn t(&self, i: usize) -> f64 {
        debug_assert!(i <= self.n_steps);
        if i == self.n_steps {
            self.t_max
        } else {
            i as f64 * self.dt()
        }
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_nodes()).map(move |i| self.t(i))
    }

    /// Index of the grid node closest to `t`.
    pub fn node_at(&self, t: f64) -> usize {
        ((t / self.dt()).round() as usize).min(self.n_steps)
    }
}

/// A matrix of simulated process values, `n_paths x (N+1)`, row-major.
#[derive(Debug, Clone)]
pub struct PathBundle {
    values: Vec<f64>,
    n_paths: usize,
    grid: Arc<TimeGrid>,
    label: String,
}

impl PathBundle {
    /// All paths start at `initial`.
    pub fn constant(grid: Arc<TimeGrid>, n_paths: usize, value: f64, label: &str) -> Self {
        let n_nodes = grid.n_nodes();
        PathBundle { values: vec![value; n_paths * n_nodes], n_paths, grid, label: label.into() }
    }

    pub fn from_values(
        grid: Arc<TimeGrid>,
        n_paths: usize,
        values: Vec<f64>,
        label: &str,
    ) -> Result<Self> {
        if values.len() != n_paths * grid.n_nodes() {
            return Err(Error::structural(
                "PathBundle::from_values",
                format!("expected {} values, got {}", n_paths * grid.n_nodes(), values.len()),
            ));
        }
        Ok(PathBundle { values, n_paths, grid, label: label.into() })
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn grid(&self) -> &Arc<TimeGrid> {
        &self.grid
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn set_label(&mut self, label: &str) {
        self.label = label.into();
    }

    pub fn path(&self, j: usize) -> &[f64] {
        let n = self.grid.n_nodes();
        &self.values[j * n..(j + 1) * n]
    }

    pub fn path_mut(&mut self, j: usize) -> &mut [f64] {
        let n = self.grid.n_nodes();
        &mut self.values[j * n..(j + 1) * n]
    }

    pub fn paths(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.grid.n_nodes())
    }

    pub fn paths_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        let n = self.grid.n_nodes();
        self.values.chunks_exact_mut(n)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Values of all paths at node `i`.
    pub fn at_node(&self, i: usize) -> impl Iterator<Item = f64> + '_ {
        let n = self.grid.n_nodes();
        self.values[i..].iter().step_by(n).copied()
    }

    /// Checks that `other` shares this bundle's grid and path count.
    pub fn check_compatible(&self, other: &PathBundle, op: &'static str) -> Result<()> {
        if self.n_paths != other.n_paths || *self.grid != *other.grid {
            return Err(Error::structural(
                op,
                format!(
                    "bundle shapes differ: {} is {}x{}, {} is {}x{}",
                    self.label,
                    self.n_paths,
                    self.grid.n_nodes(),
                    other.label,
                    other.n_paths,
                    other.grid.n_nodes()
                ),
            ));
        }
        Ok(())
    }

    /// Elementwise map into a new bundle.
    pub fn map(&self, label: &str, f: impl Fn(f64) -> f64) -> PathBundle {
        PathBundle {
            values: self.values.iter().map(|&v| f(v)).collect(),
            n_paths: self.n_paths,
            grid: self.grid.clone(),
            label: label.into(),
        }
    }

    /// Elementwise combination with a compatible bundle.
    pub fn zip_map(
        &self,
        other: &PathBundle,
        label: &str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<PathBundle> {
        self.check_compatible(other, "zip_map")?;
        Ok(PathBundle {
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
            n_paths: self.n_paths,
            grid: self.grid.clone(),
            label: label.into(),
        })
    }

    /// CSV export: header `path,t_0,...,t_N`, one row per path, keeping
    /// every `stride`-th node (the final node is always kept).
    pub fn write_csv<W: Write>(&self, out: W, stride: usize) -> Result<()> {
        let stride = stride.max(1);
        let mut w = csv::Writer::from_writer(out);
        let n = self.grid.n_nodes();
        let kept: Vec<usize> =
            (0..n).filter(|&i| i % stride == 0 || i == n - 1).collect();
        let mut header = vec!["path".to_string()];
        header.extend(kept.iter().map(|&i| format!("t{:.6}", self.grid.t(i))));
        w.write_record(&header)?;
        for (j, row) in self.paths().enumerate() {
            let mut rec = vec![j.to_string()];
            rec.extend(kept.iter().map(|&i| format!("{:.17e}", row[i])));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}
