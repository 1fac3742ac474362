//! Grid trajectories on `[-r0, T]` and their segment views.
//!
//! A trajectory is stored node-wise and read as piecewise linear in time, so
//! the supremum over any cell is attained at a node and every sup norm below
//! is a grid maximum.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::monotone::MonotoneOperator;

/// Uniform grid `t_k = k h`, `k = -n_history ..= n_steps`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    h: f64,
    n_history: usize,
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(h: f64, n_history: usize, n_steps: usize) -> Result<Self> {
        if !(h > 0.0) || !h.is_finite() {
            return Err(Error::InvalidGrid(format!("step size must be positive, got {h}")));
        }
        if n_history == 0 {
            return Err(Error::InvalidGrid("delay r0 must be positive".into()));
        }
        Ok(Self { h, n_history, n_steps })
    }

    /// Builds the grid from `(h, r0, T)`; both lengths must be integer
    /// multiples of `h`.
    pub fn from_lengths(h: f64, r0: f64, horizon: f64) -> Result<Self> {
        let n_history = whole_steps(r0, h, "r0")?;
        let n_steps = whole_steps(horizon, h, "T")?;
        Self::new(h, n_history, n_steps)
    }

    pub fn h(&self) -> f64 {
        self.h
    }
    pub fn n_history(&self) -> usize {
        self.n_history
    }
    pub fn n_steps(&self) -> usize {
        self.n_steps
    }
    pub fn n_nodes(&self) -> usize {
        self.n_history + self.n_steps + 1
    }
    pub fn r0(&self) -> f64 {
        self.n_history as f64 * self.h
    }
    pub fn horizon(&self) -> f64 {
        self.n_steps as f64 * self.h
    }

    /// Time of storage node `i` (node 0 is `-r0`).
    pub fn time(&self, node: usize) -> f64 {
        (node as f64 - self.n_history as f64) * self.h
    }

    /// Storage index of grid time `t_k`, `k >= 0`.
    pub fn node_of_step(&self, k: usize) -> usize {
        self.n_history + k
    }

    /// Same grid with step halved (twice as many nodes on each side).
    pub fn refined(&self) -> Self {
        Self {
            h: self.h / 2.0,
            n_history: 2 * self.n_history,
            n_steps: 2 * self.n_steps,
        }
    }

    /// Nodes per segment (`n_history + 1`).
    pub fn segment_len(&self) -> usize {
        self.n_history + 1
    }
}

fn whole_steps(length: f64, h: f64, what: &str) -> Result<usize> {
    if !(length >= 0.0) || !(h > 0.0) {
        return Err(Error::InvalidGrid(format!("{what}={length} with h={h}")));
    }
    let n = (length / h).round();
    if (n * h - length).abs() > 1e-9 * length.max(1.0) {
        return Err(Error::InvalidGrid(format!(
            "{what}={length} is not an integer multiple of h={h}"
        )));
    }
    Ok(n as usize)
}

/// Read-only view of a path slice over `[t - r0, t]`, reindexed to `[-r0, 0]`.
#[derive(Clone, Copy, Debug)]
pub struct Segment<'a> {
    dim: usize,
    h: f64,
    data: &'a [f64],
}

impl<'a> Segment<'a> {
    /// Wraps node-major data (`len = (n_history + 1) * dim`).
    pub fn new(dim: usize, h: f64, data: &'a [f64]) -> Self {
        debug_assert!(dim > 0 && data.len().is_multiple_of(dim) && data.len() >= dim);
        Self { dim, h, data }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn h(&self) -> f64 {
        self.h
    }
    pub fn data(&self) -> &'a [f64] {
        self.data
    }
    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
    pub fn r0(&self) -> f64 {
        (self.len() - 1) as f64 * self.h
    }

    /// Node `j`, located at `θ = -r0 + j h`.
    pub fn node(&self, j: usize) -> &'a [f64] {
        &self.data[j * self.dim..(j + 1) * self.dim]
    }

    /// `ζ(0)`.
    pub fn head(&self) -> &'a [f64] {
        self.node(self.len() - 1)
    }

    /// `ζ(-r0)`.
    pub fn tail(&self) -> &'a [f64] {
        self.node(0)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &'a [f64]> + 'a {
        self.data.chunks_exact(self.dim)
    }

    /// `‖ζ‖∞`: largest Euclidean norm over the nodes.
    pub fn sup_norm(&self) -> f64 {
        self.nodes()
            .map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    /// `‖ζ - η‖∞` for segments on the same grid.
    pub fn sup_distance(&self, other: &Segment<'_>) -> f64 {
        debug_assert_eq!(self.data.len(), other.data.len());
        self.nodes()
            .zip(other.nodes())
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    pub fn to_buf(&self) -> SegmentBuf {
        SegmentBuf {
            dim: self.dim,
            h: self.h,
            data: self.data.to_vec(),
        }
    }

    pub fn same_shape(&self, other: &Segment<'_>) -> bool {
        self.dim == other.dim && self.data.len() == other.data.len() && self.h == other.h
    }
}

/// Owned segment data.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentBuf {
    dim: usize,
    h: f64,
    data: Vec<f64>,
}

impl SegmentBuf {
    pub fn new(dim: usize, h: f64, data: Vec<f64>) -> Self {
        assert!(dim > 0 && data.len().is_multiple_of(dim) && !data.is_empty());
        Self { dim, h, data }
    }

    pub fn zeros(dim: usize, grid: &TimeGrid) -> Self {
        Self::new(dim, grid.h(), vec![0.0; dim * grid.segment_len()])
    }

    pub fn constant(value: &[f64], grid: &TimeGrid) -> Self {
        let data = value
            .iter()
            .copied()
            .cycle()
            .take(value.len() * grid.segment_len())
            .collect();
        Self::new(value.len(), grid.h(), data)
    }

    /// Samples `f(θ)` at the grid nodes of `[-r0, 0]`.
    pub fn from_fn(dim: usize, grid: &TimeGrid, f: impl Fn(f64) -> Vec<f64>) -> Self {
        let mut data = Vec::with_capacity(dim * grid.segment_len());
        for j in 0..grid.segment_len() {
            let v = f(grid.time(j));
            assert_eq!(v.len(), dim);
            data.extend(v);
        }
        Self::new(dim, grid.h(), data)
    }

    pub fn view(&self) -> Segment<'_> {
        Segment::new(self.dim, self.h, &self.data)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `self + a * v`, node-wise.
    pub fn add_scaled(&self, a: f64, v: &Segment<'_>) -> SegmentBuf {
        let data = self.data.iter().zip(v.data()).map(|(x, y)| x + a * y).collect();
        Self::new(self.dim, self.h, data)
    }

    /// Projects every node onto the closed domain of `op`. Returns the largest
    /// distance any node moved.
    pub fn project_onto(&mut self, op: &dyn MonotoneOperator) -> Result<f64> {
        if op.dim() != self.dim {
            return Err(Error::Dimension {
                expected: op.dim(),
                got: self.dim,
            });
        }
        let mut moved: f64 = 0.0;
        let mut out = vec![0.0; self.dim];
        for node in self.data.chunks_exact_mut(self.dim) {
            op.domain_project(node, &mut out);
            let dist = node
                .iter()
                .zip(&out)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            moved = moved.max(dist);
            node.copy_from_slice(&out);
        }
        Ok(moved)
    }
}

/// A path on the whole grid `[-r0, T]`, node-major storage.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Trajectory {
    grid: TimeGrid,
    dim: usize,
    values: Vec<f64>,
}

impl Trajectory {
    pub fn new(grid: TimeGrid, dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 || values.len() != grid.n_nodes() * dim {
            return Err(Error::GridMismatch(format!(
                "expected {} nodes of dimension {dim}, got {} values",
                grid.n_nodes(),
                values.len()
            )));
        }
        Ok(Self { grid, dim, values })
    }

    /// Samples `f(t)` at every grid node.
    pub fn from_fn(grid: TimeGrid, dim: usize, f: impl Fn(f64) -> Vec<f64>) -> Self {
        let mut values = Vec::with_capacity(dim * grid.n_nodes());
        for i in 0..grid.n_nodes() {
            let v = f(grid.time(i));
            assert_eq!(v.len(), dim);
            values.extend(v);
        }
        Self { grid, dim, values }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }
    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Storage node `i` (node 0 is time `-r0`).
    pub fn node(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    /// Value at `t_k = k h`, `k >= 0`.
    pub fn at_step(&self, k: usize) -> &[f64] {
        self.node(self.grid.node_of_step(k))
    }

    /// Value at the final time `T`.
    pub fn terminal(&self) -> &[f64] {
        self.at_step(self.grid.n_steps())
    }

    /// `X_{t_k}`: node `j` of the segment is trajectory node `k + j`
    /// (storage indexing, i.e. time `t_k - r0 + j h`).
    pub fn segment_at(&self, k: usize) -> Result<Segment<'_>> {
        if k > self.grid.n_steps() {
            return Err(Error::Index {
                index: k,
                max: self.grid.n_steps(),
            });
        }
        let len = self.grid.segment_len() * self.dim;
        let start = k * self.dim;
        Ok(Segment::new(self.dim, self.grid.h(), &self.values[start..start + len]))
    }

    /// `sup_t |x(t) - y(t)|` over all nodes of `[-r0, T]`.
    pub fn sup_distance(&self, other: &Trajectory) -> Result<f64> {
        if self.grid != other.grid || self.dim != other.dim {
            return Err(Error::GridMismatch("trajectories live on different grids".into()));
        }
        Ok(
            Segment::new(self.dim, self.grid.h(), &self.values).sup_distance(&Segment::new(
                other.dim,
                other.grid.h(),
                &other.values,
            )),
        )
    }

    /// `sup_t |x(t)|` over all nodes.
    pub fn sup_norm(&self) -> f64 {
        Segment::new(self.dim, self.grid.h(), &self.values).sup_norm()
    }

    /// Node-wise `self - other`.
    pub fn difference(&self, other: &Trajectory) -> Result<Trajectory> {
        if self.grid != other.grid || self.dim != other.dim {
            return Err(Error::GridMismatch("trajectories live on different grids".into()));
        }
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect();
        Ok(Trajectory {
            grid: self.grid,
            dim: self.dim,
            values,
        })
    }

    /// Writes `t,x1..xd` rows in ascending time.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        write!(w, "t")?;
        for i in 1..=self.dim {
            write!(w, ",x{i}")?;
        }
        writeln!(w)?;
        for i in 0..self.grid.n_nodes() {
            write!(w, "{}", self.grid.time(i))?;
            for v in self.node(i) {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    /// Parses the CSV layout produced by [`Trajectory::write_csv`]. The grid
    /// is recovered from the time column, which must be uniform and contain
    /// `t = 0`.
    pub fn read_csv<R: BufRead>(r: R) -> Result<Trajectory> {
        let bad = |msg: String| Error::GridMismatch(format!("trajectory csv: {msg}"));
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| bad("empty file".into()))?
            .map_err(|e| bad(e.to_string()))?;
        let cols: Vec<&str> = header.trim().split(',').collect();
        if cols.first() != Some(&"t") || cols.len() < 2 {
            return Err(bad(format!("bad header '{header}'")));
        }
        let dim = cols.len() - 1;
        let mut times = Vec::new();
        let mut values = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let line = line.map_err(|e| bad(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<f64> = line
                .trim()
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| bad(format!("line {}: {e}", lineno + 2)))?;
            if fields.len() != dim + 1 {
                return Err(bad(format!("line {}: expected {} fields", lineno + 2, dim + 1)));
            }
            times.push(fields[0]);
            values.extend_from_slice(&fields[1..]);
        }
        if times.len() < 2 {
            return Err(bad("need at least two rows".into()));
        }
        let h = times[1] - times[0];
        let n_history = times
            .iter()
            .position(|t| t.abs() <= 1e-9 * h.abs().max(1e-300))
            .ok_or_else(|| bad("no row at t = 0".into()))?;
        let grid = TimeGrid::new(h, n_history, times.len() - 1 - n_history)?;
        for (i, t) in times.iter().enumerate() {
            if (t - grid.time(i)).abs() > 1e-9 * (1.0 + t.abs()) {
                return Err(bad(format!("non-uniform time column at row {}", i + 2)));
            }
        }
        Trajectory::new(grid, dim, values)
    }
}
