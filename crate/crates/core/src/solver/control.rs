use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::path::TimeGrid;

/// Piecewise-constant control `u_k ∈ R^m` on `[t_k, t_{k+1})`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Control {
    h: f64,
    dim: usize,
    values: Vec<f64>,
}

impl Control {
    /// Builds a control and rejects it when `h Σ |u_k|²` exceeds `budget`.
    pub fn new(h: f64, dim: usize, values: Vec<f64>, budget: f64) -> Result<Self> {
        let c = Self::unbounded(h, dim, values)?;
        let energy = c.energy();
        if energy > budget {
            return Err(Error::ControlBudget { energy, budget });
        }
        Ok(c)
    }

    pub fn unbounded(h: f64, dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 || !values.len().is_multiple_of(dim) || !(h > 0.0) {
            return Err(Error::Precondition(format!(
                "control needs positive h and whole rows of length {dim}"
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Precondition("control values must be finite".into()));
        }
        Ok(Self { h, dim, values })
    }

    pub fn zeros(grid: &TimeGrid, dim: usize) -> Self {
        Self {
            h: grid.h(),
            dim,
            values: vec![0.0; dim * grid.n_steps()],
        }
    }

    pub fn constant(grid: &TimeGrid, value: &[f64]) -> Self {
        Self::from_fn(grid, value.len(), |_| value.to_vec())
    }

    /// Samples `f` at the left endpoint `t_k` of every step.
    pub fn from_fn(grid: &TimeGrid, dim: usize, f: impl Fn(f64) -> Vec<f64>) -> Self {
        let mut values = Vec::with_capacity(dim * grid.n_steps());
        for k in 0..grid.n_steps() {
            let v = f(k as f64 * grid.h());
            assert_eq!(v.len(), dim);
            values.extend(v);
        }
        Self {
            h: grid.h(),
            dim,
            values,
        }
    }

    pub fn h(&self) -> f64 {
        self.h
    }
    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn n_steps(&self) -> usize {
        self.values.len() / self.dim
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn at(&self, k: usize) -> &[f64] {
        &self.values[k * self.dim..(k + 1) * self.dim]
    }

    /// `h Σ_k |u_k|²`.
    pub fn energy(&self) -> f64 {
        self.h * self.values.iter().map(|v| v * v).sum::<f64>()
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0)
    }

    pub(crate) fn check_against(&self, grid: &TimeGrid, dim: usize) -> Result<()> {
        if self.dim != dim {
            return Err(Error::Dimension {
                expected: dim,
                got: self.dim,
            });
        }
        if self.n_steps() != grid.n_steps() || (self.h - grid.h()).abs() > 1e-12 * grid.h() {
            return Err(Error::GridMismatch(format!(
                "control has {} steps of {}, grid has {} of {}",
                self.n_steps(),
                self.h,
                grid.n_steps(),
                grid.h()
            )));
        }
        Ok(())
    }

    /// Header `t,u1..um`, one row per step.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let header: Vec<String> = (1..=self.dim).map(|j| format!("u{j}")).collect();
        writeln!(w, "t,{}", header.join(","))?;
        for k in 0..self.n_steps() {
            write!(w, "{}", k as f64 * self.h)?;
            for v in self.at(k) {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    /// Reads the format of [`Control::write_csv`]; the step is inferred from
    /// the time column.
    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Precondition("empty control file".into()))?
            .map_err(|e| Error::Precondition(e.to_string()))?;
        let dim = header.split(',').count().saturating_sub(1);
        let mut times = Vec::new();
        let mut values = Vec::new();
        for (n, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::Precondition(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<f64> = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Precondition(format!("control line {}: {e}", n + 2)))?;
            if fields.len() != dim + 1 {
                return Err(Error::Precondition(format!(
                    "control line {} has {} fields, expected {}",
                    n + 2,
                    fields.len(),
                    dim + 1
                )));
            }
            times.push(fields[0]);
            values.extend_from_slice(&fields[1..]);
        }
        if times.len() < 2 {
            return Err(Error::Precondition("control needs at least two steps".into()));
        }
        let h = times[1] - times[0];
        Self::unbounded(h, dim, values)
    }
}

/// Normalization `a(ε) = ε^γ` of the moderate-deviation scaling.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum MdpScale {
    Power { gamma: f64 },
}

impl Default for MdpScale {
    fn default() -> Self {
        MdpScale::Power { gamma: 0.25 }
    }
}

impl MdpScale {
    pub fn validate(&self) -> Result<()> {
        let MdpScale::Power { gamma } = *self;
        if !(gamma > 0.0 && gamma < 0.5) {
            return Err(Error::Precondition(format!(
                "a(eps) = eps^gamma needs gamma in (0, 1/2), got {gamma}"
            )));
        }
        Ok(())
    }

    pub fn scale(&self, epsilon: f64) -> f64 {
        let MdpScale::Power { gamma } = *self;
        epsilon.powf(gamma)
    }
}
