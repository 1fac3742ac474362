//! Equal-weight empirical measures over segment space.
//!
//! The law of a segment `X_t` is replaced by the empirical measure of `P`
//! interacting particles. Wasserstein distances use the sup-norm ground cost;
//! for equal atom counts the optimal coupling is a permutation, found exactly
//! by the Hungarian method.

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::path::Segment;

/// `(1/P) Σ δ_{atom_i}`.
#[derive(Clone, Debug)]
pub struct EmpiricalMeasure<'a> {
    atoms: Vec<Segment<'a>>,
}

impl<'a> EmpiricalMeasure<'a> {
    pub fn new(atoms: Vec<Segment<'a>>) -> Result<Self> {
        let first = atoms
            .first()
            .ok_or_else(|| Error::Precondition("empirical measure needs at least one atom".into()))?;
        if atoms.iter().any(|a| !a.same_shape(first)) {
            return Err(Error::GridMismatch("atoms have different shapes".into()));
        }
        Ok(Self { atoms })
    }

    /// One-atom measure `δ_ζ`.
    pub fn dirac(atom: Segment<'a>) -> Self {
        Self { atoms: vec![atom] }
    }

    pub fn atoms(&self) -> &[Segment<'a>] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// `μ(‖·‖∞²)`.
    pub fn second_moment(&self) -> f64 {
        self.atoms.iter().map(|a| a.sup_norm().powi(2)).sum::<f64>() / self.atoms.len() as f64
    }
}

fn squared_cost_matrix(mu: &EmpiricalMeasure<'_>, nu: &EmpiricalMeasure<'_>, exec: Execution) -> Vec<f64> {
    let p = mu.len();
    exec.map(p, |i| {
        nu.atoms
            .iter()
            .map(|b| mu.atoms[i].sup_distance(b).powi(2))
            .collect::<Vec<f64>>()
    })
    .concat()
}

/// `W2(μ, ν)` for measures with the same number of atoms, by exact linear
/// assignment on the `P × P` squared sup-distance matrix.
pub fn w2_assignment(mu: &EmpiricalMeasure<'_>, nu: &EmpiricalMeasure<'_>) -> Result<f64> {
    w2_assignment_with(mu, nu, Execution::default())
}

pub fn w2_assignment_with(mu: &EmpiricalMeasure<'_>, nu: &EmpiricalMeasure<'_>, exec: Execution) -> Result<f64> {
    if mu.len() != nu.len() {
        return Err(Error::Unsupported(format!(
            "w2_assignment needs equal atom counts ({} vs {}); use w2_coupling_bound",
            mu.len(),
            nu.len()
        )));
    }
    if !mu.atoms[0].same_shape(&nu.atoms[0]) {
        return Err(Error::GridMismatch("measures live on different segment grids".into()));
    }
    let p = mu.len();
    let cost = squared_cost_matrix(mu, nu, exec);
    let (total, _) = min_cost_assignment(p, &cost);
    Ok((total.max(0.0) / p as f64).sqrt())
}

/// Upper bound from the label coupling `atom_i ↔ atom_i`.
pub fn w2_coupling_bound(mu: &EmpiricalMeasure<'_>, nu: &EmpiricalMeasure<'_>) -> Result<f64> {
    if mu.len() != nu.len() {
        return Err(Error::Precondition("labelled coupling needs equal atom counts".into()));
    }
    let s: f64 = mu
        .atoms
        .iter()
        .zip(&nu.atoms)
        .map(|(a, b)| a.sup_distance(b).powi(2))
        .sum();
    Ok((s / mu.len() as f64).sqrt())
}

/// Minimum-cost perfect matching on a dense `n × n` row-major cost matrix
/// (shortest augmenting paths with potentials, O(n³)). Returns the optimal
/// cost and `assignment[row] = column`.
pub fn min_cost_assignment(n: usize, cost: &[f64]) -> (f64, Vec<usize>) {
    assert_eq!(cost.len(), n * n);
    if n == 0 {
        return (0.0, vec![]);
    }
    // 1-based arrays; column 0 is the virtual source
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut matched_row = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        matched_row[0] = row;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = matched_row[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[matched_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if matched_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            matched_row[j0] = matched_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        assignment[matched_row[j] - 1] = j - 1;
    }
    let total = (0..n).map(|i| cost[i * n + assignment[i]]).sum();
    (total, assignment)
}
