//! Maximal monotone operators exposed through their resolvents.
//!
//! The inclusion `dX ∈ -A(X) dt + ...` is discretized by a backward-Euler
//! split step: the explicit part produces a pre-point `y`, and the new state is
//! `J_λ(y) = (I + λA)^{-1}(y)`. The residual `y - J_λ(y)` is the increment of
//! the bounded-variation process `K`, and `(J_λ(y), (y - J_λ(y))/λ)` lies in
//! the graph of `A`.

use std::fmt;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute and relative tolerance for graph and monotonicity assertions.
pub const GRAPH_TOL: f64 = 1e-10;

/// A maximal monotone operator on `R^d`, accessed through its resolvent.
pub trait MonotoneOperator: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;

    /// Writes `(I + λA)^{-1}(x)` into `out`.
    fn resolvent(&self, lambda: f64, x: &[f64], out: &mut [f64]) -> Result<()>;

    /// Writes the nearest point of the closed domain to `x` into `out`.
    fn domain_project(&self, x: &[f64], out: &mut [f64]);

    /// Draws a pair `(x, y)` with `y ∈ A(x)`. `None` if the operator cannot
    /// sample its graph.
    fn graph_sample(&self, _rng: &mut dyn RngCore) -> Option<(Vec<f64>, Vec<f64>)> {
        None
    }

    /// A point in the interior of the domain, when one is known.
    fn interior_point(&self) -> Option<Vec<f64>> {
        None
    }

    /// Tests `y ∈ A(x)` through the operator's defining inequality. `None`
    /// if no membership test is available.
    fn contains_pair(&self, _x: &[f64], _y: &[f64], _tol: f64) -> Option<bool> {
        None
    }

    /// True only when `A ≡ 0` is known structurally.
    fn is_zero_operator(&self) -> bool {
        false
    }
}

/// One backward-Euler step: returns `(x_new, dk)` with `x_new = J_λ(x)` and
/// `dk = x - x_new`.
pub fn resolvent_step(op: &dyn MonotoneOperator, lambda: f64, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut x_new = x.to_vec();
    let mut dk = vec![0.0; x.len()];
    resolvent_step_in_place(op, lambda, &mut x_new, &mut dk)?;
    Ok((x_new, dk))
}

/// In-place [`resolvent_step`]: `state` holds the pre-point on entry and the
/// projected point on exit.
pub fn resolvent_step_in_place(
    op: &dyn MonotoneOperator,
    lambda: f64,
    state: &mut [f64],
    dk: &mut [f64],
) -> Result<()> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::OperatorFailure {
            lambda,
            x: state.to_vec(),
            reason: "resolvent step requires lambda > 0".into(),
        });
    }
    if state.len() != op.dim() {
        return Err(Error::Dimension {
            expected: op.dim(),
            got: state.len(),
        });
    }
    dk.copy_from_slice(state);
    op.resolvent(lambda, dk, state)?;
    if state.iter().any(|v| !v.is_finite()) {
        return Err(Error::OperatorFailure {
            lambda,
            x: dk.to_vec(),
            reason: "non-finite resolvent".into(),
        });
    }
    for (d, s) in dk.iter_mut().zip(state.iter()) {
        *d -= s;
    }
    Ok(())
}

/// Result of [`check_monotone`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MonotoneReport {
    pub min_pairing: f64,
    pub samples: usize,
    pub violated: bool,
}

/// Samples `n_samples` pairs of graph points and reports the smallest
/// `<x1 - x2, y1 - y2>`.
pub fn check_monotone(op: &dyn MonotoneOperator, n_samples: usize, rng_seed: u64) -> Result<MonotoneReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut min_pairing = f64::INFINITY;
    let mut violated = false;
    for _ in 0..n_samples {
        let (x1, y1) = op
            .graph_sample(&mut rng)
            .ok_or_else(|| Error::UnsupportedCheck("operator has no graph sampler".into()))?;
        let (x2, y2) = op.graph_sample(&mut rng).expect("sampler available");
        let mut pairing = 0.0;
        let (mut dx2, mut dy2) = (0.0, 0.0);
        for i in 0..x1.len() {
            let dx = x1[i] - x2[i];
            let dy = y1[i] - y2[i];
            pairing += dx * dy;
            dx2 += dx * dx;
            dy2 += dy * dy;
        }
        if pairing < -(GRAPH_TOL + GRAPH_TOL * (dx2 * dy2).sqrt()) {
            violated = true;
        }
        min_pairing = min_pairing.min(pairing);
    }
    if n_samples == 0 {
        min_pairing = 0.0;
    }
    Ok(MonotoneReport {
        min_pairing,
        samples: n_samples,
        violated,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Convex function on an interval, given by its derivative: on piece `j`
/// (between consecutive edges of `lower, breakpoints..., upper`) the derivative
/// is `slopes[j] * x + offsets[j]`. Outside `[lower, upper]` the function is
/// `+∞`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PiecewiseQuadratic {
    #[serde(default = "neg_inf")]
    pub lower: f64,
    #[serde(default = "pos_inf")]
    pub upper: f64,
    #[serde(default)]
    pub breakpoints: Vec<f64>,
    pub slopes: Vec<f64>,
    pub offsets: Vec<f64>,
}

fn neg_inf() -> f64 {
    f64::NEG_INFINITY
}
fn pos_inf() -> f64 {
    f64::INFINITY
}

impl PiecewiseQuadratic {
    /// `φ(x) = x²/2` on the whole line.
    pub fn half_square() -> Self {
        Self {
            lower: f64::NEG_INFINITY,
            upper: f64::INFINITY,
            breakpoints: vec![],
            slopes: vec![1.0],
            offsets: vec![0.0],
        }
    }

    /// Indicator of `[lower, upper]` (its subdifferential is the normal cone).
    pub fn indicator(lower: f64, upper: f64) -> Self {
        Self {
            lower,
            upper,
            breakpoints: vec![],
            slopes: vec![0.0],
            offsets: vec![0.0],
        }
    }

    fn edge(&self, i: usize) -> f64 {
        match i {
            0 => self.lower,
            i if i <= self.breakpoints.len() => self.breakpoints[i - 1],
            _ => self.upper,
        }
    }

    fn deriv(&self, piece: usize, x: f64) -> f64 {
        self.slopes[piece] * x + self.offsets[piece]
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.breakpoints.len();
        if self.slopes.len() != n + 1 || self.offsets.len() != n + 1 {
            return Err(Error::InvalidOperator(format!(
                "subdiff1d needs {} slopes and offsets for {} breakpoints",
                n + 1,
                n
            )));
        }
        if self.lower.is_nan() || self.upper.is_nan() || !(self.lower <= self.upper) {
            return Err(Error::InvalidOperator("subdiff1d needs lower <= upper".into()));
        }
        let mut prev = self.lower;
        for &b in &self.breakpoints {
            if !(b > prev) || !(b < self.upper) || !b.is_finite() {
                return Err(Error::InvalidOperator(
                    "subdiff1d breakpoints must be finite, increasing, inside (lower, upper)".into(),
                ));
            }
            prev = b;
        }
        if self.slopes.iter().any(|&a| !(a >= 0.0) || !a.is_finite()) || self.offsets.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidOperator(
                "subdiff1d slopes must be finite and nonnegative".into(),
            ));
        }
        for (j, &b) in self.breakpoints.iter().enumerate() {
            if self.deriv(j, b) > self.deriv(j + 1, b) + GRAPH_TOL * (1.0 + b.abs()) {
                return Err(Error::InvalidOperator(format!(
                    "subdiff1d derivative decreases at breakpoint {b}: not convex"
                )));
            }
        }
        Ok(())
    }

    /// Solves `y + λ ∂φ(y) ∋ x` by scanning pieces in increasing order.
    pub fn resolvent(&self, lambda: f64, x: f64) -> f64 {
        let n = self.breakpoints.len();
        if self.lower.is_finite() && x <= self.lower + lambda * self.deriv(0, self.lower) {
            return self.lower;
        }
        for j in 0..=n {
            let lo = self.edge(j);
            let hi = self.edge(j + 1);
            let g_hi = if hi.is_finite() {
                hi + lambda * self.deriv(j, hi)
            } else {
                f64::INFINITY
            };
            if x <= g_hi {
                let y = (x - lambda * self.offsets[j]) / (1.0 + lambda * self.slopes[j]);
                return y.clamp(lo, hi);
            }
            if j < n {
                if x <= hi + lambda * self.deriv(j + 1, hi) {
                    return hi;
                }
            } else {
                return hi;
            }
        }
        unreachable!("pieces cover the real line")
    }

    /// `[φ'_-(x), φ'_+(x)]`, or `None` outside the domain.
    pub fn subdifferential(&self, x: f64) -> Option<(f64, f64)> {
        if x < self.lower || x > self.upper {
            return None;
        }
        let n = self.breakpoints.len();
        let piece = self.breakpoints.partition_point(|&b| b <= x);
        let mut left = self.deriv(piece.min(n), x);
        let mut right = left;
        if piece > 0 && self.breakpoints[piece - 1] == x {
            left = self.deriv(piece - 1, x);
        }
        if x == self.lower {
            left = f64::NEG_INFINITY;
        }
        if x == self.upper {
            right = f64::INFINITY;
        }
        Some((left, right))
    }

    fn sample_window(&self) -> (f64, f64) {
        let lo = if self.lower.is_finite() { self.lower } else { -5.0 };
        let hi = if self.upper.is_finite() {
            self.upper
        } else {
            lo.max(-5.0) + 10.0
        };
        (lo, hi.max(lo))
    }

    fn graph_sample(&self, rng: &mut dyn RngCore) -> (f64, f64) {
        let (lo, hi) = self.sample_window();
        let mut special: Vec<f64> = self.breakpoints.clone();
        if self.lower.is_finite() {
            special.push(self.lower);
        }
        if self.upper.is_finite() {
            special.push(self.upper);
        }
        let x = if !special.is_empty() && rng.gen_bool(0.3) {
            special[rng.gen_range(0..special.len())]
        } else if hi > lo {
            rng.gen_range(lo..=hi)
        } else {
            lo
        };
        let (l, r) = self.subdifferential(x).expect("sampled inside the domain");
        let l = if l.is_finite() { l } else { r - rng.gen_range(0.0..5.0) };
        let r = if r.is_finite() { r } else { l + rng.gen_range(0.0..5.0) };
        let y = if r > l { rng.gen_range(l..=r) } else { l };
        (x, y)
    }

    fn interior(&self) -> Option<f64> {
        match (self.lower.is_finite(), self.upper.is_finite()) {
            (true, true) if self.upper > self.lower => Some(0.5 * (self.lower + self.upper)),
            (true, true) => None,
            (true, false) => Some(self.lower + 1.0),
            (false, true) => Some(self.upper - 1.0),
            (false, false) => Some(0.0),
        }
    }
}

/// The built-in operator family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BuiltinOperator {
    /// `A ≡ 0`.
    Zero { dim: usize },
    /// Normal cone of the box `[lower, upper]` (bounds may be infinite).
    Box { lower: Vec<f64>, upper: Vec<f64> },
    /// Normal cone of `{x : <normal, x> <= offset}`.
    Halfspace { normal: Vec<f64>, offset: f64 },
    /// Normal cone of the closed Euclidean ball.
    Ball { center: Vec<f64>, radius: f64 },
    /// Subdifferential of a convex piecewise-quadratic function on an interval.
    Subdiff1d(PiecewiseQuadratic),
    /// Coordinatewise product of one-dimensional operators.
    Product { factors: Vec<BuiltinOperator> },
}

impl BuiltinOperator {
    /// Normal cone of the half-line `[0, ∞)`.
    pub fn nonnegative_half_line() -> Self {
        BuiltinOperator::Box {
            lower: vec![0.0],
            upper: vec![f64::INFINITY],
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            BuiltinOperator::Zero { dim } => {
                if *dim == 0 {
                    return Err(Error::InvalidOperator("dimension must be positive".into()));
                }
            }
            BuiltinOperator::Box { lower, upper } => {
                if lower.is_empty() || lower.len() != upper.len() {
                    return Err(Error::InvalidOperator(
                        "box bounds must be non-empty and of equal length".into(),
                    ));
                }
                if lower.iter().zip(upper).any(|(l, u)| l.is_nan() || u.is_nan() || l > u) {
                    return Err(Error::InvalidOperator("box needs lower <= upper".into()));
                }
            }
            BuiltinOperator::Halfspace { normal, offset } => {
                if normal.is_empty() || !(norm(normal) > 0.0) || !offset.is_finite() {
                    return Err(Error::InvalidOperator(
                        "halfspace needs a nonzero normal and finite offset".into(),
                    ));
                }
            }
            BuiltinOperator::Ball { center, radius } => {
                if center.is_empty() || !(*radius >= 0.0) || !radius.is_finite() {
                    return Err(Error::InvalidOperator(
                        "ball needs a center and a finite radius >= 0".into(),
                    ));
                }
            }
            BuiltinOperator::Subdiff1d(phi) => phi.validate()?,
            BuiltinOperator::Product { factors } => {
                if factors.is_empty() {
                    return Err(Error::InvalidOperator("product needs factors".into()));
                }
                for f in factors {
                    f.validate()?;
                    if f.dim() != 1 {
                        return Err(Error::InvalidOperator("product factors must be one-dimensional".into()));
                    }
                }
            }
        }
        Ok(())
    }

    /// True when `A` is the normal cone of a closed convex set, i.e. the
    /// resolvent is a metric projection independent of `λ`.
    pub fn is_normal_cone(&self) -> bool {
        match self {
            BuiltinOperator::Box { .. } | BuiltinOperator::Halfspace { .. } | BuiltinOperator::Ball { .. } => true,
            BuiltinOperator::Subdiff1d(phi) => {
                phi.slopes.iter().all(|&a| a == 0.0) && phi.offsets.iter().all(|&c| c == 0.0)
            }
            BuiltinOperator::Product { factors } => factors
                .iter()
                .all(|f| f.is_normal_cone() || matches!(f, BuiltinOperator::Zero { .. })),
            BuiltinOperator::Zero { .. } => false,
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            BuiltinOperator::Zero { .. } => true,
            BuiltinOperator::Product { factors } => factors.iter().all(|f| f.is_zero()),
            _ => false,
        }
    }

    fn project(&self, x: &[f64], out: &mut [f64]) {
        match self {
            BuiltinOperator::Zero { .. } => out.copy_from_slice(x),
            BuiltinOperator::Box { lower, upper } => {
                for i in 0..x.len() {
                    out[i] = x[i].max(lower[i]).min(upper[i]);
                }
            }
            BuiltinOperator::Halfspace { normal, offset } => {
                let excess = dot(normal, x) - offset;
                out.copy_from_slice(x);
                if excess > 0.0 {
                    let s = excess / dot(normal, normal);
                    for i in 0..x.len() {
                        out[i] -= s * normal[i];
                    }
                }
            }
            BuiltinOperator::Ball { center, radius } => {
                let r: f64 = x.iter().zip(center).map(|(a, c)| (a - c) * (a - c)).sum::<f64>().sqrt();
                if r <= *radius {
                    out.copy_from_slice(x);
                } else {
                    let s = radius / r;
                    for i in 0..x.len() {
                        out[i] = center[i] + s * (x[i] - center[i]);
                    }
                }
            }
            BuiltinOperator::Subdiff1d(phi) => out[0] = x[0].max(phi.lower).min(phi.upper),
            BuiltinOperator::Product { factors } => {
                for (i, f) in factors.iter().enumerate() {
                    f.project(&x[i..i + 1], &mut out[i..i + 1]);
                }
            }
        }
    }
}

impl MonotoneOperator for BuiltinOperator {
    fn is_zero_operator(&self) -> bool {
        self.is_zero()
    }

    fn dim(&self) -> usize {
        match self {
            BuiltinOperator::Zero { dim } => *dim,
            BuiltinOperator::Box { lower, .. } => lower.len(),
            BuiltinOperator::Halfspace { normal, .. } => normal.len(),
            BuiltinOperator::Ball { center, .. } => center.len(),
            BuiltinOperator::Subdiff1d(_) => 1,
            BuiltinOperator::Product { factors } => factors.len(),
        }
    }

    fn resolvent(&self, lambda: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        match self {
            BuiltinOperator::Subdiff1d(phi) => out[0] = phi.resolvent(lambda, x[0]),
            BuiltinOperator::Product { factors } => {
                for (i, f) in factors.iter().enumerate() {
                    f.resolvent(lambda, &x[i..i + 1], &mut out[i..i + 1])?;
                }
            }
            // normal cones and zero: the resolvent is the projection
            _ => self.project(x, out),
        }
        Ok(())
    }

    fn domain_project(&self, x: &[f64], out: &mut [f64]) {
        self.project(x, out)
    }

    fn graph_sample(&self, rng: &mut dyn RngCore) -> Option<(Vec<f64>, Vec<f64>)> {
        let d = self.dim();
        match self {
            BuiltinOperator::Zero { .. } => {
                let x = (0..d).map(|_| rng.gen_range(-5.0..5.0)).collect();
                Some((x, vec![0.0; d]))
            }
            BuiltinOperator::Subdiff1d(phi) => {
                let (x, y) = phi.graph_sample(rng);
                Some((vec![x], vec![y]))
            }
            BuiltinOperator::Product { factors } => {
                let mut xs = Vec::with_capacity(d);
                let mut ys = Vec::with_capacity(d);
                for f in factors {
                    let (x, y) = f.graph_sample(rng)?;
                    xs.extend(x);
                    ys.extend(y);
                }
                Some((xs, ys))
            }
            _ => {
                // z - P(z) lies in the normal cone at P(z); scale by t >= 0.
                let mut anchor = vec![0.0; d];
                self.project(&vec![0.0; d], &mut anchor);
                let z: Vec<f64> = anchor.iter().map(|a| a + rng.gen_range(-5.0..5.0)).collect();
                let mut x = vec![0.0; d];
                self.project(&z, &mut x);
                let t = rng.gen_range(0.0..2.0);
                let y = z.iter().zip(&x).map(|(zi, xi)| t * (zi - xi)).collect();
                Some((x, y))
            }
        }
    }

    fn interior_point(&self) -> Option<Vec<f64>> {
        match self {
            BuiltinOperator::Zero { dim } => Some(vec![0.0; *dim]),
            BuiltinOperator::Box { lower, upper } => lower
                .iter()
                .zip(upper)
                .map(|(&l, &u)| PiecewiseQuadratic::indicator(l, u).interior())
                .collect(),
            BuiltinOperator::Halfspace { normal, offset } => {
                let s = (offset - 1.0) / dot(normal, normal);
                Some(normal.iter().map(|n| s * n).collect())
            }
            BuiltinOperator::Ball { center, radius } => (*radius > 0.0).then(|| center.clone()),
            BuiltinOperator::Subdiff1d(phi) => phi.interior().map(|v| vec![v]),
            BuiltinOperator::Product { factors } => {
                let mut out = Vec::new();
                for f in factors {
                    out.extend(f.interior_point()?);
                }
                Some(out)
            }
        }
    }

    fn contains_pair(&self, x: &[f64], y: &[f64], tol: f64) -> Option<bool> {
        let on = |a: f64, b: f64| (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()));
        let ok = match self {
            BuiltinOperator::Zero { .. } => y.iter().all(|v| v.abs() <= tol),
            BuiltinOperator::Box { lower, upper } => (0..x.len()).all(|i| {
                let (l, u) = (lower[i], upper[i]);
                if x[i] < l - tol || x[i] > u + tol {
                    return false;
                }
                let at_l = l.is_finite() && on(x[i], l);
                let at_u = u.is_finite() && on(x[i], u);
                match (at_l, at_u) {
                    (true, true) => true,
                    (true, false) => y[i] <= tol,
                    (false, true) => y[i] >= -tol,
                    (false, false) => y[i].abs() <= tol,
                }
            }),
            BuiltinOperator::Halfspace { normal, offset } => {
                let g = dot(normal, x);
                if g > offset + tol * (1.0 + offset.abs()) {
                    false
                } else if on(g, *offset) {
                    // y = t * normal, t >= 0
                    let t = dot(y, normal) / dot(normal, normal);
                    t >= -tol
                        && y.iter()
                            .zip(normal)
                            .all(|(yi, ni)| (yi - t * ni).abs() <= tol * (1.0 + norm(y)))
                } else {
                    y.iter().all(|v| v.abs() <= tol)
                }
            }
            BuiltinOperator::Ball { center, radius } => {
                let diff: Vec<f64> = x.iter().zip(center).map(|(a, c)| a - c).collect();
                let r = norm(&diff);
                if r > radius + tol * (1.0 + radius) {
                    false
                } else if on(r, *radius) && r > 0.0 {
                    let t = dot(y, &diff) / (r * r);
                    t >= -tol
                        && y.iter()
                            .zip(&diff)
                            .all(|(yi, di)| (yi - t * di).abs() <= tol * (1.0 + norm(y)))
                } else {
                    y.iter().all(|v| v.abs() <= tol)
                }
            }
            BuiltinOperator::Subdiff1d(phi) => {
                // snap x onto a nearby edge before evaluating the subdifferential
                let mut xs = x[0];
                for i in 0..=phi.breakpoints.len() + 1 {
                    let e = phi.edge(i);
                    if e.is_finite() && on(xs, e) {
                        xs = e;
                    }
                }
                match phi.subdifferential(xs) {
                    None => false,
                    Some((l, r)) => {
                        y[0] >= l - tol * (1.0 + l.abs().min(1e300)) && y[0] <= r + tol * (1.0 + r.abs().min(1e300))
                    }
                }
            }
            BuiltinOperator::Product { factors } => {
                let mut all = true;
                for (i, f) in factors.iter().enumerate() {
                    all &= f.contains_pair(&x[i..i + 1], &y[i..i + 1], tol)?;
                }
                all
            }
        };
        Some(ok)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, RngCore};

    fn builtins() -> Vec<BuiltinOperator> {
        vec![
            BuiltinOperator::Zero { dim: 2 },
            BuiltinOperator::Box {
                lower: vec![-1.0, 0.0],
                upper: vec![1.0, f64::INFINITY],
            },
            BuiltinOperator::Halfspace {
                normal: vec![1.0, -2.0],
                offset: 0.5,
            },
            BuiltinOperator::Ball {
                center: vec![0.5, -0.5],
                radius: 1.5,
            },
            BuiltinOperator::Subdiff1d(PiecewiseQuadratic::half_square()),
            BuiltinOperator::Subdiff1d(PiecewiseQuadratic {
                lower: -2.0,
                upper: 3.0,
                breakpoints: vec![0.0, 1.0],
                slopes: vec![1.0, 0.0, 2.0],
                offsets: vec![-1.0, 0.5, 0.0],
            }),
            BuiltinOperator::Product {
                factors: vec![
                    BuiltinOperator::nonnegative_half_line(),
                    BuiltinOperator::Subdiff1d(PiecewiseQuadratic::half_square()),
                    BuiltinOperator::Zero { dim: 1 },
                ],
            },
        ]
    }

    #[test]
    fn builtins_validate() {
        for op in builtins() {
            op.validate().unwrap();
        }
        let bad = PiecewiseQuadratic {
            lower: f64::NEG_INFINITY,
            upper: f64::INFINITY,
            breakpoints: vec![0.0],
            slopes: vec![0.0, 0.0],
            offsets: vec![1.0, -1.0],
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn resolvent_step_examples() {
        let cone = BuiltinOperator::nonnegative_half_line();
        let (x, dk) = resolvent_step(&cone, 0.1, &[-1.0]).unwrap();
        assert_eq!((x[0], dk[0]), (0.0, -1.0));

        let zero = BuiltinOperator::Zero { dim: 1 };
        let (x, dk) = resolvent_step(&zero, 0.37, &[3.7]).unwrap();
        assert_eq!((x[0], dk[0]), (3.7, 0.0));

        // y + λ y = x with λ = 1, x = 2
        let sq = BuiltinOperator::Subdiff1d(PiecewiseQuadratic::half_square());
        let (x, dk) = resolvent_step(&sq, 1.0, &[2.0]).unwrap();
        assert_eq!((x[0], dk[0]), (1.0, 1.0));
    }

    #[test]
    fn resolvent_step_rejects_nonpositive_lambda() {
        let zero = BuiltinOperator::Zero { dim: 1 };
        assert!(matches!(
            resolvent_step(&zero, 0.0, &[1.0]),
            Err(Error::OperatorFailure { .. })
        ));
    }

    #[test]
    fn half_square_resolvent_closed_form() {
        let sq = PiecewiseQuadratic::half_square();
        for &(l, x) in &[(0.5, 3.0), (2.0, -1.0), (1e-3, 0.7)] {
            assert!((sq.resolvent(l, x) - x / (1.0 + l)).abs() < 1e-15);
        }
    }

    #[test]
    fn monotone_checks() {
        let zero = BuiltinOperator::Zero { dim: 3 };
        let r = check_monotone(&zero, 100, 1).unwrap();
        assert_eq!(r.min_pairing, 0.0);
        assert!(!r.violated);

        let ball = BuiltinOperator::Ball {
            center: vec![0.0, 0.0],
            radius: 1.0,
        };
        let r = check_monotone(&ball, 1000, 2).unwrap();
        assert!(r.min_pairing >= -1e-12, "{}", r.min_pairing);
        assert!(!r.violated);

        for op in builtins() {
            let r = check_monotone(&op, 1000, 3).unwrap();
            assert!(!r.violated, "{op:?}: {}", r.min_pairing);
        }
    }

    #[derive(Debug)]
    struct AntiMonotone;

    impl MonotoneOperator for AntiMonotone {
        fn dim(&self) -> usize {
            1
        }
        fn resolvent(&self, _l: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
            out.copy_from_slice(x);
            Ok(())
        }
        fn domain_project(&self, x: &[f64], out: &mut [f64]) {
            out.copy_from_slice(x)
        }
        fn graph_sample(&self, rng: &mut dyn RngCore) -> Option<(Vec<f64>, Vec<f64>)> {
            let x: f64 = rng.gen_range(-1.0..1.0);
            Some((vec![x], vec![-x]))
        }
    }

    #[derive(Debug)]
    struct NoSampler;

    impl MonotoneOperator for NoSampler {
        fn dim(&self) -> usize {
            1
        }
        fn resolvent(&self, _l: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
            out.copy_from_slice(x);
            Ok(())
        }
        fn domain_project(&self, x: &[f64], out: &mut [f64]) {
            out.copy_from_slice(x)
        }
    }

    #[test]
    fn anti_monotone_is_flagged() {
        let r = check_monotone(&AntiMonotone, 100, 4).unwrap();
        assert!(r.min_pairing < 0.0);
        assert!(r.violated);
        assert!(matches!(
            check_monotone(&NoSampler, 10, 0),
            Err(Error::UnsupportedCheck(_))
        ));
    }

    #[test]
    fn nonexpansive_over_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for op in builtins() {
            let d = op.dim();
            let mut violations = 0;
            for _ in 0..1000 {
                let lambda = 10f64.powf(rng.gen_range(-3.0..1.0));
                let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-6.0..6.0)).collect();
                let y: Vec<f64> = (0..d).map(|_| rng.gen_range(-6.0..6.0)).collect();
                let (mut jx, mut jy) = (vec![0.0; d], vec![0.0; d]);
                op.resolvent(lambda, &x, &mut jx).unwrap();
                op.resolvent(lambda, &y, &mut jy).unwrap();
                let dj: f64 = jx.iter().zip(&jy).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                let dx: f64 = x.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                if dj > dx + 1e-12 {
                    violations += 1;
                }
            }
            assert_eq!(violations, 0, "{op:?}");
        }
    }

    #[test]
    fn yosida_pair_lies_in_graph() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for op in builtins() {
            let d = op.dim();
            for _ in 0..1000 {
                let lambda = 10f64.powf(rng.gen_range(-3.0..1.0));
                let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-6.0..6.0)).collect();
                let (xn, dk) = resolvent_step(&op, lambda, &x).unwrap();
                let y: Vec<f64> = dk.iter().map(|v| v / lambda).collect();
                assert_eq!(
                    op.contains_pair(&xn, &y, 1e-9),
                    Some(true),
                    "{op:?} x={x:?} xn={xn:?} y={y:?}"
                );
                // resolvent lands in the closed domain
                let mut p = vec![0.0; d];
                op.domain_project(&xn, &mut p);
                let moved = p.iter().zip(&xn).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                assert!(
                    moved <= 1e-12 * (1.0 + x.iter().map(|v| v.abs()).sum::<f64>()),
                    "{op:?}"
                );
            }
        }
    }

    #[test]
    fn graph_samples_pass_membership() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for op in builtins() {
            for _ in 0..300 {
                let (x, y) = op.graph_sample(&mut rng).unwrap();
                assert_eq!(op.contains_pair(&x, &y, 1e-9), Some(true), "{op:?} {x:?} {y:?}");
            }
        }
    }

    #[test]
    fn interior_points_are_fixed_by_projection() {
        for op in builtins() {
            let a = op.interior_point().unwrap();
            let mut p = vec![0.0; a.len()];
            op.domain_project(&a, &mut p);
            assert_eq!(p, a);
        }
    }

    #[test]
    fn serde_tagged_record() {
        let op: BuiltinOperator = serde_json::from_str(r#"{"kind":"ball","center":[0.0],"radius":2.0}"#).unwrap();
        assert_eq!(
            op,
            BuiltinOperator::Ball {
                center: vec![0.0],
                radius: 2.0
            }
        );
        let op: BuiltinOperator =
            serde_json::from_str(r#"{"kind":"subdiff1d","slopes":[1.0],"offsets":[0.0]}"#).unwrap();
        assert_eq!(op, BuiltinOperator::Subdiff1d(PiecewiseQuadratic::half_square()));
        assert!(serde_json::from_str::<BuiltinOperator>(r#"{"kind":"zero","dim":1,"extra":3}"#).is_err());
    }

    proptest! {
        #[test]
        fn normal_cone_resolvent_ignores_lambda(
            x in prop::collection::vec(-10.0f64..10.0, 2),
            l1 in 1e-4f64..10.0,
            l2 in 1e-4f64..10.0,
        ) {
            for op in builtins().into_iter().filter(|o| o.is_normal_cone() && o.dim() == 2) {
                let (mut a, mut b) = (vec![0.0; 2], vec![0.0; 2]);
                op.resolvent(l1, &x, &mut a).unwrap();
                op.resolvent(l2, &x, &mut b).unwrap();
                prop_assert_eq!(a, b);
            }
        }

        #[test]
        fn discrete_pairing_with_graph_points(
            x in prop::collection::vec(-8.0f64..8.0, 2),
            lambda in 1e-3f64..5.0,
            seed in any::<u64>(),
        ) {
            // <x_new - a, dk - λ y> >= 0 for (a, y) ∈ Gr(A)
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for op in builtins().into_iter().filter(|o| o.dim() == 2) {
                let (a, y) = op.graph_sample(&mut rng).unwrap();
                let (xn, dk) = resolvent_step(&op, lambda, &x).unwrap();
                let p: f64 = (0..2).map(|i| (xn[i] - a[i]) * (dk[i] - lambda * y[i])).sum();
                let scale = 1.0 + x.iter().map(|v| v * v).sum::<f64>();
                prop_assert!(p >= -1e-10 * scale, "{:?}: {}", op, p);
            }
        }

        #[test]
        fn product_is_coordinatewise(
            x in prop::collection::vec(-8.0f64..8.0, 3),
            lambda in 1e-3f64..5.0,
        ) {
            let factors = vec![
                BuiltinOperator::nonnegative_half_line(),
                BuiltinOperator::Subdiff1d(PiecewiseQuadratic::half_square()),
                BuiltinOperator::Zero { dim: 1 },
            ];
            let prod = BuiltinOperator::Product { factors: factors.clone() };
            let mut out = vec![0.0; 3];
            prod.resolvent(lambda, &x, &mut out).unwrap();
            for (i, f) in factors.iter().enumerate() {
                let mut o = [0.0];
                f.resolvent(lambda, &x[i..i + 1], &mut o).unwrap();
                prop_assert_eq!(o[0], out[i]);
            }
        }
    }
}
