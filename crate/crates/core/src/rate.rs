//! Rate functions `I(g) = ½ inf { ∫|u|² : g = skeleton(u) }`.
//!
//! When `A ≡ 0` and `σ` is square and invertible the skeleton can be solved
//! for `u` step by step. Otherwise the exact constraint is replaced by a
//! sup-distance penalty, minimized over piecewise-constant controls; the
//! result is an upper estimate, and [`rate_certificate`] states when it is a
//! certified bound.

use log::{debug, warn};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::coefficients::{eval_b, eval_sigma, frechet_pairing};
use crate::error::{Error, Result};
use crate::measure::EmpiricalMeasure;
use crate::path::Trajectory;
use crate::solver::{solve_deterministic_limit, solve_mdp_skeleton, solve_skeleton, Control, SimConfig};

/// Largest 2-norm condition number accepted for `σ` in the inversion.
pub const MAX_CONDITION: f64 = 1e8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkeletonKind {
    /// Large-deviation skeleton started at `ξ`.
    Ldp,
    /// Moderate-deviation (linearized) skeleton started at 0.
    Mdp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerSettings {
    /// Penalty weights, run in order with warm starts.
    pub penalties: Vec<f64>,
    /// Iteration cap per penalty weight.
    pub max_iterations: usize,
    /// Initial step length.
    pub step: f64,
    /// Stop a stage when `|ΔF| ≤ tolerance·(1 + F)`.
    pub tolerance: f64,
    /// Forward-difference increment per control coordinate.
    pub fd_step: f64,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        Self {
            penalties: vec![1e2, 1e3, 1e4, 1e5],
            max_iterations: 200,
            step: 1.0,
            tolerance: 1e-12,
            fd_step: 1e-4,
        }
    }
}

/// Target path and everything needed to run its skeleton.
#[derive(Clone, Debug)]
pub struct RateProblem {
    pub cfg: SimConfig,
    pub target: Trajectory,
    pub kind: SkeletonKind,
    /// Deterministic limit `X⁰` of `cfg`.
    pub x0: Trajectory,
    /// Energy budget `R` for the optimizer iterates.
    pub budget: f64,
    /// Largest residual at which a control certifies an upper bound.
    pub residual_tolerance: f64,
    pub settings: OptimizerSettings,
}

impl RateProblem {
    pub fn new(cfg: SimConfig, target: Trajectory, kind: SkeletonKind) -> Result<Self> {
        cfg.validate()?;
        let x0 = solve_deterministic_limit(&cfg)?.path;
        if target.grid() != &cfg.grid || target.dim() != cfg.dim() {
            return Err(Error::GridMismatch(
                "target does not live on the configured grid".into(),
            ));
        }
        let history = target.segment_at(0)?;
        let expected = match kind {
            SkeletonKind::Ldp => cfg.initial.clone(),
            SkeletonKind::Mdp => crate::path::SegmentBuf::zeros(cfg.dim(), &cfg.grid),
        };
        if history.sup_distance(&expected.view()) > 1e-12 * (1.0 + history.sup_norm()) {
            return Err(Error::Precondition(match kind {
                SkeletonKind::Ldp => "target must equal the initial segment on [-r0, 0]".into(),
                SkeletonKind::Mdp => "target must vanish on [-r0, 0]".into(),
            }));
        }
        if kind == SkeletonKind::Ldp {
            let mut p = vec![0.0; cfg.dim()];
            for i in 0..target.grid().n_nodes() {
                let v = target.node(i);
                cfg.operator.domain_project(v, &mut p);
                if v.iter().zip(&p).any(|(a, b)| (a - b).abs() > 1e-12 * (1.0 + a.abs())) {
                    return Err(Error::Precondition(format!(
                        "target leaves the closed domain of A at t = {}",
                        target.grid().time(i)
                    )));
                }
            }
        }
        Ok(Self {
            cfg,
            target,
            kind,
            x0,
            budget: f64::INFINITY,
            residual_tolerance: 1e-4,
            settings: OptimizerSettings::default(),
        })
    }

    pub fn with_budget(mut self, budget: f64) -> Self {
        self.budget = budget;
        self
    }

    pub fn with_settings(mut self, settings: OptimizerSettings) -> Self {
        self.settings = settings;
        self
    }

    pub fn with_residual_tolerance(mut self, tol: f64) -> Self {
        self.residual_tolerance = tol;
        self
    }

    /// Skeleton path driven by `u`.
    pub fn skeleton(&self, u: &Control) -> Result<Trajectory> {
        Ok(match self.kind {
            SkeletonKind::Ldp => solve_skeleton(&self.cfg, u, &self.x0)?.path,
            SkeletonKind::Mdp => solve_mdp_skeleton(&self.cfg, u, &self.x0)?.path,
        })
    }

    /// `sup_t |skeleton(u)(t) − g(t)|`.
    pub fn residual(&self, u: &Control) -> Result<f64> {
        self.skeleton(u)?.sup_distance(&self.target)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateMethod {
    Inversion,
    Penalty,
}

/// Rate estimate with the control that realizes it.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RateResult {
    /// `½ h Σ |u_k|²` of the returned control.
    pub value: f64,
    pub method: RateMethod,
    pub control: Control,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn invert(sigma: &[f64], d: usize) -> Result<DMatrix<f64>> {
    let m = DMatrix::from_row_slice(d, d, sigma);
    let sv = m.clone().singular_values();
    let (max, min) = sv
        .iter()
        .fold((0.0f64, f64::INFINITY), |(a, b), &s| (a.max(s), b.min(s)));
    if !(min > 0.0) || max / min >= MAX_CONDITION {
        return Err(Error::InversionUnavailable(format!(
            "sigma is singular or ill-conditioned (condition number {})",
            max / min
        )));
    }
    m.try_inverse()
        .ok_or_else(|| Error::InversionUnavailable("sigma is singular".into()))
}

/// Solves the skeleton for `u` step by step:
/// `u_k = σ⁻¹ ((g(t_{k+1}) − g(t_k))/h − drift_k)`, with the drift of the
/// configured skeleton kind evaluated along `g`.
pub fn rate_by_inversion(p: &RateProblem) -> Result<RateResult> {
    let cfg = &p.cfg;
    let (d, m) = (cfg.dim(), cfg.noise_dim());
    if !cfg.operator.is_zero_operator() {
        return Err(Error::InversionUnavailable("inversion needs A ≡ 0".into()));
    }
    if d != m {
        return Err(Error::InversionUnavailable(format!("sigma is {d}x{m}, not square")));
    }
    let g = &p.target;
    let h = cfg.grid.h();
    let c = cfg.coefficients.as_ref();
    let mut values = Vec::with_capacity(cfg.grid.n_steps() * m);
    for k in 0..cfg.grid.n_steps() {
        let gs = g.segment_at(k)?;
        let xs = p.x0.segment_at(k)?;
        let law = EmpiricalMeasure::dirac(xs);
        let (drift, sigma) = match p.kind {
            SkeletonKind::Ldp => (eval_b(c, &gs, &law)?, eval_sigma(c, &gs, &law)?),
            SkeletonKind::Mdp => (frechet_pairing(c, &xs, &law, &gs)?, eval_sigma(c, &xs, &law)?),
        };
        let inv = invert(&sigma, d)?;
        let rhs = DMatrix::from_iterator(
            d,
            1,
            (0..d).map(|j| (g.at_step(k + 1)[j] - g.at_step(k)[j]) / h - drift[j]),
        );
        values.extend((inv * rhs).iter().copied());
    }
    let control = Control::unbounded(h, m, values)?;
    let residual = p.residual(&control)?;
    Ok(RateResult {
        value: 0.5 * control.energy(),
        method: RateMethod::Inversion,
        control,
        residual,
        iterations: 0,
        converged: true,
    })
}

struct Objective<'a> {
    problem: &'a RateProblem,
    rho: f64,
}

impl Objective<'_> {
    fn value(&self, values: &[f64]) -> Result<f64> {
        let p = self.problem;
        let u = Control::unbounded(p.cfg.grid.h(), p.cfg.noise_dim(), values.to_vec())?;
        let r = p.residual(&u)?;
        Ok(0.5 * u.energy() + 0.5 * self.rho * r * r)
    }

    fn gradient(&self, values: &[f64], f0: f64) -> Result<Vec<f64>> {
        let delta = self.problem.settings.fd_step;
        self.problem.cfg.execution.try_map(values.len(), |j| {
            let mut v = values.to_vec();
            v[j] += delta;
            Ok((self.value(&v)? - f0) / delta)
        })
    }
}

fn project_budget(values: &mut [f64], h: f64, budget: f64) {
    let energy = h * values.iter().map(|v| v * v).sum::<f64>();
    if energy > budget {
        let s = (budget / energy).sqrt();
        values.iter_mut().for_each(|v| *v *= s);
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimizes `F_ρ(u) = ½ h Σ|u_k|² + (ρ/2)·sup_t|skeleton(u)(t) − g(t)|²`
/// over the penalty schedule, starting from `initial` (zero by default).
///
/// Each stage runs gradient descent with forward-difference gradients,
/// Barzilai–Borwein step lengths and a non-monotone backtracking safeguard.
/// Iterates are scaled back into the energy ball of radius `budget`.
pub fn rate_by_penalty(p: &RateProblem, initial: Option<&Control>) -> Result<RateResult> {
    let grid = p.cfg.grid;
    let (h, m) = (grid.h(), p.cfg.noise_dim());
    let s = &p.settings;
    if s.penalties.is_empty() || s.penalties.iter().any(|r| !(*r > 0.0)) {
        return Err(Error::Precondition(
            "penalty schedule must be non-empty and positive".into(),
        ));
    }
    let mut u = match initial {
        Some(c) => {
            c.check_against(&grid, m)?;
            c.values().to_vec()
        }
        None => vec![0.0; grid.n_steps() * m],
    };
    project_budget(&mut u, h, p.budget);
    let mut iterations = 0;
    let mut last_stage_converged = false;
    for &rho in &s.penalties {
        let obj = Objective { problem: p, rho };
        let mut f = obj.value(&u)?;
        let mut grad = obj.gradient(&u, f)?;
        // steps are taken in the L² metric, where the energy term has unit curvature
        let mut alpha = s.step / h;
        let mut history = vec![f];
        last_stage_converged = false;
        for _ in 0..s.max_iterations {
            iterations += 1;
            let gg = dot(&grad, &grad);
            if gg == 0.0 {
                last_stage_converged = true;
                break;
            }
            let reference = history.iter().rev().take(10).fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let mut accepted = None;
            for _ in 0..40 {
                let mut cand: Vec<f64> = u.iter().zip(&grad).map(|(x, g)| x - alpha * g).collect();
                project_budget(&mut cand, h, p.budget);
                let fc = obj.value(&cand)?;
                if fc <= reference - 1e-4 * alpha * gg {
                    accepted = Some((cand, fc));
                    break;
                }
                alpha *= 0.5;
            }
            let Some((cand, fc)) = accepted else {
                // no decrease along the finite-difference direction
                last_stage_converged = true;
                break;
            };
            let g_new = obj.gradient(&cand, fc)?;
            let step: Vec<f64> = cand.iter().zip(&u).map(|(a, b)| a - b).collect();
            let change: Vec<f64> = g_new.iter().zip(&grad).map(|(a, b)| a - b).collect();
            let sy = dot(&step, &change);
            alpha = if sy > 0.0 { dot(&step, &step) / sy } else { 2.0 * alpha };
            let done = (f - fc).abs() <= s.tolerance * (1.0 + fc.abs());
            u = cand;
            f = fc;
            grad = g_new;
            history.push(f);
            if done {
                last_stage_converged = true;
                break;
            }
        }
        debug!("penalty stage rho={rho}: F={f} after {iterations} iterations");
    }
    let control = Control::unbounded(h, m, u)?;
    let residual = p.residual(&control)?;
    let converged = last_stage_converged && residual <= p.residual_tolerance;
    if !converged {
        warn!("penalty optimization did not converge (residual {residual})");
    }
    Ok(RateResult {
        value: 0.5 * control.energy(),
        method: RateMethod::Penalty,
        control,
        residual,
        iterations,
        converged,
    })
}

/// Inversion when available, the penalty method otherwise.
pub fn rate(p: &RateProblem) -> Result<RateResult> {
    match rate_by_inversion(p) {
        Ok(r) => Ok(r),
        Err(Error::InversionUnavailable(why)) => {
            debug!("falling back to penalty: {why}");
            rate_by_penalty(p, None)
        }
        Err(e) => Err(e),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Certificate {
    /// `½ h Σ |u_k|²`.
    pub value: f64,
    pub residual: f64,
    /// True when `residual ≤ tolerance`, so that `I(g) ≤ value` up to the
    /// residual.
    pub certified: bool,
}

pub fn rate_certificate(p: &RateProblem, u: &Control) -> Result<Certificate> {
    let residual = p.residual(u)?;
    Ok(Certificate {
        value: 0.5 * u.energy(),
        residual,
        certified: residual <= p.residual_tolerance,
    })
}
