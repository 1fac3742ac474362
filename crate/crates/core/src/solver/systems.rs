use crate::coefficients::{eval_b, eval_sigma, frechet_pairing, lions_pairing, Coefficients};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::measure::EmpiricalMeasure;
use crate::noise::{derive_seed, NoiseSource};
use crate::path::{Segment, SegmentBuf, Trajectory};

use super::{add_matvec, assemble, per_particle, Control, Engine, PathSolution, SimConfig, SolutionBundle, StepModel};

const COMPANION_TAG: u64 = 0xC0;

/// Where the measure argument of the coefficients comes from.
enum LawSource<'a> {
    /// The particles being advanced.
    Own,
    /// The particles of a separate uncontrolled run.
    Companion(&'a [Trajectory]),
    /// `δ` at the segment of a fixed path.
    Path(&'a Trajectory),
}

fn finite_or(step: usize, particle: usize, v: &[f64]) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::CoefficientEvaluation { step, particle })
    }
}

fn at_step(step: usize, r: Result<Vec<f64>>) -> Result<Vec<f64>> {
    r.map_err(|e| match e {
        Error::CoefficientEvaluation { particle, .. } => Error::CoefficientEvaluation { step, particle },
        other => other,
    })
}

/// `drift = b(s, μ) [+ σ(s, μ) u]`, `diffusion = scale·σ(s, μ)`.
struct DirectModel<'a> {
    coefficients: &'a dyn Coefficients,
    h: f64,
    scale: f64,
    law: LawSource<'a>,
    control: Option<&'a Control>,
    execution: Execution,
}

impl StepModel for DirectModel<'_> {
    fn increments(&self, k: usize, states: &[Segment<'_>], dw: Option<&[f64]>, out: &mut [f64]) -> Result<()> {
        let c = self.coefficients;
        let (d, m) = (c.dim(), c.noise_dim());
        let mu = match self.law {
            LawSource::Own => EmpiricalMeasure::new(states.to_vec())?,
            LawSource::Companion(paths) => {
                EmpiricalMeasure::new(paths.iter().map(|t| t.segment_at(k)).collect::<Result<Vec<_>>>()?)?
            }
            LawSource::Path(x0) => EmpiricalMeasure::dirac(x0.segment_at(k)?),
        };
        let summary = c.law_summary(&mu);
        let need_sigma = dw.is_some() || self.control.is_some();
        per_particle(self.execution, d, out, |i, row| {
            c.drift_with(&states[i], &mu, &summary, row);
            finite_or(k, i, row)?;
            let mut sig = Vec::new();
            if need_sigma {
                sig = vec![0.0; d * m];
                c.diffusion_with(&states[i], &mu, &summary, &mut sig);
                finite_or(k, i, &sig)?;
            }
            if let Some(u) = self.control {
                add_matvec(&sig, u.at(k), row);
            }
            match dw {
                Some(w) => {
                    sig.iter_mut().for_each(|v| *v *= self.scale);
                    assemble(self.h, row, Some((&sig, &w[i * m..(i + 1) * m])));
                }
                None => assemble(self.h, row, None),
            }
            Ok(())
        })
    }
}

/// Normalized deviation `state = (X̃ − X⁰)/a`: the coefficients are evaluated
/// at `X̃ = X⁰ + a·state`, with drift `(b(X̃, μ̃) − b(X⁰, δ))/a [+ σ u]` and
/// diffusion `noise_scale·σ(X̃, μ̃)`.
struct DeviationModel<'a> {
    coefficients: &'a dyn Coefficients,
    h: f64,
    x0: &'a Trajectory,
    a: f64,
    noise_scale: f64,
    /// Deviation states of an uncontrolled companion; `None` uses the own
    /// particles.
    law: Option<&'a [Trajectory]>,
    control: Option<&'a Control>,
    execution: Execution,
}

impl StepModel for DeviationModel<'_> {
    fn increments(&self, k: usize, states: &[Segment<'_>], dw: Option<&[f64]>, out: &mut [f64]) -> Result<()> {
        let c = self.coefficients;
        let (d, m) = (c.dim(), c.noise_dim());
        let x0s = self.x0.segment_at(k)?;
        let b0 = at_step(k, eval_b(c, &x0s, &EmpiricalMeasure::dirac(x0s)))?;
        let rebuild = |s: &Segment<'_>| x0s.to_buf().add_scaled(self.a, s);
        let own: Vec<SegmentBuf> = self.execution.map(states.len(), |i| rebuild(&states[i]));
        let companion: Option<Vec<SegmentBuf>> = match self.law {
            Some(paths) => {
                let segs = paths.iter().map(|t| t.segment_at(k)).collect::<Result<Vec<_>>>()?;
                Some(self.execution.map(segs.len(), |i| rebuild(&segs[i])))
            }
            None => None,
        };
        let law_bufs = companion.as_ref().unwrap_or(&own);
        let mu = EmpiricalMeasure::new(law_bufs.iter().map(|b| b.view()).collect())?;
        let summary = c.law_summary(&mu);
        let need_sigma = dw.is_some() || self.control.is_some();
        per_particle(self.execution, d, out, |i, row| {
            let xt = own[i].view();
            c.drift_with(&xt, &mu, &summary, row);
            finite_or(k, i, row)?;
            for (bj, b0j) in row.iter_mut().zip(&b0) {
                *bj = (*bj - b0j) / self.a;
            }
            let mut sig = Vec::new();
            if need_sigma {
                sig = vec![0.0; d * m];
                c.diffusion_with(&xt, &mu, &summary, &mut sig);
                finite_or(k, i, &sig)?;
            }
            if let Some(u) = self.control {
                add_matvec(&sig, u.at(k), row);
            }
            match dw {
                Some(w) => {
                    sig.iter_mut().for_each(|v| *v *= self.noise_scale);
                    assemble(self.h, row, Some((&sig, &w[i * m..(i + 1) * m])));
                }
                None => assemble(self.h, row, None),
            }
            Ok(())
        })
    }
}

/// Linearization at `X⁰`: drift `<Db(X⁰_t, δ), state_t> [+ E<D^L b, state_t>]
/// [+ σ(X⁰_t, δ) u]`, diffusion `σ(X⁰_t, δ)`.
struct LinearizedModel<'a> {
    coefficients: &'a dyn Coefficients,
    h: f64,
    x0: &'a Trajectory,
    lions: bool,
    control: Option<&'a Control>,
    execution: Execution,
}

impl StepModel for LinearizedModel<'_> {
    fn increments(&self, k: usize, states: &[Segment<'_>], dw: Option<&[f64]>, out: &mut [f64]) -> Result<()> {
        let c = self.coefficients;
        let (d, m) = (c.dim(), c.noise_dim());
        let x0s = self.x0.segment_at(k)?;
        let mu0 = EmpiricalMeasure::dirac(x0s);
        let sig0 = if dw.is_some() || self.control.is_some() {
            at_step(k, eval_sigma(c, &x0s, &mu0))?
        } else {
            Vec::new()
        };
        let lions_term = if self.lions {
            let atoms = vec![x0s; states.len()];
            at_step(k, lions_pairing(c, &x0s, &atoms, states))?
        } else {
            vec![0.0; d]
        };
        per_particle(self.execution, d, out, |i, row| {
            let drift = frechet_pairing(c, &x0s, &mu0, &states[i])
                .map_err(|_| Error::CoefficientEvaluation { step: k, particle: i })?;
            for ((r, a), l) in row.iter_mut().zip(&drift).zip(&lions_term) {
                *r = a + l;
            }
            if let Some(u) = self.control {
                add_matvec(&sig0, u.at(k), row);
            }
            finite_or(k, i, row)?;
            match dw {
                Some(w) => assemble(self.h, row, Some((&sig0, &w[i * m..(i + 1) * m]))),
                None => assemble(self.h, row, None),
            }
            Ok(())
        })
    }
}

fn engine<'a>(cfg: &'a SimConfig, particles: usize, initial: &'a SegmentBuf, noise_seed: Option<u64>) -> Engine<'a> {
    Engine {
        grid: cfg.grid,
        dim: cfg.dim(),
        particles,
        operator: cfg.operator.as_ref(),
        initial,
        noise: noise_seed.map(|s| NoiseSource::new(s, cfg.noise_dim())),
        execution: cfg.execution,
    }
}

fn noisy(cfg: &SimConfig) -> Option<u64> {
    (cfg.epsilon > 0.0).then_some(cfg.seed)
}

fn companion_seed(cfg: &SimConfig) -> u64 {
    match cfg.companion {
        super::CompanionNoise::Shared => cfg.seed,
        super::CompanionNoise::Independent => derive_seed(cfg.seed, COMPANION_TAG),
    }
}

fn check_path(cfg: &SimConfig, x0: &Trajectory) -> Result<()> {
    if x0.grid() != &cfg.grid || x0.dim() != cfg.dim() {
        return Err(Error::GridMismatch(
            "reference path does not live on the configured grid".into(),
        ));
    }
    Ok(())
}

fn zero_segment(cfg: &SimConfig) -> SegmentBuf {
    SegmentBuf::zeros(cfg.dim(), &cfg.grid)
}

/// Interacting particle system `dX ∈ −A(X)dt + b(X_t, μ_t)dt + √ε σ(X_t, μ_t)dW`
/// with `μ_t` the empirical law of the particle segments.
pub fn simulate_perturbed(cfg: &SimConfig) -> Result<SolutionBundle> {
    cfg.validate()?;
    let model = DirectModel {
        coefficients: cfg.coefficients.as_ref(),
        h: cfg.grid.h(),
        scale: cfg.epsilon.sqrt(),
        law: LawSource::Own,
        control: None,
        execution: cfg.execution,
    };
    engine(cfg, cfg.particles, &cfg.initial, noisy(cfg)).run(&model)
}

/// Controlled system with drift `b(X_t, μ_t) + σ(X_t, μ_t) u(t)`, where `μ_t`
/// is the law of an uncontrolled companion run (see [`super::CompanionNoise`]).
pub fn simulate_controlled(cfg: &SimConfig, u: &Control) -> Result<SolutionBundle> {
    cfg.validate()?;
    u.check_against(&cfg.grid, cfg.noise_dim())?;
    let companion = simulate_perturbed(&cfg.clone().with_seed(companion_seed(cfg)))?;
    let model = DirectModel {
        coefficients: cfg.coefficients.as_ref(),
        h: cfg.grid.h(),
        scale: cfg.epsilon.sqrt(),
        law: LawSource::Companion(&companion.particles),
        control: Some(u),
        execution: cfg.execution,
    };
    engine(cfg, cfg.particles, &cfg.initial, noisy(cfg)).run(&model)
}

/// Noiseless single path with law `δ` at its own segment.
pub fn solve_deterministic_limit(cfg: &SimConfig) -> Result<PathSolution> {
    cfg.validate()?;
    let model = DirectModel {
        coefficients: cfg.coefficients.as_ref(),
        h: cfg.grid.h(),
        scale: 0.0,
        law: LawSource::Own,
        control: None,
        execution: Execution::Sequential,
    };
    Ok(engine(cfg, 1, &cfg.initial, None).run(&model)?.into_single())
}

/// Skeleton path with drift `b(·, δ_{X⁰_t}) + σ(·, δ_{X⁰_t}) u(t)`, started at `ξ`.
pub fn solve_skeleton(cfg: &SimConfig, u: &Control, x0: &Trajectory) -> Result<PathSolution> {
    cfg.validate()?;
    check_path(cfg, x0)?;
    u.check_against(&cfg.grid, cfg.noise_dim())?;
    let model = DirectModel {
        coefficients: cfg.coefficients.as_ref(),
        h: cfg.grid.h(),
        scale: 0.0,
        law: LawSource::Path(x0),
        control: Some(u),
        execution: Execution::Sequential,
    };
    Ok(engine(cfg, 1, &cfg.initial, None).run(&model)?.into_single())
}

/// Moderate-deviation process `M̃ = (X̃ − X⁰)/a(ε)` with `a` from the
/// configured rule; with `u` the controlled variant, whose law argument is
/// the uncontrolled deviation run.
pub fn simulate_mdp_deviation(cfg: &SimConfig, x0: &Trajectory, u: Option<&Control>) -> Result<SolutionBundle> {
    cfg.mdp_scale.validate()?;
    simulate_mdp_with_scale(cfg, x0, cfg.mdp_scale.scale(cfg.epsilon), u)
}

/// [`simulate_mdp_deviation`] with an explicit normalization `a > 0`.
pub fn simulate_mdp_with_scale(
    cfg: &SimConfig,
    x0: &Trajectory,
    a: f64,
    u: Option<&Control>,
) -> Result<SolutionBundle> {
    cfg.validate()?;
    check_path(cfg, x0)?;
    if !(a > 0.0) || !a.is_finite() {
        return Err(Error::Precondition(format!(
            "deviation scale must be positive, got {a}"
        )));
    }
    let d = cfg.dim();
    let mut j0 = vec![0.0; d];
    cfg.operator.resolvent(cfg.grid.h(), &vec![0.0; d], &mut j0)?;
    if j0.iter().any(|v| v.abs() > 1e-12) {
        return Err(Error::Precondition("deviation equation requires 0 ∈ A(0)".into()));
    }
    let companion = match u {
        Some(u) => {
            u.check_against(&cfg.grid, cfg.noise_dim())?;
            Some(simulate_mdp_with_scale(
                &cfg.clone().with_seed(companion_seed(cfg)),
                x0,
                a,
                None,
            )?)
        }
        None => None,
    };
    let model = DeviationModel {
        coefficients: cfg.coefficients.as_ref(),
        h: cfg.grid.h(),
        x0,
        a,
        noise_scale: cfg.epsilon.sqrt() / a,
        law: companion.as_ref().map(|b| b.particles.as_slice()),
        control: u,
        execution: cfg.execution,
    };
    let zero = zero_segment(cfg);
    engine(cfg, cfg.particles, &zero, noisy(cfg)).run(&model)
}

/// Moderate-deviation skeleton: linearized drift at `X⁰` plus
/// `σ(X⁰_t, δ) u(t)`, started at 0.
pub fn solve_mdp_skeleton(cfg: &SimConfig, u: &Control, x0: &Trajectory) -> Result<PathSolution> {
    cfg.validate()?;
    check_path(cfg, x0)?;
    u.check_against(&cfg.grid, cfg.noise_dim())?;
    let model = LinearizedModel {
        coefficients: cfg.coefficients.as_ref(),
        h: cfg.grid.h(),
        x0,
        lions: false,
        control: Some(u),
        execution: Execution::Sequential,
    };
    let zero = zero_segment(cfg);
    Ok(engine(cfg, 1, &zero, None).run(&model)?.into_single())
}

/// Coupled central-limit pair: the normalized deviation
/// `Z^ε = (X̂^ε − X⁰)/√ε` and its linear limit `Z`, driven by the same
/// Brownian increments.
pub fn simulate_clt_pair(cfg: &SimConfig, x0: &Trajectory) -> Result<(SolutionBundle, SolutionBundle)> {
    cfg.validate()?;
    check_path(cfg, x0)?;
    if !(cfg.epsilon > 0.0) {
        return Err(Error::Precondition("central-limit pair needs epsilon > 0".into()));
    }
    let d = cfg.dim();
    let mut p0 = vec![0.0; d];
    cfg.operator.domain_project(&vec![0.0; d], &mut p0);
    if p0.iter().any(|&v| v != 0.0) {
        return Err(Error::Precondition(
            "central-limit pair requires 0 in the closed domain of A".into(),
        ));
    }
    let zero = zero_segment(cfg);
    let deviation = DeviationModel {
        coefficients: cfg.coefficients.as_ref(),
        h: cfg.grid.h(),
        x0,
        a: cfg.epsilon.sqrt(),
        noise_scale: 1.0,
        law: None,
        control: None,
        execution: cfg.execution,
    };
    let z_eps = engine(cfg, cfg.particles, &zero, Some(cfg.seed)).run(&deviation)?;
    let limit = LinearizedModel {
        coefficients: cfg.coefficients.as_ref(),
        h: cfg.grid.h(),
        x0,
        lions: true,
        control: None,
        execution: cfg.execution,
    };
    let z = engine(cfg, cfg.particles, &zero, Some(cfg.seed)).run(&limit)?;
    Ok((z_eps, z))
}
