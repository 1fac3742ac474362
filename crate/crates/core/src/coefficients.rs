//! Coefficient pairs `(b, σ)` on segment space × measures, their path and
//! measure derivatives, and sampling-based hypothesis checkers.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::measure::{w2_assignment_with, EmpiricalMeasure};
use crate::path::{Segment, SegmentBuf, TimeGrid};

/// Drift `b: 𝒞 × 𝒫₂ → R^d` and diffusion `σ: 𝒞 × 𝒫₂ → R^{d×m}`.
///
/// Evaluation is split in two so that solvers can summarize the measure once
/// per time step: [`Coefficients::law_summary`] reduces `μ` to whatever the
/// coefficient needs, and the `*_with` methods reuse it for every particle.
pub trait Coefficients: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;
    fn noise_dim(&self) -> usize;

    /// Writes `b(ζ, μ)` into `out` (length `d`).
    fn drift(&self, zeta: &Segment<'_>, mu: &EmpiricalMeasure<'_>, out: &mut [f64]) {
        let s = self.law_summary(mu);
        self.drift_with(zeta, mu, &s, out)
    }

    /// Writes `σ(ζ, μ)` row-major into `out` (length `d * m`).
    fn diffusion(&self, zeta: &Segment<'_>, mu: &EmpiricalMeasure<'_>, out: &mut [f64]) {
        let s = self.law_summary(mu);
        self.diffusion_with(zeta, mu, &s, out)
    }

    fn law_summary(&self, _mu: &EmpiricalMeasure<'_>) -> Vec<f64> {
        Vec::new()
    }

    fn drift_with(&self, zeta: &Segment<'_>, mu: &EmpiricalMeasure<'_>, summary: &[f64], out: &mut [f64]);

    fn diffusion_with(&self, zeta: &Segment<'_>, mu: &EmpiricalMeasure<'_>, summary: &[f64], out: &mut [f64]);

    /// Closed-form `<Db(ζ, μ), v>`. Returns `false` when not provided.
    fn frechet_drift(
        &self,
        _zeta: &Segment<'_>,
        _mu: &EmpiricalMeasure<'_>,
        _v: &Segment<'_>,
        _out: &mut [f64],
    ) -> bool {
        false
    }

    /// Closed-form `(1/P) Σ_i <D^L b(ζ, μ)(atom_i), dir_i>` with
    /// `μ = (1/P) Σ δ_{atom_i}`. Returns `false` when not provided.
    fn lions_drift(
        &self,
        _zeta: &Segment<'_>,
        _atoms: &EmpiricalMeasure<'_>,
        _directions: &[Segment<'_>],
        _out: &mut [f64],
    ) -> bool {
        false
    }

    /// True when `σ` does not depend on its arguments.
    fn constant_diffusion(&self) -> bool {
        false
    }
}

/// Scalar nonlinearity of an [`Functional`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Nonlinearity {
    #[default]
    Identity,
    Tanh,
}

impl Nonlinearity {
    fn apply(self, x: f64) -> f64 {
        match self {
            Nonlinearity::Identity => x,
            Nonlinearity::Tanh => x.tanh(),
        }
    }

    fn derivative(self, x: f64) -> f64 {
        match self {
            Nonlinearity::Identity => 1.0,
            Nonlinearity::Tanh => 1.0 - x.tanh().powi(2),
        }
    }
}

/// `w ↦ s(c0 + C1 w(0) + C2 w(-r0) + C3 (1/r0) ∫ w)`, applied coordinatewise.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Functional {
    #[serde(default)]
    pub s: Nonlinearity,
    #[serde(default)]
    pub c0: f64,
    #[serde(default, rename = "C1")]
    pub c1: f64,
    #[serde(default, rename = "C2")]
    pub c2: f64,
    #[serde(default, rename = "C3")]
    pub c3: f64,
}

impl Functional {
    pub fn constant(c0: f64) -> Self {
        Self { c0, ..Self::default() }
    }

    /// Linear part `C1 w(0) + C2 w(-r0) + C3 avg(w)` on coordinate `j`.
    /// The average uses the trapezoid rule on the segment grid.
    fn linear(&self, w: &Segment<'_>, j: usize) -> f64 {
        let n = w.len();
        let head = w.head()[j];
        let tail = w.tail()[j];
        let mut acc = self.c1 * head + self.c2 * tail;
        if self.c3 != 0.0 {
            let avg = if n == 1 {
                head
            } else {
                let s: f64 = w.nodes().map(|v| v[j]).sum();
                (s - 0.5 * (head + tail)) / (n - 1) as f64
            };
            acc += self.c3 * avg;
        }
        acc
    }

    /// Linear part evaluated on the constant path 1.
    fn linear_on_one(&self) -> f64 {
        self.c1 + self.c2 + self.c3
    }

    fn is_constant(&self) -> bool {
        self.c1 == 0.0 && self.c2 == 0.0 && self.c3 == 0.0
    }
}

/// `φ(u)(θ) = α u(θ) + β`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureMap {
    #[serde(default)]
    pub alpha: f64,
    #[serde(default)]
    pub beta: f64,
}

/// `b(ζ, μ) = f(ζ + ∫ φ dμ)`, `σ(ζ, μ) = g(ζ)` with diagonal `σ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Example5Family {
    #[serde(default = "one")]
    pub dim: usize,
    pub f: Functional,
    pub g: Functional,
    #[serde(default)]
    pub phi: MeasureMap,
}

fn one() -> usize {
    1
}

impl Example5Family {
    pub fn new(f: Functional, g: Functional, phi: MeasureMap) -> Self {
        Self { dim: 1, f, g, phi }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.f.c0,
            self.f.c1,
            self.f.c2,
            self.f.c3,
            self.g.c0,
            self.g.c1,
            self.g.c2,
            self.g.c3,
            self.phi.alpha,
            self.phi.beta,
        ];
        if self.dim == 0 || all.iter().any(|v| !v.is_finite()) {
            return Err(Error::Precondition(
                "example5 parameters must be finite and dim positive".into(),
            ));
        }
        Ok(())
    }

    // argument of s in f, coordinate j
    fn inner(&self, zeta: &Segment<'_>, summary: &[f64], j: usize) -> f64 {
        self.f.c0 + self.f.linear(zeta, j) + summary[j]
    }
}

impl Coefficients for Example5Family {
    fn dim(&self) -> usize {
        self.dim
    }

    fn noise_dim(&self) -> usize {
        self.dim
    }

    /// Per coordinate: `ℓ_f(∫ φ dμ) = α mean_i ℓ_f(u_i) + β ℓ_f(1)`.
    fn law_summary(&self, mu: &EmpiricalMeasure<'_>) -> Vec<f64> {
        let p = mu.len() as f64;
        (0..self.dim)
            .map(|j| {
                let mean = if self.phi.alpha != 0.0 {
                    mu.atoms().iter().map(|a| self.f.linear(a, j)).sum::<f64>() / p
                } else {
                    0.0
                };
                self.phi.alpha * mean + self.phi.beta * self.f.linear_on_one()
            })
            .collect()
    }

    fn drift_with(&self, zeta: &Segment<'_>, _mu: &EmpiricalMeasure<'_>, summary: &[f64], out: &mut [f64]) {
        for (j, o) in out.iter_mut().enumerate() {
            *o = self.f.s.apply(self.inner(zeta, summary, j));
        }
    }

    fn diffusion_with(&self, zeta: &Segment<'_>, _mu: &EmpiricalMeasure<'_>, _summary: &[f64], out: &mut [f64]) {
        let d = self.dim;
        out.iter_mut().for_each(|v| *v = 0.0);
        for j in 0..d {
            out[j * d + j] = self.g.s.apply(self.g.c0 + self.g.linear(zeta, j));
        }
    }

    fn frechet_drift(&self, zeta: &Segment<'_>, mu: &EmpiricalMeasure<'_>, v: &Segment<'_>, out: &mut [f64]) -> bool {
        let summary = self.law_summary(mu);
        for (j, o) in out.iter_mut().enumerate() {
            *o = self.f.s.derivative(self.inner(zeta, &summary, j)) * self.f.linear(v, j);
        }
        true
    }

    fn lions_drift(
        &self,
        zeta: &Segment<'_>,
        atoms: &EmpiricalMeasure<'_>,
        directions: &[Segment<'_>],
        out: &mut [f64],
    ) -> bool {
        let summary = self.law_summary(atoms);
        let p = directions.len() as f64;
        for (j, o) in out.iter_mut().enumerate() {
            let mean_dir = directions.iter().map(|v| self.f.linear(v, j)).sum::<f64>() / p;
            *o = self.f.s.derivative(self.inner(zeta, &summary, j)) * self.phi.alpha * mean_dir;
        }
        true
    }

    fn constant_diffusion(&self) -> bool {
        self.g.is_constant()
    }
}

type DriftFn = dyn Fn(&Segment<'_>, &EmpiricalMeasure<'_>, &mut [f64]) + Send + Sync;

/// Coefficients given by closures, without derivative providers. Derivatives
/// fall back to finite differences.
pub struct CustomCoefficients {
    dim: usize,
    noise_dim: usize,
    drift: Box<DriftFn>,
    diffusion: Box<DriftFn>,
}

impl fmt::Debug for CustomCoefficients {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomCoefficients")
            .field("dim", &self.dim)
            .field("noise_dim", &self.noise_dim)
            .finish_non_exhaustive()
    }
}

impl CustomCoefficients {
    pub fn new(
        dim: usize,
        noise_dim: usize,
        drift: impl Fn(&Segment<'_>, &EmpiricalMeasure<'_>, &mut [f64]) + Send + Sync + 'static,
        diffusion: impl Fn(&Segment<'_>, &EmpiricalMeasure<'_>, &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        Self {
            dim,
            noise_dim,
            drift: Box::new(drift),
            diffusion: Box::new(diffusion),
        }
    }
}

impl Coefficients for CustomCoefficients {
    fn dim(&self) -> usize {
        self.dim
    }
    fn noise_dim(&self) -> usize {
        self.noise_dim
    }
    fn drift_with(&self, zeta: &Segment<'_>, mu: &EmpiricalMeasure<'_>, _s: &[f64], out: &mut [f64]) {
        (self.drift)(zeta, mu, out)
    }
    fn diffusion_with(&self, zeta: &Segment<'_>, mu: &EmpiricalMeasure<'_>, _s: &[f64], out: &mut [f64]) {
        (self.diffusion)(zeta, mu, out)
    }
}

fn check_finite(v: &[f64]) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::CoefficientEvaluation { step: 0, particle: 0 })
    }
}

/// `b(ζ, μ)`, rejecting non-finite output.
pub fn eval_b(c: &dyn Coefficients, zeta: &Segment<'_>, mu: &EmpiricalMeasure<'_>) -> Result<Vec<f64>> {
    if zeta.dim() != c.dim() {
        return Err(Error::Dimension {
            expected: c.dim(),
            got: zeta.dim(),
        });
    }
    let mut out = vec![0.0; c.dim()];
    c.drift(zeta, mu, &mut out);
    check_finite(&out)?;
    Ok(out)
}

/// `σ(ζ, μ)` row-major, rejecting non-finite output.
pub fn eval_sigma(c: &dyn Coefficients, zeta: &Segment<'_>, mu: &EmpiricalMeasure<'_>) -> Result<Vec<f64>> {
    let mut out = vec![0.0; c.dim() * c.noise_dim()];
    c.diffusion(zeta, mu, &mut out);
    check_finite(&out)?;
    Ok(out)
}

/// Finite-difference step `1e-5 (1 + ‖ζ‖∞) / (1 + ‖v‖∞)`.
pub fn fd_step(zeta_norm: f64, dir_norm: f64) -> f64 {
    1e-5 * (1.0 + zeta_norm) / (1.0 + dir_norm)
}

/// `<Db(ζ, μ), v>`: closed form when the coefficient provides one, otherwise
/// a central difference in direction `v`.
pub fn frechet_pairing(
    c: &dyn Coefficients,
    zeta: &Segment<'_>,
    mu: &EmpiricalMeasure<'_>,
    v: &Segment<'_>,
) -> Result<Vec<f64>> {
    if !zeta.same_shape(v) {
        return Err(Error::GridMismatch("direction and base segment differ".into()));
    }
    let mut out = vec![0.0; c.dim()];
    if c.frechet_drift(zeta, mu, v, &mut out) {
        check_finite(&out)?;
        return Ok(out);
    }
    frechet_pairing_fd(c, zeta, mu, v)
}

/// Central-difference Fréchet pairing, regardless of closed-form providers.
pub fn frechet_pairing_fd(
    c: &dyn Coefficients,
    zeta: &Segment<'_>,
    mu: &EmpiricalMeasure<'_>,
    v: &Segment<'_>,
) -> Result<Vec<f64>> {
    let delta = fd_step(zeta.sup_norm(), v.sup_norm());
    let base = zeta.to_buf();
    let plus = base.add_scaled(delta, v);
    let minus = base.add_scaled(-delta, v);
    let bp = eval_b(c, &plus.view(), mu)?;
    let bm = eval_b(c, &minus.view(), mu)?;
    Ok(bp.iter().zip(&bm).map(|(p, m)| (p - m) / (2.0 * delta)).collect())
}

/// `(1/P) Σ_i <D^L b(ζ, μ)(atom_i), dir_i>`: closed form when provided,
/// otherwise a push-forward difference quotient along `atom_i ± δ dir_i`.
pub fn lions_pairing(
    c: &dyn Coefficients,
    zeta: &Segment<'_>,
    atoms: &[Segment<'_>],
    directions: &[Segment<'_>],
) -> Result<Vec<f64>> {
    if atoms.len() != directions.len() || atoms.is_empty() {
        return Err(Error::Precondition(format!(
            "lions pairing needs one direction per atom ({} atoms, {} directions)",
            atoms.len(),
            directions.len()
        )));
    }
    let mu = EmpiricalMeasure::new(atoms.to_vec())?;
    let mut out = vec![0.0; c.dim()];
    if c.lions_drift(zeta, &mu, directions, &mut out) {
        check_finite(&out)?;
        return Ok(out);
    }
    lions_pairing_fd(c, zeta, atoms, directions)
}

/// Push-forward difference quotient
/// `(b(ζ, μ∘(Id+δφ)⁻¹) − b(ζ, μ∘(Id−δφ)⁻¹)) / 2δ` at an empirical `μ`.
pub fn lions_pairing_fd(
    c: &dyn Coefficients,
    zeta: &Segment<'_>,
    atoms: &[Segment<'_>],
    directions: &[Segment<'_>],
) -> Result<Vec<f64>> {
    if atoms.len() != directions.len() || atoms.is_empty() {
        return Err(Error::Precondition("lions pairing needs one direction per atom".into()));
    }
    let dir_norm = directions.iter().map(|d| d.sup_norm()).fold(0.0, f64::max);
    let delta = fd_step(zeta.sup_norm(), dir_norm);
    let shifted = |sign: f64| -> Vec<SegmentBuf> {
        atoms
            .iter()
            .zip(directions)
            .map(|(a, d)| a.to_buf().add_scaled(sign * delta, d))
            .collect()
    };
    let plus = shifted(1.0);
    let minus = shifted(-1.0);
    let mu_p = EmpiricalMeasure::new(plus.iter().map(|s| s.view()).collect())?;
    let mu_m = EmpiricalMeasure::new(minus.iter().map(|s| s.view()).collect())?;
    let bp = eval_b(c, zeta, &mu_p)?;
    let bm = eval_b(c, zeta, &mu_m)?;
    Ok(bp.iter().zip(&bm).map(|(p, m)| (p - m) / (2.0 * delta)).collect())
}

/// Where checkers draw their random segments and measures from.
#[derive(Clone, Copy, Debug)]
pub struct SampleSpace {
    pub grid: TimeGrid,
    /// Node values are drawn from `[-range, range]`.
    pub range: f64,
    /// Atoms per sampled measure.
    pub atoms: usize,
}

impl SampleSpace {
    pub fn new(grid: TimeGrid) -> Self {
        Self {
            grid,
            range: 2.0,
            atoms: 4,
        }
    }

    fn segment(&self, rng: &mut ChaCha8Rng, dim: usize) -> SegmentBuf {
        let amp = rng.gen_range(0.0..=self.range);
        let n = dim * self.grid.segment_len();
        SegmentBuf::new(
            dim,
            self.grid.h(),
            (0..n).map(|_| amp * rng.gen_range(-1.0..=1.0)).collect(),
        )
    }

    fn nearby(&self, rng: &mut ChaCha8Rng, base: &SegmentBuf) -> SegmentBuf {
        let scale = self.range * 10f64.powf(rng.gen_range(-3.0..0.0));
        let data = base
            .data()
            .iter()
            .map(|v| v + scale * rng.gen_range(-1.0..=1.0))
            .collect();
        SegmentBuf::new(base.dim(), self.grid.h(), data)
    }
}

/// Empirical constant estimate with a range-doubling stability probe.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConstantEstimate {
    /// Maximum ratio over samples drawn at the configured range.
    pub estimate: f64,
    /// Same statistic with the sampling range quadrupled.
    pub estimate_wide: f64,
    /// False when the wide-range estimate exceeds twice the base one.
    pub bounded: bool,
    pub samples: usize,
}

fn growth_ratio_max(c: &dyn Coefficients, space: &SampleSpace, n: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = c.dim();
    let mut best: f64 = 0.0;
    let mut b = vec![0.0; d];
    let mut s = vec![0.0; d * c.noise_dim()];
    for _ in 0..n {
        let zeta = space.segment(&mut rng, d);
        let atoms: Vec<SegmentBuf> = (0..space.atoms).map(|_| space.segment(&mut rng, d)).collect();
        let mu = EmpiricalMeasure::new(atoms.iter().map(|a| a.view()).collect()).expect("atoms");
        c.drift(&zeta.view(), &mu, &mut b);
        c.diffusion(&zeta.view(), &mu, &mut s);
        let num: f64 = b.iter().map(|v| v * v).sum::<f64>() + s.iter().map(|v| v * v).sum::<f64>();
        let den = 1.0 + zeta.view().sup_norm().powi(2) + mu.second_moment();
        let r = num / den;
        best = if r.is_nan() { f64::INFINITY } else { best.max(r) };
    }
    best
}

/// Estimates the linear-growth constant
/// `max (|b|² + ‖σ‖²) / (1 + ‖ζ‖∞² + μ(‖·‖∞²))` over random inputs.
pub fn check_growth(c: &dyn Coefficients, space: &SampleSpace, n_samples: usize, rng_seed: u64) -> ConstantEstimate {
    let estimate = growth_ratio_max(c, space, n_samples, rng_seed);
    let wide = SampleSpace {
        range: 4.0 * space.range,
        ..*space
    };
    let estimate_wide = growth_ratio_max(c, &wide, n_samples, rng_seed);
    ConstantEstimate {
        estimate,
        estimate_wide,
        bounded: estimate.is_finite() && estimate_wide <= 2.0 * estimate + 1e-12,
        samples: n_samples,
    }
}

fn lipschitz_ratio_max(c: &dyn Coefficients, space: &SampleSpace, n: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = c.dim();
    let m = c.noise_dim();
    let mut best: f64 = 0.0;
    let (mut b1, mut b2) = (vec![0.0; d], vec![0.0; d]);
    let (mut s1, mut s2) = (vec![0.0; d * m], vec![0.0; d * m]);
    for _ in 0..n {
        let zeta = space.segment(&mut rng, d);
        let eta = space.nearby(&mut rng, &zeta);
        let atoms: Vec<SegmentBuf> = (0..space.atoms).map(|_| space.segment(&mut rng, d)).collect();
        let moved: Vec<SegmentBuf> = atoms.iter().map(|a| space.nearby(&mut rng, a)).collect();
        let mu = EmpiricalMeasure::new(atoms.iter().map(|a| a.view()).collect()).expect("atoms");
        let nu = EmpiricalMeasure::new(moved.iter().map(|a| a.view()).collect()).expect("atoms");
        let w2 = w2_assignment_with(&mu, &nu, Execution::Sequential).expect("equal sizes");
        let den = zeta.view().sup_distance(&eta.view()).powi(2) + w2 * w2;
        if den == 0.0 {
            continue;
        }
        c.drift(&zeta.view(), &mu, &mut b1);
        c.drift(&eta.view(), &nu, &mut b2);
        c.diffusion(&zeta.view(), &mu, &mut s1);
        c.diffusion(&eta.view(), &nu, &mut s2);
        let db: f64 = b1.iter().zip(&b2).map(|(x, y)| (x - y).powi(2)).sum();
        let ds: f64 = s1.iter().zip(&s2).map(|(x, y)| (x - y).powi(2)).sum();
        let r = db.max(ds) / den;
        best = if r.is_nan() { f64::INFINITY } else { best.max(r) };
    }
    best
}

/// Estimates the Lipschitz constant
/// `max |Δb|² / (‖ζ−η‖∞² + W2(μ,ν)²)` (and the same for `σ`) over random
/// nearby pairs.
pub fn check_lipschitz(c: &dyn Coefficients, space: &SampleSpace, n_samples: usize, rng_seed: u64) -> ConstantEstimate {
    let estimate = lipschitz_ratio_max(c, space, n_samples, rng_seed);
    let wide = SampleSpace {
        range: 4.0 * space.range,
        ..*space
    };
    let estimate_wide = lipschitz_ratio_max(c, &wide, n_samples, rng_seed);
    ConstantEstimate {
        estimate,
        estimate_wide,
        bounded: estimate.is_finite() && estimate_wide <= 2.0 * estimate + 1e-12,
        samples: n_samples,
    }
}

/// Estimates the Lipschitz constant of `ζ ↦ Db(ζ, μ)` in the dual norm,
/// probed along random unit directions.
pub fn check_frechet_lipschitz(
    c: &dyn Coefficients,
    space: &SampleSpace,
    n_samples: usize,
    rng_seed: u64,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let d = c.dim();
    let mut best: f64 = 0.0;
    for _ in 0..n_samples {
        let zeta = space.segment(&mut rng, d);
        let eta = space.nearby(&mut rng, &zeta);
        let atoms: Vec<SegmentBuf> = (0..space.atoms).map(|_| space.segment(&mut rng, d)).collect();
        let moved: Vec<SegmentBuf> = atoms.iter().map(|a| space.nearby(&mut rng, a)).collect();
        let mu = EmpiricalMeasure::new(atoms.iter().map(|a| a.view()).collect())?;
        let nu = EmpiricalMeasure::new(moved.iter().map(|a| a.view()).collect())?;
        let mut v = space.segment(&mut rng, d);
        let vn = v.view().sup_norm();
        if vn == 0.0 {
            continue;
        }
        v.data_mut().iter_mut().for_each(|x| *x /= vn);
        let p = frechet_pairing(c, &zeta.view(), &mu, &v.view())?;
        let q = frechet_pairing(c, &eta.view(), &nu, &v.view())?;
        let w2 = w2_assignment_with(&mu, &nu, Execution::Sequential)?;
        let den = zeta.view().sup_distance(&eta.view()).powi(2) + w2 * w2;
        if den > 0.0 {
            let num: f64 = p.iter().zip(&q).map(|(a, b)| (a - b).powi(2)).sum();
            best = best.max(num / den);
        }
    }
    Ok(best)
}

/// Estimates `sup |E<D^L b(ζ,μ)(X), φ>| / (E‖φ‖∞²)^{1/2}` over random inputs.
pub fn check_lions_bound(c: &dyn Coefficients, space: &SampleSpace, n_samples: usize, rng_seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let d = c.dim();
    let mut best: f64 = 0.0;
    for _ in 0..n_samples {
        let zeta = space.segment(&mut rng, d);
        let atoms: Vec<SegmentBuf> = (0..space.atoms).map(|_| space.segment(&mut rng, d)).collect();
        let dirs: Vec<SegmentBuf> = (0..space.atoms).map(|_| space.segment(&mut rng, d)).collect();
        let norm2 = dirs.iter().map(|v| v.view().sup_norm().powi(2)).sum::<f64>() / dirs.len() as f64;
        if norm2 == 0.0 {
            continue;
        }
        let a: Vec<Segment<'_>> = atoms.iter().map(|s| s.view()).collect();
        let v: Vec<Segment<'_>> = dirs.iter().map(|s| s.view()).collect();
        let p = lions_pairing(c, &zeta.view(), &a, &v)?;
        let num = p.iter().map(|x| x * x).sum::<f64>().sqrt();
        best = best.max(num / norm2.sqrt());
    }
    Ok(best)
}
