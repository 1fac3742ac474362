//! Monte Carlo scaling studies of the small-noise limits.
//!
//! Each replica is an independent particle system seeded by
//! `derive_seed(seed, replica)`. The same replica seeds are reused at every
//! `ε`, so the estimates across the grid share their Brownian paths. Replicas
//! are grouped into batches and the standard error is taken over batch means.

use std::io::Write;
use std::time::Instant;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::noise::derive_seed;
use crate::solver::{
    simulate_clt_pair, simulate_mdp_deviation, simulate_perturbed, solve_deterministic_limit, solve_skeleton, Control,
    SimConfig,
};

/// Minimum number of batches behind a standard error.
pub const MIN_BATCHES: usize = 8;

const BOOTSTRAP_RESAMPLES: usize = 2000;
const BOOTSTRAP_SEED: u64 = 0x5EED_B007;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Batching {
    pub batches: usize,
    pub per_batch: usize,
}

impl Default for Batching {
    fn default() -> Self {
        Self {
            batches: MIN_BATCHES,
            per_batch: 32,
        }
    }
}

impl Batching {
    pub fn replicas(&self) -> usize {
        self.batches * self.per_batch
    }

    pub fn validate(&self) -> Result<()> {
        if self.batches < MIN_BATCHES || self.per_batch == 0 {
            return Err(Error::Precondition(format!(
                "need at least {MIN_BATCHES} batches of at least one replica, got {}x{}",
                self.batches, self.per_batch
            )));
        }
        Ok(())
    }
}

/// Pass thresholds. The limit theorems have non-constructive constants, so
/// these are chosen for desk-scale runs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Thresholds {
    /// Allowed increase between consecutive levels, in combined standard
    /// errors.
    pub decrease_se: f64,
    /// Upper bound for the estimate at the smallest `ε` (LLN and MDP).
    pub final_value: f64,
    /// Largest max/min ratio of the MDP fourth moments.
    pub fourth_moment_ratio: f64,
    /// CLT slopes must reach `p − slope_tolerance`.
    pub slope_tolerance: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            decrease_se: 2.0,
            final_value: 1e-2,
            fourth_moment_ratio: 5.0,
            slope_tolerance: 0.25,
        }
    }
}

/// Batch-mean estimate at one `ε`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub epsilon: f64,
    pub mean: f64,
    pub std_error: f64,
    pub batch_means: Vec<f64>,
}

impl Estimate {
    pub fn from_batches(epsilon: f64, batch_means: Vec<f64>) -> Self {
        let n = batch_means.len() as f64;
        let mean = batch_means.iter().sum::<f64>() / n;
        let var = if batch_means.len() > 1 {
            batch_means.iter().map(|b| (b - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Self {
            epsilon,
            mean,
            std_error: (var / n).sqrt(),
            batch_means,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub statistic: String,
    pub estimates: Vec<Estimate>,
}

impl Series {
    pub fn means(&self) -> Vec<f64> {
        self.estimates.iter().map(|e| e.mean).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    /// 95% percentile bootstrap interval over batch resamples.
    pub ci_low: f64,
    pub ci_high: f64,
    pub points: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self {
            name: name.to_string(),
            passed,
            detail,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Lln,
    Mdp,
    Clt,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub kind: ExperimentKind,
    pub epsilon_grid: Vec<f64>,
    pub particles: usize,
    pub batching: Batching,
    pub seed: u64,
    pub series: Vec<Series>,
    pub fit: Option<SlopeFit>,
    /// Every replica returned exactly zero, so no slope is fitted.
    pub exact_match: bool,
    pub checks: Vec<Check>,
    pub passed: bool,
    pub runtime_seconds: f64,
}

impl ExperimentReport {
    pub fn series(&self, statistic: &str) -> Option<&Series> {
        self.series.iter().find(|s| s.statistic == statistic)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// Rows `epsilon,batch,statistic,value`; batch `mean` and `std_error`
    /// rows follow the per-batch rows of each estimate.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "epsilon,batch,statistic,value")?;
        for s in &self.series {
            for e in &s.estimates {
                for (b, v) in e.batch_means.iter().enumerate() {
                    writeln!(w, "{},{b},{},{v}", e.epsilon, s.statistic)?;
                }
                writeln!(w, "{},mean,{},{}", e.epsilon, s.statistic, e.mean)?;
                writeln!(w, "{},std_error,{},{}", e.epsilon, s.statistic, e.std_error)?;
            }
        }
        Ok(())
    }
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() || grid.iter().any(|e| !(*e > 0.0) || !e.is_finite()) {
        return Err(Error::Precondition(
            "epsilon grid must be non-empty and positive".into(),
        ));
    }
    if grid.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Precondition("epsilon grid must be strictly decreasing".into()));
    }
    Ok(())
}

/// Runs `stats` on every replica at each `ε` and returns, per statistic, one
/// estimate per `ε`. `stats` receives a configuration with the replica seed
/// and `ε` set.
fn replicate<F>(cfg: &SimConfig, grid: &[f64], batching: Batching, names: &[&str], stats: F) -> Result<Vec<Series>>
where
    F: Fn(&SimConfig) -> Result<Vec<f64>> + Sync + Send,
{
    batching.validate()?;
    // replicas are the outer parallel loop; each one runs on its own thread
    let inner = if cfg.execution.is_parallel() {
        Execution::Sequential
    } else {
        cfg.execution
    };
    let mut series: Vec<Series> = names
        .iter()
        .map(|n| Series {
            statistic: n.to_string(),
            estimates: Vec::with_capacity(grid.len()),
        })
        .collect();
    for &eps in grid {
        let per_replica = cfg.execution.try_map(batching.replicas(), |r| {
            let rc = cfg
                .clone()
                .with_epsilon(eps)
                .with_seed(derive_seed(cfg.seed, r as u64))
                .with_execution(inner);
            stats(&rc)
        })?;
        for (j, s) in series.iter_mut().enumerate() {
            let batch_means = per_replica
                .chunks(batching.per_batch)
                .map(|c| c.iter().map(|v| v[j]).sum::<f64>() / c.len() as f64)
                .collect();
            s.estimates.push(Estimate::from_batches(eps, batch_means));
        }
    }
    Ok(series)
}

fn mean_over<I: Iterator<Item = Result<f64>>>(n: usize, it: I) -> Result<f64> {
    let mut acc = 0.0;
    for v in it {
        acc += v?;
    }
    Ok(acc / n as f64)
}

fn decreasing_check(name: &str, s: &Series, k_se: f64) -> Check {
    let mut worst = f64::NEG_INFINITY;
    let mut ok = true;
    for w in s.estimates.windows(2) {
        let se = (w[0].std_error.powi(2) + w[1].std_error.powi(2)).sqrt();
        let rise = w[1].mean - w[0].mean;
        worst = worst.max(rise - k_se * se);
        ok &= rise <= k_se * se;
    }
    Check::new(
        name,
        ok,
        format!("largest rise beyond {k_se} standard errors: {}", worst.max(0.0)),
    )
}

fn final_check(name: &str, s: &Series, bound: f64) -> Check {
    let last = s.estimates.last().map_or(f64::NAN, |e| e.mean);
    Check::new(
        name,
        last < bound,
        format!("final estimate {last} against bound {bound}"),
    )
}

#[allow(clippy::too_many_arguments)]
fn finish(
    kind: ExperimentKind,
    cfg: &SimConfig,
    grid: &[f64],
    batching: Batching,
    series: Vec<Series>,
    fit: Option<SlopeFit>,
    exact_match: bool,
    checks: Vec<Check>,
    start: Instant,
) -> ExperimentReport {
    ExperimentReport {
        kind,
        epsilon_grid: grid.to_vec(),
        particles: cfg.particles,
        batching,
        seed: cfg.seed,
        series,
        fit,
        exact_match,
        passed: checks.iter().all(|c| c.passed),
        checks,
        runtime_seconds: start.elapsed().as_secs_f64(),
    }
}

/// Estimates `E sup_t |X^ε(t) − X⁰(t)|²` per `ε`.
///
/// Passes when the estimates decrease up to `decrease_se` combined standard
/// errors and the last one is below `final_value`.
pub fn lln_experiment(
    cfg: &SimConfig,
    grid: &[f64],
    batching: Batching,
    thresholds: &Thresholds,
) -> Result<ExperimentReport> {
    let start = Instant::now();
    check_grid(grid)?;
    cfg.validate()?;
    let x0 = solve_deterministic_limit(cfg)?.path;
    let series = replicate(cfg, grid, batching, &["sup_sq_error"], |rc| {
        let b = simulate_perturbed(rc)?;
        Ok(vec![mean_over(
            b.len(),
            b.particles.iter().map(|p| Ok(p.sup_distance(&x0)?.powi(2))),
        )?])
    })?;
    let checks = vec![
        decreasing_check("decreasing", &series[0], thresholds.decrease_se),
        final_check("final_below_threshold", &series[0], thresholds.final_value),
    ];
    Ok(finish(
        ExperimentKind::Lln,
        cfg,
        grid,
        batching,
        series,
        None,
        false,
        checks,
        start,
    ))
}

/// Moderate-deviation moments with `a(ε)` from `cfg.mdp_scale`.
///
/// Series: `second_moment` of the uncontrolled `sup|M̃^ε|`, and
/// `fourth_moment` of the process controlled by `u ≡ 1`, whose fourth moment
/// stays bounded but does not vanish. The uncontrolled fourth moment is
/// reported as `fourth_moment_uncontrolled`; it decays like `(ε/a²)²`.
pub fn mdp_experiment(
    cfg: &SimConfig,
    grid: &[f64],
    batching: Batching,
    thresholds: &Thresholds,
) -> Result<ExperimentReport> {
    let start = Instant::now();
    check_grid(grid)?;
    cfg.validate()?;
    cfg.mdp_scale.validate()?;
    let x0 = solve_deterministic_limit(cfg)?.path;
    let u = Control::constant(&cfg.grid, &vec![1.0; cfg.noise_dim()]);
    let names = ["second_moment", "fourth_moment", "fourth_moment_uncontrolled"];
    let series = replicate(cfg, grid, batching, &names, |rc| {
        let free = simulate_mdp_deviation(rc, &x0, None)?;
        let ctrl = simulate_mdp_deviation(rc, &x0, Some(&u))?;
        let sup_free: Vec<f64> = free.particles.iter().map(|p| p.sup_norm()).collect();
        let n = sup_free.len() as f64;
        let second = sup_free.iter().map(|s| s.powi(2)).sum::<f64>() / n;
        let fourth_free = sup_free.iter().map(|s| s.powi(4)).sum::<f64>() / n;
        let fourth = ctrl.particles.iter().map(|p| p.sup_norm().powi(4)).sum::<f64>() / ctrl.len() as f64;
        Ok(vec![second, fourth, fourth_free])
    })?;
    let fourth = series[1].means();
    let (lo, hi) = fourth
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(a, b), &v| (a.min(v), b.max(v)));
    let ratio = if hi == 0.0 { 1.0 } else { hi / lo };
    let increasing = fourth.len() > 1 && fourth.windows(2).all(|w| w[1] > w[0]);
    let checks = vec![
        decreasing_check("second_moment_decreasing", &series[0], thresholds.decrease_se),
        final_check("second_moment_below_threshold", &series[0], thresholds.final_value),
        Check::new(
            "fourth_moment_bounded",
            ratio <= thresholds.fourth_moment_ratio,
            format!("max/min ratio {ratio}"),
        ),
        Check::new(
            "fourth_moment_not_increasing",
            !increasing,
            format!("estimates {fourth:?}"),
        ),
    ];
    Ok(finish(
        ExperimentKind::Mdp,
        cfg,
        grid,
        batching,
        series,
        None,
        false,
        checks,
        start,
    ))
}

/// Estimates `E sup_t |Z^ε(t) − Z(t)|^{2p}` per `ε` on coupled pairs and fits
/// its log-log slope, which must reach `p − slope_tolerance`.
pub fn clt_scaling_experiment(
    cfg: &SimConfig,
    grid: &[f64],
    batching: Batching,
    p: u32,
    thresholds: &Thresholds,
) -> Result<ExperimentReport> {
    let start = Instant::now();
    check_grid(grid)?;
    cfg.validate()?;
    if p == 0 {
        return Err(Error::Precondition("moment order p must be at least 1".into()));
    }
    let x0 = solve_deterministic_limit(cfg)?.path;
    let series = replicate(cfg, grid, batching, &["sup_moment"], |rc| {
        let (z_eps, z) = simulate_clt_pair(rc, &x0)?;
        Ok(vec![mean_over(
            z.len(),
            z_eps
                .particles
                .iter()
                .zip(&z.particles)
                .map(|(a, b)| Ok(a.sup_distance(b)?.powi(2 * p as i32))),
        )?])
    })?;
    let exact_match = series[0]
        .estimates
        .iter()
        .all(|e| e.batch_means.iter().all(|&v| v == 0.0));
    let target = p as f64 - thresholds.slope_tolerance;
    let (fit, check) = if exact_match {
        (
            None,
            Check::new("slope", true, "coupled paths are identical; slope undefined".into()),
        )
    } else {
        match fit_loglog_slope(&series[0].estimates) {
            Ok(f) => (
                Some(f),
                Check::new(
                    "slope",
                    f.slope >= target,
                    format!("slope {} against {target}", f.slope),
                ),
            ),
            Err(e) => (None, Check::new("slope", false, e.to_string())),
        }
    };
    Ok(finish(
        ExperimentKind::Clt,
        cfg,
        grid,
        batching,
        series,
        fit,
        exact_match,
        vec![check],
        start,
    ))
}

fn ols(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Least-squares slope of `log mean` against `log ε`, with a bootstrap
/// interval from resampling the batch means at every point.
///
/// Points with a nonpositive mean are dropped; fewer than four remaining
/// points is an error.
pub fn fit_loglog_slope(points: &[Estimate]) -> Result<SlopeFit> {
    let usable: Vec<&Estimate> = points
        .iter()
        .filter(|e| {
            let ok = e.mean > 0.0 && e.epsilon > 0.0;
            if !ok {
                warn!("dropping point eps={} with nonpositive estimate {}", e.epsilon, e.mean);
            }
            ok
        })
        .collect();
    if usable.len() < 4 {
        return Err(Error::FitUnavailable { usable: usable.len() });
    }
    let xs: Vec<f64> = usable.iter().map(|e| e.epsilon.ln()).collect();
    let ys: Vec<f64> = usable.iter().map(|e| e.mean.ln()).collect();
    let (slope, intercept) = ols(&xs, &ys);

    let mut rng = ChaCha8Rng::seed_from_u64(BOOTSTRAP_SEED);
    let mut slopes = Vec::with_capacity(BOOTSTRAP_RESAMPLES);
    let mut ys_b = vec![0.0; usable.len()];
    for _ in 0..BOOTSTRAP_RESAMPLES {
        let mut valid = true;
        for (y, e) in ys_b.iter_mut().zip(&usable) {
            let b = &e.batch_means;
            let m = if b.is_empty() {
                e.mean
            } else {
                (0..b.len()).map(|_| b[rng.gen_range(0..b.len())]).sum::<f64>() / b.len() as f64
            };
            valid &= m > 0.0;
            *y = m.ln();
        }
        if valid {
            slopes.push(ols(&xs, &ys_b).0);
        }
    }
    let (ci_low, ci_high) = if slopes.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        slopes.sort_by(f64::total_cmp);
        (percentile(&slopes, 0.025), percentile(&slopes, 0.975))
    };
    Ok(SlopeFit {
        slope,
        intercept,
        ci_low,
        ci_high,
        points: usable.len(),
    })
}

/// Checks `mean(ε) ∝ ε^exponent` between consecutive levels: the difference
/// `m_{i+1} − m_i (ε_{i+1}/ε_i)^exponent` must lie within `k_se` combined
/// standard errors.
pub fn scaling_check(s: &Series, exponent: f64, k_se: f64) -> Check {
    let mut worst = 0.0f64;
    let mut ok = true;
    for w in s.estimates.windows(2) {
        let r = (w[1].epsilon / w[0].epsilon).powf(exponent);
        let se = (w[1].std_error.powi(2) + (r * w[0].std_error).powi(2)).sqrt();
        let dev = (w[1].mean - r * w[0].mean).abs();
        ok &= dev <= k_se * se.max(1e-14 * w[1].mean.abs());
        if se > 0.0 {
            worst = worst.max(dev / se);
        }
    }
    Check::new(
        "scaling",
        ok,
        format!("exponent {exponent}: largest deviation {worst:.2e} standard errors"),
    )
}

/// Perturbation family `h + δ·sin(k t)`, applied to every control coordinate
/// as a cell average over each step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Perturbations {
    /// Amplitudes `δ` at frequency `frequency`, largest first.
    pub amplitudes: Vec<f64>,
    pub frequency: f64,
    /// Frequencies `k` at amplitude `fixed_amplitude`, smallest first.
    pub frequencies: Vec<f64>,
    pub fixed_amplitude: f64,
    /// Bound on the distance at the smallest amplitude.
    pub tolerance: f64,
}

impl Default for Perturbations {
    fn default() -> Self {
        let tau = std::f64::consts::TAU;
        Self {
            amplitudes: vec![1e-1, 1e-3, 1e-5, 1e-7],
            frequency: tau,
            frequencies: vec![tau, 4.0 * tau, 16.0 * tau, 64.0 * tau],
            fixed_amplitude: 1.0,
            tolerance: 1e-6,
        }
    }
}

/// `(parameter, sup distance)` pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContinuityReport {
    pub amplitude: Vec<(f64, f64)>,
    pub frequency: Vec<(f64, f64)>,
    pub checks: Vec<Check>,
    pub passed: bool,
}

impl ContinuityReport {
    /// Rows `mode,parameter,distance`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "mode,parameter,distance")?;
        for (p, d) in &self.amplitude {
            writeln!(w, "amplitude,{p},{d}")?;
        }
        for (p, d) in &self.frequency {
            writeln!(w, "frequency,{p},{d}")?;
        }
        Ok(())
    }
}

/// `base + δ · (cell average of sin(k t))`.
pub fn sinusoidal_perturbation(base: &Control, delta: f64, k: f64) -> Result<Control> {
    let (h, m) = (base.h(), base.dim());
    let mut values = base.values().to_vec();
    for (step, row) in values.chunks_mut(m).enumerate() {
        let (a, b) = (step as f64 * h, (step + 1) as f64 * h);
        let avg = ((k * a).cos() - (k * b).cos()) / (k * h);
        row.iter_mut().for_each(|v| *v += delta * avg);
    }
    Control::unbounded(h, m, values)
}

fn non_increasing(points: &[(f64, f64)]) -> bool {
    points.windows(2).all(|w| w[1].1 <= w[0].1)
}

/// Sup distance between the skeleton driven by `base` and by its
/// sinusoidal perturbations.
pub fn skeleton_continuity_check(
    cfg: &SimConfig,
    base: &Control,
    perturbations: &Perturbations,
) -> Result<ContinuityReport> {
    cfg.validate()?;
    let x0 = solve_deterministic_limit(cfg)?.path;
    let reference = solve_skeleton(cfg, base, &x0)?.path;
    let distance = |delta: f64, k: f64| -> Result<f64> {
        let u = sinusoidal_perturbation(base, delta, k)?;
        solve_skeleton(cfg, &u, &x0)?.path.sup_distance(&reference)
    };
    let amplitude = perturbations
        .amplitudes
        .iter()
        .map(|&d| Ok((d, distance(d, perturbations.frequency)?)))
        .collect::<Result<Vec<_>>>()?;
    let frequency = perturbations
        .frequencies
        .iter()
        .map(|&k| Ok((k, distance(perturbations.fixed_amplitude, k)?)))
        .collect::<Result<Vec<_>>>()?;
    let last = amplitude.last().map_or(0.0, |p| p.1);
    let checks = vec![
        Check::new(
            "amplitude_decreasing",
            non_increasing(&amplitude),
            format!("distances {:?}", amplitude.iter().map(|p| p.1).collect::<Vec<_>>()),
        ),
        Check::new(
            "amplitude_below_tolerance",
            last < perturbations.tolerance,
            format!("distance {last} against {}", perturbations.tolerance),
        ),
        Check::new(
            "frequency_decreasing",
            non_increasing(&frequency),
            format!("distances {:?}", frequency.iter().map(|p| p.1).collect::<Vec<_>>()),
        ),
    ];
    Ok(ContinuityReport {
        passed: checks.iter().all(|c| c.passed),
        amplitude,
        frequency,
        checks,
    })
}
