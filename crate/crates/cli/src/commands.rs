//! Subcommand bodies. Each returns whether the task passed; errors are
//! either configuration errors (exit 2) or task failures (exit 1).

use std::path::PathBuf;

use log::info;
use mvsde::experiments::{clt_scaling_experiment, lln_experiment, mdp_experiment, skeleton_continuity_check};
use mvsde::rate::{
    rate, rate_by_inversion, rate_by_penalty, rate_certificate, Certificate, RateMethod, RateProblem, SkeletonKind,
};
use mvsde::solver::{
    simulate_clt_pair, simulate_controlled, simulate_mdp_deviation, simulate_perturbed, solve_deterministic_limit,
    solve_mdp_skeleton, solve_skeleton, SolutionBundle,
};
use serde::Serialize;
use serde_json::json;

use crate::config::{ConfigError, LoadedConfig, RateMethodSpec, SystemKind};
use crate::output::Artifacts;

#[derive(Debug)]
pub enum Failure {
    Config(ConfigError),
    Task(anyhow::Error),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e)
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Task(e)
    }
}

impl From<mvsde::Error> for Failure {
    fn from(e: mvsde::Error) -> Self {
        Failure::Task(e.into())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Task(e.into())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentName {
    Lln,
    Mdp,
    Clt,
    Skeleton,
}

/// What to run, as recorded in the manifest.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Simulate,
    Skeleton,
    Rate,
    Lln,
    Mdp,
    Clt,
    SkeletonContinuity,
}

impl From<ExperimentName> for Task {
    fn from(e: ExperimentName) -> Self {
        match e {
            ExperimentName::Lln => Task::Lln,
            ExperimentName::Mdp => Task::Mdp,
            ExperimentName::Clt => Task::Clt,
            ExperimentName::Skeleton => Task::SkeletonContinuity,
        }
    }
}

pub struct Invocation<'a> {
    pub loaded: &'a LoadedConfig,
    pub task: Task,
    pub seed: Option<u64>,
    pub out: PathBuf,
}

/// Runs the task and writes its artifacts plus the manifest. Returns the
/// pass/fail outcome.
pub fn run(inv: &Invocation<'_>) -> Result<bool, Failure> {
    let cfg = inv.loaded.sim_config(inv.seed)?;
    let mut art = Artifacts::create(&inv.out)?;
    let passed = match inv.task {
        Task::Simulate => simulate(inv.loaded, &cfg, &mut art)?,
        Task::Skeleton => skeleton(inv.loaded, &cfg, &mut art)?,
        Task::Rate => rate_cmd(inv.loaded, &cfg, &mut art)?,
        Task::Lln | Task::Mdp | Task::Clt | Task::SkeletonContinuity => experiment(inv, &cfg, &mut art)?,
    };
    art.write_manifest(inv.loaded, inv.task, cfg.seed)?;
    Ok(passed)
}

fn bundle_meta(b: &SolutionBundle) -> serde_json::Value {
    json!({
        "particles": b.len(),
        "k_variation": b.k_variation,
        "noise": b.noise,
    })
}

fn simulate(l: &LoadedConfig, cfg: &mvsde::solver::SimConfig, art: &mut Artifacts) -> Result<bool, Failure> {
    let system = l
        .config
        .simulate
        .as_ref()
        .ok_or_else(|| l.error("simulate", "missing `[simulate]` block"))?
        .system;
    let grid = json!({"h": cfg.grid.h(), "r0": cfg.grid.r0(), "horizon": cfg.grid.horizon()});
    let mut meta = json!({
        "system": format!("{system:?}"),
        "epsilon": cfg.epsilon,
        "seed": cfg.seed,
        "grid": grid,
    });
    match system {
        SystemKind::Perturbed | SystemKind::Controlled | SystemKind::MdpDeviation => {
            let bundle = match system {
                SystemKind::Perturbed => simulate_perturbed(cfg)?,
                SystemKind::Controlled => simulate_controlled(cfg, &l.require_control(cfg)?)?,
                _ => {
                    let x0 = solve_deterministic_limit(cfg)?.path;
                    simulate_mdp_deviation(cfg, &x0, l.control(cfg)?.as_ref())?
                }
            };
            art.paths("paths.csv", "x", &bundle.particles)?;
            art.paths("k.csv", "k", &bundle.k_processes)?;
            meta["run"] = bundle_meta(&bundle);
        }
        SystemKind::DeterministicLimit => {
            let s = solve_deterministic_limit(cfg)?;
            art.paths("paths.csv", "x", std::slice::from_ref(&s.path))?;
            art.paths("k.csv", "k", std::slice::from_ref(&s.k))?;
            meta["run"] = json!({"particles": 1, "k_variation": [s.k_variation]});
        }
        SystemKind::CltPair => {
            let x0 = solve_deterministic_limit(cfg)?.path;
            let (z_eps, z) = simulate_clt_pair(cfg, &x0)?;
            art.paths("paths.csv", "z", &z_eps.particles)?;
            art.paths("k.csv", "k", &z_eps.k_processes)?;
            art.paths("limit_paths.csv", "z", &z.particles)?;
            art.paths("limit_k.csv", "k", &z.k_processes)?;
            meta["run"] = bundle_meta(&z_eps);
            meta["limit"] = bundle_meta(&z);
        }
    }
    art.json("metadata.json", &meta)?;
    Ok(true)
}

fn skeleton(l: &LoadedConfig, cfg: &mvsde::solver::SimConfig, art: &mut Artifacts) -> Result<bool, Failure> {
    let kind = l
        .config
        .skeleton
        .as_ref()
        .ok_or_else(|| l.error("skeleton", "missing `[skeleton]` block"))?
        .kind;
    let u = l.require_control(cfg)?;
    let x0 = solve_deterministic_limit(cfg)?.path;
    let s = match kind {
        SkeletonKind::Ldp => solve_skeleton(cfg, &u, &x0)?,
        SkeletonKind::Mdp => solve_mdp_skeleton(cfg, &u, &x0)?,
    };
    art.trajectory("path.csv", &s.path)?;
    art.trajectory("k.csv", &s.k)?;
    art.json(
        "metadata.json",
        &json!({"kind": kind, "energy": u.energy(), "k_variation": s.k_variation}),
    )?;
    Ok(true)
}

#[derive(Serialize)]
struct RateRecord {
    kind: SkeletonKind,
    /// `null` when no control reaches the target within tolerance.
    rate: Option<f64>,
    upper_estimate: f64,
    method: RateMethod,
    residual: f64,
    iterations: usize,
    converged: bool,
    certificate: Certificate,
}

fn rate_cmd(l: &LoadedConfig, cfg: &mvsde::solver::SimConfig, art: &mut Artifacts) -> Result<bool, Failure> {
    let spec = l
        .config
        .rate
        .as_ref()
        .ok_or_else(|| l.error("rate", "missing `[rate]` block"))?;
    let x0 = solve_deterministic_limit(cfg)?.path;
    let target = l.target(&spec.target, spec.kind, cfg, &x0)?;
    let mut problem = RateProblem::new(cfg.clone(), target, spec.kind)
        .map_err(|e| l.error("target", e.to_string()))?
        .with_settings(spec.optimizer.clone());
    if let Some(b) = spec.budget {
        problem = problem.with_budget(b);
    }
    if let Some(t) = spec.residual_tolerance {
        problem = problem.with_residual_tolerance(t);
    }
    let result = match spec.method {
        RateMethodSpec::Auto => rate(&problem)?,
        RateMethodSpec::Inversion => rate_by_inversion(&problem)?,
        RateMethodSpec::Penalty => rate_by_penalty(&problem, None)?,
    };
    let certificate = rate_certificate(&problem, &result.control)?;
    let passed = result.converged && certificate.certified;
    info!("rate {} (residual {})", result.value, result.residual);
    art.json(
        "rate.json",
        &RateRecord {
            kind: spec.kind,
            rate: passed.then_some(result.value),
            upper_estimate: result.value,
            method: result.method,
            residual: result.residual,
            iterations: result.iterations,
            converged: result.converged,
            certificate,
        },
    )?;
    art.with_file("control.csv", |w| result.control.write_csv(w))?;
    Ok(passed)
}

fn experiment(inv: &Invocation<'_>, cfg: &mvsde::solver::SimConfig, art: &mut Artifacts) -> Result<bool, Failure> {
    let l = inv.loaded;
    let spec = l
        .config
        .experiment
        .as_ref()
        .ok_or_else(|| l.error("experiment", "missing `[experiment]` block"))?;
    let as_config = |e: mvsde::Error| -> Failure {
        match e {
            mvsde::Error::Precondition(m) => l.error("epsilon_grid", m).into(),
            other => other.into(),
        }
    };
    let report = match inv.task {
        Task::SkeletonContinuity => {
            let base = l.require_control(cfg)?;
            let r = skeleton_continuity_check(cfg, &base, &spec.perturbations)?;
            art.json("continuity.json", &r)?;
            art.with_file("continuity.csv", |w| r.write_csv(w))?;
            return Ok(r.passed);
        }
        Task::Lln => lln_experiment(cfg, &spec.epsilon_grid, spec.batching(), &spec.thresholds),
        Task::Mdp => mdp_experiment(cfg, &spec.epsilon_grid, spec.batching(), &spec.thresholds),
        Task::Clt => clt_scaling_experiment(cfg, &spec.epsilon_grid, spec.batching(), spec.p, &spec.thresholds),
        _ => unreachable!("not an experiment"),
    }
    .map_err(as_config)?;
    for c in &report.checks {
        info!("{}: {} ({})", c.name, if c.passed { "pass" } else { "fail" }, c.detail);
    }
    art.json("report.json", &report)?;
    art.with_file("report.csv", |w| report.write_csv(w))?;
    Ok(report.passed)
}
