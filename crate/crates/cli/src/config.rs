//! TOML run configuration.
//!
//! Parsing rejects unknown keys. Semantic errors are reported against the
//! line of the offending key. Relative paths resolve against the directory
//! of the config file.

use std::fmt;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use mvsde::coefficients::Example5Family;
use mvsde::experiments::{Batching, Perturbations, Thresholds};
use mvsde::monotone::BuiltinOperator;
use mvsde::path::{SegmentBuf, TimeGrid, Trajectory};
use mvsde::presets::Preset;
use mvsde::rate::{OptimizerSettings, SkeletonKind};
use mvsde::solver::{CompanionNoise, Control, MdpScale, SimConfig};
use mvsde::Execution;
use serde::Deserialize;

/// Invalid configuration, optionally anchored to a line of the file.
#[derive(Debug)]
pub struct ConfigError {
    pub file: PathBuf,
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "{}:{l}: {}", self.file.display(), self.message),
            None => write!(f, "{}: {}", self.file.display(), self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Output directory.
    pub output: PathBuf,
    pub problem: ProblemSpec,
    #[serde(default)]
    pub run: RunSpec,
    pub control: Option<ControlSpec>,
    pub simulate: Option<SimulateSpec>,
    pub skeleton: Option<SkeletonSpec>,
    pub rate: Option<RateSpec>,
    pub experiment: Option<ExperimentSpec>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub preset: Option<String>,
    /// Re-grids a preset to this step.
    pub step: Option<f64>,
    pub grid: Option<GridSpec>,
    pub operator: Option<BuiltinOperator>,
    pub coefficients: Option<Example5Family>,
    pub initial: Option<InitialSpec>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub h: f64,
    pub r0: f64,
    pub horizon: f64,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialSpec {
    Constant {
        value: Vec<f64>,
    },
    /// CSV `t,x1..xd` on the history grid `[-r0, 0]`.
    Csv {
        path: PathBuf,
    },
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecutionSpec {
    Parallel,
    Sequential,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    #[serde(default = "one")]
    pub particles: usize,
    #[serde(default)]
    pub epsilon: f64,
    #[serde(default)]
    pub seed: u64,
    pub threads: Option<usize>,
    #[serde(default = "parallel")]
    pub execution: ExecutionSpec,
    #[serde(default)]
    pub companion: CompanionNoise,
    #[serde(default)]
    pub mdp_scale: MdpScale,
}

fn one() -> usize {
    1
}

fn parallel() -> ExecutionSpec {
    ExecutionSpec::Parallel
}

impl Default for RunSpec {
    fn default() -> Self {
        Self {
            particles: 1,
            epsilon: 0.0,
            seed: 0,
            threads: None,
            execution: ExecutionSpec::Parallel,
            companion: CompanionNoise::default(),
            mdp_scale: MdpScale::default(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ControlSpec {
    Zero,
    Constant {
        value: Vec<f64>,
    },
    /// CSV `t,u1..um`, one row per step.
    Csv {
        path: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemKind {
    Perturbed,
    Controlled,
    DeterministicLimit,
    MdpDeviation,
    CltPair,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSpec {
    pub system: SystemKind,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkeletonSpec {
    pub kind: SkeletonKind,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TargetSpec {
    /// The deterministic limit `X⁰` (LDP) or the zero path (MDP).
    Reference,
    /// `g(t) = g(0) + slope·t` for `t ≥ 0`, history as required by the kind.
    Ramp { slope: Vec<f64> },
    /// Trajectory CSV `t,x1..xd` over `[-r0, T]`.
    Csv { path: PathBuf },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RateMethodSpec {
    #[default]
    Auto,
    Inversion,
    Penalty,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateSpec {
    pub kind: SkeletonKind,
    pub target: TargetSpec,
    #[serde(default)]
    pub method: RateMethodSpec,
    pub budget: Option<f64>,
    pub residual_tolerance: Option<f64>,
    #[serde(default)]
    pub optimizer: OptimizerSettings,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    #[serde(default)]
    pub epsilon_grid: Vec<f64>,
    #[serde(default = "eight")]
    pub batches: usize,
    #[serde(default = "thirty_two")]
    pub per_batch: usize,
    /// Moment order of the CLT experiment.
    #[serde(default = "one_u32")]
    pub p: u32,
    #[serde(default)]
    pub thresholds: Thresholds,
    #[serde(default)]
    pub perturbations: Perturbations,
}

fn eight() -> usize {
    8
}
fn thirty_two() -> usize {
    32
}
fn one_u32() -> u32 {
    1
}

impl ExperimentSpec {
    pub fn batching(&self) -> Batching {
        Batching {
            batches: self.batches,
            per_batch: self.per_batch,
        }
    }
}

/// A parsed config together with its source, for error anchoring and
/// provenance.
#[derive(Debug)]
pub struct LoadedConfig {
    pub path: PathBuf,
    pub base_dir: PathBuf,
    pub text: String,
    pub config: RunConfig,
}

/// 1-based line of the first `key =` assignment or `[section]` header whose
/// name is `key`.
pub fn line_of(text: &str, key: &str) -> Option<usize> {
    text.lines()
        .position(|l| {
            let t = l.trim_start();
            let header = t.trim_start_matches('[').trim_end_matches(']');
            let is_header = t.starts_with('[') && (header == key || header.ends_with(&format!(".{key}")));
            let is_assign = t
                .strip_prefix(key)
                .is_some_and(|rest| rest.trim_start().starts_with('='));
            is_header || is_assign
        })
        .map(|i| i + 1)
}

impl LoadedConfig {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|e| ConfigError {
            file: path.to_path_buf(),
            line: None,
            message: format!("cannot read config: {e}"),
        })?;
        let base = path
            .canonicalize()
            .ok()
            .and_then(|p| p.parent().map(Path::to_path_buf))
            .unwrap_or_else(|| PathBuf::from("."));
        Self::from_text(path, base, text)
    }

    pub fn from_text(path: &Path, base_dir: PathBuf, text: String) -> Result<Self, ConfigError> {
        let config: RunConfig = toml::from_str(&text).map_err(|e| ConfigError {
            file: path.to_path_buf(),
            line: e.span().map(|s| toml_error_line(&text, s, e.message())),
            message: e.message().to_string(),
        })?;
        Ok(Self {
            path: path.to_path_buf(),
            base_dir,
            text,
            config,
        })
    }

    /// Error anchored at `key`.
    pub fn error(&self, key: &str, message: impl Into<String>) -> ConfigError {
        ConfigError {
            file: self.path.clone(),
            line: line_of(&self.text, key),
            message: message.into(),
        }
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.config.output)
    }

    pub fn execution(&self) -> Execution {
        match self.config.run.execution {
            ExecutionSpec::Parallel => Execution::Parallel,
            ExecutionSpec::Sequential => Execution::Sequential,
        }
    }

    fn grid(&self) -> Result<Option<TimeGrid>, ConfigError> {
        self.config
            .problem
            .grid
            .as_ref()
            .map(|g| TimeGrid::from_lengths(g.h, g.r0, g.horizon).map_err(|e| self.error("grid", e.to_string())))
            .transpose()
    }

    fn initial(&self, spec: &InitialSpec, grid: &TimeGrid, dim: usize) -> Result<SegmentBuf, ConfigError> {
        match spec {
            InitialSpec::Constant { value } => {
                if value.len() != dim {
                    return Err(self.error(
                        "initial",
                        format!("initial value has {} entries, problem dimension is {dim}", value.len()),
                    ));
                }
                Ok(SegmentBuf::constant(value, grid))
            }
            InitialSpec::Csv { path } => {
                let full = self.resolve(path);
                let rows = read_rows(&full).map_err(|m| self.error("initial", m))?;
                if rows.len() != grid.segment_len() || rows.iter().any(|r| r.len() != dim + 1) {
                    return Err(self.error(
                        "initial",
                        format!(
                            "{} must have {} rows of t plus {dim} values",
                            full.display(),
                            grid.segment_len()
                        ),
                    ));
                }
                let values = rows.iter().flat_map(|r| r[1..].iter().copied()).collect();
                Ok(SegmentBuf::new(dim, grid.h(), values))
            }
        }
    }

    /// Builds the simulation configuration with `seed` in place of the
    /// configured one when given.
    pub fn sim_config(&self, seed: Option<u64>) -> Result<SimConfig, ConfigError> {
        let p = &self.config.problem;
        let preset = match &p.preset {
            Some(name) => Some(
                Preset::from_name(name)
                    .ok_or_else(|| {
                        let known: Vec<&str> = Preset::ALL.iter().map(|p| p.name()).collect();
                        self.error("preset", format!("unknown preset '{name}', expected one of {known:?}"))
                    })?
                    .problem(),
            ),
            None => None,
        };
        let preset = match (preset, p.step) {
            (Some(pr), Some(h)) => Some(pr.with_step(h).map_err(|e| self.error("step", e.to_string()))?),
            (None, Some(_)) => return Err(self.error("step", "`step` only applies to a preset")),
            (pr, None) => pr,
        };
        let missing = |key: &str| self.error("problem", format!("missing key `problem.{key}` (no preset given)"));
        let grid = match (self.grid()?, &preset) {
            (Some(g), _) => g,
            (None, Some(pr)) => pr.grid,
            (None, None) => return Err(missing("grid")),
        };
        let operator = match (&p.operator, &preset) {
            (Some(o), _) => o.clone(),
            (None, Some(pr)) => pr.operator.clone(),
            (None, None) => return Err(missing("operator")),
        };
        operator.validate().map_err(|e| self.error("operator", e.to_string()))?;
        let coefficients = match (&p.coefficients, &preset) {
            (Some(c), _) => c.clone(),
            (None, Some(pr)) => pr.coefficients.clone(),
            (None, None) => return Err(missing("coefficients")),
        };
        coefficients
            .validate()
            .map_err(|e| self.error("coefficients", e.to_string()))?;
        let initial = match (&p.initial, &preset) {
            (Some(spec), _) => self.initial(spec, &grid, coefficients.dim)?,
            (None, Some(pr)) if pr.grid == grid => pr.initial.clone(),
            (None, Some(pr)) => SegmentBuf::constant(pr.initial.view().head(), &grid),
            (None, None) => return Err(missing("initial")),
        };
        let run = &self.config.run;
        if let Some(0) = run.threads {
            return Err(self.error("threads", "thread budget must be at least 1"));
        }
        run.mdp_scale
            .validate()
            .map_err(|e| self.error("mdp_scale", e.to_string()))?;
        let cfg = SimConfig::new(grid, Arc::new(operator), Arc::new(coefficients), initial)
            .map_err(|e| self.error("problem", e.to_string()))?
            .with_particles(run.particles)
            .with_epsilon(run.epsilon)
            .with_seed(seed.unwrap_or(run.seed))
            .with_execution(self.execution())
            .with_companion(run.companion)
            .with_mdp_scale(run.mdp_scale);
        cfg.validate().map_err(|e| {
            let key = if run.particles == 0 {
                "particles"
            } else if run.epsilon.is_nan() || run.epsilon < 0.0 {
                "epsilon"
            } else {
                "problem"
            };
            self.error(key, e.to_string())
        })?;
        Ok(cfg)
    }

    /// The `[control]` block on the grid of `cfg`; `None` when absent.
    pub fn control(&self, cfg: &SimConfig) -> Result<Option<Control>, ConfigError> {
        let m = cfg.noise_dim();
        let u = match &self.config.control {
            None => return Ok(None),
            Some(ControlSpec::Zero) => Control::zeros(&cfg.grid, m),
            Some(ControlSpec::Constant { value }) => {
                if value.len() != m {
                    return Err(self.error(
                        "control",
                        format!("control has {} entries, noise dimension is {m}", value.len()),
                    ));
                }
                Control::constant(&cfg.grid, value)
            }
            Some(ControlSpec::Csv { path }) => {
                let full = self.resolve(path);
                let file = fs::File::open(&full)
                    .map_err(|e| self.error("control", format!("cannot open {}: {e}", full.display())))?;
                Control::read_csv(BufReader::new(file)).map_err(|e| self.error("control", e.to_string()))?
            }
        };
        if u.dim() != m || u.n_steps() != cfg.grid.n_steps() || (u.h() - cfg.grid.h()).abs() > 1e-9 * cfg.grid.h() {
            return Err(self.error(
                "control",
                format!(
                    "control has {} steps of dimension {} and step {}, grid needs {} of dimension {m} and step {}",
                    u.n_steps(),
                    u.dim(),
                    u.h(),
                    cfg.grid.n_steps(),
                    cfg.grid.h()
                ),
            ));
        }
        Ok(Some(u))
    }

    pub fn require_control(&self, cfg: &SimConfig) -> Result<Control, ConfigError> {
        self.control(cfg)?
            .ok_or_else(|| self.error("control", "missing `[control]` block"))
    }

    pub fn target(
        &self,
        spec: &TargetSpec,
        kind: SkeletonKind,
        cfg: &SimConfig,
        x0: &Trajectory,
    ) -> Result<Trajectory, ConfigError> {
        let d = cfg.dim();
        let grid = cfg.grid;
        match spec {
            TargetSpec::Reference => Ok(match kind {
                SkeletonKind::Ldp => x0.clone(),
                SkeletonKind::Mdp => Trajectory::from_fn(grid, d, |_| vec![0.0; d]),
            }),
            TargetSpec::Ramp { slope } => {
                if slope.len() != d {
                    return Err(self.error("slope", format!("slope has {} entries, dimension is {d}", slope.len())));
                }
                let xi = cfg.initial.view();
                let nh = grid.n_history();
                let mut values = Vec::with_capacity(grid.n_nodes() * d);
                for i in 0..grid.n_nodes() {
                    let t = grid.time(i);
                    for (j, s) in slope.iter().enumerate() {
                        values.push(match (kind, i <= nh) {
                            (SkeletonKind::Ldp, true) => xi.node(i)[j],
                            (SkeletonKind::Ldp, false) => xi.head()[j] + s * t,
                            (SkeletonKind::Mdp, true) => 0.0,
                            (SkeletonKind::Mdp, false) => s * t,
                        });
                    }
                }
                Trajectory::new(grid, d, values).map_err(|e| self.error("target", e.to_string()))
            }
            TargetSpec::Csv { path } => {
                let full = self.resolve(path);
                let file = fs::File::open(&full)
                    .map_err(|e| self.error("target", format!("cannot open {}: {e}", full.display())))?;
                let t = Trajectory::read_csv(BufReader::new(file)).map_err(|e| self.error("target", e.to_string()))?;
                if t.grid().n_nodes() != grid.n_nodes() || t.dim() != d {
                    return Err(self.error("target", "target CSV does not match the problem grid"));
                }
                // re-key onto the configured grid so that float noise in the
                // time column does not matter
                Trajectory::new(grid, d, t.values().to_vec()).map_err(|e| self.error("target", e.to_string()))
            }
        }
    }
}

/// Line of a deserialization error. Unknown-field errors span the enclosing
/// table, so the offending key is looked up inside that span.
fn toml_error_line(text: &str, span: std::ops::Range<usize>, message: &str) -> usize {
    let mut start = span.start;
    if let Some(key) = message
        .strip_prefix("unknown field `")
        .and_then(|m| m.split('`').next())
    {
        let body = &text[span.clone()];
        let mut offset = 0;
        for l in body.split_inclusive('\n') {
            let t = l.trim_start();
            if t.strip_prefix(key).is_some_and(|r| r.trim_start().starts_with('=')) {
                start = span.start + offset;
                break;
            }
            offset += l.len();
        }
    }
    text[..start].matches('\n').count() + 1
}

fn read_rows(path: &Path) -> Result<Vec<Vec<f64>>, String> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| format!("cannot open {}: {e}", path.display()))?;
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| format!("{}: {e}", path.display()))?;
        let row = rec
            .iter()
            .map(|f| f.trim().parse::<f64>())
            .collect::<Result<Vec<f64>, _>>()
            .map_err(|e| format!("{}: line {}: {e}", path.display(), i + 2))?;
        rows.push(row);
    }
    Ok(rows)
}
