//! Split-step resolvent Euler schemes.
//!
//! Every system shares one step: an explicit increment `h·drift + diffusion·ΔW`
//! gives the pre-point `Y = x_k + increment`, and the resolvent step returns
//! `x_{k+1} = J_h(Y)` together with `ΔK_k = Y − x_{k+1}`. Particles move
//! synchronously, so the empirical law at step `k` is frozen while the step
//! is computed.

mod control;
mod systems;

use std::sync::Arc;

use serde::Serialize;

pub use control::{Control, MdpScale};
pub use systems::{
    simulate_clt_pair, simulate_controlled, simulate_mdp_deviation, simulate_mdp_with_scale, simulate_perturbed,
    solve_deterministic_limit, solve_mdp_skeleton, solve_skeleton,
};

use crate::coefficients::Coefficients;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::monotone::{resolvent_step_in_place, MonotoneOperator};
use crate::noise::{NoiseSource, NoiseStream};
use crate::path::{Segment, SegmentBuf, TimeGrid, Trajectory};

/// Noise used by the uncontrolled companion run of a controlled system.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompanionNoise {
    /// Same Brownian increments as the controlled particles.
    #[default]
    Shared,
    /// Independent increments from a derived seed.
    Independent,
}

/// Everything a run needs apart from the control.
#[derive(Clone, Debug)]
pub struct SimConfig {
    pub grid: TimeGrid,
    pub particles: usize,
    pub epsilon: f64,
    pub mdp_scale: MdpScale,
    pub seed: u64,
    pub operator: Arc<dyn MonotoneOperator>,
    pub coefficients: Arc<dyn Coefficients>,
    /// Initial segment `ξ` on `[-r0, 0]`.
    pub initial: SegmentBuf,
    pub companion: CompanionNoise,
    pub execution: Execution,
}

impl SimConfig {
    /// One particle, `ε = 0`, seed 0, shared companion noise, parallel
    /// execution.
    pub fn new(
        grid: TimeGrid,
        operator: Arc<dyn MonotoneOperator>,
        coefficients: Arc<dyn Coefficients>,
        initial: SegmentBuf,
    ) -> Result<Self> {
        let cfg = Self {
            grid,
            particles: 1,
            epsilon: 0.0,
            mdp_scale: MdpScale::default(),
            seed: 0,
            operator,
            coefficients,
            initial,
            companion: CompanionNoise::default(),
            execution: Execution::default(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_particles(mut self, p: usize) -> Self {
        self.particles = p;
        self
    }
    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
    pub fn with_execution(mut self, execution: Execution) -> Self {
        self.execution = execution;
        self
    }
    pub fn with_companion(mut self, companion: CompanionNoise) -> Self {
        self.companion = companion;
        self
    }
    pub fn with_mdp_scale(mut self, rule: MdpScale) -> Self {
        self.mdp_scale = rule;
        self
    }

    pub fn dim(&self) -> usize {
        self.coefficients.dim()
    }

    pub fn noise_dim(&self) -> usize {
        self.coefficients.noise_dim()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0) || !self.epsilon.is_finite() {
            return Err(Error::Precondition(format!(
                "epsilon must be >= 0, got {}",
                self.epsilon
            )));
        }
        if self.particles == 0 {
            return Err(Error::Precondition("at least one particle is required".into()));
        }
        let d = self.dim();
        if self.operator.dim() != d {
            return Err(Error::Dimension {
                expected: d,
                got: self.operator.dim(),
            });
        }
        if self.noise_dim() == 0 {
            return Err(Error::Precondition("noise dimension must be positive".into()));
        }
        let xi = self.initial.view();
        if xi.dim() != d {
            return Err(Error::Dimension {
                expected: d,
                got: xi.dim(),
            });
        }
        if xi.len() != self.grid.segment_len() || xi.h() != self.grid.h() {
            return Err(Error::GridMismatch(format!(
                "initial segment has {} nodes of step {}, grid needs {} of step {}",
                xi.len(),
                xi.h(),
                self.grid.segment_len(),
                self.grid.h()
            )));
        }
        let mut projected = self.initial.clone();
        let moved = projected.project_onto(self.operator.as_ref())?;
        if moved > 1e-12 * (1.0 + xi.sup_norm()) {
            return Err(Error::Precondition(format!(
                "initial segment leaves the closed domain of A by {moved}"
            )));
        }
        Ok(())
    }
}

/// Keys of the Brownian increments a bundle was driven by.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct NoiseRecord {
    pub seed: u64,
    pub dim: usize,
    pub h: f64,
}

impl NoiseRecord {
    /// `ΔW` of `particle` over step `k`.
    pub fn increment(&self, particle: usize, step: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        NoiseSource::new(self.seed, self.dim).brownian_increment(particle as u64, step as u64, self.h, &mut out);
        out
    }
}

/// Particle paths with their bounded-variation parts.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SolutionBundle {
    pub particles: Vec<Trajectory>,
    /// `K^i` on the same grid; zero on `[-r0, 0]`.
    pub k_processes: Vec<Trajectory>,
    /// `Σ_k |ΔK^i_k|` per particle.
    pub k_variation: Vec<f64>,
    /// `None` for noiseless runs.
    pub noise: Option<NoiseRecord>,
}

impl SolutionBundle {
    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn grid(&self) -> &TimeGrid {
        self.particles[0].grid()
    }

    /// `ΔK^i_k = K^i(t_{k+1}) − K^i(t_k)`.
    pub fn k_increment(&self, particle: usize, step: usize) -> Vec<f64> {
        let k = &self.k_processes[particle];
        k.at_step(step + 1)
            .iter()
            .zip(k.at_step(step))
            .map(|(a, b)| a - b)
            .collect()
    }

    /// Consumes a one-particle bundle.
    pub fn into_single(mut self) -> PathSolution {
        PathSolution {
            path: self.particles.swap_remove(0),
            k: self.k_processes.swap_remove(0),
            k_variation: self.k_variation[0],
        }
    }
}

/// A single deterministic path with its bounded-variation part.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PathSolution {
    pub path: Trajectory,
    pub k: Trajectory,
    pub k_variation: f64,
}

/// Explicit part of one step for all particles.
pub(crate) trait StepModel: Sync {
    /// Writes `h·drift + diffusion·ΔW` for every particle into `out`
    /// (`P × d`, row per particle). `dw` is `P × m` when the run is noisy.
    fn increments(&self, k: usize, states: &[Segment<'_>], dw: Option<&[f64]>, out: &mut [f64]) -> Result<()>;
}

pub(crate) struct Engine<'a> {
    pub grid: TimeGrid,
    pub dim: usize,
    pub particles: usize,
    pub operator: &'a dyn MonotoneOperator,
    pub initial: &'a SegmentBuf,
    pub noise: Option<NoiseSource>,
    pub execution: Execution,
}

struct ParticleState {
    x: Vec<f64>,
    k: Vec<f64>,
    variation: f64,
}

impl Engine<'_> {
    pub fn run(&self, model: &dyn StepModel) -> Result<SolutionBundle> {
        let (g, d, p) = (self.grid, self.dim, self.particles);
        let h = g.h();
        let nh = g.n_history();
        let n_nodes = g.n_nodes();
        let mut state: Vec<ParticleState> = (0..p)
            .map(|_| {
                let mut x = vec![0.0; n_nodes * d];
                x[..(nh + 1) * d].copy_from_slice(self.initial.data());
                ParticleState {
                    x,
                    k: vec![0.0; n_nodes * d],
                    variation: 0.0,
                }
            })
            .collect();
        let m = self.noise.as_ref().map_or(0, |n| n.dim());
        let mut streams: Vec<NoiseStream> = match &self.noise {
            Some(src) => (0..p).map(|i| src.stream(i as u64, 0)).collect(),
            None => Vec::new(),
        };
        let mut dw = vec![0.0; p * m];
        let mut inc = vec![0.0; p * d];
        for k in 0..g.n_steps() {
            if m > 0 {
                let mut work: Vec<(&mut NoiseStream, &mut [f64])> = streams.iter_mut().zip(dw.chunks_mut(m)).collect();
                self.execution
                    .for_each_mut(&mut work, |_, (st, w)| st.next_increment(h, w));
            }
            {
                let states: Vec<Segment<'_>> = state
                    .iter()
                    .map(|s| Segment::new(d, h, &s.x[k * d..(k + nh + 1) * d]))
                    .collect();
                model.increments(k, &states, (m > 0).then_some(dw.as_slice()), &mut inc)?;
            }
            let head = (nh + k) * d;
            self.execution.try_for_each_mut(&mut state, |i, s| {
                let di = &inc[i * d..(i + 1) * d];
                if di.iter().any(|v| !v.is_finite()) {
                    return Err(Error::CoefficientEvaluation { step: k, particle: i });
                }
                let (past, next) = s.x.split_at_mut(head + d);
                let y = &mut next[..d];
                for ((yj, xj), dj) in y.iter_mut().zip(&past[head..]).zip(di) {
                    *yj = xj + dj;
                }
                let (kpast, knext) = s.k.split_at_mut(head + d);
                let dk = &mut knext[..d];
                resolvent_step_in_place(self.operator, h, y, dk)?;
                s.variation += dk.iter().map(|v| v * v).sum::<f64>().sqrt();
                for (kj, prev) in dk.iter_mut().zip(&kpast[head..]) {
                    *kj += prev;
                }
                Ok(())
            })?;
        }
        let mut particles = Vec::with_capacity(p);
        let mut k_processes = Vec::with_capacity(p);
        let mut k_variation = Vec::with_capacity(p);
        for s in state {
            particles.push(Trajectory::new(g, d, s.x)?);
            k_processes.push(Trajectory::new(g, d, s.k)?);
            k_variation.push(s.variation);
        }
        Ok(SolutionBundle {
            particles,
            k_processes,
            k_variation,
            noise: self.noise.as_ref().map(|n| NoiseRecord {
                seed: n.seed(),
                dim: n.dim(),
                h,
            }),
        })
    }
}

/// In place `row ← h·row + diffusion·dw` with `diffusion` row-major `d × m`.
pub(crate) fn assemble(h: f64, row: &mut [f64], noise: Option<(&[f64], &[f64])>) {
    for (i, r) in row.iter_mut().enumerate() {
        let mut acc = h * *r;
        if let Some((sig, dw)) = noise {
            let m = dw.len();
            for j in 0..m {
                acc += sig[i * m + j] * dw[j];
            }
        }
        *r = acc;
    }
}

/// `out += σ u` with `σ` row-major `d × m`.
pub(crate) fn add_matvec(sigma: &[f64], u: &[f64], out: &mut [f64]) {
    let m = u.len();
    for (i, o) in out.iter_mut().enumerate() {
        for j in 0..m {
            *o += sigma[i * m + j] * u[j];
        }
    }
}

/// Runs `f` per particle on its `d`-row of `out`.
pub(crate) fn per_particle<F>(exec: Execution, d: usize, out: &mut [f64], f: F) -> Result<()>
where
    F: Fn(usize, &mut [f64]) -> Result<()> + Sync + Send,
{
    exec.try_for_each_chunk(out, d, f)
}
