//! Reference problems with known behaviour.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::coefficients::{Example5Family, Functional, MeasureMap, Nonlinearity};
use crate::error::Result;
use crate::monotone::BuiltinOperator;
use crate::path::{SegmentBuf, TimeGrid};
use crate::solver::SimConfig;

/// Operator, coefficients, initial segment and grid of one problem.
#[derive(Clone, Debug, PartialEq)]
pub struct Problem {
    pub grid: TimeGrid,
    pub operator: BuiltinOperator,
    pub coefficients: Example5Family,
    pub initial: SegmentBuf,
}

impl Problem {
    /// Single-particle, noiseless configuration; callers set `P`, `ε`, seed.
    pub fn sim_config(&self) -> Result<SimConfig> {
        SimConfig::new(
            self.grid,
            Arc::new(self.operator.clone()),
            Arc::new(self.coefficients.clone()),
            self.initial.clone(),
        )
    }

    /// Same problem on another step size.
    pub fn with_step(&self, h: f64) -> Result<Self> {
        let grid = TimeGrid::from_lengths(h, self.grid.r0(), self.grid.horizon())?;
        let value = self.initial.view().head().to_vec();
        Ok(Self {
            grid,
            initial: SegmentBuf::constant(&value, &grid),
            ..self.clone()
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Brownian motion reflected at 0: `[0, ∞)` normal cone, `b = 0`, `σ = 1`.
    ReflectedBm,
    /// `x'(t) = −x(t − 1)`, `x ≡ 1` on `[−1, 0]`.
    DelayLinear,
    /// Scalar tanh coefficients with mean-field coupling, reflected at 0.
    Example5TanhReflected,
}

impl Preset {
    pub const ALL: [Preset; 3] = [Preset::ReflectedBm, Preset::DelayLinear, Preset::Example5TanhReflected];

    pub fn name(self) -> &'static str {
        match self {
            Preset::ReflectedBm => "reflected_bm",
            Preset::DelayLinear => "delay_linear",
            Preset::Example5TanhReflected => "example5_tanh_reflected",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == name)
    }

    pub fn problem(self) -> Problem {
        let (grid, operator, coefficients, xi) = match self {
            Preset::ReflectedBm => (
                grid(1e-3, 0.1, 1.0),
                BuiltinOperator::nonnegative_half_line(),
                Example5Family::new(Functional::default(), Functional::constant(1.0), MeasureMap::default()),
                0.0,
            ),
            Preset::DelayLinear => (
                grid(1e-3, 1.0, 2.0),
                BuiltinOperator::Zero { dim: 1 },
                Example5Family::new(
                    Functional {
                        c2: -1.0,
                        ..Functional::default()
                    },
                    Functional::default(),
                    MeasureMap::default(),
                ),
                1.0,
            ),
            Preset::Example5TanhReflected => (
                grid(0.01, 0.5, 1.0),
                BuiltinOperator::nonnegative_half_line(),
                Example5Family::new(
                    Functional {
                        s: Nonlinearity::Tanh,
                        c0: 0.5,
                        c1: -1.0,
                        c2: 0.5,
                        c3: 0.3,
                    },
                    Functional {
                        s: Nonlinearity::Tanh,
                        c0: 0.5,
                        c1: 0.2,
                        ..Functional::default()
                    },
                    MeasureMap { alpha: 0.5, beta: 0.1 },
                ),
                0.2,
            ),
        };
        Problem {
            grid,
            operator,
            coefficients,
            initial: SegmentBuf::constant(&[xi], &grid),
        }
    }
}

fn grid(h: f64, r0: f64, horizon: f64) -> TimeGrid {
    TimeGrid::from_lengths(h, r0, horizon).expect("preset grid")
}
