//! Simulation and rate-function evaluation for path-dependent multivalued
//! McKean–Vlasov SDEs
//!
//! ```text
//! dX(t) ∈ -A(X(t)) dt + b(X_t, L(X_t)) dt + √ε σ(X_t, L(X_t)) dW(t)
//! ```
//!
//! where `A` is maximal monotone, `X_t` is the segment of the path on
//! `[t - r0, t]`, and the law `L(X_t)` is approximated by the empirical
//! measure of interacting particles.

// `!(x > 0.0)` is used deliberately so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod coefficients;
pub mod error;
pub mod exec;
pub mod experiments;
pub mod measure;
pub mod monotone;
pub mod noise;
pub mod path;
pub mod presets;
pub mod rate;
pub mod solver;

pub use error::{Error, Result};
pub use exec::Execution;
