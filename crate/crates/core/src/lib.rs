//! Simulation and output-regulation synthesis for evolution variational
//! inequalities whose constraint set is a translated polyhedral cone
//! `S(t) = K − h(t)`.
//!
//! The crate is organised bottom-up:
//!
//! * [`geometry`]: cones, moving sets, projections, normal-cone residuals.
//! * [`lcp`]: Lemke pivoting, a brute-force oracle and the cone-CP reduction.
//! * [`integrator`]: catching-up time stepping, the BV jump map and the
//!   well-posedness checks.
//! * [`regulation`]: regulator equations, passivity LMIs, gain synthesis and
//!   the dynamic compensator.
//! * [`scenarios`]: the shipped scenarios, convergence studies and the file
//!   formats used by the `evi` binary.

// NaN must fail positivity checks, so `!(x > 0.0)` is intentional.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::type_complexity)]

pub mod error;
pub mod geometry;
pub mod integrator;
pub mod lcp;
pub mod linalg;
pub mod regulation;
pub mod scenarios;
pub mod signal;

pub use error::{Error, Result};

/// Numerical tolerances shared across modules.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    /// algebraic residuals: LCP certificates, regulator equations, LMIs
    pub algebraic: f64,
    /// trajectory-level checks: admissibility along a simulation
    pub trajectory: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            algebraic: 1e-9,
            trajectory: 1e-6,
        }
    }
}

/// Seed used by randomized checks when none is given.
pub const DEFAULT_SEED: u64 = 42;
