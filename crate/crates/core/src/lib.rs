//! Numerical library for a continuous-time principal-agent contracting model
//! in which output follows a jump-diffusion and the agent controls both the
//! drift and the accident intensity.
//!
//! The crate computes, for a risk-averse agent with power utility:
//!
//! - the face-lifted utility `Fbar` (the principal's improved terminal reward,
//!   obtained by optimally delaying termination while paying the agent) in all
//!   impatience regimes, see [`facelift`];
//! - the first-best value function (observable effort) via KKT duality and
//!   explicit conjugate formulas, see [`firstbest`];
//! - the second-best value function (moral hazard) as the solution of an
//!   integro-differential obstacle HJB equation by policy iteration on a
//!   finite-difference grid, see [`secondbest`];
//! - Monte Carlo simulations of optimal contracts to termination, see
//!   [`montecarlo`].
//!
//! With the `parallel` feature (default), grid sweeps and path simulation run
//! on rayon; results are bit-identical to the sequential fallback.

pub mod exec;
pub mod facelift;
pub mod firstbest;
pub mod model;
pub mod montecarlo;
pub mod numerics;
pub mod secondbest;

pub use model::{CostKind, ModelParams, Regime};

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Input outside an operation's domain.
    #[error("domain error: {0}")]
    Domain(String),
    /// Root bracket does not straddle a sign change.
    #[error("no sign change on [{lo}, {hi}]: f(lo)={flo}, f(hi)={fhi}")]
    Bracket {
        lo: f64,
        hi: f64,
        flo: f64,
        fhi: f64,
    },
    /// Integrand returned a non-finite value.
    #[error("non-finite integrand sample at x={x}")]
    Integrand { x: f64 },
    /// Operation called in a regime where it is undefined.
    #[error("regime error: {0}")]
    Regime(String),
    /// A model assumption failed on the sampled range.
    #[error("assumption violation: {0}")]
    Assumption(String),
    /// Invalid configuration.
    #[error("config error: {0}")]
    Config(String),
    /// An iterative scheme failed to converge.
    #[error("no convergence after {iters} iterations (residual {residual:.3e})")]
    NoConvergence { iters: usize, residual: f64 },
    /// The discrete scheme lost monotonicity.
    #[error("monotonicity violation: {0}")]
    Monotonicity(String),
    /// A simulated path left the solved grid.
    #[error("simulation error: {0}")]
    Simulation(String),
}

pub type Result<T> = std::result::Result<T, Error>;
