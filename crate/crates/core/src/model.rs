//! Model primitives: parameters, the agent's utility dual pair, the cost
//! function with its convex dual, the agent Hamiltonian with its maximisers,
//! and the impatience-regime classifier.
//!
//! Conventions. The agent has power utility `u(pi) = pi^(1/gamma)`, so the
//! principal's terminal reward is `F(y) = -y^gamma` with concave conjugate
//! `F*(p) = inf_{y>=0} { y p - F(y) }`. Effort lives in
//! `(a, b) in [0, a_bar] x [eps_m, m]`: `a` is drift effort, `b` the accident
//! intensity scale (accidents arrive at rate `b/m`, each costing `m` on
//! average). Costs are separable, `h(a, b) = h_a(a) + h_b(b)` with
//! `h_b(b) = 1/b - 1/m` fixed and `h_a` selected by [`CostKind`].

use serde::{Deserialize, Serialize};

use crate::numerics;
use crate::{Error, Result};

/// Drift-effort cost selector. Only the two instances with explicit convex
/// duals are supported; a generic cost interface is a non-goal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CostKind {
    /// `h_a(a) = a^2 / 2`
    Quadratic,
    /// `h_a(a) = a^2 / 2 + 2a / 5`
    #[default]
    QuadraticShifted,
}

/// All scalar model primitives.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelParams {
    /// Agent discount rate (> 0).
    pub r: f64,
    /// Principal discount rate (> 0).
    pub rho: f64,
    /// Output volatility (> 0).
    pub sigma: f64,
    /// Utility exponent (> 1).
    pub gamma: f64,
    /// Mean accident size (> 0).
    pub m: f64,
    /// Minimum accident intensity scale, in `(0, m]`.
    pub eps_m: f64,
    /// Maximum drift effort (> 0).
    pub a_bar: f64,
    /// Agent reservation utility `u(R)` (>= 0).
    pub reservation: f64,
    /// Drift-effort cost selector.
    pub cost_kind: CostKind,
}

impl Default for ModelParams {
    /// Benchmark parameters of the numerical study: equally impatient parties,
    /// unit volatility, shifted quadratic effort cost.
    fn default() -> Self {
        Self {
            r: 0.1,
            rho: 0.1,
            sigma: 1.0,
            gamma: 2.0,
            m: 0.1,
            eps_m: 0.1,
            a_bar: 4.6,
            reservation: 0.0,
            cost_kind: CostKind::QuadraticShifted,
        }
    }
}

/// Finite and strictly positive (rejects NaN).
fn is_positive(x: f64) -> bool {
    x.is_finite() && x > 0.0
}

/// Relative tolerance for detecting `delta = 1` from floating-point rates.
const DELTA_ONE_TOL: f64 = 1e-12;

/// The five analytical cases governing the face-lift and the first best.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Regime {
    /// `delta = 1`.
    EquallyImpatient,
    /// `delta > 1` and `m <= -F*(delta F'(0))`; the contact set is `{0}`.
    ImpatientAgentSmallM,
    /// `delta > 1` and `m > -F*(delta F'(0))`; contact on `[0, y_bar]`.
    ImpatientAgentLargeM { y_bar: f64 },
    /// `gamma * delta <= 1`; the principal's problem degenerates.
    DegeneratePrincipal { y_hat: f64 },
    /// `delta < 1` and `gamma * delta > 1`.
    ImpatientPrincipalNondegenerate {
        y_hat: f64,
        y_tilde: f64,
        y_bar: f64,
    },
}

/// A concave function together with its derivative, concave conjugate and
/// conjugate derivative (= minimiser map). Houses `F`/`F*` and the shifted
/// experimental variant; `G*` has its own closed forms on [`ModelParams`].
pub trait DualPair {
    fn value(&self, y: f64) -> f64;
    fn slope(&self, y: f64) -> f64;
    /// `f*(p) = inf_{y >= 0} { y p - f(y) }`
    fn conjugate(&self, p: f64) -> f64;
    /// Minimiser `y*(p)`; equals `(f*)'(p)` where the conjugate is smooth.
    fn conjugate_slope(&self, p: f64) -> f64;
    /// `f'(0)` (right derivative); the conjugate vanishes on `[f'(0), inf)`.
    fn slope_at_zero(&self) -> f64 {
        self.slope(0.0)
    }
}

/// `F(y) = -y^gamma`.
#[derive(Debug, Clone, Copy)]
pub struct PowerUtility {
    pub gamma: f64,
}

impl DualPair for PowerUtility {
    fn value(&self, y: f64) -> f64 {
        -y.powf(self.gamma)
    }

    fn slope(&self, y: f64) -> f64 {
        -self.gamma * y.powf(self.gamma - 1.0)
    }

    fn conjugate(&self, p: f64) -> f64 {
        if p >= 0.0 {
            0.0
        } else {
            let g = self.gamma;
            -(g - 1.0) * (-p / g).powf(g / (g - 1.0))
        }
    }

    fn conjugate_slope(&self, p: f64) -> f64 {
        if p >= 0.0 {
            0.0
        } else {
            let g = self.gamma;
            (-p / g).powf(1.0 / (g - 1.0))
        }
    }
}

/// `F(y) = -y^gamma - gamma y`, the variant with `F'(0) < 0`. Its conjugate is
/// the power conjugate translated by `gamma`. Supported for face-lift
/// evaluation only (experimental); with it both `delta > 1` branches are
/// reachable.
#[derive(Debug, Clone, Copy)]
pub struct ShiftedPowerUtility {
    pub gamma: f64,
}

impl DualPair for ShiftedPowerUtility {
    fn value(&self, y: f64) -> f64 {
        -y.powf(self.gamma) - self.gamma * y
    }

    fn slope(&self, y: f64) -> f64 {
        -self.gamma * y.powf(self.gamma - 1.0) - self.gamma
    }

    fn conjugate(&self, p: f64) -> f64 {
        PowerUtility { gamma: self.gamma }.conjugate(p + self.gamma)
    }

    fn conjugate_slope(&self, p: f64) -> f64 {
        PowerUtility { gamma: self.gamma }.conjugate_slope(p + self.gamma)
    }
}

impl ModelParams {
    /// Impatience ratio `delta = r / rho`.
    pub fn delta(&self) -> f64 {
        self.r / self.rho
    }

    pub fn is_delta_one(&self) -> bool {
        (self.delta() - 1.0).abs() <= DELTA_ONE_TOL
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !is_positive(self.r) {
            problems.push(format!("r must be > 0, got {}", self.r));
        }
        if !is_positive(self.rho) {
            problems.push(format!("rho must be > 0, got {}", self.rho));
        }
        if !is_positive(self.sigma) {
            problems.push(format!("sigma must be > 0, got {}", self.sigma));
        }
        if !(self.gamma.is_finite() && self.gamma > 1.0) {
            problems.push(format!("gamma must be > 1, got {}", self.gamma));
        }
        if !is_positive(self.m) {
            problems.push(format!("m must be > 0, got {}", self.m));
        }
        if !(is_positive(self.eps_m) && self.eps_m <= self.m) {
            problems.push(format!("eps_m must lie in (0, m], got {}", self.eps_m));
        }
        if !is_positive(self.a_bar) {
            problems.push(format!("a_bar must be > 0, got {}", self.a_bar));
        }
        if self.reservation.is_nan() || self.reservation < 0.0 {
            problems.push(format!(
                "reservation must be >= 0, got {}",
                self.reservation
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    pub fn utility(&self) -> PowerUtility {
        PowerUtility { gamma: self.gamma }
    }

    // ---- agent utility dual pair -------------------------------------------------

    /// `F(y) = -y^gamma`; the principal's cost of delivering utility `y`.
    pub fn f_eval(&self, y: f64) -> Result<f64> {
        if y < 0.0 {
            return Err(Error::Domain(format!("F is defined on y >= 0, got {y}")));
        }
        Ok(self.utility().value(y))
    }

    pub fn f_prime(&self, y: f64) -> f64 {
        self.utility().slope(y)
    }

    /// Concave conjugate `F*(p)`; vanishes on `[F'(0), inf)`.
    pub fn f_star(&self, p: f64) -> f64 {
        self.utility().conjugate(p)
    }

    /// Minimiser map `y*(p) = (F*)'(p)`.
    pub fn f_star_prime(&self, p: f64) -> f64 {
        self.utility().conjugate_slope(p)
    }

    // ---- effort cost and its convex dual ----------------------------------------

    pub fn h_a(&self, a: f64) -> f64 {
        match self.cost_kind {
            CostKind::Quadratic => 0.5 * a * a,
            CostKind::QuadraticShifted => 0.5 * a * a + 0.4 * a,
        }
    }

    pub fn h_a_prime(&self, a: f64) -> f64 {
        match self.cost_kind {
            CostKind::Quadratic => a,
            CostKind::QuadraticShifted => a + 0.4,
        }
    }

    pub fn h_b(&self, b: f64) -> f64 {
        1.0 / b - 1.0 / self.m
    }

    pub fn h_b_prime(&self, b: f64) -> f64 {
        -1.0 / (b * b)
    }

    /// Total effort cost `h(a, b)`.
    pub fn cost(&self, a: f64, b: f64) -> f64 {
        self.h_a(a) + self.h_b(b)
    }

    /// Maximiser of `a + p h_a(a)` over `[0, a_bar]`. Concave in `a` for
    /// `p < 0`, so the clamped stationary point is the unique maximiser.
    pub fn g_star_a_argmax(&self, p: f64) -> f64 {
        if p >= 0.0 {
            return self.a_bar;
        }
        let stationary = match self.cost_kind {
            CostKind::Quadratic => -1.0 / p,
            CostKind::QuadraticShifted => -1.0 / p - 0.4,
        };
        stationary.clamp(0.0, self.a_bar)
    }

    /// Maximiser of `-b + p h_b(b)` over `[eps_m, m]`.
    pub fn g_star_b_argmax(&self, p: f64) -> f64 {
        if p >= 0.0 {
            return self.eps_m;
        }
        (-p).sqrt().clamp(self.eps_m, self.m)
    }

    /// `G*(p) = sup_{(a,b)} { a - b + p h(a,b) }`; non-decreasing, convex,
    /// valued in `[-m, a_bar - eps_m]` for `p <= 0`.
    pub fn g_star(&self, p: f64) -> f64 {
        let a = self.g_star_a_argmax(p);
        let b = self.g_star_b_argmax(p);
        a - b + p * self.cost(a, b)
    }

    /// `(G*)'(p) = h(a*(p), b*(p))` by the envelope theorem.
    pub fn g_star_prime(&self, p: f64) -> f64 {
        self.cost(self.g_star_a_argmax(p), self.g_star_b_argmax(p))
    }

    /// `lambda_G = inf { lambda <= 0 : G*(lambda) >= 0 }`, the slope at which
    /// the flow dual breaks even.
    pub fn lambda_g(&self) -> Result<f64> {
        let hi = 0.0;
        debug_assert!(self.g_star(hi) > 0.0);
        let mut lo = -(1.0 / self.a_bar).max(self.m * self.m).max(1.0);
        for _ in 0..200 {
            if self.g_star(lo) < 0.0 {
                return numerics::find_root(|p| self.g_star(p), lo, hi, 1e-14);
            }
            lo *= 2.0;
        }
        Err(Error::Assumption(
            "G* stays non-negative on the searched range".into(),
        ))
    }

    // ---- derived maps ------------------------------------------------------------

    /// `F_dm(y) = F*(delta F'(y)) - delta y F'(y) + F(y) + m`; the margin by
    /// which `F` solves the face-lift equation. Decreasing with a unique zero
    /// `y_bar` when `delta != 1`.
    pub fn f_delta_m(&self, y: f64) -> Result<f64> {
        if self.is_delta_one() {
            return Err(Error::Regime("F_dm is undefined at delta = 1".into()));
        }
        if y < 0.0 {
            return Err(Error::Domain(format!("F_dm is defined on y >= 0, got {y}")));
        }
        let d = self.delta();
        let fp = self.f_prime(y);
        Ok(self.f_star(d * fp) - d * y * fp + self.f_eval(y)? + self.m)
    }

    /// Agent Hamiltonian integrand
    /// `h^A(z, U, a, b) = a z - ((m - b)/m) U - h(a, b)` (Dirac jump measure:
    /// the jump-exposure integral collapses to the scalar `U`).
    pub fn hamiltonian_agent(&self, z: f64, u: f64, a: f64, b: f64) -> Result<f64> {
        // Tolerate float-level grid overshoot of the box endpoints.
        let slack = 1e-9 * (1.0 + self.a_bar.max(self.m));
        if !(-slack..=self.a_bar + slack).contains(&a)
            || !(self.eps_m - slack..=self.m + slack).contains(&b)
        {
            return Err(Error::Domain(format!(
                "(a, b) = ({a}, {b}) outside [0, {}] x [{}, {}]",
                self.a_bar, self.eps_m, self.m
            )));
        }
        let a = a.clamp(0.0, self.a_bar);
        let b = b.clamp(self.eps_m, self.m);
        Ok(a * z - (self.m - b) / self.m * u - self.cost(a, b))
    }

    /// Maximisers of the agent Hamiltonian over `[0, a_bar] x [eps_m, m]`.
    ///
    /// Separable cost: `a*` solves `h_a'(a) = z` clamped; `b* = m` when the
    /// jump exposure is non-negative, otherwise the clamped stationary point of
    /// `(b/m) U - h_b(b)`, i.e. `sqrt(-m/U)`.
    pub fn argmax_agent(&self, z: f64, u: f64) -> (f64, f64) {
        let a = match self.cost_kind {
            CostKind::Quadratic => z,
            CostKind::QuadraticShifted => z - 0.4,
        }
        .clamp(0.0, self.a_bar);
        let b = if u >= 0.0 {
            self.m
        } else {
            (-self.m / u).sqrt().clamp(self.eps_m, self.m)
        };
        (a, b)
    }

    /// First-order inversion of [`ModelParams::argmax_agent`]: the incentive
    /// pair `(z, U) = (dh/da, m dh/db)` that makes `(a, b)` the agent's best
    /// response (up to clamping at the box boundary).
    pub fn incentive_sensitivities(&self, a: f64, b: f64) -> (f64, f64) {
        (self.h_a_prime(a), self.m * self.h_b_prime(b))
    }

    // ---- regime classification ----------------------------------------------------

    /// `y_bar = inf { y >= 0 : F_dm(y) <= 0 }` (power-utility closed form).
    pub fn y_bar_closed_form(&self) -> Result<f64> {
        if self.is_delta_one() {
            return Err(Error::Regime("y_bar is undefined at delta = 1".into()));
        }
        let (g, d) = (self.gamma, self.delta());
        let k = (g - 1.0) * d.powf(g / (g - 1.0)) - d * g + 1.0;
        if !is_positive(k) {
            return Err(Error::Assumption(format!(
                "F_dm leading coefficient must be negative, got {}",
                -k
            )));
        }
        Ok((self.m / k).powf(1.0 / g))
    }

    /// `y_hat = inf { y : F(y) <= -m } = m^(1/gamma)`.
    pub fn y_hat_closed_form(&self) -> f64 {
        self.m.powf(1.0 / self.gamma)
    }

    /// `y_tilde` solving `F(y) = w_0(y) - m` (power-utility closed form);
    /// requires `delta < 1 < gamma * delta`.
    pub fn y_tilde_closed_form(&self) -> Result<f64> {
        let (g, d) = (self.gamma, self.delta());
        if d >= 1.0 || g * d <= 1.0 {
            return Err(Error::Regime(format!(
                "y_tilde needs delta < 1 < gamma*delta, got delta={d}, gamma={g}"
            )));
        }
        let inner = 1.0 - ((g * d - 1.0) / (d * (g - 1.0))).powf(g - 1.0) / d;
        Ok(self.m.powf(1.0 / g) * inner.powf(-1.0 / g))
    }

    /// Coefficient of the accident-free face-lift
    /// `w_0(y) = -((gamma delta - 1)/(gamma - 1))^(gamma-1) (y/delta)^gamma`;
    /// requires `gamma * delta > 1`.
    pub fn w0_coefficient(&self) -> Result<f64> {
        let (g, d) = (self.gamma, self.delta());
        if g * d <= 1.0 {
            return Err(Error::Regime(format!(
                "w_0 needs gamma*delta > 1, got gamma={g}, delta={d}"
            )));
        }
        Ok(((g * d - 1.0) / (g - 1.0)).powf(g - 1.0) / d.powf(g))
    }

    /// Classify the analytical case for the power utility. Exactly one variant
    /// holds; `DegeneratePrincipal` iff `gamma * delta <= 1`.
    pub fn classify_regime(&self) -> Result<Regime> {
        self.validate()?;
        let d = self.delta();
        if self.gamma * d <= 1.0 {
            return Ok(Regime::DegeneratePrincipal {
                y_hat: self.y_hat_closed_form(),
            });
        }
        if self.is_delta_one() {
            return Ok(Regime::EquallyImpatient);
        }
        if d > 1.0 {
            // F'(0) = 0 for the power utility, so F*(delta F'(0)) = 0 and only
            // the large-m branch is reachable (m > 0).
            let threshold = -self.f_star(d * self.f_prime(0.0));
            return if self.m <= threshold {
                Ok(Regime::ImpatientAgentSmallM)
            } else {
                Ok(Regime::ImpatientAgentLargeM {
                    y_bar: self.y_bar_closed_form()?,
                })
            };
        }
        Ok(Regime::ImpatientPrincipalNondegenerate {
            y_hat: self.y_hat_closed_form(),
            y_tilde: self.y_tilde_closed_form()?,
            y_bar: self.y_bar_closed_form()?,
        })
    }
}
