//! The face-lifted utility `Fbar`: the principal's improved terminal reward
//! obtained by optimally delaying termination while paying the agent.
//!
//! `Fbar` solves the Hamilton-Jacobi obstacle equation
//!
//! ```text
//! min{ Fbar - F,  F*(delta Fbar') - delta y Fbar' + Fbar + m } = 0,  Fbar(0) = 0,
//! ```
//!
//! and its shape depends on the impatience ratio `delta = r/rho`:
//!
//! - `delta = 1`: `Fbar = F` (delaying never helps);
//! - `delta > 1`, small `m`: `Fbar` is the concave conjugate of an explicit
//!   slope-space solution `w*` and touches `F` only at `0`;
//! - `delta > 1`, large `m`: `Fbar = F` on `[0, y_bar]`, conjugate of `w*`
//!   beyond, glued C^1 at `y_bar`;
//! - `gamma delta <= 1`: `Fbar = F` up to `y_hat`, then the plateau `-m`;
//! - `delta < 1 < gamma delta`: `Fbar = F` up to `y_tilde`, then `w_0 - m`
//!   where `w_0` is the accident-free face-lift (continuous but not C^1 at
//!   `y_tilde`).
//!
//! Slope-space evaluations use the linear first-order ODEs solved by `w*` and
//! `w_0*`; conjugates are inverted by root-finding on the ODE-implied
//! derivative, which keeps Hamilton-Jacobi residuals well below scheme error.

use crate::model::{DualPair, ModelParams, PowerUtility, Regime, ShiftedPowerUtility};
use crate::numerics::{self, Extrapolation, GridFn, ROOT_TOL};
use crate::{Error, Result};

/// Agent-utility selector for face-lift evaluation.
///
/// `ShiftedPower` (`F(y) = -y^gamma - gamma y`) makes the small-m branch of
/// the `delta > 1` analysis reachable. It is experimental: supported here for
/// evaluation and excluded from acceptance scope.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UtilityKind {
    #[default]
    Power,
    ShiftedPower,
}

#[derive(Debug, Clone, Copy)]
enum Util {
    Power(PowerUtility),
    Shifted(ShiftedPowerUtility),
}

impl Util {
    fn pair(&self) -> &dyn DualPair {
        match self {
            Util::Power(u) => u,
            Util::Shifted(u) => u,
        }
    }
}

#[derive(Debug, Clone)]
enum Branch {
    /// `delta = 1`: `Fbar = F`.
    Identity,
    /// `gamma delta <= 1`: plateau at `-m` past `y_hat`.
    Plateau { y_hat: f64 },
    /// `delta < 1 < gamma delta`: `w_0 - m` past `y_tilde`.
    W0Shift { y_tilde: f64 },
    /// `delta > 1`: conjugate of `w*`. `contact_to = y_bar` on the large-m
    /// branch, `0` on the small-m branch.
    Conjugate {
        small_m: bool,
        p_star: f64,
        contact_to: f64,
    },
}

/// The face-lifted utility for a given parameter set, immutable after
/// construction and safe to share across threads.
pub struct Facelift {
    params: ModelParams,
    util: Util,
    regime: Regime,
    branch: Branch,
    conjugate_table: Option<GridFn>,
}

/// Quadrature tolerance for slope-space integrals. HJ residuals are asserted
/// at 1e-6, so intermediate values need a few orders more.
const QUAD_TOL: f64 = 1e-12;

impl Facelift {
    /// Face-lift for the power utility `F(y) = -y^gamma`.
    pub fn new(params: &ModelParams) -> Result<Self> {
        Self::with_utility(params, UtilityKind::Power)
    }

    pub fn with_utility(params: &ModelParams, kind: UtilityKind) -> Result<Self> {
        params.validate()?;
        let util = match kind {
            UtilityKind::Power => Util::Power(PowerUtility {
                gamma: params.gamma,
            }),
            UtilityKind::ShiftedPower => Util::Shifted(ShiftedPowerUtility {
                gamma: params.gamma,
            }),
        };
        let mut lift = Facelift {
            params: *params,
            util,
            regime: Regime::EquallyImpatient,
            branch: Branch::Identity,
            conjugate_table: None,
        };
        lift.classify()?;
        if matches!(lift.branch, Branch::Conjugate { .. }) {
            lift.conjugate_table = Some(lift.build_conjugate_table()?);
        }
        Ok(lift)
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn regime(&self) -> &Regime {
        &self.regime
    }

    /// Tabulated `w*` in slope space, present on the `delta > 1` branches.
    pub fn conjugate_table(&self) -> Option<&GridFn> {
        self.conjugate_table.as_ref()
    }

    // ---- primitive maps under the selected utility -------------------------------

    fn f(&self, y: f64) -> f64 {
        self.util.pair().value(y)
    }

    fn f_prime(&self, y: f64) -> f64 {
        self.util.pair().slope(y)
    }

    fn f_star(&self, p: f64) -> f64 {
        self.util.pair().conjugate(p)
    }

    fn f_delta_m(&self, y: f64) -> f64 {
        let d = self.params.delta();
        let fp = self.f_prime(y);
        self.f_star(d * fp) - d * y * fp + self.f(y) + self.params.m
    }

    // ---- construction --------------------------------------------------------------

    fn classify(&mut self) -> Result<()> {
        let p = &self.params;
        let (g, d, m) = (p.gamma, p.delta(), p.m);
        if g * d <= 1.0 {
            let y_hat = self.solve_y_hat()?;
            self.regime = Regime::DegeneratePrincipal { y_hat };
            self.branch = Branch::Plateau { y_hat };
            return Ok(());
        }
        if p.is_delta_one() {
            self.regime = Regime::EquallyImpatient;
            self.branch = Branch::Identity;
            return Ok(());
        }
        if d > 1.0 {
            let small_m = m <= -self.f_star(d * self.f_prime(0.0));
            if small_m {
                // y_bar = 0; the contact set is {0} and w* lives below
                // f_dm = (F*)^{-1}(-m) / delta.
                let p_star = self.solve_f_star_inverse(-m)? / d;
                self.regime = Regime::ImpatientAgentSmallM;
                self.branch = Branch::Conjugate {
                    small_m: true,
                    p_star,
                    contact_to: 0.0,
                };
            } else {
                let y_bar = self.solve_y_bar()?;
                self.regime = Regime::ImpatientAgentLargeM { y_bar };
                self.branch = Branch::Conjugate {
                    small_m: false,
                    p_star: self.f_prime(y_bar),
                    contact_to: y_bar,
                };
            }
            return Ok(());
        }
        let y_hat = self.solve_y_hat()?;
        let y_bar = self.solve_y_bar()?;
        let y_tilde = self.solve_y_tilde(y_hat, y_bar)?;
        self.regime = Regime::ImpatientPrincipalNondegenerate {
            y_hat,
            y_tilde,
            y_bar,
        };
        self.branch = Branch::W0Shift { y_tilde };
        Ok(())
    }

    /// Check that `F_dm` is decreasing on the sampled range, then locate its
    /// unique zero.
    fn solve_y_bar(&self) -> Result<f64> {
        let mut hi = 1.0;
        for _ in 0..200 {
            if self.f_delta_m(hi) < 0.0 {
                break;
            }
            hi *= 2.0;
        }
        if self.f_delta_m(hi) >= 0.0 {
            return Err(Error::Assumption(
                "F_dm has no sign change on the searched range".into(),
            ));
        }
        let mut prev = f64::INFINITY;
        for i in 0..=400 {
            let y = hi * i as f64 / 400.0;
            let v = self.f_delta_m(y);
            if v > prev + 1e-12 {
                return Err(Error::Assumption(format!(
                    "F_dm is not decreasing near y = {y}"
                )));
            }
            prev = v;
        }
        numerics::find_root(|y| self.f_delta_m(y), 0.0, hi, ROOT_TOL)
    }

    /// `y_hat = inf { y : F(y) <= -m }`.
    fn solve_y_hat(&self) -> Result<f64> {
        let m = self.params.m;
        let mut hi = 1.0;
        while self.f(hi) > -m {
            hi *= 2.0;
        }
        numerics::find_root(|y| self.f(y) + m, 0.0, hi, ROOT_TOL)
    }

    /// `y_tilde` solving `F(y) = w_0(y) - m` on `(y_hat, y_bar)`.
    fn solve_y_tilde(&self, y_hat: f64, y_bar: f64) -> Result<f64> {
        let chi = |y: f64| self.f(y) - self.w0(y).unwrap_or(f64::NAN) + self.params.m;
        numerics::find_root(chi, y_hat, y_bar, ROOT_TOL)
    }

    /// Inverse of the increasing map `p -> F*(p)` on `(-inf, F'(0))`.
    fn solve_f_star_inverse(&self, target: f64) -> Result<f64> {
        let hi = self.f_prime(0.0);
        let mut lo = hi - 1.0;
        while self.f_star(lo) > target {
            lo = hi + 2.0 * (lo - hi);
        }
        numerics::find_root(|p| self.f_star(p) - target, lo, hi, ROOT_TOL)
    }

    // ---- slope-space machinery for delta > 1 ----------------------------------------

    /// `w*(p)` for `p <= p*`: quadrature of the explicit solution of the
    /// linear slope-space ODE, plus its boundary terms.
    pub fn w_star(&self, p: f64) -> Result<f64> {
        let Branch::Conjugate {
            small_m, p_star, ..
        } = self.branch
        else {
            return Err(Error::Regime("w* is defined only for delta > 1".into()));
        };
        if p > p_star {
            return Err(Error::Domain(format!(
                "w* is defined on p <= {p_star}, got {p}"
            )));
        }
        let d = self.params.delta();
        let m = self.params.m;
        let e = 1.0 + 1.0 / (1.0 - d);
        let integral =
            numerics::integrate(|x| self.f_star(d * x) / (-x).powf(e), p, p_star, QUAD_TOL)?;
        let boundary = if small_m { 0.0 } else { self.f_star(p_star) };
        Ok((-p).powf(1.0 / (1.0 - d)) / (d - 1.0) * integral
            + m
            + (p / p_star).powf(1.0 / (1.0 - d)) * (boundary - m))
    }

    /// `(w*)'(p)` through the ODE it solves:
    /// `(1 - delta) p (w*)' = w* - F*(delta p) - m`.
    pub fn w_star_slope(&self, p: f64) -> Result<f64> {
        let d = self.params.delta();
        Ok((self.w_star(p)? - self.f_star(d * p) - self.params.m) / ((1.0 - d) * p))
    }

    fn build_conjugate_table(&self) -> Result<GridFn> {
        let Branch::Conjugate { p_star, .. } = self.branch else {
            unreachable!()
        };
        let d = self.params.delta();
        let lo = (4.0 * d * self.f_prime(50.0)).min(-100.0).min(4.0 * p_star);
        let n = 4000;
        let ratio = lo / p_star;
        let mut ps: Vec<f64> = (0..n)
            .map(|i| p_star * ratio.powf(i as f64 / (n - 1) as f64))
            .collect();
        ps.reverse();
        let vals = crate::exec::map_indexed(n, |i| self.w_star(ps[i]).unwrap_or(f64::NAN));
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::Assumption(
                "w* table contains non-finite values".into(),
            ));
        }
        GridFn::new(ps, vals, Extrapolation::Error)
    }

    /// Solve `(w*)'(p) = y` on `(-inf, p*]` for the conjugate argmin.
    fn conjugate_argmin(&self, y: f64) -> Result<f64> {
        let Branch::Conjugate { p_star, .. } = self.branch else {
            unreachable!()
        };
        let slope_at_star = self.w_star_slope(p_star)?;
        if y <= slope_at_star {
            return Ok(p_star);
        }
        let mut lo = 2.0 * p_star.min(-1e-3);
        for _ in 0..200 {
            if self.w_star_slope(lo)? >= y {
                break;
            }
            lo *= 2.0;
        }
        numerics::find_root(
            |p| self.w_star_slope(p).unwrap_or(f64::NAN) - y,
            lo,
            p_star,
            ROOT_TOL * lo.abs().max(1.0),
        )
    }

    // ---- accident-free face-lift w_0 (gamma delta > 1) ------------------------------

    /// Cutoff past which the discounted `w_0*` integrand is below 1e-14.
    fn w0_t_cut(&self) -> f64 {
        let (g, d, rho) = (self.params.gamma, self.params.delta(), self.params.rho);
        let decay = if d > 1.0 {
            1.0
        } else {
            1.0 - (1.0 - d) * g / (g - 1.0)
        };
        (1e14f64).ln() / (rho * decay)
    }

    /// `w_0*(p)`: the discounted slope-space transform of `F*` for the
    /// accident-free problem.
    fn w0_star(&self, p: f64) -> Result<f64> {
        let (d, rho) = (self.params.delta(), self.params.rho);
        numerics::integrate(
            |t| rho * (-rho * t).exp() * self.f_star(d * p * (rho * (1.0 - d) * t).exp()),
            0.0,
            self.w0_t_cut(),
            QUAD_TOL,
        )
    }

    fn w0_star_slope(&self, p: f64) -> Result<f64> {
        let d = self.params.delta();
        Ok((self.w0_star(p)? - self.f_star(d * p)) / ((1.0 - d) * p))
    }

    /// Accident-free face-lift `w_0(y)`; closed form for the power utility,
    /// conjugate inversion otherwise. Requires `gamma delta > 1`.
    pub fn w0(&self, y: f64) -> Result<f64> {
        match self.util {
            Util::Power(_) => Ok(-self.params.w0_coefficient()? * y.powf(self.params.gamma)),
            Util::Shifted(_) => {
                self.params.w0_coefficient()?; // regime gate
                if y == 0.0 {
                    return Ok(0.0);
                }
                let p_hat = self.w0_argmin(y)?;
                Ok(y * p_hat - self.w0_star(p_hat)?)
            }
        }
    }

    /// `w_0'(y)`.
    pub fn w0_prime(&self, y: f64) -> Result<f64> {
        match self.util {
            Util::Power(_) => {
                let g = self.params.gamma;
                Ok(-self.params.w0_coefficient()? * g * y.powf(g - 1.0))
            }
            Util::Shifted(_) => self.w0_argmin(y),
        }
    }

    fn w0_argmin(&self, y: f64) -> Result<f64> {
        let mut hi = -1e-10;
        if self.w0_star_slope(hi)? >= y {
            return Ok(hi);
        }
        let mut lo = -1.0;
        for _ in 0..200 {
            if self.w0_star_slope(lo)? >= y {
                break;
            }
            hi = lo;
            lo *= 2.0;
        }
        numerics::find_root(
            |p| self.w0_star_slope(p).unwrap_or(f64::NAN) - y,
            lo,
            hi,
            ROOT_TOL * lo.abs().max(1.0),
        )
    }

    // ---- thresholds ------------------------------------------------------------------

    pub fn y_bar(&self) -> Option<f64> {
        match (&self.regime, &self.branch) {
            (Regime::ImpatientAgentLargeM { y_bar }, _) => Some(*y_bar),
            (Regime::ImpatientAgentSmallM, _) => Some(0.0),
            (Regime::ImpatientPrincipalNondegenerate { y_bar, .. }, _) => Some(*y_bar),
            _ => None,
        }
    }

    pub fn y_hat(&self) -> Option<f64> {
        match &self.regime {
            Regime::DegeneratePrincipal { y_hat } => Some(*y_hat),
            Regime::ImpatientPrincipalNondegenerate { y_hat, .. } => Some(*y_hat),
            _ => None,
        }
    }

    pub fn y_tilde(&self) -> Option<f64> {
        match &self.regime {
            Regime::ImpatientPrincipalNondegenerate { y_tilde, .. } => Some(*y_tilde),
            _ => None,
        }
    }

    /// Upper endpoint of the `w*` slope domain (`delta > 1` branches).
    pub fn p_star(&self) -> Option<f64> {
        match self.branch {
            Branch::Conjugate { p_star, .. } => Some(p_star),
            _ => None,
        }
    }

    /// Right endpoint of the contact set `{ y : Fbar(y) = F(y) }`
    /// (`f64::INFINITY` when the two functions coincide everywhere).
    pub fn contact_threshold(&self) -> f64 {
        match self.branch {
            Branch::Identity => f64::INFINITY,
            Branch::Plateau { y_hat } => y_hat,
            Branch::W0Shift { y_tilde, .. } => y_tilde,
            Branch::Conjugate { contact_to, .. } => contact_to,
        }
    }

    /// The C^0-only kink location, if any. (`y_bar` on the large-m branch is a
    /// C^1 gluing and is not reported here.)
    pub fn kink(&self) -> Option<f64> {
        match self.branch {
            Branch::Plateau { y_hat } => Some(y_hat),
            Branch::W0Shift { y_tilde } => Some(y_tilde),
            _ => None,
        }
    }

    // ---- evaluation --------------------------------------------------------------------

    /// `Fbar(y)`.
    pub fn eval(&self, y: f64) -> Result<f64> {
        if y < 0.0 {
            return Err(Error::Domain(format!("Fbar is defined on y >= 0, got {y}")));
        }
        match self.branch {
            Branch::Identity => Ok(self.f(y)),
            Branch::Plateau { y_hat } => Ok(if y <= y_hat {
                self.f(y)
            } else {
                -self.params.m
            }),
            Branch::W0Shift { y_tilde } => {
                if y <= y_tilde {
                    Ok(self.f(y))
                } else {
                    Ok(self.w0(y)? - self.params.m)
                }
            }
            Branch::Conjugate { contact_to, .. } => {
                if y <= contact_to {
                    Ok(self.f(y))
                } else if y == 0.0 {
                    Ok(0.0)
                } else {
                    let p_hat = self.conjugate_argmin(y)?;
                    Ok(y * p_hat - self.w_star(p_hat)?)
                }
            }
        }
    }

    /// `Fbar'(y)`; the left derivative at a kink.
    pub fn prime(&self, y: f64) -> Result<f64> {
        match self.branch {
            Branch::Identity => Ok(self.f_prime(y)),
            Branch::Plateau { y_hat } => Ok(if y <= y_hat { self.f_prime(y) } else { 0.0 }),
            Branch::W0Shift { y_tilde } => {
                if y <= y_tilde {
                    Ok(self.f_prime(y))
                } else {
                    self.w0_prime(y)
                }
            }
            Branch::Conjugate { contact_to, .. } => {
                if y <= contact_to {
                    Ok(self.f_prime(y))
                } else {
                    self.conjugate_argmin(y)
                }
            }
        }
    }

    /// Both slots of the Hamilton-Jacobi equation at `y`:
    /// `(Fbar - F, F*(delta Fbar') - delta y Fbar' + Fbar + m)`.
    pub fn hj_slots(&self, y: f64) -> Result<(f64, f64)> {
        let d = self.params.delta();
        let v = self.eval(y)?;
        let vp = self.prime(y)?;
        let obstacle = v - self.f(y);
        let ode = self.f_star(d * vp) - d * y * vp + v + self.params.m;
        Ok((obstacle, ode))
    }

    /// Residual of the Hamilton-Jacobi equation, `min` of the two slots.
    /// Returns `None` within `kink_window` of a threshold, where `Fbar` is not
    /// smooth enough for the residual to be meaningful.
    pub fn hj_residual(&self, y: f64, kink_window: f64) -> Result<Option<f64>> {
        let near = |t: f64| (y - t).abs() <= kink_window;
        let skip = match self.branch {
            Branch::Identity => false,
            Branch::Plateau { y_hat } => near(y_hat),
            Branch::W0Shift { y_tilde } => near(y_tilde),
            Branch::Conjugate { contact_to, .. } => contact_to > 0.0 && near(contact_to),
        };
        if skip {
            return Ok(None);
        }
        let (obstacle, ode) = self.hj_slots(y)?;
        Ok(Some(obstacle.min(ode)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::CostKind;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "expected {b}, got {a} (tol {tol})");
    }

    fn params(delta: f64, m: f64) -> ModelParams {
        ModelParams {
            r: 0.1 * delta,
            rho: 0.1,
            gamma: 2.0,
            m,
            eps_m: 0.1_f64.min(m),
            cost_kind: CostKind::Quadratic,
            ..ModelParams::default()
        }
    }

    #[test]
    fn y_bar_closed_form_vs_root() {
        let lift = Facelift::new(&params(2.0, 6.0)).unwrap();
        assert_close(lift.y_bar().unwrap(), 6.0_f64.sqrt(), 1e-8);
        let lift = Facelift::new(&params(0.75, 6.0)).unwrap();
        let p = params(0.75, 6.0);
        assert_close(lift.y_bar().unwrap(), p.y_bar_closed_form().unwrap(), 1e-8);
        // m -> 0 sends y_bar -> 0.
        let lift = Facelift::new(&params(2.0, 1e-10)).unwrap();
        assert!(lift.y_bar().unwrap() < 1e-4);
    }

    #[test]
    fn y_hat_and_y_tilde() {
        let lift = Facelift::new(&params(0.75, 6.0)).unwrap();
        assert_close(lift.y_hat().unwrap(), 6.0_f64.sqrt(), 1e-10);
        assert_close(lift.y_tilde().unwrap(), 3.0 * 6.0_f64.sqrt(), 1e-8);
        assert!(lift.y_hat().unwrap() < lift.y_tilde().unwrap());
        assert!(lift.y_tilde().unwrap() < lift.y_bar().unwrap());
        let lift = Facelift::new(&params(0.75, 0.25)).unwrap();
        assert_close(lift.y_hat().unwrap(), 0.5, 1e-10);
        // |F(y_tilde) - w0(y_tilde) + m| small
        let yt = lift.y_tilde().unwrap();
        let chi = -yt * yt - lift.w0(yt).unwrap() + 0.25;
        assert!(chi.abs() <= 1e-10, "chi(y_tilde) = {chi}");
    }

    #[test]
    fn w0_closed_form_and_ode_residual() {
        let lift = Facelift::new(&params(0.75, 6.0)).unwrap();
        assert_eq!(lift.w0(0.0).unwrap(), 0.0);
        // coefficient (gamma delta - 1)/(gamma - 1) = 0.5, w0(3) = -0.5 * (3/0.75)^2 = -8
        assert_close(lift.w0(3.0).unwrap(), -8.0, 1e-12);
        let p = params(0.75, 6.0);
        let d = p.delta();
        for i in 1..=100 {
            let y = 0.1 + 9.9 * i as f64 / 100.0;
            let w = lift.w0(y).unwrap();
            let wp = lift.w0_prime(y).unwrap();
            let res = p.f_star(d * wp) - d * y * wp + w;
            assert!(res.abs() <= 1e-9, "w0 ODE residual {res} at y={y}");
        }
    }

    #[test]
    fn delta_one_facelift_is_f() {
        let lift = Facelift::new(&params(1.0, 0.3)).unwrap();
        for i in 0..=100 {
            let y = 10.0 * i as f64 / 100.0;
            assert_eq!(lift.eval(y).unwrap(), -y * y);
        }
        let (obstacle, ode) = lift.hj_slots(1.7).unwrap();
        assert_eq!(obstacle, 0.0);
        assert!(ode >= 0.0);
        assert_eq!(lift.hj_residual(1.7, 0.0).unwrap().unwrap(), 0.0);
    }

    #[test]
    fn plateau_facelift() {
        // gamma delta = 0.8 <= 1
        let lift = Facelift::new(&params(0.4, 6.0)).unwrap();
        let y_hat = lift.y_hat().unwrap();
        assert_close(y_hat, 6.0_f64.sqrt(), 1e-10);
        assert_eq!(lift.eval(3.0).unwrap(), -6.0);
        assert_eq!(lift.eval(1.0).unwrap(), -1.0);
        assert_eq!(lift.eval(0.0).unwrap(), 0.0);
    }

    #[test]
    fn w0_shift_facelift_values() {
        let lift = Facelift::new(&params(0.75, 6.0)).unwrap();
        assert_eq!(lift.eval(0.0).unwrap(), 0.0);
        // y = 8 > y_tilde: -0.5 (8/0.75)^2 - 6
        assert_close(
            lift.eval(8.0).unwrap(),
            -0.5 * (8.0_f64 / 0.75).powi(2) - 6.0,
            1e-10,
        );
        // continuity at the kink
        let yt = lift.y_tilde().unwrap();
        let left = lift.eval(yt * (1.0 - 1e-9)).unwrap();
        let right = lift.eval(yt * (1.0 + 1e-9)).unwrap();
        assert_close(left, right, 1e-6);
        assert_close(lift.eval(yt).unwrap(), -yt * yt, 1e-10);
    }

    #[test]
    fn delta_bigger_one_matches_explicit_power_formula() {
        // gamma=2, delta=2, m=6: w*(p) = 8 sqrt(6)/p - p^2/3 + 6 on p <= -2 sqrt(6).
        let lift = Facelift::new(&params(2.0, 6.0)).unwrap();
        let p_star = lift.p_star().unwrap();
        assert_close(p_star, -2.0 * 6.0_f64.sqrt(), 1e-8);
        let explicit = |p: f64| 8.0 * 6.0_f64.sqrt() / p - p * p / 3.0 + 6.0;
        for &p in &[p_star, 2.0 * p_star, 5.0 * p_star, 20.0 * p_star] {
            assert_close(lift.w_star(p).unwrap(), explicit(p), 1e-7);
        }
        assert!(lift.w_star(p_star * 0.5).is_err(), "w* must reject p > p*");
        // Boundary condition w*(p_bar) = F*(p_bar).
        let p = params(2.0, 6.0);
        assert_close(lift.w_star(p_star).unwrap(), p.f_star(p_star), 1e-9);
    }

    /// The slope-space integrand of `w*` against a brute-force trapezoid
    /// oracle, plus the tolerance-scaling contract of the adaptive rule on
    /// the same integrand.
    #[test]
    fn w_star_integral_vs_trapezoid_oracle() {
        let p = params(2.0, 6.0);
        let lift = Facelift::new(&p).unwrap();
        let p_star = lift.p_star().unwrap();
        let d = p.delta();
        let e = 1.0 + 1.0 / (1.0 - d);
        let f = |x: f64| p.f_star(d * x) / (-x).powf(e);
        let (a, b) = (2.0 * p_star, p_star);
        let adaptive = numerics::integrate(f, a, b, 1e-10).unwrap();
        let n = 1_000_000;
        let hh = (b - a) / n as f64;
        let mut oracle = 0.5 * (f(a) + f(b));
        for i in 1..n {
            oracle += f(a + i as f64 * hh);
        }
        oracle *= hh;
        assert_close(adaptive, oracle, 1e-6 * oracle.abs());
        let finer = numerics::integrate(f, a, b, 1e-11).unwrap();
        assert!((adaptive - finer).abs() <= 5.0 * 1e-10 * (1.0 + oracle.abs()));
    }

    #[test]
    fn w_star_concavity() {
        let lift = Facelift::new(&params(2.0, 6.0)).unwrap();
        let table = lift.conjugate_table().unwrap();
        let n = table.len();
        // second differences of w* on 500 nodes sampled from the table
        let step = n / 500;
        let xs = table.xs();
        let ys = table.ys();
        for i in (step..n - step).step_by(step) {
            let (x0, x1, x2) = (xs[i - step], xs[i], xs[i + step]);
            let (y0, y1, y2) = (ys[i - step], ys[i], ys[i + step]);
            let s1 = (y1 - y0) / (x1 - x0);
            let s2 = (y2 - y1) / (x2 - x1);
            assert!(s2 < s1 + 1e-10, "w* slope not decreasing near p={x1}");
        }
    }

    #[test]
    fn facelift_delta2_contact_and_smoothness() {
        let lift = Facelift::new(&params(2.0, 6.0)).unwrap();
        let y_bar = lift.y_bar().unwrap();
        // On [0, y_bar]: identical to F.
        assert_eq!(lift.eval(0.5 * y_bar).unwrap(), -(0.5 * y_bar).powi(2));
        // Beyond: strictly above F, decreasing, C1 at y_bar.
        for &y in &[y_bar * 1.1, y_bar * 1.5, y_bar * 3.0, y_bar * 6.0] {
            assert!(lift.eval(y).unwrap() > -y * y + 1e-12);
        }
        let h = 1e-6 * y_bar;
        let left = (lift.eval(y_bar).unwrap() - lift.eval(y_bar - h).unwrap()) / h;
        let right = (lift.eval(y_bar + h).unwrap() - lift.eval(y_bar).unwrap()) / h;
        assert_close(left, right, 1e-3);
        assert_close(
            lift.prime(y_bar * 1.5).unwrap(),
            {
                let hh = 1e-7 * y_bar;
                (lift.eval(y_bar * 1.5 + hh).unwrap() - lift.eval(y_bar * 1.5 - hh).unwrap())
                    / (2.0 * hh)
            },
            1e-5,
        );
    }

    #[test]
    fn hj_residual_small_everywhere() {
        for (delta, m) in [(2.0, 6.0), (0.75, 6.0), (0.4, 6.0), (1.0, 6.0)] {
            let lift = Facelift::new(&params(delta, m)).unwrap();
            let window = 2.0 * 12.0 / 1000.0;
            let mut checked = 0;
            for i in 1..1000 {
                let y = 12.0 * i as f64 / 1000.0;
                if let Some(res) = lift.hj_residual(y, window).unwrap() {
                    assert!(
                        res.abs() <= 1e-6,
                        "HJ residual {res} at y={y} (delta={delta}, m={m})"
                    );
                    checked += 1;
                }
            }
            assert!(checked > 900, "too few residual checks: {checked}");
        }
    }

    #[test]
    fn facelift_dominates_f_with_asserted_contact_set() {
        for (delta, m) in [(2.0, 6.0), (0.75, 6.0), (0.4, 6.0), (1.0, 6.0)] {
            let lift = Facelift::new(&params(delta, m)).unwrap();
            let threshold = lift.contact_threshold();
            for i in 0..=2000 {
                let y = 12.0 * i as f64 / 2000.0;
                let fbar = lift.eval(y).unwrap();
                let f = -y * y;
                assert!(fbar >= f - 1e-12, "Fbar < F at y={y} (delta={delta})");
                if y <= threshold {
                    assert!(
                        (fbar - f).abs() <= 1e-12,
                        "contact violated at y={y} <= {threshold} (delta={delta})"
                    );
                } else {
                    assert!(
                        fbar > f,
                        "no strict gap at y={y} > {threshold} (delta={delta})"
                    );
                }
            }
        }
    }

    #[test]
    fn growth_bound_on_large_range() {
        for (delta, m) in [(2.0, 6.0), (0.75, 6.0)] {
            let lift = Facelift::new(&params(delta, m)).unwrap();
            for i in 1..=100 {
                let y = 50.0 * i as f64 / 100.0;
                let ratio = lift.eval(y).unwrap().abs() / (1.0 + y * y);
                assert!(ratio <= 10.0, "growth ratio {ratio} at y={y}");
            }
        }
    }

    #[test]
    fn facelift_increases_as_m_shrinks_and_stays_below_w0() {
        let m_values = [2.0, 6.0];
        let lifts: Vec<Facelift> = m_values
            .iter()
            .map(|&m| Facelift::new(&params(2.0, m)).unwrap())
            .collect();
        for i in 1..=50 {
            let y = 10.0 * i as f64 / 50.0;
            let small = lifts[0].eval(y).unwrap();
            let large = lifts[1].eval(y).unwrap();
            assert!(small >= large - 1e-9, "Fbar not monotone in m at y={y}");
            let w0 = lifts[0].w0(y).unwrap();
            assert!(small <= w0 + 1e-9, "Fbar above w0 at y={y}");
        }
    }

    #[test]
    fn shifted_utility_small_m_branch() {
        // F(y) = -y^2 - 2y has F*(2F'(0)) = -(delta-1)^2 = -1, so m <= 1
        // lands in the small-m branch.
        let p = params(2.0, 0.5);
        let lift = Facelift::with_utility(&p, UtilityKind::ShiftedPower).unwrap();
        assert!(matches!(lift.regime(), Regime::ImpatientAgentSmallM));
        assert_eq!(lift.contact_threshold(), 0.0);
        // w*(p*) = 0 on the small-m branch.
        let p_star = lift.p_star().unwrap();
        assert_close(lift.w_star(p_star).unwrap(), 0.0, 1e-12);
        // Fbar(0) = 0; strictly above F away from zero.
        assert_close(lift.eval(0.0).unwrap(), 0.0, 1e-9);
        let u = ShiftedPowerUtility { gamma: 2.0 };
        for &y in &[0.25, 1.0, 3.0] {
            assert!(lift.eval(y).unwrap() > u.value(y));
        }
        // HJ residual away from zero.
        for &y in &[0.5, 1.0, 2.0, 4.0] {
            let res = lift.hj_residual(y, 0.0).unwrap().unwrap();
            assert!(res.abs() <= 1e-6, "shifted small-m residual {res} at y={y}");
        }
        // Large m flips to the large-m branch.
        let lift = Facelift::with_utility(&params(2.0, 3.0), UtilityKind::ShiftedPower).unwrap();
        assert!(matches!(lift.regime(), Regime::ImpatientAgentLargeM { .. }));
    }
}
