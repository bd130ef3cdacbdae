//! The first-best value function `vFB` (observable effort): the principal
//! dictates the effort subject only to the agent's participation constraint.
//!
//! By Lagrangian duality the problem collapses to scalar optimisation over the
//! multiplier `lambda <= 0` and a retirement date `T`:
//!
//! - `gamma delta <= 1`: the problem degenerates, `vFB = a_bar - eps_m`, and
//!   no optimal contract exists;
//! - `delta = 1`: a KKT piecewise form: strictly concave head, an affine
//!   segment with slope `lambda_G`, then `F` itself — C^1 throughout;
//! - `delta > 1`: an explicit concave dual `vFB*` (an integral of
//!   `F* - G*` in slope space) when the initial value `v0 > 0`; `vFB = Fbar`
//!   near zero when `v0 = 0`;
//! - `delta < 1 < gamma delta`: not analysed; construction reports an error.

use serde::Serialize;

use crate::facelift::Facelift;
use crate::model::{ModelParams, Regime};
use crate::numerics::{self, ROOT_TOL};
use crate::{Error, Result};

/// `v0` below this threshold is treated as exactly zero; the dichotomy in the
/// dual construction is on exact zero, numerics need a band.
const V0_ZERO_BAND: f64 = 1e-8;

const QUAD_TOL: f64 = 1e-12;

/// Grid sizes for the nested `inf_lambda sup_T` optimisation.
#[derive(Debug, Clone, Copy)]
pub struct V0Grids {
    pub n_lambda: usize,
    pub n_t: usize,
}

impl Default for V0Grids {
    fn default() -> Self {
        Self {
            n_lambda: 2000,
            n_t: 400,
        }
    }
}

/// Scalar outputs of the first-best analysis (JSON sidecar of the CLI).
#[derive(Debug, Clone, Copy, Serialize)]
pub struct FirstBestReport {
    pub lambda_g: f64,
    pub y_fstar: Option<f64>,
    pub y_fstar_gstar: Option<f64>,
    pub v0: Option<f64>,
    pub lambda0_star: Option<f64>,
}

#[derive(Debug, Clone)]
enum FbBranch {
    /// `gamma delta <= 1`.
    Degenerate,
    /// `delta = 1` with `lambda_G < F'(0)`.
    Delta1 {
        lambda_g: f64,
        y_fstar: f64,
        y_fstar_gstar: f64,
    },
    /// `delta = 1` with `lambda_G >= F'(0)`: `vFB = F`.
    Delta1Barrier,
    /// `delta > 1`, `v0 > 0`: conjugate of the explicit dual.
    DualConjugate { v0: f64, lambda0: f64 },
    /// `delta > 1`, `v0 = 0`: `vFB = Fbar` on a neighbourhood of zero whose
    /// width is not characterised for the power utility.
    BarrierNearZero,
}

/// First-best value function, immutable after construction.
pub struct FirstBest {
    params: ModelParams,
    regime: Regime,
    branch: FbBranch,
    facelift: Facelift,
    report: FirstBestReport,
}

/// The inner part of the KKT dual: for fixed `lambda <= 0`,
/// `sup_T { -e^{-rho T} F*(lambda e^{rho(1-delta)T}) + int_0^T rho e^{-rho s} (G*-F*)(lambda delta e^{rho(1-delta)s}) ds }`,
/// with the `T = infinity` candidate included.
fn sup_over_t(params: &ModelParams, lambda: f64, n_t: usize) -> f64 {
    let (rho, d) = (params.rho, params.delta());
    let boundary = |t: f64| -(-rho * t).exp() * params.f_star(lambda * (rho * (1.0 - d) * t).exp());
    let flow = |s: f64| {
        let arg = lambda * d * (rho * (1.0 - d) * s).exp();
        rho * (-rho * s).exp() * (params.g_star(arg) - params.f_star(arg))
    };
    // Discount-weighted integrand decay rate; slower than rho when delta < 1
    // because F* grows along the flow argument.
    let decay = if d > 1.0 {
        1.0
    } else {
        1.0 - (1.0 - d) * params.gamma / (params.gamma - 1.0)
    };
    let t_max = (1e12f64).ln() / (rho * decay);

    let mut ts = Vec::with_capacity(n_t + 1);
    ts.push(0.0);
    for i in 0..n_t {
        ts.push(1e-4 * (t_max / 1e-4).powf(i as f64 / (n_t - 1) as f64));
    }
    // Cumulative integral by per-segment Simpson.
    let mut cum = vec![0.0_f64; ts.len()];
    for i in 1..ts.len() {
        let (a, b) = (ts[i - 1], ts[i]);
        let mid = 0.5 * (a + b);
        cum[i] = cum[i - 1] + (b - a) / 6.0 * (flow(a) + 4.0 * flow(mid) + flow(b));
    }
    let mut best = cum[ts.len() - 1]; // T = infinity candidate (boundary term vanishes)
    let mut best_idx = None;
    for (i, &t) in ts.iter().enumerate() {
        let v = boundary(t) + cum[i];
        if v > best {
            best = v;
            best_idx = Some(i);
        }
    }
    if let Some(i) = best_idx {
        // Refine the finite maximiser between its neighbours.
        let lo = if i == 0 { 0.0 } else { ts[i - 1] };
        let hi = if i + 1 < ts.len() { ts[i + 1] } else { t_max };
        let base = if i == 0 { 0.0 } else { cum[i - 1] };
        let objective = |t: f64| {
            let tail = numerics::integrate(flow, lo, t, QUAD_TOL).unwrap_or(f64::NEG_INFINITY);
            -(boundary(t) + base + tail)
        };
        let t_hat = numerics::golden_min(objective, lo, hi, 1e-10 * hi.max(1.0));
        best = best.max(-objective(t_hat));
    }
    best
}

/// `v0 = inf_{lambda <= 0} sup_T { ... }` together with its minimiser
/// `lambda0* = (vFB)'(0)`. Requires `gamma delta > 1` and `delta != 1`.
pub fn v0_first_best(params: &ModelParams) -> Result<(f64, f64)> {
    v0_first_best_with(params, V0Grids::default())
}

pub fn v0_first_best_with(params: &ModelParams, grids: V0Grids) -> Result<(f64, f64)> {
    params.validate()?;
    let d = params.delta();
    if params.gamma * d <= 1.0 {
        return Err(Error::Regime("v0 needs gamma*delta > 1".into()));
    }
    if params.is_delta_one() {
        // Simplified form of the KKT dual at y = 0.
        let lambda_g = params.lambda_g()?;
        let tail = -params.f_star(lambda_g);
        let inner = |l: f64| params.g_star(l) - params.f_star(l);
        let l_hat = numerics::golden_min(inner, lambda_g, 0.0, 1e-12);
        let v0 = tail.min(inner(l_hat));
        return Ok((v0, if tail < inner(l_hat) { lambda_g } else { l_hat }));
    }
    let s = |l: f64| sup_over_t(params, l, grids.n_t);
    let mut scale = 1.0;
    for _ in 0..8 {
        let n = grids.n_lambda;
        let lo = -1e4 * scale;
        let hi = -1e-6;
        let ratio: f64 = lo / hi;
        let mut best = (s(0.0), 0.0);
        let mut best_i = usize::MAX;
        for i in 0..n {
            let l = hi * ratio.powf(i as f64 / (n - 1) as f64);
            let v = s(l);
            if v < best.0 {
                best = (v, l);
                best_i = i;
            }
        }
        if best_i == n - 1 {
            scale *= 16.0;
            continue; // argmin on the boundary: extend the grid
        }
        let (lo_b, hi_b) = if best_i == usize::MAX {
            (hi, 0.0)
        } else {
            let nb = |j: usize| hi * ratio.powf(j as f64 / (n - 1) as f64);
            (
                nb(best_i + 1),
                if best_i == 0 { 0.0 } else { nb(best_i - 1) },
            )
        };
        let l_hat = numerics::golden_min(s, lo_b, hi_b, 1e-11 * lo_b.abs().max(1.0));
        let (v_hat, v_best) = (s(l_hat), best.0);
        return Ok(if v_hat <= v_best {
            (v_hat, l_hat)
        } else {
            (v_best, best.1)
        });
    }
    Err(Error::Assumption(
        "v0 minimiser not bracketed on the searched range".into(),
    ))
}

impl FirstBest {
    pub fn new(params: &ModelParams) -> Result<Self> {
        let facelift = Facelift::new(params)?;
        let regime = params.classify_regime()?;
        let lambda_g = params.lambda_g()?;
        let mut report = FirstBestReport {
            lambda_g,
            y_fstar: None,
            y_fstar_gstar: None,
            v0: None,
            lambda0_star: None,
        };
        let branch = match regime {
            Regime::DegeneratePrincipal { .. } => FbBranch::Degenerate,
            Regime::EquallyImpatient => {
                if lambda_g >= params.f_prime(0.0) {
                    FbBranch::Delta1Barrier
                } else {
                    let y_fstar = params.f_star_prime(lambda_g);
                    let y_fstar_gstar = y_fstar - params.g_star_prime(lambda_g);
                    report.y_fstar = Some(y_fstar);
                    report.y_fstar_gstar = Some(y_fstar_gstar);
                    report.v0 = Some(Self::delta1_eval(
                        params,
                        lambda_g,
                        y_fstar,
                        y_fstar_gstar,
                        0.0,
                    ));
                    FbBranch::Delta1 {
                        lambda_g,
                        y_fstar,
                        y_fstar_gstar,
                    }
                }
            }
            Regime::ImpatientAgentSmallM | Regime::ImpatientAgentLargeM { .. } => {
                let (v0, lambda0) = v0_first_best(params)?;
                report.v0 = Some(v0);
                report.lambda0_star = Some(lambda0);
                if v0.abs() <= V0_ZERO_BAND {
                    FbBranch::BarrierNearZero
                } else {
                    FbBranch::DualConjugate { v0, lambda0 }
                }
            }
            Regime::ImpatientPrincipalNondegenerate { .. } => {
                return Err(Error::Regime(
                    "first-best with delta < 1 < gamma*delta is not characterised".into(),
                ));
            }
        };
        Ok(Self {
            params: *params,
            regime,
            branch,
            facelift,
            report,
        })
    }

    pub fn regime(&self) -> &Regime {
        &self.regime
    }

    pub fn report(&self) -> &FirstBestReport {
        &self.report
    }

    pub fn facelift(&self) -> &Facelift {
        &self.facelift
    }

    fn delta1_eval(
        params: &ModelParams,
        lambda_g: f64,
        y_fstar: f64,
        y_fstar_gstar: f64,
        y: f64,
    ) -> f64 {
        if y >= y_fstar {
            return params.f_eval(y).expect("y >= 0");
        }
        if y >= y_fstar_gstar.max(0.0) {
            return y * lambda_g - params.f_star(lambda_g);
        }
        // Head segment: inf over lambda of the full dual, convex in lambda.
        let obj = |l: f64| y * l - params.f_star(l) + params.g_star(l);
        let mut lo = lambda_g;
        while obj(2.0 * lo) < obj(lo) {
            lo *= 2.0;
        }
        let l_hat = numerics::golden_min(obj, 2.0 * lo, 0.0, 1e-13 * lo.abs().max(1.0));
        obj(l_hat)
    }

    /// Dual value `vFB*(p)` for `p <= lambda0*` (`delta > 1`, `v0 > 0`).
    pub fn vfb_star(&self, p: f64) -> Result<f64> {
        let FbBranch::DualConjugate { v0, lambda0 } = self.branch else {
            return Err(Error::Regime("vFB* requires delta > 1 with v0 > 0".into()));
        };
        if p > lambda0 {
            return Err(Error::Domain(format!(
                "vFB* is defined on p <= {lambda0}, got {p}"
            )));
        }
        let d = self.params.delta();
        let e = 1.0 + 1.0 / (1.0 - d);
        let integral = numerics::integrate(
            |x| {
                let q = d * x;
                (self.params.f_star(q) - self.params.g_star(q)) / (-x).powf(e)
            },
            p,
            lambda0,
            QUAD_TOL,
        )?;
        let pow = 1.0 / (1.0 - d);
        Ok(-(-p).powf(pow) * (v0 / (-lambda0).powf(pow) - integral / (d - 1.0)))
    }

    /// `(vFB*)'(p)` through the linear slope-space ODE it solves.
    pub fn vfb_star_slope(&self, p: f64) -> Result<f64> {
        let d = self.params.delta();
        let q = d * p;
        Ok((self.vfb_star(p)? - self.params.f_star(q) + self.params.g_star(q)) / ((1.0 - d) * p))
    }

    fn dual_conjugate_eval(&self, y: f64) -> Result<f64> {
        let FbBranch::DualConjugate { v0, lambda0 } = self.branch else {
            unreachable!()
        };
        if y == 0.0 {
            return Ok(v0);
        }
        // (vFB*)' decreases from +inf to 0 on (-inf, lambda0]; invert at y.
        let mut lo = 2.0 * lambda0.min(-1e-3);
        for _ in 0..200 {
            if self.vfb_star_slope(lo)? >= y {
                break;
            }
            lo *= 2.0;
        }
        let p_hat = numerics::find_root(
            |p| self.vfb_star_slope(p).unwrap_or(f64::NAN) - y,
            lo,
            lambda0,
            ROOT_TOL * lo.abs().max(1.0),
        )?;
        Ok(y * p_hat - self.vfb_star(p_hat)?)
    }

    /// `vFB(y)`.
    pub fn eval(&self, y: f64) -> Result<f64> {
        if y < 0.0 {
            return Err(Error::Domain(format!("vFB is defined on y >= 0, got {y}")));
        }
        match self.branch {
            FbBranch::Degenerate => Ok(self.params.a_bar - self.params.eps_m),
            FbBranch::Delta1Barrier => self.params.f_eval(y),
            FbBranch::Delta1 {
                lambda_g,
                y_fstar,
                y_fstar_gstar,
            } => Ok(Self::delta1_eval(
                &self.params,
                lambda_g,
                y_fstar,
                y_fstar_gstar,
                y,
            )),
            FbBranch::DualConjugate { .. } => self.dual_conjugate_eval(y),
            FbBranch::BarrierNearZero => {
                if y == 0.0 {
                    Ok(self.facelift.eval(0.0)?)
                } else {
                    Err(Error::Regime(
                        "v0 = 0: vFB equals Fbar only on an uncharacterised neighbourhood of 0"
                            .into(),
                    ))
                }
            }
        }
    }
}
