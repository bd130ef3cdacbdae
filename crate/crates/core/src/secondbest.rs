//! Second-best (moral hazard) value function: policy iteration on a
//! finite-difference grid for the integro-differential obstacle equation
//!
//! ```text
//! min{ v - Fbar,  F*(delta v') - delta y v' + v - J(y, v', v'', v) } = 0,   v(0) = 0,
//! ```
//!
//! with the accident-size distribution specialised to a point mass at `m`, so
//! the non-local part collapses to `v(y + rU) - v(y) - r v' U` at a single
//! jump destination.
//!
//! For a fixed admissible policy (payment utility `eta`, drift effort `a`
//! with sensitivity `z = h_a'(a)`, intensity `b` with exposure `U`) the
//! equation is linear in `v`:
//!
//! ```text
//! -mu v' - kappa v'' + (rho + lam) v - lam v(y + rU) = rho (a - b + F(eta)),
//!   mu = r (y - eta + h(a,b) - (b/m) U),  kappa = (r sigma z)^2 / 2,  lam = b/m.
//! ```
//!
//! First derivatives are upwinded on the sign of `mu`, second derivatives are
//! central, and jump destinations interpolate linearly, which makes each
//! policy row an M-matrix row; policy evaluation is a direct solve and policy
//! improvement maximises the Hamiltonian over incentive-compatible controls.
//! The incentive-compatible set is parametrised by target controls: any
//! `a in (0, a_bar]` pairs with `z = h_a'(a)`, `a = 0` pairs with `z = 0`,
//! any `b in [eps_m, m)` forces `U = -m/b^2`, and `b = m` admits every
//! exposure `U >= -1/m`, of which `U = 0` is optimal for a concave iterate.
//! Jump destinations below zero are excluded (limited liability), so the
//! `b`-grid at state `y` is truncated at `sqrt(r m / y)`.

use serde::{Deserialize, Serialize};

use crate::exec;
use crate::facelift::Facelift;
use crate::model::ModelParams;
use crate::{Error, Result};

/// Whether the accident channel is present at all. The accident-free mode
/// drops the `-b` flow cost, the intensity control and the jump term, which
/// is the benchmark the relative losses are measured against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveMode {
    #[default]
    WithAccidents,
    AccidentFree,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    /// Grid nodes on `[0, y_max]`, endpoints included.
    pub n_nodes: usize,
    pub y_max: f64,
    /// Sup-norm convergence tolerance of the policy iteration.
    pub tol: f64,
    pub max_iters: usize,
    /// Drift-effort control grid resolution.
    pub a_grid: usize,
    /// Intensity control grid resolution.
    pub b_grid: usize,
    pub mode: SolveMode,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            n_nodes: 2000,
            y_max: 1.5,
            tol: 1e-9,
            max_iters: 500,
            a_grid: 200,
            b_grid: 200,
            mode: SolveMode::WithAccidents,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_nodes < 100 {
            return Err(Error::Config(format!(
                "n_nodes must be >= 100, got {}",
                self.n_nodes
            )));
        }
        if self.y_max.is_nan() || self.y_max <= 0.0 {
            return Err(Error::Config(format!(
                "y_max must be > 0, got {}",
                self.y_max
            )));
        }
        if self.tol.is_nan() || self.tol <= 0.0 {
            return Err(Error::Config(format!("tol must be > 0, got {}", self.tol)));
        }
        if self.a_grid < 2 || self.b_grid < 2 {
            return Err(Error::Config("control grids need at least 2 points".into()));
        }
        Ok(())
    }
}

/// Nodal contact tolerance used for the contact mask and stopping region.
pub const CONTACT_TOL: f64 = 1e-7;

/// Solved value function on a uniform grid.
#[derive(Debug, Clone)]
pub struct ValueFunction {
    pub ys: Vec<f64>,
    pub v: Vec<f64>,
    /// `v = Fbar` within [`CONTACT_TOL`].
    pub contact: Vec<bool>,
    /// Central (one-sided at the ends) first-derivative estimates.
    pub dv: Vec<f64>,
    /// Central second-derivative estimates (zero at the ends).
    pub d2v: Vec<f64>,
}

impl ValueFunction {
    pub fn step(&self) -> f64 {
        self.ys[1] - self.ys[0]
    }

    /// Piecewise-linear value, clamped to the grid range.
    pub fn interp(&self, y: f64) -> f64 {
        let h = self.step();
        let n = self.ys.len();
        if y <= 0.0 {
            return self.v[0];
        }
        let x = y / h;
        let i = (x as usize).min(n - 2);
        let w = (x - i as f64).clamp(0.0, 1.0);
        self.v[i] * (1.0 - w) + self.v[i + 1] * w
    }
}

/// Per-node optimal controls.
#[derive(Debug, Clone, Copy)]
pub struct PolicyNode {
    /// Drift effort.
    pub a: f64,
    /// Accident intensity scale.
    pub b: f64,
    /// Diffusion sensitivity `z = h_a'(a)` (0 for the no-effort action).
    pub z: f64,
    /// Jump exposure `U` (0 at `b = m` unless the FOC pairing is feasible and better).
    pub u: f64,
    /// Payment utility flow `eta = (F*)'(delta v')`.
    pub eta: f64,
    /// Termination is optimal at this node.
    pub stop: bool,
}

#[derive(Debug, Clone)]
pub struct PolicyField(pub Vec<PolicyNode>);

/// Convergence diagnostics of [`solve`].
#[derive(Debug, Clone, Copy, Serialize)]
pub struct SolveReport {
    pub iters: usize,
    /// Final sup-norm change of the value iterates.
    pub sup_change: f64,
    /// Max complementarity residual `|min(v - Fbar, E)|` over all nodes.
    pub residual: f64,
    /// Number of times the grid was extended because no contact was found.
    pub extensions: usize,
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub value: ValueFunction,
    pub policy: PolicyField,
    pub barrier: Vec<f64>,
    pub report: SolveReport,
    pub config: SolverConfig,
}

/// One evaluation of the controlled Hamiltonian at a node.
#[derive(Debug, Clone, Copy)]
pub struct OperatorChoice {
    /// `J(y, p, q, v)`, the optimised operator value.
    pub value: f64,
    pub a: f64,
    pub z: f64,
    pub b: f64,
    pub u: f64,
}

/// The separable control optimisation behind the non-local operator.
pub struct LocalOperator<'a> {
    params: &'a ModelParams,
    mode: SolveMode,
    a_grid: Vec<f64>,
    b_grid: Vec<f64>,
}

impl<'a> LocalOperator<'a> {
    pub fn new(params: &'a ModelParams, config: &SolverConfig) -> Self {
        let a_grid = (0..config.a_grid)
            .map(|i| params.a_bar * i as f64 / (config.a_grid - 1) as f64)
            .collect();
        let b_grid = if params.m > params.eps_m {
            (0..config.b_grid)
                .map(|i| {
                    params.eps_m + (params.m - params.eps_m) * i as f64 / (config.b_grid - 1) as f64
                })
                .collect()
        } else {
            vec![params.m]
        };
        Self {
            params,
            mode: config.mode,
            a_grid,
            b_grid,
        }
    }

    /// Drift-effort part: `max_a { a + delta h_a(a) p + (r delta sigma^2 / 2) h_a'(a)^2 q }`,
    /// including the no-effort action `(a, z) = (0, 0)` with value 0, so the
    /// result is never negative.
    fn best_a(&self, p: f64, q: f64) -> (f64, f64, f64) {
        let pr = self.params;
        let d = pr.delta();
        let diff_w = 0.5 * pr.r * d * pr.sigma * pr.sigma * q;
        let mut best = (0.0, 0.0, 0.0); // (value, a, z)
        for &a in &self.a_grid {
            let z = pr.h_a_prime(a);
            let val = a + d * pr.h_a(a) * p + diff_w * z * z;
            if val > best.0 {
                best = (val, a, z);
            }
        }
        best
    }

    /// Intensity part under the point-mass jump distribution. `v_at` must
    /// interpolate the current value iterate; `v_here = v(y)`.
    fn best_b<F: Fn(f64) -> f64>(&self, y: f64, p: f64, v_at: &F, v_here: f64) -> (f64, f64, f64) {
        let pr = self.params;
        let d = pr.delta();
        let (r, m, rho) = (pr.r, pr.m, pr.rho);
        // b = m with zero exposure: jump bracket vanishes, value -m.
        let mut best = (-m, m, 0.0); // (value, b, u)
        let b_feas = if y > 0.0 {
            (r * m / y).sqrt()
        } else {
            f64::INFINITY
        };
        for &b in &self.b_grid {
            if b < b_feas {
                continue; // jump destination would violate limited liability
            }
            let u = -m / (b * b);
            let dest = (y + r * u).max(0.0);
            let bracket = v_at(dest) - v_here - r * p * u;
            let val = -b + d * pr.h_b(b) * p + b / (m * rho) * bracket;
            if val > best.0 {
                best = (val, b, u);
            }
        }
        best
    }

    /// Optimised operator value and maximisers at `(y, p, q)` given the
    /// current value iterate.
    pub fn evaluate<F: Fn(f64) -> f64>(
        &self,
        y: f64,
        p: f64,
        q: f64,
        v_at: &F,
        v_here: f64,
    ) -> OperatorChoice {
        let q = q.min(0.0); // the operator is +infinity for q > 0
        let (va, a, z) = self.best_a(p, q);
        match self.mode {
            SolveMode::AccidentFree => OperatorChoice {
                value: va,
                a,
                z,
                b: self.params.m,
                u: 0.0,
            },
            SolveMode::WithAccidents => {
                let (vb, b, u) = self.best_b(y, p, v_at, v_here);
                OperatorChoice {
                    value: va + vb,
                    a,
                    z,
                    b,
                    u,
                }
            }
        }
    }
}

struct Workspace {
    params: ModelParams,
    config: SolverConfig,
    ys: Vec<f64>,
    h: f64,
    barrier: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    choice: OperatorChoice,
    eta: f64,
    stop: bool,
}

/// Neighbour coefficients `(up, down)` of the `-mu v' - kappa v''` stencil:
/// second-order central differencing for the drift wherever it keeps both
/// coefficients non-negative, first-order upwind otherwise. The row diagonal
/// is `rho + up + down (+ jump terms)`, an M-matrix either way.
fn stencil(mu: f64, kappa: f64, h: f64) -> (f64, f64) {
    let k2 = kappa / (h * h);
    let half = mu / (2.0 * h);
    if k2 >= half.abs() {
        (k2 + half, k2 - half)
    } else {
        (k2 + mu.max(0.0) / h, k2 + (-mu).max(0.0) / h)
    }
}

impl Workspace {
    /// Coefficients of the linearised equation at node `i` for a fixed policy.
    /// Returns (mu, kappa, lam, rhs).
    fn row_coefficients(&self, i: usize, c: &OperatorChoice, eta: f64) -> (f64, f64, f64, f64) {
        let pr = &self.params;
        let y = self.ys[i];
        let (a, b, z, u) = (c.a, c.b, c.z, c.u);
        match self.config.mode {
            SolveMode::AccidentFree => {
                let mu = pr.r * (y - eta + pr.h_a(a));
                let kappa = 0.5 * (pr.r * pr.sigma * z).powi(2);
                let rhs = pr.rho * (a + pr.f_eval(eta).expect("eta >= 0"));
                (mu, kappa, 0.0, rhs)
            }
            SolveMode::WithAccidents => {
                let lam = b / pr.m;
                let mu = pr.r * (y - eta + pr.cost(a, b) - lam * u);
                let kappa = 0.5 * (pr.r * pr.sigma * z).powi(2);
                let rhs = pr.rho * (a - b + pr.f_eval(eta).expect("eta >= 0"));
                (mu, kappa, lam, rhs)
            }
        }
    }

    /// Gauss-Seidel nodal value of one fixed candidate: solve its linearised
    /// row for `v[i]` with neighbours frozen. Returns `(value, denominator)`.
    fn candidate_value(&self, i: usize, v: &[f64], cand: &Candidate) -> (f64, f64) {
        let pr = &self.params;
        let h = self.h;
        let y = self.ys[i];
        let (mu, kappa, lam, rhs) = self.row_coefficients(i, &cand.choice, cand.eta);
        let (cu, cd) = stencil(mu, kappa, h);
        let mut num = rhs + cu * v[i + 1] + cd * v[i - 1];
        let mut den = pr.rho + cu + cd;
        if lam > 0.0 && cand.choice.u != 0.0 {
            let dest = (y + pr.r * cand.choice.u).max(0.0);
            let t = dest / h;
            let j = (t as usize).min(v.len() - 2);
            let w = (t - j as f64).clamp(0.0, 1.0);
            den += lam;
            for (col, wt) in [(j, 1.0 - w), (j + 1, w)] {
                if col == i {
                    den -= lam * wt;
                } else {
                    num += lam * wt * v[col];
                }
            }
        }
        (num / den, den)
    }

    /// Best continuation candidate at node `i`: maximise over both one-sided
    /// slope linearisations plus the incumbent policy, comparing Gauss-Seidel
    /// nodal values. Keeping the incumbent in the candidate set makes the
    /// policy iteration monotone; rebuilding candidates from the current
    /// slopes alone can regress and cycle.
    fn best_continue(
        &self,
        i: usize,
        v: &[f64],
        op: &LocalOperator,
        incumbent: Option<&Candidate>,
    ) -> (f64, f64, Candidate) {
        let pr = &self.params;
        let h = self.h;
        let y = self.ys[i];
        let d = pr.delta();
        let v_at = |x: f64| {
            let t = x / h;
            let j = (t as usize).min(v.len() - 2);
            let w = (t - j as f64).clamp(0.0, 1.0);
            v[j] * (1.0 - w) + v[j + 1] * w
        };
        let q = (v[i + 1] - 2.0 * v[i] + v[i - 1]) / (h * h);
        let mut best: Option<(f64, f64, Candidate)> = None;
        let mut consider = |cand: Candidate, this: &Self| {
            let (val, den) = this.candidate_value(i, v, &cand);
            if best.as_ref().is_none_or(|(bv, _, _)| val > *bv) {
                best = Some((val, den, cand));
            }
        };
        for p in [(v[i + 1] - v[i]) / h, (v[i] - v[i - 1]) / h] {
            let eta = pr.f_star_prime(d * p);
            let choice = op.evaluate(y, p, q, &v_at, v[i]);
            consider(
                Candidate {
                    choice,
                    eta,
                    stop: false,
                },
                self,
            );
        }
        if let Some(inc) = incumbent {
            if !inc.stop {
                consider(*inc, self);
            }
        }
        best.expect("at least two candidates evaluated")
    }

    /// Policy improvement at node `i`: the better of continuing and stopping.
    /// Also returns the improvement gain over the current nodal value.
    fn improve_node(
        &self,
        i: usize,
        v: &[f64],
        op: &LocalOperator,
        incumbent: &Candidate,
    ) -> (Candidate, f64) {
        let (val, _, cand) = self.best_continue(i, v, op, Some(incumbent));
        let target = val.max(self.barrier[i]);
        let gain = (target - v[i]).max(0.0);
        if self.barrier[i] > val {
            (
                Candidate {
                    choice: OperatorChoice {
                        value: 0.0,
                        a: 0.0,
                        z: 0.0,
                        b: self.params.m,
                        u: 0.0,
                    },
                    eta: 0.0,
                    stop: true,
                },
                gain,
            )
        } else {
            (cand, gain)
        }
    }

    /// Solve the linear policy-evaluation system. The matrix has upper
    /// bandwidth one (upwind/diffusion stencil) plus scattered lower entries
    /// from the jump interpolation, so Gaussian elimination fills strictly
    /// rightward and each eliminated row keeps only its diagonal and
    /// super-diagonal.
    fn evaluate_policy(&self, policy: &[Candidate]) -> Result<Vec<f64>> {
        let n = self.ys.len();
        let h = self.h;
        let mut diag = vec![1.0_f64; n];
        let mut sup = vec![0.0_f64; n];
        let mut rhs = vec![0.0_f64; n];
        let mut lower: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];

        rhs[0] = 0.0; // v(0) = 0
        rhs[n - 1] = self.barrier[n - 1];
        for i in 1..n - 1 {
            let cand = &policy[i];
            if cand.stop {
                rhs[i] = self.barrier[i];
                continue;
            }
            let (mu, kappa, lam, f) = self.row_coefficients(i, &cand.choice, cand.eta);
            let (cu, cd) = stencil(mu, kappa, h);
            let mut d = self.params.rho + cu + cd;
            sup[i] = -cu;
            let mut low = vec![(i - 1, -cd)];
            if lam > 0.0 && cand.choice.u != 0.0 {
                d += lam;
                let dest = (self.ys[i] + self.params.r * cand.choice.u).max(0.0);
                let t = dest / h;
                let j = (t as usize).min(n - 2);
                let w = (t - j as f64).clamp(0.0, 1.0);
                for (col, wt) in [(j, 1.0 - w), (j + 1, w)] {
                    if wt == 0.0 {
                        continue;
                    }
                    match col.cmp(&i) {
                        std::cmp::Ordering::Less => low.push((col, -lam * wt)),
                        std::cmp::Ordering::Equal => d -= lam * wt,
                        std::cmp::Ordering::Greater => {
                            // dest <= y, so the only column above i is i+1 via w=1 edge cases
                            sup[i] -= lam * wt;
                        }
                    }
                }
            }
            if d <= 0.0 {
                return Err(Error::Monotonicity(format!(
                    "non-positive diagonal {d} at node {i}"
                )));
            }
            diag[i] = d;
            rhs[i] = f;
            low.sort_by_key(|&(c, _)| c);
            lower[i] = low;
        }

        // Forward elimination; processed rows are upper-bidiagonal.
        let mut buf = vec![0.0_f64; n];
        for i in 1..n {
            if lower[i].is_empty() {
                continue;
            }
            let j0 = lower[i][0].0;
            for x in &mut buf[j0..=i] {
                *x = 0.0;
            }
            for &(c, val) in &lower[i] {
                buf[c] += val;
            }
            buf[i] += diag[i];
            for c in j0..i {
                if buf[c] == 0.0 {
                    continue;
                }
                let f = buf[c] / diag[c];
                buf[c + 1] -= f * sup[c];
                rhs[i] -= f * rhs[c];
            }
            diag[i] = buf[i];
            if diag[i] == 0.0 {
                return Err(Error::Monotonicity(format!("singular pivot at node {i}")));
            }
        }
        // Back substitution.
        let mut v = vec![0.0_f64; n];
        v[n - 1] = rhs[n - 1] / diag[n - 1];
        for i in (0..n - 1).rev() {
            v[i] = (rhs[i] - sup[i] * v[i + 1]) / diag[i];
        }
        Ok(v)
    }

    /// Max discrete complementarity residual `|min(v - Fbar, v - T v)|` over
    /// the interior nodes, where `T` applies one optimised policy-improvement
    /// step (converged policy included in the candidate set) to the converged
    /// iterate. Both slots are in value units, the scaling the iteration
    /// itself is driven in.
    fn residual(&self, v: &[f64], op: &LocalOperator, policy: &[Candidate]) -> f64 {
        let n = v.len();
        let vals = exec::map_indexed(n - 2, |k| {
            let i = k + 1;
            let obstacle = v[i] - self.barrier[i];
            let incumbent = (!policy[i].stop).then_some(&policy[i]);
            let (val, _, _) = self.best_continue(i, v, op, incumbent);
            obstacle.min(v[i] - val).abs()
        });
        vals.into_iter().fold(0.0_f64, f64::max)
    }
}

/// Solve the obstacle HJB by policy iteration, extending the grid when no
/// contact with the barrier is found.
pub fn solve(params: &ModelParams, config: &SolverConfig) -> Result<Solution> {
    params.validate()?;
    config.validate()?;
    let d = params.delta();
    if params.gamma * d <= 1.0 {
        return degenerate_solution(params, config);
    }
    let facelift = Facelift::new(params)?;
    let mut cfg = *config;
    let mut extensions = 0;
    loop {
        let sol = solve_once(params, &cfg, &facelift, extensions)?;
        let has_contact = sol.value.contact[1..sol.value.contact.len() - 1]
            .iter()
            .any(|&c| c);
        if has_contact || extensions >= 2 {
            return Ok(sol);
        }
        extensions += 1;
        cfg.y_max *= 2.0;
        cfg.n_nodes *= 2;
    }
}

fn degenerate_solution(params: &ModelParams, config: &SolverConfig) -> Result<Solution> {
    // gamma*delta <= 1: the supremum a_bar - eps_m is approached but never
    // attained; reported as the constant value function.
    let n = config.n_nodes;
    let h = config.y_max / (n - 1) as f64;
    let ys: Vec<f64> = (0..n).map(|i| i as f64 * h).collect();
    let lift = Facelift::new(params)?;
    let barrier: Vec<f64> = ys
        .iter()
        .map(|&y| lift.eval(y).unwrap_or(f64::NAN))
        .collect();
    let c = params.a_bar - params.eps_m;
    let v = vec![c; n];
    let policy = vec![
        PolicyNode {
            a: params.a_bar,
            b: params.eps_m,
            z: params.h_a_prime(params.a_bar),
            u: 0.0,
            eta: 0.0,
            stop: false
        };
        n
    ];
    Ok(Solution {
        value: ValueFunction {
            ys,
            v,
            contact: vec![false; n],
            dv: vec![0.0; n],
            d2v: vec![0.0; n],
        },
        policy: PolicyField(policy),
        barrier,
        report: SolveReport {
            iters: 0,
            sup_change: 0.0,
            residual: 0.0,
            extensions: 0,
        },
        config: *config,
    })
}

fn solve_once(
    params: &ModelParams,
    config: &SolverConfig,
    facelift: &Facelift,
    extensions: usize,
) -> Result<Solution> {
    let n = config.n_nodes;
    let h = config.y_max / (n - 1) as f64;
    let ys: Vec<f64> = (0..n).map(|i| i as f64 * h).collect();
    let barrier_lift = |y: f64| -> Result<f64> {
        match config.mode {
            SolveMode::WithAccidents => facelift.eval(y),
            // Accident-free comparison: the barrier is the m = 0 face-lift,
            // which at delta = 1 (the only acceptance mode) is F itself.
            SolveMode::AccidentFree => {
                if params.is_delta_one() {
                    params.f_eval(y)
                } else {
                    facelift.w0(y)
                }
            }
        }
    };
    let barrier_vals = exec::map_indexed(n, |i| barrier_lift(ys[i]));
    let mut barrier = Vec::with_capacity(n);
    for b in barrier_vals {
        barrier.push(b?);
    }

    let ws = Workspace {
        params: *params,
        config: *config,
        ys: ys.clone(),
        h,
        barrier,
    };
    let op = LocalOperator::new(params, config);

    let mut v: Vec<f64> = ws.barrier.iter().map(|&b| b.max(0.0)).collect();
    v[0] = 0.0;
    v[n - 1] = ws.barrier[n - 1];

    let mut policy: Vec<Candidate> = vec![
        Candidate {
            choice: OperatorChoice {
                value: 0.0,
                a: 0.0,
                z: 0.0,
                b: params.m,
                u: 0.0
            },
            eta: 0.0,
            stop: true,
        };
        n
    ];
    let mut iters = 0;
    let mut sup_change = f64::INFINITY;
    let mut converged = false;
    for it in 0..config.max_iters {
        iters = it + 1;
        let improved = exec::map_indexed(n, |i| {
            if i == 0 || i == n - 1 {
                (policy[i], 0.0)
            } else {
                ws.improve_node(i, &v, &op, &policy[i])
            }
        });
        let gain = improved.iter().map(|&(_, g)| g).fold(0.0_f64, f64::max);
        policy = improved.into_iter().map(|(c, _)| c).collect();
        let v_new = ws.evaluate_policy(&policy)?;
        sup_change = v
            .iter()
            .zip(&v_new)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0_f64, f64::max);
        v = v_new;
        // The value step and the remaining improvement gain must both be
        // small: a near-stationary value can still expose fresh candidates.
        if sup_change < config.tol && gain < config.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NoConvergence {
            iters,
            residual: sup_change.max(0.0),
        });
    }
    let residual = ws.residual(&v, &op, &policy);

    let mut dv = vec![0.0_f64; n];
    let mut d2v = vec![0.0_f64; n];
    for i in 1..n - 1 {
        dv[i] = (v[i + 1] - v[i - 1]) / (2.0 * h);
        d2v[i] = (v[i + 1] - 2.0 * v[i] + v[i - 1]) / (h * h);
    }
    dv[0] = (v[1] - v[0]) / h;
    dv[n - 1] = (v[n - 1] - v[n - 2]) / h;

    let contact: Vec<bool> = v
        .iter()
        .zip(&ws.barrier)
        .map(|(&vi, &bi)| (vi - bi).abs() <= CONTACT_TOL)
        .collect();

    let nodes: Vec<PolicyNode> = (0..n)
        .map(|i| {
            let c = &policy[i];
            if c.stop || i == 0 || (i == n - 1 && contact[i]) {
                PolicyNode {
                    a: 0.0,
                    b: params.m,
                    z: 0.0,
                    u: 0.0,
                    eta: 0.0,
                    stop: true,
                }
            } else {
                PolicyNode {
                    a: c.choice.a,
                    b: c.choice.b,
                    z: c.choice.z,
                    u: c.choice.u,
                    eta: c.eta,
                    stop: false,
                }
            }
        })
        .collect();

    Ok(Solution {
        value: ValueFunction {
            ys,
            v,
            contact,
            dv,
            d2v,
        },
        policy: PolicyField(nodes),
        barrier: ws.barrier,
        report: SolveReport {
            iters,
            sup_change,
            residual,
            extensions,
        },
        config: *config,
    })
}

/// Nodal argmax of the value function with 3-point parabolic refinement.
pub fn max_value(value: &ValueFunction) -> (f64, f64) {
    let n = value.v.len();
    let mut k = 0;
    for i in 1..n {
        if value.v[i] > value.v[k] {
            k = i;
        }
    }
    if k == 0 || k == n - 1 {
        return (value.ys[k], value.v[k]);
    }
    let h = value.step();
    let (vm, v0, vp) = (value.v[k - 1], value.v[k], value.v[k + 1]);
    let denom = vm - 2.0 * v0 + vp;
    if denom >= 0.0 {
        return (value.ys[k], v0);
    }
    let shift = 0.5 * (vm - vp) / denom;
    let y_star = value.ys[k] + shift * h;
    let v_star = v0 - 0.25 * (vm - vp) * shift;
    (y_star, v_star)
}

/// Smallest positive contact point of the solved value function with its
/// barrier, requiring the contact to persist to the end of the grid.
/// Returns `(y_stop, persistent)`; `y_stop = y_max` with `persistent = false`
/// when the grid shows no contact (grid too short).
pub fn stopping_region(value: &ValueFunction, barrier: &[f64]) -> (f64, bool) {
    let n = value.v.len();
    for i in 1..n {
        if value.v[i] - barrier[i] <= CONTACT_TOL {
            let persistent =
                (i..n).all(|j| value.v[j] - barrier[j] <= 1e-6 * (1.0 + barrier[j].abs()));
            if persistent {
                return (value.ys[i], true);
            }
        }
    }
    (value.ys[n - 1], false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::CostKind;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "expected {b}, got {a} (tol {tol})");
    }

    /// Benchmark parameters of the numerical study.
    fn bench_params(m: f64) -> ModelParams {
        ModelParams {
            r: 0.1,
            rho: 0.1,
            sigma: 1.0,
            gamma: 2.0,
            a_bar: 4.6,
            eps_m: 0.1,
            m,
            cost_kind: CostKind::QuadraticShifted,
            ..ModelParams::default()
        }
    }

    fn quick_config(mode: SolveMode) -> SolverConfig {
        SolverConfig {
            n_nodes: 500,
            mode,
            ..SolverConfig::default()
        }
    }

    #[test]
    fn local_operator_accident_free_zero_derivatives() {
        let p = bench_params(0.1);
        let cfg = quick_config(SolveMode::AccidentFree);
        let op = LocalOperator::new(&p, &cfg);
        let c = op.evaluate(0.5, 0.0, 0.0, &|_| 0.0, 0.0);
        assert_close(c.value, p.a_bar, 1e-12);
        assert_close(c.a, p.a_bar, 1e-12);
    }

    #[test]
    fn local_operator_with_accidents_flat_value() {
        let p = bench_params(0.3);
        let cfg = quick_config(SolveMode::WithAccidents);
        let op = LocalOperator::new(&p, &cfg);
        // v == 0, p = 0: the jump bracket vanishes; brute force over the
        // incentive-compatible set reduces to a_bar - (min feasible b).
        for &y in &[0.2, 0.5, 1.0, 2.0] {
            let c = op.evaluate(y, 0.0, 0.0, &|_| 0.0, 0.0);
            let b_min = (p.r * p.m / y).sqrt().max(p.eps_m).min(p.m);
            assert_close(c.value, p.a_bar - b_min, 2e-3);
            assert!(c.value >= -p.m, "operator must stay above -m");
        }
    }

    #[test]
    fn local_operator_lower_bound() {
        let p = bench_params(0.2);
        let cfg = quick_config(SolveMode::WithAccidents);
        let op = LocalOperator::new(&p, &cfg);
        for &(y, pp, q) in &[(0.1, -5.0, -100.0), (0.5, -1.0, -10.0), (1.2, 0.3, 0.0)] {
            let c = op.evaluate(y, pp, q, &|x| -x * x, -y * y);
            assert!(c.value >= -p.m - 1e-12, "J = {} below -m", c.value);
        }
    }

    #[test]
    fn accident_free_solve_matches_reported_maximum() {
        let p = bench_params(0.1);
        let sol = solve(&p, &quick_config(SolveMode::AccidentFree)).unwrap();
        let (y_star, v_max) = max_value(&sol.value);
        assert!((v_max - 0.1234).abs() / 0.1234 < 0.05, "v_max = {v_max}");
        assert!(y_star > 0.0 && y_star < 1.0);
        assert_eq!(sol.value.v[0], 0.0);
    }

    #[test]
    fn with_accidents_solve_m02() {
        let p = bench_params(0.2);
        let sol = solve(&p, &quick_config(SolveMode::WithAccidents)).unwrap();
        let (_, v_max) = max_value(&sol.value);
        assert!((v_max - 0.0336).abs() / 0.0336 < 0.05, "v_max = {v_max}");
        assert_eq!(sol.value.v[0], 0.0);
        // Obstacle respected.
        for (v, b) in sol.value.v.iter().zip(&sol.barrier) {
            assert!(v - b >= -1e-9);
        }
        // Complementarity residual within 10x solver tolerance.
        assert!(
            sol.report.residual <= 10.0 * sol.config.tol,
            "residual {}",
            sol.report.residual
        );
    }

    #[test]
    fn stopping_region_monotone_in_m() {
        let mut stops = Vec::new();
        for m in [0.1, 0.2, 0.3] {
            let sol = solve(&bench_params(m), &quick_config(SolveMode::WithAccidents)).unwrap();
            let (y_stop, persistent) = stopping_region(&sol.value, &sol.barrier);
            assert!(persistent, "no persistent contact for m = {m}");
            stops.push(y_stop);
        }
        assert!(
            stops[2] <= stops[1] + 1e-9 && stops[1] <= stops[0] + 1e-9,
            "{stops:?}"
        );
        let free = solve(&bench_params(0.1), &quick_config(SolveMode::AccidentFree)).unwrap();
        let (y_free, _) = stopping_region(&free.value, &free.barrier);
        assert!(y_free >= stops[0] - 1e-9);
    }

    #[test]
    fn value_ordering_in_m() {
        let free = solve(&bench_params(0.1), &quick_config(SolveMode::AccidentFree)).unwrap();
        let sols: Vec<_> = [0.1, 0.2, 0.3]
            .iter()
            .map(|&m| solve(&bench_params(m), &quick_config(SolveMode::WithAccidents)).unwrap())
            .collect();
        for i in 0..free.value.v.len() {
            assert!(sols[0].value.v[i] <= free.value.v[i] + 1e-8);
            assert!(sols[1].value.v[i] <= sols[0].value.v[i] + 1e-8);
            assert!(sols[2].value.v[i] <= sols[1].value.v[i] + 1e-8);
        }
    }

    #[test]
    fn solver_is_deterministic() {
        let p = bench_params(0.2);
        let a = solve(&p, &quick_config(SolveMode::WithAccidents)).unwrap();
        let b = solve(&p, &quick_config(SolveMode::WithAccidents)).unwrap();
        for (x, y) in a.value.v.iter().zip(&b.value.v) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn degenerate_mode_returns_constant() {
        let p = ModelParams {
            r: 0.04,
            rho: 0.1,
            ..bench_params(0.2)
        }; // gamma*delta = 0.8
        let sol = solve(&p, &quick_config(SolveMode::WithAccidents)).unwrap();
        assert!(sol.value.v.iter().all(|&v| v == p.a_bar - p.eps_m));
    }

    #[test]
    fn value_function_interp_is_exact_at_nodes() {
        let p = bench_params(0.2);
        let sol = solve(&p, &quick_config(SolveMode::WithAccidents)).unwrap();
        let vf = &sol.value;
        for i in (0..vf.ys.len()).step_by(37) {
            assert_close(vf.interp(vf.ys[i]), vf.v[i], 1e-14);
        }
        let probe = 0.5 * (vf.ys[3] + vf.ys[4]);
        assert_close(vf.interp(probe), 0.5 * (vf.v[3] + vf.v[4]), 1e-14);
    }
}
