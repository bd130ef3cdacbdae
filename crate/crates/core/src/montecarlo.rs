//! Simulation of optimal contracts under a solved second-best policy: the
//! agent's continuation utility `Y`, the project value `X`, accident arrivals,
//! termination at the contact set, and promise-keeping diagnostics.
//!
//! Under the optimal measure the two state processes share their noise:
//!
//! ```text
//! dY = r (Y - eta + h(a, b)) dt + r sigma z dW + r U (dN - (b/m) dt)
//! dX = a dt + sigma dW - m dN,         N-intensity b/m
//! ```
//!
//! with controls read from the policy field by linear interpolation in `Y`.
//! The contract terminates at `tau* = inf { t : v(Y_t) - Fbar(Y_t) <= tol }`,
//! paying the lump sum `xi = u^{-1}(Y_{tau*}) = Y_{tau*}^gamma`.
//!
//! Paths are driven by per-path generators seeded deterministically from
//! `(seed, path index)`, so parallel and sequential execution produce
//! identical batches.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::exec;
use crate::model::ModelParams;
use crate::secondbest::Solution;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    /// Euler time step.
    pub dt: f64,
    /// Maximum simulated time.
    pub horizon: f64,
    pub n_paths: usize,
    pub seed: u64,
    /// Initial continuation utility.
    pub y0: f64,
    /// Initial project value.
    pub x0: f64,
    /// Contact tolerance for termination detection.
    pub stop_tol: f64,
    /// Record every `stride`-th step in the per-path samples.
    pub stride: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            horizon: 20.0,
            n_paths: 10_000,
            seed: 7,
            y0: 0.11,
            x0: 0.0,
            stop_tol: 1e-6,
            stride: 100,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dt.is_nan() || self.dt <= 0.0 {
            return Err(Error::Config(format!("dt must be > 0, got {}", self.dt)));
        }
        if self.horizon < self.dt {
            return Err(Error::Config("horizon must be at least dt".into()));
        }
        if self.n_paths == 0 {
            return Err(Error::Config("n_paths must be >= 1".into()));
        }
        if self.stride == 0 {
            return Err(Error::Config("stride must be >= 1".into()));
        }
        Ok(())
    }
}

/// One simulated contract.
#[derive(Debug, Clone)]
pub struct PathRecord {
    /// Strided sample times (always includes `t = 0` and the final state).
    pub times: Vec<f64>,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub jump_times: Vec<f64>,
    /// Termination time; `None` when the path reaches the horizon first.
    pub tau_star: Option<f64>,
    /// State at `tau* ^ horizon`.
    pub x_final: f64,
    pub y_final: f64,
    /// Lump-sum payment `u^{-1}(Y) = Y^gamma` at the final state.
    pub xi: f64,
    /// Realised promise-keeping functional
    /// `e^{-r tau} Y_tau + int_0^tau r e^{-rs} (eta - h(a,b)) ds`.
    pub promise: f64,
    /// `int_0^tau (b/m) ds`, the accumulated accident intensity.
    pub integrated_intensity: f64,
    pub min_y: f64,
    /// Largest per-step jump probability encountered.
    pub max_jump_prob: f64,
    /// Set when the path left the solved grid or broke limited liability.
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct TrajectoryBatch {
    pub paths: Vec<PathRecord>,
    pub config: SimConfig,
}

/// Batch summary statistics.
#[derive(Debug, Clone, Serialize)]
pub struct Aggregates {
    pub n_paths: usize,
    pub n_errors: usize,
    /// Fraction of paths that never reach the stopping region by the horizon.
    pub unstopped_fraction: f64,
    /// Mean of `X` at `tau* ^ horizon`.
    pub mean_x_final: f64,
    pub mean_tau: f64,
    pub mean_xi: f64,
    pub mean_jumps: f64,
    pub mean_integrated_intensity: f64,
    /// Time-bucketed mean of `X` over paths still alive at each sample time.
    pub x_profile: Vec<(f64, f64, usize)>,
    /// `(bucket upper edge, count)` histogram of `tau* ^ horizon`.
    pub tau_histogram: Vec<(f64, usize)>,
}

fn path_seed(seed: u64, idx: u64) -> u64 {
    // splitmix64 step over (seed, idx)
    let mut x = seed ^ idx.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

struct PolicyLookup<'a> {
    sol: &'a Solution,
    a: Vec<f64>,
    b: Vec<f64>,
    z: Vec<f64>,
    u: Vec<f64>,
    eta: Vec<f64>,
    barrier: &'a [f64],
}

impl<'a> PolicyLookup<'a> {
    fn new(sol: &'a Solution) -> Self {
        let nodes = &sol.policy.0;
        Self {
            sol,
            a: nodes.iter().map(|n| n.a).collect(),
            b: nodes.iter().map(|n| n.b).collect(),
            z: nodes.iter().map(|n| n.z).collect(),
            u: nodes.iter().map(|n| n.u).collect(),
            eta: nodes.iter().map(|n| n.eta).collect(),
            barrier: &sol.barrier,
        }
    }

    fn interp(&self, field: &[f64], y: f64) -> f64 {
        let h = self.sol.value.step();
        let n = field.len();
        if y <= 0.0 {
            return field[0];
        }
        let t = y / h;
        let i = (t as usize).min(n - 2);
        let w = (t - i as f64).clamp(0.0, 1.0);
        field[i] * (1.0 - w) + field[i + 1] * w
    }

    fn value_gap(&self, y: f64) -> f64 {
        self.sol.value.interp(y) - self.interp(self.barrier, y)
    }
}

/// Simulate `config.n_paths` contracts under the solved policy.
pub fn simulate(
    sol: &Solution,
    params: &ModelParams,
    config: &SimConfig,
) -> Result<TrajectoryBatch> {
    params.validate()?;
    config.validate()?;
    if !params.is_delta_one() {
        return Err(Error::Regime(
            "contract simulation is supported for delta = 1".into(),
        ));
    }
    let lookup = PolicyLookup::new(sol);
    let paths = exec::map_indexed(config.n_paths, |idx| {
        simulate_path(&lookup, params, config, idx as u64)
    });
    Ok(TrajectoryBatch {
        paths,
        config: *config,
    })
}

fn simulate_path(
    lookup: &PolicyLookup,
    params: &ModelParams,
    config: &SimConfig,
    idx: u64,
) -> PathRecord {
    let mut rng = ChaCha12Rng::seed_from_u64(path_seed(config.seed, idx));
    let (r, m, sigma, gamma) = (params.r, params.m, params.sigma, params.gamma);
    let dt = config.dt;
    let sq_dt = dt.sqrt();
    let y_max = *lookup.sol.value.ys.last().expect("non-empty grid");
    let n_steps = (config.horizon / dt).round() as usize;

    let mut rec = PathRecord {
        times: Vec::new(),
        xs: Vec::new(),
        ys: Vec::new(),
        a: Vec::new(),
        b: Vec::new(),
        jump_times: Vec::new(),
        tau_star: None,
        x_final: config.x0,
        y_final: config.y0,
        xi: 0.0,
        promise: 0.0,
        integrated_intensity: 0.0,
        min_y: config.y0,
        max_jump_prob: 0.0,
        error: None,
    };

    let mut y = config.y0;
    let mut x = config.x0;
    let mut promise_flow = 0.0_f64;
    for k in 0..=n_steps {
        let t = k as f64 * dt;
        if y > y_max {
            rec.error = Some(format!("Y = {y} left the solved grid at t = {t}"));
            break;
        }
        if y < -1e-9 {
            rec.error = Some(format!("limited liability violated: Y = {y} at t = {t}"));
            break;
        }
        y = y.max(0.0);

        let stopped = lookup.value_gap(y) <= config.stop_tol;
        if k % config.stride == 0 || stopped || k == n_steps {
            rec.times.push(t);
            rec.xs.push(x);
            rec.ys.push(y);
            rec.a.push(if stopped {
                0.0
            } else {
                lookup.interp(&lookup.a, y)
            });
            rec.b.push(if stopped {
                m
            } else {
                lookup.interp(&lookup.b, y)
            });
        }
        if stopped || k == n_steps {
            rec.tau_star = if stopped { Some(t) } else { None };
            rec.x_final = x;
            rec.y_final = y;
            rec.xi = y.powf(gamma);
            rec.promise = promise_flow + (-r * t).exp() * y;
            return rec;
        }

        let a = lookup.interp(&lookup.a, y);
        let b = lookup.interp(&lookup.b, y).clamp(params.eps_m, m);
        let z = lookup.interp(&lookup.z, y);
        let eta = lookup.interp(&lookup.eta, y).max(0.0);
        // Feasibility re-clamp after interpolation: a jump may not push Y
        // below zero.
        let u = lookup.interp(&lookup.u, y).max(-y / r);

        let lam = b / m;
        let jump_prob = lam * dt;
        rec.max_jump_prob = rec.max_jump_prob.max(jump_prob);

        let normal: f64 = rng.sample(StandardNormal);
        let uniform: f64 = rng.random();
        let jump = uniform < jump_prob;

        promise_flow += r * (-r * t).exp() * (eta - params.cost(a, b)) * dt;
        rec.integrated_intensity += lam * dt;

        let dw = sq_dt * normal;
        let mut y_next =
            y + r * (y - eta + params.cost(a, b)) * dt + r * sigma * z * dw - r * lam * u * dt;
        let mut x_next = x + a * dt + sigma * dw;
        if jump {
            if y + r * u < -1e-9 {
                rec.error = Some(format!(
                    "infeasible jump exposure at t = {t}: Y = {y}, U = {u}"
                ));
                break;
            }
            y_next += r * u;
            x_next -= m;
            rec.jump_times.push(t);
        }
        // An Euler step may overshoot the absorbing boundary at 0, where the
        // contract terminates with a zero lump sum; absorb instead of flagging.
        y = y_next.max(0.0);
        x = x_next;
        rec.min_y = rec.min_y.min(y);
    }
    if rec.error.is_some() {
        rec.x_final = x;
        rec.y_final = y;
        rec.xi = y.max(0.0).powf(gamma);
        rec.promise = f64::NAN;
    }
    rec
}

/// Monte Carlo check of the promise-keeping identity: the realised discounted
/// agent payoff should average to `y0`. Returns `(estimate, standard error)`.
pub fn promise_keeping(batch: &TrajectoryBatch) -> (f64, f64) {
    let vals: Vec<f64> = batch
        .paths
        .iter()
        .filter(|p| p.error.is_none())
        .map(|p| p.promise)
        .collect();
    let n = vals.len() as f64;
    if vals.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = vals.iter().sum::<f64>() / n;
    if vals.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Batch summary: termination statistics, project-value profile, histograms.
pub fn aggregates(batch: &TrajectoryBatch) -> Aggregates {
    let n = batch.paths.len();
    let n_errors = batch.paths.iter().filter(|p| p.error.is_some()).count();
    let ok: Vec<&PathRecord> = batch.paths.iter().filter(|p| p.error.is_none()).collect();
    let n_ok = ok.len().max(1) as f64;
    let unstopped = ok.iter().filter(|p| p.tau_star.is_none()).count();
    let horizon = batch.config.horizon;

    let mean_x_final = ok.iter().map(|p| p.x_final).sum::<f64>() / n_ok;
    let mean_tau = ok
        .iter()
        .map(|p| p.tau_star.unwrap_or(horizon))
        .sum::<f64>()
        / n_ok;
    let mean_xi = ok.iter().map(|p| p.xi).sum::<f64>() / n_ok;
    let mean_jumps = ok.iter().map(|p| p.jump_times.len() as f64).sum::<f64>() / n_ok;
    let mean_intensity = ok.iter().map(|p| p.integrated_intensity).sum::<f64>() / n_ok;

    // Mean X over paths still alive at each strided sample time. Stopped
    // paths keep contributing their terminal value, matching a stopped-process
    // average; alive counts are reported alongside.
    let sample_dt = batch.config.dt * batch.config.stride as f64;
    let n_buckets = (horizon / sample_dt).round() as usize + 1;
    let mut x_profile = Vec::with_capacity(n_buckets);
    for k in 0..n_buckets {
        let t = k as f64 * sample_dt;
        let mut sum = 0.0;
        let mut alive = 0usize;
        for p in &ok {
            let tau = p.tau_star.unwrap_or(horizon);
            if tau >= t {
                alive += 1;
                if let Some(j) = p
                    .times
                    .iter()
                    .position(|&s| (s - t).abs() <= 0.5 * sample_dt)
                {
                    sum += p.xs[j];
                } else {
                    alive -= 1;
                }
            }
        }
        if alive > 0 {
            x_profile.push((t, sum / alive as f64, alive));
        }
    }

    let n_hist = 20usize;
    let mut tau_histogram: Vec<(f64, usize)> = (1..=n_hist)
        .map(|k| (horizon * k as f64 / n_hist as f64, 0usize))
        .collect();
    for p in &ok {
        let tau = p.tau_star.unwrap_or(horizon);
        let k = ((tau / horizon * n_hist as f64) as usize).min(n_hist - 1);
        tau_histogram[k].1 += 1;
    }

    Aggregates {
        n_paths: n,
        n_errors,
        unstopped_fraction: unstopped as f64 / n_ok,
        mean_x_final,
        mean_tau,
        mean_xi,
        mean_jumps,
        mean_integrated_intensity: mean_intensity,
        x_profile,
        tau_histogram,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::CostKind;
    use crate::secondbest::{PolicyField, PolicyNode, SolveReport, SolverConfig, ValueFunction};

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "expected {b}, got {a} (tol {tol})");
    }

    fn bench_params() -> ModelParams {
        ModelParams {
            r: 0.1,
            rho: 0.1,
            sigma: 1.0,
            gamma: 2.0,
            a_bar: 4.6,
            eps_m: 0.1,
            m: 0.1,
            cost_kind: CostKind::QuadraticShifted,
            ..ModelParams::default()
        }
    }

    /// A synthetic solution whose policy is "no effort, no payment, no
    /// exposure" and whose value never touches the barrier, so paths run to
    /// the horizon.
    fn degenerate_solution(params: &ModelParams, n: usize, y_max: f64) -> Solution {
        let h = y_max / (n - 1) as f64;
        let ys: Vec<f64> = (0..n).map(|i| i as f64 * h).collect();
        let v = vec![1.0; n];
        let barrier: Vec<f64> = ys.iter().map(|&y| -y * y).collect();
        let policy = vec![
            PolicyNode {
                a: 0.0,
                b: params.m,
                z: 0.0,
                u: 0.0,
                eta: 0.0,
                stop: false
            };
            n
        ];
        Solution {
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
            config: SolverConfig {
                n_nodes: n,
                y_max,
                ..SolverConfig::default()
            },
        }
    }

    #[test]
    fn zero_noise_drift_stationarity() {
        // sigma -> 0 via z = 0 policy, jumps at baseline with U = 0, eta = 0:
        // dY = r Y dt, so e^{-rT} Y_T recovers Y_0 exactly in expectation and
        // pathwise up to Euler drift error.
        let params = bench_params();
        let sol = degenerate_solution(&params, 200, 50.0);
        let config = SimConfig {
            n_paths: 64,
            horizon: 5.0,
            dt: 1e-3,
            y0: 0.5,
            stride: 500,
            ..SimConfig::default()
        };
        let batch = simulate(&sol, &params, &config).unwrap();
        let (estimate, _) = promise_keeping(&batch);
        // exp(r dt) vs (1 + r dt) per step: O(dt) bias over the horizon
        assert_close(estimate, 0.5, 5e-4);
        for p in &batch.paths {
            assert!(p.error.is_none());
            assert!(
                p.tau_star.is_none(),
                "no contact in this synthetic solution"
            );
            // Y grew deterministically, jumps had zero impact.
            assert_close(p.y_final, 0.5 * (0.1_f64 * 5.0).exp(), 1e-3);
        }
    }

    #[test]
    fn reproducibility_bitwise() {
        let params = bench_params();
        let sol = degenerate_solution(&params, 200, 50.0);
        let config = SimConfig {
            n_paths: 32,
            horizon: 2.0,
            ..SimConfig::default()
        };
        let a = simulate(&sol, &params, &config).unwrap();
        let b = simulate(&sol, &params, &config).unwrap();
        for (pa, pb) in a.paths.iter().zip(&b.paths) {
            assert_eq!(pa.y_final.to_bits(), pb.y_final.to_bits());
            assert_eq!(pa.x_final.to_bits(), pb.x_final.to_bits());
            assert_eq!(pa.jump_times.len(), pb.jump_times.len());
        }
    }

    #[cfg(feature = "parallel")]
    #[test]
    fn parallel_matches_sequential() {
        let params = bench_params();
        let sol = degenerate_solution(&params, 200, 50.0);
        let config = SimConfig {
            n_paths: 64,
            horizon: 1.0,
            ..SimConfig::default()
        };
        let par = simulate(&sol, &params, &config).unwrap();
        crate::exec::set_sequential(true);
        let seq = simulate(&sol, &params, &config).unwrap();
        crate::exec::set_sequential(false);
        for (pa, pb) in par.paths.iter().zip(&seq.paths) {
            assert_eq!(pa.y_final.to_bits(), pb.y_final.to_bits());
        }
    }

    #[test]
    fn immediate_stop_when_y0_in_contact() {
        let params = bench_params();
        let mut sol = degenerate_solution(&params, 200, 50.0);
        // Make the value equal the barrier everywhere: gap 0 <= stop_tol.
        sol.value.v = sol.barrier.clone();
        let config = SimConfig {
            n_paths: 16,
            y0: 0.3,
            x0: 1.5,
            ..SimConfig::default()
        };
        let batch = simulate(&sol, &params, &config).unwrap();
        let agg = aggregates(&batch);
        assert_eq!(agg.unstopped_fraction, 0.0);
        assert_close(agg.mean_x_final, 1.5, 1e-12);
        for p in &batch.paths {
            assert_eq!(p.tau_star, Some(0.0));
            assert_close(p.xi, 0.3_f64.powi(2), 1e-12);
        }
    }

    #[test]
    fn jump_count_matches_integrated_intensity() {
        let params = bench_params();
        let sol = degenerate_solution(&params, 200, 1e6);
        let config = SimConfig {
            n_paths: 2000,
            horizon: 5.0,
            dt: 1e-2,
            y0: 0.5,
            ..SimConfig::default()
        };
        let batch = simulate(&sol, &params, &config).unwrap();
        let agg = aggregates(&batch);
        // b = m so intensity 1: ~5 jumps per path, SE ~ sqrt(5/2000)
        let se = (agg.mean_jumps / 2000.0_f64).sqrt().max(1e-6);
        assert!(
            (agg.mean_jumps - agg.mean_integrated_intensity).abs() <= 3.0 * se,
            "jumps {} vs intensity {}",
            agg.mean_jumps,
            agg.mean_integrated_intensity
        );
    }

    #[test]
    fn clt_scaling_of_standard_error() {
        let params = bench_params();
        let sol = degenerate_solution(&params, 200, 1e6);
        let small = SimConfig {
            n_paths: 1000,
            horizon: 2.0,
            dt: 1e-2,
            y0: 0.4,
            ..SimConfig::default()
        };
        let large = SimConfig {
            n_paths: 2000,
            ..small
        };
        // Give the paths some diffusion so the estimator has variance.
        let mut sol2 = sol;
        for node in &mut sol2.policy.0 {
            node.z = 1.0;
        }
        let (_, se_small) = promise_keeping(&simulate(&sol2, &params, &small).unwrap());
        let (_, se_large) = promise_keeping(&simulate(&sol2, &params, &large).unwrap());
        let ratio = se_large / se_small;
        let expected = (0.5_f64).sqrt();
        assert!(
            (ratio - expected).abs() <= 0.2 * expected,
            "SE ratio {ratio} vs sqrt(1/2)"
        );
    }
}
