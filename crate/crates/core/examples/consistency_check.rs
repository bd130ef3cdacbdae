//! Cross-validation of the HJB solve against an independent Monte Carlo: the
//! principal's discounted payoff simulated under the solved policy must
//! average to the solved value at the starting state.
//!
//! Run with `cargo run --release --example consistency_check`.

use parachute_core::model::{CostKind, ModelParams};
use parachute_core::secondbest::{solve, SolverConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

fn main() {
    let params = ModelParams {
        r: 0.1,
        rho: 0.1,
        sigma: 1.0,
        gamma: 2.0,
        a_bar: 4.6,
        eps_m: 0.1,
        m: 0.1,
        cost_kind: CostKind::QuadraticShifted,
        ..ModelParams::default()
    };
    let sol = solve(&params, &SolverConfig::default()).expect("solve");
    let vf = &sol.value;
    let h = vf.step();
    let lerp = |field: &dyn Fn(usize) -> f64, y: f64| {
        let t = (y / h).max(0.0);
        let i = (t as usize).min(vf.ys.len() - 2);
        let w = (t - i as f64).clamp(0.0, 1.0);
        field(i) * (1.0 - w) + field(i + 1) * w
    };

    let y0 = 0.11;
    let dt = 1e-3_f64;
    let n_paths = 20_000;
    let (mut sum, mut sumsq) = (0.0, 0.0);
    for idx in 0..n_paths as u64 {
        let mut rng = ChaCha12Rng::seed_from_u64(0xabcd ^ idx);
        let mut y: f64 = y0;
        let mut pv = 0.0;
        let mut t = 0.0;
        loop {
            let gap = lerp(&|i| vf.v[i], y) - lerp(&|i| sol.barrier[i], y);
            if gap <= 1e-6 || t >= 400.0 {
                pv += (-params.rho * t).exp() * lerp(&|i| sol.barrier[i], y);
                break;
            }
            let a = lerp(&|i| sol.policy.0[i].a, y);
            let b = lerp(&|i| sol.policy.0[i].b, y).clamp(params.eps_m, params.m);
            let z = lerp(&|i| sol.policy.0[i].z, y);
            let eta = lerp(&|i| sol.policy.0[i].eta, y).max(0.0);
            let u = lerp(&|i| sol.policy.0[i].u, y).max(-y / params.r);
            let payment = eta.powf(params.gamma);
            pv += params.rho * (-params.rho * t).exp() * (a - b - payment) * dt;
            let normal: f64 = rng.sample(StandardNormal);
            let jump = rng.random::<f64>() < (b / params.m) * dt;
            y += params.r * (y - eta + params.cost(a, b)) * dt
                + params.r * params.sigma * z * dt.sqrt() * normal
                - params.r * (b / params.m) * u * dt
                + if jump { params.r * u } else { 0.0 };
            y = y.max(0.0);
            t += dt;
        }
        sum += pv;
        sumsq += pv * pv;
    }
    let mean = sum / n_paths as f64;
    let se = ((sumsq / n_paths as f64 - mean * mean) / n_paths as f64).sqrt();
    let solved = vf.interp(y0);
    println!("principal value by Monte Carlo: {mean:.5} +- {se:.5}");
    println!("principal value by HJB solve:   {solved:.5}");
    println!(
        "difference: {:.2} standard errors",
        (mean - solved).abs() / se
    );
}
