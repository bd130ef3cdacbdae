//! Property-based invariants for the model primitives and the scalar
//! numerics.

use proptest::prelude::*;

use parachute_core::model::{CostKind, ModelParams};
use parachute_core::numerics::{concave_conjugate, find_root, Extrapolation, GridFn, ROOT_TOL};

fn arb_params() -> impl Strategy<Value = ModelParams> {
    (1.2..4.0_f64, 0.05..2.0_f64, 0.2..6.0_f64).prop_map(|(gamma, m, a_bar)| ModelParams {
        gamma,
        m,
        eps_m: 0.5 * m,
        a_bar,
        cost_kind: CostKind::QuadraticShifted,
        ..ModelParams::default()
    })
}

proptest! {
    /// Fenchel-Young: F(y) + F*(p) <= y p for every pair, equality at p = F'(y).
    #[test]
    fn fenchel_young(gamma in 1.1..5.0_f64, y in 0.0..20.0_f64, p in -50.0..5.0_f64) {
        let params = ModelParams { gamma, ..ModelParams::default() };
        let gap = y * p - params.f_eval(y).unwrap() - params.f_star(p);
        prop_assert!(gap >= -1e-9, "gap {gap} at y={y}, p={p}");
        let q = params.f_prime(y);
        let eq = y * q - params.f_eval(y).unwrap() - params.f_star(q);
        prop_assert!(eq.abs() <= 1e-9 * (1.0 + y.powf(gamma)), "equality gap {eq}");
    }

    /// The closed-form agent best response dominates arbitrary feasible efforts.
    #[test]
    fn agent_argmax_dominates(
        params in arb_params(),
        z in -3.0..6.0_f64,
        u in -40.0..10.0_f64,
        ta in 0.0..1.0_f64,
        tb in 0.0..1.0_f64,
    ) {
        let (a_star, b_star) = params.argmax_agent(z, u);
        let best = params.hamiltonian_agent(z, u, a_star, b_star).unwrap();
        let a = ta * params.a_bar;
        let b = params.eps_m + tb * (params.m - params.eps_m);
        let other = params.hamiltonian_agent(z, u, a, b).unwrap();
        prop_assert!(best >= other - 1e-9, "({a},{b}) beats ({a_star},{b_star}) by {}", other - best);
    }

    /// G* stays within [-m, a_bar - eps_m] on non-positive slopes and is
    /// non-decreasing.
    #[test]
    fn g_star_bounds_and_monotonicity(params in arb_params(), p1 in -60.0..0.0_f64, dp in 0.0..30.0_f64) {
        let v1 = params.g_star(p1);
        prop_assert!(v1 >= -params.m - 1e-12 && v1 <= params.a_bar - params.eps_m + 1e-12);
        let v2 = params.g_star(p1 + dp);
        prop_assert!(v2 >= v1 - 1e-12, "G* decreasing: {v1} -> {v2}");
    }

    /// Piecewise-linear interpolation of concave samples stays between the
    /// cell chord and the nodal maximum.
    #[test]
    fn interp_respects_concavity(shift in 0.1..2.0_f64, t in 0.0..1.0_f64) {
        let xs: Vec<f64> = (0..50).map(|i| i as f64 / 10.0).collect();
        let ys: Vec<f64> = xs.iter().map(|&x| -(x - shift) * (x - shift)).collect();
        let g = GridFn::new(xs.clone(), ys.clone(), Extrapolation::Error).unwrap();
        for w in xs.windows(2) {
            let x = w[0] + t * (w[1] - w[0]);
            let v = g.interp(x).unwrap();
            let i = (w[0] * 10.0).round() as usize;
            let chord = ys[i] + t * (ys[i + 1] - ys[i]);
            prop_assert!((v - chord).abs() <= 1e-12);
            prop_assert!(v <= ys[i].max(ys[i + 1]) + 1e-12);
        }
    }

    /// The numerical conjugate of a non-increasing slope table is
    /// non-increasing in y.
    #[test]
    fn conjugate_monotone(scale in 0.2..3.0_f64, y1 in 0.0..3.0_f64, dy in 0.0..2.0_f64) {
        let ps: Vec<f64> = (0..400).map(|i| -20.0 + 20.0 * i as f64 / 400.0).collect();
        let vals: Vec<f64> = ps.iter().map(|&p| -scale * p * p / 4.0).collect();
        let table = GridFn::new(ps, vals, Extrapolation::Error).unwrap();
        let a = concave_conjugate(&table, y1).unwrap();
        let b = concave_conjugate(&table, y1 + dy).unwrap();
        prop_assert!(b <= a + 1e-9, "conjugate increased: {a} -> {b}");
    }

    /// Brent recovers roots of randomly shifted monotone cubics.
    #[test]
    fn brent_on_cubics(root in -2.0..2.0_f64) {
        let f = |x: f64| (x - root) * ((x - root) * (x - root) + 1.0);
        let found = find_root(f, -5.0, 5.0, ROOT_TOL).unwrap();
        prop_assert!((found - root).abs() <= 1e-9);
    }
}
