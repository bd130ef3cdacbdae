//! Reusable scalar numerics: bracketed root finding, adaptive quadrature,
//! numerical concave conjugation and monotone-grid interpolation.

use crate::{Error, Result};

/// Default absolute tolerance for root brackets. Thresholds feed piecewise
/// definitions, so loose roots would smear kinks.
pub const ROOT_TOL: f64 = 1e-12;

const GOLDEN: f64 = 0.618_033_988_749_894_9;

/// Bracketed root finding with Brent's method.
///
/// Requires `f(lo) * f(hi) <= 0`. Deterministic: repeated calls are
/// bit-identical. Stops when the bracket width falls below `tol` (plus a
/// machine-epsilon floor) or an iterate hits an exact zero.
pub fn find_root<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, tol: f64) -> Result<f64> {
    if tol.is_nan() || tol <= 0.0 {
        return Err(Error::Domain(format!(
            "root tolerance must be > 0, got {tol}"
        )));
    }
    let (mut a, mut b) = (lo, hi);
    let (mut fa, mut fb) = (f(a), f(b));
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa * fb > 0.0 {
        return Err(Error::Bracket {
            lo,
            hi,
            flo: fa,
            fhi: fb,
        });
    }
    // c holds the previous iterate of b; d/e track step sizes for the
    // interpolation/bisection decision.
    let (mut c, mut fc) = (a, fa);
    let mut d = b - a;
    let mut e = d;
    for _ in 0..200 {
        if fb.abs() > fc.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol1 = 2.0 * f64::EPSILON * b.abs() + 0.5 * tol;
        let xm = 0.5 * (c - b);
        if xm.abs() <= tol1 || fb == 0.0 {
            return Ok(b);
        }
        if e.abs() >= tol1 && fa.abs() > fb.abs() {
            // Inverse quadratic interpolation, or secant when a == c.
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * xm * s;
                q = 1.0 - s;
            } else {
                let q0 = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * xm * q0 * (q0 - r) - (b - a) * (r - 1.0));
                q = (q0 - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            }
            p = p.abs();
            let min1 = 3.0 * xm * q - (tol1 * q).abs();
            let min2 = (e * q).abs();
            if 2.0 * p < min1.min(min2) {
                e = d;
                d = p / q;
            } else {
                d = xm;
                e = d;
            }
        } else {
            d = xm;
            e = d;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol1 { d } else { tol1.copysign(xm) };
        fb = f(b);
        if (fb > 0.0) == (fc > 0.0) {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
    }
    Ok(b)
}

/// Adaptive Simpson quadrature of `f` on `[a, b]` with absolute tolerance `tol`.
///
/// Errors out on non-finite integrand samples.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> Result<f64> {
    if a > b {
        return Err(Error::Domain(format!(
            "integration bounds reversed: [{a}, {b}]"
        )));
    }
    if a == b {
        return Ok(0.0);
    }
    let eval = |x: f64| -> Result<f64> {
        let y = f(x);
        if y.is_finite() {
            Ok(y)
        } else {
            Err(Error::Integrand { x })
        }
    };
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (eval(a)?, eval(m)?, eval(b)?);
    let whole = simpson(a, b, fa, fm, fb);
    adaptive(&eval, a, b, fa, fm, fb, whole, tol, 60)
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn adaptive<F: Fn(f64) -> Result<f64>>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> Result<f64> {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let (flm, frm) = (f(lm)?, f(rm)?);
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let err = left + right - whole;
    // Floor the acceptance threshold at machine precision relative to the
    // local magnitude; an absolute tolerance finer than that is unreachable.
    let floor = 8.0 * f64::EPSILON * (left.abs() + right.abs());
    if depth == 0 || err.abs() <= (15.0 * tol).max(floor) {
        // Richardson correction of the composite estimate.
        return Ok(left + right + err / 15.0);
    }
    let half = 0.5 * tol;
    Ok(adaptive(f, a, m, fa, flm, fm, left, half, depth - 1)?
        + adaptive(f, m, b, fm, frm, fb, right, half, depth - 1)?)
}

/// Golden-section minimisation of a unimodal `f` on `[a, b]`.
///
/// Returns the abscissa of the minimum to within `tol`.
pub fn golden_min<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    let (mut lo, mut hi) = (a.min(b), a.max(b));
    let mut x1 = hi - GOLDEN * (hi - lo);
    let mut x2 = lo + GOLDEN * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while hi - lo > tol {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - GOLDEN * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + GOLDEN * (hi - lo);
            f2 = f(x2);
        }
    }
    0.5 * (lo + hi)
}

/// Out-of-range behaviour for [`GridFn::interp`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Extrapolation {
    /// Hold the boundary value.
    Clamp,
    /// Extend the boundary segment linearly.
    Linear,
    /// Reject out-of-range queries.
    Error,
}

/// A function tabulated on a strictly increasing grid, evaluated by
/// piecewise-linear interpolation.
#[derive(Debug, Clone)]
pub struct GridFn {
    xs: Vec<f64>,
    ys: Vec<f64>,
    extrap: Extrapolation,
}

impl GridFn {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>, extrap: Extrapolation) -> Result<Self> {
        if xs.is_empty() {
            return Err(Error::Domain("empty grid".into()));
        }
        if xs.len() != ys.len() {
            return Err(Error::Domain(format!(
                "grid/value length mismatch: {} vs {}",
                xs.len(),
                ys.len()
            )));
        }
        if xs
            .windows(2)
            .any(|w| w[0] >= w[1] || w[0].is_nan() || w[1].is_nan())
        {
            return Err(Error::Domain("grid not strictly increasing".into()));
        }
        Ok(Self { xs, ys, extrap })
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn ys(&self) -> &[f64] {
        &self.ys
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    /// Index of the cell `[xs[i], xs[i+1]]` containing `x` (clamped to valid cells).
    pub fn cell_of(&self, x: f64) -> usize {
        match self
            .xs
            .binary_search_by(|v| v.partial_cmp(&x).expect("non-finite grid query"))
        {
            Ok(i) => i.min(self.xs.len().saturating_sub(2)),
            Err(0) => 0,
            Err(i) => (i - 1).min(self.xs.len().saturating_sub(2)),
        }
    }

    /// Piecewise-linear value at `x`; exact at the nodes.
    pub fn interp(&self, x: f64) -> Result<f64> {
        let n = self.xs.len();
        if n == 1 {
            return if x == self.xs[0] || self.extrap != Extrapolation::Error {
                Ok(self.ys[0])
            } else {
                Err(Error::Domain(format!("x={x} outside single-node grid")))
            };
        }
        if x < self.xs[0] || x > self.xs[n - 1] {
            match self.extrap {
                Extrapolation::Error => {
                    return Err(Error::Domain(format!(
                        "x={x} outside grid [{}, {}]",
                        self.xs[0],
                        self.xs[n - 1]
                    )))
                }
                Extrapolation::Clamp => {
                    return Ok(if x < self.xs[0] {
                        self.ys[0]
                    } else {
                        self.ys[n - 1]
                    })
                }
                Extrapolation::Linear => {}
            }
        }
        let i = self.cell_of(x);
        let (x0, x1) = (self.xs[i], self.xs[i + 1]);
        let w = (x - x0) / (x1 - x0);
        Ok(self.ys[i] + w * (self.ys[i + 1] - self.ys[i]))
    }
}

/// Numerical concave conjugate of a tabulated function: `inf_p { y*p - f(p) }`.
///
/// The infimum over the grid nodes is refined by golden section between the
/// neighbours of the discrete argmin, interpolating `f` linearly. Returns the
/// value together with the refined argmin slope.
pub fn concave_conjugate_with_argmin(f: &GridFn, y: f64) -> Result<(f64, f64)> {
    if f.is_empty() {
        return Err(Error::Domain("empty grid".into()));
    }
    let xs = f.xs();
    let ys = f.ys();
    let mut best = 0usize;
    let mut best_val = f64::INFINITY;
    for (i, (&p, &fp)) in xs.iter().zip(ys).enumerate() {
        let v = y * p - fp;
        if v < best_val {
            best_val = v;
            best = i;
        }
    }
    if xs.len() == 1 {
        return Ok((best_val, xs[0]));
    }
    // Refine by golden section between the neighbours of the discrete argmin.
    // Linear interpolation of `f` cannot improve on the nodal infimum (the
    // objective stays piecewise linear), so the interior refinement models `f`
    // by the 3-point quadratic through the argmin and its neighbours.
    if best > 0 && best + 1 < xs.len() {
        let (x0, x1, x2) = (xs[best - 1], xs[best], xs[best + 1]);
        let (f0, f1, f2) = (ys[best - 1], ys[best], ys[best + 1]);
        let quad = move |p: f64| {
            f0 * (p - x1) * (p - x2) / ((x0 - x1) * (x0 - x2))
                + f1 * (p - x0) * (p - x2) / ((x1 - x0) * (x1 - x2))
                + f2 * (p - x0) * (p - x1) / ((x2 - x0) * (x2 - x1))
        };
        let obj = |p: f64| y * p - quad(p);
        let span = (x2 - x0).abs().max(1e-300);
        let p_hat = golden_min(obj, x0, x2, 1e-12 * span.max(1.0));
        let refined = obj(p_hat);
        if refined < best_val {
            return Ok((refined, p_hat));
        }
    } else {
        let lo = xs[best.saturating_sub(1)];
        let hi = xs[(best + 1).min(xs.len() - 1)];
        let obj = |p: f64| y * p - f.interp(p).unwrap_or(f64::INFINITY);
        let span = (hi - lo).abs().max(1e-300);
        let p_hat = golden_min(obj, lo, hi, 1e-12 * span.max(1.0));
        let refined = obj(p_hat);
        if refined < best_val {
            return Ok((refined, p_hat));
        }
    }
    Ok((best_val, xs[best]))
}

/// Numerical concave conjugate (value only). See [`concave_conjugate_with_argmin`].
pub fn concave_conjugate(f: &GridFn, y: f64) -> Result<f64> {
    concave_conjugate_with_argmin(f, y).map(|(v, _)| v)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "expected {b}, got {a} (tol {tol})");
    }

    #[test]
    fn root_of_linear() {
        let r = find_root(|x| x - 1.0, 0.0, 2.0, ROOT_TOL).unwrap();
        assert_close(r, 1.0, 1e-12);
    }

    #[test]
    fn root_is_deterministic() {
        let f = |x: f64| x.cos() - x * x * x;
        let a = find_root(f, 0.0, 1.0, ROOT_TOL).unwrap();
        let b = find_root(f, 0.0, 1.0, ROOT_TOL).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn root_requires_bracket() {
        assert!(matches!(
            find_root(|x| x * x + 1.0, -1.0, 1.0, ROOT_TOL),
            Err(Error::Bracket { .. })
        ));
    }

    #[test]
    fn integrate_monomials() {
        assert_close(integrate(|x| x, 0.0, 1.0, 1e-12).unwrap(), 0.5, 1e-12);
        assert_close(
            integrate(|x| x * x * x, 0.0, 1.0, 1e-12).unwrap(),
            0.25,
            1e-10,
        );
    }

    #[test]
    fn integrate_rejects_non_finite() {
        assert!(matches!(
            integrate(|x| 1.0 / x, -1.0, 1.0, 1e-9),
            Err(Error::Integrand { .. })
        ));
    }

    #[test]
    fn integrate_tolerance_scaling() {
        // Halving the tolerance must keep estimates within a small multiple of it.
        let f = |x: f64| (-x).exp() * x.sin();
        let a = integrate(f, 0.0, 10.0, 1e-6).unwrap();
        let b = integrate(f, 0.0, 10.0, 1e-7).unwrap();
        assert!((a - b).abs() <= 5e-6);
    }

    #[test]
    fn golden_min_quadratic() {
        let x = golden_min(|x| (x - 0.3).powi(2), -1.0, 1.0, 1e-10);
        assert_close(x, 0.3, 1e-8);
    }

    #[test]
    fn interp_hits_nodes_and_midpoints() {
        let g = GridFn::new(
            vec![0.0, 1.0, 2.0],
            vec![0.0, 2.0, 6.0],
            Extrapolation::Error,
        )
        .unwrap();
        assert_close(g.interp(1.0).unwrap(), 2.0, 0.0);
        assert_close(g.interp(1.5).unwrap(), 4.0, 1e-15);
        assert!(g.interp(2.5).is_err());
    }

    #[test]
    fn interp_extrapolation_policies() {
        let g = GridFn::new(vec![0.0, 1.0], vec![1.0, 3.0], Extrapolation::Clamp).unwrap();
        assert_close(g.interp(-1.0).unwrap(), 1.0, 0.0);
        let g = GridFn::new(vec![0.0, 1.0], vec![1.0, 3.0], Extrapolation::Linear).unwrap();
        assert_close(g.interp(2.0).unwrap(), 5.0, 1e-15);
    }

    #[test]
    fn grid_must_increase() {
        assert!(GridFn::new(vec![0.0, 0.0], vec![1.0, 1.0], Extrapolation::Clamp).is_err());
    }

    /// Biconjugation recovers closed concave functions: sample f* on a slope
    /// grid, conjugate numerically, compare with f.
    #[test]
    fn biconjugation_recovers_strictly_concave_functions() {
        type Pair = (fn(f64) -> f64, fn(f64) -> f64);
        // (f, analytic conjugate f*(p) = inf_{y>=0} { y p - f(y) })
        let cases: Vec<Pair> = vec![
            (|y| -y * y, |p| if p >= 0.0 { 0.0 } else { -p * p / 4.0 }),
            (
                |y| -y.powi(4),
                |p| {
                    if p >= 0.0 {
                        0.0
                    } else {
                        let y = (-p / 4.0).powf(1.0 / 3.0);
                        y * p + y.powi(4)
                    }
                },
            ),
            (
                |y| -(y.exp()) + 1.0 + y,
                |p| {
                    if p >= 0.0 {
                        0.0
                    } else {
                        let y = (1.0 - p).ln();
                        y * p + y.exp() - 1.0 - y
                    }
                },
            ),
        ];
        for (f, fstar) in cases {
            // Geometric near zero, linear in the tail (4000 nodes); the tail
            // reaches past f'(3) for every test function so the argmin never
            // sits on the boundary.
            let mut ps: Vec<f64> = Vec::with_capacity(4000);
            for i in 0..2000 {
                ps.push(-1e-6 * (60.0f64).powf(i as f64 / 1999.0 * 3.0));
            }
            for i in 0..2000 {
                ps.push(-0.25 - 120.0 * i as f64 / 1999.0);
            }
            ps.sort_by(|a, b| a.partial_cmp(b).unwrap());
            ps.dedup();
            let vals: Vec<f64> = ps.iter().map(|&p| fstar(p)).collect();
            let table = GridFn::new(ps, vals, Extrapolation::Error).unwrap();
            for k in 0..=30 {
                let y = 3.0 * k as f64 / 30.0;
                let got = concave_conjugate(&table, y).unwrap();
                assert_close(got, f(y), 1e-5);
            }
        }
    }

    #[test]
    fn conjugate_of_zero_at_origin() {
        let ps: Vec<f64> = (0..100).map(|i| -1.0 + i as f64 / 99.0).collect();
        let table = GridFn::new(ps, vec![0.0; 100], Extrapolation::Error).unwrap();
        assert_close(concave_conjugate(&table, 0.0).unwrap(), 0.0, 1e-12);
    }

    #[test]
    fn conjugate_monotone_on_negative_slopes() {
        let ps: Vec<f64> = (0..200).map(|i| -5.0 + 5.0 * i as f64 / 199.0).collect();
        let vals: Vec<f64> = ps.iter().map(|&p| -(p * p) / 4.0).collect();
        let table = GridFn::new(ps, vals, Extrapolation::Error).unwrap();
        let mut prev = f64::INFINITY;
        for k in 0..40 {
            let y = k as f64 / 10.0;
            let v = concave_conjugate(&table, y).unwrap();
            assert!(v <= prev + 1e-12);
            prev = v;
        }
    }
}
