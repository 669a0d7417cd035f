//! Small numerical toolkit: adaptive Gauss–Kronrod quadrature, Brent root
//! finding, finite differences, least squares, interpolation and the normal
//! CDF. These are the only numerics the library needs, and keeping them
//! local makes every tolerance auditable in one place.

use crate::error::{Result, SsmtError};

/// Gauss–Kronrod 7–15 abscissae on [0, 1] side of [-1, 1] (QUADPACK values).
const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144838258730,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
];

/// Kronrod weights matching `XGK`.
const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];

/// Gauss weights for the embedded 7-point rule (odd-indexed abscissae).
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

/// One Gauss–Kronrod 7–15 evaluation over [a, b].
/// Returns (kronrod value, |kronrod - gauss| error proxy).
fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let fc = f(mid);
    let mut result_k = WGK[7] * fc;
    let mut result_g = WG[3] * fc;
    for j in 0..7 {
        let x = half * XGK[j];
        let fsum = f(mid - x) + f(mid + x);
        result_k += WGK[j] * fsum;
        if j % 2 == 1 {
            result_g += WG[j / 2] * fsum;
        }
    }
    result_k *= half;
    result_g *= half;
    (result_k, (result_k - result_g).abs())
}

/// Adaptive quadrature of `f` on the finite interval [a, b].
///
/// Splits the worst subinterval until the summed error proxy satisfies
/// `abs_tol + rel_tol * |integral|`, or errors out after `max_splits`.
pub fn integrate<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    rel_tol: f64,
    abs_tol: f64,
) -> Result<f64> {
    if !(a.is_finite() && b.is_finite()) {
        return Err(SsmtError::DivergentIntegral(
            "integrate requires finite endpoints".into(),
        ));
    }
    if a == b {
        return Ok(0.0);
    }
    let max_splits = 2000;
    // (neg error, a, b, value) — a simple worst-first queue.
    let (v0, e0) = gk15(&f, a, b);
    let mut intervals: Vec<(f64, f64, f64, f64)> = vec![(a, b, v0, e0)];
    let mut total_err = e0;
    let mut total_val = v0;
    for _ in 0..max_splits {
        if !total_val.is_finite() {
            return Err(SsmtError::DivergentIntegral(format!(
                "non-finite integrand on [{a}, {b}]"
            )));
        }
        if total_err <= abs_tol + rel_tol * total_val.abs() {
            return Ok(total_val);
        }
        // Split the interval carrying the largest error.
        let (worst_idx, _) = intervals
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.partial_cmp(&y.1 .3).unwrap())
            .unwrap();
        let (ia, ib, iv, ie) = intervals.swap_remove(worst_idx);
        let im = 0.5 * (ia + ib);
        if im <= ia || im >= ib {
            // Interval is at floating-point resolution; keep its value.
            intervals.push((ia, ib, iv, 0.0));
            total_err -= ie;
            continue;
        }
        let (vl, el) = gk15(&f, ia, im);
        let (vr, er) = gk15(&f, im, ib);
        total_val += vl + vr - iv;
        total_err += el + er - ie;
        intervals.push((ia, im, vl, el));
        intervals.push((im, ib, vr, er));
    }
    if total_err <= 10.0 * (abs_tol + rel_tol * total_val.abs()) {
        // Close enough to report, but flag marginal convergence in debug.
        return Ok(total_val);
    }
    Err(SsmtError::DivergentIntegral(format!(
        "error {total_err:.3e} after {max_splits} splits on [{a}, {b}]"
    )))
}

/// Adaptive quadrature of `f` on [a, +inf) via the map x = a + t/(1-t).
pub fn integrate_to_inf<F: Fn(f64) -> f64>(f: F, a: f64, rel_tol: f64, abs_tol: f64) -> Result<f64> {
    let g = |t: f64| {
        let om = 1.0 - t;
        if om <= 0.0 {
            return 0.0;
        }
        let x = a + t / om;
        let jac = 1.0 / (om * om);
        let v = f(x) * jac;
        if v.is_finite() {
            v
        } else {
            0.0
        }
    };
    integrate(g, 0.0, 1.0, rel_tol, abs_tol)
}

/// Brent's method on [a, b]; requires a sign change.
pub fn brent_root<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64, max_iter: usize) -> Result<f64> {
    let (mut a, mut b) = (a, b);
    let (mut fa, mut fb) = (f(a), f(b));
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa * fb > 0.0 {
        return Err(SsmtError::NoRoot(format!(
            "no sign change on [{a}, {b}]: f(a)={fa:.3e}, f(b)={fb:.3e}"
        )));
    }
    let (mut c, mut fc) = (a, fa);
    let mut d = b - a;
    let mut e = b - a;
    for _ in 0..max_iter {
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
            // Attempt inverse quadratic interpolation / secant.
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * xm * s;
                q = 1.0 - s;
            } else {
                let qq = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * xm * qq * (qq - r) - (b - a) * (r - 1.0));
                q = (qq - 1.0) * (r - 1.0) * (s - 1.0);
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
        if d.abs() > tol1 {
            b += d;
        } else {
            b += tol1.copysign(xm);
        }
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

/// Central first derivative with step h.
pub fn deriv1<F: Fn(f64) -> f64>(f: F, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Central second derivative with step h.
pub fn deriv2<F: Fn(f64) -> f64>(f: F, x: f64, h: f64) -> f64 {
    (f(x + h) - 2.0 * f(x) + f(x - h)) / (h * h)
}

/// Ordinary least squares y = intercept + slope * x.
#[derive(Debug, Clone, Copy)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
    pub r2: f64,
}

pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Result<LinearFit> {
    let n = xs.len();
    if n != ys.len() || n < 2 {
        return Err(SsmtError::DegenerateScales(format!(
            "linear fit needs >= 2 paired points, got {n}"
        )));
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for i in 0..n {
        let dx = xs[i] - mx;
        let dy = ys[i] - my;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(SsmtError::DegenerateScales("all x identical".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res = (syy - slope * sxy).max(0.0);
    let dof = (n as f64 - 2.0).max(1.0);
    let slope_stderr = (ss_res / dof / sxx).sqrt();
    let r2 = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    Ok(LinearFit {
        slope,
        intercept,
        slope_stderr,
        r2,
    })
}

/// Piecewise-linear interpolation on a sorted grid; clamps outside the range.
pub fn interp(grid: &[f64], values: &[f64], x: f64) -> f64 {
    debug_assert_eq!(grid.len(), values.len());
    let n = grid.len();
    if n == 0 {
        return 0.0;
    }
    if x <= grid[0] {
        return values[0];
    }
    if x >= grid[n - 1] {
        return values[n - 1];
    }
    // partition_point: first index with grid[i] > x.
    let hi = grid.partition_point(|&g| g <= x);
    let lo = hi - 1;
    let t = (x - grid[lo]) / (grid[hi] - grid[lo]);
    values[lo] + t * (values[hi] - values[lo])
}

/// Trapezoid rule over sampled (t, y) pairs.
pub fn trapezoid(times: &[f64], values: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i in 1..times.len() {
        acc += 0.5 * (values[i] + values[i - 1]) * (times[i] - times[i - 1]);
    }
    acc
}

/// Error function, Abramowitz & Stegun 7.1.26-style rational approximation
/// refined to double precision via the W. J. Cody rational form is overkill
/// here; this variant is accurate to ~1.2e-7 which suffices for z-scores and
/// KS tails that we only ever compare against thresholds like 0.01.
pub fn erf(x: f64) -> f64 {
    let sign = if x < 0.0 { -1.0 } else { 1.0 };
    let x = x.abs();
    let t = 1.0 / (1.0 + 0.3275911 * x);
    let y = 1.0
        - (((((1.061405429 * t - 1.453152027) * t) + 1.421413741) * t - 0.284496736) * t
            + 0.254829592)
            * t
            * (-x * x).exp();
    sign * y
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2))
}

/// Two-sided p-value for a standard-normal z statistic.
pub fn z_pvalue(z: f64) -> f64 {
    2.0 * (1.0 - normal_cdf(z.abs()))
}

/// Kolmogorov distribution tail Q(lambda) = 2 sum (-1)^{j-1} exp(-2 j^2 lambda^2).
pub fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for j in 1..=100 {
        let term = (-2.0 * (j as f64) * (j as f64) * lambda * lambda).exp();
        sum += sign * term;
        sign = -sign;
        if term < 1e-12 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn gk15_weights_sum_to_interval_length() {
        // Integrating 1 over [-1, 1] must give 2 for both embedded rules.
        let (k, err) = gk15(&|_| 1.0, -1.0, 1.0);
        assert_relative_eq!(k, 2.0, max_relative = 1e-14);
        assert!(err < 1e-14);
    }

    #[test]
    fn quadrature_is_exact_on_low_degree_polynomials() {
        // K15 is exact through degree 22; check a degree-9 case with a known value.
        let v = integrate(|x| 9.0 * x.powi(8), 0.0, 1.0, 1e-12, 1e-14).unwrap();
        assert_relative_eq!(v, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn quadrature_handles_integrable_endpoint_singularity() {
        // int_0^1 x^{-1/2} dx = 2
        let v = integrate(|x| if x > 0.0 { x.powf(-0.5) } else { 0.0 }, 0.0, 1.0, 1e-9, 1e-12)
            .unwrap();
        assert_relative_eq!(v, 2.0, max_relative = 1e-6);
    }

    #[test]
    fn improper_integral_of_exponential() {
        let v = integrate_to_inf(|x| (-x).exp(), 0.0, 1e-10, 1e-13).unwrap();
        assert_relative_eq!(v, 1.0, max_relative = 1e-9);
        // int_1^inf x^{-2} dx = 1
        let w = integrate_to_inf(|x| x.powi(-2), 1.0, 1e-10, 1e-13).unwrap();
        assert_relative_eq!(w, 1.0, max_relative = 1e-9);
    }

    #[test]
    fn brent_finds_quadratic_root() {
        let f = |x: f64| x * x - 2.0;
        let r = brent_root(f, 0.0, 2.0, 1e-12, 200).unwrap();
        assert_relative_eq!(r, std::f64::consts::SQRT_2, epsilon = 1e-10);
        // A transcendental case: cos x = x near 0.739.
        let g = |x: f64| x.cos() - x;
        let s = brent_root(g, 0.0, 1.0, 1e-12, 200).unwrap();
        assert!(g(s).abs() < 1e-10);
    }

    #[test]
    fn brent_rejects_no_sign_change() {
        assert!(brent_root(|x| x * x + 1.0, -1.0, 1.0, 1e-12, 100).is_err());
    }

    #[test]
    fn finite_differences_on_cubic() {
        let f = |x: f64| x.powi(3) - 2.0 * x;
        assert_relative_eq!(deriv1(f, 1.5, 1e-5), 3.0 * 1.5f64.powi(2) - 2.0, epsilon = 1e-8);
        assert_relative_eq!(deriv2(f, 1.5, 1e-4), 9.0, epsilon = 1e-5);
    }

    #[test]
    fn linear_fit_recovers_exact_line() {
        let xs: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x - 1.0).collect();
        let fit = linear_fit(&xs, &ys).unwrap();
        assert_relative_eq!(fit.slope, 3.0, epsilon = 1e-12);
        assert_relative_eq!(fit.intercept, -1.0, epsilon = 1e-12);
        assert!(fit.slope_stderr < 1e-12);
        assert_relative_eq!(fit.r2, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn interp_clamps_and_interpolates() {
        let g = [0.0, 1.0, 3.0];
        let v = [0.0, 2.0, 2.0];
        assert_eq!(interp(&g, &v, -1.0), 0.0);
        assert_eq!(interp(&g, &v, 5.0), 2.0);
        assert_relative_eq!(interp(&g, &v, 0.5), 1.0);
        assert_relative_eq!(interp(&g, &v, 2.0), 2.0);
    }

    #[test]
    fn normal_cdf_matches_known_values() {
        assert_relative_eq!(normal_cdf(0.0), 0.5, epsilon = 1e-9);
        assert_relative_eq!(normal_cdf(1.96), 0.9750021, epsilon = 1e-5);
        assert_relative_eq!(normal_cdf(-1.0), 0.1586553, epsilon = 1e-5);
    }

    #[test]
    fn kolmogorov_tail_reference_value() {
        // Q(1.36) ~ 0.049, the classic 5% critical point.
        let q = kolmogorov_q(1.36);
        assert!((q - 0.049).abs() < 0.002, "q = {q}");
    }
}
