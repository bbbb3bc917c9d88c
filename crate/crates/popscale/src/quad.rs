//! Gauss-Legendre quadrature with adaptive interval subdivision.

use crate::error::{Error, Result};

/// Nodes and weights of the `n`-point Gauss-Legendre rule on [-1, 1].
///
/// Computed by Newton iteration on the Legendre recurrence; accurate to
/// machine precision for the orders used here.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 2);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Chebyshev-based initial guess.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // Legendre P_n(x) and its derivative by recurrence.
            let mut p0 = 1.0;
            let mut p1 = x;
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Fixed 16-point Gauss-Legendre estimate of `∫_a^b f`.
fn gl16(f: &dyn Fn(f64) -> f64, a: f64, b: f64, rule: &(Vec<f64>, Vec<f64>)) -> f64 {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut acc = 0.0;
    for (x, w) in rule.0.iter().zip(rule.1.iter()) {
        acc += w * f(c + h * x);
    }
    acc * h
}

const REL_TOL: f64 = 1e-10;
const MAX_DEPTH: usize = 40;

fn adapt(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    whole: f64,
    depth: usize,
    scale: f64,
    rule: &(Vec<f64>, Vec<f64>),
    component: &str,
) -> Result<f64> {
    let mid = 0.5 * (a + b);
    let left = gl16(f, a, mid, rule);
    let right = gl16(f, mid, b, rule);
    let refined = left + right;
    if !refined.is_finite() {
        return Err(Error::quadrature(component, format!("non-finite value on [{a}, {b}]")));
    }
    if (refined - whole).abs() <= REL_TOL * (scale + refined.abs()) {
        return Ok(refined);
    }
    if depth >= MAX_DEPTH {
        return Err(Error::quadrature(
            component,
            format!("no convergence after {MAX_DEPTH} subdivisions on [{a}, {b}]"),
        ));
    }
    let l = adapt(f, a, mid, left, depth + 1, scale, rule, component)?;
    let r = adapt(f, mid, b, right, depth + 1, scale, rule, component)?;
    Ok(l + r)
}

/// Adaptive Gauss-Legendre integral of `f` over `[a, b]`.
///
/// Subdivides until successive refinements agree to `1e-10` relative;
/// `component` names the integrand in failure reports.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, component: &str) -> Result<f64> {
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::quadrature(component, "non-finite integration bounds"));
    }
    if a == b {
        return Ok(0.0);
    }
    let rule = gauss_legendre(16);
    let f_ref: &dyn Fn(f64) -> f64 = &f;
    let whole = gl16(f_ref, a, b, &rule);
    if !whole.is_finite() {
        return Err(Error::quadrature(component, "non-finite initial estimate"));
    }
    let scale = whole.abs().max(1e-300);
    adapt(f_ref, a, b, whole, 0, scale, &rule, component)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomials_are_exact() {
        let v = integrate(|x| x * x * x - 2.0 * x + 4.0, -1.0, 3.0, "poly").unwrap();
        // ∫ = x^4/4 - x^2 + 4x
        let exact = (81.0 / 4.0 - 9.0 + 12.0) - (0.25 - 1.0 - 4.0);
        assert!((v - exact).abs() < 1e-12);
    }

    #[test]
    fn exp_kernels_converge() {
        let v = integrate(|x| (-x).exp(), 0.0, 20.0, "exp").unwrap();
        assert!((v - (1.0 - (-20.0f64).exp())).abs() < 1e-10);
    }

    #[test]
    fn narrow_spike_requires_subdivision() {
        let v = integrate(|x: f64| (-(x * x) * 1e4).exp(), -1.0, 1.0, "spike").unwrap();
        let exact = (std::f64::consts::PI / 1e4).sqrt();
        assert!((v - exact).abs() / exact < 1e-9);
    }

    #[test]
    fn gl_nodes_match_known_values() {
        let (x, w) = gauss_legendre(5);
        assert!((x[2]).abs() < 1e-15);
        assert!((w[2] - 128.0 / 225.0).abs() < 1e-14);
        assert!((x[4] - 0.906179845938664).abs() < 1e-13);
    }
}
