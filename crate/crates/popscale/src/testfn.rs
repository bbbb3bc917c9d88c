//! Convergence-determining test-function families on the increment space
//! [-1,1] x (-1, ∞), their second-order decomposition coefficients relative
//! to a truncation pair, and the alternating binomial identities used by the
//! limiting-generator closed forms.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::levy::{TruncKind, TruncationFn};

/// f_z(u) = 1 - e^{-zu}.
pub fn f_z(z: f64, u: f64) -> f64 {
    -(-z * u).exp_m1()
}

/// Member of one of the three test-function families.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum TestFunction {
    /// H(u, w) = 1 - e^{-k u - l w}.
    Wf { k: u32, ell: f64 },
    /// H(v, w) = v^k e^{-l w}, k >= 1.
    CsbpKl { k: u32, ell: f64 },
    /// H(v, w) = 1 - e^{-l w}, l >= 1.
    CsbpL { ell: f64 },
}

impl TestFunction {
    pub fn eval(&self, u: [f64; 2]) -> f64 {
        match *self {
            TestFunction::Wf { k, ell } => 1.0 - (-(k as f64) * u[0] - ell * u[1]).exp(),
            TestFunction::CsbpKl { k, ell } => u[0].powi(k as i32) * (-ell * u[1]).exp(),
            TestFunction::CsbpL { ell } => 1.0 - (-ell * u[1]).exp(),
        }
    }

    /// Uniform bound of |H| on the increment space [-1,1] x (-1, ∞):
    /// 1 + e^ell for the CSBP families, 1 + e^{k+ell} for the WF family
    /// (the exponent can reach k + ell at the corner u = -1, w = -1).
    pub fn bound(&self) -> f64 {
        match *self {
            TestFunction::Wf { k, ell } => 1.0 + (k as f64 + ell).exp(),
            TestFunction::CsbpKl { ell, .. } | TestFunction::CsbpL { ell } => 1.0 + ell.exp(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            TestFunction::Wf { k, ell } => {
                if k == 0 && ell == 0.0 {
                    return Err(Error::Contract("WF test function requires (k, ell) != (0, 0)".into()));
                }
                if ell < 0.0 {
                    return Err(Error::Contract("ell must be nonnegative".into()));
                }
            }
            TestFunction::CsbpKl { k, ell } => {
                if k == 0 {
                    return Err(Error::Contract("CSBP H_{k,l} requires k >= 1".into()));
                }
                if ell < 0.0 {
                    return Err(Error::Contract("ell must be nonnegative".into()));
                }
            }
            TestFunction::CsbpL { ell } => {
                if ell < 1.0 {
                    return Err(Error::Contract("CSBP H_l requires ell >= 1".into()));
                }
            }
        }
        Ok(())
    }
}

/// Coefficients of the unique decomposition
/// H = Σ alpha_i h0^i + Σ beta_{ij} h0^i h0^j + remainder, remainder = o(|u|²).
#[derive(Clone, Debug)]
pub struct DecompositionCoeffs {
    pub alpha: [f64; 2],
    pub beta: [[f64; 2]; 2],
    h: TestFunction,
    h0_env: TruncationFn,
}

impl DecompositionCoeffs {
    /// h0(u) for the model's truncation pair: (u, h_E(w)).
    pub fn h0(&self, u: [f64; 2]) -> [f64; 2] {
        [u[0], self.h0_env.eval(u[1])]
    }

    /// Second-order principal part Σ alpha h0 + Σ beta h0 h0.
    pub fn principal(&self, u: [f64; 2]) -> f64 {
        let h0 = self.h0(u);
        let mut acc = 0.0;
        for i in 0..2 {
            acc += self.alpha[i] * h0[i];
            for j in 0..2 {
                acc += self.beta[i][j] * h0[i] * h0[j];
            }
        }
        acc
    }

    /// Remainder H - principal; o(|u|²) near the origin.
    pub fn remainder(&self, u: [f64; 2]) -> f64 {
        self.h.eval(u) - self.principal(u)
    }
}

/// Closed-form decomposition coefficients of `h` relative to the truncation
/// pair h0(u, w) = (u, h_E(w)).
///
/// The coefficients are the Taylor coefficients of H at the origin because
/// h0 equals the identity near 0.
pub fn decompose(h: &TestFunction, h_env: &TruncationFn) -> Result<DecompositionCoeffs> {
    h.validate()?;
    if h_env.kind == TruncKind::ClampPos {
        return Err(Error::Contract(
            "environment truncation must be defined on (-1, inf); got a positive-support clamp".into(),
        ));
    }
    let (alpha, beta) = match *h {
        TestFunction::Wf { k, ell } => {
            let k = k as f64;
            ([k, ell], [[-k * k / 2.0, -k * ell / 2.0], [-k * ell / 2.0, -ell * ell / 2.0]])
        }
        TestFunction::CsbpKl { k: 1, ell } => ([1.0, 0.0], [[0.0, -ell / 2.0], [-ell / 2.0, 0.0]]),
        TestFunction::CsbpKl { k: 2, .. } => ([0.0, 0.0], [[1.0, 0.0], [0.0, 0.0]]),
        TestFunction::CsbpKl { .. } => ([0.0, 0.0], [[0.0; 2]; 2]),
        TestFunction::CsbpL { ell } => ([0.0, ell], [[0.0, 0.0], [0.0, -ell * ell / 2.0]]),
    };
    Ok(DecompositionCoeffs { alpha, beta, h: *h, h0_env: *h_env })
}

/// Finite-difference extraction of the same coefficients (gradient and half
/// Hessian of H at 0), with Richardson extrapolation. Guards the closed
/// forms in tests.
pub fn decompose_numeric(h: &TestFunction) -> ([f64; 2], [[f64; 2]; 2]) {
    let step = 1e-5;
    let eval = |u: f64, w: f64| h.eval([u, w]);
    let grad1 = |h1: f64, dim: usize| {
        let e = |s: f64| if dim == 0 { eval(s, 0.0) } else { eval(0.0, s) };
        (8.0 * (e(h1) - e(-h1)) - (e(2.0 * h1) - e(-2.0 * h1))) / (12.0 * h1)
    };
    let second = |h1: f64, dim: usize| {
        let e = |s: f64| if dim == 0 { eval(s, 0.0) } else { eval(0.0, s) };
        let d = |s: f64| (e(s) - 2.0 * e(0.0) + e(-s)) / (s * s);
        (4.0 * d(h1) - d(2.0 * h1)) / 3.0
    };
    let cross = |h1: f64| {
        let d = |s: f64| (eval(s, s) - eval(s, -s) - eval(-s, s) + eval(-s, -s)) / (4.0 * s * s);
        (4.0 * d(h1) - d(2.0 * h1)) / 3.0
    };
    let alpha = [grad1(step, 0), grad1(step, 1)];
    let b11 = 0.5 * second(step, 0);
    let b22 = 0.5 * second(step, 1);
    let b12 = 0.5 * cross(step);
    (alpha, [[b11, b12], [b12, b22]])
}

// ---------------------------------------------------------------------------
// Alternating binomial identities
// ---------------------------------------------------------------------------

/// Which alternating-sum identity to evaluate:
/// Σ_j C(k,j) (-1)^{k-j} * { j, j², f_j(u), f_{jz+l}(u) }.
#[derive(Clone, Copy, Debug)]
pub enum IdentityKind {
    I1,
    I2,
    I3 { u: f64 },
    I4 { u: f64, z: f64, ell: f64 },
}

pub const BINOMIAL_K_CAP: u32 = 12;

pub(crate) fn binom(k: u32, j: u32) -> f64 {
    let mut out: u128 = 1;
    for i in 0..j.min(k - j) {
        out = out * (k - i) as u128 / (i + 1) as u128;
    }
    out as f64
}

fn term(kind: IdentityKind, j: u32) -> f64 {
    match kind {
        IdentityKind::I1 => j as f64,
        IdentityKind::I2 => (j as f64) * (j as f64),
        IdentityKind::I3 { u } => f_z(j as f64, u),
        IdentityKind::I4 { u, z, ell } => f_z(j as f64 * z + ell, u),
    }
}

fn direct_sum(kind: IdentityKind, k: u32) -> f64 {
    // Neumaier compensation: the alternating sum cancels catastrophically.
    let mut sum = 0.0;
    let mut c = 0.0;
    for j in 0..=k {
        let sign = if (k - j) % 2 == 0 { 1.0 } else { -1.0 };
        let v = sign * binom(k, j) * term(kind, j);
        let t = sum + v;
        if sum.abs() >= v.abs() {
            c += (sum - t) + v;
        } else {
            c += (v - t) + sum;
        }
        sum = t;
    }
    sum + c
}

/// Direct evaluation of the left-hand alternating sum. `k` is capped at 12
/// by default (binomial coefficients and cancellation stay exact in f64);
/// use [`binomial_sum_direct_unchecked`] to opt in to larger `k`.
pub fn binomial_sum_direct(kind: IdentityKind, k: u32) -> Result<f64> {
    if k > BINOMIAL_K_CAP {
        return Err(Error::Contract(format!(
            "k = {k} exceeds the default cap {BINOMIAL_K_CAP}; use the unchecked variant"
        )));
    }
    Ok(direct_sum(kind, k))
}

pub fn binomial_sum_direct_unchecked(kind: IdentityKind, k: u32) -> f64 {
    direct_sum(kind, k)
}

/// Closed-form right-hand side of the identity (valid for k >= 1; for k = 0
/// the direct sum value is returned).
pub fn binomial_sum_closed(kind: IdentityKind, k: u32) -> f64 {
    if k == 0 {
        return direct_sum(kind, 0);
    }
    let sign = if k % 2 == 0 { -1.0 } else { 1.0 }; // (-1)^{k+1}
    match kind {
        IdentityKind::I1 => {
            if k == 1 {
                1.0
            } else {
                0.0
            }
        }
        IdentityKind::I2 => match k {
            1 => 1.0,
            2 => 2.0,
            _ => 0.0,
        },
        IdentityKind::I3 { u } => sign * f_z(1.0, u).powi(k as i32),
        IdentityKind::I4 { u, z, ell } => sign * (-ell * u).exp() * f_z(z, u).powi(k as i32),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn env_trunc() -> TruncationFn {
        TruncationFn::clamp_sym(1.0)
    }

    #[test]
    fn wf_coefficients_match_paper_values() {
        let d = decompose(&TestFunction::Wf { k: 3, ell: 2.0 }, &env_trunc()).unwrap();
        assert_eq!(d.alpha, [3.0, 2.0]);
        assert_eq!(d.beta, [[-4.5, -3.0], [-3.0, -2.0]]);
    }

    #[test]
    fn csbp_coefficients_match_paper_values() {
        let d = decompose(&TestFunction::CsbpKl { k: 1, ell: 1.5 }, &env_trunc()).unwrap();
        assert_eq!(d.alpha, [1.0, 0.0]);
        assert_eq!(d.beta, [[0.0, -0.75], [-0.75, 0.0]]);

        let d = decompose(&TestFunction::CsbpKl { k: 2, ell: 1.5 }, &env_trunc()).unwrap();
        assert_eq!(d.alpha, [0.0, 0.0]);
        assert_eq!(d.beta, [[1.0, 0.0], [0.0, 0.0]]);

        let d = decompose(&TestFunction::CsbpKl { k: 3, ell: 1.5 }, &env_trunc()).unwrap();
        assert_eq!(d.alpha, [0.0, 0.0]);
        assert_eq!(d.beta, [[0.0; 2]; 2]);
        // Pure remainder: the remainder IS the function.
        let u = [0.4, 0.2];
        let h = TestFunction::CsbpKl { k: 3, ell: 1.5 };
        assert!((d.remainder(u) - h.eval(u)).abs() < 1e-15);
    }

    #[test]
    fn closed_forms_match_finite_differences() {
        let cases = [
            TestFunction::Wf { k: 1, ell: 0.0 },
            TestFunction::Wf { k: 2, ell: 1.0 },
            TestFunction::Wf { k: 0, ell: 2.5 },
            TestFunction::CsbpKl { k: 1, ell: 2.0 },
            TestFunction::CsbpKl { k: 2, ell: 0.5 },
            TestFunction::CsbpKl { k: 3, ell: 1.0 },
            TestFunction::CsbpKl { k: 4, ell: 0.0 },
            TestFunction::CsbpL { ell: 1.0 },
            TestFunction::CsbpL { ell: 3.0 },
        ];
        for h in cases {
            let d = decompose(&h, &env_trunc()).unwrap();
            let (alpha, beta) = decompose_numeric(&h);
            for i in 0..2 {
                assert!(
                    (d.alpha[i] - alpha[i]).abs() < 1e-6,
                    "{h:?} alpha[{i}]: closed {} vs fd {}",
                    d.alpha[i],
                    alpha[i]
                );
                for j in 0..2 {
                    assert!(
                        (d.beta[i][j] - beta[i][j]).abs() < 1e-6,
                        "{h:?} beta[{i}][{j}]: closed {} vs fd {}",
                        d.beta[i][j],
                        beta[i][j]
                    );
                }
            }
        }
    }

    #[test]
    fn remainder_vanishes_at_second_order() {
        // |remainder(u)| / |u|² -> 0 along a shrinking grid, ratio decreasing
        // like |u| within a factor 10.
        let cases = [
            TestFunction::Wf { k: 2, ell: 1.0 },
            TestFunction::CsbpKl { k: 1, ell: 1.0 },
            TestFunction::CsbpKl { k: 2, ell: 2.0 },
            TestFunction::CsbpL { ell: 2.0 },
        ];
        for h in cases {
            let d = decompose(&h, &env_trunc()).unwrap();
            let dirs = [[1.0, 0.0], [0.0, 1.0], [0.7, -0.7], [-0.6, 0.8]];
            for dir in dirs {
                let mut prev_ratio = f64::INFINITY;
                for m in 2..=4 {
                    let r = 10f64.powi(-m);
                    let u = [dir[0] * r, dir[1] * r];
                    let ratio = d.remainder(u).abs() / (r * r);
                    assert!(
                        ratio <= prev_ratio + 1e-9,
                        "{h:?} dir {dir:?}: ratio not decreasing ({ratio} after {prev_ratio})"
                    );
                    prev_ratio = ratio;
                }
            }
        }
    }

    #[test]
    fn all_families_vanish_at_origin() {
        let cases = [
            TestFunction::Wf { k: 1, ell: 2.0 },
            TestFunction::CsbpKl { k: 2, ell: 1.0 },
            TestFunction::CsbpL { ell: 1.0 },
        ];
        for h in cases {
            assert_eq!(h.eval([0.0, 0.0]), 0.0);
        }
    }

    #[test]
    fn truncation_mismatch_is_an_error() {
        let demo = TruncationFn::clamp_pos(1.0);
        assert!(decompose(&TestFunction::Wf { k: 1, ell: 0.0 }, &demo).is_err());
    }

    #[test]
    fn identity_values_from_kronecker_cases() {
        assert_eq!(binomial_sum_closed(IdentityKind::I1, 1), 1.0);
        assert_eq!(binomial_sum_closed(IdentityKind::I1, 3), 0.0);
        assert_eq!(binomial_sum_closed(IdentityKind::I2, 2), 2.0);
        assert_eq!(binomial_sum_closed(IdentityKind::I2, 1), 1.0);

        // I3, k=3, u=0.7: (−1)^{k+1} = +1, value f_1(0.7)^3.
        let u = 0.7;
        let expect = f_z(1.0, u).powi(3);
        assert!((binomial_sum_closed(IdentityKind::I3 { u }, 3) - expect).abs() < 1e-15);

        // I4, k=2, z=0.5, l=1, u=0.3: -e^{-0.3} f_{0.5}(0.3)².
        let (u, z, ell) = (0.3, 0.5, 1.0);
        let expect = -(-0.3f64).exp() * f_z(z, u).powi(2);
        assert!((binomial_sum_closed(IdentityKind::I4 { u, z, ell }, 2) - expect).abs() < 1e-15);
        // Oracle: brute-force sum over j = 0..2.
        let brute: f64 = (0..=2)
            .map(|j| {
                let sign = if (2 - j) % 2 == 0 { 1.0 } else { -1.0 };
                sign * binom(2, j) * f_z(j as f64 * z + ell, u)
            })
            .sum();
        assert!((binomial_sum_closed(IdentityKind::I4 { u, z, ell }, 2) - brute).abs() < 1e-12);
    }

    #[test]
    fn direct_equals_closed_to_1e12_for_k_up_to_12() {
        // On positive u the values are O(1) and absolute 1e-12 holds; on
        // negative u the terms grow like e^{(kz+l)|u|}, so the comparison is
        // relative to the value magnitude (f64 resolution).
        let us = [-0.9, -0.5, -0.1, 0.1, 0.3, 0.7, 1.3, 2.0, 3.5, 5.0];
        let zs = [0.1, 0.5, 1.0, 2.0];
        let ells = [0.0, 0.5, 1.0, 2.0];
        for k in 1..=BINOMIAL_K_CAP {
            assert!(
                (binomial_sum_direct(IdentityKind::I1, k).unwrap()
                    - binomial_sum_closed(IdentityKind::I1, k))
                .abs()
                    < 1e-12
            );
            assert!(
                (binomial_sum_direct(IdentityKind::I2, k).unwrap()
                    - binomial_sum_closed(IdentityKind::I2, k))
                .abs()
                    < 1e-12
            );
            for &u in &us {
                let kind = IdentityKind::I3 { u };
                let max_term = (0..=k)
                    .map(|j| (binom(k, j) * f_z(j as f64, u)).abs())
                    .fold(0.0f64, f64::max);
                let tol = if u > 0.0 { 1e-12 } else { 1e-12 * (1.0 + max_term) };
                assert!(
                    (binomial_sum_direct(kind, k).unwrap() - binomial_sum_closed(kind, k)).abs() < tol,
                    "I3 k={k} u={u}"
                );
                for &z in &zs {
                    for &ell in &ells {
                        let kind = IdentityKind::I4 { u, z, ell };
                        let d = binomial_sum_direct(kind, k).unwrap();
                        let c = binomial_sum_closed(kind, k);
                        // Cancellation floor: the sum is exact only relative
                        // to the largest term entering it.
                        let max_term = (0..=k)
                            .map(|j| (binom(k, j) * f_z(j as f64 * z + ell, u)).abs())
                            .fold(0.0f64, f64::max);
                        let tol = if u > 0.0 { 1e-12 } else { 1e-12 * (1.0 + max_term) };
                        assert!((d - c).abs() < tol, "I4 k={k} u={u} z={z} l={ell}: {d} vs {c}");
                    }
                }
            }
        }
    }

    #[test]
    fn k_cap_enforced() {
        assert!(binomial_sum_direct(IdentityKind::I1, 13).is_err());
        // Unchecked path still evaluates.
        let v = binomial_sum_direct_unchecked(IdentityKind::I1, 13);
        assert!(v.abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn decomposition_reconstructs_pointwise(
            u in -0.99f64..1.0,
            w in -0.9f64..4.0,
            k in 1u32..5,
            ell in 0.0f64..3.0,
        ) {
            for h in [TestFunction::Wf { k, ell }, TestFunction::CsbpKl { k, ell }] {
                let d = decompose(&h, &env_trunc()).unwrap();
                let rebuilt = d.principal([u, w]) + d.remainder([u, w]);
                prop_assert!((rebuilt - h.eval([u, w])).abs() < 1e-12);
            }
        }

        #[test]
        fn families_bounded_on_domain(
            u in -1.0f64..1.0,
            w in -0.99f64..6.0,
            k in 0u32..6,
            ell in 0.0f64..2.5,
        ) {
            let fns = [
                TestFunction::Wf { k: k.max(1), ell },
                TestFunction::CsbpKl { k: k.max(1), ell },
                TestFunction::CsbpL { ell: ell.max(1.0) },
            ];
            for h in fns {
                prop_assert!(h.eval([u, w]).abs() <= h.bound() + 1e-12);
            }
        }
    }
}
