//! Wright-Fisher chain with selection in an i.i.d. random environment, its
//! rescaled transition characteristics, the limiting generator values, and
//! the limiting SDE specification.
//!
//! The chain couples the population fraction with the environment random
//! walk: each generation draws one environment value `e`, resamples the
//! population as Binomial(N, p(z, e)) and adds `e` to the walk.

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::levy::{EnvFamily, EnvSampler, LevyTriplet};
use crate::sde::{CoordPolicy, JumpSourceSpec, SdeSpec};
use crate::testfn::TestFunction;

// ---------------------------------------------------------------------------
// Selection functions
// ---------------------------------------------------------------------------

/// Selection probability p(z, w) on [0,1] x (-1, ∞) with p(z, 0) = z.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SelectionFn {
    /// p(z, w) = z(1+w) / (z(1+w) + 1 - z): the environment acts as a
    /// selection factor on the focal allele.
    Example,
    /// p(z, w) = z(1+w)^gamma / (z(1+w)^gamma + 1 - z).
    Power { gamma: f64 },
}

impl SelectionFn {
    pub fn eval(&self, z: f64, w: f64) -> f64 {
        match *self {
            SelectionFn::Example => {
                let a = z * (1.0 + w);
                a / (a + 1.0 - z)
            }
            SelectionFn::Power { gamma } => {
                let a = z * (1.0 + w).powf(gamma);
                a / (a + 1.0 - z)
            }
        }
    }

    /// ∂p/∂w at w = 0.
    pub fn dw(&self, z: f64) -> f64 {
        match *self {
            SelectionFn::Example => z * (1.0 - z),
            SelectionFn::Power { gamma } => gamma * z * (1.0 - z),
        }
    }

    /// ∂²p/∂w² at w = 0.
    pub fn dww(&self, z: f64) -> f64 {
        match *self {
            SelectionFn::Example => -2.0 * z * z * (1.0 - z),
            SelectionFn::Power { gamma } => {
                gamma * (gamma - 1.0) * z * (1.0 - z) - 2.0 * gamma * gamma * z * z * (1.0 - z)
            }
        }
    }

    pub fn monotone_in_z(&self) -> bool {
        match *self {
            SelectionFn::Example => true,
            SelectionFn::Power { gamma } => gamma >= 0.0,
        }
    }
}

// ---------------------------------------------------------------------------
// The discrete model
// ---------------------------------------------------------------------------

/// Wright-Fisher model at scale N (time scale v_N = N).
#[derive(Clone, Debug)]
pub struct WfModel {
    pub n: u64,
    pub selection: SelectionFn,
    pub env: EnvFamily,
    pub z0: f64,
}

impl WfModel {
    pub fn new(n: u64, selection: SelectionFn, env: EnvFamily, z0: f64) -> Self {
        WfModel { n, selection, env, z0 }
    }

    /// Prepares the per-N environment sampler.
    pub fn prepare(&self) -> Result<WfSim> {
        Ok(WfSim { n: self.n, selection: self.selection, env: self.env.sampler(self.n)?, z0: self.z0 })
    }
}

/// Immutable ready-to-run simulator; safe to share across workers.
#[derive(Clone, Debug)]
pub struct WfSim {
    pub n: u64,
    pub selection: SelectionFn,
    pub env: EnvSampler,
    pub z0: f64,
}

/// Slack distinguishing floating-point rounding from modeling errors in p.
const P_SLACK: f64 = 1e-12;

impl WfSim {
    fn success_prob(&self, z: f64, e: f64) -> Result<f64> {
        let p = self.selection.eval(z, e);
        if !(-P_SLACK..=1.0 + P_SLACK).contains(&p) {
            return Err(Error::Contract(format!(
                "selection probability p({z}, {e}) = {p} outside [0,1]"
            )));
        }
        Ok(p.clamp(0.0, 1.0))
    }

    /// One generation from fraction `z` (Nz integral): draws the environment
    /// and the binomial resampling; returns (z', e).
    pub fn step(&self, z: f64, rng: &mut impl Rng) -> Result<(f64, f64)> {
        debug_assert!((z * self.n as f64 - (z * self.n as f64).round()).abs() < 1e-6);
        let e = self.env.draw(rng);
        let p = self.success_prob(z, e)?;
        let k = Binomial::new(self.n, p)
            .map_err(|err| Error::Contract(format!("binomial: {err}")))?
            .sample(rng);
        Ok((k as f64 / self.n as f64, e))
    }

    /// Path of (Z_{[Nt]}/N, S_{[Nt]}) recorded at the requested grid times.
    pub fn simulate(&self, t_grid: &[f64], rng: &mut impl Rng) -> Result<WfPath> {
        let n = self.n as f64;
        let horizon = *t_grid.last().unwrap_or(&0.0);
        let steps = (n * horizon).floor() as u64;
        let mut z = (self.z0 * n).round() / n;
        let mut s = 0.0;
        let mut out_z = Vec::with_capacity(t_grid.len());
        let mut out_s = Vec::with_capacity(t_grid.len());
        let mut grid_idx = 0;
        for k in 0..=steps {
            while grid_idx < t_grid.len() && (n * t_grid[grid_idx]).floor() as u64 == k {
                out_z.push(z);
                out_s.push(s);
                grid_idx += 1;
            }
            if k == steps {
                break;
            }
            let (z2, e) = self.step(z, rng)?;
            z = z2;
            s += e;
        }
        while grid_idx < t_grid.len() {
            out_z.push(z);
            out_s.push(s);
            grid_idx += 1;
        }
        Ok(WfPath { t: t_grid.to_vec(), z: out_z, s: out_s })
    }

    /// Full-resolution run recording every generation and the environment
    /// stream (used by the coupling check and replay).
    pub fn simulate_recorded(&self, steps: u64, rng: &mut impl Rng) -> Result<(Vec<f64>, Vec<f64>)> {
        let n = self.n as f64;
        let mut z = (self.z0 * n).round() / n;
        let mut zs = Vec::with_capacity(steps as usize + 1);
        let mut es = Vec::with_capacity(steps as usize);
        zs.push(z);
        for _ in 0..steps {
            let (z2, e) = self.step(z, rng)?;
            z = z2;
            zs.push(z);
            es.push(e);
        }
        Ok((zs, es))
    }

    /// Replays the population path from a recorded environment stream using
    /// a caller-supplied reproduction RNG.
    pub fn replay(&self, envs: &[f64], rng: &mut impl Rng) -> Result<Vec<f64>> {
        let n = self.n as f64;
        let mut z = (self.z0 * n).round() / n;
        let mut zs = Vec::with_capacity(envs.len() + 1);
        zs.push(z);
        for &e in envs {
            let p = self.success_prob(z, e)?;
            let k = Binomial::new(self.n, p)
                .map_err(|err| Error::Contract(format!("binomial: {err}")))?
                .sample(rng);
            z = k as f64 / n;
            zs.push(z);
        }
        Ok(zs)
    }
}

#[derive(Clone, Debug)]
pub struct WfPath {
    pub t: Vec<f64>,
    pub z: Vec<f64>,
    pub s: Vec<f64>,
}

/// Free-function form of one generation (convenience wrapper).
pub fn wf_step(model: &WfModel, z: f64, rng: &mut impl Rng) -> Result<(f64, f64)> {
    model.prepare()?.step(z, rng)
}

// ---------------------------------------------------------------------------
// Characteristics
// ---------------------------------------------------------------------------

/// Estimation mode for the rescaled characteristic G^N.
#[derive(Clone, Copy, Debug)]
pub enum GnMode {
    /// Plain Monte Carlo over full transitions.
    FullMc { m: usize },
    /// Exact in the reproduction randomness; Monte Carlo over the
    /// environment only.
    EnvOnly { m_env: usize },
    /// Exact in the reproduction randomness; environment integrated by
    /// quadrature over the sampler's mixture law (zero-variance evaluation
    /// of the exact prelimit characteristic).
    EnvExact,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

/// Reproduction-exact integrand of G^N at environment value `e`:
/// N (1 - [e^{-k(1-z)/N} p + e^{kz/N} (1-p)]^N e^{-l e}), p = p(z, e).
fn gn_env_integrand(sim: &WfSim, z: f64, k: f64, ell: f64, e: f64) -> f64 {
    let n = sim.n as f64;
    let p = sim.selection.eval(z, e).clamp(0.0, 1.0);
    let inner = (-k * (1.0 - z) / n).exp() * p + (k * z / n).exp() * (1.0 - p);
    n * (1.0 - inner.powf(n) * (-ell * e).exp())
}

/// Rescaled characteristic G^N_x(H_{k,l}) = N E[H(F^N_x - x)] of the WF
/// chain at x = (z, y).
pub fn g_n_wf(
    sim: &WfSim,
    z: f64,
    h: &TestFunction,
    mode: GnMode,
    rng: &mut impl Rng,
) -> Result<Estimate> {
    let (k, ell) = match *h {
        TestFunction::Wf { k, ell } => (k as f64, ell),
        _ => return Err(Error::Contract("g_n_wf requires a WF-family test function".into())),
    };
    h.validate()?;
    let n = sim.n as f64;
    match mode {
        GnMode::FullMc { m } => {
            let mut sum = 0.0;
            let mut sumsq = 0.0;
            for _ in 0..m {
                let (z2, e) = sim.step(z, rng)?;
                let v = n * h.eval([z2 - z, e]);
                sum += v;
                sumsq += v * v;
            }
            let mean = sum / m as f64;
            let var = (sumsq / m as f64 - mean * mean).max(0.0);
            Ok(Estimate { value: mean, stderr: (var / m as f64).sqrt() })
        }
        GnMode::EnvOnly { m_env } => {
            let mut sum = 0.0;
            let mut sumsq = 0.0;
            for _ in 0..m_env {
                let e = sim.env.draw(rng);
                let v = gn_env_integrand(sim, z, k, ell, e);
                sum += v;
                sumsq += v * v;
            }
            let mean = sum / m_env as f64;
            let var = (sumsq / m_env as f64 - mean * mean).max(0.0);
            Ok(Estimate { value: mean, stderr: (var / m_env as f64).sqrt() })
        }
        GnMode::EnvExact => {
            let value = sim.env.expect(|e| gn_env_integrand(sim, z, k, ell, e))?;
            Ok(Estimate { value, stderr: 0.0 })
        }
    }
}

// ---------------------------------------------------------------------------
// Limiting generator
// ---------------------------------------------------------------------------

/// A function g(z, w) with g(z, 0) = 0 together with its w-partials at 0.
pub trait EnvTestFn {
    fn eval(&self, z: f64, w: f64) -> f64;
    fn dw(&self, z: f64) -> f64;
    fn dww(&self, z: f64) -> f64;
}

/// A_{k,l}(z, w) = 1 - exp(-k (p(z,w) - z) - l w).
pub struct AklFn {
    pub selection: SelectionFn,
    pub k: f64,
    pub ell: f64,
}

impl EnvTestFn for AklFn {
    fn eval(&self, z: f64, w: f64) -> f64 {
        let p = self.selection.eval(z, w);
        1.0 - (-self.k * (p - z) - self.ell * w).exp()
    }

    fn dw(&self, z: f64) -> f64 {
        self.k * self.selection.dw(z) + self.ell
    }

    fn dww(&self, z: f64) -> f64 {
        let first = self.k * self.selection.dw(z) + self.ell;
        self.k * self.selection.dww(z) - first * first
    }
}

/// B_z(g) = alpha g_w(z,0) + (beta/2) g_ww(z,0) + ∫ ĝ(z,w) ν(dw) with
/// ĝ = g - h g_w(z,0) - (h²/2) g_ww(z,0).
pub fn b_z(g: &dyn EnvTestFn, z: f64, triplet: &LevyTriplet) -> Result<f64> {
    let h = triplet.truncation;
    let dw = g.dw(z);
    let dww = g.dww(z);
    let jump = triplet.nu.integrate(|w| {
        let hw = h.eval(w);
        g.eval(z, w) - hw * dw - 0.5 * hw * hw * dww
    })?;
    Ok(triplet.alpha * dw + 0.5 * triplet.beta()? * dww + jump)
}

/// Limiting characteristic G_x(H_{k,l}) = B_z(A_{k,l}) - (k²/2) z(1-z).
pub fn g_limit_wf(z: f64, h: &TestFunction, triplet: &LevyTriplet, selection: SelectionFn) -> Result<f64> {
    let (k, ell) = match *h {
        TestFunction::Wf { k, ell } => (k as f64, ell),
        _ => return Err(Error::Contract("g_limit_wf requires a WF-family test function".into())),
    };
    let a = AklFn { selection, k, ell };
    Ok(b_z(&a, z, triplet)? - 0.5 * k * k * z * (1.0 - z))
}

/// Which form of the environment-induced drift to use. The lemma-derived
/// form carries (beta_E/2) ∂²p/∂w² with the fully compensated integrand;
/// the displayed statement carries (sigma_E/2) ∂²p/∂w² with the plain
/// integrand. They disagree unless sigma_E = sigma_E²; the lemma form is
/// the default, the display form is a compatibility switch.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftConvention {
    #[default]
    LemmaBeta,
    DisplaySigma,
}

/// Drift b1(z) of the limiting population SDE.
pub fn b1_wf(
    z: f64,
    triplet: &LevyTriplet,
    selection: SelectionFn,
    convention: DriftConvention,
) -> Result<f64> {
    let h = triplet.truncation;
    let dw = selection.dw(z);
    let dww = selection.dww(z);
    match convention {
        DriftConvention::LemmaBeta => {
            let jump = triplet.nu.integrate(|w| {
                let hw = h.eval(w);
                selection.eval(z, w) - z - hw * dw - 0.5 * hw * hw * dww
            })?;
            Ok(triplet.alpha * dw + 0.5 * triplet.beta()? * dww + jump)
        }
        DriftConvention::DisplaySigma => {
            let jump = triplet.nu.integrate(|w| selection.eval(z, w) - z - h.eval(w) * dw)?;
            Ok(triplet.alpha * dw + 0.5 * triplet.sigma * dww + jump)
        }
    }
}

/// Closed-form drift for the example selection:
/// alpha z(1-z) - sigma² z²(1-z) + ∫ (w z(1-z)/(1+wz) - h(w) z(1-z)) ν(dw).
pub fn b1_example(z: f64, triplet: &LevyTriplet) -> Result<f64> {
    let h = triplet.truncation;
    let jump = triplet
        .nu
        .integrate(|w| w * z * (1.0 - z) / (1.0 + w * z) - h.eval(w) * z * (1.0 - z))?;
    Ok(triplet.alpha * z * (1.0 - z) - triplet.sigma * triplet.sigma * z * z * (1.0 - z) + jump)
}

// ---------------------------------------------------------------------------
// Limiting SDE specification
// ---------------------------------------------------------------------------

/// Builds the 2-dimensional limiting SDE for (Z, Y).
///
/// Noise channels: (B^D, B^E_eff) where the E-channel folds sub-eps
/// environment jumps into the Brownian coefficient (shared between Z and Y).
/// Jumps of size > eps are simulated exactly; their compensator moves into
/// the drift.
pub fn wf_limit_sde_spec(triplet: &LevyTriplet, selection: SelectionFn, eps: f64) -> Result<SdeSpec> {
    let lambda = triplet.nu.integrate_tail(eps, |_| 1.0)?;
    if !lambda.is_finite() {
        return Err(Error::config("env.nu", "jump mass above eps is not finite"));
    }
    let h = triplet.truncation;
    let comp_h = triplet.nu.integrate_tail(eps, |w| h.eval(w))?;
    let small_var = triplet.nu.integrate_core(eps, |w| w * w)?;
    let sigma_eff = (triplet.sigma * triplet.sigma + small_var).sqrt();
    let alpha_eff = triplet.alpha - comp_h;

    let trip = triplet.clone();
    let sel = selection;
    let drift = move |x: &[f64], out: &mut [f64]| {
        let z = x[0].clamp(0.0, 1.0);
        let b1 = b1_wf(z, &trip, sel, DriftConvention::LemmaBeta).unwrap_or(f64::NAN);
        let comp_jump = trip.nu.integrate_tail(eps, |w| sel.eval(z, w) - z).unwrap_or(f64::NAN);
        out[0] = b1 - comp_jump;
        out[1] = alpha_eff;
    };
    let sel2 = selection;
    let diffusion = move |x: &[f64], out: &mut [f64]| {
        let z = x[0].clamp(0.0, 1.0);
        // rows: Z = (sqrt(z(1-z)), sigma_eff p_w(z,0)), Y = (0, sigma_eff)
        out[0] = (z * (1.0 - z)).max(0.0).sqrt();
        out[1] = sigma_eff * sel2.dw(z);
        out[2] = 0.0;
        out[3] = sigma_eff;
    };

    let mut jumps = Vec::new();
    if lambda > 0.0 {
        let sel3 = selection;
        jumps.push(JumpSourceSpec {
            name: "env".to_string(),
            intensity: std::sync::Arc::new(move |_x: &[f64]| lambda),
            mark: crate::sde::mark_from_measure(&triplet.nu, eps)?,
            apply: std::sync::Arc::new(move |x: &[f64], w: f64, dx: &mut [f64]| {
                let z = x[0].clamp(0.0, 1.0);
                dx[0] = sel3.eval(z, w) - z;
                dx[1] = w;
            }),
        });
    }

    Ok(SdeSpec {
        dim: 2,
        noise_dim: 2,
        drift: std::sync::Arc::new(drift),
        diffusion: std::sync::Arc::new(diffusion),
        jumps,
        domain: vec![CoordPolicy::Clamp { lo: 0.0, hi: 1.0 }, CoordPolicy::Free],
        explosion: None,
        discarded_jump_var: small_var,
    })
}
