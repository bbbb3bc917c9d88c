//! Generalized Galton-Watson chains with density- and environment-dependent
//! reproduction, their rescaled characteristics, the closed-form limiting
//! generators, and the limiting SDE specifications (pair form on the
//! compactified state and Z form with a cemetery).
//!
//! Population counts are resampled in O(1) per generation: every reproduction
//! law is structured (two-point and three-point parts via binomial counts,
//! heavy-tailed parts via a binomially drawn number of rare events).

use std::sync::Arc;

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::levy::{gamma_dem, gamma_env, EnvFamily, EnvSampler, LevyTriplet, VnRule};
use crate::sde::{CoordPolicy, ExplosionRule, JumpSourceSpec, SdeSpec};
use crate::stats;
use crate::testfn::{binom, f_z, TestFunction};
use crate::wf::Estimate;

// ---------------------------------------------------------------------------
// Interaction functions
// ---------------------------------------------------------------------------

/// Interaction g(z) entering the mean reproduction (cooperation for g > 0,
/// competition for g < 0).
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Interaction {
    Zero,
    /// g(z) = c z^alpha.
    Poly { c: f64, alpha: f64 },
    /// g(z) = c z / (1 + z).
    Bounded { c: f64 },
}

impl Interaction {
    pub fn eval(&self, z: f64) -> f64 {
        match *self {
            Interaction::Zero => 0.0,
            Interaction::Poly { c, alpha } => c * z.powf(alpha),
            Interaction::Bounded { c } => c * z / (1.0 + z),
        }
    }

    /// Checks e^{-z} z g(z) -> 0 on a test grid (drift decay hypothesis).
    pub fn validate_decay(&self) -> Result<()> {
        let tail: Vec<f64> = (40..=60).map(|i| {
            let z = i as f64;
            (-z).exp() * z * self.eval(z).abs()
        }).collect();
        if tail.iter().any(|v| !v.is_finite()) || tail.last().unwrap() > &1e-6 {
            return Err(Error::config("interaction", "e^{-z} z g(z) does not vanish at infinity"));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Reproduction laws
// ---------------------------------------------------------------------------

fn binomial_draw(n: u64, p: f64, rng: &mut impl Rng) -> Result<u64> {
    if n == 0 || p <= 0.0 {
        return Ok(0);
    }
    if p >= 1.0 {
        return Ok(n);
    }
    Ok(Binomial::new(n, p)
        .map_err(|e| Error::Contract(format!("binomial: {e}")))?
        .sample(rng))
}

/// Heavy-tail component: one individual adds round(N r_i) offspring with
/// probability lambda_i / N², targeting the demographic jump measure
/// Σ lambda_i δ_{r_i}.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct HeavyTail {
    pub atoms: Vec<(f64, f64)>,
}

impl HeavyTail {
    fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.1).sum()
    }

    /// Per-individual event probability at scale N.
    pub fn event_prob(&self, n: u64) -> f64 {
        (self.total_mass() / (n as f64 * n as f64)).min(1.0)
    }

    /// Sum of N * Sigma over `pop` individuals, drawn through the number of
    /// rare events.
    fn sample_total(&self, pop: u64, n: u64, rng: &mut impl Rng) -> Result<u128> {
        if self.atoms.is_empty() {
            return Ok(0);
        }
        let q = self.event_prob(n);
        let events = binomial_draw(pop, q, rng)?;
        if events == 0 {
            return Ok(0);
        }
        let total_mass = self.total_mass();
        let mut acc: u128 = 0;
        for _ in 0..events {
            let mut u = rng.random::<f64>() * total_mass;
            let mut chosen = self.atoms.len() - 1;
            for (i, a) in self.atoms.iter().enumerate() {
                if u < a.1 {
                    chosen = i;
                    break;
                }
                u -= a.1;
            }
            acc += (n as f64 * self.atoms[chosen].0).round() as u128;
        }
        Ok(acc)
    }

    /// Per-individual Laplace factor E[e^{-(j/N) round(N Sigma)}].
    fn laplace(&self, j: f64, n: u64) -> f64 {
        if self.atoms.is_empty() {
            return 1.0;
        }
        let n2 = n as f64 * n as f64;
        let mut acc = 1.0 - self.event_prob(n);
        let total = self.total_mass();
        for &(r, lam) in &self.atoms {
            let units = (n as f64 * r).round();
            acc += (lam / n2).min(lam / total) * (-j / n as f64 * units).exp();
        }
        acc
    }

    /// h_D-mean of the targeted measure, Σ lambda_i h_D(r_i); compensated
    /// into the deterministic part of the mean so the law's demographic
    /// drift w.r.t. h_D equals the declared alpha_D.
    fn h_mean(&self, h_bound: f64) -> f64 {
        self.atoms.iter().map(|&(r, lam)| lam * r.min(h_bound)).sum()
    }
}

/// Reproduction law from the explicit two-point construction: each
/// individual begets A(n, e) ∈ {⌊m⌋, ⌊m⌋+1} with mean
/// m = 1 + g_N(n/N)/N + alpha_c/N + e, plus a heavy-tailed N Sigma part.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AppendixRepro {
    pub interaction: Interaction,
    /// Demographic drift of the law w.r.t. h_D (sigma_D = 0 here).
    pub alpha_d: f64,
    pub heavy: HeavyTail,
    /// Bound of the demographic truncation h_D(r) = min(r, bound).
    #[serde(default = "default_h_bound")]
    pub h_bound: f64,
}

fn default_h_bound() -> f64 {
    1.0
}

impl AppendixRepro {
    /// Constant drift entering the mean; the heavy part contributes
    /// ∫ h_D dν to the triplet, so the mean carries alpha_d - ∫ h_D dν.
    fn alpha_c(&self) -> f64 {
        self.alpha_d - self.heavy.h_mean(self.h_bound)
    }

    /// g_N = g ∧ N^{1/3}.
    fn g_n(&self, z: f64, n: u64) -> f64 {
        self.interaction.eval(z).min((n as f64).powf(1.0 / 3.0))
    }

    pub fn mean(&self, pop: u64, n: u64, e: f64) -> Result<f64> {
        let nf = n as f64;
        let m = 1.0 + self.g_n(pop as f64 / nf, n) / nf + self.alpha_c() / nf + e;
        if m < 0.0 {
            return Err(Error::Contract(format!(
                "appendix reproduction mean {m} < 0 at pop={pop}, N={n}, e={e}"
            )));
        }
        Ok(m)
    }

    fn sample_total(&self, pop: u64, n: u64, e: f64, rng: &mut impl Rng) -> Result<u128> {
        let m = self.mean(pop, n, e)?;
        let floor = m.floor();
        let frac_hi = m - floor;
        let hi_count = binomial_draw(pop, frac_hi, rng)?;
        let a_total = pop as u128 * floor as u128 + hi_count as u128;
        Ok(a_total + self.heavy.sample_total(pop, n, rng)?)
    }

    fn laplace(&self, j: f64, pop: u64, n: u64, e: f64) -> Result<f64> {
        let m = self.mean(pop, n, e)?;
        let floor = m.floor();
        let frac_hi = m - floor;
        let nf = n as f64;
        let lap_a =
            (j / nf).exp() * ((1.0 - frac_hi) * (-j * floor / nf).exp() + frac_hi * (-j * (floor + 1.0) / nf).exp());
        Ok(lap_a * self.heavy.laplace(j, n))
    }
}

/// Plain Galton-Watson base law plus a cooperative Bernoulli boost:
/// L(n) = B + N Sigma + E(n), P(E(n) = 1) = (g(n/N) ∧ v_N) / v_N.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CoopGwRepro {
    pub alpha_d: f64,
    pub sigma_d: f64,
    pub heavy: HeavyTail,
    pub interaction: Interaction,
    #[serde(default = "default_h_bound")]
    pub h_bound: f64,
}

impl CoopGwRepro {
    fn alpha_c(&self) -> f64 {
        self.alpha_d - self.heavy.h_mean(self.h_bound)
    }

    /// Three-point base probabilities (p0, p1, p2) at scale N.
    pub fn base_probs(&self, n: u64) -> Result<(f64, f64, f64)> {
        let a = self.alpha_c() / n as f64;
        let s2 = (self.sigma_d * self.sigma_d).max(a.abs());
        if s2 > 1.0 {
            return Err(Error::Contract(format!("sigma_d² = {s2} > 1 is not a valid three-point law")));
        }
        Ok(((s2 - a) / 2.0, 1.0 - s2, (s2 + a) / 2.0))
    }

    pub fn boost_prob(&self, z: f64, v_n: f64) -> f64 {
        (self.interaction.eval(z).max(0.0)).min(v_n) / v_n
    }

    fn sample_total(&self, pop: u64, n: u64, v_n: f64, rng: &mut impl Rng) -> Result<u128> {
        let (p0, _p1, p2) = self.base_probs(n)?;
        let n0 = binomial_draw(pop, p0, rng)?;
        let n2 = binomial_draw(pop - n0, (p2 / (1.0 - p0)).clamp(0.0, 1.0), rng)?;
        let base = (pop - n0 + n2) as u128;
        let boost = binomial_draw(pop, self.boost_prob(pop as f64 / n as f64, v_n), rng)? as u128;
        Ok(base + boost + self.heavy.sample_total(pop, n, rng)?)
    }

    fn laplace(&self, j: f64, pop: u64, n: u64, v_n: f64) -> Result<f64> {
        let (p0, p1, p2) = self.base_probs(n)?;
        let nf = n as f64;
        let lap_b = p0 * (j / nf).exp() + p1 + p2 * (-j / nf).exp();
        let q = self.boost_prob(pop as f64 / nf, v_n);
        let lap_boost = 1.0 - q + q * (-j / nf).exp();
        Ok(lap_b * lap_boost * self.heavy.laplace(j, n))
    }
}

/// Reproduction on {0, 1, 2} realizing logistic competition and small
/// environmental fluctuations:
/// P(L = 0) = (sigma_D² - e + g_N(n/N))/2, P(L = 2) = (sigma_D² + e - g_N(n/N))/2,
/// g_N(z) = alpha_D/N + c (z/N ∧ 1/sqrt(N)).
///
/// Note the sign routing: +g_N raises the death probability, so the
/// implemented chain has effective demographic drift -alpha_D and effective
/// interaction g_eff(z) = -c z (competition). With alpha_D = 0 its limit is
/// the logistic Feller SDE dZ = -c Z² dt + sigma_E Z dB^E + sigma_D sqrt(Z) dB^D.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LogisticFellerRepro {
    pub sigma_d: f64,
    pub alpha_d: f64,
    pub c: f64,
}

impl LogisticFellerRepro {
    fn g_n(&self, z: f64, n: u64) -> f64 {
        let nf = n as f64;
        self.alpha_d / nf + self.c * (z / nf).min(1.0 / nf.sqrt())
    }

    pub fn probs(&self, pop: u64, n: u64, e: f64) -> Result<(f64, f64, f64)> {
        let s2 = self.sigma_d * self.sigma_d;
        let g = self.g_n(pop as f64 / n as f64, n);
        let p0 = 0.5 * (s2 - e + g);
        let p2 = 0.5 * (s2 + e - g);
        let p1 = 1.0 - s2;
        const SLACK: f64 = 1e-12;
        for (name, p) in [("P(L=0)", p0), ("P(L=1)", p1), ("P(L=2)", p2)] {
            if !(-SLACK..=1.0 + SLACK).contains(&p) {
                return Err(Error::Contract(format!(
                    "logistic-Feller {name} = {p} outside [0,1] (pop={pop}, N={n}, e={e})"
                )));
            }
        }
        Ok((p0.clamp(0.0, 1.0), p1.clamp(0.0, 1.0), p2.clamp(0.0, 1.0)))
    }

    fn sample_total(&self, pop: u64, n: u64, e: f64, rng: &mut impl Rng) -> Result<u128> {
        let (p0, _p1, p2) = self.probs(pop, n, e)?;
        let n0 = binomial_draw(pop, p0, rng)?;
        let n2 = binomial_draw(pop - n0, (p2 / (1.0 - p0)).clamp(0.0, 1.0), rng)?;
        Ok((pop - n0 + n2) as u128)
    }

    fn laplace(&self, j: f64, pop: u64, n: u64, e: f64) -> Result<f64> {
        let (p0, p1, p2) = self.probs(pop, n, e)?;
        let nf = n as f64;
        Ok(p0 * (j / nf).exp() + p1 + p2 * (-j / nf).exp())
    }

    /// Interaction of the implemented chain entering Assumption-A2 targets.
    pub fn effective_interaction(&self) -> Interaction {
        Interaction::Poly { c: -self.c, alpha: 1.0 }
    }

    /// Demographic triplet of the implemented chain (drift sign flipped by
    /// the death-probability routing of g_N).
    pub fn effective_demo_triplet(&self) -> LevyTriplet {
        LevyTriplet {
            alpha: -self.alpha_d,
            sigma: self.sigma_d,
            truncation: crate::levy::TruncationFn::clamp_pos(1.0),
            nu: crate::levy::JumpMeasure::empty(),
        }
    }
}

/// Per-individual reproduction law L^N(n, e).
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReproLaw {
    /// L ≡ 1 (frozen population; trivial oracle).
    Unit,
    Appendix(AppendixRepro),
    CoopGw(CoopGwRepro),
    LogisticFeller(LogisticFellerRepro),
}

impl ReproLaw {
    /// Total offspring of `pop` individuals in O(1) draws.
    pub fn sample_total(
        &self,
        pop: u64,
        n: u64,
        v_n: f64,
        e: f64,
        rng: &mut impl Rng,
    ) -> Result<u128> {
        if pop == 0 {
            return Ok(0);
        }
        match self {
            ReproLaw::Unit => Ok(pop as u128),
            ReproLaw::Appendix(r) => r.sample_total(pop, n, e, rng),
            ReproLaw::CoopGw(r) => r.sample_total(pop, n, v_n, rng),
            ReproLaw::LogisticFeller(r) => r.sample_total(pop, n, e, rng),
        }
    }

    /// Exact per-individual Laplace transform E[e^{-(j/N)(L(pop, e) - 1)}].
    pub fn laplace(&self, j: f64, pop: u64, n: u64, v_n: f64, e: f64) -> Result<f64> {
        match self {
            ReproLaw::Unit => Ok(1.0),
            ReproLaw::Appendix(r) => r.laplace(j, pop, n, e),
            ReproLaw::CoopGw(r) => r.laplace(j, pop, n, v_n),
            ReproLaw::LogisticFeller(r) => r.laplace(j, pop, n, e),
        }
    }
}

// ---------------------------------------------------------------------------
// The discrete model
// ---------------------------------------------------------------------------

pub const DEFAULT_Z_MAX: f64 = 1e6;

/// Family of branching models across scales N (everything except N itself).
#[derive(Clone, Debug)]
pub struct BpModelSpec {
    pub vn: VnRule,
    pub repro: ReproLaw,
    pub env: EnvFamily,
    pub z0: f64,
    pub z_max: f64,
}

impl BpModelSpec {
    pub fn new(vn: VnRule, repro: ReproLaw, env: EnvFamily, z0: f64) -> Self {
        BpModelSpec { vn, repro, env, z0, z_max: DEFAULT_Z_MAX }
    }

    pub fn at(&self, n: u64) -> BpModel {
        BpModel { n, spec: self.clone() }
    }
}

#[derive(Clone, Debug)]
pub struct BpModel {
    pub n: u64,
    pub spec: BpModelSpec,
}

impl BpModel {
    pub fn prepare(&self) -> Result<BpSim> {
        let mut env = self.spec.env.clone();
        env.vn = self.spec.vn; // the environment scales on the model clock
        let sampler = env.sampler(self.n)?;
        let max_count = (self.spec.z_max * self.n as f64).min(u64::MAX as f64 / 2.0) as u128;
        Ok(BpSim {
            n: self.n,
            v_n: self.spec.vn.eval(self.n),
            repro: self.spec.repro.clone(),
            env: sampler,
            z0: self.spec.z0,
            max_count,
        })
    }
}

/// Outcome of one generation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepOutcome {
    Alive(u64),
    /// Count crossed the explosion threshold (cemetery).
    Exploded,
}

#[derive(Clone, Debug)]
pub struct BpSim {
    pub n: u64,
    pub v_n: f64,
    pub repro: ReproLaw,
    pub env: EnvSampler,
    pub z0: f64,
    pub max_count: u128,
}

#[derive(Clone, Debug)]
pub struct BpPath {
    pub t: Vec<f64>,
    /// Rescaled mass Z/N; +∞ after explosion.
    pub z: Vec<f64>,
    pub s: Vec<f64>,
    pub exploded_at: Option<f64>,
}

impl BpSim {
    /// One generation: draws the environment, sums the offspring of all
    /// `count` individuals, and flags threshold crossings as explosion.
    pub fn step(&self, count: u64, rng: &mut impl Rng) -> Result<(StepOutcome, f64)> {
        let e = self.env.draw(rng);
        let total = self.repro.sample_total(count, self.n, self.v_n, e, rng)?;
        if total > self.max_count {
            return Ok((StepOutcome::Exploded, e));
        }
        Ok((StepOutcome::Alive(total as u64), e))
    }

    /// Path of (Z_{[v_N t]}/N, S_{[v_N t]}) on the grid; after explosion the
    /// mass coordinate is +∞.
    pub fn simulate(&self, t_grid: &[f64], rng: &mut impl Rng) -> Result<BpPath> {
        let horizon = *t_grid.last().unwrap_or(&0.0);
        let steps = (self.v_n * horizon).floor() as u64;
        let mut count = (self.z0 * self.n as f64).round() as u64;
        let mut s = 0.0;
        let mut exploded_at = None;
        let mut out_z = Vec::with_capacity(t_grid.len());
        let mut out_s = Vec::with_capacity(t_grid.len());
        let mut grid_idx = 0;
        for k in 0..=steps {
            while grid_idx < t_grid.len() && (self.v_n * t_grid[grid_idx]).floor() as u64 == k {
                out_z.push(if exploded_at.is_some() {
                    f64::INFINITY
                } else {
                    count as f64 / self.n as f64
                });
                out_s.push(s);
                grid_idx += 1;
            }
            if k == steps {
                break;
            }
            if exploded_at.is_none() {
                let (outcome, e) = self.step(count, rng)?;
                s += e;
                match outcome {
                    StepOutcome::Alive(c) => count = c,
                    StepOutcome::Exploded => exploded_at = Some((k + 1) as f64 / self.v_n),
                }
            }
        }
        while grid_idx < t_grid.len() {
            out_z.push(if exploded_at.is_some() {
                f64::INFINITY
            } else {
                count as f64 / self.n as f64
            });
            out_s.push(s);
            grid_idx += 1;
        }
        Ok(BpPath { t: t_grid.to_vec(), z: out_z, s: out_s, exploded_at })
    }
}

/// Free-function form of one generation (convenience wrapper).
pub fn bp_step(model: &BpModel, count: u64, rng: &mut impl Rng) -> Result<(StepOutcome, f64)> {
    model.prepare()?.step(count, rng)
}

// ---------------------------------------------------------------------------
// Characteristics
// ---------------------------------------------------------------------------

/// P_k^N(z, w) = E[e^{-(k/N)(L(‖Nz‖, w) - 1)}]^{[Nz]} - 1 (exact Laplace).
pub fn p_k_n(sim: &BpSim, z: f64, k: f64, w: f64) -> Result<f64> {
    let pop = (z * sim.n as f64).round() as u64;
    if pop == 0 {
        return Ok(0.0);
    }
    let lap = sim.repro.laplace(k, pop, sim.n, sim.v_n, w)?;
    Ok(lap.powi(pop as i32) - 1.0)
}

/// Monte-Carlo fallback for laws without an exact Laplace transform: the
/// inner expectation is averaged over `m_inner` single-individual draws.
pub fn p_k_n_mc(
    sim: &BpSim,
    z: f64,
    k: f64,
    w: f64,
    m_inner: usize,
    rng: &mut impl Rng,
) -> Result<f64> {
    let pop = (z * sim.n as f64).round() as u64;
    if pop == 0 {
        return Ok(0.0);
    }
    let mut acc = 0.0;
    for _ in 0..m_inner {
        let l = sim.repro.sample_total(1, sim.n, sim.v_n, w, rng)? as f64;
        acc += (-(k / sim.n as f64) * (l - 1.0)).exp();
    }
    Ok((acc / m_inner as f64).powi(pop as i32) - 1.0)
}

/// Estimation mode over the environment randomness.
#[derive(Clone, Copy, Debug)]
pub enum EnvMode {
    MonteCarlo { m_env: usize },
    /// Quadrature over the sampler's mixture law (zero-variance evaluation
    /// of the exact prelimit value).
    Exact,
}

/// A^N_{j,l}(z) = v_N E[P_j^N(z, E^N) e^{-l E^N}].
pub fn a_n_jl(sim: &BpSim, z: f64, j: f64, ell: f64, mode: EnvMode, rng: &mut impl Rng) -> Result<Estimate> {
    match mode {
        EnvMode::Exact => {
            let v = sim.v_n * sim.env.expect(|e| p_k_n(sim, z, j, e).unwrap_or(f64::NAN) * (-ell * e).exp())?;
            if !v.is_finite() {
                return Err(Error::Contract("A^N_{j,l} evaluation produced a non-finite value".into()));
            }
            Ok(Estimate { value: v, stderr: 0.0 })
        }
        EnvMode::MonteCarlo { m_env } => {
            let mut sum = 0.0;
            let mut sumsq = 0.0;
            for _ in 0..m_env {
                let e = sim.env.draw(rng);
                let v = sim.v_n * p_k_n(sim, z, j, e)? * (-ell * e).exp();
                sum += v;
                sumsq += v * v;
            }
            let mean = sum / m_env as f64;
            let var = (sumsq / m_env as f64 - mean * mean).max(0.0);
            Ok(Estimate { value: mean, stderr: (var / m_env as f64).sqrt() })
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct CsbpEstimate {
    pub value: f64,
    pub stderr: f64,
    /// Raised when k >= 8 and the alternating-sum cancellation leaves a
    /// relative standard error above 10%.
    pub cancellation_flag: bool,
}

/// Full-transition Monte-Carlo mode for the consistency check against the
/// assembled estimator.
pub fn g_n_csbp_full_mc(
    sim: &BpSim,
    z: f64,
    h: &TestFunction,
    m: usize,
    rng: &mut impl Rng,
) -> Result<Estimate> {
    h.validate()?;
    let pop0 = (z * sim.n as f64).round() as u64;
    let x1 = (-z).exp();
    let mut sum = 0.0;
    let mut sumsq = 0.0;
    for _ in 0..m {
        let (outcome, e) = sim.step(pop0, rng)?;
        let x1_next = match outcome {
            StepOutcome::Alive(c) => (-(c as f64) / sim.n as f64).exp(),
            StepOutcome::Exploded => 0.0,
        };
        let v = sim.v_n * h.eval([x1_next - x1, e]);
        sum += v;
        sumsq += v * v;
    }
    let mean = sum / m as f64;
    let var = (sumsq / m as f64 - mean * mean).max(0.0);
    Ok(Estimate { value: mean, stderr: (var / m as f64).sqrt() })
}

/// Assembled characteristic estimator via the binomial expansion
/// G^N_x(H_{k,l}) = e^{-kz} Σ_j C(k,j) (-1)^{k-j} A^N_{j,l}(z), evaluated on
/// common environment draws across j (the cancellation-preserving form),
/// and G^N_x(H_l) = v_N E[1 - e^{-l E^N}].
pub fn g_n_csbp(
    sim: &BpSim,
    z: f64,
    h: &TestFunction,
    mode: EnvMode,
    rng: &mut impl Rng,
) -> Result<CsbpEstimate> {
    h.validate()?;
    match *h {
        TestFunction::CsbpL { ell } => {
            let est = match mode {
                EnvMode::Exact => {
                    let v = sim.v_n * sim.env.expect(|e| -(-ell * e).exp_m1())?;
                    Estimate { value: v, stderr: 0.0 }
                }
                EnvMode::MonteCarlo { m_env } => {
                    let mut sum = 0.0;
                    let mut sumsq = 0.0;
                    for _ in 0..m_env {
                        let e = sim.env.draw(rng);
                        let v = sim.v_n * -(-ell * e).exp_m1();
                        sum += v;
                        sumsq += v * v;
                    }
                    let mean = sum / m_env as f64;
                    let var = (sumsq / m_env as f64 - mean * mean).max(0.0);
                    Estimate { value: mean, stderr: (var / m_env as f64).sqrt() }
                }
            };
            Ok(CsbpEstimate { value: est.value, stderr: est.stderr, cancellation_flag: false })
        }
        TestFunction::CsbpKl { k, ell } => {
            let per_env = |e: f64| -> f64 {
                // Neumaier-compensated alternating sum over j; P_0 = 0.
                let mut sum = 0.0;
                let mut c = 0.0;
                for j in 1..=k {
                    let sign = if (k - j) % 2 == 0 { 1.0 } else { -1.0 };
                    let p = p_k_n(sim, z, j as f64, e).unwrap_or(f64::NAN);
                    let v = sign * binom(k, j) * p * (-ell * e).exp();
                    let t = sum + v;
                    if sum.abs() >= v.abs() {
                        c += (sum - t) + v;
                    } else {
                        c += (v - t) + sum;
                    }
                    sum = t;
                }
                (-(k as f64) * z).exp() * sim.v_n * (sum + c)
            };
            let est = match mode {
                EnvMode::Exact => Estimate { value: sim.env.expect(per_env)?, stderr: 0.0 },
                EnvMode::MonteCarlo { m_env } => {
                    let mut sum = 0.0;
                    let mut sumsq = 0.0;
                    for _ in 0..m_env {
                        let v = per_env(sim.env.draw(rng));
                        sum += v;
                        sumsq += v * v;
                    }
                    let mean = sum / m_env as f64;
                    let var = (sumsq / m_env as f64 - mean * mean).max(0.0);
                    Estimate { value: mean, stderr: (var / m_env as f64).sqrt() }
                }
            };
            if !est.value.is_finite() {
                return Err(Error::Contract("assembled characteristic is non-finite".into()));
            }
            let flag = k >= 8 && est.stderr > 0.1 * est.value.abs();
            Ok(CsbpEstimate { value: est.value, stderr: est.stderr, cancellation_flag: flag })
        }
        TestFunction::Wf { .. } => {
            Err(Error::Contract("g_n_csbp requires a CSBP-family test function".into()))
        }
    }
}

// ---------------------------------------------------------------------------
// Limiting generator
// ---------------------------------------------------------------------------

/// Closed-form limiting characteristic G_x(H) at x = (e^{-z}, y).
pub fn g_limit_csbp(
    z: f64,
    h: &TestFunction,
    env: &LevyTriplet,
    demo: &LevyTriplet,
    g: &Interaction,
) -> Result<f64> {
    h.validate()?;
    match *h {
        TestFunction::CsbpL { ell } => gamma_env(ell, env),
        TestFunction::CsbpKl { k: 1, ell } => {
            let ge = gamma_env(ell, env)? - gamma_env(z + ell, env)?;
            Ok((-z).exp() * (ge - z * g.eval(z) - z * gamma_dem(1.0, demo)?))
        }
        TestFunction::CsbpKl { k: 2, ell } => {
            let he = env.truncation;
            let hd = demo.truncation;
            let env_int = env
                .nu
                .integrate(|w| (-ell * w).exp() * f_z(z, w).powi(2) - z * z * he.eval(w).powi(2))?;
            let demo_int = demo.nu.integrate(|r| f_z(1.0, r).powi(2) - hd.eval(r).powi(2))?;
            Ok((-2.0 * z).exp()
                * (z * z * env.beta()? + env_int + z * demo.beta()? + z * demo_int))
        }
        TestFunction::CsbpKl { k, ell } => {
            let kf = k as f64;
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            let env_int = env.nu.integrate(|w| (-ell * w).exp() * f_z(z, w).powi(k as i32))?;
            let demo_int = demo.nu.integrate(|r| f_z(1.0, r).powi(k as i32))?;
            Ok(sign * (-kf * z).exp() * (env_int + z * demo_int))
        }
        TestFunction::Wf { .. } => {
            Err(Error::Contract("g_limit_csbp requires a CSBP-family test function".into()))
        }
    }
}

/// Brute-force assembly of the limiting characteristic from the alternating
/// sum e^{-kz} Σ_j C(k,j)(-1)^{k-j} (-jzg(z) - gamma_j^D z + gamma_l^E -
/// gamma_{jz+l}^E); equals the closed forms through the I1-I4 identities.
pub fn g_limit_csbp_assembled(
    z: f64,
    k: u32,
    ell: f64,
    env: &LevyTriplet,
    demo: &LevyTriplet,
    g: &Interaction,
) -> Result<f64> {
    let gl = gamma_env(ell, env)?;
    let mut sum = 0.0;
    let mut comp = 0.0;
    for j in 0..=k {
        let jf = j as f64;
        let sign = if (k - j) % 2 == 0 { 1.0 } else { -1.0 };
        let a_limit = -jf * z * g.eval(z) - gamma_dem(jf, demo)? * z + gl - gamma_env(jf * z + ell, env)?;
        let v = sign * binom(k, j) * a_limit;
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    Ok((-(k as f64) * z).exp() * (sum + comp))
}

// ---------------------------------------------------------------------------
// Assumption A2 and cooperative-expansion checks
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize)]
pub struct A2Row {
    pub n: u64,
    pub j: u32,
    pub ell: f64,
    pub k: u32,
    pub sup_residual: f64,
    pub stderr: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct A2Report {
    pub rows: Vec<A2Row>,
    /// sup-residual non-increasing along the N list for every (j, l).
    pub trend_decreasing: bool,
}

/// Certifies Assumption A2: for each configured (j, l) and each N, the
/// weighted sup over the z grid of
/// |Â^N_{j,l}(z) + j z g(z) + gamma_j^D z + gamma_{jz+l}^E - gamma_l^E|.
#[allow(clippy::too_many_arguments)]
pub fn check_a2(
    spec: &BpModelSpec,
    env: &LevyTriplet,
    demo: &LevyTriplet,
    g: &Interaction,
    z_grid: &[f64],
    n_list: &[u64],
    j_ells: &[(u32, f64)],
    k_weight: u32,
    mode: EnvMode,
    seed: u64,
) -> Result<A2Report> {
    let mut rows = Vec::new();
    for &n in n_list {
        let sim = spec.at(n).prepare()?;
        for &(j, ell) in j_ells {
            let mut sup = 0.0f64;
            let mut sup_err = 0.0f64;
            let gl = gamma_env(ell, env)?;
            for (zi, &z) in z_grid.iter().enumerate() {
                let zr = (z * n as f64).round() / n as f64;
                let mut rng = crate::rng::stream_rng(seed, ((n as u64) << 20) ^ zi as u64);
                let a = a_n_jl(&sim, zr, j as f64, ell, mode, &mut rng)?;
                let target = -(j as f64) * zr * g.eval(zr) - gamma_dem(j as f64, demo)? * zr
                    + gl
                    - gamma_env(j as f64 * zr + ell, env)?;
                let w = (-(k_weight as f64) * zr).exp();
                let resid = w * (a.value - target).abs();
                if resid > sup {
                    sup = resid;
                    sup_err = w * a.stderr;
                }
            }
            rows.push(A2Row { n, j, ell, k: k_weight, sup_residual: sup, stderr: sup_err });
        }
    }
    let mut trend = true;
    for &(j, ell) in j_ells {
        let series: Vec<&A2Row> =
            rows.iter().filter(|r| r.j == j && r.ell == ell).collect();
        for w in series.windows(2) {
            let slack = 3.0 * (w[0].stderr + w[1].stderr) + 1e-12;
            if w[1].sup_residual > w[0].sup_residual + slack {
                trend = false;
            }
        }
    }
    Ok(A2Report { rows, trend_decreasing: trend })
}

/// C_j^N(z) of the cooperative chain: v_N (E[e^{-j(L(Nz)-1)/N}]^{Nz} - 1),
/// the no-environment characteristic of the boosted law.
pub fn c_j_n(sim: &BpSim, z: f64, j: u32) -> Result<f64> {
    p_k_n(sim, z, j as f64, 0.0).map(|p| sim.v_n * p)
}

/// Cooperative-expansion check: sup_z e^{-kz} |C_j^N(z) + j z g(z) +
/// gamma_j^D z| must vanish along the N list.
pub fn check_coop_expansion(
    spec: &BpModelSpec,
    demo: &LevyTriplet,
    g: &Interaction,
    z_grid: &[f64],
    n_list: &[u64],
    js: &[u32],
    k_weight: u32,
) -> Result<A2Report> {
    let mut rows = Vec::new();
    for &n in n_list {
        let sim = spec.at(n).prepare()?;
        for &j in js {
            let mut sup = 0.0f64;
            for &z in z_grid {
                let zr = (z * n as f64).round() / n as f64;
                let c = c_j_n(&sim, zr, j)?;
                let target = -(j as f64) * zr * g.eval(zr) - gamma_dem(j as f64, demo)? * zr;
                let w = (-(k_weight as f64) * zr).exp();
                sup = sup.max(w * (c - target).abs());
            }
            rows.push(A2Row { n, j, ell: 0.0, k: k_weight, sup_residual: sup, stderr: 0.0 });
        }
    }
    let mut trend = true;
    for &j in js {
        let series: Vec<f64> = rows
            .iter()
            .filter(|r| r.j == j)
            .map(|r| r.sup_residual)
            .collect();
        if !stats::nonincreasing(&series, 1e-9) {
            trend = false;
        }
    }
    Ok(A2Report { rows, trend_decreasing: trend })
}

// ---------------------------------------------------------------------------
// Limiting SDE specifications
// ---------------------------------------------------------------------------

/// Z-form limiting SDE with cemetery: drift Z(alpha_D + g(Z)) plus the
/// environment coupling Z dY, diffusion sigma_D sqrt(Z) and Z sigma_E
/// (E-channel shared with Y), demographic jumps of size r at intensity
/// Z ν_D(r > eps), environment jumps Z w shared with Y.
pub fn bpile_z_spec(
    env: &LevyTriplet,
    demo: &LevyTriplet,
    g: &Interaction,
    eps: f64,
    z_max: f64,
) -> Result<SdeSpec> {
    g.validate_decay()?;
    let lambda_e = env.nu.integrate_tail(eps, |_| 1.0)?;
    let comp_he = env.nu.integrate_tail(eps, |w| env.truncation.eval(w))?;
    let small_e = env.nu.integrate_core(eps, |w| w * w)?;
    let sigma_e_eff = (env.sigma * env.sigma + small_e).sqrt();
    let alpha_e_eff = env.alpha - comp_he;

    let lambda_d_unit = demo.nu.integrate_tail(eps, |_| 1.0)?;
    let comp_hd = demo.nu.integrate_tail(eps, |r| demo.truncation.eval(r))?;
    let small_d = demo.nu.integrate_core(eps, |r| r * r)?;
    let sigma_d_eff = (demo.sigma * demo.sigma + small_d).sqrt();
    let alpha_d = demo.alpha;

    let gi = *g;
    let drift = move |x: &[f64], out: &mut [f64]| {
        let z = x[0].max(0.0);
        out[0] = z * (alpha_d + gi.eval(z) + alpha_e_eff - comp_hd);
        out[1] = alpha_e_eff;
    };
    let diffusion = move |x: &[f64], out: &mut [f64]| {
        let z = x[0].max(0.0);
        // channels: (B^D_eff, B^E_eff); the E channel is shared with Y.
        out[0] = sigma_d_eff * z.sqrt();
        out[1] = sigma_e_eff * z;
        out[2] = 0.0;
        out[3] = sigma_e_eff;
    };

    let mut jumps = Vec::new();
    if lambda_e > 0.0 {
        jumps.push(JumpSourceSpec {
            name: "env".to_string(),
            intensity: Arc::new(move |_x: &[f64]| lambda_e),
            mark: crate::sde::mark_from_measure(&env.nu, eps)?,
            apply: Arc::new(|x: &[f64], w: f64, dx: &mut [f64]| {
                dx[0] = x[0].max(0.0) * w;
                dx[1] = w;
            }),
        });
    }
    if lambda_d_unit > 0.0 {
        jumps.push(JumpSourceSpec {
            name: "demo".to_string(),
            intensity: Arc::new(move |x: &[f64]| lambda_d_unit * x[0].max(0.0)),
            mark: crate::sde::mark_from_measure(&demo.nu, eps)?,
            apply: Arc::new(|_x: &[f64], r: f64, dx: &mut [f64]| {
                dx[0] = r;
                dx[1] = 0.0;
            }),
        });
    }

    Ok(SdeSpec {
        dim: 2,
        noise_dim: 2,
        drift: Arc::new(drift),
        diffusion: Arc::new(diffusion),
        jumps,
        domain: vec![CoordPolicy::AbsorbBelow { level: 0.0 }, CoordPolicy::Free],
        explosion: Some(ExplosionRule::Above { coord: 0, threshold: z_max }),
        discarded_jump_var: small_e + small_d,
    })
}

/// Pair-form limiting SDE on the compactified state (X¹, Y) ∈ [0,1] x R,
/// with b1(x) = e^{-z}(-gamma_z^E - z g(z) - z gamma_1^D), z = -log X¹, the
/// boundary row vanishing at X¹ = 0 and cemetery below e^{-z_max}.
pub fn bpile_pair_spec(
    env: &LevyTriplet,
    demo: &LevyTriplet,
    g: &Interaction,
    eps: f64,
    z_max: f64,
) -> Result<SdeSpec> {
    g.validate_decay()?;
    let lambda_e = env.nu.integrate_tail(eps, |_| 1.0)?;
    let comp_he = env.nu.integrate_tail(eps, |w| env.truncation.eval(w))?;
    let small_e = env.nu.integrate_core(eps, |w| w * w)?;
    let sigma_e_eff = (env.sigma * env.sigma + small_e).sqrt();
    let alpha_e_eff = env.alpha - comp_he;

    let lambda_d_unit = demo.nu.integrate_tail(eps, |_| 1.0)?;
    let small_d = demo.nu.integrate_core(eps, |r| r * r)?;
    let sigma_d_eff = (demo.sigma * demo.sigma + small_d).sqrt();
    let gamma1_d = gamma_dem(1.0, demo)?;

    let env_c = env.clone();
    let demo_c = demo.clone();
    let gi = *g;
    let x_floor = (-z_max).exp();
    let drift = move |x: &[f64], out: &mut [f64]| {
        let x1 = x[0].clamp(0.0, 1.0);
        if x1 <= x_floor {
            out[0] = 0.0;
            out[1] = alpha_e_eff;
            return;
        }
        let z = -x1.ln();
        let b1 = x1 * (-gamma_env(z, &env_c).unwrap_or(f64::NAN) - z * gi.eval(z) - z * gamma1_d);
        // Compensators of the simulated jumps (K¹ is fully compensated in
        // the pair form).
        let comp = x1
            * (env_c.nu.integrate_tail(eps, |w| f_z(z, w)).unwrap_or(f64::NAN)
                + z * demo_c.nu.integrate_tail(eps, |r| f_z(1.0, r)).unwrap_or(f64::NAN));
        out[0] = b1 + comp;
        out[1] = alpha_e_eff;
    };
    let diffusion = move |x: &[f64], out: &mut [f64]| {
        let x1 = x[0].clamp(0.0, 1.0);
        if x1 <= x_floor {
            out[0] = 0.0;
            out[1] = 0.0;
            out[2] = 0.0;
            out[3] = sigma_e_eff;
            return;
        }
        let z = -x1.ln();
        out[0] = -z.sqrt() * sigma_d_eff * x1;
        out[1] = -z * sigma_e_eff * x1;
        out[2] = 0.0;
        out[3] = sigma_e_eff;
    };

    let mut jumps = Vec::new();
    if lambda_e > 0.0 {
        jumps.push(JumpSourceSpec {
            name: "env".to_string(),
            intensity: Arc::new(move |_x: &[f64]| lambda_e),
            mark: crate::sde::mark_from_measure(&env.nu, eps)?,
            apply: Arc::new(move |x: &[f64], w: f64, dx: &mut [f64]| {
                let x1 = x[0].clamp(0.0, 1.0);
                dx[1] = w;
                if x1 <= x_floor {
                    dx[0] = 0.0;
                } else {
                    let z = -x1.ln();
                    dx[0] = -x1 * f_z(z, w);
                }
            }),
        });
    }
    if lambda_d_unit > 0.0 {
        jumps.push(JumpSourceSpec {
            name: "demo".to_string(),
            intensity: Arc::new(move |x: &[f64]| {
                let x1 = x[0].clamp(f64::MIN_POSITIVE, 1.0);
                if x1 <= x_floor {
                    0.0
                } else {
                    lambda_d_unit * -x1.ln()
                }
            }),
            mark: crate::sde::mark_from_measure(&demo.nu, eps)?,
            apply: Arc::new(move |x: &[f64], r: f64, dx: &mut [f64]| {
                let x1 = x[0].clamp(0.0, 1.0);
                dx[0] = if x1 <= x_floor { 0.0 } else { -x1 * f_z(1.0, r) };
                dx[1] = 0.0;
            }),
        });
    }

    Ok(SdeSpec {
        dim: 2,
        noise_dim: 2,
        drift: Arc::new(drift),
        diffusion: Arc::new(diffusion),
        jumps,
        domain: vec![CoordPolicy::Clamp { lo: 0.0, hi: 1.0 }, CoordPolicy::Free],
        explosion: Some(ExplosionRule::Below { coord: 0, threshold: x_floor }),
        discarded_jump_var: small_e + small_d,
    })
}

/// Limiting SDE of the logistic corollary, reproduced verbatim:
/// dZ = alpha_D Z dt - c Z² dt + sigma_E Z dB^E + sigma_D sqrt(Z) dB^D.
pub fn logistic_feller_sde_spec(alpha_d: f64, c: f64, sigma_e: f64, sigma_d: f64, z_max: f64) -> SdeSpec {
    SdeSpec {
        dim: 1,
        noise_dim: 2,
        drift: Arc::new(move |x: &[f64], out: &mut [f64]| {
            let z = x[0].max(0.0);
            out[0] = alpha_d * z - c * z * z;
        }),
        diffusion: Arc::new(move |x: &[f64], out: &mut [f64]| {
            let z = x[0].max(0.0);
            out[0] = sigma_e * z;
            out[1] = sigma_d * z.sqrt();
        }),
        jumps: vec![],
        domain: vec![CoordPolicy::AbsorbBelow { level: 0.0 }],
        explosion: Some(ExplosionRule::Above { coord: 0, threshold: z_max }),
        discarded_jump_var: 0.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    fn unit_model(n: u64) -> BpModel {
        BpModelSpec::new(VnRule::N, ReproLaw::Unit, EnvFamily::deterministic(0.0), 1.0).at(n)
    }

    fn logistic_spec() -> BpModelSpec {
        let repro = ReproLaw::LogisticFeller(LogisticFellerRepro { sigma_d: 0.9, alpha_d: 0.0, c: 1.0 });
        let env = EnvFamily::from_triplet(LevyTriplet::diffusive_env(0.0, 0.3));
        BpModelSpec::new(VnRule::N, repro, env, 1.0)
    }

    #[test]
    fn unit_law_is_frozen() {
        let sim = unit_model(100).prepare().unwrap();
        let mut rng = stream_rng(40, 0);
        for count in [0u64, 1, 57, 100_000] {
            let (out, _) = sim.step(count, &mut rng).unwrap();
            assert_eq!(out, StepOutcome::Alive(count));
        }
    }

    #[test]
    fn zero_is_absorbing() {
        let sim = logistic_spec().at(500).prepare().unwrap();
        let mut rng = stream_rng(41, 0);
        for _ in 0..1000 {
            let (out, _) = sim.step(0, &mut rng).unwrap();
            assert_eq!(out, StepOutcome::Alive(0));
        }
    }

    #[test]
    fn logistic_step_mean_matches_two_point_oracle() {
        // n' mean = n (1 + e - g_N(n/N)) at fixed environment value.
        let repro = LogisticFellerRepro { sigma_d: 0.9, alpha_d: 0.2, c: 1.0 };
        let n = 1000u64;
        let pop = 800u64;
        let e = 0.01;
        let g = repro.g_n(pop as f64 / n as f64, n);
        let expected = pop as f64 * (1.0 + e - g);
        let law = ReproLaw::LogisticFeller(repro);
        let mut rng = stream_rng(42, 0);
        let m = 100_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..m {
            let v = law.sample_total(pop, n, n as f64, e, &mut rng).unwrap() as f64;
            sum += v;
            sumsq += v * v;
        }
        let mean = sum / m as f64;
        let sd = ((sumsq / m as f64 - mean * mean).max(0.0) / m as f64).sqrt();
        assert!((mean - expected).abs() < 3.0 * sd, "mean {mean} vs {expected}");
    }

    #[test]
    fn laplace_matches_monte_carlo_per_individual() {
        let laws: Vec<ReproLaw> = vec![
            ReproLaw::LogisticFeller(LogisticFellerRepro { sigma_d: 0.8, alpha_d: 0.3, c: 0.5 }),
            ReproLaw::Appendix(AppendixRepro {
                interaction: Interaction::Bounded { c: 1.0 },
                alpha_d: 0.2,
                heavy: HeavyTail { atoms: vec![(1.5, 0.5)] },
                h_bound: 1.0,
            }),
            ReproLaw::CoopGw(CoopGwRepro {
                alpha_d: 0.4,
                sigma_d: 0.7,
                heavy: HeavyTail { atoms: vec![(2.0, 0.3)] },
                interaction: Interaction::Poly { c: 0.5, alpha: 1.0 },
                h_bound: 1.0,
            }),
        ];
        let (n, pop, e, j) = (200u64, 150u64, 0.004, 1.7);
        for law in laws {
            let exact = law.laplace(j, pop, n, n as f64, e).unwrap();
            let mut rng = stream_rng(43, 0);
            let m = 100_000;
            let mut sum = 0.0;
            let mut sumsq = 0.0;
            for _ in 0..m {
                let l = law.sample_total(1, n, n as f64, e, &mut rng).unwrap() as f64;
                let v = (-(j / n as f64) * (l - 1.0)).exp();
                sum += v;
                sumsq += v * v;
            }
            let mean = sum / m as f64;
            let sd = ((sumsq / m as f64 - mean * mean).max(0.0) / m as f64).sqrt();
            assert!(
                (mean - exact).abs() < 4.0 * sd + 1e-9,
                "laplace mismatch: mc {mean} vs exact {exact} (sd {sd})"
            );
        }
    }

    #[test]
    fn appendix_mean_identity_and_support() {
        let r = AppendixRepro {
            interaction: Interaction::Bounded { c: 1.0 },
            alpha_d: 0.2,
            heavy: HeavyTail { atoms: vec![(1.5, 0.5)] },
            h_bound: 1.0,
        };
        let (n, pop, e) = (100u64, 70u64, 0.05);
        let m = r.mean(pop, n, e).unwrap();
        let nf = n as f64;
        let g_n = r.g_n(pop as f64 / nf, n);
        assert!((m - (1.0 + g_n / nf + r.alpha_c() / nf + e)).abs() < 1e-15);
        // A ∈ {floor(m), floor(m)+1} with E[A] = m: verified via the Laplace
        // transform at j -> 0 slope.
        let j = 1e-6;
        let lap = r.laplace(j, pop, n, e).unwrap();
        let slope = -(lap.ln()) * nf / j; // ≈ E[(L-1)] * 1
        let heavy_mean: f64 = r
            .heavy
            .atoms
            .iter()
            .map(|&(rv, lam)| lam / (nf * nf) * (nf * rv).round())
            .sum();
        assert!(
            (slope - (m - 1.0 + heavy_mean)).abs() < 1e-3,
            "slope {slope} vs {}",
            m - 1.0 + heavy_mean
        );
    }

    #[test]
    fn p_k_n_trivial_cases() {
        let sim = unit_model(100).prepare().unwrap();
        assert_eq!(p_k_n(&sim, 0.5, 2.0, 0.1).unwrap(), 0.0);
        assert_eq!(p_k_n(&sim, 0.0, 2.0, 0.1).unwrap(), 0.0);
        let lsim = logistic_spec().at(400).prepare().unwrap();
        assert_eq!(p_k_n(&lsim, 0.0, 1.0, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn p_k_n_mc_agrees_with_exact() {
        let sim = logistic_spec().at(300).prepare().unwrap();
        let mut rng = stream_rng(44, 0);
        let exact = p_k_n(&sim, 0.5, 2.0, 0.01).unwrap();
        let mc = p_k_n_mc(&sim, 0.5, 2.0, 0.01, 400_000, &mut rng).unwrap();
        // The MC inner mean enters through the 150th power: generous band.
        assert!((mc - exact).abs() < 5e-2 * (1.0 + exact.abs()), "mc {mc} vs exact {exact}");
    }

    #[test]
    fn a_n_jl_unit_law_is_zero() {
        let sim = unit_model(100).prepare().unwrap();
        let mut rng = stream_rng(45, 0);
        let est = a_n_jl(&sim, 0.7, 1.0, 0.5, EnvMode::Exact, &mut rng).unwrap();
        assert_eq!(est.value, 0.0);
        assert_eq!(est.stderr, 0.0);
    }

    #[test]
    fn a_n_jl_deterministic_env_matches_direct_p() {
        let repro = ReproLaw::LogisticFeller(LogisticFellerRepro { sigma_d: 0.9, alpha_d: 0.1, c: 0.5 });
        let spec = BpModelSpec::new(VnRule::N, repro, EnvFamily::deterministic(0.0), 1.0);
        let sim = spec.at(500).prepare().unwrap();
        let mut rng = stream_rng(46, 0);
        let z = 0.8;
        let est = a_n_jl(&sim, z, 2.0, 1.0, EnvMode::Exact, &mut rng).unwrap();
        let e0 = 0.0 / 500.0;
        let direct = 500.0 * p_k_n(&sim, z, 2.0, e0).unwrap() * (-1.0 * e0 as f64).exp();
        assert!((est.value - direct).abs() < 1e-10);
    }

    #[test]
    fn gn_csbp_hl_trivial_env_zero() {
        let sim = logistic_spec().at(200).prepare().unwrap();
        // H_l over a centered tiny env: value = v_N E[1 - e^{-l E}];
        // with the deterministic-0 env it vanishes identically.
        let spec0 = BpModelSpec::new(
            VnRule::N,
            ReproLaw::Unit,
            EnvFamily::deterministic(0.0),
            1.0,
        );
        let sim0 = spec0.at(200).prepare().unwrap();
        let mut rng = stream_rng(47, 0);
        let est = g_n_csbp(&sim0, 0.5, &TestFunction::CsbpL { ell: 2.0 }, EnvMode::Exact, &mut rng).unwrap();
        assert_eq!(est.value, 0.0);
        drop(sim);
    }

    #[test]
    fn gn_csbp_k1_reduces_to_a1_minus_a0() {
        let sim = logistic_spec().at(400).prepare().unwrap();
        let mut rng = stream_rng(48, 0);
        let z = 0.5;
        let h = TestFunction::CsbpKl { k: 1, ell: 0.5 };
        let byexp = g_n_csbp(&sim, z, &h, EnvMode::Exact, &mut rng).unwrap();
        let a1 = a_n_jl(&sim, z, 1.0, 0.5, EnvMode::Exact, &mut rng).unwrap();
        // A_0 vanishes (P_0 = 0), so G = e^{-z} A_1.
        assert!((byexp.value - (-z).exp() * a1.value).abs() < 1e-10);
    }

    #[test]
    fn binomial_expansion_consistency_full_mc_vs_assembled() {
        // Direct MC of v_N E[H(increment)] vs the assembled estimator on
        // common env draws, within 3 combined standard errors, k <= 4.
        let spec = logistic_spec();
        let sim = spec.at(200).prepare().unwrap();
        let z = 1.0;
        for k in 1..=4u32 {
            let h = TestFunction::CsbpKl { k, ell: 0.5 };
            let mut rng = stream_rng(49, k as u64);
            let full = g_n_csbp_full_mc(&sim, z, &h, 400_000, &mut rng).unwrap();
            let asm = g_n_csbp(&sim, z, &h, EnvMode::Exact, &mut rng).unwrap();
            let band = 3.0 * (full.stderr.powi(2) + asm.stderr.powi(2)).sqrt() + 1e-9;
            assert!(
                (full.value - asm.value).abs() < band,
                "k={k}: full {} vs assembled {} (band {band})",
                full.value,
                asm.value
            );
        }
    }

    #[test]
    fn g_limit_boundary_and_drift_cases() {
        let env = LevyTriplet::diffusive_env(0.0, 0.0);
        let demo = LevyTriplet { alpha: 0.4, sigma: 0.6, ..LevyTriplet::zero_demo() };
        let g = Interaction::Zero;
        // z = 0: k = 1 gives 0.
        let h = TestFunction::CsbpKl { k: 1, ell: 0.7 };
        let v = g_limit_csbp(0.0, &h, &env, &demo, &g).unwrap();
        assert!(v.abs() < 1e-14);
        // nu = 0, sigma_E = 0, g = 0, l = 0, k = 1: e^{-z}(-z gamma_1^D),
        // gamma_1^D = alpha_D - sigma_D²/2.
        let h = TestFunction::CsbpKl { k: 1, ell: 0.0 };
        let z = 1.3f64;
        let gamma1 = 0.4 - 0.5 * 0.36;
        let expect = (-z).exp() * (-z * gamma1);
        assert!((g_limit_csbp(z, &h, &env, &demo, &g).unwrap() - expect).abs() < 1e-13);
    }

    #[test]
    fn assembled_matches_closed_forms_on_grid() {
        let env = LevyTriplet::env_with_atoms(0.3, 0.5, &[(0.8, 0.6), (-0.4, 0.3)]);
        let demo = LevyTriplet::demo_with_atoms(0.2, 0.0, &[(1.2, 0.4), (0.3, 0.7)]);
        let g = Interaction::Poly { c: 0.5, alpha: 1.0 };
        for k in 1..=4u32 {
            for &ell in &[0.0, 0.5, 1.5] {
                for zi in 1..=19 {
                    let z = zi as f64 * 0.25;
                    let h = TestFunction::CsbpKl { k, ell };
                    let closed = g_limit_csbp(z, &h, &env, &demo, &g).unwrap();
                    let asm = g_limit_csbp_assembled(z, k, ell, &env, &demo, &g).unwrap();
                    assert!(
                        (closed - asm).abs() < 1e-9 * (1.0 + closed.abs()),
                        "k={k} l={ell} z={z}: closed {closed} vs assembled {asm}"
                    );
                }
            }
        }
    }

    #[test]
    fn k3_sign_is_negative_of_positive_integral() {
        let env = LevyTriplet::env_with_atoms(0.0, 0.0, &[(0.8, 0.6)]);
        let demo = LevyTriplet::demo_with_atoms(0.0, 0.0, &[(1.2, 0.4)]);
        let g = Interaction::Zero;
        let h = TestFunction::CsbpKl { k: 3, ell: 0.5 };
        for zi in 1..=10 {
            let z = zi as f64 * 0.4;
            let v = g_limit_csbp(z, &h, &env, &demo, &g).unwrap();
            assert!(v <= 0.0, "sign at z={z}: {v}");
        }
    }

    #[test]
    fn compactified_continuity_at_infinity() {
        // e^{-kz} |gamma_{jz+l}^E| -> 0 along a geometric z grid (j = k = 1),
        // with an atom close to -1 (the hard direction).
        let env = LevyTriplet::env_with_atoms(0.2, 0.4, &[(-0.9, 0.5), (1.0, 0.5)]);
        // The weighted gamma can change sign at small z; the invariant is
        // the decay of the tail, so the geometric grid starts at z = 8.
        let mut prev = f64::INFINITY;
        for i in 3..=9 {
            let z = 2.0f64.powi(i);
            let v = (-z).exp() * gamma_env(z + 0.5, &env).unwrap().abs();
            assert!(v <= prev * (1.0 + 1e-9) + 1e-12, "not decreasing at z={z}");
            prev = v;
        }
        assert!(prev < 1e-6);
    }

    #[test]
    fn check_a2_unit_law_trivial() {
        let spec = BpModelSpec::new(VnRule::N, ReproLaw::Unit, EnvFamily::deterministic(0.0), 1.0);
        let env = LevyTriplet::diffusive_env(0.0, 0.0);
        let demo = LevyTriplet::zero_demo();
        let rep = check_a2(
            &spec,
            &env,
            &demo,
            &Interaction::Zero,
            &[0.5, 1.0, 2.0],
            &[100, 1000],
            &[(1, 0.0), (2, 1.0)],
            2,
            EnvMode::Exact,
            50,
        )
        .unwrap();
        for r in &rep.rows {
            assert!(r.sup_residual < 1e-12, "{r:?}");
        }
        assert!(rep.trend_decreasing);
    }

    #[test]
    fn check_a2_logistic_feller() {
        // The A2 target uses the effective interaction (-c z) and effective
        // drift (-alpha_d) of the implemented law.
        let repro = LogisticFellerRepro { sigma_d: 0.9, alpha_d: 0.0, c: 1.0 };
        let spec = BpModelSpec::new(
            VnRule::N,
            ReproLaw::LogisticFeller(repro.clone()),
            EnvFamily::from_triplet(LevyTriplet::diffusive_env(0.0, 0.3)),
            1.0,
        );
        let env = LevyTriplet::diffusive_env(0.0, 0.3);
        let demo = repro.effective_demo_triplet();
        let g = repro.effective_interaction();
        let z_grid: Vec<f64> = (1..=10).map(|i| i as f64 * 0.5).collect();
        let rep = check_a2(
            &spec,
            &env,
            &demo,
            &g,
            &z_grid,
            &[100, 1000, 10_000],
            &[(1, 0.0), (1, 1.0), (2, 0.0)],
            2,
            EnvMode::Exact,
            51,
        )
        .unwrap();
        assert!(rep.trend_decreasing, "{:?}", rep.rows);
        // The N = 10^4 residuals are small in absolute terms.
        for r in rep.rows.iter().filter(|r| r.n == 10_000) {
            assert!(r.sup_residual < 0.05, "{r:?}");
        }
    }

    #[test]
    fn coop_expansion_shrinks() {
        // Sigma ≡ 0, g(z) = c z: C_j^N(z) -> -j c z² - gamma_j^D z.
        let coop = CoopGwRepro {
            alpha_d: 0.3,
            sigma_d: 0.6,
            heavy: HeavyTail::default(),
            interaction: Interaction::Poly { c: 0.8, alpha: 1.0 },
            h_bound: 1.0,
        };
        let demo = LevyTriplet { alpha: 0.3, sigma: 0.6, ..LevyTriplet::zero_demo() };
        let spec = BpModelSpec::new(
            VnRule::N,
            ReproLaw::CoopGw(coop),
            EnvFamily::deterministic(0.0),
            1.0,
        );
        let z_grid: Vec<f64> = (1..=10).map(|i| i as f64 * 0.3).collect();
        let rep = check_coop_expansion(
            &spec,
            &demo,
            &Interaction::Poly { c: 0.8, alpha: 1.0 },
            &z_grid,
            &[100, 1000, 10_000],
            &[1, 2, 3],
            3,
        )
        .unwrap();
        assert!(rep.trend_decreasing, "{:?}", rep.rows);
        for r in rep.rows.iter().filter(|r| r.n == 10_000) {
            assert!(r.sup_residual < 0.02, "{r:?}");
        }
    }

    #[test]
    fn coop_no_explosion_with_bounded_g() {
        let coop = CoopGwRepro {
            alpha_d: 0.3,
            sigma_d: 0.6,
            heavy: HeavyTail::default(),
            interaction: Interaction::Bounded { c: 1.0 },
            h_bound: 1.0,
        };
        let spec = BpModelSpec::new(VnRule::N, ReproLaw::CoopGw(coop), EnvFamily::deterministic(0.0), 2.0);
        let sim = spec.at(200).prepare().unwrap();
        let paths = 500;
        let exploded: usize = stats::indexed_tasks(paths, 52, 0, true, |_, rng| {
            let p = sim.simulate(&[0.0, 5.0], rng).unwrap();
            usize::from(p.exploded_at.is_some())
        })
        .into_iter()
        .sum();
        assert_eq!(exploded, 0);
    }

    #[test]
    fn explosion_by_count_overflow_flags_cemetery() {
        // Cooperative quadratic growth explodes quickly.
        let coop = CoopGwRepro {
            alpha_d: 0.0,
            sigma_d: 0.5,
            heavy: HeavyTail::default(),
            interaction: Interaction::Poly { c: 1.0, alpha: 2.0 },
            h_bound: 1.0,
        };
        let mut spec = BpModelSpec::new(VnRule::N, ReproLaw::CoopGw(coop), EnvFamily::deterministic(0.0), 2.0);
        spec.z_max = 1e4;
        let sim = spec.at(1000).prepare().unwrap();
        let mut rng = stream_rng(53, 0);
        let p = sim.simulate(&[0.0, 5.0], &mut rng).unwrap();
        assert!(p.exploded_at.is_some());
        assert!(p.z.last().unwrap().is_infinite());
    }

    #[test]
    fn z_spec_feller_reduction() {
        // g = 0, nu = 0, sigma_E = 0: Z drift alpha_D Z, diffusion sigma_D sqrt(Z).
        let env = LevyTriplet::diffusive_env(0.0, 0.0);
        let demo = LevyTriplet { alpha: 0.7, sigma: 0.5, ..LevyTriplet::zero_demo() };
        let spec = bpile_z_spec(&env, &demo, &Interaction::Zero, 1e-3, 1e6).unwrap();
        let mut b = vec![0.0; 2];
        (spec.drift)(&[2.0, 0.0], &mut b);
        assert!((b[0] - 0.7 * 2.0).abs() < 1e-14);
        let mut s = vec![0.0; 4];
        (spec.diffusion)(&[2.0, 0.0], &mut s);
        assert!((s[0] - 0.5 * 2.0f64.sqrt()).abs() < 1e-14);
        assert_eq!(s[1], 0.0);
        assert!(spec.jumps.is_empty());
    }

    #[test]
    fn pair_spec_boundary_row_vanishes() {
        let env = LevyTriplet::env_with_atoms(0.2, 0.4, &[(0.7, 0.5)]);
        let demo = LevyTriplet::demo_with_atoms(0.1, 0.3, &[(1.0, 0.4)]);
        let spec = bpile_pair_spec(&env, &demo, &Interaction::Zero, 1e-3, 1e6).unwrap();
        let mut b = vec![0.0; 2];
        (spec.drift)(&[0.0, 1.0], &mut b);
        assert_eq!(b[0], 0.0);
        let mut s = vec![0.0; 4];
        (spec.diffusion)(&[0.0, 1.0], &mut s);
        assert_eq!(s[0], 0.0);
        assert_eq!(s[1], 0.0);
        // Environment row keeps acting.
        assert!(s[3] > 0.0);
        // Jumps: population component zero at the boundary, env mark passes.
        let mut dx = vec![0.0; 2];
        (spec.jumps[0].apply)(&[0.0, 1.0], 0.7, &mut dx);
        assert_eq!(dx[0], 0.0);
        assert_eq!(dx[1], 0.7);
    }

    #[test]
    fn logistic_corollary_spec_matches_formula() {
        let spec = logistic_feller_sde_spec(0.4, 1.0, 0.3, 0.9, 1e6);
        let mut b = vec![0.0];
        (spec.drift)(&[2.0], &mut b);
        assert!((b[0] - (0.4 * 2.0 - 1.0 * 4.0)).abs() < 1e-14);
        let mut s = vec![0.0; 2];
        (spec.diffusion)(&[2.0], &mut s);
        assert!((s[0] - 0.3 * 2.0).abs() < 1e-14);
        assert!((s[1] - 0.9 * 2.0f64.sqrt()).abs() < 1e-14);
    }
}
