//! Euler-Maruyama integrator for jump-diffusions with finite-activity
//! state-dependent jump sources, domain policies and a cemetery state.

use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::levy::{JumpMeasure, TailSampler};
use crate::rng::stream_rng;

pub type VecFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
pub type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type MarkFn = Arc<dyn Fn(&mut ChaCha8Rng) -> f64 + Send + Sync>;
pub type ApplyFn = Arc<dyn Fn(&[f64], f64, &mut [f64]) + Send + Sync>;

/// One finite-activity jump source: intensity lambda(x), a mark sampler and
/// the state-dependent jump amplitude.
#[derive(Clone)]
pub struct JumpSourceSpec {
    pub name: String,
    pub intensity: ScalarFn,
    pub mark: MarkFn,
    pub apply: ApplyFn,
}

/// Mark sampler drawing from the restriction of `nu` to { |w| > eps }.
pub fn mark_from_measure(nu: &JumpMeasure, eps: f64) -> Result<MarkFn> {
    let sampler = TailSampler::new(nu, eps)?;
    Ok(Arc::new(move |rng: &mut ChaCha8Rng| sampler.draw(rng)))
}

#[derive(Clone, Copy, Debug)]
pub enum CoordPolicy {
    Free,
    /// Clamp to [lo, hi] after every substep.
    Clamp { lo: f64, hi: f64 },
    /// Set to `level` once the coordinate falls below it (absorbing floor).
    AbsorbBelow { level: f64 },
}

#[derive(Clone, Copy, Debug)]
pub enum ExplosionRule {
    /// Cemetery once x[coord] > threshold.
    Above { coord: usize, threshold: f64 },
    /// Cemetery once x[coord] < threshold.
    Below { coord: usize, threshold: f64 },
}

/// Drift, diffusion matrix (dim x noise_dim, row-major) and jump sources of
/// a limiting jump-diffusion, together with its domain and explosion policy.
#[derive(Clone)]
pub struct SdeSpec {
    pub dim: usize,
    pub noise_dim: usize,
    pub drift: VecFn,
    pub diffusion: VecFn,
    pub jumps: Vec<JumpSourceSpec>,
    pub domain: Vec<CoordPolicy>,
    pub explosion: Option<ExplosionRule>,
    /// ∫_{|w| <= eps} w² ν(dw) discarded into the diffusion by the builder;
    /// reported in run metadata.
    pub discarded_jump_var: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct JumpRecord {
    pub t: f64,
    pub source: String,
    pub mark: f64,
    pub pre: Vec<f64>,
    pub post: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct JumpDiffPath {
    pub t: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub jumps: Vec<JumpRecord>,
    pub explosion_time: Option<f64>,
    /// Accumulated continuous increments per coordinate (drift + diffusion).
    pub continuous_sum: Vec<f64>,
    /// Accumulated jump increments per coordinate.
    pub jump_sum: Vec<f64>,
    /// Accumulated domain-policy adjustments per coordinate.
    pub adjust_sum: Vec<f64>,
}

struct Stepper<'a> {
    spec: &'a SdeSpec,
    x: Vec<f64>,
    t: f64,
    exploded: Option<f64>,
    rng_diff: ChaCha8Rng,
    rng_jump: ChaCha8Rng,
    cont: Vec<f64>,
    jump_acc: Vec<f64>,
    adjust: Vec<f64>,
    log: Option<Vec<JumpRecord>>,
}

impl<'a> Stepper<'a> {
    fn new(spec: &'a SdeSpec, x0: &[f64], rng: &mut impl Rng, log: bool) -> Result<Self> {
        if x0.len() != spec.dim {
            return Err(Error::Contract(format!(
                "initial state has dimension {}, spec has {}",
                x0.len(),
                spec.dim
            )));
        }
        Ok(Stepper {
            spec,
            x: x0.to_vec(),
            t: 0.0,
            exploded: None,
            rng_diff: stream_rng(rng.random(), 0),
            rng_jump: stream_rng(rng.random(), 1),
            cont: vec![0.0; spec.dim],
            jump_acc: vec![0.0; spec.dim],
            adjust: vec![0.0; spec.dim],
            log: log.then(Vec::new),
        })
    }

    fn apply_policies(&mut self) {
        for (i, p) in self.spec.domain.iter().enumerate() {
            let before = self.x[i];
            let after = match *p {
                CoordPolicy::Free => before,
                CoordPolicy::Clamp { lo, hi } => before.clamp(lo, hi),
                CoordPolicy::AbsorbBelow { level } => {
                    if before < level {
                        level
                    } else {
                        before
                    }
                }
            };
            if after != before {
                self.adjust[i] += after - before;
                self.x[i] = after;
            }
        }
    }

    fn check_explosion(&mut self) {
        if self.exploded.is_some() {
            return;
        }
        if let Some(rule) = self.spec.explosion {
            let hit = match rule {
                ExplosionRule::Above { coord, threshold } => self.x[coord] > threshold,
                ExplosionRule::Below { coord, threshold } => self.x[coord] < threshold,
            };
            if hit {
                self.exploded = Some(self.t);
            }
        }
    }

    /// One Euler step of size dt with frozen jump intensities.
    fn step(&mut self, dt: f64) -> Result<()> {
        if self.exploded.is_some() {
            self.t += dt;
            return Ok(());
        }
        let d = self.spec.dim;
        let nd = self.spec.noise_dim;
        let mut b = vec![0.0; d];
        (self.spec.drift)(&self.x, &mut b);
        let mut sig = vec![0.0; d * nd];
        (self.spec.diffusion)(&self.x, &mut sig);
        // Frozen intensities at the step start.
        let lambdas: Vec<f64> = self.spec.jumps.iter().map(|s| (s.intensity)(&self.x)).collect();

        let sqdt = dt.sqrt();
        let xi: Vec<f64> = (0..nd).map(|_| StandardNormal.sample(&mut self.rng_diff)).collect();
        for i in 0..d {
            let mut inc = b[i] * dt;
            for m in 0..nd {
                inc += sig[i * nd + m] * sqdt * xi[m];
            }
            self.x[i] += inc;
            self.cont[i] += inc;
        }
        self.apply_policies();

        for (si, source) in self.spec.jumps.iter().enumerate() {
            let lam = lambdas[si];
            if !(lam.is_finite() && lam >= 0.0) {
                return Err(Error::Contract(format!(
                    "jump source `{}` has invalid intensity {lam}",
                    source.name
                )));
            }
            if lam * dt <= 0.0 {
                continue;
            }
            let count = Poisson::new(lam * dt)
                .map_err(|e| Error::Contract(format!("poisson: {e}")))?
                .sample(&mut self.rng_jump) as usize;
            for _ in 0..count {
                let mark = (source.mark)(&mut self.rng_jump);
                let mut dx = vec![0.0; d];
                (source.apply)(&self.x, mark, &mut dx);
                let pre = self.log.is_some().then(|| self.x.clone());
                for i in 0..d {
                    self.x[i] += dx[i];
                    self.jump_acc[i] += dx[i];
                }
                self.apply_policies();
                if let (Some(log), Some(pre)) = (self.log.as_mut(), pre) {
                    log.push(JumpRecord {
                        t: self.t,
                        source: source.name.clone(),
                        mark,
                        pre,
                        post: self.x.clone(),
                    });
                }
            }
        }

        self.t += dt;
        self.check_explosion();
        if self.x.iter().any(|v| !v.is_finite()) {
            let mut last = self.x.clone();
            for (i, v) in last.iter_mut().enumerate() {
                if !v.is_finite() {
                    *v = self.cont[i];
                }
            }
            return Err(Error::Blowup { t: self.t, state: last });
        }
        Ok(())
    }
}

/// Integrates the spec from `x0` to horizon `T`, recording every step.
pub fn integrate(
    spec: &SdeSpec,
    x0: &[f64],
    t_horizon: f64,
    dt: f64,
    rng: &mut impl Rng,
) -> Result<JumpDiffPath> {
    if dt <= 0.0 {
        return Err(Error::config("dt", "dt must be positive"));
    }
    let mut st = Stepper::new(spec, x0, rng, true)?;
    st.apply_policies();
    st.check_explosion();
    let steps = (t_horizon / dt).ceil() as usize;
    let mut t = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    t.push(0.0);
    states.push(st.x.clone());
    for k in 0..steps {
        let step_dt = (t_horizon - k as f64 * dt).min(dt);
        if step_dt <= 0.0 {
            break;
        }
        st.step(step_dt)?;
        t.push(st.t);
        states.push(st.x.clone());
    }
    Ok(JumpDiffPath {
        t,
        states,
        jumps: st.log.take().unwrap_or_default(),
        explosion_time: st.exploded,
        continuous_sum: st.cont,
        jump_sum: st.jump_acc,
        adjust_sum: st.adjust,
    })
}

/// Lean integration recording only the states at `ts` (sorted, within
/// [0, max]); returns the marginals and the explosion time, if any.
pub fn integrate_marginals(
    spec: &SdeSpec,
    x0: &[f64],
    ts: &[f64],
    dt: f64,
    rng: &mut impl Rng,
) -> Result<(Vec<Vec<f64>>, Option<f64>)> {
    if dt <= 0.0 {
        return Err(Error::config("dt", "dt must be positive"));
    }
    let horizon = ts.last().copied().unwrap_or(0.0);
    let mut st = Stepper::new(spec, x0, rng, false)?;
    st.apply_policies();
    st.check_explosion();
    let mut out = Vec::with_capacity(ts.len());
    let mut idx = 0;
    while idx < ts.len() && ts[idx] <= 0.0 {
        out.push(st.x.clone());
        idx += 1;
    }
    let steps = (horizon / dt).ceil() as usize;
    for k in 0..steps {
        let step_dt = (horizon - k as f64 * dt).min(dt);
        if step_dt <= 0.0 {
            break;
        }
        st.step(step_dt)?;
        while idx < ts.len() && ts[idx] <= st.t + 1e-12 {
            out.push(st.x.clone());
            idx += 1;
        }
    }
    while idx < ts.len() {
        out.push(st.x.clone());
        idx += 1;
    }
    Ok((out, st.exploded))
}

/// Integrates a Wright-Fisher limiting spec from population fraction `z0`
/// (walk coordinate starts at 0).
pub fn integrate_wf(
    spec: &SdeSpec,
    z0: f64,
    t_horizon: f64,
    dt: f64,
    rng: &mut impl Rng,
) -> Result<JumpDiffPath> {
    integrate(spec, &[z0, 0.0], t_horizon, dt, rng)
}

/// Integrates a branching limiting spec (Z form) from mass `z0`.
pub fn integrate_bpile(
    spec: &SdeSpec,
    z0: f64,
    t_horizon: f64,
    dt: f64,
    rng: &mut impl Rng,
) -> Result<JumpDiffPath> {
    integrate(spec, &[z0, 0.0], t_horizon, dt, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use crate::stats;

    fn constant_spec(b: Vec<f64>) -> SdeSpec {
        let d = b.len();
        SdeSpec {
            dim: d,
            noise_dim: d,
            drift: Arc::new(move |_x, out| out.copy_from_slice(&b)),
            diffusion: Arc::new(move |_x, out| out.iter_mut().for_each(|v| *v = 0.0)),
            jumps: vec![],
            domain: vec![CoordPolicy::Free; d],
            explosion: None,
            discarded_jump_var: 0.0,
        }
    }

    #[test]
    fn zero_spec_constant_path() {
        let spec = constant_spec(vec![0.0, 0.0]);
        let mut rng = stream_rng(30, 0);
        let p = integrate(&spec, &[1.5, -2.0], 1.0, 0.01, &mut rng).unwrap();
        for s in &p.states {
            assert_eq!(s, &vec![1.5, -2.0]);
        }
        assert!(p.jumps.is_empty());
        assert!(p.explosion_time.is_none());
    }

    #[test]
    fn pure_drift_is_exact_for_euler() {
        let spec = constant_spec(vec![0.7]);
        let mut rng = stream_rng(31, 0);
        let p = integrate(&spec, &[0.2], 2.0, 0.01, &mut rng).unwrap();
        let last = p.states.last().unwrap()[0];
        assert!((last - (0.2 + 0.7 * 2.0)).abs() < 1e-12);
    }

    #[test]
    fn feller_first_moment() {
        // dZ = alpha Z dt + sigma sqrt(Z) dB: E[Z_T] = z0 e^{alpha T}.
        let (alpha, sigma, z0, t) = (0.5, 0.4, 1.0, 1.0);
        let spec = SdeSpec {
            dim: 1,
            noise_dim: 1,
            drift: Arc::new(move |x, out| out[0] = alpha * x[0]),
            diffusion: Arc::new(move |x, out| out[0] = sigma * x[0].max(0.0).sqrt()),
            jumps: vec![],
            domain: vec![CoordPolicy::AbsorbBelow { level: 0.0 }],
            explosion: None,
            discarded_jump_var: 0.0,
        };
        let vals = stats::indexed_tasks(20_000, 32, 0, true, |_, rng| {
            let (m, _) = integrate_marginals(&spec, &[z0], &[t], 1e-3, rng).unwrap();
            m[0][0]
        });
        let (mean, se) = stats::mean_stderr(&vals);
        let expect = z0 * (alpha * t as f64).exp();
        assert!((mean - expect).abs() < 3.0 * se + 2e-3, "mean {mean} vs {expect} (se {se})");
    }

    #[test]
    fn pure_jump_matches_compound_poisson_law() {
        // lambda const, jump size const: terminal value = step * Poisson(lam T).
        let (lam, size, t) = (2.0, 0.5, 1.0);
        let spec = SdeSpec {
            dim: 1,
            noise_dim: 1,
            drift: Arc::new(|_x, out| out[0] = 0.0),
            diffusion: Arc::new(|_x, out| out[0] = 0.0),
            jumps: vec![JumpSourceSpec {
                name: "j".into(),
                intensity: Arc::new(move |_x| lam),
                mark: Arc::new(move |_rng| size),
                apply: Arc::new(|_x, mark, dx| dx[0] = mark),
            }],
            domain: vec![CoordPolicy::Free],
            explosion: None,
            discarded_jump_var: 0.0,
        };
        let sim: Vec<f64> = stats::indexed_tasks(8000, 33, 0, true, |_, rng| {
            let (m, _) = integrate_marginals(&spec, &[0.0], &[t], 1e-2, rng).unwrap();
            m[0][0]
        });
        // Oracle: direct compound-Poisson simulation.
        let oracle: Vec<f64> = stats::indexed_tasks(8000, 34, 1 << 20, true, |_, rng| {
            let k = rand_distr::Poisson::new(lam * t).unwrap().sample(rng);
            k * size
        });
        let (_, p) = stats::ks2(&sim, &oracle);
        assert!(p > 0.01, "KS p = {p}");
    }

    #[test]
    fn jump_accounting_reconstructs_terminal_state() {
        let (lam, t) = (3.0, 1.0);
        let spec = SdeSpec {
            dim: 1,
            noise_dim: 1,
            drift: Arc::new(|x, out| out[0] = 0.3 - 0.1 * x[0]),
            diffusion: Arc::new(|_x, out| out[0] = 0.2),
            jumps: vec![JumpSourceSpec {
                name: "j".into(),
                intensity: Arc::new(move |_x| lam),
                mark: Arc::new(|rng: &mut ChaCha8Rng| rng.random::<f64>()),
                apply: Arc::new(|_x, mark, dx| dx[0] = mark - 0.5),
            }],
            domain: vec![CoordPolicy::Free],
            explosion: None,
            discarded_jump_var: 0.0,
        };
        let mut rng = stream_rng(35, 0);
        let p = integrate(&spec, &[1.0], t, 1e-3, &mut rng).unwrap();
        let rebuilt = 1.0 + p.continuous_sum[0] + p.jump_sum[0] + p.adjust_sum[0];
        let terminal = p.states.last().unwrap()[0];
        assert!((rebuilt - terminal).abs() < 1e-10, "{rebuilt} vs {terminal}");
        assert_eq!(
            p.jumps.len(),
            p.jumps.iter().filter(|r| r.source == "j").count()
        );
    }

    #[test]
    fn cemetery_is_permanent() {
        // Super-linear growth with an explosion threshold.
        let spec = SdeSpec {
            dim: 1,
            noise_dim: 1,
            drift: Arc::new(|x, out| out[0] = x[0] * x[0]),
            diffusion: Arc::new(|_x, out| out[0] = 0.0),
            jumps: vec![],
            domain: vec![CoordPolicy::Free],
            explosion: Some(ExplosionRule::Above { coord: 0, threshold: 1e6 }),
            discarded_jump_var: 0.0,
        };
        let mut rng = stream_rng(36, 0);
        let p = integrate(&spec, &[2.0], 5.0, 1e-4, &mut rng).unwrap();
        let te = p.explosion_time.expect("should explode");
        // ODE blow-up time for dz = z² from 2 is 0.5.
        assert!((te - 0.5).abs() < 0.025, "explosion at {te}");
        // After the cemetery the recorded state never changes.
        let at = p.t.iter().position(|&t| t >= te).unwrap();
        let frozen = p.states[at].clone();
        for s in &p.states[at..] {
            assert_eq!(s, &frozen);
        }
    }

    #[test]
    fn weak_error_decreases_when_dt_halves() {
        let (alpha, sigma, z0, t) = (0.8, 0.5, 1.0, 1.0);
        let spec = SdeSpec {
            dim: 1,
            noise_dim: 1,
            drift: Arc::new(move |x, out| out[0] = alpha * x[0]),
            diffusion: Arc::new(move |x, out| out[0] = sigma * x[0].max(0.0).sqrt()),
            jumps: vec![],
            domain: vec![CoordPolicy::AbsorbBelow { level: 0.0 }],
            explosion: None,
            discarded_jump_var: 0.0,
        };
        let expect = z0 * (alpha * t as f64).exp();
        let mut errs = Vec::new();
        for (li, dt) in [4e-2, 2e-2, 1e-2].into_iter().enumerate() {
            let vals = stats::indexed_tasks(200_000, 37, (li as u64) << 32, true, |_, rng| {
                let (m, _) = integrate_marginals(&spec, &[z0], &[t], dt, rng).unwrap();
                m[0][0]
            });
            let (mean, _) = stats::mean_stderr(&vals);
            errs.push((mean - expect).abs());
        }
        // Weak order >= 1 up to MC noise: allow adjacent equality within noise.
        assert!(
            errs[2] < errs[0],
            "weak errors did not decrease: {errs:?}"
        );
    }
}
