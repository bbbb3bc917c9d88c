//! Coupled simulation of a discrete chain and its limiting jump-diffusion.
//!
//! Both simulators are driven by shared uniforms: the chain samples its
//! binomial counts through the exact inverse CDF, the diffusion receives
//! the matching normal quantiles, environment draws share the Gaussian and
//! jump drivers, and demographic jump events share their clocks and marks.
//! Each marginal law is exactly what the uncoupled simulators produce (the
//! routing is measure-preserving on each side); only the joint law changes.
//! Wasserstein distances between the paired empirical marginals therefore
//! estimate the same population quantity as independent sampling, with the
//! common sampling fluctuations cancelled.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::branching::BpSim;
use crate::error::Result;
use crate::levy::{EnvSampler, JumpComponent};
use crate::scenario::{ModelBlock, Scenario};
use crate::sde::{CoordPolicy, ExplosionRule, SdeSpec};
use crate::special::{binom_inv_cdf, norm_inv_cdf, poisson_inv_cdf};
use crate::stats;
use crate::wf::WfSim;

/// Marginals of one coupled batch: outer index is the t-grid position.
pub struct CoupledBatch {
    pub disc_pop: Vec<Vec<f64>>,
    pub disc_env: Vec<Vec<f64>>,
    pub sde_pop: Vec<Vec<f64>>,
    pub sde_env: Vec<Vec<f64>>,
    pub expl_disc: u64,
    pub expl_sde: u64,
}

/// Environment draw shared between the chain and the integrator.
struct SharedEnv {
    /// The chain's environment value E^N.
    e: f64,
    /// Standard normal for the diffusion's environment channel.
    zeta: f64,
    /// Marks of the integrator's environment jumps in this step.
    sde_jumps: Vec<f64>,
}

struct EnvCoupler {
    lambda_sde: f64,
    share_marks: bool,
}

impl EnvCoupler {
    fn new(scn: &Scenario, spec: &SdeSpec) -> Self {
        let lambda_sde = spec
            .jumps
            .iter()
            .find(|s| s.name == "env")
            .map(|s| (s.intensity)(&[0.0, 0.0]))
            .unwrap_or(0.0);
        // Atom-only measures have identical restricted laws at every cutoff,
        // so the jump marks themselves can be shared.
        let share_marks = scn
            .env
            .nu
            .components
            .iter()
            .all(|c| matches!(c, JumpComponent::Atom { .. }));
        EnvCoupler { lambda_sde, share_marks }
    }

    fn draw(
        &self,
        env: &EnvSampler,
        spec: &SdeSpec,
        dt: f64,
        rng: &mut ChaCha8Rng,
    ) -> SharedEnv {
        let mark_fn = spec.jumps.iter().find(|s| s.name == "env").map(|s| s.mark.clone());
        let p_jump = env.jump_prob();
        let needs_branch = p_jump > 0.0 || self.lambda_sde > 0.0;
        let u = if needs_branch { rng.random::<f64>() } else { 1.0 };
        let n_sde = if self.lambda_sde > 0.0 {
            poisson_inv_cdf(self.lambda_sde * dt, 1.0 - u) as usize
        } else {
            0
        };
        let mut sde_jumps = Vec::new();
        let (e, zeta) = if p_jump > 0.0 && u < p_jump {
            let w = env.draw_jump(rng);
            if n_sde >= 1 {
                if self.share_marks {
                    sde_jumps.push(w);
                } else if let Some(mf) = &mark_fn {
                    sde_jumps.push(mf(rng));
                }
                for _ in 1..n_sde {
                    if let Some(mf) = &mark_fn {
                        sde_jumps.push(mf(rng));
                    }
                }
            }
            (w, StandardNormal.sample(rng))
        } else {
            for _ in 0..n_sde {
                if let Some(mf) = &mark_fn {
                    sde_jumps.push(mf(rng));
                }
            }
            if env.diffusive_scale() == 0.0 {
                (env.diffusive_center(), StandardNormal.sample(rng))
            } else {
                // The first normal is shared; the chain truncates it, the
                // diffusion keeps the exact draw.
                let z0: f64 = StandardNormal.sample(rng);
                let mut z_env = z0;
                while z_env.abs() > env.tau() {
                    z_env = StandardNormal.sample(rng);
                }
                let mut e = env.diffusive_center() + env.diffusive_scale() * z_env;
                while e <= -1.0 {
                    e = env.draw(rng);
                }
                (e, z0)
            }
        };
        SharedEnv { e, zeta, sde_jumps }
    }
}

/// One Euler step of the spec with externally supplied noise and jump marks.
fn sde_step(
    spec: &SdeSpec,
    x: &mut [f64],
    dt: f64,
    xi: &[f64],
    env_jumps: &[f64],
    demo_jumps: &[f64],
) {
    let d = spec.dim;
    let nd = spec.noise_dim;
    let mut b = vec![0.0; d];
    (spec.drift)(x, &mut b);
    let mut sig = vec![0.0; d * nd];
    (spec.diffusion)(x, &mut sig);
    let sqdt = dt.sqrt();
    for i in 0..d {
        let mut inc = b[i] * dt;
        for mchan in 0..nd {
            inc += sig[i * nd + mchan] * sqdt * xi[mchan];
        }
        x[i] += inc;
    }
    apply_policies(spec, x);
    for (name, marks) in [("env", env_jumps), ("demo", demo_jumps)] {
        if marks.is_empty() {
            continue;
        }
        if let Some(src) = spec.jumps.iter().find(|s| s.name == name) {
            for &mk in marks {
                let mut dx = vec![0.0; d];
                (src.apply)(x, mk, &mut dx);
                for i in 0..d {
                    x[i] += dx[i];
                }
                apply_policies(spec, x);
            }
        }
    }
}

fn apply_policies(spec: &SdeSpec, x: &mut [f64]) {
    for (i, p) in spec.domain.iter().enumerate() {
        x[i] = match *p {
            CoordPolicy::Free => x[i],
            CoordPolicy::Clamp { lo, hi } => x[i].clamp(lo, hi),
            CoordPolicy::AbsorbBelow { level } => {
                if x[i] < level {
                    level
                } else {
                    x[i]
                }
            }
        };
    }
}

fn exploded(spec: &SdeSpec, x: &[f64]) -> bool {
    match spec.explosion {
        None => false,
        Some(ExplosionRule::Above { coord, threshold }) => x[coord] > threshold,
        Some(ExplosionRule::Below { coord, threshold }) => x[coord] < threshold,
    }
}

/// One coupled batch of `m` paths at scale `n`; replicate `rep` fixes the
/// RNG stream block (shared across N for common random numbers).
pub fn coupled_marginals(
    scn: &Scenario,
    n: u64,
    m: usize,
    rep: u64,
    ctx: crate::drivers::ExecCtx,
) -> Result<CoupledBatch> {
    let spec = match &scn.model {
        ModelBlock::Wf { selection, .. } => crate::wf::wf_limit_sde_spec(&scn.env, *selection, 1e-3)?,
        ModelBlock::Bp { .. } => {
            let (demo, g) = scn.bp_targets()?;
            crate::branching::bpile_z_spec(&scn.env, &demo, &g, 1e-3, scn.bp_spec()?.z_max)?
        }
    };
    let coupler = EnvCoupler::new(scn, &spec);
    let nt = scn.t_grid.len();

    enum Chain {
        Wf(WfSim),
        Bp(BpSim),
    }
    let chain = match &scn.model {
        ModelBlock::Wf { .. } => Chain::Wf(scn.wf_model(n)?.prepare()?),
        ModelBlock::Bp { .. } => Chain::Bp(scn.bp_spec()?.at(n).prepare()?),
    };
    let v_n = scn.vn.eval(n);
    let dt = 1.0 / v_n;
    let horizon = *scn.t_grid.last().unwrap();
    let steps = (v_n * horizon).floor() as u64;
    let nf = n as f64;
    let z0 = crate::drivers::initial_mass(scn);

    struct PathOut {
        disc_pop: Vec<f64>,
        disc_env: Vec<f64>,
        sde_pop: Vec<f64>,
        sde_env: Vec<f64>,
        expl_disc: bool,
        expl_sde: bool,
    }

    let spec_ref = &spec;
    let chain_ref = &chain;
    let coupler_ref = &coupler;
    let per: Vec<PathOut> = stats::indexed_tasks(
        m,
        scn.seed ^ ctx.seed,
        (13u64 << 56) | (rep << 40),
        ctx.parallel,
        move |_, rng| {
            let mut disc_pop = Vec::with_capacity(nt);
            let mut disc_env = Vec::with_capacity(nt);
            let mut sde_pop = Vec::with_capacity(nt);
            let mut sde_env = Vec::with_capacity(nt);
            let mut grid_idx = 0usize;

            // Discrete state.
            let mut count = (z0 * nf).round() as u64;
            let mut s_walk = 0.0;
            let mut disc_exploded = false;
            // SDE state.
            let mut x = [z0, 0.0];
            let mut sde_exploded = false;

            let (env_sampler, wf) = match chain_ref {
                Chain::Wf(sim) => (&sim.env, true),
                Chain::Bp(sim) => (&sim.env, false),
            };

            for k in 0..=steps {
                while grid_idx < nt && (v_n * scn.t_grid[grid_idx]).floor() as u64 == k {
                    let dz = if disc_exploded { f64::INFINITY } else { count as f64 / nf };
                    disc_pop.push(if wf {
                        dz
                    } else if dz.is_finite() {
                        (-dz).exp()
                    } else {
                        0.0
                    });
                    disc_env.push(s_walk);
                    sde_pop.push(if wf {
                        x[0]
                    } else if sde_exploded {
                        0.0
                    } else {
                        (-x[0]).exp()
                    });
                    sde_env.push(x[1]);
                    grid_idx += 1;
                }
                if k == steps {
                    break;
                }

                let shared = coupler_ref.draw(env_sampler, spec_ref, dt, rng);
                let e = shared.e;

                // Reproduction coupling: build the chain's counts through
                // inverse CDFs and hand the diffusion the matching normals.
                let mut xi_d = 0.0;
                let mut demo_marks: Vec<f64> = Vec::new();
                match chain_ref {
                    Chain::Wf(sim) => {
                        if !disc_exploded {
                            let u_rep = rng.random::<f64>();
                            let p = sim.selection.eval(count as f64 / nf, e).clamp(0.0, 1.0);
                            count = binom_inv_cdf(n, p, u_rep);
                            xi_d = norm_inv_cdf(u_rep.clamp(1e-300, 1.0 - 1e-16));
                            s_walk += e;
                        }
                    }
                    Chain::Bp(sim) => {
                        if !disc_exploded {
                            s_walk += e;
                            match coupled_bp_step(sim, count, n, v_n, e, rng, &mut xi_d, &mut demo_marks) {
                                Some(c) if (c as f64) <= sim.max_count as f64 => count = c as u64,
                                _ => disc_exploded = true,
                            }
                        }
                    }
                }

                if !sde_exploded {
                    let xi = [xi_d, shared.zeta];
                    sde_step(spec_ref, &mut x, dt, &xi, &shared.sde_jumps, &demo_marks);
                    if exploded(spec_ref, &x) || x.iter().any(|v| !v.is_finite()) {
                        sde_exploded = true;
                    }
                }
            }
            while grid_idx < nt {
                let dz = if disc_exploded { f64::INFINITY } else { count as f64 / nf };
                disc_pop.push(if wf {
                    dz
                } else if dz.is_finite() {
                    (-dz).exp()
                } else {
                    0.0
                });
                disc_env.push(s_walk);
                sde_pop.push(if wf {
                    x[0]
                } else if sde_exploded {
                    0.0
                } else {
                    (-x[0]).exp()
                });
                sde_env.push(x[1]);
                grid_idx += 1;
            }
            PathOut {
                disc_pop,
                disc_env,
                sde_pop,
                sde_env,
                expl_disc: disc_exploded,
                expl_sde: sde_exploded,
            }
        },
    );

    let mut out = CoupledBatch {
        disc_pop: vec![Vec::with_capacity(m); nt],
        disc_env: vec![Vec::with_capacity(m); nt],
        sde_pop: vec![Vec::with_capacity(m); nt],
        sde_env: vec![Vec::with_capacity(m); nt],
        expl_disc: 0,
        expl_sde: 0,
    };
    for p in per {
        for ti in 0..nt {
            out.disc_pop[ti].push(p.disc_pop[ti]);
            out.disc_env[ti].push(p.disc_env[ti]);
            out.sde_pop[ti].push(p.sde_pop[ti]);
            out.sde_env[ti].push(p.sde_env[ti]);
        }
        out.expl_disc += u64::from(p.expl_disc);
        out.expl_sde += u64::from(p.expl_sde);
    }
    Ok(out)
}

/// One coupled reproduction step of the branching chain. Returns the new
/// count (None on arithmetic overflow), fills `xi_d` with an exact standard
/// normal correlated with the demographic noise, and `demo_marks` with the
/// shared heavy-event marks.
fn coupled_bp_step(
    sim: &BpSim,
    count: u64,
    n: u64,
    v_n: f64,
    e: f64,
    rng: &mut ChaCha8Rng,
    xi_d: &mut f64,
    demo_marks: &mut Vec<f64>,
) -> Option<u128> {
    use crate::branching::ReproLaw;
    let nf = n as f64;
    if count == 0 {
        *xi_d = StandardNormal.sample(rng);
        return Some(0);
    }
    let clamp_u = |u: f64| u.clamp(1e-300, 1.0 - 1e-16);
    match &sim.repro {
        ReproLaw::Unit => {
            *xi_d = StandardNormal.sample(rng);
            Some(count as u128)
        }
        ReproLaw::LogisticFeller(law) => {
            let (p0, _p1, p2) = law.probs(count, n, e).ok()?;
            let u0 = rng.random::<f64>();
            let u2 = rng.random::<f64>();
            let n0 = binom_inv_cdf(count, p0, u0);
            let n2 = binom_inv_cdf(count - n0, (p2 / (1.0 - p0)).clamp(0.0, 1.0), u2);
            *xi_d = (norm_inv_cdf(clamp_u(u2)) - norm_inv_cdf(clamp_u(u0)))
                / std::f64::consts::SQRT_2;
            Some((count - n0 + n2) as u128)
        }
        ReproLaw::CoopGw(law) => {
            let (p0, _p1, p2) = law.base_probs(n).ok()?;
            let u0 = rng.random::<f64>();
            let u2 = rng.random::<f64>();
            let n0 = binom_inv_cdf(count, p0, u0);
            let n2 = binom_inv_cdf(count - n0, (p2 / (1.0 - p0)).clamp(0.0, 1.0), u2);
            *xi_d = (norm_inv_cdf(clamp_u(u2)) - norm_inv_cdf(clamp_u(u0)))
                / std::f64::consts::SQRT_2;
            let boost =
                binom_inv_cdf(count, law.boost_prob(count as f64 / nf, v_n), rng.random::<f64>());
            let heavy = coupled_heavy(&law.heavy, count, n, rng, demo_marks)?;
            Some((count - n0 + n2) as u128 + boost as u128 + heavy)
        }
        ReproLaw::Appendix(law) => {
            let m = law.mean(count, n, e).ok()?;
            let floor = m.floor();
            let frac_hi = m - floor;
            let u_rep = rng.random::<f64>();
            let hi = binom_inv_cdf(count, frac_hi, u_rep);
            *xi_d = norm_inv_cdf(clamp_u(u_rep));
            let a_total = (count as u128).checked_mul(floor as u128)?.checked_add(hi as u128)?;
            let heavy = coupled_heavy(&law.heavy, count, n, rng, demo_marks)?;
            a_total.checked_add(heavy)
        }
    }
}

/// Heavy-tail events with the jump clock and marks shared with the
/// integrator's demographic source.
fn coupled_heavy(
    heavy: &crate::branching::HeavyTail,
    count: u64,
    n: u64,
    rng: &mut ChaCha8Rng,
    demo_marks: &mut Vec<f64>,
) -> Option<u128> {
    if heavy.atoms.is_empty() {
        return Some(0);
    }
    let q = heavy.event_prob(n);
    let u = rng.random::<f64>();
    let events = binom_inv_cdf(count, q, u);
    let mut acc: u128 = 0;
    let total: f64 = heavy.atoms.iter().map(|a| a.1).sum();
    for _ in 0..events {
        let mut pick = rng.random::<f64>() * total;
        let mut r = heavy.atoms[heavy.atoms.len() - 1].0;
        for a in &heavy.atoms {
            if pick < a.1 {
                r = a.0;
                break;
            }
            pick -= a.1;
        }
        demo_marks.push(r);
        acc = acc.checked_add((n as f64 * r).round() as u128)?;
    }
    Some(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drivers::ExecCtx;
    use crate::scenario;

    fn ctx() -> ExecCtx {
        ExecCtx { seed: 0, parallel: true }
    }

    #[test]
    fn coupled_marginal_laws_match_uncoupled() {
        // The coupled chain sample must be statistically indistinguishable
        // from the plain simulator's sample (KS), and likewise the SDE side.
        let mut scn = scenario::wf_example_p();
        scn.n_list = vec![300];
        scn.replicates = 4000;
        let batch = coupled_marginals(&scn, 300, 4000, 0, ctx()).unwrap();

        let sim = scn.wf_model(300).unwrap().prepare().unwrap();
        let plain: Vec<f64> = stats::indexed_tasks(4000, 999, 0, true, |_, rng| {
            sim.simulate(&scn.t_grid, rng).unwrap().z[1]
        });
        let (_, p) = stats::ks2(&batch.disc_pop[1], &plain);
        assert!(p > 0.001, "discrete coupled vs plain KS p = {p}");

        let spec = crate::wf::wf_limit_sde_spec(&scn.env, crate::wf::SelectionFn::Example, 1e-3).unwrap();
        let plain_sde: Vec<f64> = stats::indexed_tasks(4000, 998, 0, true, |_, rng| {
            let (mp, _) =
                crate::sde::integrate_marginals(&spec, &[0.3, 0.0], &scn.t_grid, 1.0 / 300.0, rng)
                    .unwrap();
            mp[1][0]
        });
        let (_, p2) = stats::ks2(&batch.sde_pop[1], &plain_sde);
        assert!(p2 > 0.001, "sde coupled vs plain KS p = {p2}");
    }

    #[test]
    fn coupling_shrinks_the_distance() {
        // The whole point: paired samples track each other far below the
        // independent-sampling floor.
        let mut scn = scenario::wf_example_p();
        scn.replicates = 2000;
        let batch = coupled_marginals(&scn, 2000, 2000, 0, ctx()).unwrap();
        let d = stats::wasserstein1(&batch.disc_pop[1], &batch.sde_pop[1]);
        // Independent samples of this size sit at ~4e-3.
        assert!(d < 2.5e-3, "coupled distance {d}");
    }
}
