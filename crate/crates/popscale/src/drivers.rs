//! Experiment drivers: characteristic convergence, tail (H0) checks,
//! increment functionals, law convergence and explosion studies.
//!
//! All randomness derives from (scenario seed, task index); reductions are
//! fixed-order, so serial and parallel runs emit identical reports.

use std::collections::HashMap;

use crate::branching::{g_n_csbp, g_limit_csbp, BpSim, EnvMode};
use crate::error::{Error, Result};
use crate::report::*;
use crate::scenario::{ModelBlock, Scenario};
use crate::sde::{integrate_marginals, SdeSpec};
use crate::stats::{self, Banded};
use crate::testfn::TestFunction;
use crate::wf::{g_limit_wf, g_n_wf, GnMode, WfSim};

#[derive(Clone, Copy, Debug)]
pub struct ExecCtx {
    pub seed: u64,
    pub parallel: bool,
}

/// Small-jump cutoff for the limiting SDE builders.
const SDE_EPS: f64 = 1e-3;
const BOOTSTRAP_RESAMPLES: usize = 500;

fn offset(salt: u64, block: u64) -> u64 {
    (salt << 56) | (block << 32)
}

// ---------------------------------------------------------------------------
// Characteristic convergence
// ---------------------------------------------------------------------------

/// Test functions a scenario exercises: H_{k,l} rows from `test_functions`
/// plus, for branching scenarios, one H_l row per distinct l >= 1.
fn scenario_test_functions(scn: &Scenario) -> Vec<TestFunction> {
    let mut out = Vec::new();
    if scn.is_wf() {
        for ke in &scn.test_functions {
            out.push(TestFunction::Wf { k: ke.k, ell: ke.ell });
        }
    } else {
        for ke in &scn.test_functions {
            if ke.k >= 1 {
                out.push(TestFunction::CsbpKl { k: ke.k, ell: ke.ell });
            }
        }
        let mut ells: Vec<f64> = scn.test_functions.iter().map(|ke| ke.ell).filter(|&l| l >= 1.0).collect();
        ells.dedup_by(|a, b| a == b);
        for ell in ells {
            if !out.iter().any(|h| matches!(h, TestFunction::CsbpL { ell: e } if *e == ell)) {
                out.push(TestFunction::CsbpL { ell });
            }
        }
    }
    out
}

fn tf_key(h: &TestFunction) -> (u32, f64) {
    match *h {
        TestFunction::Wf { k, ell } | TestFunction::CsbpKl { k, ell } => (k, ell),
        TestFunction::CsbpL { ell } => (0, ell),
    }
}

/// Grid-sup residual |Ĝ^N(H) - G(H)| per (H, N), with the prelimit
/// characteristic evaluated exactly (reproduction by Laplace transform,
/// environment by quadrature).
pub fn run_characteristic_convergence(scn: &Scenario, ctx: ExecCtx) -> Result<CharacteristicReport> {
    let fns = scenario_test_functions(scn);
    if fns.is_empty() {
        return Err(Error::config("test_functions", "no test functions configured"));
    }
    let mut rows = Vec::new();
    let mut sup_rows = Vec::new();
    if scn.is_wf() {
        let selection = match &scn.model {
            ModelBlock::Wf { selection, .. } => *selection,
            _ => unreachable!(),
        };
        for h in &fns {
            for &n in &scn.n_list {
                let sim = scn.wf_model(n)?.prepare()?;
                let nf = n as f64;
                let mut sup = CharSupRow { n, j_or_k: tf_key(h).0, ell: tf_key(h).1, sup_residual: 0.0, sup_stderr: 0.0 };
                for &z in &scn.z_grid {
                    let zr = (z * nf).round() / nf;
                    let mut rng = crate::rng::stream_rng(ctx.seed, 0);
                    let est = g_n_wf(&sim, zr, h, GnMode::EnvExact, &mut rng)?;
                    let target = g_limit_wf(zr, h, &scn.env, selection)?;
                    let resid = (est.value - target).abs();
                    rows.push(CharPointRow {
                        n,
                        j_or_k: tf_key(h).0,
                        ell: tf_key(h).1,
                        z: zr,
                        estimate: est.value,
                        stderr: est.stderr,
                        target,
                        abs_residual: resid,
                    });
                    if resid > sup.sup_residual {
                        sup.sup_residual = resid;
                        sup.sup_stderr = est.stderr;
                    }
                }
                sup_rows.push(sup);
            }
        }
    } else {
        let spec = scn.bp_spec()?;
        let (demo, g) = scn.bp_targets()?;
        for h in &fns {
            for &n in &scn.n_list {
                let sim = spec.at(n).prepare()?;
                let nf = n as f64;
                let mut sup = CharSupRow { n, j_or_k: tf_key(h).0, ell: tf_key(h).1, sup_residual: 0.0, sup_stderr: 0.0 };
                for &z in &scn.z_grid {
                    let zr = (z * nf).round() / nf;
                    let mut rng = crate::rng::stream_rng(ctx.seed, 0);
                    let est = g_n_csbp(&sim, zr, h, EnvMode::Exact, &mut rng)?;
                    let target = g_limit_csbp(zr, h, &scn.env, &demo, &g)?;
                    let resid = (est.value - target).abs();
                    rows.push(CharPointRow {
                        n,
                        j_or_k: tf_key(h).0,
                        ell: tf_key(h).1,
                        z: zr,
                        estimate: est.value,
                        stderr: est.stderr,
                        target,
                        abs_residual: resid,
                    });
                    if resid > sup.sup_residual {
                        sup.sup_residual = resid;
                        sup.sup_stderr = est.stderr;
                    }
                }
                sup_rows.push(sup);
            }
        }
    }
    // Trend per test function across the N list.
    let mut all_dec = true;
    for h in &fns {
        let key = tf_key(h);
        let series: Vec<Banded> = sup_rows
            .iter()
            .filter(|r| (r.j_or_k, r.ell) == key)
            .map(|r| Banded {
                value: r.sup_residual,
                lo: r.sup_residual - 3.0 * r.sup_stderr,
                hi: r.sup_residual + 3.0 * r.sup_stderr,
            })
            .collect();
        if !stats::decreasing_within_bands(&series) {
            all_dec = false;
        }
    }
    Ok(CharacteristicReport { rows, sup_rows, all_trends_decreasing: all_dec })
}

// ---------------------------------------------------------------------------
// H0 tail check
// ---------------------------------------------------------------------------

/// Estimates sup_x G^N_x(1_{B(0,b)^c}) = sup_x v_N P(|increment| > b) for
/// each b and N by Monte Carlo over full transitions.
pub fn run_h0_check(scn: &Scenario, b_grid: &[f64], ctx: ExecCtx) -> Result<H0Report> {
    if b_grid.is_empty() || b_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::config("b_grid", "must be nonempty and strictly increasing"));
    }
    let m = scn.replicates;
    let nb = b_grid.len();
    let mut rows = Vec::new();
    for (ni, &n) in scn.n_list.iter().enumerate() {
        let nf = n as f64;
        // counts[z][b]
        let counts: Vec<Vec<u64>> = if scn.is_wf() {
            let sim = scn.wf_model(n)?.prepare()?;
            stats::indexed_tasks(scn.z_grid.len(), ctx.seed, offset(2, ni as u64), ctx.parallel, |zi, rng| {
                let z = (scn.z_grid[zi] * nf).round() / nf;
                let mut c = vec![0u64; nb];
                for _ in 0..m {
                    let (z2, e) = sim.step(z, rng).expect("wf step");
                    let norm = ((z2 - z).powi(2) + e * e).sqrt();
                    for (bi, &b) in b_grid.iter().enumerate() {
                        if norm > b {
                            c[bi] += 1;
                        }
                    }
                }
                c
            })
        } else {
            let spec = scn.bp_spec()?;
            let sim = spec.at(n).prepare()?;
            stats::indexed_tasks(scn.z_grid.len(), ctx.seed, offset(2, ni as u64), ctx.parallel, |zi, rng| {
                let z = (scn.z_grid[zi] * nf).round() / nf;
                let pop = (z * nf).round() as u64;
                let x1 = (-z).exp();
                let mut c = vec![0u64; nb];
                for _ in 0..m {
                    let (out, e) = sim.step(pop, rng).expect("bp step");
                    let x1n = match out {
                        crate::branching::StepOutcome::Alive(cnt) => (-(cnt as f64) / nf).exp(),
                        crate::branching::StepOutcome::Exploded => 0.0,
                    };
                    let norm = ((x1n - x1).powi(2) + e * e).sqrt();
                    for (bi, &b) in b_grid.iter().enumerate() {
                        if norm > b {
                            c[bi] += 1;
                        }
                    }
                }
                c
            })
        };
        let v_n = scn.vn.eval(n);
        for (bi, &b) in b_grid.iter().enumerate() {
            let mut sup = 0.0f64;
            let mut hi = 0.0f64;
            for zc in &counts {
                let est = v_n * zc[bi] as f64 / m as f64;
                let (_, whi) = stats::wilson_interval(zc[bi], m as u64);
                if est > sup || (est == sup && v_n * whi > hi) {
                    sup = est;
                    hi = v_n * whi;
                }
            }
            rows.push(H0Row { n, b, sup_estimate: sup, band_hi: hi });
        }
    }
    // Non-increasing in b, per N, within the upper bands.
    let mut flag = true;
    for &n in &scn.n_list {
        let series: Vec<&H0Row> = rows.iter().filter(|r| r.n == n).collect();
        for w in series.windows(2) {
            if w[1].sup_estimate > w[0].sup_estimate + (w[0].band_hi - w[0].sup_estimate).max(1e-12) {
                flag = false;
            }
        }
    }
    Ok(H0Report { rows, nonincreasing_in_b: flag })
}

// ---------------------------------------------------------------------------
// Increment functionals
// ---------------------------------------------------------------------------

enum SimKind {
    Wf(WfSim),
    Bp(BpSim),
}

/// Along one simulated trajectory: sup_{t <= T} |phi^N_t(H) - ∫_0^t
/// G_{X_{[v_N s]}}(H) ds| per N, with the prelimit and limiting values
/// evaluated exactly and cached per visited state.
pub fn run_increment_functional(
    scn: &Scenario,
    k: u32,
    ell: f64,
    t_horizon: f64,
    ctx: ExecCtx,
) -> Result<IncrementReport> {
    let mut rows = Vec::new();
    for (ni, &n) in scn.n_list.iter().enumerate() {
        let nf = n as f64;
        let v_n = scn.vn.eval(n);
        let steps = (v_n * t_horizon).floor() as u64;
        let mut rng = crate::rng::stream_rng(ctx.seed, offset(3, ni as u64));
        let (h, kind, mut state): (TestFunction, SimKind, u64) = if scn.is_wf() {
            let sim = scn.wf_model(n)?.prepare()?;
            let z0 = sim.z0;
            (TestFunction::Wf { k, ell }, SimKind::Wf(sim), (z0 * nf).round() as u64)
        } else {
            let spec = scn.bp_spec()?;
            let sim = spec.at(n).prepare()?;
            let z0 = sim.z0;
            (TestFunction::CsbpKl { k, ell }, SimKind::Bp(sim), (z0 * nf).round() as u64)
        };
        let wf_limit_ctx = if scn.is_wf() {
            match &scn.model {
                ModelBlock::Wf { selection, .. } => Some(*selection),
                _ => None,
            }
        } else {
            None
        };
        let bp_targets = if scn.is_wf() { None } else { Some(scn.bp_targets()?) };

        let mut cache: HashMap<u64, (f64, f64)> = HashMap::new();
        let mut eval = |count: u64, rng: &mut rand_chacha::ChaCha8Rng, kind: &SimKind| -> Result<(f64, f64)> {
            if let Some(v) = cache.get(&count) {
                return Ok(*v);
            }
            let z = count as f64 / nf;
            let pair = match kind {
                SimKind::Wf(sim) => {
                    let gn = g_n_wf(sim, z, &h, GnMode::EnvExact, rng)?.value;
                    let gl = g_limit_wf(z, &h, &scn.env, wf_limit_ctx.expect("wf"))?;
                    (gn, gl)
                }
                SimKind::Bp(sim) => {
                    let gn = g_n_csbp(sim, z, &h, EnvMode::Exact, rng)?.value;
                    let (demo, g) = bp_targets.as_ref().expect("bp");
                    let gl = g_limit_csbp(z, &h, &scn.env, demo, g)?;
                    (gn, gl)
                }
            };
            cache.insert(count, pair);
            Ok(pair)
        };

        let mut phi = 0.0; // phi^N_t(H) at t = k / v_N
        let mut integral = 0.0; // ∫_0^t G ds at t = k / v_N
        let mut sup = 0.0f64;
        let mut exploded = false;
        for _ in 0..steps {
            if exploded {
                break;
            }
            let (gn, gl) = eval(state, &mut rng, &kind)?;
            phi += gn / v_n;
            let next_integral = integral + gl / v_n;
            // sup over t in [k/v_N, (k+1)/v_N]: phi is a step function, the
            // integral is linear, so the extremes sit at the endpoints.
            sup = sup.max((phi - integral).abs()).max((phi - next_integral).abs());
            integral = next_integral;
            match &kind {
                SimKind::Wf(sim) => {
                    let (z2, _) = sim.step(state as f64 / nf, &mut rng)?;
                    state = (z2 * nf).round() as u64;
                }
                SimKind::Bp(sim) => {
                    let (out, _) = sim.step(state, &mut rng)?;
                    match out {
                        crate::branching::StepOutcome::Alive(c) => state = c,
                        crate::branching::StepOutcome::Exploded => exploded = true,
                    }
                }
            }
        }
        rows.push(IncrementRow { n, sup_discrepancy: sup });
    }
    let series: Vec<f64> = rows.iter().map(|r| r.sup_discrepancy).collect();
    let decreasing = stats::nonincreasing(&series, 1e-9);
    Ok(IncrementReport { k, ell, rows, decreasing })
}

// ---------------------------------------------------------------------------
// Law convergence
// ---------------------------------------------------------------------------

fn limiting_spec(scn: &Scenario) -> Result<SdeSpec> {
    if scn.is_wf() {
        let selection = match &scn.model {
            ModelBlock::Wf { selection, .. } => *selection,
            _ => unreachable!(),
        };
        crate::wf::wf_limit_sde_spec(&scn.env, selection, SDE_EPS)
    } else {
        let (demo, g) = scn.bp_targets()?;
        let z_max = scn.bp_spec()?.z_max;
        crate::branching::bpile_z_spec(&scn.env, &demo, &g, SDE_EPS, z_max)
    }
}

pub(crate) fn initial_mass(scn: &Scenario) -> f64 {
    match &scn.model {
        ModelBlock::Wf { z0, .. } | ModelBlock::Bp { z0, .. } => *z0,
    }
}

/// Wasserstein-1 comparison of discrete and limiting marginal laws per t,
/// in the natural coordinate for WF and the compactified coordinate e^{-z}
/// for branching models, plus the environment coordinate.
///
/// Distances are estimated on coupled samples: each replicate runs an
/// M-path batch of the chain and the integrator driven by shared uniforms
/// (marginal laws unchanged), so the common sampling fluctuations cancel
/// and the distance reflects the genuine N bias instead of the sampling
/// floor. The reported floor is the self-distance of two independent
/// (uncoupled) M-path SDE batches: the distance the comparison would show
/// if the chain law coincided with the SDE law under independent sampling.
pub fn run_law_convergence(scn: &Scenario, ctx: ExecCtx) -> Result<LawReport> {
    const LAW_REPLICATES: usize = 3;
    let m = scn.replicates;
    let nt = scn.t_grid.len();
    let n_max = *scn.n_list.last().unwrap();
    let spec = limiting_spec(scn)?;

    // Independent-sampling floor at the integrator's law.
    let dt_floor = 1.0 / scn.vn.eval(n_max);
    const FLOOR_PAIRS: usize = 3;
    let mut floor_pop = vec![vec![0.0; FLOOR_PAIRS]; nt];
    let mut floor_env = vec![vec![0.0; FLOOR_PAIRS]; nt];
    let mut expl_sde = 0u64;
    for r in 0..FLOOR_PAIRS {
        let (fa_pop, fa_env, ea) = sde_marginals_dt(scn, &spec, m, dt_floor, 16 + 2 * r as u64, ctx);
        let (fb_pop, fb_env, eb) = sde_marginals_dt(scn, &spec, m, dt_floor, 17 + 2 * r as u64, ctx);
        expl_sde += ea + eb;
        for ti in 0..nt {
            floor_pop[ti][r] = stats::wasserstein1(&fa_pop[ti], &fb_pop[ti]);
            floor_env[ti][r] = stats::wasserstein1(&fa_env[ti], &fb_env[ti]);
        }
    }

    let mut rows = Vec::new();
    let mut explosions_discrete = 0u64;
    for &n in scn.n_list.iter() {
        let mut d_pop = vec![vec![0.0; LAW_REPLICATES]; nt];
        let mut d_env = vec![vec![0.0; LAW_REPLICATES]; nt];
        for r in 0..LAW_REPLICATES {
            let batch = crate::coupled::coupled_marginals(scn, n, m, r as u64, ctx)?;
            explosions_discrete += batch.expl_disc;
            expl_sde += batch.expl_sde;
            for ti in 0..nt {
                d_pop[ti][r] = stats::wasserstein1(&batch.disc_pop[ti], &batch.sde_pop[ti]);
                d_env[ti][r] = stats::wasserstein1(&batch.disc_env[ti], &batch.sde_env[ti]);
            }
        }
        for ti in 0..nt {
            let t = scn.t_grid[ti];
            let (pm, _) = stats::mean_stderr(&d_pop[ti]);
            let (plo, phi) = stats::bootstrap_mean_band(
                &d_pop[ti],
                BOOTSTRAP_RESAMPLES,
                scn.seed ^ offset(7, n * nt as u64 + ti as u64),
            );
            let (fm, _) = stats::mean_stderr(&floor_pop[ti]);
            rows.push(LawRow { n, t, coord: "pop".into(), distance: pm, boot_lo: plo, boot_hi: phi, floor: fm });

            let (em, _) = stats::mean_stderr(&d_env[ti]);
            let (elo, ehi) = stats::bootstrap_mean_band(
                &d_env[ti],
                BOOTSTRAP_RESAMPLES,
                scn.seed ^ offset(8, n * nt as u64 + ti as u64),
            );
            let (fem, _) = stats::mean_stderr(&floor_env[ti]);
            rows.push(LawRow { n, t, coord: "env".into(), distance: em, boot_lo: elo, boot_hi: ehi, floor: fem });
        }
    }

    // Trend flags: the population coordinate must strictly decrease with
    // no band contradicting the decrease; the environment coordinate must
    // not significantly increase.
    let mut pop_decreasing = true;
    let mut env_not_increasing = true;
    let mut floor_factor = 0.0f64;
    for ti in 0..nt {
        let t = scn.t_grid[ti];
        let pop_series: Vec<Banded> = rows
            .iter()
            .filter(|r| r.coord == "pop" && r.t == t)
            .map(|r| Banded { value: r.distance, lo: r.boot_lo, hi: r.boot_hi })
            .collect();
        for w in pop_series.windows(2) {
            if !(w[1].value < w[0].value) || w[1].lo > w[0].hi + 1e-12 {
                pop_decreasing = false;
            }
        }
        let env_series: Vec<Banded> = rows
            .iter()
            .filter(|r| r.coord == "env" && r.t == t)
            .map(|r| Banded { value: r.distance, lo: r.boot_lo, hi: r.boot_hi })
            .collect();
        for w in env_series.windows(2) {
            if w[1].lo > w[0].hi + 1e-12 {
                env_not_increasing = false;
            }
        }
        if let Some(last) = rows.iter().find(|r| r.coord == "pop" && r.t == t && r.n == n_max) {
            floor_factor = floor_factor.max(last.distance / last.floor.max(1e-15));
        }
    }

    Ok(LawReport {
        rows,
        pop_decreasing,
        env_not_increasing,
        floor_factor,
        explosions_discrete,
        explosions_sde: expl_sde,
    })
}

/// Per-path marginals of the limiting SDE at a caller-chosen step size.
fn sde_marginals_dt(
    scn: &Scenario,
    spec: &SdeSpec,
    m: usize,
    dt: f64,
    salt: u64,
    ctx: ExecCtx,
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>, u64) {
    let x0 = [initial_mass(scn), 0.0];
    let wf = scn.is_wf();
    let per_path: Vec<(Vec<f64>, Vec<f64>, bool)> =
        stats::indexed_tasks(m, scn.seed ^ ctx.seed, offset(salt, 0), ctx.parallel, |_, rng| {
            let (states, exploded) =
                integrate_marginals(spec, &x0, &scn.t_grid, dt, rng).expect("sde integration");
            let pop: Vec<f64> = states
                .iter()
                .map(|s| if wf { s[0] } else { (-s[0]).exp() })
                .collect();
            let env: Vec<f64> = states.iter().map(|s| s[1]).collect();
            (pop, env, exploded.is_some())
        });
    let nt = scn.t_grid.len();
    let mut pop = vec![Vec::with_capacity(m); nt];
    let mut env = vec![Vec::with_capacity(m); nt];
    let mut exploded = 0;
    for (p, e, x) in per_path {
        for ti in 0..nt {
            pop[ti].push(p[ti]);
            env[ti].push(e[ti]);
        }
        if x {
            exploded += 1;
        }
    }
    (pop, env, exploded)
}

// ---------------------------------------------------------------------------
// Explosion study
// ---------------------------------------------------------------------------

/// Fraction of paths that hit the explosion threshold by `t_horizon`:
/// discrete chain vs jump-diffusion integrator, with binomial bands.
pub fn run_explosion_study(scn: &Scenario, t_horizon: f64, ctx: ExecCtx) -> Result<ExplosionReport> {
    if scn.is_wf() {
        return Err(Error::config("model", "explosion studies require a branching model"));
    }
    let m = scn.replicates;
    let bspec = scn.bp_spec()?;
    let (demo, g) = scn.bp_targets()?;
    let spec = crate::branching::bpile_z_spec(&scn.env, &demo, &g, SDE_EPS, bspec.z_max)?;
    let x0 = [initial_mass(scn), 0.0];
    let grid = [t_horizon];

    let sde_flags: Vec<bool> =
        stats::indexed_tasks(m, scn.seed ^ ctx.seed, offset(9, 0), ctx.parallel, |_, rng| {
            let (_, exploded) = integrate_marginals(&spec, &x0, &grid, scn.dt, rng).expect("sde");
            exploded.is_some()
        });
    let sde_count = sde_flags.iter().filter(|&&x| x).count() as u64;
    let frac_sde = sde_count as f64 / m as f64;
    let (sde_lo, sde_hi) = stats::wilson_interval(sde_count, m as u64);

    let mut rows = Vec::new();
    for (ni, &n) in scn.n_list.iter().enumerate() {
        let sim = bspec.at(n).prepare()?;
        let flags: Vec<bool> =
            stats::indexed_tasks(m, scn.seed ^ ctx.seed, offset(10, ni as u64), ctx.parallel, |_, rng| {
                let p = sim.simulate(&[t_horizon], rng).expect("bp path");
                p.exploded_at.is_some()
            });
        let count = flags.iter().filter(|&&x| x).count() as u64;
        let frac = count as f64 / m as f64;
        let (lo, hi) = stats::wilson_interval(count, m as u64);
        let overlap = lo <= sde_hi && sde_lo <= hi;
        rows.push(ExplosionRow {
            n,
            frac_discrete: frac,
            disc_lo: lo,
            disc_hi: hi,
            frac_sde,
            sde_lo,
            sde_hi,
            intervals_overlap: overlap,
        });
    }
    let all = rows.iter().all(|r| r.intervals_overlap);
    Ok(ExplosionReport { rows, all_overlap: all })
}

// ---------------------------------------------------------------------------
// Path simulation (CSV payloads)
// ---------------------------------------------------------------------------

pub struct SimulateOutput {
    /// Discrete paths: t, z, s, path_id.
    pub discrete_csv: String,
    /// SDE paths at the grid: t, coordinates, exploded.
    pub sde_csv: String,
    /// Jump log: path_id, t, source, mark, dz (population-coordinate jump).
    pub jumps_csv: String,
}

pub fn simulate_paths(scn: &Scenario, n: u64, num_paths: usize, ctx: ExecCtx) -> Result<SimulateOutput> {
    use std::fmt::Write as _;
    let mut disc = String::from("t,z,s,path_id\n");
    if scn.is_wf() {
        let sim = scn.wf_model(n)?.prepare()?;
        let paths: Vec<crate::wf::WfPath> =
            stats::indexed_tasks(num_paths, scn.seed ^ ctx.seed, offset(11, 0), ctx.parallel, |_, rng| {
                sim.simulate(&scn.t_grid, rng).expect("wf path")
            });
        for (pid, p) in paths.iter().enumerate() {
            for ti in 0..p.t.len() {
                let _ = writeln!(disc, "{},{},{},{}", p.t[ti], p.z[ti], p.s[ti], pid);
            }
        }
    } else {
        let bspec = scn.bp_spec()?;
        let sim = bspec.at(n).prepare()?;
        let paths: Vec<crate::branching::BpPath> =
            stats::indexed_tasks(num_paths, scn.seed ^ ctx.seed, offset(11, 0), ctx.parallel, |_, rng| {
                sim.simulate(&scn.t_grid, rng).expect("bp path")
            });
        for (pid, p) in paths.iter().enumerate() {
            for ti in 0..p.t.len() {
                let _ = writeln!(disc, "{},{},{},{}", p.t[ti], p.z[ti], p.s[ti], pid);
            }
        }
    }

    let spec = limiting_spec(scn)?;
    let x0 = [initial_mass(scn), 0.0];
    let sde_paths: Vec<crate::sde::JumpDiffPath> =
        stats::indexed_tasks(num_paths, scn.seed ^ ctx.seed, offset(12, 0), ctx.parallel, |_, rng| {
            crate::sde::integrate(&spec, &x0, scn.horizon, scn.dt, rng).expect("sde path")
        });
    let mut sde = String::from("t,x1,x2,exploded,path_id\n");
    let mut jumps = String::from("path_id,t,source,mark,dz\n");
    for (pid, p) in sde_paths.iter().enumerate() {
        // Record at the scenario grid only (the integrator stores all steps).
        for &t in &scn.t_grid {
            let idx = p.t.partition_point(|&u| u < t - 1e-12).min(p.t.len() - 1);
            let exploded = p.explosion_time.map(|te| te <= t).unwrap_or(false);
            let _ = writeln!(sde, "{},{},{},{},{}", t, p.states[idx][0], p.states[idx][1], exploded, pid);
        }
        for j in &p.jumps {
            let _ = writeln!(jumps, "{},{},{},{},{}", pid, j.t, j.source, j.mark, j.post[0] - j.pre[0]);
        }
    }
    Ok(SimulateOutput { discrete_csv: disc, sde_csv: sde, jumps_csv: jumps })
}

// ---------------------------------------------------------------------------
// Assumption-A driver (environment families of a scenario)
// ---------------------------------------------------------------------------

pub fn run_assumption_a(
    scn: &Scenario,
    m: usize,
    ctx: ExecCtx,
) -> Result<crate::levy::AssumptionAReport> {
    let fam = scn.env_family();
    crate::levy::check_assumption_a(&fam, &scn.n_list, m, &[], scn.seed ^ ctx.seed, ctx.parallel)
}
