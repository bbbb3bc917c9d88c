use popscale::stats;

fn main() {
    let scn = popscale::scenario::logistic_feller();
    let (demo, g) = scn.bp_targets().unwrap();
    let spec = popscale::branching::bpile_z_spec(&scn.env, &demo, &g, 1e-3, 1e6).unwrap();
    let m = 60_000;

    // Independent chain at N = 8000.
    let sim = scn.bp_spec().unwrap().at(8000).prepare().unwrap();
    let disc: Vec<f64> = stats::indexed_tasks(m, 1, 0, false, |_, rng| {
        let p = sim.simulate(&[1.0], rng).unwrap();
        (-p.z[0]).exp()
    });
    // Independent SDE at dt = 1/8000.
    let sde: Vec<f64> = stats::indexed_tasks(m, 2, 0, false, |_, rng| {
        let (s, e) = popscale::sde::integrate_marginals(&spec, &[1.0, 0.0], &[1.0], 1.0 / 8000.0, rng).unwrap();
        if e.is_some() { 0.0 } else { (-s[0][0]).exp() }
    });
    let (md, sd) = stats::mean_stderr(&disc);
    let (ms, ss) = stats::mean_stderr(&sde);
    println!("disc mean {md:.6} (se {sd:.6}) | sde mean {ms:.6} (se {ss:.6}) | diff {:.6}", md - ms);
    let vd = disc.iter().map(|x| (x - md) * (x - md)).sum::<f64>() / m as f64;
    let vs = sde.iter().map(|x| (x - ms) * (x - ms)).sum::<f64>() / m as f64;
    println!("disc var {vd:.6} | sde var {vs:.6}");
    println!("w1(indep) = {:.6}", stats::wasserstein1(&disc, &sde));

    // Coupled batch for comparison.
    let ctx = popscale::drivers::ExecCtx { seed: 0, parallel: false };
    let b = popscale::coupled::coupled_marginals(&scn, 8000, 20_000, 0, ctx).unwrap();
    let (mcd, _) = stats::mean_stderr(&b.disc_pop[1]);
    let (mcs, _) = stats::mean_stderr(&b.sde_pop[1]);
    println!("coupled disc mean {mcd:.6} | coupled sde mean {mcs:.6} | w1 {:.6}",
        stats::wasserstein1(&b.disc_pop[1], &b.sde_pop[1]));
}
