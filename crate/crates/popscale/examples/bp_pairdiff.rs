use popscale::stats;
fn main() {
    let scn = popscale::scenario::logistic_feller();
    let ctx = popscale::drivers::ExecCtx { seed: 0, parallel: false };
    for n in [500u64, 2000, 8000] {
        let b = popscale::coupled::coupled_marginals(&scn, n, 5000, 0, ctx).unwrap();
        for ti in 0..2 {
            let diffs: Vec<f64> = b.disc_pop[ti].iter().zip(&b.sde_pop[ti]).map(|(a, s)| a - s).collect();
            let (mean, se) = stats::mean_stderr(&diffs);
            let mad = diffs.iter().map(|d| d.abs()).sum::<f64>() / diffs.len() as f64;
            println!(
                "N={n} t{} : mean pair diff {mean:.6} (se {se:.6}), mean|diff| {mad:.6}, w1 {:.6}",
                ti, stats::wasserstein1(&b.disc_pop[ti], &b.sde_pop[ti])
            );
        }
    }
}
