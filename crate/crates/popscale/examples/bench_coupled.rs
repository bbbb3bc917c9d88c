fn main() {
    use std::time::Instant;
    let t0 = Instant::now();
    let mut acc = 0u64;
    let n = 8000u64;
    for i in 0..1_000_000u64 {
        let u = (i as f64 + 0.5) / 1e6;
        let p = 0.3 + 0.4 * (i % 97) as f64 / 97.0;
        acc += popscale::special::binom_inv_cdf(n, p, u);
    }
    println!("binominv 1e6 calls: {:?} (acc {acc})", t0.elapsed());

    // One coupled batch at N=2000, m=2000 paths, horizon 1.
    let mut scn = popscale::scenario::wf_example_p();
    scn.replicates = 2000;
    let t1 = Instant::now();
    let ctx = popscale::drivers::ExecCtx { seed: 0, parallel: false };
    let b = popscale::coupled::coupled_marginals(&scn, 2000, 2000, 0, ctx).unwrap();
    println!(
        "coupled 2000x2000 steps: {:?} (w1 {})",
        t1.elapsed(),
        popscale::stats::wasserstein1(&b.disc_pop[1], &b.sde_pop[1])
    );
}
