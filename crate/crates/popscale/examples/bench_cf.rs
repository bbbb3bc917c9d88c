fn main() {
    // Iteration count of the incomplete-beta continued fraction in the
    // central region, via convergence of successive values.
    let (a, b, x) = (5600.0f64, 2401.0, 0.69);
    let mut prev = 0.0;
    for it in 1..400 {
        let v = cf_partial(a, b, x, it);
        if (v - prev).abs() < 1e-14 * v.abs() {
            println!("betacf converged after ~{it} iterations");
            break;
        }
        prev = v;
    }
}
fn cf_partial(a: f64, b: f64, x: f64, iters: usize) -> f64 {
    let qab = a + b; let qap = a + 1.0; let qam = a - 1.0;
    let mut c = 1.0; let mut d = 1.0 - qab * x / qap;
    if d.abs() < 1e-300 { d = 1e-300; }
    d = 1.0 / d; let mut h = d;
    for m in 1..=iters {
        let m = m as f64; let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d; if d.abs() < 1e-300 { d = 1e-300; }
        c = 1.0 + aa / c; if c.abs() < 1e-300 { c = 1e-300; }
        d = 1.0 / d; h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d; if d.abs() < 1e-300 { d = 1e-300; }
        c = 1.0 + aa / c; if c.abs() < 1e-300 { c = 1e-300; }
        d = 1.0 / d; h *= d * c;
    }
    h
}
