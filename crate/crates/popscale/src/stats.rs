//! Monte-Carlo statistics: deterministic chunked accumulation, exact 1-d
//! Wasserstein distance, bootstrap bands, binomial intervals, trend flags.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::rng::stream_rng;

/// Neumaier-compensated sum.
pub fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut c = 0.0;
    for v in values {
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

pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

const CHUNK: usize = 1 << 14;

/// Accumulates `k` simultaneous sample moments over `m` replicates.
///
/// Replicates are split into fixed-size chunks; chunk `i` uses the RNG
/// stream `(seed, task_offset + i)` regardless of thread scheduling, and
/// chunk results are reduced in index order, so parallel and serial
/// execution produce bit-identical results. Returns `(mean, stderr)` per
/// component.
pub fn chunked_moments<F>(
    m: usize,
    seed: u64,
    task_offset: u64,
    parallel: bool,
    f: F,
    k: usize,
) -> Vec<(f64, f64)>
where
    F: Fn(&mut ChaCha8Rng, &mut [f64]) + Send + Sync,
{
    let n_chunks = m.div_ceil(CHUNK);
    // Welford accumulation per chunk, Chan combination across chunks: exact
    // zero variance for constant samples and no cancellation dust.
    let run_chunk = |ci: usize| -> (f64, Vec<f64>, Vec<f64>) {
        let mut rng = stream_rng(seed, task_offset + ci as u64);
        let lo = ci * CHUNK;
        let hi = (lo + CHUNK).min(m);
        let mut mean = vec![0.0; k];
        let mut m2 = vec![0.0; k];
        let mut buf = vec![0.0; k];
        let mut count = 0.0;
        for _ in lo..hi {
            f(&mut rng, &mut buf);
            count += 1.0;
            for j in 0..k {
                let delta = buf[j] - mean[j];
                mean[j] += delta / count;
                m2[j] += delta * (buf[j] - mean[j]);
            }
        }
        (count, mean, m2)
    };
    let partials: Vec<(f64, Vec<f64>, Vec<f64>)> = if parallel {
        (0..n_chunks).into_par_iter().map(run_chunk).collect()
    } else {
        (0..n_chunks).map(run_chunk).collect()
    };
    let mut count = 0.0;
    let mut mean = vec![0.0; k];
    let mut m2 = vec![0.0; k];
    for (cb, mb, qb) in partials {
        if cb == 0.0 {
            continue;
        }
        let total = count + cb;
        for j in 0..k {
            let delta = mb[j] - mean[j];
            m2[j] += qb[j] + delta * delta * count * cb / total;
            mean[j] += delta * cb / total;
        }
        count = total;
    }
    (0..k)
        .map(|j| {
            let var = if count > 1.0 { m2[j] / (count - 1.0) } else { 0.0 };
            (mean[j], (var / count).sqrt())
        })
        .collect()
}

/// Runs `m` independent tasks with per-task RNG streams, preserving order.
pub fn indexed_tasks<T, F>(m: usize, seed: u64, task_offset: u64, parallel: bool, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, &mut ChaCha8Rng) -> T + Send + Sync,
{
    let run = |i: usize| -> T {
        let mut rng = stream_rng(seed, task_offset + i as u64);
        f(i, &mut rng)
    };
    if parallel {
        (0..m).into_par_iter().map(run).collect()
    } else {
        (0..m).map(run).collect()
    }
}

/// Exact Wasserstein-1 distance between two empirical distributions.
///
/// Computed as ∫|F - G| by merging the two sorted samples; for equal sample
/// sizes this coincides with the mean absolute difference of order
/// statistics.
pub fn wasserstein1(a: &[f64], b: &[f64]) -> f64 {
    assert!(!a.is_empty() && !b.is_empty());
    let mut xs: Vec<f64> = a.to_vec();
    let mut ys: Vec<f64> = b.to_vec();
    xs.sort_by(|p, q| p.partial_cmp(q).unwrap());
    ys.sort_by(|p, q| p.partial_cmp(q).unwrap());
    let (na, nb) = (xs.len() as f64, ys.len() as f64);
    let mut i = 0;
    let mut j = 0;
    let mut dist = 0.0;
    let mut prev = xs[0].min(ys[0]);
    while i < xs.len() || j < ys.len() {
        let x = xs.get(i).copied().unwrap_or(f64::INFINITY);
        let y = ys.get(j).copied().unwrap_or(f64::INFINITY);
        let cur = x.min(y);
        dist += (i as f64 / na - j as f64 / nb).abs() * (cur - prev);
        if x <= y {
            i += 1;
        } else {
            j += 1;
        }
        prev = cur;
    }
    dist
}

/// Percentile bootstrap band (2.5%, 97.5%) for the Wasserstein distance
/// between two samples, with `resamples` bootstrap replicates.
pub fn bootstrap_wasserstein_band(
    a: &[f64],
    b: &[f64],
    resamples: usize,
    seed: u64,
) -> (f64, f64) {
    let mut vals = Vec::with_capacity(resamples);
    for r in 0..resamples {
        let mut rng = stream_rng(seed, r as u64);
        let ra: Vec<f64> = (0..a.len()).map(|_| a[rng.random_range(0..a.len())]).collect();
        let rb: Vec<f64> = (0..b.len()).map(|_| b[rng.random_range(0..b.len())]).collect();
        vals.push(wasserstein1(&ra, &rb));
    }
    vals.sort_by(|p, q| p.partial_cmp(q).unwrap());
    let lo = vals[((resamples as f64) * 0.025) as usize];
    let hi = vals[(((resamples as f64) * 0.975) as usize).min(resamples - 1)];
    (lo, hi)
}

/// Percentile bootstrap band (2.5%, 97.5%) for the mean of a small sample
/// of replicate estimates.
pub fn bootstrap_mean_band(values: &[f64], resamples: usize, seed: u64) -> (f64, f64) {
    let n = values.len();
    if n == 1 {
        return (values[0], values[0]);
    }
    let mut means = Vec::with_capacity(resamples);
    for r in 0..resamples {
        let mut rng = stream_rng(seed, r as u64);
        let m: f64 = (0..n).map(|_| values[rng.random_range(0..n)]).sum::<f64>() / n as f64;
        means.push(m);
    }
    means.sort_by(|p, q| p.partial_cmp(q).unwrap());
    let lo = means[((resamples as f64) * 0.025) as usize];
    let hi = means[(((resamples as f64) * 0.975) as usize).min(resamples - 1)];
    (lo, hi)
}

/// Wilson score interval for a binomial proportion at ~95%.
pub fn wilson_interval(successes: u64, trials: u64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z = 1.96;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z * ((p * (1.0 - p) + z2 / (4.0 * n)) / n).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// Two-sample Kolmogorov-Smirnov statistic and asymptotic p-value.
pub fn ks2(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut xs = a.to_vec();
    let mut ys = b.to_vec();
    xs.sort_by(|p, q| p.partial_cmp(q).unwrap());
    ys.sort_by(|p, q| p.partial_cmp(q).unwrap());
    let (na, nb) = (xs.len() as f64, ys.len() as f64);
    let mut i = 0;
    let mut j = 0;
    let mut d: f64 = 0.0;
    while i < xs.len() && j < ys.len() {
        let x = xs[i];
        let y = ys[j];
        if x <= y {
            i += 1;
        }
        if y <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    let ne = (na * nb / (na + nb)).sqrt();
    let lambda = (ne + 0.12 + 0.11 / ne) * d;
    // Kolmogorov asymptotic survival function.
    let mut p = 0.0;
    for k in 1..=100 {
        let term = 2.0 * (-1.0f64).powi(k + 1) * (-2.0 * (k as f64) * (k as f64) * lambda * lambda).exp();
        p += term;
        if term.abs() < 1e-12 {
            break;
        }
    }
    (d, p.clamp(0.0, 1.0))
}

/// A point estimate with a confidence band.
#[derive(Clone, Copy, Debug, serde::Serialize)]
pub struct Banded {
    pub value: f64,
    pub lo: f64,
    pub hi: f64,
}

/// "Decreasing within bands": point estimates strictly decreasing (up to
/// floating-point slack) and no adjacent pair significantly contradicts the
/// decrease (lower band of the later point above the upper band of the
/// earlier one).
pub fn decreasing_within_bands(series: &[Banded]) -> bool {
    series.windows(2).all(|w| {
        let point_ok = w[1].value <= w[0].value * (1.0 + 1e-9) + 1e-12;
        let band_ok = w[1].lo <= w[0].hi + 1e-12;
        point_ok && band_ok
    })
}

/// Weak monotone non-increase with relative tolerance (for deterministic
/// residual series where bands are zero).
pub fn nonincreasing(series: &[f64], rel_tol: f64) -> bool {
    series.windows(2).all(|w| w[1] <= w[0] * (1.0 + rel_tol) + 1e-15)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wasserstein_of_shifted_samples() {
        let a: Vec<f64> = (0..1000).map(|i| i as f64 / 1000.0).collect();
        let b: Vec<f64> = a.iter().map(|x| x + 0.25).collect();
        let d = wasserstein1(&a, &b);
        assert!((d - 0.25).abs() < 1e-12);
    }

    #[test]
    fn wasserstein_identical_is_zero() {
        let a = [0.3, 0.1, 0.9, 0.5];
        assert_eq!(wasserstein1(&a, &a), 0.0);
    }

    #[test]
    fn wasserstein_unequal_sizes_exact() {
        // F uniform on {0, 1}, G point mass at 0: ∫|F-G| over [0,1] = 1/2.
        let a = [0.0, 1.0];
        let b = [0.0, 0.0, 0.0];
        assert!((wasserstein1(&a, &b) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn ks_same_distribution_large_p() {
        let mut rng = stream_rng(1, 0);
        let a: Vec<f64> = (0..2000).map(|_| rng.random::<f64>()).collect();
        let b: Vec<f64> = (0..2000).map(|_| rng.random::<f64>()).collect();
        let (_, p) = ks2(&a, &b);
        assert!(p > 0.01);
    }

    #[test]
    fn ks_different_distributions_small_p() {
        let mut rng = stream_rng(2, 0);
        let a: Vec<f64> = (0..2000).map(|_| rng.random::<f64>()).collect();
        let b: Vec<f64> = (0..2000).map(|_| rng.random::<f64>() + 0.2).collect();
        let (_, p) = ks2(&a, &b);
        assert!(p < 1e-6);
    }

    #[test]
    fn chunked_moments_serial_parallel_identical() {
        let f = |rng: &mut ChaCha8Rng, out: &mut [f64]| {
            let x: f64 = rng.random();
            out[0] = x;
            out[1] = x * x;
        };
        let a = chunked_moments(100_000, 9, 0, false, f, 2);
        let b = chunked_moments(100_000, 9, 0, true, f, 2);
        for (x, y) in a.iter().zip(b.iter()) {
            assert_eq!(x.0.to_bits(), y.0.to_bits());
            assert_eq!(x.1.to_bits(), y.1.to_bits());
        }
        assert!((a[0].0 - 0.5).abs() < 5.0 * a[0].1);
    }

    #[test]
    fn wilson_covers_truth() {
        let (lo, hi) = wilson_interval(50, 100);
        assert!(lo < 0.5 && 0.5 < hi);
        let (lo, hi) = wilson_interval(0, 100);
        assert!(lo == 0.0 && hi < 0.06);
    }

    #[test]
    fn trend_flags() {
        let dec = [
            Banded { value: 3.0, lo: 2.5, hi: 3.5 },
            Banded { value: 2.0, lo: 1.6, hi: 2.4 },
            Banded { value: 1.0, lo: 0.8, hi: 1.2 },
        ];
        assert!(decreasing_within_bands(&dec));
        let inc = [
            Banded { value: 1.0, lo: 0.8, hi: 1.2 },
            Banded { value: 2.0, lo: 1.6, hi: 2.4 },
        ];
        assert!(!decreasing_within_bands(&inc));
        assert!(nonincreasing(&[1.0, 0.5, 0.5, 0.2], 1e-9));
        assert!(!nonincreasing(&[1.0, 1.5], 1e-9));
    }
}
