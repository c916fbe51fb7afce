//! Shared numerical and statistical helpers: stabilized log-sum-exp, normal
//! and Poisson tail functions, Kolmogorov-Smirnov statistics with asymptotic
//! thresholds, and percentile-bootstrap confidence intervals.
//!
//! Everything here is deterministic given its inputs; randomized helpers take
//! an explicit stream so callers stay reproducible.

use crate::rng::{stream_rng, tags};
use rand_chacha::rand_core::RngCore;
use rayon::prelude::*;
use statrs::function::erf;
use statrs::function::gamma::ln_gamma;

/// log(sum_i exp(x_i)) with max-shift stabilization. Empty input gives -inf.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let s: f64 = xs.iter().map(|&x| (x - m).exp()).sum();
    m + s.ln()
}

/// log((1/n) sum_i exp(x_i)).
pub fn log_mean_exp(xs: &[f64]) -> f64 {
    log_sum_exp(xs) - (xs.len() as f64).ln()
}

/// Sample mean.
pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance (n-1 denominator).
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|&x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erf::erfc(-z / std::f64::consts::SQRT_2)
}

/// Standard normal upper tail P[Z >= z].
pub fn normal_sf(z: f64) -> f64 {
    0.5 * erf::erfc(z / std::f64::consts::SQRT_2)
}

/// Inverse of the standard normal upper tail: z with P[Z >= z] = p.
/// Uses erfc directly so small tail probabilities keep full precision.
pub fn normal_isf(p: f64) -> f64 {
    std::f64::consts::SQRT_2 * erf::erfc_inv(2.0 * p)
}

/// Kolmogorov distribution quantile: c(alpha) with Q_KS(c) = alpha, from the
/// two-term inversion of Q(c) ~ 2 exp(-2c^2). Standard asymptotic threshold
/// factor; c(0.05) = 1.358, c(0.01) = 1.628.
pub fn ks_quantile(alpha: f64) -> f64 {
    (-0.5 * (alpha / 2.0).ln()).sqrt()
}

/// One-sample KS statistic against a continuous CDF. `data` need not be sorted.
pub fn ks_one_sample(data: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut xs = data.to_vec();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len() as f64;
    let mut d = 0.0f64;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        d = d.max(f - i as f64 / n).max((i + 1) as f64 / n - f);
    }
    d
}

/// Two-sample KS statistic (sup distance between empirical CDFs).
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut xs = a.to_vec();
    let mut ys = b.to_vec();
    xs.sort_by(|u, v| u.partial_cmp(v).unwrap());
    ys.sort_by(|u, v| u.partial_cmp(v).unwrap());
    let (n, m) = (xs.len(), ys.len());
    let (mut i, mut j) = (0usize, 0usize);
    let mut d = 0.0f64;
    while i < n && j < m {
        let t = xs[i].min(ys[j]);
        while i < n && xs[i] <= t {
            i += 1;
        }
        while j < m && ys[j] <= t {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    d
}

/// Asymptotic two-sample KS threshold at level `alpha` for sizes (n, m).
pub fn ks_two_sample_threshold(n: usize, m: usize, alpha: f64) -> f64 {
    ks_quantile(alpha) * ((n + m) as f64 / (n as f64 * m as f64)).sqrt()
}

/// log P[N >= k0] for N ~ Poisson(lambda), by stable upper-tail summation in
/// ratio form: starting from the log pmf at k0, successive terms are obtained
/// by multiplying lambda/(k+1), and the sum is accumulated relative to the
/// leading term. Accurate far into the tail where naive summation underflows.
pub fn poisson_log_sf(lambda: f64, k0: u64) -> f64 {
    assert!(lambda > 0.0);
    if k0 == 0 {
        return 0.0;
    }
    let lp0 = -lambda + k0 as f64 * lambda.ln() - ln_gamma(k0 as f64 + 1.0);
    // s = sum_{j>=0} prod_{i=1..j} lambda/(k0+i), relative to the k0 term.
    let mut s = 1.0f64;
    let mut term = 1.0f64;
    let mut k = k0;
    loop {
        k += 1;
        term *= lambda / k as f64;
        s += term;
        if term < s * 1e-18 {
            break;
        }
        // Far below the mean the ratio exceeds 1 and the loop would crawl;
        // callers in that regime should use the complement instead.
        if k > k0 + 200_000_000 {
            break;
        }
    }
    lp0 + s.ln()
}

/// Percentile of a sample at level q in [0, 1], with linear interpolation
/// between order statistics.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n as f64 - 1.0);
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let w = pos - lo as f64;
    sorted[lo] * (1.0 - w) + sorted[hi] * w
}

/// Unbiased resample index: floor(u * n) via 64-bit multiply-shift.
#[inline]
fn resample_index(word: u64, n: usize) -> usize {
    ((word as u128 * n as u128) >> 64) as usize
}

/// Percentile-bootstrap confidence interval for a statistic of the sample
/// mean. `terms` are per-draw values; the statistic applied to each resampled
/// mean is `stat`. Returns the (alpha/2, 1-alpha/2) percentile pair over
/// `n_boot` resamples. Resamples are computed in parallel but combined in a
/// fixed order, so the result does not depend on thread count.
pub fn bootstrap_mean_ci(
    terms: &[f64],
    stat: impl Fn(f64) -> f64 + Sync,
    n_boot: usize,
    alpha: f64,
    seed: u64,
    tag: u64,
) -> (f64, f64) {
    let n = terms.len();
    let mut reps: Vec<f64> = (0..n_boot)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream_rng(seed, &[tags::BOOTSTRAP, tag, b as u64]);
            let mut acc = 0.0f64;
            for _ in 0..n {
                acc += terms[resample_index(rng.next_u64(), n)];
            }
            stat(acc / n as f64)
        })
        .collect();
    reps.sort_by(|a, b| a.partial_cmp(b).unwrap());
    (
        percentile(&reps, alpha / 2.0),
        percentile(&reps, 1.0 - alpha / 2.0),
    )
}
