//! Sampling, limit-law statistics, the naive bootstrap and the Monte Carlo
//! harness.
//!
//! Every random quantity is a pure function of a `u64` seed. Replicate `k`
//! draws from its own generator seeded with [`replicate_seed`]`(seed, k)`, so
//! results do not depend on how replicates are scheduled across threads.

mod mc;
mod stats;

pub use mc::{mc_experiment, LambdaSchedule, McCell, McConfig, McMode, McReport};
pub use stats::{
    bootstrap_plans, bootstrap_statistic, confidence_interval, gaussian_limit_sample, run_replicates,
    sinkhorn_statistic, two_sample_statistic, ConfidenceInterval, ReplicateFailure, RotSetup,
    SampleDistribution, SampleKind,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Gamma, StandardNormal};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Result, RotError};
use crate::space::{from_counts, Prob};

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Seed of replicate `k` derived from a master seed.
pub fn replicate_seed(seed: u64, k: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ splitmix64(k.wrapping_add(0x5851_F42D_4C95_7F2D)))
}

/// Generator for replicate `k`.
pub fn replicate_rng(seed: u64, k: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(replicate_seed(seed, k))
}

/// Exchangeable Dirichlet(alpha, ..., alpha) draw on the `dim`-simplex.
pub fn dirichlet_sample(alpha: f64, dim: usize, seed: u64) -> Result<Prob> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    dirichlet_with(&mut rng, alpha, dim)
}

pub fn dirichlet_with<R: Rng + ?Sized>(rng: &mut R, alpha: f64, dim: usize) -> Result<Prob> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(RotError::invalid(format!("Dirichlet parameter must be positive, got {alpha}")));
    }
    if dim == 0 {
        return Err(RotError::invalid("Dirichlet dimension must be at least 1"));
    }
    let gamma = Gamma::new(alpha, 1.0).map_err(|e| RotError::invalid(e.to_string()))?;
    loop {
        let draws: Vec<f64> = (0..dim).map(|_| gamma.sample(rng)).collect();
        if draws.iter().sum::<f64>() > 0.0 {
            return Prob::from_masses(&draws);
        }
    }
}

/// Multinomial counts of `n` draws from `weights` by sequential binomials.
pub fn multinomial_counts<R: Rng + ?Sized>(rng: &mut R, weights: &[f64], n: usize) -> Vec<usize> {
    let mut counts = vec![0usize; weights.len()];
    let Some(last) = weights.iter().rposition(|&w| w > 0.0) else {
        return counts;
    };
    let mut left = n as u64;
    let mut mass = 1.0f64;
    for (i, &w) in weights.iter().enumerate() {
        if left == 0 {
            break;
        }
        if i == last {
            counts[i] = left as usize;
            break;
        }
        if w <= 0.0 {
            continue;
        }
        let p = (w / mass).clamp(0.0, 1.0);
        let k = if p >= 1.0 {
            left
        } else {
            Binomial::new(left, p).expect("valid binomial").sample(rng)
        };
        counts[i] = k as usize;
        left -= k;
        mass -= w;
    }
    counts
}

/// Empirical distribution of `n` i.i.d. draws from `r`.
pub fn sample_empirical<R: Rng + ?Sized>(rng: &mut R, r: &Prob, n: usize) -> Result<Prob> {
    if n == 0 {
        return Err(RotError::invalid("sample size must be at least 1"));
    }
    Ok(from_counts(&multinomial_counts(rng, r.weights(), n), n))
}

/// [`sample_empirical`] driven by a seed.
pub fn resample_distribution(prob: &Prob, n: usize, seed: u64) -> Result<Prob> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_empirical(&mut rng, prob, n)
}

/// Draw `G ~ N(0, diag(w) - w w^T)` as `Z - w (1^T Z)` with
/// `Z_i = sqrt(w_i) xi_i`; `sqrt_w` must hold the square roots of `w`.
pub fn multinomial_gaussian_into<R: Rng + ?Sized>(w: &[f64], sqrt_w: &[f64], rng: &mut R, out: &mut [f64]) {
    let mut total = 0.0;
    for (o, s) in out.iter_mut().zip(sqrt_w) {
        let xi: f64 = StandardNormal.sample(rng);
        *o = s * xi;
        total += *o;
    }
    for (o, wi) in out.iter_mut().zip(w) {
        *o -= wi * total;
    }
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal")
}

pub fn normal_cdf(x: f64) -> f64 {
    std_normal().cdf(x)
}

pub fn normal_quantile(q: f64) -> f64 {
    std_normal().inverse_cdf(q)
}

/// Kolmogorov-Smirnov distance between the empirical CDF of `values` and a
/// continuous reference CDF.
pub fn ks_distance(values: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    assert!(!values.is_empty(), "KS distance of an empty sample");
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut d = 0.0f64;
    let mut i = 0;
    while i < sorted.len() {
        let x = sorted[i];
        let mut j = i;
        while j < sorted.len() && sorted[j] == x {
            j += 1;
        }
        let f = cdf(x);
        d = d.max(f - i as f64 / n).max(j as f64 / n - f);
        i = j;
    }
    d
}

/// KS distance to `N(0, 1)`.
pub fn ks_normal(values: &[f64]) -> f64 {
    let nd = std_normal();
    ks_distance(values, |x| nd.cdf(x))
}

/// KS distance to `N(0, sigma^2)`; a degenerate `sigma = 0` is the point mass at 0.
pub fn ks_normal_scaled(values: &[f64], sigma: f64) -> f64 {
    if sigma > 0.0 {
        let nd = std_normal();
        ks_distance(values, |x| nd.cdf(x / sigma))
    } else {
        ks_distance(values, |x| if x >= 0.0 { 1.0 } else { 0.0 })
    }
}

/// Two-sample KS distance between empirical CDFs.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    assert!(!a.is_empty() && !b.is_empty(), "KS distance of an empty sample");
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d = 0.0f64;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Quantile-quantile pairs `(normal quantile, sample order statistic)` at
/// plotting positions `(k - 1/2) / M`.
pub fn qq_normal(values: &[f64]) -> Vec<(f64, f64)> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let m = sorted.len() as f64;
    sorted
        .into_iter()
        .enumerate()
        .map(|(k, v)| (normal_quantile((k as f64 + 0.5) / m), v))
        .collect()
}
