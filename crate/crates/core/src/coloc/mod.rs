//! Regularized colocalization curves: the share of transported mass moved
//! over distances at most `t`, with uniform confidence bands.

mod image;

pub use image::{gaussian_blobs, image_to_distribution, IntensityImage};

use serde::{Deserialize, Serialize};

use crate::error::{Result, RotError};
use crate::inference::{run_replicates, sample_empirical, ReplicateFailure, RotSetup};
use crate::sensitivity::PlanCovariance;
use crate::solver::TransportPlan;
use crate::space::{sorted_quantile, GroundCost};

/// Right-continuous step curve `t -> RCol(t)` given by its values at the
/// jump points, with an optional uniform band.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RColCurve {
    pub thresholds: Vec<f64>,
    pub values: Vec<f64>,
    pub lower: Option<Vec<f64>>,
    pub upper: Option<Vec<f64>>,
    /// Level `alpha` of the band.
    pub alpha: Option<f64>,
    /// Half-width of the band before clipping.
    pub half_width: Option<f64>,
}

impl RColCurve {
    fn point(thresholds: Vec<f64>, values: Vec<f64>) -> Self {
        Self {
            thresholds,
            values,
            lower: None,
            upper: None,
            alpha: None,
            half_width: None,
        }
    }

    /// Value at an arbitrary `t`: the value at the last threshold `<= t`,
    /// zero before the first one.
    pub fn eval(&self, t: f64) -> f64 {
        let k = self.thresholds.partition_point(|&x| x <= t);
        if k == 0 {
            0.0
        } else {
            self.values[k - 1]
        }
    }

    /// Largest absolute difference over the union of both jump sets.
    pub fn sup_distance(&self, other: &RColCurve) -> f64 {
        self.thresholds
            .iter()
            .chain(&other.thresholds)
            .map(|&t| (self.eval(t) - other.eval(t)).abs())
            .fold(0.0, f64::max)
    }

    /// Attach a symmetric band of the given half-width, clipped to `[lo, hi]`.
    fn with_band(mut self, half_width: f64, alpha: f64, lo: f64, hi: f64) -> Self {
        self.lower = Some(self.values.iter().map(|v| (v - half_width).clamp(lo, hi)).collect());
        self.upper = Some(self.values.iter().map(|v| (v + half_width).clamp(lo, hi)).collect());
        self.alpha = Some(alpha);
        self.half_width = Some(half_width);
        self
    }

    /// Whether `other` lies inside the band at every jump of either curve.
    pub fn band_contains(&self, other: &RColCurve) -> bool {
        let (Some(lower), Some(upper)) = (&self.lower, &self.upper) else {
            return false;
        };
        let band = |t: f64| {
            let k = self.thresholds.partition_point(|&x| x <= t);
            if k == 0 {
                (0.0, 0.0)
            } else {
                (lower[k - 1], upper[k - 1])
            }
        };
        let eps = 1e-12;
        self.thresholds.iter().chain(&other.thresholds).all(|&t| {
            let (lo, hi) = band(t);
            let v = other.eval(t);
            v >= lo - eps && v <= hi + eps
        })
    }
}

/// Assignment of plan cells to threshold bins (`len` = above every threshold).
struct Bins {
    bins: Vec<usize>,
    len: usize,
}

impl Bins {
    fn new(cell_costs: &[f64], thresholds: &[f64], c_max: f64) -> Self {
        let tol = 1e-12 * c_max.abs();
        let bins = cell_costs
            .iter()
            .map(|&c| thresholds.partition_point(|&t| t < c - tol))
            .collect();
        Self {
            bins,
            len: thresholds.len(),
        }
    }

    fn for_plan(plan: &TransportPlan, c: &dyn GroundCost, thresholds: &[f64]) -> Self {
        Self::new(&plan.cost_block(c), thresholds, c.max_cost())
    }

    /// Cumulative sums of `mass` over thresholds.
    fn cumulate(&self, mass: &[f64]) -> Vec<f64> {
        let mut acc = vec![0.0; self.len + 1];
        for (&b, &m) in self.bins.iter().zip(mass) {
            acc[b] += m;
        }
        acc.truncate(self.len);
        let mut run = 0.0;
        for v in &mut acc {
            run += *v;
            *v = run;
        }
        acc
    }

    fn sup_abs(&self, mass: &[f64]) -> f64 {
        self.cumulate(mass).into_iter().fold(0.0, |a, b| a.max(b.abs()))
    }
}

fn check_thresholds(t: &[f64]) -> Result<()> {
    if t.is_empty() || t.iter().any(|x| !x.is_finite()) || t.windows(2).any(|w| w[0] >= w[1]) {
        return Err(RotError::invalid("thresholds must be finite and strictly increasing"));
    }
    Ok(())
}

/// `RCol(t) = sum_i pi_i 1{c_i <= t}` at the given thresholds or, by default,
/// at every distinct cost value (where the curve jumps).
pub fn rcol(plan: &TransportPlan, c: &dyn GroundCost, thresholds: Option<&[f64]>) -> Result<RColCurve> {
    if c.size() != plan.n() {
        return Err(RotError::invalid(format!(
            "plan on {} points does not match a cost on {} points",
            plan.n(),
            c.size()
        )));
    }
    let thresholds = match thresholds {
        Some(t) => {
            check_thresholds(t)?;
            t.to_vec()
        }
        None => c.distinct_costs(),
    };
    let bins = Bins::for_plan(plan, c, &thresholds);
    let values = bins
        .cumulate(plan.entries())
        .into_iter()
        .map(|v| v.clamp(0.0, 1.0))
        .collect();
    Ok(RColCurve::point(thresholds, values))
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(RotError::invalid(format!("alpha must lie in (0, 1), got {alpha}")))
    }
}

/// Gaussian uniform band: `u` is the `(1 - alpha)`-quantile of
/// `sup_t |RCol(G)(t)|` over `draws` limit draws `G`, and the half-width is
/// `u / sqrt(n)` (one sample) or `u sqrt((n + m) / (n m))` (two samples).
#[allow(clippy::too_many_arguments)]
pub fn rcol_cb_gaussian(
    plan: &TransportPlan,
    cov: &PlanCovariance,
    c: &dyn GroundCost,
    n: usize,
    m: Option<usize>,
    alpha: f64,
    draws: usize,
    seed: u64,
) -> Result<RColCurve> {
    check_alpha(alpha)?;
    if draws < 100 || (draws as f64) < 1.0 / alpha {
        return Err(RotError::invalid(format!(
            "{draws} Gaussian draws are too few for a {alpha} quantile (need at least max(100, 1/alpha))"
        )));
    }
    if n == 0 || m == Some(0) {
        return Err(RotError::invalid("sample sizes must be positive"));
    }
    if cov.rows != plan.rows() || cov.cols != plan.cols() {
        return Err(RotError::invalid("covariance was computed for a different plan support"));
    }
    let curve = rcol(plan, c, None)?;
    let bins = Bins::for_plan(plan, c, &curve.thresholds);
    let (sups, _) = run_replicates(draws, seed, 0.0, |_, rng| {
        let mut g = vec![0.0; cov.cells()];
        cov.sample_into(rng, &mut g);
        Ok(bins.sup_abs(&g))
    })?;
    let mut sups = sups;
    sups.sort_by(f64::total_cmp);
    let u = sorted_quantile(&sups, 1.0 - alpha);
    let rate = match m {
        None => 1.0 / (n as f64).sqrt(),
        Some(m) => ((n + m) as f64 / (n as f64 * m as f64)).sqrt(),
    };
    Ok(curve.with_band(u * rate, alpha, 0.0, 1.0))
}

/// Bootstrap band together with the replicate curves it was built from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapBand {
    pub curve: RColCurve,
    pub n: usize,
    /// `u*`, the `(1 - alpha)` bootstrap quantile of `sup_t sqrt(n/2) |RCol* - RCol|`.
    pub quantile: f64,
    /// Indices of the successful replicates.
    pub replicate_index: Vec<usize>,
    /// Replicate curves evaluated at `curve.thresholds`.
    pub replicates: Vec<Vec<f64>>,
    pub failures: Vec<ReplicateFailure>,
}

/// Largest tolerated share of failed bootstrap replicates.
pub const BOOTSTRAP_MAX_FAILURE_RATE: f64 = 0.05;

/// Two-sample bootstrap band around `RCol(pi(r_hat, s_hat))`: both empirical
/// measures (denominator `n`) are resampled `b` times, and the band is
/// `RCol -/+ sqrt(2) u* / sqrt(n)`.
pub fn rcol_cb_bootstrap(
    setup: &RotSetup<'_>,
    r_hat: &crate::space::Prob,
    s_hat: &crate::space::Prob,
    n: usize,
    b: usize,
    alpha: f64,
    seed: u64,
) -> Result<BootstrapBand> {
    check_alpha(alpha)?;
    if b < 50 {
        return Err(RotError::invalid(format!("need at least 50 bootstrap replicates, got {b}")));
    }
    if n == 0 {
        return Err(RotError::invalid("sample size must be positive"));
    }
    let c = setup.cost;
    let plan = setup.solve(r_hat, s_hat)?;
    let curve = rcol(&plan, c, None)?;
    let thresholds = curve.thresholds.clone();
    let (reps, failures) = run_replicates(b, seed, BOOTSTRAP_MAX_FAILURE_RATE, |k, rng| {
        let r_star = sample_empirical(rng, r_hat, n)?;
        let s_star = sample_empirical(rng, s_hat, n)?;
        let p = setup.solve(&r_star, &s_star)?;
        let values = Bins::for_plan(&p, c, &thresholds).cumulate(p.entries());
        Ok((k, values))
    })?;
    let scale = (n as f64 / 2.0).sqrt();
    let mut sups: Vec<f64> = reps
        .iter()
        .map(|(_, v)| {
            v.iter()
                .zip(&curve.values)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
                * scale
        })
        .collect();
    sups.sort_by(f64::total_cmp);
    let u = sorted_quantile(&sups, 1.0 - alpha);
    let half = 2f64.sqrt() * u / (n as f64).sqrt();
    let (replicate_index, replicates) = reps.into_iter().unzip();
    Ok(BootstrapBand {
        curve: curve.with_band(half, alpha, 0.0, 1.0),
        n,
        quantile: u,
        replicate_index,
        replicates,
        failures,
    })
}

/// Difference `A - B` of two bootstrapped curves with a uniform band from
/// replicate pairs matched by index: the `(1 - alpha)` quantile of
/// `sup_t |(A*_k - A) - (B*_k - B)|` over the union of both jump sets.
pub fn rcol_diff(a: &BootstrapBand, b: &BootstrapBand, alpha: f64) -> Result<RColCurve> {
    check_alpha(alpha)?;
    let (ta, tb) = (&a.curve.thresholds, &b.curve.thresholds);
    let (ma, mb) = (ta.last().copied().unwrap_or(0.0), tb.last().copied().unwrap_or(0.0));
    if (ma - mb).abs() > 1e-9 * ma.abs().max(mb.abs()).max(1.0) {
        return Err(RotError::invalid(format!(
            "curves come from different spaces (largest cost {ma} vs {mb})"
        )));
    }
    let grid = crate::space::merge_close(ta.iter().chain(tb).copied().collect());
    let values: Vec<f64> = grid.iter().map(|&t| a.curve.eval(t) - b.curve.eval(t)).collect();
    let step = |thresholds: &[f64], values: &[f64], t: f64| {
        let k = thresholds.partition_point(|&x| x <= t);
        if k == 0 {
            0.0
        } else {
            values[k - 1]
        }
    };
    let mut sups = Vec::new();
    let (mut i, mut j) = (0, 0);
    while i < a.replicate_index.len() && j < b.replicate_index.len() {
        match a.replicate_index[i].cmp(&b.replicate_index[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                let (ra, rb) = (&a.replicates[i], &b.replicates[j]);
                let sup = grid
                    .iter()
                    .zip(&values)
                    .map(|(&t, &d)| (step(ta, ra, t) - step(tb, rb, t) - d).abs())
                    .fold(0.0, f64::max);
                sups.push(sup);
                i += 1;
                j += 1;
            }
        }
    }
    if sups.is_empty() {
        return Err(RotError::invalid("no bootstrap replicate pairs share an index"));
    }
    sups.sort_by(f64::total_cmp);
    let half = sorted_quantile(&sups, 1.0 - alpha);
    Ok(RColCurve::point(grid, values).with_band(half, alpha, -1.0, 1.0))
}
