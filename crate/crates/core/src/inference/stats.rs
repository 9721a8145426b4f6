use rayon::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{normal_quantile, replicate_rng, sample_empirical};
use crate::error::{Result, RotError};
use crate::regularizer::Regularizer;
use crate::sensitivity::{divergence_variance, plan_covariance, SampleMode};
use crate::solver::{divergence, solve, SolverOptions, TransportPlan};
use crate::space::{GroundCost, Prob};

/// Cost, regularizer and strength shared by every solve in an experiment.
#[derive(Clone, Copy)]
pub struct RotSetup<'a> {
    pub cost: &'a dyn GroundCost,
    pub reg: Regularizer,
    /// Absolute regularization strength.
    pub lambda: f64,
    pub opts: SolverOptions,
}

impl<'a> RotSetup<'a> {
    pub fn new(cost: &'a dyn GroundCost, reg: Regularizer, lambda: f64) -> Self {
        Self {
            cost,
            reg,
            lambda,
            opts: SolverOptions::default(),
        }
    }

    pub fn with_options(mut self, opts: SolverOptions) -> Self {
        self.opts = opts;
        self
    }

    pub fn solve(&self, r: &Prob, s: &Prob) -> Result<TransportPlan> {
        solve(self.reg, self.cost, r, s, self.lambda, &self.opts)
    }

    /// Divergence together with the plan it came from.
    pub fn divergence(&self, r: &Prob, s: &Prob) -> Result<(f64, TransportPlan)> {
        let plan = self.solve(r, s)?;
        Ok((divergence(self.cost, &plan), plan))
    }

    /// Limit standard deviation of the divergence at a solved plan.
    pub fn sigma(&self, plan: &TransportPlan, mode: SampleMode) -> Result<f64> {
        let cov = plan_covariance(self.reg, plan, mode)?;
        Ok(divergence_variance(plan, self.cost, &cov)?.sqrt())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleKind {
    Mc,
    Bootstrap,
    GaussianLimit,
    OtLimit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateFailure {
    pub index: usize,
    pub message: String,
}

/// Replicated values of a statistic; failed replicates are listed, not
/// silently dropped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleDistribution {
    pub values: Vec<f64>,
    pub kind: SampleKind,
    pub n: usize,
    pub m: Option<usize>,
    pub seed: u64,
    pub studentized: bool,
    pub failures: Vec<ReplicateFailure>,
}

/// Run `count` seeded replicates in parallel, keeping their order.
///
/// Fails when more than `max_failure_rate * count` replicates fail.
pub fn run_replicates<T, F>(
    count: usize,
    seed: u64,
    max_failure_rate: f64,
    f: F,
) -> Result<(Vec<T>, Vec<ReplicateFailure>)>
where
    T: Send,
    F: Fn(usize, &mut ChaCha8Rng) -> Result<T> + Sync,
{
    let results: Vec<Result<T>> = (0..count)
        .into_par_iter()
        .map(|k| {
            let mut rng = replicate_rng(seed, k as u64);
            f(k, &mut rng)
        })
        .collect();
    let mut ok = Vec::with_capacity(count);
    let mut failures = Vec::new();
    for (index, r) in results.into_iter().enumerate() {
        match r {
            Ok(v) => ok.push(v),
            Err(e) => failures.push(ReplicateFailure {
                index,
                message: e.to_string(),
            }),
        }
    }
    if failures.len() as f64 > max_failure_rate * count as f64 {
        return Err(RotError::TooManyFailures {
            failed: failures.len(),
            total: count,
        });
    }
    Ok((ok, failures))
}

const MAX_FAILURE_RATE: f64 = 0.01;

fn studentized(stat: f64, sigma_hat: f64) -> Result<f64> {
    if sigma_hat > 0.0 && sigma_hat.is_finite() {
        Ok(stat / sigma_hat)
    } else if stat == 0.0 {
        Ok(0.0)
    } else {
        Err(RotError::Numerical("estimated standard deviation is zero".into()))
    }
}

/// `sqrt(n) {W(r_n, s) - W(r, s)}` over seeded replicates, optionally divided
/// by the plug-in standard deviation at `(r_n, s)`.
pub fn sinkhorn_statistic(
    setup: &RotSetup<'_>,
    r: &Prob,
    s: &Prob,
    n: usize,
    replicates: usize,
    seed: u64,
    studentize: bool,
) -> Result<SampleDistribution> {
    let (w0, _) = setup.divergence(r, s)?;
    let scale = (n as f64).sqrt();
    let (values, failures) = run_replicates(replicates, seed, MAX_FAILURE_RATE, |_, rng| {
        let r_hat = sample_empirical(rng, r, n)?;
        let (w, plan) = setup.divergence(&r_hat, s)?;
        let stat = scale * (w - w0);
        if studentize {
            studentized(stat, setup.sigma(&plan, SampleMode::OneSample)?)
        } else {
            Ok(stat)
        }
    })?;
    Ok(SampleDistribution {
        values,
        kind: SampleKind::Mc,
        n,
        m: None,
        seed,
        studentized: studentize,
        failures,
    })
}

/// `sqrt(nm/(n+m)) {W(r_n, s_m) - W(r, s)}`, optionally studentized with the
/// two-sample plug-in deviation at `delta = m/(n+m)`.
#[allow(clippy::too_many_arguments)]
pub fn two_sample_statistic(
    setup: &RotSetup<'_>,
    r: &Prob,
    s: &Prob,
    n: usize,
    m: usize,
    replicates: usize,
    seed: u64,
    studentize: bool,
) -> Result<SampleDistribution> {
    let (w0, _) = setup.divergence(r, s)?;
    let (nf, mf) = (n as f64, m as f64);
    let scale = (nf * mf / (nf + mf)).sqrt();
    let delta = mf / (nf + mf);
    let (values, failures) = run_replicates(replicates, seed, MAX_FAILURE_RATE, |_, rng| {
        let r_hat = sample_empirical(rng, r, n)?;
        let s_hat = sample_empirical(rng, s, m)?;
        let (w, plan) = setup.divergence(&r_hat, &s_hat)?;
        let stat = scale * (w - w0);
        if studentize {
            studentized(stat, setup.sigma(&plan, SampleMode::TwoSample { delta })?)
        } else {
            Ok(stat)
        }
    })?;
    Ok(SampleDistribution {
        values,
        kind: SampleKind::Mc,
        n,
        m: Some(m),
        seed,
        studentized: studentize,
        failures,
    })
}

/// Naive n-out-of-n bootstrap: `sqrt(n) {W(r_n*, s) - W(r_n, s)}` with
/// `r_n*` drawn with replacement from the empirical `r_hat`.
pub fn bootstrap_statistic(
    setup: &RotSetup<'_>,
    r_hat: &Prob,
    s: &Prob,
    n: usize,
    b: usize,
    seed: u64,
) -> Result<SampleDistribution> {
    let (w_hat, _) = setup.divergence(r_hat, s)?;
    let scale = (n as f64).sqrt();
    let (values, failures) = run_replicates(b, seed, MAX_FAILURE_RATE, |_, rng| {
        let r_star = sample_empirical(rng, r_hat, n)?;
        let (w, _) = setup.divergence(&r_star, s)?;
        Ok(scale * (w - w_hat))
    })?;
    Ok(SampleDistribution {
        values,
        kind: SampleKind::Bootstrap,
        n,
        m: None,
        seed,
        studentized: false,
        failures,
    })
}

/// Bootstrap replicates of the full plan, `sqrt(n) {pi(r_n*, s) - pi(r_n, s)}`
/// as row-major `N^2` vectors.
pub fn bootstrap_plans(
    setup: &RotSetup<'_>,
    r_hat: &Prob,
    s: &Prob,
    n: usize,
    b: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let base = setup.solve(r_hat, s)?.to_full();
    let scale = (n as f64).sqrt();
    let (plans, _) = run_replicates(b, seed, MAX_FAILURE_RATE, |_, rng| {
        let r_star = sample_empirical(rng, r_hat, n)?;
        let plan = setup.solve(&r_star, s)?.to_full();
        Ok(plan.iter().zip(&base).map(|(a, b)| scale * (a - b)).collect())
    })?;
    Ok(plans)
}

/// `M` draws from a Gaussian plan limit, each over the support cells of
/// the covariance. Draw `k` uses the generator of replicate `k`.
pub fn gaussian_limit_sample(
    cov: &crate::sensitivity::PlanCovariance,
    m: usize,
    seed: u64,
) -> Vec<Vec<f64>> {
    (0..m)
        .into_par_iter()
        .map(|k| {
            let mut rng = replicate_rng(seed, k as u64);
            let mut out = vec![0.0; cov.cells()];
            cov.sample_into(&mut rng, &mut out);
            out
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval {
    pub estimate: f64,
    pub sigma: f64,
    pub level: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Limit-law interval `W -/+ z_{1-alpha/2} sigma * rate`, with rate
/// `1/sqrt(n)` or `sqrt((n+m)/(nm))` when `m` is given.
pub fn confidence_interval(estimate: f64, sigma: f64, n: usize, m: Option<usize>, alpha: f64) -> Result<ConfidenceInterval> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(RotError::invalid(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if n == 0 || m == Some(0) {
        return Err(RotError::invalid("sample sizes must be positive"));
    }
    let rate = match m {
        None => 1.0 / (n as f64).sqrt(),
        Some(m) => ((n + m) as f64 / (n as f64 * m as f64)).sqrt(),
    };
    let half = normal_quantile(1.0 - alpha / 2.0) * sigma * rate;
    Ok(ConfidenceInterval {
        estimate,
        sigma,
        level: 1.0 - alpha,
        lower: estimate - half,
        upper: estimate + half,
    })
}
