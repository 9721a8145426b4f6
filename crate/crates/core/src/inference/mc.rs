use serde::{Deserialize, Serialize};

use super::stats::{run_replicates, ReplicateFailure, RotSetup};
use super::{dirichlet_sample, ks_normal, ks_normal_scaled, ks_two_sample, qq_normal, replicate_seed, sample_empirical};
use crate::error::{Result, RotError};
use crate::regularizer::Regularizer;
use crate::sensitivity::SampleMode;
use crate::solver::{exact_ot_baseline, ot_limit_sample, SolverOptions, EXACT_MAX_N};
use crate::space::{CostVector, GroundCost, GroundSpace, Metric};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum McMode {
    /// `r = s`, only `r` is sampled.
    OneSampleEq,
    /// Independent `r != s`, only `r` is sampled.
    OneSampleNeq,
    /// Both marginals sampled with equal sizes.
    TwoSample,
}

/// How the absolute regularization strength is chosen per cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LambdaSchedule {
    /// `lambda = lambda0 * q50(c)`.
    Fixed,
    /// `lambda(n) = kappa / log(sqrt(n))`, ignoring `lambda0`.
    LogRoot { kappa: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McConfig {
    /// Side `L` of the `L x L` grid.
    pub grid_side: usize,
    /// Side length of the square covered by the grid.
    pub extent: f64,
    pub lambda0: Vec<f64>,
    pub sample_sizes: Vec<usize>,
    pub replicates: usize,
    pub dirichlet_alpha: f64,
    pub p: f64,
    pub metric: Metric,
    pub reg: Regularizer,
    pub seed: u64,
    pub mode: McMode,
    pub studentize: bool,
    /// Draws from the unregularized limit law for comparison (0 disables;
    /// only for `one_sample_eq` on at most 6 points).
    pub ot_limit_draws: usize,
    pub schedule: LambdaSchedule,
    pub tol: f64,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            grid_side: 4,
            extent: 1.0,
            lambda0: vec![2.0],
            sample_sizes: vec![25],
            replicates: 20_000,
            dirichlet_alpha: 1.0,
            p: 1.0,
            metric: Metric::Euclidean,
            reg: Regularizer::Entropy,
            seed: 0,
            mode: McMode::OneSampleEq,
            studentize: true,
            ot_limit_draws: 0,
            schedule: LambdaSchedule::Fixed,
            tol: 1e-9,
        }
    }
}

impl McConfig {
    fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(RotError::invalid("replicates must be at least 1"));
        }
        if self.grid_side == 0 || self.sample_sizes.contains(&0) {
            return Err(RotError::invalid("grid side and sample sizes must be positive"));
        }
        if self.lambda0.is_empty() || self.sample_sizes.is_empty() {
            return Err(RotError::invalid("need at least one lambda0 and one sample size"));
        }
        if self.lambda0.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
            return Err(RotError::invalid("lambda0 values must be positive"));
        }
        if let LambdaSchedule::LogRoot { kappa } = self.schedule {
            if !(kappa > 0.0) || self.sample_sizes.iter().any(|&n| n < 2) {
                return Err(RotError::invalid("log-root schedule needs kappa > 0 and n >= 2"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McCell {
    pub lambda0: f64,
    pub lambda: f64,
    pub n: usize,
    /// Population limit standard deviation of the divergence.
    pub sigma: f64,
    /// Unstandardized statistic `sqrt(rate) {W_hat - W}`.
    pub raw: Vec<f64>,
    /// Studentized, or divided by `sigma` when studentization is off.
    pub standardized: Vec<f64>,
    pub ks_normal: f64,
    pub qq: Vec<(f64, f64)>,
    pub failures: Vec<ReplicateFailure>,
    /// KS between `raw` and draws of the unregularized limit law.
    pub ks_ot_limit: Option<f64>,
    /// KS between `raw` and `N(0, sigma^2)`.
    pub ks_gaussian_limit: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub config: McConfig,
    pub r: Vec<f64>,
    pub s: Vec<f64>,
    /// Median cost entry.
    pub q50: f64,
    pub cells: Vec<McCell>,
}

/// Simulation study over a grid of `(lambda0, n)` cells: Dirichlet marginals
/// on an `L x L` grid, replicated Sinkhorn statistics, KS distances and QQ data.
pub fn mc_experiment(config: &McConfig) -> Result<McReport> {
    config.validate()?;
    let space = GroundSpace::grid(config.grid_side, config.extent)?;
    let cost = CostVector::from_metric(&space, config.p, config.metric)?;
    let n_points = cost.size();
    let q50 = cost.quantile(0.5)?;
    let r = dirichlet_sample(config.dirichlet_alpha, n_points, replicate_seed(config.seed, u64::MAX))?;
    let s = match config.mode {
        McMode::OneSampleEq => r.clone(),
        _ => dirichlet_sample(config.dirichlet_alpha, n_points, replicate_seed(config.seed, u64::MAX - 1))?,
    };
    let exact = if config.ot_limit_draws > 0 {
        if config.mode != McMode::OneSampleEq || n_points > EXACT_MAX_N {
            return Err(RotError::Unsupported(
                "unregularized limit comparison needs r = s on at most 6 points".into(),
            ));
        }
        Some(exact_ot_baseline(&cost, &r, &r)?)
    } else {
        None
    };
    let opts = SolverOptions::with_tol(config.tol);
    let mut cells = Vec::new();
    let mut cell_index = 0u64;
    for &lambda0 in &config.lambda0 {
        for &n in &config.sample_sizes {
            let lambda = match config.schedule {
                LambdaSchedule::Fixed => lambda0 * q50,
                LambdaSchedule::LogRoot { kappa } => kappa / (n as f64).sqrt().ln(),
            };
            let cell_seed = replicate_seed(config.seed, cell_index);
            cell_index += 1;
            let setup = RotSetup::new(&cost, config.reg, lambda).with_options(opts);
            let (w0, plan0) = setup.divergence(&r, &s)?;
            let (mode, rate) = match config.mode {
                McMode::TwoSample => (SampleMode::TwoSample { delta: 0.5 }, n as f64 / 2.0),
                _ => (SampleMode::OneSample, n as f64),
            };
            let sigma = setup.sigma(&plan0, mode)?;
            let scale = rate.sqrt();
            let two = config.mode == McMode::TwoSample;
            let studentize = config.studentize;
            let (pairs, failures) = run_replicates(config.replicates, cell_seed, 0.01, |_, rng| {
                let r_hat = sample_empirical(rng, &r, n)?;
                let s_hat = if two { sample_empirical(rng, &s, n)? } else { s.clone() };
                let (w, plan) = setup.divergence(&r_hat, &s_hat)?;
                let raw = scale * (w - w0);
                let sigma_hat = if studentize { Some(setup.sigma(&plan, mode)?) } else { None };
                Ok((raw, sigma_hat))
            })?;
            let raw: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let standardized: Vec<f64> = pairs
                .iter()
                .filter_map(|&(x, sh)| match sh {
                    Some(sd) if sd > 0.0 => Some(x / sd),
                    Some(_) => (x == 0.0).then_some(0.0),
                    None if sigma > 0.0 => Some(x / sigma),
                    None => Some(x),
                })
                .collect();
            if standardized.is_empty() {
                return Err(RotError::Numerical("no replicate could be standardized".into()));
            }
            let (ks_ot_limit, ks_gaussian_limit) = match &exact {
                Some(ex) => {
                    let draws = ot_limit_sample(
                        &cost,
                        &r,
                        &ex.dual_vertices,
                        config.ot_limit_draws,
                        replicate_seed(cell_seed, u64::MAX),
                    )?;
                    (Some(ks_two_sample(&raw, &draws)), Some(ks_normal_scaled(&raw, sigma)))
                }
                None => (None, None),
            };
            cells.push(McCell {
                lambda0,
                lambda,
                n,
                sigma,
                ks_normal: ks_normal(&standardized),
                qq: qq_normal(&standardized),
                raw,
                standardized,
                failures,
                ks_ot_limit,
                ks_gaussian_limit,
            });
        }
    }
    Ok(McReport {
        config: config.clone(),
        r: r.weights().to_vec(),
        s: s.weights().to_vec(),
        q50,
        cells,
    })
}
