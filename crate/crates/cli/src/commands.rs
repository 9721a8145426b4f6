use std::io::Write;
use std::path::Path;

use serde::Serialize;
use serde_json::{json, Map, Value};

use rot_core::coloc::{
    image_to_distribution, rcol_cb_bootstrap, rcol_cb_gaussian, rcol_diff, BootstrapBand, IntensityImage,
    RColCurve,
};
use rot_core::inference::{
    bootstrap_statistic, confidence_interval, mc_experiment, replicate_seed, resample_distribution, McConfig,
    RotSetup,
};
use rot_core::sensitivity::{divergence_variance, objective_variance, plan_gradient};
use rot_core::solver::dual_potentials;
use rot_core::space::empirical_distribution;
use rot_core::{
    plan_covariance, solve, CostVector, GroundCost, GroundSpace, Metric, MetricCost, Prob, Regularizer, SampleMode,
    SolverOptions,
};

use crate::config::*;
use crate::error::CliError;
use crate::output::{Inputs, Run};

fn parse<T: std::str::FromStr<Err = rot_core::RotError>>(s: &str) -> Result<T, CliError> {
    Ok(s.parse()?)
}

fn load_cost(args: &CostArgs, inputs: &mut Inputs) -> Result<CostVector, CliError> {
    match (&args.cost, args.grid) {
        (Some(path), _) => {
            inputs.digest(path)?;
            let entries = rot_core::io::read_vector_csv(path)?;
            let n = (entries.len() as f64).sqrt().round() as usize;
            if n * n != entries.len() {
                return Err(CliError::usage(format!(
                    "{} holds {} values, not N^2",
                    path.display(),
                    entries.len()
                )));
            }
            Ok(CostVector::from_entries(n, entries, args.p)?)
        }
        (None, Some(side)) => {
            let space = GroundSpace::grid(side, args.extent)?;
            Ok(CostVector::from_metric(&space, args.p, parse::<Metric>(&args.metric)?)?)
        }
        (None, None) => Err(CliError::usage("give a cost file (--cost) or a grid (--grid)")),
    }
}

fn load_prob(path: &Path, normalize: bool, n: usize, inputs: &mut Inputs) -> Result<Prob, CliError> {
    inputs.digest(path)?;
    let w = rot_core::io::read_vector_csv(path)?;
    if w.len() != n {
        return Err(CliError::usage(format!(
            "{} has {} weights but the cost is on {n} points",
            path.display(),
            w.len()
        )));
    }
    Ok(if normalize { Prob::from_masses(&w)? } else { Prob::new(w)? })
}

#[derive(Debug, Serialize)]
struct Strength {
    lambda: f64,
    lambda0: Option<f64>,
    q50: f64,
    /// Which flag fixed the strength.
    lambda_source: &'static str,
}

fn strength(reg: &RegArgs, c: &dyn GroundCost) -> Result<Strength, CliError> {
    let q50 = c.quantile(0.5)?;
    let (lambda, source) = match (reg.lambda, reg.lambda0) {
        (Some(l), _) => (l, "lambda"),
        (None, Some(l0)) => (l0 * q50, "lambda0"),
        (None, None) => (DEFAULT_LAMBDA0 * q50, "lambda0"),
    };
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(CliError::usage(format!("regularization strength must be positive, got {lambda}")));
    }
    Ok(Strength {
        lambda,
        lambda0: reg.lambda.is_none().then_some(reg.lambda0.unwrap_or(DEFAULT_LAMBDA0)),
        q50,
        lambda_source: source,
    })
}

fn options(reg: &RegArgs) -> SolverOptions {
    SolverOptions {
        tol: reg.tol,
        max_iter: reg.max_iter,
        ..SolverOptions::default()
    }
}

/// Echo the result on stdout; a closed pipe is not an error.
fn print_json(value: &Value) {
    let _ = writeln!(std::io::stdout().lock(), "{value:#}");
}

/// Required settings are checked after the config file is merged, so a
/// manifest alone can drive a rerun.
fn need<'a, T>(value: &'a Option<T>, flag: &str) -> Result<&'a T, CliError> {
    value
        .as_ref()
        .ok_or_else(|| CliError::usage(format!("missing --{flag} (flag or config key)")))
}

fn marginals(args: &MarginalArgs, n: usize, inputs: &mut Inputs) -> Result<(Prob, Prob), CliError> {
    let r = load_prob(need(&args.r, "r")?, args.normalize, n, inputs)?;
    let s = load_prob(need(&args.s, "s")?, args.normalize, n, inputs)?;
    Ok((r, s))
}

fn require_seed(seed: Option<u64>, sub: &str) -> Result<u64, CliError> {
    seed.ok_or_else(|| CliError::usage(format!("`{sub}` needs --seed (or \"seed\" in the config)")))
}

/// Orientation note shared by the outputs that depend on it.
const ORIENTATION: &str = "r is the first marginal; the last coordinate of s is dropped";

pub fn solve_cmd(cfg: &SolveConfig, mut run: Run) -> Result<(), CliError> {
    let c = load_cost(&cfg.cost, &mut run.inputs)?;
    let n = c.size();
    let (r, s) = marginals(&cfg.marginals, n, &mut run.inputs)?;
    let reg: Regularizer = parse(&cfg.reg.reg)?;
    let st = strength(&cfg.reg, &c)?;
    let plan = solve(reg, &c, &r, &s, st.lambda, &options(&cfg.reg))?;
    let full = plan.to_full();
    run.outputs.csv("plan.csv", full.chunks(n));
    let d = plan.diagnostics();
    let result = json!({
        "plan_file": "plan.csv",
        "divergence": rot_core::divergence(&c, &plan),
        "transport_cost": plan.transport_cost(&c),
        "iterations": d.iterations,
        "residual": d.residual,
        "method": d.method,
        "regularizer": reg.to_string(),
        "strength": st,
    });
    run.outputs.json("result.json", &result)?;
    run.finish(cfg, None)?;
    print_json(&result);
    Ok(())
}

pub fn variance_cmd(cfg: &VarianceConfig, mut run: Run) -> Result<(), CliError> {
    let c = load_cost(&cfg.cost, &mut run.inputs)?;
    let n_pts = c.size();
    let (r, s) = marginals(&cfg.marginals, n_pts, &mut run.inputs)?;
    let reg: Regularizer = parse(&cfg.reg.reg)?;
    let st = strength(&cfg.reg, &c)?;
    let mode = match cfg.mode {
        ModeArg::One => SampleMode::OneSample,
        ModeArg::Two => {
            let delta = match (cfg.delta, cfg.n, cfg.m) {
                (Some(d), _, _) => d,
                (None, Some(n), Some(m)) if n + m > 0 => m as f64 / (n + m) as f64,
                _ => return Err(CliError::usage("two-sample mode needs --delta or both --n and --m")),
            };
            SampleMode::TwoSample { delta }
        }
    };
    let plan = solve(reg, &c, &r, &s, st.lambda, &options(&cfg.reg))?;
    let cov = plan_covariance(reg, &plan, mode)?;
    let var = divergence_variance(&plan, &c, &cov)?;
    let objective_sigma = if reg.is_entropy() && mode == SampleMode::OneSample {
        Some(objective_variance(&dual_potentials(&plan, &c)?, &r).sqrt())
    } else {
        None
    };
    let mut result = json!({
        "divergence": rot_core::divergence(&c, &plan),
        "sigma_divergence": var.sqrt(),
        "sigma2_divergence": var,
        "objective_sigma": objective_sigma,
        "mode": mode,
        "orientation": ORIENTATION,
        "support_rows": plan.rows(),
        "support_cols": plan.cols(),
        "regularizer": reg.to_string(),
        "strength": st,
    });
    if cfg.matrices {
        let grad = plan_gradient(reg, &plan)?.grad_phi;
        run.outputs
            .csv("plan_gradient.csv", grad.row_iter().map(|row| row.iter().copied().collect::<Vec<_>>()));
        let sigma = cov.materialize()?;
        run.outputs
            .csv("sigma_plan.csv", sigma.row_iter().map(|row| row.iter().copied().collect::<Vec<_>>()));
        result["plan_gradient_file"] = json!("plan_gradient.csv");
        result["sigma_plan_file"] = json!("sigma_plan.csv");
    }
    run.outputs.json("result.json", &result)?;
    run.finish(cfg, None)?;
    print_json(&result);
    Ok(())
}

pub fn ci_cmd(cfg: &CiConfig, mut run: Run) -> Result<(), CliError> {
    let c = load_cost(&cfg.cost, &mut run.inputs)?;
    let n_pts = c.size();
    let (r, s) = marginals(&cfg.marginals, n_pts, &mut run.inputs)?;
    let reg: Regularizer = parse(&cfg.reg.reg)?;
    let st = strength(&cfg.reg, &c)?;
    let setup = RotSetup::new(&c, reg, st.lambda).with_options(options(&cfg.reg));
    let (w, plan) = setup.divergence(&r, &s)?;
    let n = *need(&cfg.n, "n")?;
    let mode = match cfg.m {
        None => SampleMode::OneSample,
        Some(m) => SampleMode::TwoSample {
            delta: m as f64 / (n + m) as f64,
        },
    };
    let sigma = setup.sigma(&plan, mode)?;
    let ci = confidence_interval(w, sigma, n, cfg.m, cfg.alpha)?;
    let result = json!({
        "interval": ci,
        "n": n,
        "m": cfg.m,
        "mode": mode,
        "orientation": ORIENTATION,
        "regularizer": reg.to_string(),
        "strength": st,
    });
    run.outputs.json("result.json", &result)?;
    run.finish(cfg, None)?;
    print_json(&result);
    Ok(())
}

fn sorted_quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    rot_core::space::sorted_quantile(&v, q)
}

pub fn bootstrap_cmd(cfg: &BootstrapConfig, mut run: Run) -> Result<(), CliError> {
    let seed = require_seed(cfg.seed, "bootstrap")?;
    let c = load_cost(&cfg.cost, &mut run.inputs)?;
    let n_pts = c.size();
    let (r_hat, n) = match (&cfg.data, &cfg.r) {
        (Some(path), _) => {
            run.inputs.digest(path)?;
            let idx = rot_core::io::read_vector_csv(path)?
                .into_iter()
                .map(|v| {
                    if v >= 0.0 && v.fract() == 0.0 {
                        Ok(v as usize)
                    } else {
                        Err(CliError::usage(format!("sample value {v} is not a point index")))
                    }
                })
                .collect::<Result<Vec<_>, _>>()?;
            (empirical_distribution(&idx, n_pts)?, idx.len())
        }
        (None, Some(path)) => {
            let n = cfg.n.ok_or_else(|| CliError::usage("--r needs --n"))?;
            (load_prob(path, cfg.normalize, n_pts, &mut run.inputs)?, n)
        }
        (None, None) => return Err(CliError::usage("give --data or --r with --n")),
    };
    let s = load_prob(need(&cfg.s, "s")?, cfg.normalize, n_pts, &mut run.inputs)?;
    let reg: Regularizer = parse(&cfg.reg.reg)?;
    let st = strength(&cfg.reg, &c)?;
    if !(cfg.alpha > 0.0 && cfg.alpha < 1.0) {
        return Err(CliError::usage("alpha must lie in (0, 1)"));
    }
    let setup = RotSetup::new(&c, reg, st.lambda).with_options(options(&cfg.reg));
    let (w, _) = setup.divergence(&r_hat, &s)?;
    let dist = bootstrap_statistic(&setup, &r_hat, &s, n, cfg.b, seed)?;
    run.outputs.column("bootstrap.csv", &dist.values);
    let root = (n as f64).sqrt();
    let q_lo = sorted_quantile(&dist.values, cfg.alpha / 2.0);
    let q_hi = sorted_quantile(&dist.values, 1.0 - cfg.alpha / 2.0);
    let result = json!({
        "estimate": w,
        "n": n,
        "B": cfg.b,
        "replicates": dist.values.len(),
        "failures": dist.failures,
        "samples_file": "bootstrap.csv",
        "statistic": "sqrt(n) (W(r*, s) - W(r_n, s))",
        "level": 1.0 - cfg.alpha,
        "lower": w - q_hi / root,
        "upper": w - q_lo / root,
        "regularizer": reg.to_string(),
        "strength": st,
    });
    run.outputs.json("result.json", &result)?;
    run.finish(cfg, Some(seed))?;
    print_json(&result);
    Ok(())
}

pub fn mc_cmd(cfg: &McConfig, mut run: Run) -> Result<(), CliError> {
    let report = mc_experiment(cfg)?;
    let mut cells = Vec::new();
    for (k, cell) in report.cells.iter().enumerate() {
        let raw = format!("cell{k}_raw.csv");
        let std = format!("cell{k}_standardized.csv");
        let qq = format!("cell{k}_qq.csv");
        run.outputs.column(&raw, &cell.raw);
        run.outputs.column(&std, &cell.standardized);
        run.outputs.csv(&qq, cell.qq.iter().map(|&(a, b)| [a, b]));
        cells.push(json!({
            "lambda0": cell.lambda0,
            "lambda": cell.lambda,
            "n": cell.n,
            "sigma": cell.sigma,
            "ks_normal": cell.ks_normal,
            "ks_ot_limit": cell.ks_ot_limit,
            "ks_gaussian_limit": cell.ks_gaussian_limit,
            "replicates": cell.raw.len(),
            "failures": cell.failures,
            "raw_file": raw,
            "standardized_file": std,
            "qq_file": qq,
        }));
    }
    let result = json!({
        "r": report.r,
        "s": report.s,
        "q50": report.q50,
        "cells": cells,
    });
    run.outputs.json("report.json", &result)?;
    run.finish(cfg, Some(cfg.seed))?;
    print_json(&result);
    Ok(())
}

fn load_image(path: &Path, pixel_size: f64, inputs: &mut Inputs) -> Result<IntensityImage, CliError> {
    inputs.digest(path)?;
    Ok(IntensityImage::load(path, pixel_size)?)
}

fn curve_rows(curve: &RColCurve) -> Vec<[f64; 4]> {
    let lower = curve.lower.clone().unwrap_or_else(|| curve.values.clone());
    let upper = curve.upper.clone().unwrap_or_else(|| curve.values.clone());
    (0..curve.thresholds.len())
        .map(|k| [curve.thresholds[k], curve.values[k], lower[k], upper[k]])
        .collect()
}

pub fn rcol_cmd(cfg: &RcolConfig, mut run: Run) -> Result<(), CliError> {
    let seed = require_seed(cfg.seed, "rcol")?;
    let a = load_image(need(&cfg.img_a, "imgA")?, cfg.pixel_size, &mut run.inputs)?;
    let b = load_image(need(&cfg.img_b, "imgB")?, cfg.pixel_size, &mut run.inputs)?;
    let second = match (&cfg.img_c, &cfg.img_d) {
        (Some(pc), Some(pd)) => Some((
            load_image(pc, cfg.pixel_size, &mut run.inputs)?,
            load_image(pd, cfg.pixel_size, &mut run.inputs)?,
        )),
        (None, None) => None,
        _ => return Err(CliError::usage("--imgC and --imgD go together")),
    };
    let shape = (a.width(), a.height());
    let all_same = [&b]
        .into_iter()
        .chain(second.iter().flat_map(|(c, d)| [c, d]))
        .all(|img| (img.width(), img.height()) == shape);
    if !all_same {
        return Err(CliError::usage("all images must share the same dimensions"));
    }
    if second.is_some() && cfg.band != BandArg::Bootstrap {
        return Err(CliError::usage("curve differences need --band bootstrap"));
    }
    let (space, pa) = image_to_distribution(&a)?;
    let (_, pb) = image_to_distribution(&b)?;
    let n_pts = space.len();
    let cost = MetricCost::new(space, parse::<Metric>(&cfg.metric)?, cfg.p)?;
    let reg: Regularizer = parse(&cfg.reg.reg)?;
    let st = strength(&cfg.reg, &cost)?;
    let n = cfg.resample.unwrap_or_else(|| default_resample(n_pts));
    if n == 0 {
        return Err(CliError::usage("resample size must be positive"));
    }
    let setup = RotSetup::new(&cost, reg, st.lambda).with_options(options(&cfg.reg));
    let draw = |p: &Prob, k: u64| resample_distribution(p, n, replicate_seed(seed, u64::MAX - k));
    let (ra, rb) = (draw(&pa, 0)?, draw(&pb, 1)?);

    let mut result = Map::new();
    let curve;
    match cfg.band {
        BandArg::Gaussian => {
            let plan = setup.solve(&ra, &rb)?;
            let cov = plan_covariance(reg, &plan, SampleMode::TwoSample { delta: 0.5 })?;
            curve = rcol_cb_gaussian(&plan, &cov, &cost, n, Some(n), cfg.alpha, cfg.draws, replicate_seed(seed, 0))?;
            // Report the quantile on the sqrt(n/2) scale shared with the bootstrap band.
            let u = curve.half_width.unwrap_or(0.0) * (n as f64 / 2.0).sqrt();
            result.insert("u".into(), json!(u));
            result.insert("failures".into(), json!([]));
        }
        BandArg::Bootstrap => {
            let band = rcol_cb_bootstrap(&setup, &ra, &rb, n, cfg.b, cfg.alpha, replicate_seed(seed, 0))?;
            result.insert("u".into(), json!(band.quantile));
            result.insert("failures".into(), json!(band.failures));
            if let Some((c_img, d_img)) = &second {
                let (_, pc) = image_to_distribution(c_img)?;
                let (_, pd) = image_to_distribution(d_img)?;
                let (rc, rd) = (draw(&pc, 2)?, draw(&pd, 3)?);
                let other: BootstrapBand =
                    rcol_cb_bootstrap(&setup, &rc, &rd, n, cfg.b, cfg.alpha, replicate_seed(seed, 0))?;
                let diff = rcol_diff(&band, &other, cfg.alpha)?;
                run.outputs.csv("curve_cd.csv", curve_rows(&other.curve));
                run.outputs.csv("difference.csv", curve_rows(&diff));
                result.insert(
                    "difference".into(),
                    json!({
                        "curve_file": "difference.csv",
                        "second_curve_file": "curve_cd.csv",
                        "half_width": diff.half_width,
                        "second_failures": other.failures,
                        "pairing": "replicates paired by index",
                    }),
                );
            }
            curve = band.curve;
        }
    }
    run.outputs.csv("curve.csv", curve_rows(&curve));
    result.insert("curve_file".into(), json!("curve.csv"));
    result.insert("n".into(), json!(n));
    result.insert("alpha".into(), json!(cfg.alpha));
    result.insert("band".into(), json!(cfg.band));
    result.insert("half_width".into(), json!(curve.half_width));
    result.insert("regularizer".into(), json!(reg.to_string()));
    result.insert("strength".into(), serde_json::to_value(&st)?);
    let result = Value::Object(result);
    run.outputs.json("result.json", &result)?;
    run.finish(cfg, Some(seed))?;
    print_json(&result);
    Ok(())
}

/// `50 sqrt(N)`, rounded.
pub fn default_resample(n_points: usize) -> usize {
    (50.0 * (n_points as f64).sqrt()).round() as usize
}
