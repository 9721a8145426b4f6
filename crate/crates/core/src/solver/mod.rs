//! Regularized transport plans.
//!
//! Marginals with zero entries are handled by dropping those points, solving
//! the problem on the supports and embedding the result back with zero rows
//! and columns. A [`TransportPlan`] therefore stores only the dense block on
//! `supp(r) x supp(s)`; every entry of that block is strictly positive.

mod exact;
mod newton;
mod sinkhorn;

pub use exact::{exact_ot_baseline, ot_limit_sample, ExactOt, EXACT_MAX_N};

use serde::{Deserialize, Serialize};

use crate::error::{Result, RotError};
use crate::regularizer::Regularizer;
use crate::space::{ConstraintOperator, GroundCost, Prob};

/// How the plan was computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMethod {
    /// Only one feasible coupling exists (a marginal is a point mass).
    Trivial,
    Sinkhorn,
    Newton,
    /// Sinkhorn followed by Newton polishing from its potentials.
    SinkhornNewton,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub method: SolveMethod,
    pub iterations: usize,
    /// Largest absolute deviation of any row or column sum from its marginal.
    pub residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Stop once the marginal residual is at most this value.
    pub tol: f64,
    /// Iteration cap for Sinkhorn.
    pub max_iter: usize,
    /// Iteration cap for Newton on the dual.
    pub newton_max_iter: usize,
    /// Sinkhorn iterations tried by [`solve`] before switching to Newton.
    pub sinkhorn_budget: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iter: 100_000,
            newton_max_iter: 500,
            sinkhorn_budget: 2_000,
        }
    }
}

impl SolverOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self {
            tol,
            ..Self::default()
        }
    }
}

/// Dense transport problem restricted to the supports of the marginals.
#[derive(Debug, Clone)]
pub(crate) struct Reduced {
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
    pub cost: Vec<f64>,
    pub r: Vec<f64>,
    pub s: Vec<f64>,
    pub lambda: f64,
}

impl Reduced {
    fn new(c: &dyn GroundCost, r: &Prob, s: &Prob, lambda: f64) -> Result<Self> {
        let n = c.size();
        if r.len() != n || s.len() != n {
            return Err(RotError::invalid(format!(
                "marginals of length {} and {} do not match a ground space of {n} points",
                r.len(),
                s.len()
            )));
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(RotError::invalid(format!("lambda must be positive, got {lambda}")));
        }
        let rows = r.support();
        let cols = s.support();
        let cost = c.block(&rows, &cols);
        Ok(Self {
            r: rows.iter().map(|&i| r.weights()[i]).collect(),
            s: cols.iter().map(|&j| s.weights()[j]).collect(),
            rows,
            cols,
            cost,
            lambda,
        })
    }

    pub fn m(&self) -> usize {
        self.rows.len()
    }

    pub fn n(&self) -> usize {
        self.cols.len()
    }

    /// Largest row or column sum deviation of a candidate plan.
    pub fn residual(&self, plan: &[f64]) -> f64 {
        let sums = ConstraintOperator::new(self.m(), self.n()).apply(plan);
        self.r
            .iter()
            .chain(&self.s)
            .zip(&sums)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    fn product_plan(&self) -> Vec<f64> {
        self.r
            .iter()
            .flat_map(|a| self.s.iter().map(move |b| a * b))
            .collect()
    }
}

/// A regularized transport plan between `r` and `s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransportPlan {
    n: usize,
    rows: Vec<usize>,
    cols: Vec<usize>,
    entries: Vec<f64>,
    r: Prob,
    s: Prob,
    lambda: f64,
    reg: Regularizer,
    p: f64,
    diagnostics: Diagnostics,
}

impl TransportPlan {
    fn from_reduced(
        red: Reduced,
        entries: Vec<f64>,
        r: &Prob,
        s: &Prob,
        reg: Regularizer,
        p: f64,
        method: SolveMethod,
        iterations: usize,
    ) -> Self {
        let residual = red.residual(&entries);
        Self {
            n: r.len(),
            rows: red.rows,
            cols: red.cols,
            entries,
            r: r.clone(),
            s: s.clone(),
            lambda: red.lambda,
            reg,
            p,
            diagnostics: Diagnostics {
                method,
                iterations,
                residual,
            },
        }
    }

    /// Ground space size `N`.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Support of `r` (row indices of the stored block).
    pub fn rows(&self) -> &[usize] {
        &self.rows
    }

    /// Support of `s` (column indices of the stored block).
    pub fn cols(&self) -> &[usize] {
        &self.cols
    }

    /// Row-major `rows().len() x cols().len()` block of positive entries.
    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn r(&self) -> &Prob {
        &self.r
    }

    pub fn s(&self) -> &Prob {
        &self.s
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn regularizer(&self) -> Regularizer {
        self.reg
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn diagnostics(&self) -> &Diagnostics {
        &self.diagnostics
    }

    pub fn is_reduced(&self) -> bool {
        self.rows.len() < self.n || self.cols.len() < self.n
    }

    /// Entry `(i, j)` in ground indices; zero outside the supports.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        match (self.rows.binary_search(&i), self.cols.binary_search(&j)) {
            (Ok(a), Ok(b)) => self.entries[a * self.cols.len() + b],
            _ => 0.0,
        }
    }

    /// The full row-major `N x N` plan.
    pub fn to_full(&self) -> Vec<f64> {
        let mut full = vec![0.0; self.n * self.n];
        let m = self.cols.len();
        for (a, &i) in self.rows.iter().enumerate() {
            for (b, &j) in self.cols.iter().enumerate() {
                full[i * self.n + j] = self.entries[a * m + b];
            }
        }
        full
    }

    /// Iterate `(i, j, mass)` over the stored block.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        let m = self.cols.len();
        self.entries
            .iter()
            .enumerate()
            .map(move |(k, &v)| (self.rows[k / m], self.cols[k % m], v))
    }

    pub fn min_entry(&self) -> f64 {
        self.entries.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn total_mass(&self) -> f64 {
        self.entries.iter().sum()
    }

    /// `<c, pi>`, the transport cost without the root.
    pub fn transport_cost(&self, c: &dyn GroundCost) -> f64 {
        self.iter().map(|(i, j, v)| c.cost(i, j) * v).sum()
    }

    /// Cost block matching [`Self::entries`].
    pub fn cost_block(&self, c: &dyn GroundCost) -> Vec<f64> {
        c.block(&self.rows, &self.cols)
    }
}

fn trivial_plan(red: &Reduced) -> Option<Vec<f64>> {
    (red.m() == 1 || red.n() == 1).then(|| red.product_plan())
}

fn require_full_support(r: &Prob, s: &Prob) -> Result<()> {
    if r.has_full_support() && s.has_full_support() {
        Ok(())
    } else {
        Err(RotError::ReductionRequired)
    }
}

/// Entropy-regularized plan by log-domain stabilized Sinkhorn scaling.
///
/// Fails with [`RotError::Convergence`] when `max_iter` iterations do not
/// bring the marginal residual below `tol`, and with
/// [`RotError::ReductionRequired`] on zero marginal entries (use [`solve`]).
pub fn sinkhorn_entropy(
    c: &dyn GroundCost,
    r: &Prob,
    s: &Prob,
    lambda: f64,
    tol: f64,
    max_iter: usize,
) -> Result<TransportPlan> {
    let red = Reduced::new(c, r, s, lambda)?;
    require_full_support(r, s)?;
    if let Some(plan) = trivial_plan(&red) {
        return Ok(TransportPlan::from_reduced(
            red,
            plan,
            r,
            s,
            Regularizer::Entropy,
            c.power(),
            SolveMethod::Trivial,
            0,
        ));
    }
    let out = sinkhorn::run(&red, tol, max_iter).map_err(|(e, _)| e)?;
    Ok(TransportPlan::from_reduced(
        red,
        out.plan,
        r,
        s,
        Regularizer::Entropy,
        c.power(),
        SolveMethod::Sinkhorn,
        out.iterations,
    ))
}

/// Plan for any regularizer by damped Newton iterations on the
/// `(m + n - 1)`-dimensional dual, `pi = grad f*((A_red^T mu - c) / lambda)`.
pub fn solve_general(
    reg: Regularizer,
    c: &dyn GroundCost,
    r: &Prob,
    s: &Prob,
    lambda: f64,
    opts: &SolverOptions,
) -> Result<TransportPlan> {
    let red = Reduced::new(c, r, s, lambda)?;
    require_full_support(r, s)?;
    if let Some(plan) = trivial_plan(&red) {
        return Ok(TransportPlan::from_reduced(
            red,
            plan,
            r,
            s,
            reg,
            c.power(),
            SolveMethod::Trivial,
            0,
        ));
    }
    let out = newton::run(reg, &red, opts.tol, opts.newton_max_iter, None)?;
    Ok(TransportPlan::from_reduced(
        red,
        out.plan,
        r,
        s,
        reg,
        c.power(),
        SolveMethod::Newton,
        out.iterations,
    ))
}

/// Default entry point: Sinkhorn for the entropy (with a Newton fallback
/// when scaling stalls), Newton for every other regularizer. Zero marginal
/// entries are removed before solving.
pub fn solve(
    reg: Regularizer,
    c: &dyn GroundCost,
    r: &Prob,
    s: &Prob,
    lambda: f64,
    opts: &SolverOptions,
) -> Result<TransportPlan> {
    let red = Reduced::new(c, r, s, lambda)?;
    if let Some(plan) = trivial_plan(&red) {
        return Ok(TransportPlan::from_reduced(
            red,
            plan,
            r,
            s,
            reg,
            c.power(),
            SolveMethod::Trivial,
            0,
        ));
    }
    if !reg.is_entropy() {
        let out = newton::run(reg, &red, opts.tol, opts.newton_max_iter, None)?;
        return Ok(TransportPlan::from_reduced(
            red,
            out.plan,
            r,
            s,
            reg,
            c.power(),
            SolveMethod::Newton,
            out.iterations,
        ));
    }
    let budget = opts.sinkhorn_budget.min(opts.max_iter);
    match sinkhorn::run(&red, opts.tol, budget) {
        Ok(out) => Ok(TransportPlan::from_reduced(
            red,
            out.plan,
            r,
            s,
            reg,
            c.power(),
            SolveMethod::Sinkhorn,
            out.iterations,
        )),
        Err((_, warm)) => {
            let out = newton::run(reg, &red, opts.tol, opts.newton_max_iter, warm)?;
            Ok(TransportPlan::from_reduced(
                red,
                out.plan,
                r,
                s,
                reg,
                c.power(),
                SolveMethod::SinkhornNewton,
                budget + out.iterations,
            ))
        }
    }
}

/// Regularized transport divergence `<c_p, pi>^(1/p)`.
pub fn divergence(c: &dyn GroundCost, plan: &TransportPlan) -> f64 {
    let inner = plan.transport_cost(c);
    if inner <= 0.0 {
        0.0
    } else {
        inner.powf(1.0 / c.power())
    }
}

/// Dual potentials of an entropy plan.
///
/// `c_ij + lambda log pi_ij = alpha_i + beta_j` on the supports, normalized
/// by `beta = 0` at the last support column. Entries outside the supports
/// are zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualPotentials {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    /// Largest deviation from the additive structure.
    pub residual: f64,
}

pub fn dual_potentials(plan: &TransportPlan, c: &dyn GroundCost) -> Result<DualPotentials> {
    if !plan.regularizer().is_entropy() {
        return Err(RotError::Unsupported(format!(
            "dual potentials are only defined here for the entropy, not {}",
            plan.regularizer()
        )));
    }
    let (m, n) = (plan.rows().len(), plan.cols().len());
    let lambda = plan.lambda();
    let cost = plan.cost_block(c);
    let logit: Vec<f64> = cost
        .iter()
        .zip(plan.entries())
        .map(|(c, p)| c + lambda * p.ln())
        .collect();
    let alpha_red: Vec<f64> = (0..m).map(|i| logit[i * n + n - 1]).collect();
    let beta_red: Vec<f64> = (0..n)
        .map(|j| {
            if j + 1 == n {
                0.0
            } else {
                (0..m).map(|i| logit[i * n + j] - alpha_red[i]).sum::<f64>() / m as f64
            }
        })
        .collect();
    let mut residual = 0.0f64;
    let mut scale = 1.0f64;
    for i in 0..m {
        for j in 0..n {
            let l = logit[i * n + j];
            scale = scale.max(l.abs());
            residual = residual.max((l - alpha_red[i] - beta_red[j]).abs());
        }
    }
    if !residual.is_finite() || residual > 1e-6 * scale {
        return Err(RotError::Numerical(format!(
            "plan is not additive in log space (deviation {residual:e})"
        )));
    }
    let mut alpha = vec![0.0; plan.n()];
    let mut beta = vec![0.0; plan.n()];
    for (a, &i) in plan.rows().iter().enumerate() {
        alpha[i] = alpha_red[a];
    }
    for (b, &j) in plan.cols().iter().enumerate() {
        beta[j] = beta_red[b];
    }
    Ok(DualPotentials {
        alpha,
        beta,
        residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::{CostVector, GroundSpace, Metric};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn two_point() -> CostVector {
        CostVector::from_entries(2, vec![0.0, 1.0, 1.0, 0.0], 1.0).unwrap()
    }

    fn half() -> Prob {
        Prob::uniform(2).unwrap()
    }

    /// Symmetric two-point oracle: a / (1/2 - a) = e^{1/lambda}.
    fn two_point_diag(lambda: f64) -> f64 {
        let e = (1.0 / lambda).exp();
        0.5 * e / (1.0 + e)
    }

    fn random_prob(rng: &mut ChaCha8Rng, n: usize) -> Prob {
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
        Prob::from_masses(&w).unwrap()
    }

    fn random_cost(rng: &mut ChaCha8Rng, n: usize) -> CostVector {
        let pts = (0..n).map(|_| vec![rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)]).collect();
        CostVector::from_metric(&GroundSpace::new(pts).unwrap(), 1.0, Metric::Euclidean).unwrap()
    }

    #[test]
    fn closed_form_two_point() {
        let plan = sinkhorn_entropy(&two_point(), &half(), &half(), 1.0, 1e-12, 10_000).unwrap();
        let a = two_point_diag(1.0);
        assert!((a - 0.365529).abs() < 1e-6);
        let full = plan.to_full();
        assert!((full[0] - a).abs() < 1e-10);
        assert!((full[3] - a).abs() < 1e-10);
        assert!((full[1] - (0.5 - a)).abs() < 1e-10);
        let w = divergence(&two_point(), &plan);
        assert!((w - 1.0 / (1.0 + 1f64.exp())).abs() < 1e-10);
        assert!((w - 0.268941).abs() < 1e-6);
    }

    #[test]
    fn large_lambda_gives_product_coupling() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let c = random_cost(&mut rng, 5);
        let (r, s) = (random_prob(&mut rng, 5), random_prob(&mut rng, 5));
        let plan = sinkhorn_entropy(&c, &r, &s, 1e6, 1e-12, 10_000).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                assert!((plan.get(i, j) - r.weights()[i] * s.weights()[j]).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn single_point() {
        let c = CostVector::from_entries(1, vec![0.0], 1.0).unwrap();
        let one = Prob::uniform(1).unwrap();
        let plan = sinkhorn_entropy(&c, &one, &one, 1.0, 1e-9, 10).unwrap();
        assert_eq!(plan.to_full(), vec![1.0]);
        assert_eq!(divergence(&c, &plan), 0.0);
        let d = dual_potentials(&plan, &c).unwrap();
        assert_eq!(d.alpha, vec![0.0]);
        assert_eq!(d.beta, vec![0.0]);
    }

    #[test]
    fn general_entropy_agrees_with_sinkhorn() {
        let opts = SolverOptions::with_tol(1e-13);
        let a = sinkhorn_entropy(&two_point(), &half(), &half(), 1.0, 1e-13, 10_000).unwrap();
        let b = solve_general(Regularizer::Entropy, &two_point(), &half(), &half(), 1.0, &opts).unwrap();
        for (x, y) in a.entries().iter().zip(b.entries()) {
            assert!((x - y).abs() < 1e-8);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let n = rng.random_range(2..=10);
            let c = random_cost(&mut rng, n);
            let (r, s) = (random_prob(&mut rng, n), random_prob(&mut rng, n));
            let lambda = rng.random_range(0.05..2.0);
            let a = sinkhorn_entropy(&c, &r, &s, lambda, 1e-13, 200_000).unwrap();
            let b = solve_general(Regularizer::Entropy, &c, &r, &s, lambda, &opts).unwrap();
            for (x, y) in a.entries().iter().zip(b.entries()) {
                assert!((x - y).abs() < 1e-7, "n={n} lambda={lambda}: {x} vs {y}");
            }
        }
    }

    /// Bisection on the symmetric reduction `-1 + lambda (h'(a) - h'(1/2 - a)) = 0`.
    fn symmetric_oracle(reg: Regularizer, lambda: f64) -> f64 {
        let g = |a: f64| -1.0 + lambda * (reg.scalar_grad(a) - reg.scalar_grad(0.5 - a));
        let (mut lo, mut hi) = (1e-15, 0.5 - 1e-15);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if g(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn general_matches_symmetric_bisection() {
        let opts = SolverOptions::with_tol(1e-14);
        for reg in Regularizer::all_kinds(0.5) {
            for lambda in [0.3, 1.0, 3.0] {
                let plan = solve_general(reg, &two_point(), &half(), &half(), lambda, &opts).unwrap();
                let a = symmetric_oracle(reg, lambda);
                assert!((plan.get(0, 0) - a).abs() < 1e-10, "{reg} lambda={lambda}: {} vs {a}", plan.get(0, 0));
                assert!((plan.get(0, 1) - (0.5 - a)).abs() < 1e-10);
            }
        }
    }

    /// Projected gradient on the one-parameter family `[a, 1/2 - a; 1/2 - a, a]`
    /// is exact at N = 2 with uniform marginals; compare against minimizing f alone.
    #[test]
    fn huge_lambda_minimizes_regularizer() {
        let opts = SolverOptions::with_tol(1e-13);
        for reg in Regularizer::all_kinds(0.5) {
            let plan = solve_general(reg, &two_point(), &half(), &half(), 1e8, &opts).unwrap();
            let f = |a: f64| reg.value(&[a, 0.5 - a, 0.5 - a, a]).unwrap();
            let mut a: f64 = 0.1;
            for _ in 0..20_000 {
                let h = 1e-7;
                let g = (f(a + h) - f(a - h)) / (2.0 * h);
                a = (a - 1e-3 * g).clamp(1e-9, 0.5 - 1e-9);
            }
            assert!((plan.get(0, 0) - a).abs() < 1e-5, "{reg}: {} vs {a}", plan.get(0, 0));
        }
    }

    #[test]
    fn cost_shift_leaves_plan_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let opts = SolverOptions::with_tol(1e-13);
        for reg in Regularizer::all_kinds(0.4) {
            let c = random_cost(&mut rng, 4);
            let shifted = c.shifted(0.75).unwrap();
            let (r, s) = (random_prob(&mut rng, 4), random_prob(&mut rng, 4));
            let a = solve_general(reg, &c, &r, &s, 0.5, &opts).unwrap();
            let b = solve_general(reg, &shifted, &r, &s, 0.5, &opts).unwrap();
            for (x, y) in a.entries().iter().zip(b.entries()) {
                assert!((x - y).abs() < 1e-9, "{reg}");
            }
        }
    }

    #[test]
    fn zero_marginals_are_reduced() {
        let space = GroundSpace::grid(2, 1.0).unwrap();
        let c = CostVector::from_metric(&space, 1.0, Metric::Euclidean).unwrap();
        let r = Prob::new(vec![0.5, 0.0, 0.5, 0.0]).unwrap();
        let s = Prob::new(vec![0.25, 0.25, 0.25, 0.25]).unwrap();
        let plan = solve(Regularizer::Entropy, &c, &r, &s, 0.5, &SolverOptions::default()).unwrap();
        assert_eq!(plan.rows(), &[0, 2]);
        assert_eq!(plan.cols().len(), 4);
        assert!(plan.min_entry() > 0.0);
        let full = plan.to_full();
        assert!(full[4..8].iter().all(|&v| v == 0.0));
        assert!(plan.diagnostics().residual <= 1e-9);
        assert!(matches!(
            sinkhorn_entropy(&c, &r, &s, 0.5, 1e-9, 100),
            Err(RotError::ReductionRequired)
        ));
        assert!(matches!(
            solve_general(Regularizer::Burg, &c, &s, &r, 0.5, &SolverOptions::default()),
            Err(RotError::ReductionRequired)
        ));
        let burg = solve(Regularizer::Burg, &c, &s, &r, 0.5, &SolverOptions::default()).unwrap();
        assert_eq!(burg.cols(), &[0, 2]);
        let dirac = Prob::dirac(4, 1).unwrap();
        let trivial = solve(Regularizer::Entropy, &c, &dirac, &s, 0.5, &SolverOptions::default()).unwrap();
        assert_eq!(trivial.diagnostics().method, SolveMethod::Trivial);
        assert!((trivial.get(1, 3) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn iteration_cap_reports_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let c = random_cost(&mut rng, 6);
        let (r, s) = (random_prob(&mut rng, 6), random_prob(&mut rng, 6));
        match sinkhorn_entropy(&c, &r, &s, 0.01, 1e-15, 3) {
            Err(RotError::Convergence { iterations, residual }) => {
                assert_eq!(iterations, 3);
                assert!(residual > 0.0);
            }
            other => panic!("expected convergence error, got {other:?}"),
        }
    }

    #[test]
    fn small_lambda_falls_back_to_newton() {
        let space = GroundSpace::grid(3, 1.0).unwrap();
        let c = CostVector::from_metric(&space, 1.0, Metric::Euclidean).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (r, s) = (random_prob(&mut rng, 9), random_prob(&mut rng, 9));
        let opts = SolverOptions {
            sinkhorn_budget: 50,
            ..SolverOptions::with_tol(1e-12)
        };
        let plan = solve(Regularizer::Entropy, &c, &r, &s, 0.01, &opts).unwrap();
        assert!(plan.diagnostics().residual <= 1e-12);
        assert!(plan.min_entry() > 0.0);
    }

    #[test]
    fn cost_nondecreasing_in_lambda() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let opts = SolverOptions::with_tol(1e-12);
        for _ in 0..10 {
            let c = random_cost(&mut rng, 5);
            let (r, s) = (random_prob(&mut rng, 5), random_prob(&mut rng, 5));
            let mut last = 0.0;
            for lambda in [0.02, 0.05, 0.1, 0.2, 0.5, 1.0, 2.0, 5.0] {
                let plan = solve(Regularizer::Entropy, &c, &r, &s, lambda, &opts).unwrap();
                let cost = plan.transport_cost(&c);
                assert!(cost >= last - 1e-10, "lambda={lambda}: {cost} < {last}");
                last = cost;
            }
        }
    }

    #[test]
    fn potentials_reconstruct_log_plan() {
        let lambda = 1.0;
        let plan = sinkhorn_entropy(&two_point(), &half(), &half(), lambda, 1e-13, 10_000).unwrap();
        let d = dual_potentials(&plan, &two_point()).unwrap();
        assert!(d.residual < 1e-10);
        assert_eq!(d.beta[1], 0.0);
        let a = two_point_diag(lambda);
        assert!((d.alpha[1] - lambda * a.ln()).abs() < 1e-9);
        assert!((d.alpha[0] - (1.0 + lambda * (0.5 - a).ln())).abs() < 1e-9);
    }

    #[test]
    fn potentials_of_product_plan() {
        let c = CostVector::from_entries(3, vec![0.0; 9], 1.0).unwrap();
        let r = Prob::new(vec![0.2, 0.3, 0.5]).unwrap();
        let s = Prob::new(vec![0.6, 0.3, 0.1]).unwrap();
        let lambda = 0.7;
        let plan = sinkhorn_entropy(&c, &r, &s, lambda, 1e-14, 1000).unwrap();
        let d = dual_potentials(&plan, &c).unwrap();
        let shift = d.alpha[0] - lambda * r.weights()[0].ln();
        for i in 0..3 {
            assert!((d.alpha[i] - lambda * r.weights()[i].ln() - shift).abs() < 1e-9);
            let expect = lambda * (s.weights()[i].ln() - s.weights()[2].ln());
            assert!((d.beta[i] - expect).abs() < 1e-9);
        }
    }

    #[test]
    fn potentials_need_entropy() {
        let plan = solve_general(Regularizer::Burg, &two_point(), &half(), &half(), 1.0, &SolverOptions::default()).unwrap();
        assert!(matches!(dual_potentials(&plan, &two_point()), Err(RotError::Unsupported(_))));
    }
}
