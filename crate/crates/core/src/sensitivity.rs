//! Derivatives of the regularized plan with respect to its marginals and the
//! limiting covariances built from them.
//!
//! All matrices live on the support block of the plan: plan cells are indexed
//! row-major over `rows x cols` and dual coordinates are
//! `(rows, cols without its last element)`.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, RotError};
use crate::regularizer::Regularizer;
use crate::solver::{DualPotentials, TransportPlan};
use crate::space::{GroundCost, Prob};

/// `diag(r) - r r^T`.
pub fn multinomial_cov(r: &Prob) -> DMatrix<f64> {
    multinomial_cov_of(r.weights())
}

pub(crate) fn multinomial_cov_of(w: &[f64]) -> DMatrix<f64> {
    let n = w.len();
    DMatrix::from_fn(n, n, |i, j| if i == j { w[i] * (1.0 - w[i]) } else { -w[i] * w[j] })
}

fn invert_spd(mut a: DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    if let Some(ch) = Cholesky::new(a.clone()) {
        return Ok(ch.inverse());
    }
    let ridge = 1e-14 * a.diagonal().amax();
    for i in 0..a.nrows() {
        a[(i, i)] += ridge;
    }
    Cholesky::new(a)
        .map(|c| c.inverse())
        .ok_or_else(|| RotError::Numerical(format!("{what} is not positive definite")))
}

/// `A_red diag(w) A_red^T` for an `m x n` block.
pub(crate) fn weighted_gram(w: &[f64], m: usize, n: usize) -> DMatrix<f64> {
    let k = m + n - 1;
    let mut g = DMatrix::zeros(k, k);
    for i in 0..m {
        for j in 0..n {
            let x = w[i * n + j];
            g[(i, i)] += x;
            if j + 1 < n {
                g[(m + j, m + j)] += x;
                g[(i, m + j)] += x;
                g[(m + j, i)] += x;
            }
        }
    }
    g
}

/// `w_ij (X[i, :] + X[m + j, :])` for every cell, the common shape of
/// `H^{-1} A_red^T X`.
fn spread(w: &[f64], m: usize, n: usize, x: &DMatrix<f64>) -> DMatrix<f64> {
    let cols = x.ncols();
    let mut out = DMatrix::zeros(m * n, cols);
    for i in 0..m {
        for j in 0..n {
            let cell = i * n + j;
            for c in 0..cols {
                let mut v = x[(i, c)];
                if j + 1 < n {
                    v += x[(m + j, c)];
                }
                out[(cell, c)] = w[cell] * v;
            }
        }
    }
    out
}

fn inverse_hessian(reg: Regularizer, plan: &TransportPlan) -> Result<Vec<f64>> {
    let h = reg.hess_diag(plan.entries())?;
    let w: Vec<f64> = h.iter().map(|x| 1.0 / x).collect();
    if w.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
        return Err(RotError::Numerical("regularizer Hessian is singular at the plan".into()));
    }
    Ok(w)
}

/// Jacobian of the plan map `(r, s_*) -> pi`.
#[derive(Debug, Clone)]
pub struct SensitivityResult {
    /// Ground space size.
    pub n: usize,
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
    /// `(m n) x (m + n - 1)`.
    pub grad_phi: DMatrix<f64>,
}

impl SensitivityResult {
    /// Derivative with respect to `r` (first `m` columns).
    pub fn grad_phi_r(&self) -> DMatrix<f64> {
        self.grad_phi.columns(0, self.rows.len()).into_owned()
    }
}

/// `H^{-1} A_red^T [A_red H^{-1} A_red^T]^{-1}` with `H` the regularizer
/// Hessian at the plan, by dense inversion of the dual Gram matrix.
pub fn plan_gradient(reg: Regularizer, plan: &TransportPlan) -> Result<SensitivityResult> {
    let (m, n) = (plan.rows().len(), plan.cols().len());
    let w = inverse_hessian(reg, plan)?;
    let gram_inv = invert_spd(weighted_gram(&w, m, n), "dual Gram matrix")?;
    Ok(SensitivityResult {
        n: plan.n(),
        rows: plan.rows().to_vec(),
        cols: plan.cols().to_vec(),
        grad_phi: spread(&w, m, n, &gram_inv),
    })
}

/// First `m` columns of `[A_red D A_red^T]^{-1}`, `D = diag(pi)`, by block
/// inversion of `[R, Pi; Pi^T, S_*]` with `R = diag(r)`, `S_* = diag(s_*)`
/// and `Pi` the plan without its last column.
pub fn entropy_block_schur(plan: &TransportPlan) -> Result<DMatrix<f64>> {
    let (m, n) = (plan.rows().len(), plan.cols().len());
    let r: Vec<f64> = plan.rows().iter().map(|&i| plan.r().weights()[i]).collect();
    let s: Vec<f64> = plan.cols().iter().map(|&j| plan.s().weights()[j]).collect();
    schur_first_columns(plan.entries(), &r, &s[..n - 1], m, n)
}

fn schur_first_columns(
    pi: &[f64],
    r: &[f64],
    s_star: &[f64],
    m: usize,
    n: usize,
) -> Result<DMatrix<f64>> {
    if s_star.iter().chain(r).any(|&x| x <= 0.0) {
        return Err(RotError::ReductionRequired);
    }
    let nc = n - 1;
    let mut comp = DMatrix::<f64>::from_diagonal(&DVector::from_column_slice(r));
    for a in 0..m {
        for b in a..m {
            let mut acc = 0.0;
            for j in 0..nc {
                acc += pi[a * n + j] * pi[b * n + j] / s_star[j];
            }
            comp[(a, b)] -= acc;
            if a != b {
                comp[(b, a)] -= acc;
            }
        }
    }
    let top = invert_spd(comp, "Schur complement")?;
    let mut out = DMatrix::zeros(m + nc, m);
    out.rows_mut(0, m).copy_from(&top);
    for j in 0..nc {
        for c in 0..m {
            let acc: f64 = (0..m).map(|a| pi[a * n + j] * top[(a, c)]).sum();
            out[(m + j, c)] = -acc / s_star[j];
        }
    }
    Ok(out)
}

/// `grad_r phi`, using the block-Schur path for the entropy.
pub fn plan_gradient_r(reg: Regularizer, plan: &TransportPlan) -> Result<DMatrix<f64>> {
    if reg.is_entropy() {
        let (m, n) = (plan.rows().len(), plan.cols().len());
        let block = entropy_block_schur(plan)?;
        Ok(spread(plan.entries(), m, n, &block))
    } else {
        Ok(plan_gradient(reg, plan)?.grad_phi_r())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum SampleMode {
    /// Only `r` is estimated.
    OneSample,
    /// Both marginals are estimated from samples of sizes `n` (for `r`) and
    /// `m` (for `s`); `delta = m / (n + m)`.
    TwoSample { delta: f64 },
}

/// Largest ground space for which the dense plan covariance is formed.
pub const MATERIALIZE_MAX_N: usize = 64;

/// Factorization of the dual Gram matrix `M = A_red diag(w) A_red^T` of an
/// `m x n` block through the Schur complement of its smaller diagonal block.
#[derive(Debug, Clone)]
pub struct GramFactor {
    m: usize,
    n: usize,
    w: Vec<f64>,
    dr: Vec<f64>,
    dc: Vec<f64>,
    /// `true`: complement on the row block (size m), else on the column block.
    row_side: bool,
    chol: Cholesky<f64, nalgebra::Dyn>,
}

impl GramFactor {
    pub fn new(w: Vec<f64>, m: usize, n: usize) -> Result<Self> {
        let nc = n - 1;
        let dr: Vec<f64> = (0..m).map(|i| w[i * n..(i + 1) * n].iter().sum()).collect();
        let dc: Vec<f64> = (0..nc).map(|j| (0..m).map(|i| w[i * n + j]).sum()).collect();
        let row_side = m <= nc || nc == 0;
        let comp = if row_side {
            let mut comp = DMatrix::from_diagonal(&DVector::from_column_slice(&dr));
            for a in 0..m {
                for b in a..m {
                    let acc: f64 = (0..nc).map(|j| w[a * n + j] * w[b * n + j] / dc[j]).sum();
                    comp[(a, b)] -= acc;
                    if a != b {
                        comp[(b, a)] -= acc;
                    }
                }
            }
            comp
        } else {
            let mut comp = DMatrix::from_diagonal(&DVector::from_column_slice(&dc));
            for i in 0..m {
                let row = &w[i * n..i * n + nc];
                let inv = 1.0 / dr[i];
                for a in 0..nc {
                    let x = row[a] * inv;
                    for b in a..nc {
                        comp[(a, b)] -= x * row[b];
                    }
                }
            }
            for a in 0..nc {
                for b in 0..a {
                    comp[(a, b)] = comp[(b, a)];
                }
            }
            comp
        };
        let chol = match Cholesky::new(comp.clone()) {
            Some(c) => c,
            None => {
                let mut comp = comp;
                let ridge = 1e-14 * comp.diagonal().amax();
                for i in 0..comp.nrows() {
                    comp[(i, i)] += ridge;
                }
                Cholesky::new(comp)
                    .ok_or_else(|| RotError::Numerical("dual Gram matrix is not positive definite".into()))?
            }
        };
        Ok(Self {
            m,
            n,
            w,
            dr,
            dc,
            row_side,
            chol,
        })
    }

    pub fn dim(&self) -> usize {
        self.m + self.n - 1
    }

    /// `M^{-1} rhs`.
    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let (m, n) = (self.m, self.n);
        let nc = n - 1;
        let (a, b) = rhs.split_at(m);
        let w = &self.w;
        let mut x = vec![0.0; m];
        let mut y = vec![0.0; nc];
        if self.row_side {
            let bd: Vec<f64> = b.iter().zip(&self.dc).map(|(b, d)| b / d).collect();
            let mut t = DVector::from_column_slice(a);
            for i in 0..m {
                t[i] -= (0..nc).map(|j| w[i * n + j] * bd[j]).sum::<f64>();
            }
            let xs = self.chol.solve(&t);
            x.copy_from_slice(xs.as_slice());
            for j in 0..nc {
                let wx: f64 = (0..m).map(|i| w[i * n + j] * x[i]).sum();
                y[j] = (b[j] - wx) / self.dc[j];
            }
        } else {
            let mut t = DVector::from_column_slice(b);
            for i in 0..m {
                let ai = a[i] / self.dr[i];
                for j in 0..nc {
                    t[j] -= w[i * n + j] * ai;
                }
            }
            let ys = self.chol.solve(&t);
            y.copy_from_slice(ys.as_slice());
            for i in 0..m {
                let wy: f64 = (0..nc).map(|j| w[i * n + j] * y[j]).sum();
                x[i] = (a[i] - wy) / self.dr[i];
            }
        }
        x.extend(y);
        x
    }

    /// `diag(w) A_red^T M^{-1} z`: the plan Jacobian applied to a dual vector.
    pub fn jacobian_apply(&self, z: &[f64]) -> Vec<f64> {
        let (m, n) = (self.m, self.n);
        let x = self.solve(z);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut v = x[i];
                if j + 1 < n {
                    v += x[m + j];
                }
                out[i * n + j] = self.w[i * n + j] * v;
            }
        }
        out
    }

    /// `M^{-1} A_red diag(w) v`: the transposed Jacobian.
    pub fn jacobian_t_apply(&self, v: &[f64]) -> Vec<f64> {
        let (m, n) = (self.m, self.n);
        let mut t = vec![0.0; self.dim()];
        for i in 0..m {
            for j in 0..n {
                let x = self.w[i * n + j] * v[i * n + j];
                t[i] += x;
                if j + 1 < n {
                    t[m + j] += x;
                }
            }
        }
        self.solve(&t)
    }
}

/// Limiting covariance of the plan, `J C J^T`, kept in action form: `J` is
/// applied through a [`GramFactor`] and `C` is block multinomial.
#[derive(Debug, Clone)]
pub struct PlanCovariance {
    pub n: usize,
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
    pub mode: SampleMode,
    factor: GramFactor,
    r: Vec<f64>,
    s_star: Vec<f64>,
}

impl PlanCovariance {
    pub fn cells(&self) -> usize {
        self.rows.len() * self.cols.len()
    }

    fn weights(&self) -> (f64, f64) {
        match self.mode {
            SampleMode::OneSample => (1.0, 0.0),
            SampleMode::TwoSample { delta } => (delta, 1.0 - delta),
        }
    }

    fn middle_apply(&self, t: &[f64]) -> Vec<f64> {
        let m = self.r.len();
        let (wr, ws) = self.weights();
        let mut out = vec![0.0; t.len()];
        let block = |p: &[f64], t: &[f64], scale: f64, out: &mut [f64]| {
            let dot: f64 = p.iter().zip(t).map(|(a, b)| a * b).sum();
            for ((o, pi), ti) in out.iter_mut().zip(p).zip(t) {
                *o = scale * pi * (ti - dot);
            }
        };
        block(&self.r, &t[..m], wr, &mut out[..m]);
        if ws > 0.0 {
            block(&self.s_star, &t[m..], ws, &mut out[m..]);
        }
        out
    }

    /// `v^T Sigma v` for a vector over the support cells.
    pub fn quadratic_form(&self, v: &[f64]) -> f64 {
        let t = self.factor.jacobian_t_apply(v);
        let ct = self.middle_apply(&t);
        t.iter().zip(&ct).map(|(a, b)| a * b).sum()
    }

    /// `Sigma v` for a vector over the support cells.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let t = self.factor.jacobian_t_apply(v);
        self.factor.jacobian_apply(&self.middle_apply(&t))
    }

    /// One draw of the limit `J (sqrt(w_r) G_r, sqrt(w_s) G_s)` with
    /// `G ~ N(0, Sigma(.))`, written into `out` (length `cells()`).
    pub fn sample_into<R: rand::Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        let m = self.r.len();
        let (wr, ws) = self.weights();
        let mut z = vec![0.0; self.factor.dim()];
        let sr: Vec<f64> = self.r.iter().map(|x| x.sqrt()).collect();
        crate::inference::multinomial_gaussian_into(&self.r, &sr, rng, &mut z[..m]);
        if wr != 1.0 {
            let c = wr.sqrt();
            z[..m].iter_mut().for_each(|x| *x *= c);
        }
        if ws > 0.0 {
            // s_* is a sub-vector of a probability vector: sample the full
            // multinomial fluctuation and drop the last coordinate.
            let mut full = self.s_star.clone();
            full.push((1.0 - self.s_star.iter().sum::<f64>()).max(0.0));
            let sf: Vec<f64> = full.iter().map(|x| x.sqrt()).collect();
            let mut g = vec![0.0; full.len()];
            crate::inference::multinomial_gaussian_into(&full, &sf, rng, &mut g);
            let c = ws.sqrt();
            for (zi, gi) in z[m..].iter_mut().zip(&g) {
                *zi = c * gi;
            }
        }
        out.copy_from_slice(&self.factor.jacobian_apply(&z));
    }

    /// Dense Jacobian, `cells() x (m + n - 1)`.
    pub fn jacobian(&self) -> DMatrix<f64> {
        let k = self.factor.dim();
        let mut j = DMatrix::zeros(self.cells(), k);
        let mut e = vec![0.0; k];
        for c in 0..k {
            e[c] = 1.0;
            j.set_column(c, &DVector::from_vec(self.factor.jacobian_apply(&e)));
            e[c] = 0.0;
        }
        j
    }

    /// Dense covariance over the support cells; refused for more than
    /// `MATERIALIZE_MAX_N^2` cells.
    pub fn materialize(&self) -> Result<DMatrix<f64>> {
        if self.cells() > MATERIALIZE_MAX_N * MATERIALIZE_MAX_N {
            return Err(RotError::Unsupported(format!(
                "dense plan covariance over {} cells; use the action form",
                self.cells()
            )));
        }
        let j = self.jacobian();
        let k = self.factor.dim();
        let mut cj = DMatrix::zeros(k, self.cells());
        for c in 0..self.cells() {
            let row: Vec<f64> = j.row(c).iter().copied().collect();
            cj.set_column(c, &DVector::from_vec(self.middle_apply(&row)));
        }
        let mut out = &j * cj;
        let q = out.nrows();
        for a in 0..q {
            for b in a + 1..q {
                let avg = 0.5 * (out[(a, b)] + out[(b, a)]);
                out[(a, b)] = avg;
                out[(b, a)] = avg;
            }
        }
        Ok(out)
    }

    /// Dense `N^2 x N^2` covariance with zeros outside the supports.
    pub fn to_full(&self) -> Result<DMatrix<f64>> {
        if self.n > MATERIALIZE_MAX_N {
            return Err(RotError::Unsupported(format!(
                "dense plan covariance for N = {}; use the action form",
                self.n
            )));
        }
        let small = self.materialize()?;
        let nc = self.cols.len();
        let index: Vec<usize> = (0..self.cells())
            .map(|k| self.rows[k / nc] * self.n + self.cols[k % nc])
            .collect();
        let mut full = DMatrix::zeros(self.n * self.n, self.n * self.n);
        for (a, &ia) in index.iter().enumerate() {
            for (b, &ib) in index.iter().enumerate() {
                full[(ia, ib)] = small[(a, b)];
            }
        }
        Ok(full)
    }
}

/// Limit covariance of `sqrt(n) (pi(r_n, s) - pi(r, s))` (one sample) or of
/// the scaled two-sample difference.
pub fn plan_covariance(reg: Regularizer, plan: &TransportPlan, mode: SampleMode) -> Result<PlanCovariance> {
    if let SampleMode::TwoSample { delta } = mode {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(RotError::invalid(format!("delta must lie in (0, 1), got {delta}")));
        }
    }
    let (m, n) = (plan.rows().len(), plan.cols().len());
    let w = inverse_hessian(reg, plan)?;
    let factor = GramFactor::new(w, m, n)?;
    Ok(PlanCovariance {
        n: plan.n(),
        rows: plan.rows().to_vec(),
        cols: plan.cols().to_vec(),
        mode,
        factor,
        r: plan.rows().iter().map(|&i| plan.r().weights()[i]).collect(),
        s_star: plan.cols()[..n - 1].iter().map(|&j| plan.s().weights()[j]).collect(),
    })
}

/// Gradient of `pi -> <c, pi>^(1/p)` over the support cells.
pub fn divergence_gradient(plan: &TransportPlan, c: &dyn GroundCost) -> Result<Vec<f64>> {
    let p = c.power();
    let cost = plan.cost_block(c);
    if p == 1.0 {
        return Ok(cost);
    }
    let inner = plan.transport_cost(c);
    if inner <= 0.0 {
        return Err(RotError::Numerical(
            "the p-th root is not differentiable at zero transport cost".into(),
        ));
    }
    let scale = inner.powf(1.0 / p - 1.0) / p;
    Ok(cost.into_iter().map(|x| x * scale).collect())
}

/// `sigma^2 = gamma^T Sigma gamma`.
pub fn divergence_variance(plan: &TransportPlan, c: &dyn GroundCost, cov: &PlanCovariance) -> Result<f64> {
    let gamma = divergence_gradient(plan, c)?;
    Ok(cov.quadratic_form(&gamma).max(0.0))
}

/// Plan covariance together with the divergence variance.
#[derive(Debug, Clone)]
pub struct CovarianceResult {
    pub sigma_plan: PlanCovariance,
    pub sigma_divergence: f64,
    pub mode: SampleMode,
}

pub fn covariance_result(
    reg: Regularizer,
    plan: &TransportPlan,
    c: &dyn GroundCost,
    mode: SampleMode,
) -> Result<CovarianceResult> {
    let sigma_plan = plan_covariance(reg, plan, mode)?;
    let sigma_divergence = divergence_variance(plan, c, &sigma_plan)?;
    Ok(CovarianceResult {
        sigma_plan,
        sigma_divergence,
        mode,
    })
}

/// Variance `alpha^T Sigma(r) alpha` of the limit of the regularized objective.
pub fn objective_variance(potentials: &DualPotentials, r: &Prob) -> f64 {
    let w = r.weights();
    let mean: f64 = w.iter().zip(&potentials.alpha).map(|(a, b)| a * b).sum();
    w.iter()
        .zip(&potentials.alpha)
        .map(|(wi, a)| wi * (a - mean) * (a - mean))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::{solve, SolverOptions};
    use crate::space::{ConstraintOperator, CostVector, GroundSpace, Metric};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_instance(rng: &mut ChaCha8Rng, n: usize) -> (CostVector, Prob, Prob) {
        let pts = (0..n).map(|_| vec![rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)]).collect();
        let c = CostVector::from_metric(&GroundSpace::new(pts).unwrap(), 1.0, Metric::Euclidean).unwrap();
        let r: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
        let s: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
        (c, Prob::from_masses(&r).unwrap(), Prob::from_masses(&s).unwrap())
    }

    fn tight() -> SolverOptions {
        SolverOptions::with_tol(1e-13)
    }

    #[test]
    fn multinomial_cov_examples() {
        let cov = multinomial_cov(&Prob::uniform(2).unwrap());
        assert_eq!(cov, DMatrix::from_row_slice(2, 2, &[0.25, -0.25, -0.25, 0.25]));
        assert!(multinomial_cov(&Prob::dirac(3, 1).unwrap()).iter().all(|&x| x == 0.0));
        let r = Prob::from_masses(&[0.3, 1.2, 0.5, 2.0]).unwrap();
        let cov = multinomial_cov(&r);
        for i in 0..4 {
            assert!(cov.row(i).sum().abs() < 1e-15);
        }
    }

    #[test]
    fn constraint_times_gradient_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for reg in Regularizer::all_kinds(0.5) {
            let (c, r, s) = random_instance(&mut rng, 5);
            let plan = solve(reg, &c, &r, &s, 0.4, &tight()).unwrap();
            let g = plan_gradient(reg, &plan).unwrap();
            let a = ConstraintOperator::square(5).materialize_reduced();
            let eye = &a * &g.grad_phi;
            let err = (eye - DMatrix::<f64>::identity(9, 9)).amax();
            assert!(err < 1e-9, "{reg}: {err}");
        }
    }

    #[test]
    fn schur_matches_dense_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n in 2..=8 {
            let (c, r, s) = random_instance(&mut rng, n);
            let plan = solve(Regularizer::Entropy, &c, &r, &s, 0.3, &tight()).unwrap();
            let gram = weighted_gram(plan.entries(), n, n);
            let dense = gram.try_inverse().unwrap().columns(0, n).into_owned();
            let fast = entropy_block_schur(&plan).unwrap();
            assert!((dense - fast).amax() < 1e-10, "n={n}");
        }
    }

    #[test]
    fn gram_has_block_structure() {
        let pi = [0.1, 0.2, 0.3, 0.15, 0.05, 0.2];
        let g = weighted_gram(&pi, 2, 3);
        let a = ConstraintOperator::new(2, 3).materialize_reduced();
        let direct = &a * DMatrix::from_diagonal(&DVector::from_column_slice(&pi)) * a.transpose();
        assert!((g.clone() - direct).amax() < 1e-15);
        assert!((g[(0, 0)] - 0.6).abs() < 1e-15);
        assert!((g[(2, 2)] - 0.25).abs() < 1e-15);
        assert!((g[(1, 3)] - 0.05).abs() < 1e-15);
    }

    /// N = 2 symmetric entropy plan: with a = pi_11, b = 1/2 - a, the Gram
    /// matrix is [[1/2, 0, a], [0, 1/2, b], [a, b, 1/2]]; invert by cofactors.
    #[test]
    fn two_point_schur_closed_form() {
        let c = CostVector::from_entries(2, vec![0.0, 1.0, 1.0, 0.0], 1.0).unwrap();
        let u = Prob::uniform(2).unwrap();
        let plan = solve(Regularizer::Entropy, &c, &u, &u, 1.0, &tight()).unwrap();
        let a = plan.get(0, 0);
        let b = 0.5 - a;
        let det = 0.5 * (0.25 - b * b) - a * a * 0.5;
        let inv00 = (0.25 - b * b) / det;
        let inv01 = (a * b) / det;
        let inv20 = -(0.5 * a) / det;
        let inv21 = -(0.5 * b) / det;
        let fast = entropy_block_schur(&plan).unwrap();
        let expect = DMatrix::from_row_slice(3, 2, &[inv00, inv01, inv01, (0.25 - a * a) / det, inv20, inv21]);
        assert!((fast - expect).amax() < 1e-9);
    }

    #[test]
    fn entropy_fast_path_matches_generic() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..5 {
            let (c, r, s) = random_instance(&mut rng, 6);
            let plan = solve(Regularizer::Entropy, &c, &r, &s, 0.5, &tight()).unwrap();
            let generic = plan_gradient(Regularizer::Entropy, &plan).unwrap().grad_phi_r();
            let fast = plan_gradient_r(Regularizer::Entropy, &plan).unwrap();
            assert!((generic - fast).amax() < 1e-10);
        }
    }

    fn perturbed(p: &Prob, dir: &[f64], h: f64) -> Prob {
        Prob::new(p.weights().iter().zip(dir).map(|(a, b)| a + h * b).collect()).unwrap()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let opts = SolverOptions::with_tol(1e-15);
        for reg in Regularizer::all_kinds(0.5) {
            let (c, r, s) = random_instance(&mut rng, 3);
            let lambda = 0.5;
            let plan = solve(reg, &c, &r, &s, lambda, &opts).unwrap();
            let g = plan_gradient(reg, &plan).unwrap().grad_phi;
            // Tangent directions: move mass within r, then within s_* against s_N.
            let dr = [0.6, -0.2, -0.4];
            let ds = [0.3, -0.5, 0.2];
            let h = 1e-5;
            for (which, dir) in [(0, dr), (1, ds)] {
                let (rp, rm, sp, sm) = if which == 0 {
                    (perturbed(&r, &dir, h), perturbed(&r, &dir, -h), s.clone(), s.clone())
                } else {
                    (r.clone(), r.clone(), perturbed(&s, &dir, h), perturbed(&s, &dir, -h))
                };
                let up = solve(reg, &c, &rp, &sp, lambda, &opts).unwrap();
                let down = solve(reg, &c, &rm, &sm, lambda, &opts).unwrap();
                let mut tangent = DVector::zeros(5);
                if which == 0 {
                    for i in 0..3 {
                        tangent[i] = dir[i];
                    }
                } else {
                    tangent[3] = dir[0];
                    tangent[4] = dir[1];
                }
                let predicted = &g * tangent;
                let mut num = 0.0f64;
                let mut den = 0.0f64;
                for k in 0..9 {
                    let fd = (up.entries()[k] - down.entries()[k]) / (2.0 * h);
                    num = num.max((fd - predicted[k]).abs());
                    den = den.max(predicted[k].abs());
                }
                assert!(num / den < 1e-4, "{reg} dir {which}: rel {}", num / den);
            }
        }
    }

    #[test]
    fn covariance_is_symmetric_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..4 {
            let (c, r, s) = random_instance(&mut rng, 5);
            let plan = solve(Regularizer::Entropy, &c, &r, &s, 0.3, &tight()).unwrap();
            for mode in [SampleMode::OneSample, SampleMode::TwoSample { delta: 0.4 }] {
                let cov = plan_covariance(Regularizer::Entropy, &plan, mode).unwrap();
                let dense = cov.materialize().unwrap();
                assert!((dense.clone() - dense.transpose()).amax() < 1e-10);
                let eig = dense.symmetric_eigenvalues();
                assert!(eig.min() > -1e-9);
                let gamma = divergence_gradient(&plan, &c).unwrap();
                let gv = DVector::from_vec(gamma.clone());
                let direct = gv.dot(&(&dense * &gv));
                assert!((direct - cov.quadratic_form(&gamma)).abs() < 1e-12);
                let action = DVector::from_vec(cov.apply(&gamma));
                assert!((action - &dense * &gv).amax() < 1e-12);
            }
        }
    }

    #[test]
    fn two_sample_tends_to_one_sample() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (c, r, s) = random_instance(&mut rng, 4);
        let plan = solve(Regularizer::Entropy, &c, &r, &s, 0.5, &tight()).unwrap();
        let one = plan_covariance(Regularizer::Entropy, &plan, SampleMode::OneSample).unwrap().materialize().unwrap();
        let gap = |eps: f64| {
            let two = plan_covariance(Regularizer::Entropy, &plan, SampleMode::TwoSample { delta: 1.0 - eps })
                .unwrap()
                .materialize().unwrap();
            (two - &one).amax()
        };
        let (g2, g3) = (gap(1e-2), gap(1e-3));
        assert!(g3 < g2);
        assert!((g2 / g3 - 10.0).abs() < 0.5, "ratio {}", g2 / g3);
    }

    #[test]
    fn dirac_marginal_has_zero_covariance() {
        let space = GroundSpace::grid(2, 1.0).unwrap();
        let c = CostVector::from_metric(&space, 1.0, Metric::Euclidean).unwrap();
        let r = Prob::dirac(4, 2).unwrap();
        let s = Prob::uniform(4).unwrap();
        let plan = solve(Regularizer::Entropy, &c, &r, &s, 0.5, &tight()).unwrap();
        let cov = plan_covariance(Regularizer::Entropy, &plan, SampleMode::OneSample).unwrap();
        assert!(cov.materialize().unwrap().amax() < 1e-15);
        assert_eq!(divergence_variance(&plan, &c, &cov).unwrap(), 0.0);
    }

    #[test]
    fn objective_variance_edge_cases() {
        let pot = DualPotentials {
            alpha: vec![1.5; 3],
            beta: vec![0.0; 3],
            residual: 0.0,
        };
        let r = Prob::from_masses(&[1.0, 2.0, 3.0]).unwrap();
        assert!(objective_variance(&pot, &r).abs() < 1e-15);
        let pot = DualPotentials {
            alpha: vec![1.0, -2.0, 0.5],
            beta: vec![0.0; 3],
            residual: 0.0,
        };
        assert_eq!(objective_variance(&pot, &Prob::dirac(3, 1).unwrap()), 0.0);
        let direct = {
            let a = DVector::from_vec(pot.alpha.clone());
            a.dot(&(multinomial_cov(&r) * &a))
        };
        assert!((objective_variance(&pot, &r) - direct).abs() < 1e-14);
    }

    #[test]
    fn p_one_gamma_is_cost() {
        let c = CostVector::from_entries(2, vec![0.0, 1.0, 1.0, 0.0], 1.0).unwrap();
        let u = Prob::uniform(2).unwrap();
        let plan = solve(Regularizer::Entropy, &c, &u, &u, 1.0, &tight()).unwrap();
        assert_eq!(divergence_gradient(&plan, &c).unwrap(), c.entries().to_vec());
        let zero = CostVector::from_entries(2, vec![0.0; 4], 2.0).unwrap();
        let plan = solve(Regularizer::Entropy, &zero, &u, &u, 1.0, &tight()).unwrap();
        assert!(divergence_gradient(&plan, &zero).is_err());
    }
}
