use nalgebra::{Cholesky, DMatrix, DVector};

use super::Reduced;
use crate::error::{Result, RotError};
use crate::regularizer::Regularizer;

pub(crate) struct Output {
    pub plan: Vec<f64>,
    pub iterations: usize,
}

/// Supremum of the domain of the conjugate's gradient.
fn conjugate_sup(reg: Regularizer) -> f64 {
    match reg {
        Regularizer::Entropy | Regularizer::FermiDirac => f64::INFINITY,
        Regularizer::Burg => 1.0,
        Regularizer::BetaPotential(b) => 1.0 / (1.0 - b),
        Regularizer::LpQuasi(_) => 0.0,
    }
}

struct Dual<'a> {
    reg: Regularizer,
    red: &'a Reduced,
}

struct Eval {
    plan: Vec<f64>,
    objective: f64,
    grad: Vec<f64>,
    residual: f64,
}

impl Dual<'_> {
    fn dim(&self) -> usize {
        self.red.m() + self.red.n() - 1
    }

    fn y(&self, mu: &[f64], k: usize) -> f64 {
        let (m, n) = (self.red.m(), self.red.n());
        let (i, j) = (k / n, k % n);
        let beta = if j + 1 < n { mu[m + j] } else { 0.0 };
        (mu[i] + beta - self.red.cost[k]) / self.red.lambda
    }

    /// `None` when some `y` leaves the conjugate domain or the plan overflows.
    fn eval(&self, mu: &[f64]) -> Option<Eval> {
        let red = self.red;
        let (m, n) = (red.m(), red.n());
        let mut plan = Vec::with_capacity(m * n);
        let mut conj = 0.0;
        for k in 0..m * n {
            let y = self.y(mu, k);
            if !self.reg.in_conjugate_domain(y) {
                return None;
            }
            let p = self.reg.scalar_conjugate_grad(y);
            if !(p.is_finite() && p > 0.0) {
                return None;
            }
            conj += self.reg.scalar_conjugate_value(y);
            plan.push(p);
        }
        let mut grad = vec![0.0; self.dim()];
        for i in 0..m {
            for j in 0..n {
                let p = plan[i * n + j];
                grad[i] += p;
                if j + 1 < n {
                    grad[m + j] += p;
                }
            }
        }
        let mut dot = 0.0;
        for i in 0..m {
            grad[i] -= red.r[i];
            dot += mu[i] * red.r[i];
        }
        for j in 0..n - 1 {
            grad[m + j] -= red.s[j];
            dot += mu[m + j] * red.s[j];
        }
        let objective = red.lambda * conj - dot;
        if !objective.is_finite() {
            return None;
        }
        let residual = red.residual(&plan);
        Some(Eval {
            plan,
            objective,
            grad,
            residual,
        })
    }

    /// Constant row potential with unit total mass and zero column potentials.
    fn initial(&self) -> Result<Vec<f64>> {
        let red = self.red;
        let cmin = red.cost.iter().copied().fold(f64::INFINITY, f64::min);
        let mass = |z: f64| -> f64 {
            red.cost
                .iter()
                .map(|c| self.reg.scalar_conjugate_grad(z - (c - cmin) / red.lambda))
                .sum()
        };
        let sup = conjugate_sup(self.reg);
        let mut lo = sup.min(0.0) - 1.0;
        let mut step = 1.0;
        while mass(lo) >= 1.0 {
            step *= 2.0;
            lo -= step;
            if !lo.is_finite() {
                return Err(RotError::Numerical("cannot bracket the initial dual point".into()));
            }
        }
        let mut hi;
        if sup.is_finite() {
            let mut gap = (sup - lo) * 0.5;
            hi = sup - gap;
            while mass(hi) < 1.0 {
                gap *= 0.5;
                hi = sup - gap;
                if gap < f64::EPSILON * sup.abs().max(1.0) {
                    return Err(RotError::Numerical("cannot bracket the initial dual point".into()));
                }
            }
        } else {
            step = 1.0;
            hi = lo + step;
            while mass(hi) < 1.0 {
                step *= 2.0;
                hi = lo + step;
                if !hi.is_finite() {
                    return Err(RotError::Numerical("cannot bracket the initial dual point".into()));
                }
            }
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if mass(mid) < 1.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let a = cmin + red.lambda * lo;
        let mut mu = vec![0.0; self.dim()];
        mu[..red.m()].fill(a);
        Ok(mu)
    }

    /// Newton direction `-lambda M^{-1} g` with `M = A diag(w) A^T`, solved
    /// through the Schur complement on the column block.
    fn direction(&self, plan: &[f64], grad: &[f64]) -> Result<Vec<f64>> {
        let red = self.red;
        let (m, n) = (red.m(), red.n());
        let nc = n - 1;
        let w: Vec<f64> = plan.iter().map(|&p| 1.0 / self.reg.scalar_hess(p)).collect();
        if w.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
            return Err(RotError::Numerical("degenerate dual Hessian".into()));
        }
        let dr: Vec<f64> = (0..m).map(|i| w[i * n..(i + 1) * n].iter().sum()).collect();
        let mut schur = DMatrix::<f64>::zeros(nc, nc);
        let mut rhs = DVector::<f64>::zeros(nc);
        for j in 0..nc {
            schur[(j, j)] = (0..m).map(|i| w[i * n + j]).sum();
            rhs[j] = grad[m + j];
        }
        for i in 0..m {
            let row = &w[i * n..i * n + nc];
            let inv = 1.0 / dr[i];
            let gi = grad[i] * inv;
            for j in 0..nc {
                let a = row[j] * inv;
                rhs[j] -= row[j] * gi;
                for k in j..nc {
                    schur[(j, k)] -= a * row[k];
                }
            }
        }
        for j in 0..nc {
            for k in 0..j {
                schur[(j, k)] = schur[(k, j)];
            }
        }
        let chol = match Cholesky::new(schur.clone()) {
            Some(c) => c,
            None => {
                let ridge = 1e-14 * schur.diagonal().max();
                for j in 0..nc {
                    schur[(j, j)] += ridge;
                }
                Cholesky::new(schur)
                    .ok_or_else(|| RotError::Numerical("dual Hessian is not positive definite".into()))?
            }
        };
        let yc = chol.solve(&rhs);
        let mut dir = vec![0.0; m + nc];
        for i in 0..m {
            let row = &w[i * n..i * n + nc];
            let wy: f64 = row.iter().zip(yc.iter()).map(|(a, b)| a * b).sum();
            dir[i] = -red.lambda * (grad[i] - wy) / dr[i];
        }
        for j in 0..nc {
            dir[m + j] = -red.lambda * yc[j];
        }
        Ok(dir)
    }
}

fn max_abs(x: &[f64]) -> f64 {
    x.iter().fold(0.0f64, |a, b| a.max(b.abs()))
}

pub(crate) fn run(
    reg: Regularizer,
    red: &Reduced,
    tol: f64,
    max_iter: usize,
    warm: Option<Vec<f64>>,
) -> Result<Output> {
    let dual = Dual { reg, red };
    let start = warm.filter(|mu| mu.len() == dual.dim());
    let (mut mu, mut cur) = match start.and_then(|mu| dual.eval(&mu).map(|e| (mu, e))) {
        Some(pair) => pair,
        None => {
            let mu = dual.initial()?;
            let e = dual
                .eval(&mu)
                .ok_or_else(|| RotError::Numerical("initial dual point is infeasible".into()))?;
            (mu, e)
        }
    };
    for it in 0..max_iter {
        if cur.residual <= tol {
            return Ok(Output {
                plan: cur.plan,
                iterations: it,
            });
        }
        let dir = dual.direction(&cur.plan, &cur.grad)?;
        let slope: f64 = dir.iter().zip(&cur.grad).map(|(a, b)| a * b).sum();
        let gnorm = max_abs(&cur.grad);
        let mut t = 1.0;
        let mut next = None;
        while t > 1e-16 {
            let cand: Vec<f64> = mu.iter().zip(&dir).map(|(m, d)| m + t * d).collect();
            if let Some(e) = dual.eval(&cand) {
                let armijo = e.objective <= cur.objective + 1e-4 * t * slope;
                if armijo || max_abs(&e.grad) < gnorm * (1.0 - 1e-4 * t) {
                    next = Some((cand, e));
                    break;
                }
            }
            t *= 0.5;
        }
        match next {
            Some((m, e)) => {
                mu = m;
                cur = e;
            }
            None => {
                return Err(RotError::Convergence {
                    iterations: it,
                    residual: cur.residual,
                })
            }
        }
    }
    if cur.residual <= tol {
        return Ok(Output {
            plan: cur.plan,
            iterations: max_iter,
        });
    }
    Err(RotError::Convergence {
        iterations: max_iter,
        residual: cur.residual,
    })
}
