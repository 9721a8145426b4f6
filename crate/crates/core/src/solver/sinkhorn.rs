use super::Reduced;
use crate::error::RotError;

/// Scalings are folded into the potentials once they leave this range.
const ABSORB_LO: f64 = 1e-50;
const ABSORB_HI: f64 = 1e50;

pub(crate) struct Output {
    pub plan: Vec<f64>,
    pub iterations: usize,
}

struct State<'a> {
    red: &'a Reduced,
    f: Vec<f64>,
    g: Vec<f64>,
    kernel: Vec<f64>,
    u: Vec<f64>,
    v: Vec<f64>,
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.map(|x| (x - max).exp()).sum::<f64>().ln()
}

impl<'a> State<'a> {
    fn new(red: &'a Reduced) -> Self {
        let (m, n) = (red.m(), red.n());
        let mut st = Self {
            red,
            f: vec![0.0; m],
            g: vec![0.0; n],
            kernel: vec![0.0; m * n],
            u: vec![1.0; m],
            v: vec![1.0; n],
        };
        st.log_step();
        st
    }

    /// Exact row then column update in the log domain; leaves `u = v = 1`.
    fn log_step(&mut self) {
        let red = self.red;
        let (m, n, lam) = (red.m(), red.n(), red.lambda);
        let (f, g) = (&mut self.f, &mut self.g);
        for i in 0..m {
            let row = &red.cost[i * n..(i + 1) * n];
            let lse = log_sum_exp(row.iter().zip(g.iter()).map(|(c, gj)| (gj - c) / lam));
            f[i] = lam * (red.r[i].ln() - lse);
        }
        for j in 0..n {
            let lse = log_sum_exp((0..m).map(|i| (f[i] - red.cost[i * n + j]) / lam));
            g[j] = lam * (red.s[j].ln() - lse);
        }
        self.u.fill(1.0);
        self.v.fill(1.0);
        self.rebuild();
    }

    fn rebuild(&mut self) {
        let red = self.red;
        let (n, lam) = (red.n(), red.lambda);
        for (k, kv) in self.kernel.iter_mut().enumerate() {
            *kv = ((self.f[k / n] + self.g[k % n] - red.cost[k]) / lam).exp();
        }
    }

    fn absorb(&mut self) {
        let lam = self.red.lambda;
        for (f, u) in self.f.iter_mut().zip(&mut self.u) {
            *f += lam * u.ln();
            *u = 1.0;
        }
        for (g, v) in self.g.iter_mut().zip(&mut self.v) {
            *g += lam * v.ln();
            *v = 1.0;
        }
        self.rebuild();
    }

    fn out_of_range(x: &[f64]) -> bool {
        x.iter().any(|&a| !(ABSORB_LO..=ABSORB_HI).contains(&a))
    }

    fn degenerate(x: &[f64]) -> bool {
        x.iter().any(|&a| !(a.is_finite() && a > 0.0))
    }

    /// One row and one column scaling. Returns the row residual of the plan
    /// as it stood before the update (its columns are exact at that point).
    fn sweep(&mut self, kv: &mut [f64], ktu: &mut [f64]) -> f64 {
        let red = self.red;
        let (m, n) = (red.m(), red.n());
        let mut residual = 0.0f64;
        for i in 0..m {
            let row = &self.kernel[i * n..(i + 1) * n];
            kv[i] = row.iter().zip(&self.v).map(|(k, v)| k * v).sum();
            residual = residual.max((self.u[i] * kv[i] - red.r[i]).abs());
            self.u[i] = red.r[i] / kv[i];
        }
        if Self::degenerate(&self.u) {
            self.log_step();
            return f64::INFINITY;
        }
        ktu.fill(0.0);
        for i in 0..m {
            let ui = self.u[i];
            let row = &self.kernel[i * n..(i + 1) * n];
            for (acc, k) in ktu.iter_mut().zip(row) {
                *acc += k * ui;
            }
        }
        for j in 0..n {
            self.v[j] = red.s[j] / ktu[j];
        }
        if Self::degenerate(&self.v) {
            self.log_step();
            return f64::INFINITY;
        }
        if Self::out_of_range(&self.u) || Self::out_of_range(&self.v) {
            self.absorb();
        }
        residual
    }

    fn plan(&self) -> Vec<f64> {
        let n = self.red.n();
        self.kernel
            .iter()
            .enumerate()
            .map(|(k, kv)| self.u[k / n] * kv * self.v[k % n])
            .collect()
    }

    /// Reduced dual vector `(alpha, beta without its last entry)`.
    fn duals(&self) -> Vec<f64> {
        let lam = self.red.lambda;
        let n = self.red.n();
        let last = self.g[n - 1] + lam * self.v[n - 1].ln();
        let alpha = self.f.iter().zip(&self.u).map(|(f, u)| f + lam * u.ln() + last);
        let beta = self.g[..n - 1]
            .iter()
            .zip(&self.v)
            .map(|(g, v)| g + lam * v.ln() - last);
        alpha.chain(beta).collect()
    }
}

/// Stabilized scaling. On failure the current dual iterate is returned for
/// warm-starting another method.
pub(crate) fn run(
    red: &Reduced,
    tol: f64,
    max_iter: usize,
) -> Result<Output, (RotError, Option<Vec<f64>>)> {
    let mut st = State::new(red);
    let mut kv = vec![0.0; red.m()];
    let mut ktu = vec![0.0; red.n()];
    for it in 0..max_iter {
        let residual = st.sweep(&mut kv, &mut ktu);
        if residual <= tol {
            let plan = st.plan();
            if plan.iter().all(|&x| x > 0.0 && x.is_finite()) {
                return Ok(Output {
                    plan,
                    iterations: it,
                });
            }
        }
    }
    let plan = st.plan();
    let residual = red.residual(&plan);
    if residual <= tol && plan.iter().all(|&x| x > 0.0 && x.is_finite()) {
        return Ok(Output {
            plan,
            iterations: max_iter,
        });
    }
    let warm = st.duals();
    let warm = warm.iter().all(|x| x.is_finite()).then_some(warm);
    Err((
        RotError::Convergence {
            iterations: max_iter,
            residual,
        },
        warm,
    ))
}
