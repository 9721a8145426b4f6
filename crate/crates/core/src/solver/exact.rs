use std::collections::HashSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, RotError};
use crate::space::{GroundCost, Prob};

/// Largest ground space accepted by [`exact_ot_baseline`].
pub const EXACT_MAX_N: usize = 6;

/// Unregularized optimum and its optimal dual basic solutions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactOt {
    /// `W_p^p`, the optimal value of the transport LP.
    pub value: f64,
    /// Each vertex is `(u_1..u_N, v_1..v_N)` with `v_N = 0`.
    pub dual_vertices: Vec<Vec<f64>>,
}

/// Quantized key for deduplicating partial dual solutions.
fn key(mask: u32, values: &[f64]) -> (u32, Vec<i64>) {
    let q = values
        .iter()
        .enumerate()
        .filter(|(k, _)| mask & (1 << k) != 0)
        .map(|(_, v)| (v * 1e9).round() as i64)
        .collect();
    (mask, q)
}

/// All vertices of `{u_i + v_j <= c_ij, v_N = 0}`.
///
/// A basic solution is determined by a spanning tree of tight edges on the
/// bipartite graph rooted at `v_N`. Growing the tree one node at a time, a
/// newly attached node must take the largest value allowed by the already
/// fixed opposite side, so the enumeration branches only on the order in
/// which nodes are attached.
fn dual_vertices(c: &dyn GroundCost) -> Vec<Vec<f64>> {
    let n = c.size();
    let total = 2 * n;
    let full: u32 = (1 << total) - 1;
    let root = total - 1;
    let mut layer = vec![(1u32 << root, vec![0.0; total])];
    let mut seen = HashSet::new();
    for _ in 1..total {
        let mut next = Vec::new();
        for (mask, values) in &layer {
            for k in 0..total {
                if mask & (1 << k) != 0 {
                    continue;
                }
                let bound = if k < n {
                    (n..total)
                        .filter(|&l| mask & (1 << l) != 0)
                        .map(|l| c.cost(k, l - n) - values[l])
                        .fold(f64::INFINITY, f64::min)
                } else {
                    (0..n)
                        .filter(|&l| mask & (1 << l) != 0)
                        .map(|l| c.cost(l, k - n) - values[l])
                        .fold(f64::INFINITY, f64::min)
                };
                if !bound.is_finite() {
                    continue;
                }
                let mut v = values.clone();
                v[k] = bound;
                let m = mask | (1 << k);
                if seen.insert(key(m, &v)) {
                    next.push((m, v));
                }
            }
        }
        layer = next;
    }
    layer
        .into_iter()
        .filter(|(m, _)| *m == full)
        .map(|(_, v)| v)
        .collect()
}

/// Exact transport value and optimal dual vertices for tiny instances
/// (`N <= 6`), by enumerating the basic solutions of the dual LP.
pub fn exact_ot_baseline(c: &dyn GroundCost, r: &Prob, s: &Prob) -> Result<ExactOt> {
    let n = c.size();
    if n > EXACT_MAX_N {
        return Err(RotError::invalid(format!(
            "exact baseline supports at most {EXACT_MAX_N} points, got {n}"
        )));
    }
    if r.len() != n || s.len() != n {
        return Err(RotError::invalid("marginal length does not match the cost"));
    }
    let vertices = dual_vertices(c);
    let objective = |v: &[f64]| -> f64 {
        let (u, w) = v.split_at(n);
        u.iter().zip(r.weights()).map(|(a, b)| a * b).sum::<f64>()
            + w.iter().zip(s.weights()).map(|(a, b)| a * b).sum::<f64>()
    };
    let value = vertices
        .iter()
        .map(|v| objective(v))
        .fold(f64::NEG_INFINITY, f64::max);
    let scale = 1.0 + value.abs();
    let dual_vertices = vertices
        .into_iter()
        .filter(|v| objective(v) >= value - 1e-10 * scale)
        .collect();
    Ok(ExactOt {
        value: value.max(0.0),
        dual_vertices,
    })
}

/// Draws from the unregularized limit law: `(max_u <G, u_r>)^(1/p)` with
/// `G ~ N(0, diag(r) - r r^T)` and `u_r` the first `N` coordinates of each
/// optimal dual vertex.
pub fn ot_limit_sample(
    c: &dyn GroundCost,
    r: &Prob,
    dual_vertices: &[Vec<f64>],
    m: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let n = r.len();
    if dual_vertices.is_empty() {
        return Err(RotError::invalid("empty dual vertex set"));
    }
    if m == 0 {
        return Err(RotError::invalid("sample size must be at least 1"));
    }
    if dual_vertices.iter().any(|v| v.len() < n) || c.size() != n {
        return Err(RotError::invalid("dual vertex length does not match the marginal"));
    }
    let p = c.power();
    let sqrt_r: Vec<f64> = r.weights().iter().map(|w| w.sqrt()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = vec![0.0; n];
    let mut out = Vec::with_capacity(m);
    for _ in 0..m {
        crate::inference::multinomial_gaussian_into(r.weights(), &sqrt_r, &mut rng, &mut g);
        let best = dual_vertices
            .iter()
            .map(|v| v[..n].iter().zip(&g).map(|(a, b)| a * b).sum::<f64>())
            .fold(f64::NEG_INFINITY, f64::max)
            .max(0.0);
        out.push(best.powf(1.0 / p));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::{CostVector, GroundSpace, Metric};
    use rand::Rng;

    /// Primal oracle: minimum cost over basic feasible solutions, found by
    /// trying every choice of 2N - 1 cells and solving the reduced
    /// marginal system on them.
    fn primal_bfs_ot(c: &CostVector, r: &[f64], s: &[f64]) -> f64 {
        use crate::space::ConstraintOperator;
        let n = r.len();
        let a = ConstraintOperator::square(n).materialize_reduced();
        let d = 2 * n - 1;
        let b = nalgebra::DVector::from_iterator(d, r.iter().chain(&s[..n - 1]).copied());
        let mut best = f64::INFINITY;
        let cells = n * n;
        for mask in 0u32..(1 << cells) {
            if mask.count_ones() as usize != d {
                continue;
            }
            let idx: Vec<usize> = (0..cells).filter(|k| mask & (1 << k) != 0).collect();
            let sub = nalgebra::DMatrix::from_fn(d, d, |i, j| a[(i, idx[j])]);
            let Some(x) = sub.lu().solve(&b) else { continue };
            if x.iter().any(|v| !v.is_finite() || *v < -1e-12) {
                continue;
            }
            let resid = (&a.select_columns(&idx) * &x - &b).amax();
            if resid > 1e-9 {
                continue;
            }
            best = best.min(idx.iter().zip(x.iter()).map(|(k, v)| c.entries()[*k] * v).sum());
        }
        best
    }

    #[test]
    fn two_point_total_variation() {
        let c = CostVector::from_entries(2, vec![0.0, 1.0, 1.0, 0.0], 1.0).unwrap();
        let r = Prob::new(vec![0.7, 0.3]).unwrap();
        let s = Prob::uniform(2).unwrap();
        let ex = exact_ot_baseline(&c, &r, &s).unwrap();
        assert!((ex.value - 0.2).abs() < 1e-12);
        let same = exact_ot_baseline(&c, &r, &r).unwrap();
        assert!(same.value.abs() < 1e-12);
        assert!(!same.dual_vertices.is_empty());
    }

    #[test]
    fn agrees_with_primal_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for n in [2, 3, 4] {
            for _ in 0..5 {
                let pts = (0..n).map(|_| vec![rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)]).collect();
                let c = CostVector::from_metric(&GroundSpace::new(pts).unwrap(), 1.0, Metric::Euclidean).unwrap();
                let r: Vec<f64> = (0..n).map(|_| rng.random_range(1..10) as f64).collect();
                let s: Vec<f64> = (0..n).map(|_| rng.random_range(1..10) as f64).collect();
                let (r, s) = (Prob::from_masses(&r).unwrap(), Prob::from_masses(&s).unwrap());
                let ex = exact_ot_baseline(&c, &r, &s).unwrap();
                let oracle = primal_bfs_ot(&c, r.weights(), s.weights());
                assert!((oracle - ex.value).abs() < 1e-10, "n={n}: {} vs {oracle}", ex.value);
            }
        }
    }

    #[test]
    fn vertices_are_feasible_and_tight() {
        let space = GroundSpace::grid(2, 1.0).unwrap();
        let c = CostVector::from_metric(&space, 1.0, Metric::Euclidean).unwrap();
        let r = Prob::uniform(4).unwrap();
        let ex = exact_ot_baseline(&c, &r, &r).unwrap();
        for v in &ex.dual_vertices {
            assert_eq!(v[7], 0.0);
            for i in 0..4 {
                for j in 0..4 {
                    assert!(v[i] + v[4 + j] <= c.get(i, j) + 1e-12);
                }
            }
        }
    }

    #[test]
    fn rejects_large_instances() {
        let space = GroundSpace::grid(3, 1.0).unwrap();
        let c = CostVector::from_metric(&space, 1.0, Metric::Euclidean).unwrap();
        let r = Prob::uniform(9).unwrap();
        assert!(exact_ot_baseline(&c, &r, &r).is_err());
    }

    #[test]
    fn limit_sample_edge_cases() {
        let c = CostVector::from_entries(2, vec![0.0, 1.0, 1.0, 0.0], 1.0).unwrap();
        let dirac = Prob::dirac(2, 0).unwrap();
        let ex = exact_ot_baseline(&c, &dirac, &dirac).unwrap();
        let draws = ot_limit_sample(&c, &dirac, &ex.dual_vertices, 50, 1).unwrap();
        assert!(draws.iter().all(|&x| x == 0.0));
        assert!(ot_limit_sample(&c, &dirac, &[], 5, 1).is_err());
        let r = Prob::uniform(2).unwrap();
        let a = ot_limit_sample(&c, &r, &ex.dual_vertices, 20, 9).unwrap();
        let b = ot_limit_sample(&c, &r, &ex.dual_vertices, 20, 9).unwrap();
        assert_eq!(a, b);
    }

    /// N = 2, r = s uniform, 0/1 cost: G = (g, -g) with g ~ N(0, 1/4) and the
    /// optimal duals give max <G, u> = |g|, so the mean is sqrt(1/4 * 2/pi).
    #[test]
    fn two_point_limit_mean() {
        let c = CostVector::from_entries(2, vec![0.0, 1.0, 1.0, 0.0], 1.0).unwrap();
        let r = Prob::uniform(2).unwrap();
        let ex = exact_ot_baseline(&c, &r, &r).unwrap();
        let draws = ot_limit_sample(&c, &r, &ex.dual_vertices, 200_000, 5).unwrap();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        let exact = (0.25 * 2.0 / std::f64::consts::PI).sqrt();
        assert!((mean - exact).abs() < 0.01 * exact, "{mean} vs {exact}");
    }
}
