//! Finite ground spaces, transport costs, simplex vectors and the marginal
//! constraint operator.
//!
//! Couplings between two measures on an `N`-point space are stored as
//! row-major `N x N` arrays, so entry `i * N + j` is the mass moved from
//! `x_i` to `x_j`. Indices are zero-based throughout.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Result, RotError};

/// Absolute tolerance on the total mass of a [`Prob`].
pub const SIMPLEX_TOL: f64 = 1e-12;

/// Regular lattice layout of a [`GroundSpace`], remembered so that cost
/// statistics can be computed from pixel offsets instead of all pairs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridShape {
    pub width: usize,
    pub height: usize,
    pub spacing: f64,
}

/// A finite point cloud `{x_1, ..., x_N}` in `R^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundSpace {
    dim: usize,
    coords: Vec<f64>,
    grid: Option<GridShape>,
}

impl GroundSpace {
    pub fn new(points: Vec<Vec<f64>>) -> Result<Self> {
        let dim = points
            .first()
            .map(Vec::len)
            .ok_or_else(|| RotError::invalid("ground space needs at least one point"))?;
        if points.iter().any(|p| p.len() != dim) {
            return Err(RotError::invalid("all points must share one dimension"));
        }
        if points.iter().flatten().any(|x| !x.is_finite()) {
            return Err(RotError::invalid("coordinates must be finite"));
        }
        Ok(Self {
            dim,
            coords: points.into_iter().flatten().collect(),
            grid: None,
        })
    }

    /// `L x L` equidistant grid on `[0, extent]^2` with the corners included.
    ///
    /// Point `k = row * L + col` sits at `(col * h, row * h)` with
    /// `h = extent / (L - 1)`. A one-point grid is the origin.
    pub fn grid(side: usize, extent: f64) -> Result<Self> {
        if side == 0 {
            return Err(RotError::invalid("grid side length must be at least 1"));
        }
        if !(extent > 0.0 && extent.is_finite()) {
            return Err(RotError::invalid("grid extent must be positive"));
        }
        let h = if side == 1 { 0.0 } else { extent / (side - 1) as f64 };
        let mut space = Self::lattice(side, side, h);
        space.grid = Some(GridShape {
            width: side,
            height: side,
            spacing: h,
        });
        Ok(space)
    }

    /// Pixel-centre grid of a `width x height` image with pixel size `pixel_size`.
    pub fn pixel_grid(width: usize, height: usize, pixel_size: f64) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(RotError::invalid("image must have at least one pixel"));
        }
        if !(pixel_size > 0.0 && pixel_size.is_finite()) {
            return Err(RotError::invalid("pixel size must be positive"));
        }
        let mut space = Self::lattice(width, height, pixel_size);
        space.grid = Some(GridShape {
            width,
            height,
            spacing: pixel_size,
        });
        Ok(space)
    }

    fn lattice(width: usize, height: usize, h: f64) -> Self {
        let mut coords = Vec::with_capacity(2 * width * height);
        for row in 0..height {
            for col in 0..width {
                coords.push(col as f64 * h);
                coords.push(row as f64 * h);
            }
        }
        Self {
            dim: 2,
            coords,
            grid: None,
        }
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn grid_shape(&self) -> Option<GridShape> {
        self.grid
    }

    fn squared_distance(&self, i: usize, j: usize) -> f64 {
        self.point(i)
            .iter()
            .zip(self.point(j))
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }
}

/// Ground distance used to build costs from coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Euclidean,
    #[serde(alias = "squared_euclidean")]
    SqEuclidean,
}

impl Metric {
    fn distance_from_squared(self, d2: f64) -> f64 {
        match self {
            Metric::Euclidean => d2.sqrt(),
            Metric::SqEuclidean => d2,
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = RotError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euclidean" => Ok(Metric::Euclidean),
            "sqeuclidean" | "squared_euclidean" => Ok(Metric::SqEuclidean),
            other => Err(RotError::invalid(format!("unknown metric `{other}`"))),
        }
    }
}

/// Anything that can report the transport cost between two ground points.
///
/// Solvers only ever look at the block of costs between the supports of
/// the two marginals, so large spaces can compute costs on demand.
pub trait GroundCost: Sync {
    /// Number of ground points `N`.
    fn size(&self) -> usize;
    /// Cost `c_p` of moving one unit from `x_i` to `x_j`.
    fn cost(&self, i: usize, j: usize) -> f64;
    /// Power `p` applied to the ground distance.
    fn power(&self) -> f64;

    /// Row-major cost block between `rows` and `cols`.
    fn block(&self, rows: &[usize], cols: &[usize]) -> Vec<f64> {
        let mut out = Vec::with_capacity(rows.len() * cols.len());
        for &i in rows {
            for &j in cols {
                out.push(self.cost(i, j));
            }
        }
        out
    }

    /// Largest cost entry.
    fn max_cost(&self) -> f64 {
        let n = self.size();
        (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .map(|(i, j)| self.cost(i, j))
            .fold(0.0, f64::max)
    }

    /// `q`-quantile of all `N^2` cost entries.
    fn quantile(&self, q: f64) -> Result<f64> {
        check_level(q)?;
        let all: Vec<usize> = (0..self.size()).collect();
        let mut values = self.block(&all, &all);
        values.sort_by(f64::total_cmp);
        Ok(sorted_quantile(&values, q))
    }

    /// Sorted distinct cost values; entries within `1e-12 * c_max` of each
    /// other are merged into the largest of them.
    fn distinct_costs(&self) -> Vec<f64> {
        let all: Vec<usize> = (0..self.size()).collect();
        merge_close(self.block(&all, &all))
    }
}

/// Sort and merge values closer than `1e-12` times the largest one, keeping
/// the upper end of each cluster.
pub(crate) fn merge_close(mut values: Vec<f64>) -> Vec<f64> {
    values.sort_by(f64::total_cmp);
    let tol = 1e-12 * values.last().copied().unwrap_or(0.0).abs();
    let mut out: Vec<f64> = Vec::new();
    for v in values {
        match out.last_mut() {
            Some(last) if v - *last <= tol => *last = v,
            _ => out.push(v),
        }
    }
    out
}

/// Dense row-major cost vector of length `N^2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostVector {
    n: usize,
    entries: Vec<f64>,
    p: f64,
    c_max: f64,
}

impl CostVector {
    /// `c_{iN+j} = d(x_i, x_j)^p`.
    pub fn from_metric(space: &GroundSpace, p: f64, metric: Metric) -> Result<Self> {
        check_power(p)?;
        let n = space.len();
        let mut entries = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                entries.push(metric.distance_from_squared(space.squared_distance(i, j)).powf(p));
            }
        }
        Self::from_entries(n, entries, p)
    }

    /// Costs `d_{ij}^p` from a row-major table of ground distances.
    pub fn from_distance_table(n: usize, distances: &[f64], p: f64) -> Result<Self> {
        check_power(p)?;
        let entries = distances.iter().map(|d| d.powf(p)).collect();
        Self::from_entries(n, entries, p)
    }

    /// Wrap precomputed costs `c_p` (already raised to the power `p`).
    pub fn from_entries(n: usize, entries: Vec<f64>, p: f64) -> Result<Self> {
        check_power(p)?;
        if n == 0 || entries.len() != n * n {
            return Err(RotError::invalid(format!(
                "cost vector must have N^2 entries, got {} for N = {n}",
                entries.len()
            )));
        }
        if let Some((k, &v)) = entries
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v >= 0.0))
        {
            return Err(RotError::invalid(format!(
                "cost entries must be finite and non-negative (entry {k} = {v})"
            )));
        }
        let c_max = entries.iter().copied().fold(0.0, f64::max);
        Ok(Self {
            n,
            entries,
            p,
            c_max,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    /// Largest cost entry; every transport threshold at or above it covers all pairs.
    pub fn c_max(&self) -> f64 {
        self.c_max
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    /// The same costs with `shift` added to every entry.
    pub fn shifted(&self, shift: f64) -> Result<Self> {
        Self::from_entries(
            self.n,
            self.entries.iter().map(|c| c + shift).collect(),
            self.p,
        )
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        (0..self.n).all(|i| (0..i).all(|j| (self.get(i, j) - self.get(j, i)).abs() <= tol))
    }

    /// Empirical `q`-quantile of the `N^2` cost entries.
    pub fn quantile(&self, q: f64) -> Result<f64> {
        cost_quantile(self, q)
    }
}

impl GroundCost for CostVector {
    fn size(&self) -> usize {
        self.n
    }

    fn cost(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    fn power(&self) -> f64 {
        self.p
    }

    fn block(&self, rows: &[usize], cols: &[usize]) -> Vec<f64> {
        let mut out = Vec::with_capacity(rows.len() * cols.len());
        for &i in rows {
            let row = &self.entries[i * self.n..(i + 1) * self.n];
            out.extend(cols.iter().map(|&j| row[j]));
        }
        out
    }

    fn max_cost(&self) -> f64 {
        self.c_max
    }

    fn quantile(&self, q: f64) -> Result<f64> {
        cost_quantile(self, q)
    }

    fn distinct_costs(&self) -> Vec<f64> {
        merge_close(self.entries.clone())
    }
}

/// Costs computed on demand from coordinates; never stores `N^2` values.
#[derive(Debug, Clone)]
pub struct MetricCost {
    space: GroundSpace,
    metric: Metric,
    p: f64,
}

impl MetricCost {
    pub fn new(space: GroundSpace, metric: Metric, p: f64) -> Result<Self> {
        check_power(p)?;
        Ok(Self { space, metric, p })
    }

    pub fn space(&self) -> &GroundSpace {
        &self.space
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    /// Largest pairwise cost.
    pub fn c_max(&self) -> f64 {
        match self.space.grid_shape() {
            Some(g) => {
                let dx = (g.width - 1) as f64 * g.spacing;
                let dy = (g.height - 1) as f64 * g.spacing;
                self.metric.distance_from_squared(dx * dx + dy * dy).powf(self.p)
            }
            None => {
                let n = self.space.len();
                let mut best = 0.0f64;
                for i in 0..n {
                    for j in 0..i {
                        best = best.max(self.cost(i, j));
                    }
                }
                best
            }
        }
    }

    /// `q`-quantile of all `N^2` costs, using pixel-offset counts on grids.
    pub fn quantile(&self, q: f64) -> Result<f64> {
        check_level(q)?;
        match self.space.grid_shape() {
            Some(g) => {
                let (w, h) = (g.width as i64, g.height as i64);
                let mut weighted = Vec::with_capacity((2 * w - 1) as usize * (2 * h - 1) as usize);
                for dy in -(h - 1)..h {
                    for dx in -(w - 1)..w {
                        let count = ((w - dx.abs()) * (h - dy.abs())) as u64;
                        let ex = dx as f64 * g.spacing;
                        let ey = dy as f64 * g.spacing;
                        let c = self.metric.distance_from_squared(ex * ex + ey * ey).powf(self.p);
                        weighted.push((c, count));
                    }
                }
                Ok(weighted_quantile(weighted, q))
            }
            None => {
                let n = self.space.len();
                let all: Vec<usize> = (0..n).collect();
                let mut values = self.block(&all, &all);
                values.sort_by(f64::total_cmp);
                Ok(sorted_quantile(&values, q))
            }
        }
    }

    /// Materialize the full cost vector.
    pub fn to_cost_vector(&self) -> Result<CostVector> {
        CostVector::from_metric(&self.space, self.p, self.metric)
    }
}

impl GroundCost for MetricCost {
    fn size(&self) -> usize {
        self.space.len()
    }

    fn max_cost(&self) -> f64 {
        self.c_max()
    }

    fn quantile(&self, q: f64) -> Result<f64> {
        MetricCost::quantile(self, q)
    }

    fn distinct_costs(&self) -> Vec<f64> {
        match self.space.grid_shape() {
            Some(g) => {
                let mut values = Vec::with_capacity(g.width * g.height);
                for dy in 0..g.height {
                    for dx in 0..g.width {
                        let ex = dx as f64 * g.spacing;
                        let ey = dy as f64 * g.spacing;
                        values.push(self.metric.distance_from_squared(ex * ex + ey * ey).powf(self.p));
                    }
                }
                merge_close(values)
            }
            None => {
                let all: Vec<usize> = (0..self.size()).collect();
                merge_close(self.block(&all, &all))
            }
        }
    }

    fn cost(&self, i: usize, j: usize) -> f64 {
        self.metric
            .distance_from_squared(self.space.squared_distance(i, j))
            .powf(self.p)
    }

    fn power(&self) -> f64 {
        self.p
    }
}

fn check_power(p: f64) -> Result<()> {
    if p >= 1.0 && p.is_finite() {
        Ok(())
    } else {
        Err(RotError::invalid(format!("cost power must be >= 1, got {p}")))
    }
}

fn check_level(q: f64) -> Result<()> {
    if (0.0..=1.0).contains(&q) {
        Ok(())
    } else {
        Err(RotError::invalid(format!("quantile level must lie in [0, 1], got {q}")))
    }
}

/// Quantile of sorted data, interpolating linearly between order statistics
/// at position `(len - 1) * q`.
pub fn sorted_quantile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of an empty sample");
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// [`sorted_quantile`] for values given with multiplicities.
fn weighted_quantile(mut values: Vec<(f64, u64)>, q: f64) -> f64 {
    values.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: u64 = values.iter().map(|v| v.1).sum();
    let h = (total - 1) as f64 * q;
    let lo = h.floor() as u64;
    let order_stat = |k: u64| {
        let mut seen = 0u64;
        for &(v, c) in &values {
            seen += c;
            if k < seen {
                return v;
            }
        }
        values.last().unwrap().0
    };
    let a = order_stat(lo);
    let b = order_stat((lo + 1).min(total - 1));
    a + (h - lo as f64) * (b - a)
}

/// Empirical `q`-quantile of the cost entries (`q = 0.5` gives the median
/// that scales the regularization strength).
pub fn cost_quantile(c: &CostVector, q: f64) -> Result<f64> {
    check_level(q)?;
    let mut values = c.entries.clone();
    values.sort_by(f64::total_cmp);
    Ok(sorted_quantile(&values, q))
}

/// A probability vector on `N` points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prob {
    weights: Vec<f64>,
}

impl Prob {
    /// Validate weights that already lie on the simplex.
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(RotError::invalid("probability vector is empty"));
        }
        if let Some((k, w)) = weights
            .iter()
            .enumerate()
            .find(|(_, w)| !(w.is_finite() && **w >= 0.0))
        {
            return Err(RotError::invalid(format!("weight {k} = {w} is not a valid probability")));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > SIMPLEX_TOL {
            return Err(RotError::invalid(format!(
                "weights sum to {total}, not 1 (tolerance {SIMPLEX_TOL:e})"
            )));
        }
        Ok(Self { weights })
    }

    /// Normalize non-negative masses (e.g. pixel intensities) to total one.
    pub fn from_masses(masses: &[f64]) -> Result<Self> {
        if masses.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(RotError::invalid("masses must be finite and non-negative"));
        }
        let total: f64 = masses.iter().sum();
        if total <= 0.0 {
            return Err(RotError::invalid("total mass must be positive"));
        }
        Ok(Self {
            weights: masses.iter().map(|w| w / total).collect(),
        })
    }

    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(RotError::invalid("probability vector is empty"));
        }
        Ok(Self {
            weights: vec![1.0 / n as f64; n],
        })
    }

    pub fn dirac(n: usize, at: usize) -> Result<Self> {
        if at >= n {
            return Err(RotError::invalid(format!("atom {at} outside 0..{n}")));
        }
        let mut weights = vec![0.0; n];
        weights[at] = 1.0;
        Ok(Self { weights })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Indices with positive weight.
    pub fn support(&self) -> Vec<usize> {
        (0..self.weights.len()).filter(|&i| self.weights[i] > 0.0).collect()
    }

    pub fn has_full_support(&self) -> bool {
        self.weights.iter().all(|&w| w > 0.0)
    }

    pub fn max_abs_diff(&self, other: &Prob) -> f64 {
        self.weights
            .iter()
            .zip(&other.weights)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Empirical measure of a sample of point indices in `0..n`.
pub fn empirical_distribution(sample: &[usize], n: usize) -> Result<Prob> {
    if sample.is_empty() {
        return Err(RotError::invalid("empirical distribution of an empty sample"));
    }
    let mut counts = vec![0usize; n];
    for &k in sample {
        if k >= n {
            return Err(RotError::invalid(format!("sample index {k} outside 0..{n}")));
        }
        counts[k] += 1;
    }
    Ok(from_counts(&counts, sample.len()))
}

pub(crate) fn from_counts(counts: &[usize], total: usize) -> Prob {
    let t = total as f64;
    Prob {
        weights: counts.iter().map(|&c| c as f64 / t).collect(),
    }
}

/// Marginal constraint operator of an `m x n` coupling.
///
/// The full operator maps a coupling to its `[row sums, column sums]`; the
/// reduced operator drops the last column-sum constraint, which is implied
/// by the others, leaving `m + n - 1` linearly independent rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConstraintOperator {
    rows: usize,
    cols: usize,
}

impl ConstraintOperator {
    pub fn new(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "constraint operator needs a non-empty coupling");
        Self { rows, cols }
    }

    pub fn square(n: usize) -> Self {
        Self::new(n, n)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Number of reduced constraints, `m + n - 1`.
    pub fn reduced_dim(&self) -> usize {
        self.rows + self.cols - 1
    }

    /// `[row sums, column sums]`.
    pub fn apply(&self, plan: &[f64]) -> Vec<f64> {
        assert_eq!(plan.len(), self.rows * self.cols);
        let mut out = vec![0.0; self.rows + self.cols];
        for i in 0..self.rows {
            for j in 0..self.cols {
                let v = plan[i * self.cols + j];
                out[i] += v;
                out[self.rows + j] += v;
            }
        }
        out
    }

    /// `[row sums, column sums without the last]`.
    pub fn apply_reduced(&self, plan: &[f64]) -> Vec<f64> {
        let mut out = self.apply(plan);
        out.pop();
        out
    }

    /// Adjoint of the reduced operator: entry `(i, j)` is `mu_i + mu_{m+j}`,
    /// with the deleted column multiplier taken as zero.
    pub fn transpose_reduced(&self, mu: &[f64]) -> Vec<f64> {
        assert_eq!(mu.len(), self.reduced_dim());
        let mut out = Vec::with_capacity(self.rows * self.cols);
        for i in 0..self.rows {
            for j in 0..self.cols {
                let beta = if j + 1 < self.cols { mu[self.rows + j] } else { 0.0 };
                out.push(mu[i] + beta);
            }
        }
        out
    }

    /// Dense `(m + n - 1) x mn` matrix of the reduced operator.
    pub fn materialize_reduced(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.reduced_dim(), self.rows * self.cols);
        for i in 0..self.rows {
            for j in 0..self.cols {
                let col = i * self.cols + j;
                a[(i, col)] = 1.0;
                if j + 1 < self.cols {
                    a[(self.rows + j, col)] = 1.0;
                }
            }
        }
        a
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn grid_conventions() {
        let one = GroundSpace::grid(1, 1.0).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one.point(0), &[0.0, 0.0]);

        assert_eq!(GroundSpace::grid(10, 1.0).unwrap().len(), 100);

        let two = GroundSpace::grid(2, 1.0).unwrap();
        assert_eq!(two.len(), 4);
        assert_eq!(two.point(3), &[1.0, 1.0]);
        assert!((two.squared_distance(0, 1) - 1.0).abs() < 1e-15);

        assert!(GroundSpace::grid(0, 1.0).is_err());
    }

    #[test]
    fn mixed_dimensions_rejected() {
        assert!(GroundSpace::new(vec![vec![0.0], vec![1.0, 2.0]]).is_err());
        assert!(GroundSpace::new(vec![]).is_err());
    }

    #[test]
    fn two_point_metric_costs() {
        let space = GroundSpace::new(vec![vec![0.0], vec![1.0]]).unwrap();
        let c = CostVector::from_metric(&space, 1.0, Metric::Euclidean).unwrap();
        assert_eq!(c.entries(), &[0.0, 1.0, 1.0, 0.0]);
        assert_eq!(c.c_max(), 1.0);
    }

    #[test]
    fn unit_grid_costs() {
        let space = GroundSpace::grid(2, 1.0).unwrap();
        let c = CostVector::from_metric(&space, 1.0, Metric::Euclidean).unwrap();
        let sqrt2 = 2f64.sqrt();
        for i in 0..4 {
            for j in 0..4 {
                let v = c.get(i, j);
                if i == j {
                    assert_eq!(v, 0.0);
                } else {
                    assert!((v - 1.0).abs() < 1e-15 || (v - sqrt2).abs() < 1e-15, "{v}");
                }
            }
        }
        let sq = CostVector::from_metric(&space, 1.0, Metric::SqEuclidean).unwrap();
        assert!((sq.get(0, 3) - 2.0).abs() < 1e-15);
        assert!((sq.c_max() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn negative_custom_table_rejected() {
        assert!(CostVector::from_distance_table(2, &[0.0, -1.0, 1.0, 0.0], 1.0).is_err());
        assert!(CostVector::from_entries(2, vec![0.0, 1.0, 1.0], 1.0).is_err());
        assert!(CostVector::from_distance_table(2, &[0.0, 1.0, 1.0, 0.0], 0.5).is_err());
    }

    #[test]
    fn empirical_counts() {
        let r = empirical_distribution(&[0, 0, 1, 2], 3).unwrap();
        assert_eq!(r.weights(), &[0.5, 0.25, 0.25]);
        let d = empirical_distribution(&[1], 2).unwrap();
        assert_eq!(d.weights(), &[0.0, 1.0]);
        assert!(empirical_distribution(&[], 2).is_err());
        assert!(empirical_distribution(&[2], 2).is_err());
    }

    #[test]
    fn quantile_conventions() {
        let c = CostVector::from_entries(2, vec![0.0, 1.0, 1.0, 0.0], 1.0).unwrap();
        // sorted [0, 0, 1, 1]; position 1.5 interpolates 0 and 1
        assert_eq!(cost_quantile(&c, 0.5).unwrap(), 0.5);
        assert_eq!(cost_quantile(&c, 0.0).unwrap(), 0.0);
        assert_eq!(cost_quantile(&c, 1.0).unwrap(), 1.0);
        assert!(cost_quantile(&c, 1.5).is_err());
    }

    #[test]
    fn grid_quantile_matches_dense() {
        for (w, metric) in [(3usize, Metric::Euclidean), (4, Metric::SqEuclidean), (5, Metric::Euclidean)] {
            let space = GroundSpace::pixel_grid(w, w, 0.7).unwrap();
            let lazy = MetricCost::new(space, metric, 1.0).unwrap();
            let dense = lazy.to_cost_vector().unwrap();
            for q in [0.0, 0.1, 0.25, 0.5, 0.9, 1.0] {
                let a = lazy.quantile(q).unwrap();
                let b = cost_quantile(&dense, q).unwrap();
                assert!((a - b).abs() < 1e-12, "w={w} q={q}: {a} vs {b}");
            }
            assert!((lazy.c_max() - dense.c_max()).abs() < 1e-12);
        }
    }

    #[test]
    fn prob_validation() {
        assert!(Prob::new(vec![0.5, 0.5]).is_ok());
        assert!(Prob::new(vec![0.5, 0.6]).is_err());
        assert!(Prob::new(vec![1.5, -0.5]).is_err());
        let p = Prob::from_masses(&[1.0, 3.0]).unwrap();
        assert_eq!(p.weights(), &[0.25, 0.75]);
        assert!(Prob::from_masses(&[0.0, 0.0]).is_err());
    }

    fn rank(mut m: DMatrix<f64>) -> usize {
        let (rows, cols) = m.shape();
        let mut rank = 0;
        for c in 0..cols {
            if rank == rows {
                break;
            }
            let pivot = (rank..rows).max_by(|&a, &b| m[(a, c)].abs().total_cmp(&m[(b, c)].abs())).unwrap();
            if m[(pivot, c)].abs() < 1e-10 {
                continue;
            }
            m.swap_rows(pivot, rank);
            for r in 0..rows {
                if r != rank {
                    let f = m[(r, c)] / m[(rank, c)];
                    for k in 0..cols {
                        let v = m[(rank, k)];
                        m[(r, k)] -= f * v;
                    }
                }
            }
            rank += 1;
        }
        rank
    }

    #[test]
    fn reduced_operator_has_full_row_rank() {
        for n in 1..=6 {
            let a = ConstraintOperator::square(n).materialize_reduced();
            assert_eq!(rank(a), 2 * n - 1, "N = {n}");
        }
    }

    #[test]
    fn implicit_matches_materialized() {
        let op = ConstraintOperator::new(3, 4);
        let plan: Vec<f64> = (0..12).map(|k| (k as f64 + 1.0) / 78.0).collect();
        let a = op.materialize_reduced();
        let dense = &a * nalgebra::DVector::from_column_slice(&plan);
        let implicit = op.apply_reduced(&plan);
        for (x, y) in dense.iter().zip(&implicit) {
            assert!((x - y).abs() < 1e-15);
        }
        let mu: Vec<f64> = (0..6).map(|k| k as f64 - 2.5).collect();
        let dense_t = a.transpose() * nalgebra::DVector::from_column_slice(&mu);
        for (x, y) in dense_t.iter().zip(op.transpose_reduced(&mu)) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    proptest! {
        #[test]
        fn product_plan_marginals_recovered(
            raw_r in proptest::collection::vec(0.01f64..1.0, 1..7),
            raw_s in proptest::collection::vec(0.01f64..1.0, 1..7),
        ) {
            let r = Prob::from_masses(&raw_r).unwrap();
            let s = Prob::from_masses(&raw_s).unwrap();
            let op = ConstraintOperator::new(r.len(), s.len());
            let plan: Vec<f64> = r.weights().iter()
                .flat_map(|a| s.weights().iter().map(move |b| a * b))
                .collect();
            let full = op.apply(&plan);
            for (x, y) in full.iter().zip(r.weights().iter().chain(s.weights())) {
                prop_assert!((x - y).abs() < 1e-14);
            }
            let reduced = op.apply_reduced(&plan);
            prop_assert_eq!(reduced.len(), r.len() + s.len() - 1);
        }

        #[test]
        fn metric_costs_symmetric(pts in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..8), p in 1.0f64..3.0) {
            let space = GroundSpace::new(pts.iter().map(|&(x, y)| vec![x, y]).collect()).unwrap();
            for metric in [Metric::Euclidean, Metric::SqEuclidean] {
                let c = CostVector::from_metric(&space, p, metric).unwrap();
                prop_assert!(c.is_symmetric(0.0));
                for i in 0..space.len() {
                    prop_assert_eq!(c.get(i, i), 0.0);
                }
            }
        }
    }
}
