//! Shared fixtures for the benchmarks.

use rot_core::inference::dirichlet_sample;
use rot_core::{CostVector, GroundCost, GroundSpace, Metric, Prob};

/// Euclidean cost on an `side x side` grid of the unit square with
/// Dirichlet(1) marginals drawn from `seed`.
pub struct Fixture {
    pub cost: CostVector,
    pub r: Prob,
    pub s: Prob,
    /// Median cost entry, the scale for `lambda0`.
    pub q50: f64,
}

impl Fixture {
    pub fn grid(side: usize, seed: u64) -> Self {
        let space = GroundSpace::grid(side, 1.0).expect("grid");
        let cost = CostVector::from_metric(&space, 1.0, Metric::Euclidean).expect("cost");
        let n = cost.size();
        let q50 = cost.quantile(0.5).expect("median");
        Self {
            r: dirichlet_sample(1.0, n, seed).expect("r"),
            s: dirichlet_sample(1.0, n, seed.wrapping_add(1)).expect("s"),
            cost,
            q50,
        }
    }
}
