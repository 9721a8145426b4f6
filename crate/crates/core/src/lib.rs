//! Regularized optimal transport between finitely supported measures:
//! solvers for a family of convex regularizers, sensitivity of the optimal
//! plan, limit laws and bootstrap for empirical plans and divergences, and
//! colocalization curves with uniform confidence bands.

pub mod coloc;
pub mod error;
pub mod inference;
pub mod io;
pub mod regularizer;
pub mod sensitivity;
pub mod solver;
pub mod space;

pub use error::{Result, RotError};
pub use regularizer::Regularizer;
pub use sensitivity::{plan_covariance, plan_gradient, PlanCovariance, SampleMode};
pub use solver::{divergence, solve, SolverOptions, TransportPlan};
pub use space::{CostVector, GroundCost, GroundSpace, Metric, MetricCost, Prob};
