//! Greedy construction of quadratic-manifold reduced-order models for
//! affine-parametric time-dependent problems.

pub mod error;
pub mod estimator;
pub mod greedy;
pub mod harness;
pub mod linalg;
pub mod models;
pub mod quadmanifold;
pub mod rom;
pub mod scalar;
pub mod snapshots;

pub use error::{Error, Result};
pub use scalar::Real;

/// Double-precision aliases for the common entry points.
pub type Model = models::AffineModel<f64>;
pub type Basis = snapshots::LinearBasis<f64>;
pub type QuadMap = quadmanifold::QuadraticMap<f64>;
pub type Params = models::ParamVector<f64>;
pub type Snapshots = snapshots::SnapshotSet<f64>;
pub type FomTrajectory = models::Trajectory<f64>;
pub type RomTrajectory = rom::ReducedTrajectory<f64>;
pub type Log = greedy::GreedyLog<f64>;
