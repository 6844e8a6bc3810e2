//! Sensor localization from mixed LOS/NLOS range measurements.
//!
//! Ranges are turned into per-edge distance intervals ([`bounds`]), the
//! placement problem is relaxed to a semidefinite program ([`model`]),
//! solved by the bundled interior-point method ([`solver`]), and positions
//! are read back by [`estimator`]. [`sim`] generates synthetic networks and
//! runs Monte Carlo batches; [`io`] holds the file formats.

// Negated comparisons route NaN into the failure branch on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod error;
pub mod estimator;
pub mod geometry;
pub mod io;
pub mod model;
pub mod sim;
pub mod solver;

pub use bounds::{derive_bounds, DistanceBounds, MeasurementKind, NoiseBoundPolicy, RangeMeasurement};
pub use error::{Error, Result};
pub use estimator::{localize, localize_bounds, AnchorInput, EstimationReport, EstimatorConfig};
pub use geometry::{NodeId, Point2};
pub use model::{AnchorPrior, AnchorVariant, CoefficientMode, ConicProblem, Formulation};
pub use sim::{NoiseModel, Scenario};
pub use solver::{check_kkt, solve, Solution, SolverSettings, Status};
