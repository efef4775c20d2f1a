//! Inhomogeneous multitype Gibbs point process models: windows, trend
//! estimation, summary functions, pairwise interactions, pseudolikelihood
//! fitting, residual diagnostics and simulation.

pub mod diagnostics;
pub mod error;
pub mod fitting;
pub mod geometry;
pub mod intensity;
pub mod interactions;
pub mod patterns;
pub mod scalar;
pub mod simulation;
pub mod summaries;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Concrete double-precision types used by the command-line tool and tests.
pub type Point = geometry::Point2<f64>;
pub type Window = geometry::PolygonalWindow<f64>;
pub type Grid = geometry::TileGrid<f64>;
pub type Pattern = patterns::MarkedPointPattern<f64>;
pub type CohortF64 = patterns::Cohort<f64>;
pub type Surface = intensity::IntensitySurface<f64>;
pub type Interaction = interactions::InteractionSpec<f64>;
pub type ParamMatrix = interactions::PairParamMatrix<f64>;
pub type Model = fitting::FittedModel<f64>;
pub type Config = fitting::FitConfig<f64>;
pub type Gibbs = simulation::GibbsModel<f64>;
