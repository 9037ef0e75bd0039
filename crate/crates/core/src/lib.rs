//! Additive-model imputation for item nonresponse in surveys.
//!
//! The crate covers the whole pipeline of a design-based simulation study:
//! finite populations, without-replacement sampling designs, a logistic
//! nonresponse mechanism, penalized-spline additive models fitted by
//! backfitting, four imputation methods, bootstrap variance estimation for
//! the imputed total (without-replacement bootstrap under SRSWOR,
//! mirror-match bootstrap under stratified sampling), Monte Carlo comparison
//! measures and a parallel, seed-deterministic experiment runner.
//!
//! The numerical core (`linalg`, `spline`, `am`, `metrics`) is generic over
//! the [`Real`] scalar trait; the aliases below fix it to `f64` or `f32`.

pub mod am;
pub mod bootstrap;
pub mod error;
pub mod imputation;
pub mod linalg;
pub mod metrics;
pub mod population;
pub mod response;
pub mod rng;
pub mod runner;
pub mod sampling;
pub mod scalar;
pub mod spline;

pub use error::{ConfigIssue, Error, Result};
pub use scalar::Real;

pub type SplineBasis64 = spline::SplineBasis<f64>;
pub type SplineFit64 = spline::SplineFit<f64>;
pub type AmFit64 = am::AmFit<f64>;
pub type AmConfig64 = am::AmConfig<f64>;
pub type SimulationResult64 = metrics::SimulationResult<f64>;




pub type SplineBasis32 = spline::SplineBasis<f32>;
pub type SplineFit32 = spline::SplineFit<f32>;
pub type AmFit32 = am::AmFit<f32>;
pub type AmConfig32 = am::AmConfig<f32>;
pub type SimulationResult32 = metrics::SimulationResult<f32>;


