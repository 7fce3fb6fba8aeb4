//! Split-sample IVX inference for predictive regressions with persistent
//! predictors, a Monte Carlo harness for size and power studies, and the
//! bond-premia factor pipeline.

pub mod bond;
pub mod cli;
pub mod error;
pub mod estimators;
pub mod ivx;
pub mod matrix_kit;
pub mod model;
pub mod montecarlo;
pub mod scenario;

pub use error::{IvxError, Result};
pub use ivx::run_test;
pub use model::{DgpSpec, GarchParams, Hypothesis, IvxConfig, PredictiveSample, Side, TestReport};
