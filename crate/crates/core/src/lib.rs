//! Numerical laboratory for parabolic frequency under Ricci flow.

// `!(x > 0.0)` style comparisons reject NaN along with the bad values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod constants;
pub mod diagnostics;
pub mod error;
pub mod estimates;
pub mod flow;
pub mod frequency;
pub mod geometry;
pub mod measure;
pub mod pde;
pub mod quadrature;
pub mod scenario;
pub mod verify;
pub mod weight;

pub use error::{Error, Result};
pub use geometry::{Backend, BackendKind, GridShape, Jet, MetricData, MetricSnapshot, ScalarField};
pub use diagnostics::ResidualReport;
pub use flow::{evolve_metric, CurvatureEnvelope, FlowTrajectory};
pub use pde::{EquationKind, ScalarFieldTrace};
pub use measure::WeightedMeasure;
pub use weight::WeightFunction;
pub use constants::{ConstantRegistry, Provenance};
pub use frequency::{CorrectionKind, FrequencyTrace};
pub use verify::{CheckReport, CheckStatus};
pub use scenario::{run_suite, RunOutput, ScenarioConfig};
