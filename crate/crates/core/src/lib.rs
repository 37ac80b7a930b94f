//! Sequential model doubly robust estimation of the mean outcome under a
//! two-period treatment path, with L1-penalized nuisance models fitted on
//! loss functions targeted at the moment conditions of the score.
//!
//! The crate is organized bottom-up:
//!
//! * [`dataset`] and [`model`]: observations, CSV I/O, the logistic link, the
//!   score and the nuisance parameter container;
//! * [`losses`] and [`optim`]: the eight subsample losses and the accelerated
//!   proximal gradient solver with its KKT certificate;
//! * [`pipeline`]: cross-fitting, point estimate, variance and intervals;
//! * [`dgp`] and [`study`]: synthetic scenarios with known truth and the
//!   Monte Carlo harness.

pub mod dataset;
pub mod dgp;
pub mod error;
pub mod losses;
pub mod model;
pub mod optim;
pub mod pipeline;
pub mod study;

pub use dataset::{Dataset, Observation, ObservationBuf};
pub use dgp::{generate, oracle_eta, CanPattern, GroundTruth, Misspecification, Scenario, ScenarioSpec};
pub use error::{Error, Result};
pub use losses::{Frozen, LossKind, LossProblem};
pub use model::{logistic, score, NuisanceParams, OverlapConfig, TreatmentPath};
pub use optim::{kkt_check, lambda_from_theory, solve, SolveResult, SolverConfig};
pub use pipeline::{
    estimate, estimate_dte, estimate_with_nuisances, fit_nuisances, make_plan, CrossFitPlan,
    EstimateReport, EstimatorChoice, NuisanceFamily,
};
pub use study::{compare_estimators, run_study, StudyConfig, StudyResult};
