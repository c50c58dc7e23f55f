//! Bayesian dose finding for two continuous agents.
//!
//! Cohorts of two patients are allocated by escalation with overdose
//! control applied to the conditional MTD of one agent given the other,
//! under a link-function dose-toxicity model with an optional interaction
//! term. The crate also simulates replicated trials and computes their
//! operating characteristics.
//!
//! Module map:
//!
//! - [`link`]: logistic, probit and complementary log-log links.
//! - [`model`]: dose standardization, the working model and its MTD curve.
//! - [`posterior`]: log posterior, MCMC sampler and a quadrature oracle.
//! - [`design`]: the allocation algorithm, stopping rule and final estimate.
//! - [`scenario`]: data-generating truths.
//! - [`metrics`]: safety summaries, pointwise bias and percent selection.
//! - [`harness`]: replicated experiments and their on-disk reports.

pub mod design;
pub mod error;
pub mod harness;
pub mod link;
pub mod metrics;
pub mod model;
pub mod posterior;
pub mod rng;
pub mod scenario;

pub use design::{
    advance, check_stopping, estimate_mtd_curve, next_cohort_doses, run_trial, Advance, Allocation, DesignConfig,
    MtdCurveEstimate, TrialRun, TrialState, TrialStatus,
};
pub use error::{Error, Result};
pub use harness::{compare_experiments, run_experiment, ExperimentConfig, OpCharReport};
pub use link::LinkKind;
pub use model::{DosePair, DoseWindow, ModelParams, PatientRecord, TrialData};
pub use posterior::{sample_posterior, PosteriorDraws, PriorSpec, SamplerConfig};
pub use scenario::{ScenarioPreset, TruthModel};
