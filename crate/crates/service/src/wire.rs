//! JSON request and response bodies.

use combo_ewoc::design::{Allocation, MtdCurveEstimate, TrialStatus};
use combo_ewoc::posterior::GammaAxis;
use combo_ewoc::{DesignConfig, DoseWindow, DosePair, LinkKind, PriorSpec, SamplerConfig};
use serde::{Deserialize, Serialize};

fn default_link() -> LinkKind {
    LinkKind::Logistic
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateTrialRequest {
    pub window: DoseWindow,
    #[serde(default)]
    pub design: DesignConfig,
    #[serde(default)]
    pub prior: PriorSpec,
    #[serde(default)]
    pub sampler: SamplerConfig,
    #[serde(default = "default_link")]
    pub working_link: LinkKind,
    #[serde(default = "default_true")]
    pub interaction: bool,
    /// Seeds every posterior refresh of the trial; random when omitted.
    #[serde(default)]
    pub seed: Option<u64>,
    /// Also accepted as the `Idempotency-Key` header.
    #[serde(default)]
    pub idempotency_key: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordOutcomesRequest {
    pub outcomes: Vec<u8>,
    pub expected_revision: u64,
    #[serde(default)]
    pub idempotency_key: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

/// A dose pair in both unit systems.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dose {
    pub standardized: Point,
    pub raw: Point,
}

impl Dose {
    pub fn new(window: &DoseWindow, dose: DosePair) -> Self {
        let (x, y) = window.to_raw(dose);
        Dose { standardized: Point { x: dose.x, y: dose.y }, raw: Point { x, y } }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatientDose {
    /// 1-based patient index within the trial.
    pub patient: u32,
    pub dose: Dose,
    /// Agent whose dose was chosen by the feasibility bound; absent for the
    /// first cohort.
    pub updated_agent: Option<String>,
    /// α-quantile of the conditional MTD before the escalation cap.
    pub quantile: Option<f64>,
    pub capped: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub cohort: u32,
    pub alpha: f64,
    pub patients: Vec<PatientDose>,
}

fn agent(axis: GammaAxis) -> String {
    match axis {
        GammaAxis::AgivenB => "A".into(),
        GammaAxis::BgivenA => "B".into(),
    }
}

impl Recommendation {
    pub fn first_cohort(window: &DoseWindow, alpha: f64) -> Self {
        let patient = |i| PatientDose {
            patient: i,
            dose: Dose::new(window, DosePair::MIN),
            updated_agent: None,
            quantile: None,
            capped: false,
        };
        Recommendation { cohort: 1, alpha, patients: vec![patient(1), patient(2)] }
    }

    pub fn from_allocation(window: &DoseWindow, alloc: &Allocation) -> Self {
        let first = 2 * alloc.cohort - 1;
        let patients = alloc
            .patients
            .iter()
            .zip(first..)
            .map(|(p, i)| PatientDose {
                patient: i,
                dose: Dose::new(window, p.dose),
                updated_agent: Some(agent(p.axis)),
                quantile: Some(p.quantile),
                capped: p.capped,
            })
            .collect();
        Recommendation { cohort: alloc.cohort, alpha: alloc.alpha, patients }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub rho00: f64,
    pub rho01: f64,
    pub rho10: f64,
    pub beta3: f64,
    pub link: LinkKind,
    pub theta: f64,
}

impl From<&MtdCurveEstimate> for Estimate {
    fn from(e: &MtdCurveEstimate) -> Self {
        Estimate {
            rho00: e.rho00_hat,
            rho01: e.rho01_hat,
            rho10: e.rho10_hat,
            beta3: e.beta3_hat,
            link: e.link,
            theta: e.theta,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CreateTrialResponse {
    pub trial_id: String,
    pub revision: u64,
    pub status: TrialStatus,
    pub recommendation: Recommendation,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CohortOutcome {
    NextCohort,
    StoppedForSafety,
    Completed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordOutcomesResponse {
    pub trial_id: String,
    pub revision: u64,
    pub status: TrialStatus,
    pub outcome: CohortOutcome,
    pub current_alpha: f64,
    pub recommendation: Option<Recommendation>,
    /// Posterior-median curve; present once the trial has ended.
    pub estimate: Option<Estimate>,
    /// Posterior probability that the DLT rate at the minimum combination
    /// exceeds θ + ξ1.
    pub min_dose_exceedance: f64,
    pub acceptance_rates: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatientView {
    pub patient: u32,
    pub cohort: u32,
    pub dose: Dose,
    pub dlt: u8,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialView {
    pub trial_id: String,
    pub revision: u64,
    pub status: TrialStatus,
    pub current_alpha: f64,
    pub next_cohort: u32,
    pub window: DoseWindow,
    pub design: DesignConfig,
    pub prior: PriorSpec,
    pub sampler: SamplerConfig,
    pub working_link: LinkKind,
    pub interaction: bool,
    pub seed: u64,
    pub transcript: Vec<PatientView>,
    pub pending: Option<Recommendation>,
    pub estimate: Option<Estimate>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaBands {
    pub q25: f64,
    pub q50: f64,
    pub q75: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    /// Standardized x and the estimated curve's y, clipped into [0, 1].
    pub standardized: Point,
    pub raw: Point,
    /// Whether the unclipped curve value lies inside the dose window.
    pub inside: bool,
    /// Posterior quantiles of the clipped MTD of agent B given x.
    pub bands: GammaBands,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MtdCurveResponse {
    pub trial_id: String,
    pub revision: u64,
    pub estimate: Estimate,
    pub points: Vec<CurvePoint>,
    /// Non-binding allocation of the pending cohort at the requested α.
    pub preview: Option<Recommendation>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SafetyResponse {
    pub trial_id: String,
    pub revision: u64,
    pub status: TrialStatus,
    pub evaluable_patients: usize,
    pub stop_n1: usize,
    pub threshold: f64,
    pub stop_xi2: f64,
    /// `None` before the first posterior refresh.
    pub exceedance_probability: Option<f64>,
    /// Whether the rule is evaluated at the current sample size.
    pub rule_active: bool,
    pub rule_triggered: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldError {
    pub path: String,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fields: Vec<FieldError>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub current_revision: Option<u64>,
}
