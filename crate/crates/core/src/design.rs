//! Cohort-of-two conditional escalation with overdose control.
//!
//! Cohort 1 receives the minimum combination. In every later cohort each of
//! the two patients inherits one coordinate from the patient in the same
//! position of the previous cohort and receives, for the other agent, the
//! α-quantile of that agent's posterior conditional MTD. Which coordinate is
//! inherited alternates with cohort parity:
//!
//! | cohort | first patient          | second patient         |
//! |--------|------------------------|------------------------|
//! | even   | new x, inherited y     | inherited x, new y     |
//! | odd    | inherited x, new y     | new x, inherited y     |
//!
//! Escalation of any coordinate over its predecessor is capped; de-escalation
//! is not.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::link::LinkKind;
use crate::model::{mtd_curve_y, DosePair, ModelParams, TrialData};
use crate::posterior::{
    posterior_quantile_gamma, quantile, sample_posterior, GammaAxis, PosteriorDraws, PriorSpec,
    SamplerConfig,
};
use crate::rng::{derive_seed, mix64};
use crate::scenario::{draw_outcome, TruthModel};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DesignConfig {
    /// Target DLT probability θ.
    pub theta: f64,
    /// Total sample size; even.
    pub n_max: usize,
    pub alpha_start: f64,
    pub alpha_increment: f64,
    pub alpha_cap: f64,
    /// Largest allowed escalation of either agent between successive
    /// assignments, as a fraction of the standardized range.
    pub escalation_step_cap: f64,
    /// Stopping rule is evaluated once this many patients are evaluable.
    pub stop_n1: usize,
    pub stop_xi1: f64,
    pub stop_xi2: f64,
}

impl Default for DesignConfig {
    fn default() -> Self {
        DesignConfig {
            theta: 0.33,
            n_max: 40,
            alpha_start: 0.25,
            alpha_increment: 0.05,
            alpha_cap: 0.5,
            escalation_step_cap: 0.20,
            stop_n1: 10,
            stop_xi1: 0.05,
            stop_xi2: 0.80,
        }
    }
}

impl DesignConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return fail(format!("theta must lie in (0,1), got {}", self.theta));
        }
        if self.n_max < 2 || self.n_max % 2 != 0 {
            return fail(format!("n_max must be a positive even number, got {}", self.n_max));
        }
        if !(self.alpha_start > 0.0 && self.alpha_start <= self.alpha_cap && self.alpha_cap <= 0.5)
        {
            return fail(format!(
                "need 0 < alpha_start <= alpha_cap <= 0.5, got {} and {}",
                self.alpha_start, self.alpha_cap
            ));
        }
        if !(self.alpha_increment >= 0.0 && self.alpha_increment.is_finite()) {
            return fail(format!("alpha_increment must be >= 0, got {}", self.alpha_increment));
        }
        if !(self.escalation_step_cap > 0.0 && self.escalation_step_cap <= 1.0) {
            return fail(format!(
                "escalation_step_cap must lie in (0,1], got {}",
                self.escalation_step_cap
            ));
        }
        if self.stop_n1 == 0 || self.stop_n1 > self.n_max {
            return fail(format!("stop_n1 must lie in 1..=n_max, got {}", self.stop_n1));
        }
        if !(self.stop_xi1 >= 0.0 && self.stop_xi1.is_finite()) {
            return fail(format!("stop_xi1 must be >= 0, got {}", self.stop_xi1));
        }
        if !(self.stop_xi2 > 0.0 && self.stop_xi2 < 1.0) {
            return fail(format!("stop_xi2 must lie in (0,1), got {}", self.stop_xi2));
        }
        Ok(())
    }

    /// Feasibility bound used after `completed_cohorts` cohorts have been
    /// resolved. Rounded to 12 decimals so the schedule hits 0.3, 0.35, ...
    /// exactly rather than 0.30000000000000004.
    pub fn alpha_after(&self, completed_cohorts: usize) -> f64 {
        let steps = completed_cohorts.saturating_sub(1) as f64;
        let a = ((self.alpha_start + self.alpha_increment * steps) * 1e12).round() / 1e12;
        a.min(self.alpha_cap)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    Enrolling,
    StoppedForSafety,
    Completed,
}

impl TrialStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            TrialStatus::Enrolling => "enrolling",
            TrialStatus::StoppedForSafety => "stopped_for_safety",
            TrialStatus::Completed => "completed",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialState {
    pub data: TrialData,
    pub next_cohort_index: u32,
    pub current_alpha: f64,
    pub status: TrialStatus,
    pub pending_doses: Option<[DosePair; 2]>,
}

impl TrialState {
    pub fn new(config: &DesignConfig) -> Result<Self> {
        config.validate()?;
        Ok(TrialState {
            data: TrialData::new(config.theta)?,
            next_cohort_index: 1,
            current_alpha: config.alpha_start,
            status: TrialStatus::Enrolling,
            pending_doses: None,
        })
    }

    /// Rebuilds the state after the given transcript has been resolved.
    /// The transcript must consist of whole cohorts.
    pub fn from_transcript(data: TrialData, config: &DesignConfig) -> Result<Self> {
        config.validate()?;
        if data.len() % 2 != 0 {
            return Err(Error::State(format!(
                "transcript has {} patients; cohorts come in pairs",
                data.len()
            )));
        }
        if data.len() > config.n_max {
            return Err(Error::State(format!(
                "transcript has {} patients but n_max is {}",
                data.len(),
                config.n_max
            )));
        }
        let completed = data.len() / 2;
        let status =
            if data.len() == config.n_max { TrialStatus::Completed } else { TrialStatus::Enrolling };
        Ok(TrialState {
            next_cohort_index: completed as u32 + 1,
            current_alpha: config.alpha_after(completed),
            status,
            pending_doses: None,
            data,
        })
    }

    pub fn completed_cohorts(&self) -> usize {
        self.data.len() / 2
    }

    fn ensure_enrolling(&self) -> Result<()> {
        if self.status != TrialStatus::Enrolling {
            return Err(Error::State(format!("trial is {}", self.status.as_str())));
        }
        Ok(())
    }

    /// Assigns the minimum combination to both patients of cohort 1.
    pub fn first_cohort(&mut self) -> Result<[DosePair; 2]> {
        self.ensure_enrolling()?;
        if !self.data.is_empty() || self.pending_doses.is_some() {
            return Err(Error::State("first cohort has already been assigned".into()));
        }
        let doses = [DosePair::MIN, DosePair::MIN];
        self.pending_doses = Some(doses);
        self.next_cohort_index = 2;
        Ok(doses)
    }

    /// Records the resolved DLT outcomes of the pending cohort.
    pub fn record_outcomes(&mut self, outcomes: [u8; 2], config: &DesignConfig) -> Result<()> {
        self.ensure_enrolling()?;
        let doses = self
            .pending_doses
            .ok_or_else(|| Error::State("no cohort is awaiting outcomes".into()))?;
        if outcomes.iter().any(|&t| t > 1) {
            return Err(Error::Domain(format!("outcomes must be 0 or 1, got {outcomes:?}")));
        }
        for (dose, t) in doses.into_iter().zip(outcomes) {
            self.data.push(dose, t)?;
        }
        self.pending_doses = None;
        self.current_alpha = config.alpha_after(self.completed_cohorts());
        if self.data.len() >= config.n_max {
            self.status = TrialStatus::Completed;
        }
        Ok(())
    }

    /// Whether the safety rule applies before enrolling the next cohort.
    pub fn stopping_check_due(&self, config: &DesignConfig) -> bool {
        self.status == TrialStatus::Enrolling
            && self.pending_doses.is_none()
            && self.data.len() >= config.stop_n1
            && self.data.len() < config.n_max
    }

    pub fn mark_stopped(&mut self) -> Result<()> {
        self.ensure_enrolling()?;
        self.status = TrialStatus::StoppedForSafety;
        self.pending_doses = None;
        Ok(())
    }
}

/// How one patient's dose was chosen.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatientAllocation {
    pub dose: DosePair,
    /// The agent whose dose was updated.
    pub axis: GammaAxis,
    /// Dose of the other agent, inherited from the predecessor.
    pub conditioning_dose: f64,
    /// α-quantile of the clipped conditional MTD.
    pub quantile: f64,
    /// The predecessor's coordinate on the updated axis.
    pub previous: f64,
    pub capped: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub cohort: u32,
    pub alpha: f64,
    pub patients: [PatientAllocation; 2],
}

impl Allocation {
    pub fn doses(&self) -> [DosePair; 2] {
        [self.patients[0].dose, self.patients[1].dose]
    }
}

/// Computes the next cohort's doses from a transcript of whole cohorts,
/// using feasibility bound `alpha`. Does not consult or modify trial status.
pub fn allocate_cohort(
    data: &TrialData,
    draws: &PosteriorDraws,
    alpha: f64,
    step_cap: f64,
) -> Result<Allocation> {
    let k = data.len();
    if k < 2 || k % 2 != 0 {
        return Err(Error::State(format!(
            "allocation needs whole resolved cohorts, transcript has {k} patients"
        )));
    }
    let theta = data.target_theta();
    let records = data.records();
    let predecessors = [records[k - 2].dose, records[k - 1].dose];
    let cohort = (k / 2 + 1) as u32;
    let even = cohort % 2 == 0;

    let allocate = |prev: DosePair, axis: GammaAxis| -> Result<PatientAllocation> {
        let (conditioning, previous) = match axis {
            GammaAxis::AgivenB => (prev.y, prev.x),
            GammaAxis::BgivenA => (prev.x, prev.y),
        };
        let q = posterior_quantile_gamma(draws, theta, axis, conditioning, alpha)?;
        let ceiling = previous + step_cap;
        let capped = q > ceiling;
        let value = q.min(ceiling).clamp(0.0, 1.0);
        let dose = match axis {
            GammaAxis::AgivenB => DosePair { x: value, y: conditioning },
            GammaAxis::BgivenA => DosePair { x: conditioning, y: value },
        };
        Ok(PatientAllocation { dose, axis, conditioning_dose: conditioning, quantile: q, previous, capped })
    };

    let (axis_first, axis_second) = if even {
        (GammaAxis::AgivenB, GammaAxis::BgivenA)
    } else {
        (GammaAxis::BgivenA, GammaAxis::AgivenB)
    };
    Ok(Allocation {
        cohort,
        alpha,
        patients: [allocate(predecessors[0], axis_first)?, allocate(predecessors[1], axis_second)?],
    })
}

/// Assigns the next cohort and marks it pending on `state`.
pub fn next_cohort_doses(
    state: &mut TrialState,
    draws: &PosteriorDraws,
    config: &DesignConfig,
) -> Result<Allocation> {
    state.ensure_enrolling()?;
    if state.pending_doses.is_some() {
        return Err(Error::State("outcomes of the pending cohort are unresolved".into()));
    }
    let alloc =
        allocate_cohort(&state.data, draws, state.current_alpha, config.escalation_step_cap)?;
    state.pending_doses = Some(alloc.doses());
    state.next_cohort_index = alloc.cohort + 1;
    Ok(alloc)
}

/// Posterior probability that the DLT rate at the minimum combination
/// exceeds `θ + ξ1`.
pub fn minimum_dose_exceedance(draws: &PosteriorDraws, config: &DesignConfig) -> f64 {
    let threshold = config.theta + config.stop_xi1;
    let above = draws.draws().iter().filter(|d| d.rho00 > threshold).count();
    above as f64 / draws.len() as f64
}

/// True when enrollment must be suspended for safety.
pub fn check_stopping(
    data: &TrialData,
    draws: &PosteriorDraws,
    config: &DesignConfig,
) -> Result<bool> {
    if data.len() < config.stop_n1 {
        return Err(Error::State(format!(
            "stopping rule applies after {} evaluable patients, have {}",
            config.stop_n1,
            data.len()
        )));
    }
    Ok(minimum_dose_exceedance(draws, config) > config.stop_xi2)
}

/// What happens after a cohort's outcomes are in and the posterior is
/// refreshed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Advance {
    Next(Allocation),
    Stopped,
    Completed,
}

/// Applies, in order, the sample-size limit, the stopping rule and the
/// allocation of the next cohort.
pub fn advance(
    state: &mut TrialState,
    draws: &PosteriorDraws,
    config: &DesignConfig,
) -> Result<Advance> {
    if state.status == TrialStatus::Completed {
        return Ok(Advance::Completed);
    }
    if state.stopping_check_due(config) && check_stopping(&state.data, draws, config)? {
        state.mark_stopped()?;
        return Ok(Advance::Stopped);
    }
    Ok(Advance::Next(next_cohort_doses(state, draws, config)?))
}

/// Posterior-median estimate of the MTD curve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MtdCurveEstimate {
    pub rho00_hat: f64,
    pub rho01_hat: f64,
    pub rho10_hat: f64,
    pub beta3_hat: f64,
    pub link: LinkKind,
    pub theta: f64,
}

impl MtdCurveEstimate {
    /// Builds an estimate from point values, pulling ρ00 below
    /// `min(ρ01, ρ10)` when it is not already.
    pub fn from_point(
        rho00: f64,
        rho01: f64,
        rho10: f64,
        beta3: f64,
        link: LinkKind,
        theta: f64,
    ) -> Self {
        let m = rho01.min(rho10);
        let rho00 = if rho00 < m { rho00 } else { 0.999 * m };
        MtdCurveEstimate {
            rho00_hat: rho00,
            rho01_hat: rho01,
            rho10_hat: rho10,
            beta3_hat: beta3.max(0.0),
            link,
            theta,
        }
    }

    pub fn params(&self) -> ModelParams {
        ModelParams {
            rho00: self.rho00_hat,
            rho01: self.rho01_hat,
            rho10: self.rho10_hat,
            beta3: self.beta3_hat,
            link: self.link,
            interaction_enabled: self.beta3_hat != 0.0,
        }
    }

    /// Unclipped y on the estimated curve at standardized `x`.
    pub fn y_at(&self, x: f64) -> f64 {
        mtd_curve_y(&self.params(), self.theta, x)
    }
}

/// Marginal posterior medians.
pub fn estimate_mtd_curve(draws: &PosteriorDraws, theta: f64) -> Result<MtdCurveEstimate> {
    if draws.is_empty() {
        return Err(Error::State("no posterior draws".into()));
    }
    let median = |f: fn(&ModelParams) -> f64| quantile(&draws.column(f), 0.5);
    Ok(MtdCurveEstimate::from_point(
        median(|d| d.rho00),
        median(|d| d.rho01),
        median(|d| d.rho10),
        median(|d| d.beta3),
        draws.draws()[0].link,
        theta,
    ))
}

/// Sampler seed for the posterior refresh after `n_records` patients of the
/// trial identified by `trial_seed`.
pub fn refresh_seed(trial_seed: u64, n_records: usize) -> u64 {
    derive_seed(mix64(trial_seed), n_records as u64)
}

/// Posterior draws for the current transcript, seeded per trial and size.
pub fn refresh_posterior(
    data: &TrialData,
    prior: &PriorSpec,
    sampler: &SamplerConfig,
    link: LinkKind,
    interaction: bool,
    trial_seed: u64,
) -> Result<PosteriorDraws> {
    let cfg = sampler.with_seed(refresh_seed(trial_seed, data.len()));
    sample_posterior(data, prior, &cfg, link, interaction)
}

/// Everything a simulated trial produces.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialRun {
    pub data: TrialData,
    pub estimate: MtdCurveEstimate,
    pub status: TrialStatus,
    pub last_cohort_doses: [DosePair; 2],
    pub allocations: Vec<Allocation>,
}

/// Working-model settings shared by every trial of an experiment.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WorkingModel<'a> {
    pub config: &'a DesignConfig,
    pub prior: &'a PriorSpec,
    pub sampler: &'a SamplerConfig,
    pub link: LinkKind,
    pub interaction: bool,
}

/// Simulates one trial against `truth`. Deterministic given `seed`.
pub fn run_trial(
    truth: &TruthModel,
    config: &DesignConfig,
    prior: &PriorSpec,
    sampler: &SamplerConfig,
    working_link: LinkKind,
    interaction: bool,
    seed: u64,
) -> Result<TrialRun> {
    let model = WorkingModel { config, prior, sampler, link: working_link, interaction };
    run_trial_observed(truth, &model, seed, |_, _| {})
}

/// [`run_trial`] with a callback invoked at every adaptive allocation with
/// the draws that produced it.
pub fn run_trial_observed(
    truth: &TruthModel,
    model: &WorkingModel<'_>,
    seed: u64,
    mut observer: impl FnMut(&PosteriorDraws, &Allocation),
) -> Result<TrialRun> {
    let config = model.config;
    let mut state = TrialState::new(config)?;
    let mut outcome_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0));
    let mut doses = state.first_cohort()?;
    let mut allocations = Vec::new();

    let draws = loop {
        let outcomes = doses.map(|d| draw_outcome(truth, d, &mut outcome_rng));
        state.record_outcomes(outcomes, config)?;
        let draws = refresh_posterior(
            &state.data,
            model.prior,
            model.sampler,
            model.link,
            model.interaction,
            seed,
        )?;
        match advance(&mut state, &draws, config)? {
            Advance::Next(alloc) => {
                observer(&draws, &alloc);
                allocations.push(alloc);
                doses = alloc.doses();
            }
            Advance::Completed | Advance::Stopped => break draws,
        }
    };

    Ok(TrialRun {
        estimate: estimate_mtd_curve(&draws, config.theta)?,
        status: state.status,
        last_cohort_doses: doses,
        allocations,
        data: state.data,
    })
}
