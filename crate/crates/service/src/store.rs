//! On-disk trial records and their in-memory replay.
//!
//! A trial is persisted as its configuration plus the resolved transcript.
//! Posterior draws are never stored: replaying the transcript with the
//! trial's seed regenerates them, and with them the pending recommendation.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use combo_ewoc::design::{
    advance, estimate_mtd_curve, minimum_dose_exceedance, refresh_posterior, Advance, Allocation,
    MtdCurveEstimate, TrialState, TrialStatus,
};
use combo_ewoc::{
    DesignConfig, DoseWindow, DosePair, LinkKind, PosteriorDraws, PriorSpec, SamplerConfig,
    TrialData,
};
use serde::{Deserialize, Serialize};

use crate::wire::{CreateTrialRequest, Dose, PatientView, Recommendation, TrialView};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoredPatient {
    pub index: u32,
    pub cohort: u32,
    pub x: f64,
    pub y: f64,
    pub dlt: u8,
}

/// The response to the most recent accepted cohort submission, kept so a
/// retried request with the same idempotency key gets the same answer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoredMutation {
    pub key: String,
    pub response: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoredTrial {
    pub trial_id: String,
    pub idempotency_key: Option<String>,
    pub window: DoseWindow,
    pub design: DesignConfig,
    pub prior: PriorSpec,
    pub sampler: SamplerConfig,
    pub working_link: LinkKind,
    pub interaction: bool,
    pub seed: u64,
    pub revision: u64,
    pub transcript: Vec<StoredPatient>,
    pub last_mutation: Option<StoredMutation>,
}

impl StoredTrial {
    pub fn new(trial_id: String, seed: u64, req: &CreateTrialRequest) -> Self {
        StoredTrial {
            trial_id,
            idempotency_key: req.idempotency_key.clone(),
            window: req.window,
            design: req.design,
            prior: req.prior,
            sampler: req.sampler,
            working_link: req.working_link,
            interaction: req.interaction,
            seed,
            revision: 1,
            transcript: Vec::new(),
            last_mutation: None,
        }
    }

    pub fn trial_data(&self) -> combo_ewoc::Result<TrialData> {
        TrialData::from_outcomes(
            self.design.theta,
            self.transcript.iter().map(|p| (DosePair { x: p.x, y: p.y }, p.dlt)),
        )
    }
}

/// Immutable view of a trial at one revision. Reads clone the `Arc` and
/// never block on a posterior refresh.
#[derive(Clone, Debug)]
pub struct Snapshot {
    pub stored: StoredTrial,
    pub state: TrialState,
    pub draws: Option<Arc<PosteriorDraws>>,
    /// How the pending cohort was allocated; `None` for cohort 1 and once
    /// the trial has ended.
    pub allocation: Option<Allocation>,
}

impl Snapshot {
    /// Rebuilds state, draws and the pending recommendation from the
    /// stored transcript.
    pub fn replay(stored: StoredTrial) -> combo_ewoc::Result<Snapshot> {
        let data = stored.trial_data()?;
        let mut state = TrialState::from_transcript(data, &stored.design)?;
        if state.data.is_empty() {
            state.first_cohort()?;
            return Ok(Snapshot { stored, state, draws: None, allocation: None });
        }
        let draws = refresh_posterior(
            &state.data,
            &stored.prior,
            &stored.sampler,
            stored.working_link,
            stored.interaction,
            stored.seed,
        )?;
        let allocation = match advance(&mut state, &draws, &stored.design)? {
            Advance::Next(a) => Some(a),
            Advance::Stopped | Advance::Completed => None,
        };
        Ok(Snapshot { stored, state, draws: Some(Arc::new(draws)), allocation })
    }

    /// Applies a cohort's outcomes and returns the successor snapshot plus
    /// what the design decided. `self` is left untouched.
    pub fn apply(&self, outcomes: [u8; 2]) -> combo_ewoc::Result<(Snapshot, Advance)> {
        let mut state = self.state.clone();
        state.record_outcomes(outcomes, &self.stored.design)?;
        let s = &self.stored;
        let draws =
            refresh_posterior(&state.data, &s.prior, &s.sampler, s.working_link, s.interaction, s.seed)?;
        let step = advance(&mut state, &draws, &s.design)?;
        let mut stored = s.clone();
        stored.revision += 1;
        stored.transcript = state
            .data
            .records()
            .iter()
            .map(|r| StoredPatient { index: r.index, cohort: r.cohort, x: r.dose.x, y: r.dose.y, dlt: r.dlt })
            .collect();
        let allocation = match step {
            Advance::Next(a) => Some(a),
            _ => None,
        };
        Ok((Snapshot { stored, state, draws: Some(Arc::new(draws)), allocation }, step))
    }

    pub fn pending_recommendation(&self) -> Option<Recommendation> {
        let window = &self.stored.window;
        match (&self.state.pending_doses, &self.allocation) {
            (None, _) => None,
            (Some(_), Some(a)) => Some(Recommendation::from_allocation(window, a)),
            (Some(_), None) => Some(Recommendation::first_cohort(window, self.state.current_alpha)),
        }
    }

    pub fn estimate(&self) -> Option<MtdCurveEstimate> {
        let draws = self.draws.as_ref()?;
        estimate_mtd_curve(draws, self.stored.design.theta).ok()
    }

    pub fn exceedance(&self) -> Option<f64> {
        self.draws.as_ref().map(|d| minimum_dose_exceedance(d, &self.stored.design))
    }

    pub fn view(&self) -> TrialView {
        let s = &self.stored;
        let ended = self.state.status != TrialStatus::Enrolling;
        TrialView {
            trial_id: s.trial_id.clone(),
            revision: s.revision,
            status: self.state.status,
            current_alpha: self.state.current_alpha,
            next_cohort: self.state.next_cohort_index,
            window: s.window,
            design: s.design,
            prior: s.prior,
            sampler: s.sampler,
            working_link: s.working_link,
            interaction: s.interaction,
            seed: s.seed,
            transcript: self
                .state
                .data
                .records()
                .iter()
                .map(|r| PatientView {
                    patient: r.index,
                    cohort: r.cohort,
                    dose: Dose::new(&s.window, r.dose),
                    dlt: r.dlt,
                })
                .collect(),
            pending: self.pending_recommendation(),
            estimate: if ended { self.estimate().as_ref().map(Into::into) } else { None },
        }
    }
}

/// Directory of `<trial_id>.json` files.
#[derive(Clone, Debug)]
pub struct TrialStore {
    dir: PathBuf,
}

impl TrialStore {
    pub fn open(dir: impl Into<PathBuf>) -> std::io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(TrialStore { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path(&self, trial_id: &str) -> PathBuf {
        self.dir.join(format!("{trial_id}.json"))
    }

    /// Writes atomically: a crash leaves either the old or the new record.
    pub fn save(&self, trial: &StoredTrial) -> std::io::Result<()> {
        let tmp = self.dir.join(format!(".{}.json.tmp", trial.trial_id));
        {
            let mut f = fs::File::create(&tmp)?;
            serde_json::to_writer_pretty(&mut f, trial)?;
            f.write_all(b"\n")?;
            f.sync_all()?;
        }
        fs::rename(&tmp, self.path(&trial.trial_id))
    }

    pub fn load_all(&self) -> std::io::Result<Vec<StoredTrial>> {
        let mut out = Vec::new();
        for entry in fs::read_dir(&self.dir)? {
            let path = entry?.path();
            let is_record = path.extension().is_some_and(|e| e == "json")
                && !path.file_name().is_some_and(|n| n.to_string_lossy().starts_with('.'));
            if !is_record {
                continue;
            }
            let text = fs::read_to_string(&path)?;
            let trial: StoredTrial = serde_json::from_str(&text).map_err(|e| {
                std::io::Error::new(
                    std::io::ErrorKind::InvalidData,
                    format!("{}: {e}", path.display()),
                )
            })?;
            out.push(trial);
        }
        out.sort_by(|a, b| a.trial_id.cmp(&b.trial_id));
        Ok(out)
    }
}
