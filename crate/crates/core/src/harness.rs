//! Replicated-trial experiments, their persisted reports and comparisons.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::{run_trial, DesignConfig, MtdCurveEstimate, TrialStatus};
use crate::error::{Error, Result};
use crate::link::LinkKind;
use crate::metrics::{
    aggregated_curve, last_dose_cloud, safety_summary_from_counts, LastDose, PointwiseCurveStats,
    ReplicateResult, SafetySummary, TrialCounts, DEFAULT_CURVE_DISCRETIZATION, DEFAULT_TRUE_GRID,
};
use crate::model::DosePair;
use crate::posterior::{PriorSpec, SamplerConfig};
use crate::rng::derive_seed;
use crate::scenario::{true_curve_grid, TruthModel};

pub const CONFIG_FILE: &str = "config.json";
pub const SAFETY_FILE: &str = "safety.csv";
pub const BIAS_FILE: &str = "bias.csv";
pub const SELECTION_FILE: &str = "selection.csv";
pub const AGGREGATED_FILE: &str = "aggregated_curve.csv";
pub const LAST_DOSES_FILE: &str = "last_doses.csv";

fn default_true_grid() -> usize {
    DEFAULT_TRUE_GRID
}

fn default_discretization() -> usize {
    DEFAULT_CURVE_DISCRETIZATION
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Free-form scenario name, e.g. `s1` or a file stem.
    pub scenario_label: String,
    pub scenario: TruthModel,
    pub working_link: LinkKind,
    pub interaction: bool,
    pub design: DesignConfig,
    pub prior: PriorSpec,
    /// The `seed` field is ignored; every refresh derives its own.
    pub sampler: SamplerConfig,
    pub replicates: usize,
    pub base_seed: u64,
    pub tolerance_p: f64,
    #[serde(default = "default_true_grid")]
    pub true_grid_points: usize,
    #[serde(default = "default_discretization")]
    pub curve_discretization: usize,
    /// Where results are written. Not echoed into `config.json` so that runs
    /// written to different directories stay byte-identical.
    #[serde(skip)]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Defaults for everything but the truth and working model.
    pub fn new(scenario_label: impl Into<String>, scenario: TruthModel) -> Self {
        ExperimentConfig {
            scenario_label: scenario_label.into(),
            scenario,
            working_link: LinkKind::Logistic,
            interaction: true,
            design: DesignConfig::default(),
            prior: PriorSpec::default(),
            sampler: SamplerConfig::default(),
            replicates: 200,
            base_seed: 0,
            tolerance_p: 0.1,
            true_grid_points: DEFAULT_TRUE_GRID,
            curve_discretization: DEFAULT_CURVE_DISCRETIZATION,
            output_dir: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.design.validate()?;
        self.prior.validate()?;
        self.sampler.validate()?;
        if self.replicates == 0 {
            return Err(Error::Config("replicates must be positive".into()));
        }
        if !(self.tolerance_p > 0.0 && self.tolerance_p < 1.0) {
            return Err(Error::Config(format!(
                "tolerance_p must lie in (0,1), got {}",
                self.tolerance_p
            )));
        }
        if self.true_grid_points < 2 || self.curve_discretization < 2 {
            return Err(Error::Config("curve grids need at least two points".into()));
        }
        Ok(())
    }

    pub fn replicate_seed(&self, replicate: usize) -> u64 {
        derive_seed(self.base_seed, replicate as u64)
    }

    /// Row label in the style of a safety table.
    pub fn model_label(&self) -> String {
        let truth = match &self.scenario {
            TruthModel::ReparamLink(p) => p.link.name(),
            TruthModel::SixParameter(_) => "six-parameter",
            TruthModel::Constant { .. } => "constant",
        };
        let inter = if self.interaction { "interaction" } else { "no-interaction" };
        format!("truth={truth} working={} {inter}", self.working_link)
    }
}

/// One row of `safety.csv`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialRow {
    pub replicate: usize,
    pub n_treated: usize,
    pub dlt_count: usize,
    pub status: TrialStatus,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OpCharReport {
    pub config: ExperimentConfig,
    pub safety: SafetySummary,
    pub trials: Vec<TrialRow>,
    pub curve: PointwiseCurveStats,
    pub aggregated: MtdCurveEstimate,
    pub last_doses: Vec<LastDose>,
}

/// Runs replicate `replicate` of an experiment.
pub fn run_replicate(config: &ExperimentConfig, replicate: usize) -> Result<ReplicateResult> {
    let run = run_trial(
        &config.scenario,
        &config.design,
        &config.prior,
        &config.sampler,
        config.working_link,
        config.interaction,
        config.replicate_seed(replicate),
    )?;
    Ok(ReplicateResult {
        replicate,
        dlt_count: run.data.dlt_count(),
        transcript: run.data,
        estimate: run.estimate,
        status: run.status,
        last_cohort_doses: run.last_cohort_doses,
    })
}

/// Runs all replicates (in parallel, results ordered by replicate index),
/// computes operating characteristics and, when `output_dir` is set, writes
/// the report there.
pub fn run_experiment(config: &ExperimentConfig) -> Result<OpCharReport> {
    config.validate()?;
    let grid = true_curve_grid(&config.scenario, config.design.theta, config.true_grid_points)?;
    if let Some(dir) = &config.output_dir {
        prepare_output_dir(dir)?;
    }

    let results: Vec<ReplicateResult> = (0..config.replicates)
        .into_par_iter()
        .map(|j| run_replicate(config, j))
        .collect::<Result<_>>()?;

    let report = build_report(config, &results, grid)?;
    if let Some(dir) = &config.output_dir {
        report.write(dir)?;
    }
    Ok(report)
}

/// Computes the report from finished replicates.
pub fn build_report(
    config: &ExperimentConfig,
    results: &[ReplicateResult],
    grid: Vec<DosePair>,
) -> Result<OpCharReport> {
    let trials: Vec<TrialRow> = results
        .iter()
        .map(|r| TrialRow {
            replicate: r.replicate,
            n_treated: r.n_treated(),
            dlt_count: r.dlt_count,
            status: r.status,
        })
        .collect();
    let counts: Vec<TrialCounts> = trials
        .iter()
        .map(|t| TrialCounts { n_treated: t.n_treated, dlt_count: t.dlt_count })
        .collect();
    Ok(OpCharReport {
        config: config.clone(),
        safety: safety_summary_from_counts(&counts, config.design.theta)?,
        trials,
        curve: PointwiseCurveStats::compute(
            results,
            grid,
            config.tolerance_p,
            config.curve_discretization,
        )?,
        aggregated: aggregated_curve(results)?,
        last_doses: last_dose_cloud(results)?,
    })
}

fn prepare_output_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    // Fail on an unwritable directory before any simulation work.
    let probe = dir.join(".write-probe");
    fs::write(&probe, b"")?;
    fs::remove_file(&probe)?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct CurveRow {
    grid_x: f64,
    grid_y: f64,
    value: f64,
}

#[derive(Serialize, Deserialize)]
struct AggregatedRow {
    rho00: f64,
    rho01: f64,
    rho10: f64,
    beta3: f64,
    link: LinkKind,
    theta: f64,
}

fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

impl OpCharReport {
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut json = serde_json::to_string_pretty(&self.config)?;
        json.push('\n');
        fs::write(dir.join(CONFIG_FILE), json)?;
        write_csv(&dir.join(SAFETY_FILE), &self.trials)?;
        let curve_rows = |values: &[f64]| -> Vec<CurveRow> {
            self.curve
                .grid
                .iter()
                .zip(values)
                .map(|(p, v)| CurveRow { grid_x: p.x, grid_y: p.y, value: *v })
                .collect()
        };
        write_csv(&dir.join(BIAS_FILE), curve_rows(&self.curve.bias))?;
        write_csv(&dir.join(SELECTION_FILE), curve_rows(&self.curve.percent_selection))?;
        let a = &self.aggregated;
        write_csv(
            &dir.join(AGGREGATED_FILE),
            [AggregatedRow {
                rho00: a.rho00_hat,
                rho01: a.rho01_hat,
                rho10: a.rho10_hat,
                beta3: a.beta3_hat,
                link: a.link,
                theta: a.theta,
            }],
        )?;
        write_csv(&dir.join(LAST_DOSES_FILE), &self.last_doses)?;
        Ok(())
    }

    /// Reads a report previously written by [`OpCharReport::write`].
    pub fn load(dir: &Path) -> Result<Self> {
        let mut config: ExperimentConfig =
            serde_json::from_str(&fs::read_to_string(dir.join(CONFIG_FILE))?)?;
        config.output_dir = Some(dir.to_path_buf());
        let trials: Vec<TrialRow> = read_csv(&dir.join(SAFETY_FILE))?;
        let counts: Vec<TrialCounts> = trials
            .iter()
            .map(|t| TrialCounts { n_treated: t.n_treated, dlt_count: t.dlt_count })
            .collect();
        let bias: Vec<CurveRow> = read_csv(&dir.join(BIAS_FILE))?;
        let selection: Vec<CurveRow> = read_csv(&dir.join(SELECTION_FILE))?;
        if bias.len() != selection.len() {
            return Err(Error::Argument(format!(
                "{BIAS_FILE} and {SELECTION_FILE} have different lengths"
            )));
        }
        let agg: Vec<AggregatedRow> = read_csv(&dir.join(AGGREGATED_FILE))?;
        let agg = agg
            .into_iter()
            .next()
            .ok_or_else(|| Error::Argument(format!("{AGGREGATED_FILE} is empty")))?;
        Ok(OpCharReport {
            safety: safety_summary_from_counts(&counts, config.design.theta)?,
            trials,
            curve: PointwiseCurveStats {
                grid: bias.iter().map(|r| DosePair { x: r.grid_x, y: r.grid_y }).collect(),
                bias: bias.iter().map(|r| r.value).collect(),
                percent_selection: selection.iter().map(|r| r.value).collect(),
                tolerance_p: config.tolerance_p,
            },
            aggregated: MtdCurveEstimate {
                rho00_hat: agg.rho00,
                rho01_hat: agg.rho01,
                rho10_hat: agg.rho10,
                beta3_hat: agg.beta3,
                link: agg.link,
                theta: agg.theta,
            },
            last_doses: read_csv(&dir.join(LAST_DOSES_FILE))?,
            config,
        })
    }

    /// A one-line safety summary.
    pub fn table_row(&self) -> String {
        format!(
            "{:<6} {:<48} {:>8.2} {:>8.2} {:>8.2}",
            self.config.scenario_label,
            self.config.model_label(),
            self.safety.avg_pct_dlt,
            self.safety.pct_trials_over_005,
            self.safety.pct_trials_over_010
        )
    }
}

/// Column header matching [`OpCharReport::table_row`].
pub fn table_header() -> String {
    format!(
        "{:<6} {:<48} {:>8} {:>8} {:>8}",
        "scen", "model", "%DLT", ">th+.05", ">th+.10"
    )
}

/// Element-wise `b − a` differences between two reports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub safety_a: SafetySummary,
    pub safety_b: SafetySummary,
    pub safety_delta: SafetySummary,
    pub grid: Vec<DosePair>,
    pub bias_delta: Vec<f64>,
    pub selection_delta: Vec<f64>,
}

pub fn compare_experiments(a: &OpCharReport, b: &OpCharReport) -> Result<Comparison> {
    if a.config.scenario != b.config.scenario {
        return Err(Error::Argument("reports were run on different scenarios".into()));
    }
    if a.config.design.theta != b.config.design.theta {
        return Err(Error::Argument("reports use different target theta".into()));
    }
    let same_grid = a.curve.grid.len() == b.curve.grid.len()
        && a.curve
            .grid
            .iter()
            .zip(&b.curve.grid)
            .all(|(p, q)| (p.x - q.x).abs() <= 1e-12 && (p.y - q.y).abs() <= 1e-12);
    if !same_grid {
        return Err(Error::Argument("reports use different true-curve grids".into()));
    }
    let diff = |x: &[f64], y: &[f64]| -> Vec<f64> { x.iter().zip(y).map(|(u, v)| v - u).collect() };
    Ok(Comparison {
        safety_a: a.safety,
        safety_b: b.safety,
        safety_delta: SafetySummary {
            avg_pct_dlt: b.safety.avg_pct_dlt - a.safety.avg_pct_dlt,
            pct_trials_over_005: b.safety.pct_trials_over_005 - a.safety.pct_trials_over_005,
            pct_trials_over_010: b.safety.pct_trials_over_010 - a.safety.pct_trials_over_010,
        },
        grid: a.curve.grid.clone(),
        bias_delta: diff(&a.curve.bias, &b.curve.bias),
        selection_delta: diff(&a.curve.percent_selection, &b.curve.percent_selection),
    })
}

#[derive(Serialize)]
struct DeltaRow {
    grid_x: f64,
    grid_y: f64,
    delta: f64,
}

#[derive(Serialize)]
struct SafetyDeltaRow {
    metric: &'static str,
    a: f64,
    b: f64,
    delta: f64,
}

impl Comparison {
    /// Writes `compare_safety.csv`, `compare_bias.csv` and
    /// `compare_selection.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let (a, b, d) = (&self.safety_a, &self.safety_b, &self.safety_delta);
        write_csv(
            &dir.join("compare_safety.csv"),
            [
                SafetyDeltaRow { metric: "avg_pct_dlt", a: a.avg_pct_dlt, b: b.avg_pct_dlt, delta: d.avg_pct_dlt },
                SafetyDeltaRow {
                    metric: "pct_trials_over_theta_plus_005",
                    a: a.pct_trials_over_005,
                    b: b.pct_trials_over_005,
                    delta: d.pct_trials_over_005,
                },
                SafetyDeltaRow {
                    metric: "pct_trials_over_theta_plus_010",
                    a: a.pct_trials_over_010,
                    b: b.pct_trials_over_010,
                    delta: d.pct_trials_over_010,
                },
            ],
        )?;
        let rows = |values: &[f64]| -> Vec<DeltaRow> {
            self.grid
                .iter()
                .zip(values)
                .map(|(p, v)| DeltaRow { grid_x: p.x, grid_y: p.y, delta: *v })
                .collect()
        };
        write_csv(&dir.join("compare_bias.csv"), rows(&self.bias_delta))?;
        write_csv(&dir.join("compare_selection.csv"), rows(&self.selection_delta))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::ScenarioPreset;

    fn tiny(seed: u64) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::new("s1", ScenarioPreset::S1.truth());
        cfg.replicates = 2;
        cfg.base_seed = seed;
        cfg.design.n_max = 8;
        cfg.design.stop_n1 = 4;
        cfg.sampler = SamplerConfig { n_iterations: 1_200, n_burnin: 200, ..Default::default() };
        cfg
    }

    #[test]
    fn single_replicate_matches_run_trial() {
        let mut cfg = tiny(5);
        cfg.replicates = 1;
        let report = run_experiment(&cfg).unwrap();
        let direct = run_replicate(&cfg, 0).unwrap();
        assert_eq!(report.trials[0].dlt_count, direct.dlt_count);
        assert_eq!(report.aggregated, direct.estimate);
        assert_eq!(report.last_doses.len(), 2);
    }

    #[test]
    fn compare_with_itself_is_zero() {
        let r = run_experiment(&tiny(1)).unwrap();
        let c = compare_experiments(&r, &r).unwrap();
        assert_eq!(c.safety_delta.avg_pct_dlt, 0.0);
        assert!(c.bias_delta.iter().chain(&c.selection_delta).all(|d| *d == 0.0));
    }

    #[test]
    fn mismatched_reports_are_rejected() {
        let a = run_experiment(&tiny(1)).unwrap();
        let mut b = a.clone();
        b.curve.grid.pop();
        assert!(compare_experiments(&a, &b).is_err());
        let mut c = a.clone();
        c.config.scenario = ScenarioPreset::S2.truth();
        assert!(compare_experiments(&a, &c).is_err());
    }

    #[test]
    fn invalid_configs() {
        let mut cfg = tiny(0);
        cfg.replicates = 0;
        assert!(run_experiment(&cfg).is_err());
        let mut cfg = tiny(0);
        cfg.tolerance_p = 1.5;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn unwritable_output_fails_before_compute() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("occupied");
        fs::write(&file, b"x").unwrap();
        let mut cfg = tiny(0);
        cfg.replicates = 10_000;
        cfg.output_dir = Some(file.join("sub"));
        let start = std::time::Instant::now();
        assert!(matches!(run_experiment(&cfg), Err(Error::Io(_))));
        assert!(start.elapsed().as_secs() < 5);
    }
}
