//! The `combo-ewoc` command line: replicated-trial simulation, report
//! comparison, one-shot dose recommendations and the trial-conduct server.

use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use combo_ewoc::design::{allocate_cohort, refresh_posterior};
use combo_ewoc::harness::table_header;
use combo_ewoc::{
    compare_experiments, run_experiment, DesignConfig, DosePair, DoseWindow, ExperimentConfig,
    LinkKind, OpCharReport, PriorSpec, SamplerConfig, ScenarioPreset, TrialData, TruthModel,
};
use combo_ewoc_service::wire::Recommendation;
use serde::Deserialize;

#[derive(Parser)]
#[command(name = "combo-ewoc", version, about = "Two-agent conditional EWOC dose finding")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate replicated trials and write an operating-characteristics report.
    Simulate(SimulateArgs),
    /// Print the safety row of a report, optionally comparing it with another.
    Opchar(OpcharArgs),
    /// Recommend the next cohort's doses for a transcript.
    NextDose(NextDoseArgs),
    /// Run the trial-conduct HTTP service.
    Serve(ServeArgs),
}

#[derive(Args)]
struct SamplerArgs {
    #[arg(long, default_value_t = SamplerConfig::default().n_iterations)]
    iterations: usize,
    #[arg(long, default_value_t = SamplerConfig::default().n_burnin)]
    burnin: usize,
    #[arg(long, default_value_t = SamplerConfig::default().thin)]
    thin: usize,
}

impl SamplerArgs {
    fn config(&self) -> SamplerConfig {
        SamplerConfig { n_iterations: self.iterations, n_burnin: self.burnin, thin: self.thin, ..Default::default() }
    }
}

#[derive(Args)]
struct SimulateArgs {
    /// Preset `s1`..`s4`, or a JSON file holding a truth model.
    #[arg(long)]
    scenario: String,
    /// Working-model link.
    #[arg(long, default_value = "logistic")]
    link: LinkKind,
    /// Re-express a logistic preset on another link with the same MTD curve.
    #[arg(long)]
    truth_link: Option<LinkKind>,
    #[arg(long)]
    no_interaction: bool,
    #[arg(long, default_value_t = 200)]
    replicates: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.33)]
    theta: f64,
    /// Patients per trial.
    #[arg(long, default_value_t = 40)]
    n: usize,
    /// Tolerance probability for percent selection.
    #[arg(long, default_value_t = 0.1)]
    p: f64,
    #[command(flatten)]
    sampler: SamplerArgs,
}

#[derive(Args)]
struct OpcharArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Second report; deltas are computed as compare minus in.
    #[arg(long)]
    compare: Option<PathBuf>,
    /// Where comparison files go; defaults to the `--compare` directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct NextDoseArgs {
    /// CSV with header `index,x,y,t` in standardized doses.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    alpha: f64,
    #[arg(long)]
    no_interaction: bool,
    /// Trial seed; matches the service's `seed` for the same transcript.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.33)]
    theta: f64,
    #[arg(long, default_value = "logistic")]
    link: LinkKind,
    #[arg(long, default_value_t = DesignConfig::default().escalation_step_cap)]
    step_cap: f64,
    /// Raw dose window as `x_min,x_max,y_min,y_max`; defaults to the unit square.
    #[arg(long, value_parser = parse_window)]
    window: Option<DoseWindow>,
    #[command(flatten)]
    sampler: SamplerArgs,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long, default_value = "trial-state")]
    state: PathBuf,
}

fn parse_window(s: &str) -> std::result::Result<DoseWindow, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("{t}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    match v.as_slice() {
        &[a, b, c, d] => DoseWindow::new(a, b, c, d).map_err(|e| e.to_string()),
        _ => Err(format!("expected four comma-separated numbers, got {}", v.len())),
    }
}

fn load_truth(spec: &str, truth_link: Option<LinkKind>, theta: f64) -> Result<(String, TruthModel)> {
    if let Ok(preset) = spec.parse::<ScenarioPreset>() {
        let truth = match truth_link {
            Some(link) => preset.truth_with_link(link, theta)?,
            None => preset.truth(),
        };
        return Ok((preset.to_string(), truth));
    }
    if truth_link.is_some() {
        bail!("--truth-link only applies to the s1..s4 presets");
    }
    let path = Path::new(spec);
    let text = fs::read_to_string(path).with_context(|| format!("reading scenario file {}", path.display()))?;
    let truth: TruthModel =
        serde_json::from_str(&text).with_context(|| format!("parsing scenario file {}", path.display()))?;
    let label = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| spec.to_owned());
    Ok((label, truth))
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let (label, truth) = load_truth(&args.scenario, args.truth_link, args.theta)?;
    let mut config = ExperimentConfig::new(label, truth);
    config.working_link = args.link;
    config.interaction = !args.no_interaction;
    config.design = DesignConfig { theta: args.theta, n_max: args.n, ..Default::default() };
    config.sampler = args.sampler.config();
    config.replicates = args.replicates;
    config.base_seed = args.seed;
    config.tolerance_p = args.p;
    config.output_dir = Some(args.out.clone());
    let report = run_experiment(&config)?;
    println!("{}", table_header());
    println!("{}", report.table_row());
    eprintln!("wrote {}", args.out.display());
    Ok(())
}

fn opchar(args: OpcharArgs) -> Result<()> {
    let a = OpCharReport::load(&args.input)?;
    println!("{}", table_header());
    println!("{}", a.table_row());
    let Some(other) = args.compare else {
        return Ok(());
    };
    let b = OpCharReport::load(&other)?;
    println!("{}", b.table_row());
    let cmp = compare_experiments(&a, &b)?;
    let d = cmp.safety_delta;
    println!(
        "{:<6} {:<48} {:>8.2} {:>8.2} {:>8.2}",
        "delta", "compare - in", d.avg_pct_dlt, d.pct_trials_over_005, d.pct_trials_over_010
    );
    let out = args.out.unwrap_or(other);
    cmp.write(&out)?;
    eprintln!("wrote comparison files to {}", out.display());
    Ok(())
}

#[derive(Deserialize)]
struct TranscriptRow {
    index: u32,
    x: f64,
    y: f64,
    t: u8,
}

fn read_transcript(path: &Path, theta: f64) -> Result<TrialData> {
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let mut rows = Vec::new();
    for (i, row) in reader.deserialize::<TranscriptRow>().enumerate() {
        let row = row.with_context(|| format!("{}: row {}", path.display(), i + 1))?;
        if row.index as usize != i + 1 {
            bail!("{}: expected patient index {}, found {}", path.display(), i + 1, row.index);
        }
        rows.push((DosePair::new(row.x, row.y)?, row.t));
    }
    Ok(TrialData::from_outcomes(theta, rows)?)
}

fn next_dose(args: NextDoseArgs) -> Result<()> {
    if !(args.alpha > 0.0 && args.alpha <= 0.5) {
        bail!("--alpha must lie in (0, 0.5], got {}", args.alpha);
    }
    let data = read_transcript(&args.data, args.theta)?;
    let window = args.window.unwrap_or(DoseWindow { x_min: 0.0, x_max: 1.0, y_min: 0.0, y_max: 1.0 });
    let recommendation = if data.is_empty() {
        Recommendation::first_cohort(&window, args.alpha)
    } else {
        let sampler = args.sampler.config();
        sampler.validate()?;
        let draws = refresh_posterior(
            &data,
            &PriorSpec::default(),
            &sampler,
            args.link,
            !args.no_interaction,
            args.seed,
        )?;
        let alloc = allocate_cohort(&data, &draws, args.alpha, args.step_cap)?;
        Recommendation::from_allocation(&window, &alloc)
    };
    println!("{}", serde_json::to_string_pretty(&recommendation)?);
    Ok(())
}

fn serve(args: ServeArgs) -> Result<()> {
    let addr: SocketAddr = format!("{}:{}", args.host, args.port).parse().context("listen address")?;
    let rt = tokio::runtime::Runtime::new()?;
    eprintln!("listening on http://{addr}, state in {}", args.state.display());
    rt.block_on(combo_ewoc_service::serve(addr, args.state))?;
    Ok(())
}

/// Parses `args` (program name first) and runs the chosen command.
pub fn run<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args)?.command {
        Command::Simulate(a) => simulate(a),
        Command::Opchar(a) => opchar(a),
        Command::NextDose(a) => next_dose(a),
        Command::Serve(a) => serve(a),
    }
}
