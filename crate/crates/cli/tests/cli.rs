use std::fs;
use std::path::Path;
use std::process::Command;

use combo_ewoc::{DesignConfig, DoseWindow, LinkKind, PriorSpec, SamplerConfig};
use combo_ewoc_service::store::{Snapshot, StoredPatient, StoredTrial};
use combo_ewoc_service::wire::Recommendation;

const BIN: &str = env!("CARGO_BIN_EXE_combo-ewoc");

fn run(args: &[&str]) -> String {
    let out = Command::new(BIN).args(args).output().unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn quick_simulate(out: &Path, extra: &[&str]) -> String {
    let out = out.to_str().unwrap();
    let mut args = vec![
        "simulate", "--scenario", "s1", "--replicates", "3", "--seed", "11", "--n", "12", "--out", out,
        "--iterations", "1500", "--burnin", "500", "--thin", "1",
    ];
    args.extend_from_slice(extra);
    run(&args)
}

fn dir_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn simulate_is_byte_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let row_a = quick_simulate(&a, &[]);
    let row_b = quick_simulate(&b, &[]);
    assert_eq!(row_a, row_b);
    let (fa, fb) = (dir_files(&a), dir_files(&b));
    assert_eq!(fa.len(), 6);
    assert_eq!(fa, fb);
}

#[test]
fn opchar_compares_two_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    quick_simulate(&a, &[]);
    quick_simulate(&b, &["--no-interaction"]);
    let out = run(&["opchar", "--in", a.to_str().unwrap(), "--compare", b.to_str().unwrap()]);
    assert_eq!(out.lines().count(), 4, "{out}");
    assert!(out.lines().last().unwrap().starts_with("delta"));
    for f in ["compare_safety.csv", "compare_bias.csv", "compare_selection.csv"] {
        assert!(b.join(f).exists(), "{f}");
    }
}

#[test]
fn next_dose_matches_service_replay() {
    let tmp = tempfile::tempdir().unwrap();
    let csv = tmp.path().join("t.csv");
    fs::write(&csv, "index,x,y,t\n1,0,0,0\n2,0,0,0\n3,0.2,0,0\n4,0,0.2,1\n").unwrap();
    let json = run(&[
        "next-dose", "--data", csv.to_str().unwrap(), "--alpha", "0.3", "--seed", "17", "--window", "100,500,10,50",
    ]);
    let cli: Recommendation = serde_json::from_str(&json).unwrap();

    let window = DoseWindow::new(100.0, 500.0, 10.0, 50.0).unwrap();
    let transcript = [(0.0, 0.0, 0), (0.0, 0.0, 0), (0.2, 0.0, 0), (0.0, 0.2, 1)]
        .iter()
        .enumerate()
        .map(|(i, &(x, y, dlt))| StoredPatient { index: i as u32 + 1, cohort: i as u32 / 2 + 1, x, y, dlt })
        .collect();
    let stored = StoredTrial {
        trial_id: "t".into(),
        idempotency_key: None,
        window,
        design: DesignConfig::default(),
        prior: PriorSpec::default(),
        sampler: SamplerConfig::default(),
        working_link: LinkKind::Logistic,
        interaction: true,
        seed: 17,
        revision: 3,
        transcript,
        last_mutation: None,
    };
    let service = Snapshot::replay(stored).unwrap().pending_recommendation().unwrap();
    assert_eq!(service.alpha, 0.3);
    assert_eq!(cli, service);
}

#[test]
fn next_dose_on_empty_transcript_is_minimum() {
    let tmp = tempfile::tempdir().unwrap();
    let csv = tmp.path().join("t.csv");
    fs::write(&csv, "index,x,y,t\n").unwrap();
    let rec: Recommendation =
        serde_json::from_str(&run(&["next-dose", "--data", csv.to_str().unwrap(), "--alpha", "0.25"])).unwrap();
    assert_eq!(rec.cohort, 1);
    assert!(rec.patients.iter().all(|p| p.dose.standardized.x == 0.0 && p.dose.standardized.y == 0.0));
}

#[test]
fn bad_arguments_fail() {
    let tmp = tempfile::tempdir().unwrap();
    let csv = tmp.path().join("t.csv");
    fs::write(&csv, "index,x,y,t\n1,0,0,0\n").unwrap();
    for args in [
        vec!["next-dose", "--data", csv.to_str().unwrap(), "--alpha", "0.9"],
        vec!["next-dose", "--data", csv.to_str().unwrap(), "--alpha", "0.25"],
        vec!["simulate", "--scenario", "nope.json", "--out", "x"],
    ] {
        let out = Command::new(BIN).args(&args).output().unwrap();
        assert!(!out.status.success(), "{args:?}");
    }
}
