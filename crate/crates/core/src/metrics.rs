//! Operating characteristics over replicated trials.

use serde::{Deserialize, Serialize};

use crate::design::{MtdCurveEstimate, TrialStatus};
use crate::error::{Error, Result};
use crate::model::{DosePair, TrialData};

/// Points used to discretize an estimated curve when measuring distances.
pub const DEFAULT_CURVE_DISCRETIZATION: usize = 501;
/// Points on the true curve at which pointwise statistics are reported.
pub const DEFAULT_TRUE_GRID: usize = 201;

/// Guards the strict exceedance comparison against representation error in
/// `θ + 0.05`.
const RATE_EPS: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct ReplicateResult {
    pub replicate: usize,
    pub transcript: TrialData,
    pub estimate: MtdCurveEstimate,
    pub status: TrialStatus,
    pub last_cohort_doses: [DosePair; 2],
    pub dlt_count: usize,
}

impl ReplicateResult {
    pub fn n_treated(&self) -> usize {
        self.transcript.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SafetySummary {
    /// 100 × total DLTs / total patients.
    pub avg_pct_dlt: f64,
    /// Percent of trials whose DLT rate exceeds θ + 0.05.
    pub pct_trials_over_005: f64,
    /// Percent of trials whose DLT rate exceeds θ + 0.10.
    pub pct_trials_over_010: f64,
}

/// Per-trial counts feeding [`safety_summary_from_counts`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialCounts {
    pub n_treated: usize,
    pub dlt_count: usize,
}

pub fn safety_summary(results: &[ReplicateResult], theta: f64) -> Result<SafetySummary> {
    let counts: Vec<TrialCounts> = results
        .iter()
        .map(|r| TrialCounts { n_treated: r.n_treated(), dlt_count: r.dlt_count })
        .collect();
    safety_summary_from_counts(&counts, theta)
}

pub fn safety_summary_from_counts(counts: &[TrialCounts], theta: f64) -> Result<SafetySummary> {
    if counts.is_empty() {
        return Err(Error::Argument("safety summary needs at least one trial".into()));
    }
    let patients: usize = counts.iter().map(|c| c.n_treated).sum();
    let dlts: usize = counts.iter().map(|c| c.dlt_count).sum();
    if patients == 0 {
        return Err(Error::Argument("no patients were treated".into()));
    }
    let exceed = |margin: f64| {
        let n = counts
            .iter()
            .filter(|c| {
                c.n_treated > 0 && c.dlt_count as f64 / c.n_treated as f64 > theta + margin + RATE_EPS
            })
            .count();
        100.0 * n as f64 / counts.len() as f64
    };
    Ok(SafetySummary {
        avg_pct_dlt: 100.0 * dlts as f64 / patients as f64,
        pct_trials_over_005: exceed(0.05),
        pct_trials_over_010: exceed(0.10),
    })
}

/// Discretization of an estimated curve over `x ∈ [0, 1]`, unclipped in y.
pub fn discretize_curve(estimate: &MtdCurveEstimate, n: usize) -> Vec<DosePair> {
    let n = n.max(2);
    (0..n)
        .map(|i| {
            let x = i as f64 / (n - 1) as f64;
            DosePair { x, y: estimate.y_at(x) }
        })
        .collect()
}

fn signed_distance_to(true_point: DosePair, estimate: &MtdCurveEstimate, curve: &[DosePair]) -> f64 {
    let d2 = curve
        .iter()
        .map(|p| (p.x - true_point.x).powi(2) + (p.y - true_point.y).powi(2))
        .fold(f64::INFINITY, f64::min);
    let y_prime = estimate.y_at(true_point.x);
    let sign = if y_prime > true_point.y {
        1.0
    } else if y_prime < true_point.y {
        -1.0
    } else {
        0.0
    };
    sign * d2.sqrt()
}

/// Signed minimum distance from a true-curve point to the estimated curve;
/// positive when the estimate lies above the point.
pub fn signed_min_distance(
    true_point: DosePair,
    estimate: &MtdCurveEstimate,
    curve_discretization: usize,
) -> f64 {
    let curve = discretize_curve(estimate, curve_discretization);
    signed_distance_to(true_point, estimate, &curve)
}

/// `distances[g][j]` is the signed distance at grid point `g` for replicate `j`.
pub fn distance_matrix(
    results: &[ReplicateResult],
    true_curve: &[DosePair],
    curve_discretization: usize,
) -> Vec<Vec<f64>> {
    let curves: Vec<Vec<DosePair>> = results
        .iter()
        .map(|r| discretize_curve(&r.estimate, curve_discretization))
        .collect();
    true_curve
        .iter()
        .map(|&pt| {
            results
                .iter()
                .zip(&curves)
                .map(|(r, c)| signed_distance_to(pt, &r.estimate, c))
                .collect()
        })
        .collect()
}

pub fn pointwise_bias(
    results: &[ReplicateResult],
    true_curve: &[DosePair],
    curve_discretization: usize,
) -> Result<Vec<f64>> {
    if results.is_empty() {
        return Err(Error::Argument("bias needs at least one replicate".into()));
    }
    Ok(bias_from_distances(&distance_matrix(results, true_curve, curve_discretization)))
}

pub fn bias_from_distances(distances: &[Vec<f64>]) -> Vec<f64> {
    distances
        .iter()
        .map(|row| row.iter().sum::<f64>() / row.len() as f64)
        .collect()
}

/// Selection radius `p · Δ(x, y)` with Δ the distance from the minimum
/// combination.
pub fn tolerance_radius(point: DosePair, p: f64) -> f64 {
    p * point.x.hypot(point.y)
}

pub fn pointwise_percent_selection(
    results: &[ReplicateResult],
    true_curve: &[DosePair],
    p: f64,
    curve_discretization: usize,
) -> Result<Vec<f64>> {
    if results.is_empty() {
        return Err(Error::Argument("percent selection needs at least one replicate".into()));
    }
    let d = distance_matrix(results, true_curve, curve_discretization);
    selection_from_distances(&d, true_curve, p)
}

pub fn selection_from_distances(
    distances: &[Vec<f64>],
    true_curve: &[DosePair],
    p: f64,
) -> Result<Vec<f64>> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("tolerance probability must lie in (0,1), got {p}")));
    }
    Ok(distances
        .iter()
        .zip(true_curve)
        .map(|(row, &pt)| {
            let radius = tolerance_radius(pt, p);
            let hits = row.iter().filter(|d| d.abs() <= radius).count();
            100.0 * hits as f64 / row.len() as f64
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointwiseCurveStats {
    pub grid: Vec<DosePair>,
    pub bias: Vec<f64>,
    pub percent_selection: Vec<f64>,
    pub tolerance_p: f64,
}

impl PointwiseCurveStats {
    pub fn compute(
        results: &[ReplicateResult],
        grid: Vec<DosePair>,
        tolerance_p: f64,
        curve_discretization: usize,
    ) -> Result<Self> {
        if results.is_empty() {
            return Err(Error::Argument("curve statistics need at least one replicate".into()));
        }
        let d = distance_matrix(results, &grid, curve_discretization);
        let bias = bias_from_distances(&d);
        let percent_selection = selection_from_distances(&d, &grid, tolerance_p)?;
        Ok(PointwiseCurveStats { grid, bias, percent_selection, tolerance_p })
    }
}

/// Curve through the parameter-wise mean of the per-replicate medians.
pub fn aggregated_curve(results: &[ReplicateResult]) -> Result<MtdCurveEstimate> {
    let first = results
        .first()
        .ok_or_else(|| Error::Argument("aggregation needs at least one replicate".into()))?;
    let n = results.len() as f64;
    let mean = |f: fn(&MtdCurveEstimate) -> f64| results.iter().map(|r| f(&r.estimate)).sum::<f64>() / n;
    Ok(MtdCurveEstimate::from_point(
        mean(|e| e.rho00_hat),
        mean(|e| e.rho01_hat),
        mean(|e| e.rho10_hat),
        mean(|e| e.beta3_hat),
        first.estimate.link,
        first.estimate.theta,
    ))
}

/// A final-cohort dose, tagged with its replicate and patient index.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LastDose {
    pub replicate: usize,
    pub patient: u32,
    pub x: f64,
    pub y: f64,
}

/// The final cohort's two doses from every replicate.
pub fn last_dose_cloud(results: &[ReplicateResult]) -> Result<Vec<LastDose>> {
    if results.is_empty() {
        return Err(Error::Argument("no replicates".into()));
    }
    Ok(results
        .iter()
        .flat_map(|r| {
            let n = r.transcript.len() as u32;
            let first_patient = n.saturating_sub(1);
            r.last_cohort_doses.iter().enumerate().map(move |(i, d)| LastDose {
                replicate: r.replicate,
                patient: first_patient + i as u32,
                x: d.x,
                y: d.y,
            })
        })
        .collect())
}
