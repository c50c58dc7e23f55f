//! Data-generating truths used to simulate trials.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::link::LinkKind;
use crate::model::{gamma_a_given_b, gamma_b_given_a, prob_dlt, DosePair, ModelParams};

/// Parameters of the six-parameter truth
/// `P(T = 0 | x, y) = (1 + a1 x^b1 + a2 y^b2 + a3 (x^b1 y^b2)^b3)^-1`.
///
/// Kept separate from [`ModelParams`] so that its exponents are never
/// confused with the working model's regression coefficients.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SixParameter {
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
    pub b1: f64,
    pub b2: f64,
    pub b3: f64,
}

impl SixParameter {
    pub fn prob_dlt(&self, dose: DosePair) -> f64 {
        let px = dose.x.powf(self.b1);
        let py = dose.y.powf(self.b2);
        let odds = self.a1 * px + self.a2 * py + self.a3 * (px * py).powf(self.b3);
        odds / (1.0 + odds)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum TruthModel {
    ReparamLink(ModelParams),
    SixParameter(SixParameter),
    /// The same DLT probability at every combination. Has no MTD curve;
    /// used to exercise the stopping rule.
    Constant { p: f64 },
}

impl TruthModel {
    pub fn validate(&self) -> Result<()> {
        match self {
            TruthModel::ReparamLink(p) => p.validate(),
            TruthModel::SixParameter(s) => {
                let all = [s.a1, s.a2, s.a3, s.b1, s.b2, s.b3];
                if all.iter().all(|v| *v > 0.0 && v.is_finite()) {
                    Ok(())
                } else {
                    Err(Error::Domain(format!(
                        "six-parameter truth needs strictly positive parameters, got {s:?}"
                    )))
                }
            }
            TruthModel::Constant { p } => {
                if (0.0..=1.0).contains(p) {
                    Ok(())
                } else {
                    Err(Error::Domain(format!("constant truth needs p in [0, 1], got {p}")))
                }
            }
        }
    }
}

pub fn truth_prob_dlt(truth: &TruthModel, dose: DosePair) -> f64 {
    match truth {
        TruthModel::ReparamLink(p) => prob_dlt(p, dose),
        TruthModel::SixParameter(s) => s.prob_dlt(dose),
        TruthModel::Constant { p } => *p,
    }
}

/// Re-expresses a logistic truth on `target_link` keeping the slopes and
/// interaction, with the intercept chosen so that the θ-level set is the
/// same curve.
///
/// On the shared curve `b0 + b1 x + b2 y + b3 x y = F⁻¹(θ)` for the base link,
/// so the target intercept must satisfy
/// `b0' + b1 x + b2 y + b3 x y = G⁻¹(θ)` at the same points; it is solved from
/// the curve point at `x = 0`.
pub fn shifted_link_truth(
    base: &ModelParams,
    target_link: LinkKind,
    theta: f64,
) -> Result<ModelParams> {
    base.validate()?;
    if base.link != LinkKind::Logistic {
        return Err(Error::Argument(format!(
            "intercept shift expects a logistic base, got {}",
            base.link
        )));
    }
    if !(theta > 0.0 && theta < 1.0) {
        return Err(Error::Domain(format!("theta must lie in (0,1), got {theta}")));
    }
    if target_link == LinkKind::Logistic {
        return Ok(*base);
    }
    let c = base.coefficients();
    let y0 = gamma_b_given_a(base, theta, 0.0);
    let intercept = target_link.inv(theta) - c.slope_y * y0;
    let shifted = ModelParams {
        rho00: target_link.cdf(intercept),
        rho01: target_link.cdf(intercept + c.slope_y),
        rho10: target_link.cdf(intercept + c.slope_x),
        beta3: base.beta3,
        link: target_link,
        interaction_enabled: base.interaction_enabled,
    };
    shifted.validate()?;
    Ok(shifted)
}

/// Bisection for the root of a monotone function on `[lo, hi]` given a sign
/// change; stops when the bracket is narrower than `tol`.
pub fn bisect(mut lo: f64, mut hi: f64, tol: f64, f: impl Fn(f64) -> f64) -> f64 {
    let f_lo = f(lo);
    for _ in 0..1100 {
        if hi - lo <= tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let f_mid = f(mid);
        if f_mid == 0.0 {
            return mid;
        }
        if (f_mid < 0.0) == (f_lo < 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

const CURVE_TOL: f64 = 1e-12;

/// y in `[0, 1]` with `truth_prob_dlt(x, y) = θ`, if one exists.
pub fn true_curve_y(truth: &TruthModel, theta: f64, x: f64) -> Option<f64> {
    match truth {
        TruthModel::ReparamLink(p) => {
            let y = gamma_b_given_a(p, theta, x);
            (-1e-12..=1.0 + 1e-12).contains(&y).then(|| y.clamp(0.0, 1.0))
        }
        TruthModel::Constant { .. } => None,
        TruthModel::SixParameter(_) => {
            let g = |y: f64| truth_prob_dlt(truth, DosePair { x, y }) - theta;
            let (g0, g1) = (g(0.0), g(1.0));
            if g0 > 0.0 || g1 < 0.0 {
                return None;
            }
            // The surface can have unbounded slope in y at y = 0, so solve to
            // full floating-point resolution rather than to CURVE_TOL.
            Some(bisect(0.0, 1.0, 0.0, g))
        }
    }
}

/// Points of the true MTD curve on a uniform x-grid over `[0, 1]`; grid
/// points whose curve y falls outside the unit square are dropped.
pub fn true_mtd_curve_points(
    truth: &TruthModel,
    theta: f64,
    grid_size: usize,
) -> Result<Vec<DosePair>> {
    if grid_size < 2 {
        return Err(Error::Argument(format!("grid_size must be >= 2, got {grid_size}")));
    }
    Ok((0..grid_size)
        .filter_map(|i| {
            let x = i as f64 / (grid_size - 1) as f64;
            true_curve_y(truth, theta, x).map(|y| DosePair { x, y })
        })
        .collect())
}

/// The x-range over which the true curve stays inside the unit square.
pub fn true_curve_x_range(truth: &TruthModel, theta: f64) -> Option<(f64, f64)> {
    let p = |x: f64, y: f64| truth_prob_dlt(truth, DosePair { x, y });
    match truth {
        TruthModel::ReparamLink(m) => {
            let lo = gamma_a_given_b(m, theta, 1.0).max(0.0);
            let hi = gamma_a_given_b(m, theta, 0.0).min(1.0);
            (lo <= hi).then_some((lo, hi))
        }
        TruthModel::Constant { .. } => None,
        TruthModel::SixParameter(_) => {
            if p(0.0, 0.0) > theta || p(1.0, 1.0) < theta {
                return None;
            }
            let lo = if p(0.0, 1.0) >= theta {
                0.0
            } else {
                bisect(0.0, 1.0, CURVE_TOL, |x| p(x, 1.0) - theta)
            };
            let hi = if p(1.0, 0.0) <= theta {
                1.0
            } else {
                bisect(0.0, 1.0, CURVE_TOL, |x| p(x, 0.0) - theta)
            };
            Some((lo, hi))
        }
    }
}

/// `n` points equally spaced in x across [`true_curve_x_range`].
pub fn true_curve_grid(truth: &TruthModel, theta: f64, n: usize) -> Result<Vec<DosePair>> {
    if n < 2 {
        return Err(Error::Argument(format!("grid needs at least 2 points, got {n}")));
    }
    let (lo, hi) = true_curve_x_range(truth, theta)
        .ok_or_else(|| Error::Argument("true MTD curve does not cross the unit square".into()))?;
    Ok((0..n)
        .filter_map(|i| {
            let x = lo + (hi - lo) * i as f64 / (n - 1) as f64;
            true_curve_y(truth, theta, x).map(|y| DosePair { x, y })
        })
        .collect())
}

/// Simulated DLT indicator at `dose`.
pub fn draw_outcome<R: Rng + ?Sized>(truth: &TruthModel, dose: DosePair, rng: &mut R) -> u8 {
    let p = truth_prob_dlt(truth, dose);
    u8::from(rng.random::<f64>() < p)
}

/// Named parameter presets for the four reference scenarios.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioPreset {
    S1,
    S2,
    S3,
    S4,
}

impl ScenarioPreset {
    pub const ALL: [ScenarioPreset; 4] =
        [ScenarioPreset::S1, ScenarioPreset::S2, ScenarioPreset::S3, ScenarioPreset::S4];

    /// Logistic truth for s1–s3, six-parameter truth for s4.
    pub fn truth(self) -> TruthModel {
        let logistic = |rho00, rho01, rho10, beta3| {
            TruthModel::ReparamLink(ModelParams {
                rho00,
                rho01,
                rho10,
                beta3,
                link: LinkKind::Logistic,
                interaction_enabled: true,
            })
        };
        match self {
            ScenarioPreset::S1 => logistic(0.01, 0.6, 0.6, 40.0),
            ScenarioPreset::S2 => logistic(0.01, 0.2, 0.9, 100.0),
            ScenarioPreset::S3 => logistic(0.001, 0.6, 0.01, 10.0),
            ScenarioPreset::S4 => TruthModel::SixParameter(SixParameter {
                a1: 0.5,
                a2: 0.5,
                a3: 2.0,
                b1: 12.0,
                b2: 5.0,
                b3: 0.1,
            }),
        }
    }

    /// The preset truth re-expressed on `link` with the same MTD curve.
    /// Only the logistic family can be re-linked.
    pub fn truth_with_link(self, link: LinkKind, theta: f64) -> Result<TruthModel> {
        match (self.truth(), link) {
            (t, LinkKind::Logistic) => Ok(t),
            (TruthModel::ReparamLink(p), _) => {
                Ok(TruthModel::ReparamLink(shifted_link_truth(&p, link, theta)?))
            }
            (TruthModel::SixParameter(_) | TruthModel::Constant { .. }, _) => Err(Error::Argument(format!(
                "scenario {self} has no {link} variant"
            ))),
        }
    }
}

impl fmt::Display for ScenarioPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ScenarioPreset::S1 => "s1",
            ScenarioPreset::S2 => "s2",
            ScenarioPreset::S3 => "s3",
            ScenarioPreset::S4 => "s4",
        };
        f.write_str(s)
    }
}

impl FromStr for ScenarioPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "s1" => Ok(ScenarioPreset::S1),
            "s2" => Ok(ScenarioPreset::S2),
            "s3" => Ok(ScenarioPreset::S3),
            "s4" => Ok(ScenarioPreset::S4),
            other => Err(Error::Argument(format!("unknown scenario preset `{other}`"))),
        }
    }
}
