//! Link functions mapping the linear predictor to a DLT probability.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use libm::erfc;

use crate::error::{Error, Result};

/// Smallest probability passed to an inverse link. Values closer to 0 or 1
/// are clamped so that extreme sampler proposals never produce infinities.
pub const PROB_CLAMP: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinkKind {
    Logistic,
    Probit,
    #[serde(alias = "loglog", alias = "clog-log")]
    CLogLog,
}

impl LinkKind {
    pub const ALL: [LinkKind; 3] = [LinkKind::Logistic, LinkKind::Probit, LinkKind::CLogLog];

    /// F(u). Saturates to exactly 0 or 1 for extreme `u`.
    #[inline]
    pub fn cdf(self, u: f64) -> f64 {
        match self {
            LinkKind::Logistic => {
                if u >= 0.0 {
                    1.0 / (1.0 + (-u).exp())
                } else {
                    let e = u.exp();
                    e / (1.0 + e)
                }
            }
            LinkKind::Probit => std_normal_cdf(u),
            LinkKind::CLogLog => -(-u.exp()).exp_m1(),
        }
    }

    /// F⁻¹(p) with `p` clamped into `[PROB_CLAMP, 1 - PROB_CLAMP]`.
    #[inline]
    pub fn inv(self, p: f64) -> f64 {
        let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        match self {
            LinkKind::Logistic => (p / (1.0 - p)).ln(),
            LinkKind::Probit => std_normal_quantile(p),
            LinkKind::CLogLog => (-(-p).ln_1p()).ln(),
        }
    }

    /// ln F(u), accurate in both tails.
    #[inline]
    pub fn log_cdf(self, u: f64) -> f64 {
        match self {
            LinkKind::Logistic => -softplus(-u),
            LinkKind::Probit => log_std_normal_cdf(u),
            LinkKind::CLogLog => {
                if u < -30.0 {
                    // ln(1 - exp(-t)) with t = e^u tiny
                    let t = u.exp();
                    u - 0.5 * t
                } else {
                    (-(-u.exp()).exp_m1()).ln()
                }
            }
        }
    }

    /// ln(1 - F(u)), accurate in both tails.
    #[inline]
    pub fn log_sf(self, u: f64) -> f64 {
        match self {
            LinkKind::Logistic => -softplus(u),
            LinkKind::Probit => log_std_normal_cdf(-u),
            LinkKind::CLogLog => -u.exp(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LinkKind::Logistic => "logistic",
            LinkKind::Probit => "probit",
            LinkKind::CLogLog => "cloglog",
        }
    }
}

impl fmt::Display for LinkKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LinkKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "logistic" | "logit" => Ok(LinkKind::Logistic),
            "probit" => Ok(LinkKind::Probit),
            "cloglog" | "loglog" | "clog-log" => Ok(LinkKind::CLogLog),
            other => Err(Error::Domain(format!("unknown link `{other}`"))),
        }
    }
}

/// Checked F(u). The result is kept inside the open unit interval.
pub fn link_cdf(kind: LinkKind, u: f64) -> Result<f64> {
    if !u.is_finite() {
        return Err(Error::Domain(format!("link argument must be finite, got {u}")));
    }
    Ok(kind
        .cdf(u)
        .clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0))
}

/// Checked F⁻¹(p) for `p` in the open unit interval.
pub fn link_inv(kind: LinkKind, p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!(
            "inverse link requires 0 < p < 1, got {p}"
        )));
    }
    Ok(kind.inv(p))
}

#[inline]
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

pub(crate) fn std_normal_cdf(u: f64) -> f64 {
    0.5 * erfc(-u * FRAC_1_SQRT_2)
}

fn log_std_normal_cdf(u: f64) -> f64 {
    if u > -35.0 {
        std_normal_cdf(u).ln()
    } else {
        // Mills-ratio asymptote; erfc underflows past this point.
        let z2 = u * u;
        -0.5 * z2 - (-u).ln() - 0.5 * (2.0 * PI).ln() + (1.0 - 1.0 / z2 + 3.0 / (z2 * z2)).ln()
    }
}

// Acklam's rational approximation (relative error ~1.2e-9), followed by one
// Halley step against erfc which brings it to working precision.
const ACKLAM_A: [f64; 6] = [
    -3.969683028665376e+01,
    2.209460984245205e+02,
    -2.759285104469687e+02,
    1.383577518672690e+02,
    -3.066479806614716e+01,
    2.506628277459239e+00,
];
const ACKLAM_B: [f64; 5] = [
    -5.447609879822406e+01,
    1.615858368580409e+02,
    -1.556989798598866e+02,
    6.680131188771972e+01,
    -1.328068155288572e+01,
];
const ACKLAM_C: [f64; 6] = [
    -7.784894002430293e-03,
    -3.223964580411365e-01,
    -2.400758277161838e+00,
    -2.549732539343734e+00,
    4.374664141464968e+00,
    2.938163982698783e+00,
];
const ACKLAM_D: [f64; 4] = [
    7.784695709041462e-03,
    3.224671290700398e-01,
    2.445134137142996e+00,
    3.754408661907416e+00,
];

fn acklam(p: f64) -> f64 {
    const P_LOW: f64 = 0.02425;
    let (a, b, c, d) = (&ACKLAM_A, &ACKLAM_B, &ACKLAM_C, &ACKLAM_D);
    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5])
            / ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q
            / (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (-p).ln_1p()).sqrt();
        -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5])
            / ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0)
    }
}

pub(crate) fn std_normal_quantile(p: f64) -> f64 {
    if p == 0.5 {
        return 0.0;
    }
    let x = acklam(p);
    // Halley refinement. Work on the smaller tail to avoid cancellation.
    let e = if p < 0.5 {
        std_normal_cdf(x) - p
    } else {
        (1.0 - p) - std_normal_cdf(-x)
    };
    let u = e * (2.0 * PI).sqrt() * (0.5 * x * x).exp();
    x - u / (1.0 + 0.5 * x * u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn log_grid() -> Vec<f64> {
        // 1e-6 ..= 0.5 log-spaced, mirrored onto the upper half.
        let n = 200;
        let lo = 1e-6_f64.ln();
        let hi = 0.5_f64.ln();
        let mut ps: Vec<f64> = (0..=n)
            .map(|i| (lo + (hi - lo) * i as f64 / n as f64).exp())
            .collect();
        let upper: Vec<f64> = ps.iter().map(|p| 1.0 - p).collect();
        ps.extend(upper);
        ps
    }

    #[test]
    fn cdf_at_zero() {
        assert_eq!(link_cdf(LinkKind::Logistic, 0.0).unwrap(), 0.5);
        assert_abs_diff_eq!(link_cdf(LinkKind::Probit, 0.0).unwrap(), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(
            link_cdf(LinkKind::CLogLog, 0.0).unwrap(),
            1.0 - (-1.0f64).exp(),
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            link_cdf(LinkKind::CLogLog, 0.0).unwrap(),
            0.632_120_558_8,
            epsilon = 1e-10
        );
    }

    #[test]
    fn inverse_examples() {
        assert_abs_diff_eq!(
            link_inv(LinkKind::Logistic, 0.33).unwrap(),
            -0.708_185_057_9,
            epsilon = 1e-9
        );
        assert_eq!(link_inv(LinkKind::Probit, 0.5).unwrap(), 0.0);
        // ln(-ln 0.67)
        assert_abs_diff_eq!(
            link_inv(LinkKind::CLogLog, 0.33).unwrap(),
            -0.915_097_527_5,
            epsilon = 1e-9
        );
    }

    #[test]
    fn probit_quantile_known_values() {
        assert_abs_diff_eq!(std_normal_quantile(0.975), 1.959_963_984_540_054, epsilon = 1e-12);
        assert_abs_diff_eq!(std_normal_quantile(0.33), -0.439_913_165_673_233_9, epsilon = 1e-12);
        assert_abs_diff_eq!(std_normal_quantile(1e-6), -4.753_424_308_822_899, epsilon = 1e-10);
    }

    #[test]
    fn domain_errors() {
        assert!(link_cdf(LinkKind::Logistic, f64::NAN).is_err());
        assert!(link_cdf(LinkKind::Probit, f64::INFINITY).is_err());
        for kind in LinkKind::ALL {
            assert!(link_inv(kind, 0.0).is_err());
            assert!(link_inv(kind, 1.0).is_err());
            assert!(link_inv(kind, -0.2).is_err());
            assert!(link_inv(kind, f64::NAN).is_err());
        }
    }

    #[test]
    fn round_trip_on_log_grid() {
        for kind in LinkKind::ALL {
            for p in log_grid() {
                let back = kind.cdf(kind.inv(p));
                assert!((back - p).abs() <= 1e-10, "{kind} p={p} back={back}");
            }
        }
    }

    #[test]
    fn inverse_symmetry() {
        for kind in [LinkKind::Logistic, LinkKind::Probit] {
            for p in log_grid() {
                assert!((kind.inv(p) + kind.inv(1.0 - p)).abs() <= 1e-10, "{kind} {p}");
            }
        }
    }

    #[test]
    fn cdf_strictly_increasing_on_grid() {
        for kind in LinkKind::ALL {
            let vals: Vec<f64> = (-300..=300).map(|i| kind.cdf(i as f64 * 0.01)).collect();
            assert!(vals.windows(2).all(|w| w[0] < w[1]), "{kind}");
        }
    }

    #[test]
    fn log_forms_match_direct_evaluation() {
        for kind in LinkKind::ALL {
            for i in -80..=40 {
                let u = i as f64 * 0.1;
                let p = kind.cdf(u);
                assert_abs_diff_eq!(kind.log_cdf(u), p.ln(), epsilon = 1e-9);
                if p < 1.0 - 1e-6 {
                    assert_abs_diff_eq!(kind.log_sf(u), (1.0 - p).ln(), epsilon = 1e-9);
                }
            }
            assert!(kind.log_cdf(-60.0).is_finite());
            assert!(kind.log_sf(60.0).is_finite() || kind == LinkKind::CLogLog);
        }
    }

    #[test]
    fn parses_names() {
        assert_eq!("probit".parse::<LinkKind>().unwrap(), LinkKind::Probit);
        assert_eq!("CLogLog".parse::<LinkKind>().unwrap(), LinkKind::CLogLog);
        assert!("gumbel".parse::<LinkKind>().is_err());
    }

    proptest::proptest! {
        #[test]
        fn symmetric_links_satisfy_reflection(u in -20.0f64..20.0) {
            for kind in [LinkKind::Logistic, LinkKind::Probit] {
                proptest::prop_assert!((kind.cdf(u) + kind.cdf(-u) - 1.0).abs() < 1e-14);
            }
        }

        #[test]
        fn inverse_is_increasing(p in 1e-9f64..0.999, dp in 1e-6f64..1e-3) {
            let q = (p + dp).min(1.0 - 1e-9);
            for kind in LinkKind::ALL {
                proptest::prop_assert!(kind.inv(p) < kind.inv(q));
            }
        }
    }
}
