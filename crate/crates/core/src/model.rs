//! Dose standardization, the reparameterized dose-toxicity model and its
//! MTD curve.
//!
//! The working model is `P(T = 1 | x, y) = F(b0 + b1 x + b2 y + b3 x y)` with
//! the intercept and main effects expressed through the corner toxicity
//! probabilities:
//!
//! ```text
//! b0 = F⁻¹(ρ00)
//! b1 = F⁻¹(ρ10) − F⁻¹(ρ00)
//! b2 = F⁻¹(ρ01) − F⁻¹(ρ00)
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::link::LinkKind;

/// Raw dose ranges for the two agents, in clinical units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DoseWindow {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl DoseWindow {
    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Result<Self> {
        let w = DoseWindow { x_min, x_max, y_min, y_max };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.x_min, self.x_max, self.y_min, self.y_max]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.x_min >= self.x_max || self.y_min >= self.y_max {
            return Err(Error::Domain(format!(
                "dose window requires x_min < x_max and y_min < y_max, got {self:?}"
            )));
        }
        Ok(())
    }

    /// Maps raw doses into the unit square.
    pub fn standardize(&self, raw_x: f64, raw_y: f64) -> Result<DosePair> {
        let inside = |v: f64, lo: f64, hi: f64| v >= lo && v <= hi;
        if !inside(raw_x, self.x_min, self.x_max) || !inside(raw_y, self.y_min, self.y_max) {
            return Err(Error::Domain(format!(
                "raw dose ({raw_x}, {raw_y}) outside window {self:?}"
            )));
        }
        Ok(DosePair {
            x: (raw_x - self.x_min) / (self.x_max - self.x_min),
            y: (raw_y - self.y_min) / (self.y_max - self.y_min),
        })
    }

    /// Inverse of [`DoseWindow::standardize`]. Coordinates outside `[0, 1]`
    /// are mapped linearly without complaint.
    pub fn to_raw(&self, dose: DosePair) -> (f64, f64) {
        (
            self.x_min + dose.x * (self.x_max - self.x_min),
            self.y_min + dose.y * (self.y_max - self.y_min),
        )
    }
}

/// Standardized dose combination in `[0, 1]²`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DosePair {
    pub x: f64,
    pub y: f64,
}

impl DosePair {
    pub const MIN: DosePair = DosePair { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&x) || !(0.0..=1.0).contains(&y) {
            return Err(Error::Domain(format!(
                "standardized dose ({x}, {y}) outside the unit square"
            )));
        }
        Ok(DosePair { x, y })
    }
}

/// Working-model parameters in the corner-probability parameterization.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub rho00: f64,
    pub rho01: f64,
    pub rho10: f64,
    pub beta3: f64,
    pub link: LinkKind,
    pub interaction_enabled: bool,
}

/// Linear-predictor coefficients `(b0, b1, b2, b3)` implied by a
/// [`ModelParams`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Coefficients {
    pub intercept: f64,
    pub slope_x: f64,
    pub slope_y: f64,
    pub interaction: f64,
}

impl Coefficients {
    #[inline]
    pub fn predictor(&self, x: f64, y: f64) -> f64 {
        self.intercept + self.slope_x * x + self.slope_y * y + self.interaction * x * y
    }
}

impl ModelParams {
    /// Builds validated parameters. With `interaction_enabled == false` the
    /// interaction must be exactly zero.
    pub fn new(
        rho00: f64,
        rho01: f64,
        rho10: f64,
        beta3: f64,
        link: LinkKind,
        interaction_enabled: bool,
    ) -> Result<Self> {
        let p = ModelParams { rho00, rho01, rho10, beta3, link, interaction_enabled };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.is_valid() {
            return Err(Error::Domain(format!(
                "model parameters require 0 < rho00 < min(rho01, rho10) < 1 and beta3 >= 0 \
                 (zero when interaction is disabled), got {self:?}"
            )));
        }
        Ok(())
    }

    pub fn is_valid(&self) -> bool {
        let m = self.rho01.min(self.rho10);
        let rho_ok = self.rho00 > 0.0 && self.rho00 < m && self.rho01 < 1.0 && self.rho10 < 1.0;
        let beta_ok = if self.interaction_enabled {
            self.beta3 >= 0.0 && self.beta3.is_finite()
        } else {
            self.beta3 == 0.0
        };
        rho_ok && beta_ok
    }

    #[inline]
    pub fn coefficients(&self) -> Coefficients {
        let f = self.link;
        let b0 = f.inv(self.rho00);
        Coefficients {
            intercept: b0,
            slope_x: f.inv(self.rho10) - b0,
            slope_y: f.inv(self.rho01) - b0,
            interaction: self.beta3,
        }
    }

    /// Same parameters with the roles of the two agents exchanged.
    pub fn swapped(&self) -> ModelParams {
        ModelParams { rho01: self.rho10, rho10: self.rho01, ..*self }
    }
}

/// One treated patient.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub index: u32,
    pub dose: DosePair,
    pub dlt: u8,
    pub cohort: u32,
}

/// The accumulated trial data D_k.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialData {
    records: Vec<PatientRecord>,
    target_theta: f64,
}

impl TrialData {
    pub fn new(target_theta: f64) -> Result<Self> {
        if !(target_theta > 0.0 && target_theta < 1.0) {
            return Err(Error::Domain(format!("target theta must lie in (0,1), got {target_theta}")));
        }
        Ok(TrialData { records: Vec::new(), target_theta })
    }

    /// Rebuilds trial data from `(dose, dlt)` pairs in enrollment order.
    pub fn from_outcomes(
        target_theta: f64,
        outcomes: impl IntoIterator<Item = (DosePair, u8)>,
    ) -> Result<Self> {
        let mut data = TrialData::new(target_theta)?;
        for (dose, dlt) in outcomes {
            data.push(dose, dlt)?;
        }
        Ok(data)
    }

    /// Appends the next patient; index and cohort are assigned automatically.
    pub fn push(&mut self, dose: DosePair, dlt: u8) -> Result<&PatientRecord> {
        if dlt > 1 {
            return Err(Error::Domain(format!("DLT indicator must be 0 or 1, got {dlt}")));
        }
        DosePair::new(dose.x, dose.y)?;
        let index = self.records.len() as u32 + 1;
        self.records.push(PatientRecord { index, dose, dlt, cohort: index.div_ceil(2) });
        Ok(self.records.last().expect("just pushed"))
    }

    pub fn records(&self) -> &[PatientRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn target_theta(&self) -> f64 {
        self.target_theta
    }

    pub fn dlt_count(&self) -> usize {
        self.records.iter().filter(|r| r.dlt == 1).count()
    }
}

/// Probability of DLT under the working model.
#[inline]
pub fn prob_dlt(params: &ModelParams, dose: DosePair) -> f64 {
    params
        .link
        .cdf(params.coefficients().predictor(dose.x, dose.y))
}

/// The y-coordinate of the θ-level set at `x_star`. Not clipped to `[0, 1]`.
pub fn mtd_curve_y(params: &ModelParams, theta: f64, x_star: f64) -> f64 {
    gamma_b_given_a(params, theta, x_star)
}

/// MTD of agent A when agent B is held at `y`. Not clipped.
pub fn gamma_a_given_b(params: &ModelParams, theta: f64, y: f64) -> f64 {
    let c = params.coefficients();
    let target = params.link.inv(theta);
    (target - c.intercept - c.slope_y * y) / (c.slope_x + c.interaction * y)
}

/// MTD of agent B when agent A is held at `x`. Not clipped.
pub fn gamma_b_given_a(params: &ModelParams, theta: f64, x: f64) -> f64 {
    let c = params.coefficients();
    let target = params.link.inv(theta);
    (target - c.intercept - c.slope_x * x) / (c.slope_y + c.interaction * x)
}
