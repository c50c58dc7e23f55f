//! Dense tensor-grid quadrature of the posterior, used to validate the
//! sampler on small data sets.
//!
//! The grid lives in `(ρ01, ρ10, r, β3)` with `ρ00 = r · min(ρ01, ρ10)`. In
//! these coordinates the ρ-block prior is the uniform measure on `(0, 1)³`,
//! so every ρ cell carries equal prior mass and the constraint region is
//! covered exactly. β3 cells are log-spaced on `[0, 300]` and weighted by
//! their exact gamma prior mass. The likelihood is evaluated at cell
//! midpoints. When reading off marginal medians, mass within a ρ cell is
//! taken as uniform and mass within a β3 cell is spread like the prior.

use statrs::distribution::{ContinuousCDF, Gamma};

use crate::error::{Error, Result};
use crate::link::LinkKind;
use crate::model::{prob_dlt, ModelParams, TrialData};
use crate::posterior::PriorSpec;

/// Upper end of the β3 grid.
pub const BETA3_UPPER: f64 = 300.0;
/// First positive β3 knot; the lowest cell is `[0, BETA3_FIRST_EDGE]`.
const BETA3_FIRST_EDGE: f64 = 1e-3;
const MIN_KNOTS: usize = 20;
const MAX_RECORDS: usize = 10;

/// Number of cells along `(ρ01, ρ10, ratio, β3)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GridSizes {
    pub rho01: usize,
    pub rho10: usize,
    pub ratio: usize,
    pub beta3: usize,
}

impl GridSizes {
    pub fn uniform(n: usize) -> Self {
        GridSizes { rho01: n, rho10: n, ratio: n, beta3: n }
    }
}

/// Marginal posterior medians computed by quadrature.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadratureSummary {
    pub rho00: f64,
    pub rho01: f64,
    pub rho10: f64,
    pub beta3: f64,
    /// `(lower edge, upper edge, posterior mass)` of every β3 cell.
    pub beta3_marginal: Vec<(f64, f64, f64)>,
    beta3_prior: Option<Gamma>,
}

impl QuadratureSummary {
    /// Posterior CDF of β3 at `value`; identically 1 without interaction.
    pub fn beta3_cdf(&self, value: f64) -> f64 {
        match &self.beta3_prior {
            None => f64::from(value >= 0.0),
            Some(g) => prior_shaped_cdf(&self.beta3_marginal, g, value),
        }
    }
}

fn prior_shaped_cdf(cells: &[(f64, f64, f64)], prior: &Gamma, value: f64) -> f64 {
    cells
        .iter()
        .map(|&(lo, hi, w)| {
            let (a, b) = (prior.cdf(lo), prior.cdf(hi));
            let frac = if b > a { (prior.cdf(value.clamp(lo, hi)) - a) / (b - a) } else { 0.0 };
            w * frac
        })
        .sum()
}

fn prior_shaped_median(cells: &[(f64, f64, f64)], prior: &Gamma) -> f64 {
    let mut acc = 0.0;
    for &(lo, hi, w) in cells {
        if acc + w >= 0.5 && w > 0.0 {
            let (a, b) = (prior.cdf(lo), prior.cdf(hi));
            return prior.inverse_cdf(a + (b - a) * (0.5 - acc) / w).clamp(lo, hi);
        }
        acc += w;
    }
    cells.last().map_or(f64::NAN, |c| c.1)
}

fn cell_cdf(cells: &[(f64, f64, f64)], value: f64) -> f64 {
    cells
        .iter()
        .map(|&(lo, hi, w)| w * ((value - lo) / (hi - lo)).clamp(0.0, 1.0))
        .sum()
}

/// Median of a distribution that is uniform within each `(lo, hi, mass)`
/// cell; cells must be contiguous and sorted.
fn cell_median(cells: &[(f64, f64, f64)]) -> f64 {
    let mut acc = 0.0;
    for &(lo, hi, w) in cells {
        if acc + w >= 0.5 && w > 0.0 {
            return lo + (hi - lo) * (0.5 - acc) / w;
        }
        acc += w;
    }
    cells.last().map_or(f64::NAN, |c| c.1)
}

fn beta3_edges(n: usize) -> Vec<f64> {
    let mut edges = Vec::with_capacity(n + 1);
    edges.push(0.0);
    let (lo, hi) = (BETA3_FIRST_EDGE.ln(), BETA3_UPPER.ln());
    for k in 0..n {
        edges.push((lo + (hi - lo) * k as f64 / (n - 1) as f64).exp());
    }
    edges
}

/// Marginal posterior medians of `(ρ00, ρ01, ρ10, β3)` by midpoint-rule
/// quadrature on a tensor grid.
pub fn quadrature_oracle(
    data: &TrialData,
    prior: &PriorSpec,
    link: LinkKind,
    interaction: bool,
    grid: GridSizes,
) -> Result<QuadratureSummary> {
    let sizes = [grid.rho01, grid.rho10, grid.ratio, grid.beta3];
    if sizes.iter().any(|&n| n < MIN_KNOTS) {
        return Err(Error::Config(format!(
            "quadrature needs at least {MIN_KNOTS} knots per axis, got {grid:?}"
        )));
    }
    if data.len() > MAX_RECORDS {
        return Err(Error::Argument(format!(
            "quadrature oracle is limited to {MAX_RECORDS} records, got {}",
            data.len()
        )));
    }
    prior.validate()?;

    let mid = |i: usize, n: usize| (i as f64 + 0.5) / n as f64;

    // β3 cells: (midpoint, prior mass).
    let gamma = Gamma::new(prior.shape(), prior.rate())
        .map_err(|e| Error::Config(format!("gamma prior: {e}")))?;
    let (beta_cells, beta_edges): (Vec<(f64, f64)>, Vec<f64>) = if interaction {
        let edges = beta3_edges(grid.beta3);
        let cells = edges
            .windows(2)
            .map(|w| (0.5 * (w[0] + w[1]), gamma.cdf(w[1]) - gamma.cdf(w[0])))
            .collect();
        (cells, edges)
    } else {
        (vec![(0.0, 1.0)], vec![])
    };
    let nb = beta_cells.len();

    let n_rho = grid.rho01 * grid.rho10 * grid.ratio;
    let mut log_w = vec![f64::NEG_INFINITY; n_rho * nb];
    let records = data.records();
    let mut max_lw = f64::NEG_INFINITY;

    for i in 0..grid.rho01 {
        let rho01 = mid(i, grid.rho01);
        for j in 0..grid.rho10 {
            let rho10 = mid(j, grid.rho10);
            for k in 0..grid.ratio {
                let rho00 = mid(k, grid.ratio) * rho01.min(rho10);
                let base = ((i * grid.rho10 + j) * grid.ratio + k) * nb;
                for (b, &(beta3, mass)) in beta_cells.iter().enumerate() {
                    if mass <= 0.0 {
                        continue;
                    }
                    let params = ModelParams {
                        rho00,
                        rho01,
                        rho10,
                        beta3,
                        link,
                        interaction_enabled: interaction,
                    };
                    let ll: f64 = records
                        .iter()
                        .map(|r| {
                            let g = prob_dlt(&params, r.dose);
                            if r.dlt == 1 { g.ln() } else { (1.0 - g).ln() }
                        })
                        .sum();
                    let lw = ll + mass.ln();
                    log_w[base + b] = lw;
                    if lw > max_lw {
                        max_lw = lw;
                    }
                }
            }
        }
    }
    if !max_lw.is_finite() {
        return Err(Error::Domain("posterior has no mass on the quadrature grid".into()));
    }

    let mut m01 = vec![0.0; grid.rho01];
    let mut m10 = vec![0.0; grid.rho10];
    let mut m_beta = vec![0.0; nb];
    let mut m_rho = vec![0.0; n_rho];
    let mut total = 0.0;
    for i in 0..grid.rho01 {
        for j in 0..grid.rho10 {
            for k in 0..grid.ratio {
                let cell = (i * grid.rho10 + j) * grid.ratio + k;
                for b in 0..nb {
                    let w = (log_w[cell * nb + b] - max_lw).exp();
                    m01[i] += w;
                    m10[j] += w;
                    m_beta[b] += w;
                    m_rho[cell] += w;
                    total += w;
                }
            }
        }
    }

    let cells_of = |masses: &[f64], n: usize| -> Vec<(f64, f64, f64)> {
        masses
            .iter()
            .enumerate()
            .map(|(i, w)| (i as f64 / n as f64, (i + 1) as f64 / n as f64, w / total))
            .collect()
    };
    let rho01 = cell_median(&cells_of(&m01, grid.rho01));
    let rho10 = cell_median(&cells_of(&m10, grid.rho10));

    // ρ00 = r · min(ρ01, ρ10): each ρ cell maps to an interval of ρ00.
    let mut rho00_cells = Vec::with_capacity(n_rho);
    for i in 0..grid.rho01 {
        for j in 0..grid.rho10 {
            let m = mid(i, grid.rho01).min(mid(j, grid.rho10));
            for k in 0..grid.ratio {
                let w = m_rho[(i * grid.rho10 + j) * grid.ratio + k] / total;
                let lo = k as f64 / grid.ratio as f64 * m;
                let hi = (k + 1) as f64 / grid.ratio as f64 * m;
                rho00_cells.push((lo, hi, w));
            }
        }
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..80 {
        let q = 0.5 * (lo + hi);
        if cell_cdf(&rho00_cells, q) < 0.5 {
            lo = q;
        } else {
            hi = q;
        }
    }
    let rho00 = 0.5 * (lo + hi);

    let (beta3, beta3_marginal) = if interaction {
        let cells: Vec<(f64, f64, f64)> = beta_edges
            .windows(2)
            .zip(&m_beta)
            .map(|(e, w)| (e[0], e[1], w / total))
            .collect();
        (prior_shaped_median(&cells, &gamma), cells)
    } else {
        (0.0, Vec::new())
    };

    Ok(QuadratureSummary {
        rho00,
        rho01,
        rho10,
        beta3,
        beta3_marginal,
        beta3_prior: interaction.then_some(gamma),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn prior_medians_without_data() {
        let data = TrialData::new(0.33).unwrap();
        let q = quadrature_oracle(
            &data,
            &PriorSpec::default(),
            LinkKind::Logistic,
            false,
            GridSizes::uniform(40),
        )
        .unwrap();
        assert_abs_diff_eq!(q.rho01, 0.5, epsilon = 1e-9);
        assert_abs_diff_eq!(q.rho10, 0.5, epsilon = 1e-9);
        assert_eq!(q.beta3, 0.0);
    }

    #[test]
    fn prior_beta3_median_matches_gamma() {
        let data = TrialData::new(0.33).unwrap();
        let prior = PriorSpec::default();
        let q = quadrature_oracle(&data, &prior, LinkKind::Logistic, true, GridSizes::uniform(24))
            .unwrap();
        let g = Gamma::new(prior.shape(), prior.rate()).unwrap();
        let exact = g.inverse_cdf(0.5);
        // Only the prior tail beyond BETA3_UPPER is lost.
        assert!((q.beta3 - exact).abs() / exact < 1e-4, "{} vs {exact}", q.beta3);
        assert_abs_diff_eq!(q.beta3_cdf(exact), 0.5, epsilon = 1e-4);
    }

    #[test]
    fn coarse_grid_is_rejected() {
        let data = TrialData::new(0.33).unwrap();
        let grid = GridSizes { rho01: 40, rho10: 40, ratio: 19, beta3: 40 };
        let err = quadrature_oracle(&data, &PriorSpec::default(), LinkKind::Logistic, true, grid);
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn cell_median_interpolates() {
        let cells = [(0.0, 1.0, 0.25), (1.0, 2.0, 0.5), (2.0, 3.0, 0.25)];
        assert_abs_diff_eq!(cell_median(&cells), 1.5);
        assert_abs_diff_eq!(cell_cdf(&cells, 1.5), 0.5);
    }
}
