//! Posterior of `(ρ00, ρ01, ρ10, β3)` given the trial data.
//!
//! Priors: `ρ01, ρ10 ~ U(0, 1)` independently, `ρ00 / min(ρ01, ρ10) ~ U(0, 1)`
//! given the other two, and `β3 ~ Gamma` parameterized by mean and variance.
//! The sampler is a Metropolis-within-Gibbs random walk on
//! `(logit ρ01, logit ρ10, logit(ρ00 / min(ρ01, ρ10)), ln β3)`.

mod quadrature;

pub use quadrature::{quadrature_oracle, GridSizes, QuadratureSummary};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::link::LinkKind;
use crate::model::{gamma_a_given_b, gamma_b_given_a, ModelParams, TrialData};

/// Prior hyperparameters for the interaction coefficient.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorSpec {
    pub gamma_mean: f64,
    pub gamma_variance: f64,
}

impl Default for PriorSpec {
    fn default() -> Self {
        PriorSpec { gamma_mean: 21.0, gamma_variance: 540.0 }
    }
}

impl PriorSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma_mean > 0.0 && self.gamma_variance > 0.0)
            || !self.gamma_mean.is_finite()
            || !self.gamma_variance.is_finite()
        {
            return Err(Error::Config(format!(
                "gamma prior needs positive finite mean and variance, got {self:?}"
            )));
        }
        Ok(())
    }

    pub fn shape(&self) -> f64 {
        self.gamma_mean * self.gamma_mean / self.gamma_variance
    }

    pub fn rate(&self) -> f64 {
        self.gamma_mean / self.gamma_variance
    }

    /// ln of the gamma density; `-inf` off the open support `(0, ∞)`.
    pub fn ln_gamma_pdf(&self, beta3: f64) -> f64 {
        if !(beta3 > 0.0) || !beta3.is_finite() {
            return f64::NEG_INFINITY;
        }
        let (a, b) = (self.shape(), self.rate());
        a * b.ln() - ln_gamma(a) + (a - 1.0) * beta3.ln() - b * beta3
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub n_iterations: usize,
    pub n_burnin: usize,
    pub thin: usize,
    pub seed: u64,
    pub adapt_interval: usize,
    pub target_accept: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            n_iterations: 6_000,
            n_burnin: 2_000,
            thin: 2,
            seed: 0,
            adapt_interval: 50,
            target_accept: 0.35,
        }
    }
}

/// Minimum number of retained draws a sampler configuration must produce.
pub const MIN_RETAINED_DRAWS: usize = 500;

impl SamplerConfig {
    pub fn with_seed(self, seed: u64) -> Self {
        SamplerConfig { seed, ..self }
    }

    pub fn retained(&self) -> usize {
        (self.n_iterations - self.n_burnin) / self.thin
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_iterations == 0 || self.thin == 0 || self.adapt_interval == 0 {
            return Err(Error::Config(
                "n_iterations, thin and adapt_interval must be positive".into(),
            ));
        }
        if self.n_burnin >= self.n_iterations {
            return Err(Error::Config(format!(
                "n_burnin ({}) must be below n_iterations ({})",
                self.n_burnin, self.n_iterations
            )));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::Config(format!(
                "target_accept must lie in (0,1), got {}",
                self.target_accept
            )));
        }
        if self.retained() < MIN_RETAINED_DRAWS {
            return Err(Error::Config(format!(
                "sampler retains {} draws; at least {MIN_RETAINED_DRAWS} required",
                self.retained()
            )));
        }
        Ok(())
    }
}

/// Retained MCMC draws; link and interaction flag are shared by all draws.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorDraws {
    draws: Vec<ModelParams>,
    acceptance_rates: Vec<f64>,
}

impl PosteriorDraws {
    pub fn new(draws: Vec<ModelParams>, acceptance_rates: Vec<f64>) -> Result<Self> {
        if draws.is_empty() {
            return Err(Error::State("posterior draws are empty".into()));
        }
        if let Some(bad) = draws.iter().find(|d| !d.is_valid()) {
            return Err(Error::Domain(format!("draw violates model constraints: {bad:?}")));
        }
        Ok(PosteriorDraws { draws, acceptance_rates })
    }

    pub fn draws(&self) -> &[ModelParams] {
        &self.draws
    }

    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    /// Post-burn-in acceptance rate per Gibbs block, in the order
    /// `ρ01, ρ10, ρ00 ratio, β3` (the last omitted without interaction).
    pub fn acceptance_rates(&self) -> &[f64] {
        &self.acceptance_rates
    }

    pub fn column(&self, f: impl Fn(&ModelParams) -> f64) -> Vec<f64> {
        self.draws.iter().map(f).collect()
    }
}

/// Binomial summary of all patients treated at one dose combination.
#[derive(Clone, Copy, Debug)]
struct DoseTally {
    x: f64,
    y: f64,
    toxic: f64,
    non_toxic: f64,
}

/// The data likelihood with patients pooled by identical dose.
#[derive(Clone, Debug)]
pub struct Likelihood {
    tallies: Vec<DoseTally>,
}

impl Likelihood {
    pub fn new(data: &TrialData) -> Self {
        let mut tallies: Vec<DoseTally> = Vec::new();
        for r in data.records() {
            let slot = tallies
                .iter_mut()
                .find(|t| t.x == r.dose.x && t.y == r.dose.y);
            let t = match slot {
                Some(t) => t,
                None => {
                    tallies.push(DoseTally { x: r.dose.x, y: r.dose.y, toxic: 0.0, non_toxic: 0.0 });
                    tallies.last_mut().expect("just pushed")
                }
            };
            if r.dlt == 1 {
                t.toxic += 1.0;
            } else {
                t.non_toxic += 1.0;
            }
        }
        Likelihood { tallies }
    }

    /// Σ T ln G + (1 − T) ln(1 − G).
    pub fn log_likelihood(&self, params: &ModelParams) -> f64 {
        let c = params.coefficients();
        let link = params.link;
        self.tallies
            .iter()
            .map(|t| {
                let u = c.predictor(t.x, t.y);
                let mut ll = 0.0;
                if t.toxic > 0.0 {
                    ll += t.toxic * link.log_cdf(u);
                }
                if t.non_toxic > 0.0 {
                    ll += t.non_toxic * link.log_sf(u);
                }
                ll
            })
            .sum()
    }
}

/// ln of the joint prior density of `(ρ00, ρ01, ρ10)`: `-ln min(ρ01, ρ10)`
/// on the constrained region.
pub fn ln_rho_prior(params: &ModelParams) -> f64 {
    let m = params.rho01.min(params.rho10);
    if params.rho00 > 0.0 && params.rho00 < m && params.rho01 < 1.0 && params.rho10 < 1.0 {
        -m.ln()
    } else {
        f64::NEG_INFINITY
    }
}

/// Unnormalized log posterior. Parameters outside the support yield `-inf`.
pub fn log_posterior(params: &ModelParams, data: &TrialData, prior: &PriorSpec) -> f64 {
    log_posterior_with(params, &Likelihood::new(data), prior)
}

fn log_posterior_with(params: &ModelParams, likelihood: &Likelihood, prior: &PriorSpec) -> f64 {
    let mut lp = ln_rho_prior(params);
    if params.interaction_enabled {
        lp += prior.ln_gamma_pdf(params.beta3);
    } else if params.beta3 != 0.0 {
        return f64::NEG_INFINITY;
    }
    if lp == f64::NEG_INFINITY {
        return lp;
    }
    lp + likelihood.log_likelihood(params)
}

#[inline]
fn logistic(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

/// Sampler state in unconstrained coordinates.
#[derive(Clone, Copy, Debug)]
struct Unconstrained([f64; 4]);

impl Unconstrained {
    fn to_params(self, link: LinkKind, interaction: bool) -> ModelParams {
        let [u01, u10, u_ratio, u_beta] = self.0;
        let rho01 = logistic(u01);
        let rho10 = logistic(u10);
        let rho00 = logistic(u_ratio) * rho01.min(rho10);
        ModelParams {
            rho00,
            rho01,
            rho10,
            beta3: if interaction { u_beta.exp() } else { 0.0 },
            link,
            interaction_enabled: interaction,
        }
    }

    /// ln |∂(ρ01, ρ10, ρ00, β3) / ∂u|.
    fn log_jacobian(self, params: &ModelParams, interaction: bool) -> f64 {
        let m = params.rho01.min(params.rho10);
        let ratio = params.rho00 / m;
        let mut lj = (params.rho01 * (1.0 - params.rho01)).ln()
            + (params.rho10 * (1.0 - params.rho10)).ln()
            + (ratio * (1.0 - ratio)).ln()
            + m.ln();
        if interaction {
            lj += self.0[3];
        }
        lj
    }
}

fn log_target(
    u: Unconstrained,
    likelihood: &Likelihood,
    prior: &PriorSpec,
    link: LinkKind,
    interaction: bool,
) -> (f64, ModelParams) {
    let params = u.to_params(link, interaction);
    let lp = log_posterior_with(&params, likelihood, prior);
    if lp == f64::NEG_INFINITY || lp.is_nan() {
        return (f64::NEG_INFINITY, params);
    }
    (lp + u.log_jacobian(&params, interaction), params)
}

/// Draws from the posterior with an adaptive Metropolis-within-Gibbs random
/// walk. Step sizes adapt during burn-in only, so the retained chain is a
/// time-homogeneous Markov chain. Output is a pure function of the inputs
/// and `config.seed`.
pub fn sample_posterior(
    data: &TrialData,
    prior: &PriorSpec,
    config: &SamplerConfig,
    link: LinkKind,
    interaction: bool,
) -> Result<PosteriorDraws> {
    config.validate()?;
    prior.validate()?;
    let likelihood = Likelihood::new(data);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n_blocks = if interaction { 4 } else { 3 };

    // Start at ρ01 = ρ10 = 0.5, ρ00 = 0.25, β3 = prior mean.
    let mut state = Unconstrained([0.0, 0.0, 0.0, prior.gamma_mean.ln()]);
    let (mut current_lp, mut current) = log_target(state, &likelihood, prior, link, interaction);
    if !current_lp.is_finite() {
        return Err(Error::Domain("posterior is degenerate at the initial state".into()));
    }

    let mut log_step = [0.0f64; 4];
    let mut batch_accepts = [0usize; 4];
    let mut batch_index = 0usize;
    let mut kept_accepts = [0usize; 4];
    let mut kept_proposals = 0usize;
    let mut draws = Vec::with_capacity(config.retained() + 1);

    for iter in 0..config.n_iterations {
        for block in 0..n_blocks {
            let z: f64 = rng.sample(StandardNormal);
            let mut proposal = state;
            proposal.0[block] += log_step[block].exp() * z;
            let (lp, params) = log_target(proposal, &likelihood, prior, link, interaction);
            let accept = lp > f64::NEG_INFINITY && {
                let log_u = rng.random::<f64>().ln();
                log_u < lp - current_lp
            };
            if accept {
                state = proposal;
                current_lp = lp;
                current = params;
                if iter < config.n_burnin {
                    batch_accepts[block] += 1;
                } else {
                    kept_accepts[block] += 1;
                }
            }
        }

        if iter < config.n_burnin {
            if (iter + 1) % config.adapt_interval == 0 {
                batch_index += 1;
                let gain = (2.0 / (batch_index as f64).sqrt()).min(1.0);
                for block in 0..n_blocks {
                    let rate = batch_accepts[block] as f64 / config.adapt_interval as f64;
                    log_step[block] = (log_step[block] + gain * (rate - config.target_accept))
                        .clamp(-8.0, 3.0);
                    batch_accepts[block] = 0;
                }
            }
        } else {
            kept_proposals += 1;
            if (iter - config.n_burnin + 1) % config.thin == 0 {
                draws.push(current);
            }
        }
    }

    let acceptance_rates = kept_accepts[..n_blocks]
        .iter()
        .map(|&a| a as f64 / kept_proposals.max(1) as f64)
        .collect();
    PosteriorDraws::new(draws, acceptance_rates)
}

/// Type-7 (linear interpolation of order statistics) quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Type-7 quantile of unsorted data.
pub fn quantile(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, p)
}

/// Which conditional MTD is being queried.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum GammaAxis {
    /// MTD of agent A given agent B's dose.
    #[serde(rename = "a_given_b")]
    AgivenB,
    /// MTD of agent B given agent A's dose.
    #[serde(rename = "b_given_a")]
    BgivenA,
}

/// Per-draw conditional MTD, clipped into `[0, 1]`.
pub fn clipped_gamma_values(
    draws: &PosteriorDraws,
    theta: f64,
    axis: GammaAxis,
    conditioning_dose: f64,
) -> Vec<f64> {
    draws
        .draws()
        .iter()
        .map(|d| {
            let g = match axis {
                GammaAxis::AgivenB => gamma_a_given_b(d, theta, conditioning_dose),
                GammaAxis::BgivenA => gamma_b_given_a(d, theta, conditioning_dose),
            };
            // NaN cannot arise under the model constraints; map it low anyway.
            if g.is_nan() { 0.0 } else { g.clamp(0.0, 1.0) }
        })
        .collect()
}

/// Posterior α-quantile of the clipped conditional MTD.
pub fn posterior_quantile_gamma(
    draws: &PosteriorDraws,
    theta: f64,
    axis: GammaAxis,
    conditioning_dose: f64,
    alpha: f64,
) -> Result<f64> {
    if draws.is_empty() {
        return Err(Error::State("no posterior draws".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!("alpha must lie in (0,1), got {alpha}")));
    }
    let values = clipped_gamma_values(draws, theta, axis, conditioning_dose);
    Ok(quantile(&values, alpha))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::DosePair;
    use approx::assert_abs_diff_eq;

    fn params(rho00: f64, rho01: f64, rho10: f64, beta3: f64) -> ModelParams {
        ModelParams::new(rho00, rho01, rho10, beta3, LinkKind::Logistic, beta3 > 0.0).unwrap()
    }

    #[test]
    fn gamma_hyperparameters() {
        let p = PriorSpec::default();
        assert_abs_diff_eq!(p.shape(), 441.0 / 540.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p.shape(), 0.816_666_7, epsilon = 1e-6);
        assert_abs_diff_eq!(p.rate(), 0.038_888_9, epsilon = 1e-7);
    }

    #[test]
    fn empty_data_gives_prior_only() {
        let data = TrialData::new(0.33).unwrap();
        let p = params(0.1, 0.4, 0.7, 0.0);
        assert_abs_diff_eq!(
            log_posterior(&p, &data, &PriorSpec::default()),
            -(0.4f64.ln()),
            epsilon = 1e-14
        );
    }

    #[test]
    fn single_toxic_record_at_origin_adds_ln_rho00() {
        let prior = PriorSpec::default();
        let mut data = TrialData::new(0.33).unwrap();
        let p = params(0.1, 0.4, 0.7, 12.0);
        let base = log_posterior(&p, &data, &prior);
        data.push(DosePair::MIN, 1).unwrap();
        assert_abs_diff_eq!(log_posterior(&p, &data, &prior) - base, 0.1f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn likelihood_matches_direct_sum() {
        let data = TrialData::from_outcomes(
            0.33,
            [
                (DosePair::MIN, 0),
                (DosePair::MIN, 1),
                (DosePair { x: 0.2, y: 0.0 }, 0),
                (DosePair { x: 0.0, y: 0.2 }, 1),
                (DosePair { x: 0.2, y: 0.0 }, 1),
            ],
        )
        .unwrap();
        for link in LinkKind::ALL {
            let p = ModelParams::new(0.05, 0.5, 0.3, 7.0, link, true).unwrap();
            let direct: f64 = data
                .records()
                .iter()
                .map(|r| {
                    let g = crate::model::prob_dlt(&p, r.dose);
                    if r.dlt == 1 { g.ln() } else { (1.0 - g).ln() }
                })
                .sum();
            assert_abs_diff_eq!(Likelihood::new(&data).log_likelihood(&p), direct, epsilon = 1e-10);
        }
    }

    #[test]
    fn constraint_violations_are_rejected_not_errors() {
        let data = TrialData::new(0.33).unwrap();
        let prior = PriorSpec::default();
        let bad = ModelParams {
            rho00: 0.5,
            rho01: 0.4,
            rho10: 0.7,
            beta3: 1.0,
            link: LinkKind::Logistic,
            interaction_enabled: true,
        };
        assert_eq!(log_posterior(&bad, &data, &prior), f64::NEG_INFINITY);
        let no_inter_with_beta = ModelParams { rho00: 0.1, interaction_enabled: false, ..bad };
        assert_eq!(log_posterior(&no_inter_with_beta, &data, &prior), f64::NEG_INFINITY);
    }

    #[test]
    fn sampler_config_validation() {
        assert!(SamplerConfig::default().validate().is_ok());
        let short = SamplerConfig { n_iterations: 1_000, n_burnin: 600, ..Default::default() };
        assert!(short.validate().is_err());
        let burn = SamplerConfig { n_burnin: 6_000, ..Default::default() };
        assert!(burn.validate().is_err());
    }

    #[test]
    fn sampler_is_deterministic_and_respects_constraints() {
        let data = TrialData::from_outcomes(
            0.33,
            [(DosePair::MIN, 0), (DosePair::MIN, 0), (DosePair { x: 0.2, y: 0.0 }, 1)],
        )
        .unwrap();
        let cfg = SamplerConfig::default().with_seed(7);
        let a = sample_posterior(&data, &PriorSpec::default(), &cfg, LinkKind::Logistic, true).unwrap();
        let b = sample_posterior(&data, &PriorSpec::default(), &cfg, LinkKind::Logistic, true).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 2_000);
        assert!(a.draws().iter().all(|d| d.is_valid() && d.beta3 > 0.0));
        assert_eq!(a.acceptance_rates().len(), 4);

        let c = sample_posterior(&data, &PriorSpec::default(), &cfg, LinkKind::Logistic, false).unwrap();
        assert!(c.draws().iter().all(|d| d.beta3 == 0.0 && !d.interaction_enabled));
        assert_eq!(c.acceptance_rates().len(), 3);
    }

    #[test]
    fn quantile_type7() {
        assert_eq!(quantile(&[3.0, 1.0], 0.5), 2.0);
        assert_eq!(quantile(&[1.0, 2.0, 3.0, 4.0, 5.0], 0.25), 2.0);
        assert_abs_diff_eq!(quantile(&[1.0, 2.0, 3.0, 4.0], 0.5), 2.5);
        assert_eq!(quantile(&[9.0], 0.1), 9.0);
    }

    #[test]
    fn quantile_gamma_degenerate_draws() {
        let p = params(0.01, 0.6, 0.6, 40.0);
        let draws = PosteriorDraws::new(vec![p; 10], vec![]).unwrap();
        let expected = gamma_a_given_b(&p, 0.33, 0.0).clamp(0.0, 1.0);
        for alpha in [0.1, 0.25, 0.5, 0.9] {
            let q = posterior_quantile_gamma(&draws, 0.33, GammaAxis::AgivenB, 0.0, alpha).unwrap();
            assert_abs_diff_eq!(q, expected, epsilon = 1e-15);
        }
        assert!(posterior_quantile_gamma(&draws, 0.33, GammaAxis::AgivenB, 0.0, 0.0).is_err());
    }

    #[test]
    fn quantile_gamma_two_point_and_monotone() {
        let a = params(0.01, 0.6, 0.6, 40.0);
        let b = params(0.05, 0.5, 0.5, 10.0);
        let draws = PosteriorDraws::new(vec![a, b], vec![]).unwrap();
        let ga = gamma_b_given_a(&a, 0.33, 0.1);
        let gb = gamma_b_given_a(&b, 0.33, 0.1);
        let mid = posterior_quantile_gamma(&draws, 0.33, GammaAxis::BgivenA, 0.1, 0.5).unwrap();
        assert_abs_diff_eq!(mid, 0.5 * (ga + gb), epsilon = 1e-12);
        let q25 = posterior_quantile_gamma(&draws, 0.33, GammaAxis::BgivenA, 0.1, 0.25).unwrap();
        assert!(q25 <= mid);
    }

    #[test]
    fn empty_draws_are_a_state_error() {
        assert!(matches!(PosteriorDraws::new(vec![], vec![]), Err(Error::State(_))));
    }
}
