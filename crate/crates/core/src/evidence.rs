//! Marginal likelihood estimation.
//!
//! * [`loglik_product`]: the filter's running product of per-step normalising
//!   constants, an unbiased estimate of `p(y | theta)`.
//! * [`chib_evidence`]: `log p(y) = log p(theta*) + log p(y | theta*) - log p(theta* | y)`
//!   with the numerator from fresh filter replicates and the denominator
//!   averaged over PMMH trajectories, for the LG model with unknown `phi`.
//! * [`prior_evidence`]: prior importance sampling with filter likelihoods.
//!
//! Replicates are averaged on the natural scale, never on the log scale.

use rayon::prelude::*;
use serde::Serialize;

use crate::diagnostics::{burn_in_count, iact, DEFAULT_MAX_LAG};
use crate::error::EvidenceError;
use crate::model::{kalman_loglik, LgPhiFamily, ModelFamily, TimeSeries, LN_2PI};
use crate::pmmh::ChainOutput;
use crate::prior::{log_prior, Marginal, PriorSpec};
use crate::rng::{self, domain};
use crate::smc::{bootstrap_filter, FilterConfig};

/// `log((1/n) sum exp(x_i))`. `-inf` entries count as zeros.
pub fn log_mean_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let s: f64 = xs.iter().map(|x| (x - max).exp()).sum();
    max + s.ln() - (xs.len() as f64).ln()
}

/// Delta-method standard error of `log_mean_exp(xs)` given an effective
/// sample size.
fn log_mean_exp_se(xs: &[f64], ess: f64) -> f64 {
    let n = xs.len();
    if n < 2 {
        return f64::NAN;
    }
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = xs.iter().map(|x| (x - max).exp()).collect();
    let mean = w.iter().sum::<f64>() / n as f64;
    let var = w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    var.sqrt() / mean / ess.sqrt()
}

/// Sum of per-step log normalising constants.
pub fn loglik_product(per_step_log_z: &[f64]) -> Result<f64, EvidenceError> {
    let mut total = 0.0;
    for (step, &value) in per_step_log_z.iter().enumerate() {
        if !value.is_finite() {
            return Err(EvidenceError::Degenerate { step, value });
        }
        total += value;
    }
    Ok(total)
}

/// Untruncated `(mean, sd)` of a Gaussian-type prior on `phi`.
fn gaussian_prior(prior: &Marginal) -> Result<(f64, f64), EvidenceError> {
    match *prior {
        Marginal::Normal { mean, sd } | Marginal::TruncatedNormal { mean, sd, .. } => Ok((mean, sd)),
        _ => Err(EvidenceError::NonGaussianPrior),
    }
}

/// Sufficient statistics of an AR(1) path for `phi`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArStats {
    /// `sum_{t>=2} x_{t-1}^2`
    pub lag_sq: f64,
    /// `sum_{t>=2} x_t x_{t-1}`
    pub cross: f64,
    /// `sum_{t>=2} x_t^2`
    pub lead_sq: f64,
    pub first_sq: f64,
}

impl ArStats {
    pub fn new(states: &[f64]) -> Result<Self, EvidenceError> {
        if states.len() < 2 {
            return Err(EvidenceError::InsufficientData(states.len()));
        }
        let mut s = ArStats {
            lag_sq: 0.0,
            cross: 0.0,
            lead_sq: 0.0,
            first_sq: states[0] * states[0],
        };
        for w in states.windows(2) {
            s.lag_sq += w[0] * w[0];
            s.cross += w[0] * w[1];
            s.lead_sq += w[1] * w[1];
        }
        Ok(s)
    }
}

/// Conjugate normal-regression density of `phi | x` at `phi_star`:
/// Gaussian with variance `v = (1/s0^2 + sum x_{t-1}^2 / sx^2)^-1` and mean
/// `v (m0/s0^2 + sum x_t x_{t-1} / sx^2)`.
///
/// Uses the untruncated prior and treats `x_1` as carrying no information on
/// `phi`. [`exact_phi_log_density`] drops both simplifications.
pub fn conditional_param_density(
    phi_star: f64,
    states: &[f64],
    prior: &Marginal,
    sigma_x: f64,
) -> Result<f64, EvidenceError> {
    let (m0, s0) = gaussian_prior(prior)?;
    let stats = ArStats::new(states)?;
    let q = sigma_x * sigma_x;
    let precision = 1.0 / (s0 * s0) + stats.lag_sq / q;
    let v = 1.0 / precision;
    let mean = v * (m0 / (s0 * s0) + stats.cross / q);
    Ok(-0.5 * (LN_2PI + v.ln() + (phi_star - mean).powi(2) / v))
}

/// How the Chib denominator evaluates `p(phi | x, y)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PhiConditional {
    /// [`conditional_param_density`].
    Conjugate,
    /// [`exact_phi_log_density`].
    #[default]
    Exact,
}

const EXACT_NODES: usize = 4096;

/// Quadrature grid for the exact conditional, in `phi = sin(u)` coordinates
/// so that the `sqrt(1 - phi^2)` factor of the stationary law is smooth.
pub struct PhiConditionalGrid {
    phi: Vec<f64>,
    /// Prior, stationary normaliser, Jacobian and panel width per node.
    base: Vec<f64>,
    sigma_x: f64,
    prior: Marginal,
}

impl PhiConditionalGrid {
    pub fn new(prior: &Marginal, sigma_x: f64) -> Self {
        let (lo, hi) = prior.support();
        let a = lo.max(-1.0).asin();
        let b = hi.min(1.0).asin();
        let h = (b - a) / EXACT_NODES as f64;
        let mut phi = Vec::with_capacity(EXACT_NODES);
        let mut base = Vec::with_capacity(EXACT_NODES);
        for k in 0..EXACT_NODES {
            let u = a + (k as f64 + 0.5) * h;
            let p = u.sin();
            phi.push(p);
            base.push(prior.log_density(p) + 0.5 * (1.0 - p * p).ln() + u.cos().ln() + h.ln());
        }
        PhiConditionalGrid {
            phi,
            base,
            sigma_x,
            prior: *prior,
        }
    }

    /// Unnormalised `log p(phi | x)` without the node weights.
    fn log_kernel(&self, phi: f64, s: &ArStats) -> f64 {
        let q = self.sigma_x * self.sigma_x;
        let transitions = -(s.lead_sq - 2.0 * phi * s.cross + phi * phi * s.lag_sq) / (2.0 * q);
        let initial = -(1.0 - phi * phi) * s.first_sq / (2.0 * q);
        transitions + initial
    }

    /// Exact `log p(phi | x)` at `phi`.
    pub fn log_density(&self, phi: f64, s: &ArStats) -> f64 {
        if phi.is_nan() || phi.abs() >= 1.0 {
            return f64::NEG_INFINITY;
        }
        let lp = self.prior.log_density(phi);
        if lp == f64::NEG_INFINITY {
            return lp;
        }
        let terms: Vec<f64> = self
            .phi
            .iter()
            .zip(&self.base)
            .map(|(&p, &b)| b + self.log_kernel(p, s))
            .collect();
        let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_norm = max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln();
        lp + 0.5 * (1.0 - phi * phi).ln() + self.log_kernel(phi, s) - log_norm
    }
}

/// Exact log full conditional of `phi` given an LG state path: prior (with
/// any truncation) times the stationary law of `x_1` times the Gaussian
/// transitions, normalised by quadrature over `(-1, 1)`.
pub fn exact_phi_log_density(
    phi_star: f64,
    states: &[f64],
    prior: &Marginal,
    sigma_x: f64,
) -> Result<f64, EvidenceError> {
    let stats = ArStats::new(states)?;
    Ok(PhiConditionalGrid::new(prior, sigma_x).log_density(phi_star, &stats))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ThetaStarRule {
    Median,
    Mean,
    Fixed(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChibOptions {
    pub filter: FilterConfig,
    pub replicates: usize,
    pub seed: u64,
    pub burn_in_fraction: f64,
    pub theta_star: ThetaStarRule,
    pub conditional: PhiConditional,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvidenceResult {
    pub log_evidence: f64,
    pub numerator_replicates: usize,
    /// Empty for prior importance sampling.
    pub theta_star: Vec<f64>,
    /// Delta-method standard error of `log_evidence`.
    pub standard_error_proxy: f64,
    pub log_prior_at_star: Option<f64>,
    pub log_numerator: f64,
    pub log_denominator: Option<f64>,
    pub retained_trajectories: usize,
    pub failed_replicates: usize,
}

/// Run `replicates` independent filters at `theta` and return their log
/// estimates in replicate order. Failures come back as `Err` strings.
fn filter_replicates<F: ModelFamily>(
    family: &F,
    data: &TimeSeries,
    filter: &FilterConfig,
    seed: u64,
    replicates: usize,
    theta_for: impl Fn(usize) -> Vec<f64> + Sync,
    domain_tag: u64,
) -> Vec<Result<f64, String>> {
    (0..replicates)
        .into_par_iter()
        .map(|r| {
            let theta = theta_for(r);
            let model = family.build(&theta).map_err(|e| e.to_string())?;
            let filter_seed = rng::child_seed(seed, &[domain_tag, r as u64, 1]);
            bootstrap_filter(&model, data, filter, filter_seed)
                .map(|out| out.log_lik_hat)
                .map_err(|e| format!("replicate {r} at {theta:?}: {e}"))
        })
        .collect()
}

fn post_burn_in(chain: &ChainOutput, fraction: f64) -> Result<(usize, &[Vec<f64>]), EvidenceError> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(EvidenceError::Input(format!("burn-in fraction {fraction} outside [0, 1)")));
    }
    let m = chain.n_iter();
    let burn = burn_in_count(m, fraction);
    if burn >= m {
        return Err(EvidenceError::Input("no parameter samples after burn-in".into()));
    }
    Ok((burn, &chain.theta_trace[burn + 1..]))
}

fn select_theta_star(rows: &[Vec<f64>], rule: &ThetaStarRule) -> Vec<f64> {
    let dim = rows[0].len();
    match rule {
        ThetaStarRule::Fixed(theta) => theta.clone(),
        ThetaStarRule::Mean => (0..dim)
            .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / rows.len() as f64)
            .collect(),
        ThetaStarRule::Median => (0..dim)
            .map(|j| {
                let mut xs: Vec<f64> = rows.iter().map(|r| r[j]).collect();
                xs.sort_by(f64::total_cmp);
                crate::diagnostics::quantile(&xs, 0.5)
            })
            .collect(),
    }
}

/// Chib's identity for the LG model with unknown `phi`.
pub fn chib_evidence(
    chain: &ChainOutput,
    data: &TimeSeries,
    family: &LgPhiFamily,
    prior: &PriorSpec,
    options: &ChibOptions,
) -> Result<EvidenceResult, EvidenceError> {
    if prior.dim() != 1 {
        return Err(EvidenceError::Input(format!(
            "Chib estimator needs a one-parameter prior on phi, got {}",
            prior.dim()
        )));
    }
    if options.replicates == 0 {
        return Err(EvidenceError::Input("need at least one numerator replicate".into()));
    }
    let phi_prior = prior.marginals[0];
    let (burn, rows) = post_burn_in(chain, options.burn_in_fraction)?;
    let theta_star = select_theta_star(rows, &options.theta_star);
    let phi_star = theta_star[0];

    let log_prior_at_star = log_prior(&theta_star, prior);
    if !log_prior_at_star.is_finite() {
        return Err(EvidenceError::Input(format!(
            "theta* = {theta_star:?} has zero prior density"
        )));
    }

    let retained: Vec<&TimeSeries> = chain
        .trajectories
        .iter()
        .filter(|(iter, _)| *iter > burn)
        .map(|(_, path)| path)
        .collect();
    if retained.is_empty() {
        return Err(EvidenceError::EmptyRetained);
    }

    let results = filter_replicates(
        family,
        data,
        &options.filter,
        options.seed,
        options.replicates,
        |_| theta_star.clone(),
        domain::EVIDENCE_NUMERATOR,
    );
    let messages: Vec<String> = results.iter().filter_map(|r| r.clone().err()).collect();
    if !messages.is_empty() {
        return Err(EvidenceError::ReplicatesFailed {
            failed: messages.len(),
            total: options.replicates,
            messages,
        });
    }
    let estimates: Vec<f64> = results.into_iter().map(|r| r.unwrap()).collect();
    let log_numerator = log_mean_exp(&estimates);
    let numerator_se = log_mean_exp_se(&estimates, estimates.len() as f64);

    let conditionals: Vec<f64> = match options.conditional {
        PhiConditional::Conjugate => retained
            .iter()
            .map(|x| conditional_param_density(phi_star, x, &phi_prior, family.sigma_x))
            .collect::<Result<_, _>>()?,
        PhiConditional::Exact => {
            let grid = PhiConditionalGrid::new(&phi_prior, family.sigma_x);
            retained
                .par_iter()
                .map(|x| ArStats::new(x).map(|s| grid.log_density(phi_star, &s)))
                .collect::<Result<_, _>>()?
        }
    };
    let log_denominator = log_mean_exp(&conditionals);
    let denom_ess = {
        let max = conditionals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = conditionals.iter().map(|c| (c - max).exp()).collect();
        let n = w.len();
        match n {
            0 | 1 => n as f64,
            _ => iact(&w, DEFAULT_MAX_LAG.min(n - 1))
                .map(|r| n as f64 / r.value.max(1.0))
                .unwrap_or(n as f64),
        }
    };
    let denominator_se = log_mean_exp_se(&conditionals, denom_ess);

    Ok(EvidenceResult {
        log_evidence: log_prior_at_star + log_numerator - log_denominator,
        numerator_replicates: options.replicates,
        theta_star,
        standard_error_proxy: (numerator_se.powi(2) + denominator_se.powi(2)).sqrt(),
        log_prior_at_star: Some(log_prior_at_star),
        log_numerator,
        log_denominator: Some(log_denominator),
        retained_trajectories: retained.len(),
        failed_replicates: 0,
    })
}

/// `log((1/K) sum_k p^(y | theta_k))` with `theta_k` drawn from the prior.
/// Failed filter runs count as zero likelihood.
pub fn prior_evidence<F: ModelFamily>(
    family: &F,
    data: &TimeSeries,
    prior: &PriorSpec,
    draws: usize,
    filter: &FilterConfig,
    seed: u64,
) -> Result<EvidenceResult, EvidenceError> {
    if draws == 0 {
        return Err(EvidenceError::Input("need at least one prior draw".into()));
    }
    if prior.dim() != family.dim() {
        return Err(EvidenceError::Input(format!(
            "prior has {} marginals, model has {} parameters",
            prior.dim(),
            family.dim()
        )));
    }
    let results = filter_replicates(
        family,
        data,
        filter,
        seed,
        draws,
        |k| prior.sample(&mut rng::stream(seed, &[domain::EVIDENCE_PRIOR, k as u64])),
        domain::EVIDENCE_PRIOR,
    );
    let failed = results.iter().filter(|r| r.is_err()).count();
    if failed == draws {
        return Err(EvidenceError::ReplicatesFailed {
            failed,
            total: draws,
            messages: results.into_iter().filter_map(Result::err).take(10).collect(),
        });
    }
    let estimates: Vec<f64> = results
        .into_iter()
        .map(|r| r.unwrap_or(f64::NEG_INFINITY))
        .collect();
    let log_evidence = log_mean_exp(&estimates);
    Ok(EvidenceResult {
        log_evidence,
        numerator_replicates: draws,
        theta_star: Vec::new(),
        standard_error_proxy: log_mean_exp_se(&estimates, draws as f64),
        log_prior_at_star: None,
        log_numerator: log_evidence,
        log_denominator: None,
        retained_trajectories: 0,
        failed_replicates: failed,
    })
}

/// `log int p(y | phi) p(phi) dphi` on a midpoint grid of `nodes` points over
/// `(-1, 1)` with the exact Kalman likelihood.
pub fn lg_quadrature_log_evidence(
    data: &TimeSeries,
    family: &LgPhiFamily,
    prior: &PriorSpec,
    nodes: usize,
) -> Result<f64, EvidenceError> {
    if prior.dim() != 1 || nodes == 0 {
        return Err(EvidenceError::Input("need a one-parameter prior and at least one node".into()));
    }
    let h = 2.0 / nodes as f64;
    let mut terms = Vec::with_capacity(nodes);
    for k in 0..nodes {
        let phi = -1.0 + (k as f64 + 0.5) * h;
        let lp = log_prior(&[phi], prior);
        if lp == f64::NEG_INFINITY {
            continue;
        }
        let params = family.build(&[phi])?;
        terms.push(kalman_loglik(&params, data)? + lp);
    }
    let n = terms.len() as f64;
    Ok(log_mean_exp(&terms) + n.ln() + h.ln())
}
