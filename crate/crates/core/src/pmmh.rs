//! Particle marginal Metropolis-Hastings.
//!
//! Each iteration proposes `theta*` by a random walk in transformed
//! coordinates, runs one fresh particle filter at `theta*`, and accepts with
//! probability
//!
//! ```text
//! min(1, exp[(log p^(y|theta*) + log pi(theta*)) - (log p^(y|theta) + log pi(theta))])
//! ```
//!
//! where `log p^(y|theta)` is the estimate stored when `theta` was accepted.
//! The incumbent estimate is never recomputed; that is what makes the chain
//! target the exact posterior for any number of particles. On acceptance the
//! latent path is refreshed by drawing one lineage from the new filter.

use log::warn;
use rand::Rng;

use crate::error::{ChainError, SmcError};
use crate::model::{ModelFamily, TimeSeries};
use crate::prior::PriorSpec;
use crate::proposal::{propose, transformed_log_prior, ProposalSpec};
use crate::rng::{self, domain};
use crate::smc::{bootstrap_filter, sample_trajectory, FilterConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct ChainConfig {
    pub n_iter: usize,
    pub filter: FilterConfig,
    pub seed: u64,
    /// Keep the trajectory of every `thin`-th iteration (iteration 0 included).
    pub thin: usize,
    /// Starting point in natural coordinates; drawn from the prior when `None`.
    pub init: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub theta: Vec<f64>,
    /// Log prior in transformed coordinates.
    pub log_prior: f64,
    /// Filter estimate obtained when `theta` was accepted.
    pub log_lik_hat: f64,
    pub trajectory: TimeSeries,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainOutput {
    pub param_names: Vec<String>,
    /// `M + 1` rows: the initial state, then the state after each iteration.
    pub theta_trace: Vec<Vec<f64>>,
    pub loglik_trace: Vec<f64>,
    /// `M` flags, one per iteration.
    pub accept_flags: Vec<bool>,
    /// `(iteration, path)` for every retained iteration.
    pub trajectories: Vec<(usize, TimeSeries)>,
    pub filter_runs: u64,
    /// Proposals auto-rejected because their filter run failed.
    pub failed_proposals: u64,
    pub config: ChainConfig,
}

impl ChainOutput {
    pub fn n_iter(&self) -> usize {
        self.accept_flags.len()
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.accept_flags.is_empty() {
            return f64::NAN;
        }
        self.accept_flags.iter().filter(|&&a| a).count() as f64 / self.accept_flags.len() as f64
    }

    /// Column `j` of the parameter trace.
    pub fn param_trace(&self, j: usize) -> Vec<f64> {
        self.theta_trace.iter().map(|row| row[j]).collect()
    }
}

/// `min(1, exp(ratio))` for the pseudo-marginal ratio.
pub fn acceptance_probability(
    log_lik_proposed: f64,
    log_prior_proposed: f64,
    log_lik_current: f64,
    log_prior_current: f64,
) -> f64 {
    let log_ratio = (log_lik_proposed + log_prior_proposed) - (log_lik_current + log_prior_current);
    if log_ratio.is_nan() {
        return 0.0;
    }
    log_ratio.min(0.0).exp()
}

/// Sampler bound to one dataset, model family, prior and proposal.
pub struct Pmmh<'a, F: ModelFamily> {
    family: &'a F,
    data: &'a TimeSeries,
    prior: &'a PriorSpec,
    proposal: &'a ProposalSpec,
    filter: FilterConfig,
    seed: u64,
    filter_runs: u64,
    failed_proposals: u64,
}

impl<'a, F: ModelFamily> Pmmh<'a, F> {
    pub fn new(
        family: &'a F,
        data: &'a TimeSeries,
        prior: &'a PriorSpec,
        proposal: &'a ProposalSpec,
        filter: FilterConfig,
        seed: u64,
    ) -> Result<Self, ChainError> {
        let dim = family.dim();
        if prior.dim() != dim {
            return Err(ChainError::Dimension {
                model: dim,
                what: "prior",
                got: prior.dim(),
            });
        }
        if proposal.dim() != dim {
            return Err(ChainError::Dimension {
                model: dim,
                what: "proposal",
                got: proposal.dim(),
            });
        }
        prior.validate().map_err(ChainError::Init)?;
        proposal.validate()?;
        Ok(Pmmh {
            family,
            data,
            prior,
            proposal,
            filter,
            seed,
            filter_runs: 0,
            failed_proposals: 0,
        })
    }

    /// Number of particle filters run so far.
    pub fn filter_runs(&self) -> u64 {
        self.filter_runs
    }

    pub fn failed_proposals(&self) -> u64 {
        self.failed_proposals
    }

    /// Run the filter at `theta` for iteration `iter` and draw a lineage.
    fn estimate(&mut self, theta: &[f64], iter: usize) -> Result<(f64, TimeSeries), SmcError> {
        let model = self.family.build(theta)?;
        self.filter_runs += 1;
        let filter_seed = rng::child_seed(self.seed, &[domain::FILTER, iter as u64]);
        let out = bootstrap_filter(&model, self.data, &self.filter, filter_seed)?;
        let mut lineage_rng = rng::stream(self.seed, &[domain::LINEAGE, iter as u64]);
        let path = sample_trajectory(&out, &mut lineage_rng);
        Ok((out.log_lik_hat, path))
    }

    pub fn initialize(&mut self, init: Option<&[f64]>) -> Result<ChainState, ChainError> {
        let theta = match init {
            Some(theta) => {
                if theta.len() != self.family.dim() {
                    return Err(ChainError::Dimension {
                        model: self.family.dim(),
                        what: "init",
                        got: theta.len(),
                    });
                }
                theta.to_vec()
            }
            None => self
                .prior
                .sample(&mut rng::stream(self.seed, &[domain::CHAIN_INIT])),
        };
        let log_prior = transformed_log_prior(&theta, self.prior, self.proposal);
        if !log_prior.is_finite() {
            return Err(ChainError::Init(format!(
                "starting point {theta:?} has zero prior density"
            )));
        }
        let (log_lik_hat, trajectory) = self
            .estimate(&theta, 0)
            .map_err(|e| ChainError::Init(format!("filter failed at starting point {theta:?}: {e}")))?;
        Ok(ChainState {
            theta,
            log_prior,
            log_lik_hat,
            trajectory,
        })
    }

    /// One PMMH transition for iteration `iter` (1-based). Returns the new
    /// state and whether the proposal was accepted.
    pub fn step(&mut self, state: ChainState, iter: usize) -> Result<(ChainState, bool), ChainError> {
        let mut step_rng = rng::stream(self.seed, &[domain::CHAIN_STEP, iter as u64]);
        let theta_star = propose(&state.theta, self.proposal, &mut step_rng)?;
        let u: f64 = step_rng.random();

        let log_prior_star = transformed_log_prior(&theta_star, self.prior, self.proposal);
        if log_prior_star == f64::NEG_INFINITY {
            return Ok((state, false));
        }

        let (log_lik_star, path) = match self.estimate(&theta_star, iter) {
            Ok(est) => est,
            Err(e) => {
                self.failed_proposals += 1;
                warn!("iteration {iter}: rejecting theta* = {theta_star:?}: {e}");
                return Ok((state, false));
            }
        };

        let alpha = acceptance_probability(log_lik_star, log_prior_star, state.log_lik_hat, state.log_prior);
        if u < alpha {
            Ok((
                ChainState {
                    theta: theta_star,
                    log_prior: log_prior_star,
                    log_lik_hat: log_lik_star,
                    trajectory: path,
                },
                true,
            ))
        } else {
            Ok((state, false))
        }
    }
}

/// Run `config.n_iter` PMMH iterations and record the full traces.
pub fn run_chain<F: ModelFamily>(
    config: &ChainConfig,
    data: &TimeSeries,
    family: &F,
    prior: &PriorSpec,
    proposal: &ProposalSpec,
) -> Result<ChainOutput, ChainError> {
    if config.thin == 0 {
        return Err(ChainError::Thin);
    }
    let mut sampler = Pmmh::new(family, data, prior, proposal, config.filter, config.seed)?;
    let mut state = sampler.initialize(config.init.as_deref())?;

    let m = config.n_iter;
    let mut theta_trace = Vec::with_capacity(m + 1);
    let mut loglik_trace = Vec::with_capacity(m + 1);
    let mut accept_flags = Vec::with_capacity(m);
    let mut trajectories = vec![(0, state.trajectory.clone())];
    theta_trace.push(state.theta.clone());
    loglik_trace.push(state.log_lik_hat);

    for iter in 1..=m {
        let (next, accepted) = sampler.step(state, iter)?;
        state = next;
        theta_trace.push(state.theta.clone());
        loglik_trace.push(state.log_lik_hat);
        accept_flags.push(accepted);
        if iter % config.thin == 0 {
            trajectories.push((iter, state.trajectory.clone()));
        }
    }

    Ok(ChainOutput {
        param_names: family.param_names().iter().map(|s| s.to_string()).collect(),
        theta_trace,
        loglik_trace,
        accept_flags,
        trajectories,
        filter_runs: sampler.filter_runs(),
        failed_proposals: sampler.failed_proposals(),
        config: config.clone(),
    })
}
