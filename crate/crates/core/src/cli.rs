//! Subcommand dispatch for the `pmmh` binary.
//!
//! Every subcommand writes into `out_dir` and finishes by writing
//! `run_meta.json`, which holds the canonical config text. Feeding that text
//! back through [`parse_config`] and [`dispatch`] reproduces every other
//! output file byte for byte.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use log::info;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{parse_config, ModelId, RunConfig, ThetaStar};
use crate::diagnostics::{acf, histogram, trace_summary, ChainSummary};
use crate::error::{ChainError, ConfigError, DataError, DiagError, EvidenceError, ModelError, SmcError};
use crate::evidence::{chib_evidence, lg_quadrature_log_evidence, prior_evidence, ChibOptions, EvidenceResult, ThetaStarRule};
use crate::io;
use crate::model::{kalman_loglik, simulate, LgParams, LgPhiFamily, ModelFamily, StateSpaceModel, SvFamily, SvParams, TimeSeries};
use crate::pmmh::{run_chain, ChainConfig, ChainOutput};
use crate::rng::{self, domain};
use crate::smc::{bootstrap_filter, FilterConfig};

/// Environment variable that overrides the `threads` key.
pub const THREADS_ENV: &str = "PMMH_THREADS";

const ACF_MAX_LAG: usize = 200;
const HIST_BINS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Simulate,
    Filter,
    Pmmh,
    Evidence,
    Diag,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Filter => "filter",
            Command::Pmmh => "pmmh",
            Command::Evidence => "evidence",
            Command::Diag => "diag",
        }
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(#[from] ConfigError),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("data error: {0}")]
    Data(#[from] DataError),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::Usage(e.to_string())
    }
}

impl From<SmcError> for CliError {
    fn from(e: SmcError) -> Self {
        match e {
            SmcError::NoParticles | SmcError::EssThreshold(_) => CliError::Usage(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<ChainError> for CliError {
    fn from(e: ChainError) -> Self {
        match e {
            ChainError::Filter(inner) => inner.into(),
            ChainError::Init(_) => CliError::Numerical(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

impl From<EvidenceError> for CliError {
    fn from(e: EvidenceError) -> Self {
        match e {
            EvidenceError::Input(_) | EvidenceError::NonGaussianPrior | EvidenceError::Model(_) => {
                CliError::Usage(e.to_string())
            }
            EvidenceError::Filter(inner) => inner.into(),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<DiagError> for CliError {
    fn from(e: DiagError) -> Self {
        match e {
            DiagError::DegenerateSeries => CliError::Numerical(e.to_string()),
            DiagError::BurnIn(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(DataError::Format {
                path: "trace.csv".into(),
                reason: e.to_string(),
            }),
        }
    }
}

/// Contents of `run_meta.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub command: Command,
    /// Canonical config text; parses back to the config that ran.
    pub config: String,
    pub seed: u64,
    pub version: String,
    pub threads: usize,
    pub started_unix_seconds: f64,
    pub wall_clock_seconds: f64,
}

/// Per-invocation options that are not part of the config.
#[derive(Debug, Clone, Default)]
pub struct DispatchOptions {
    /// Trace to summarise for `diag`; defaults to `<out_dir>/trace.csv`.
    pub trace_path: Option<PathBuf>,
}

fn threads_from_env() -> Result<Option<usize>, CliError> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Some(n)),
            _ => Err(CliError::Usage(format!("{THREADS_ENV}={v:?} is not a positive integer"))),
        },
    }
}

/// Run one subcommand. `PMMH_THREADS` takes precedence over `config.threads`.
pub fn dispatch(command: Command, config: &RunConfig, options: &DispatchOptions) -> Result<RunMeta, CliError> {
    let mut config = config.clone();
    if let Some(n) = threads_from_env()? {
        config.threads = n;
    }
    let started = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0);
    let clock = Instant::now();

    fs::create_dir_all(&config.out_dir).map_err(|source| DataError::Write {
        path: config.out_dir.display().to_string(),
        source,
    })?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads)
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start {} threads: {e}", config.threads)))?;
    info!("{} with seed {} on {} thread(s)", command.name(), config.seed, config.threads);
    pool.install(|| match command {
        Command::Simulate => run_simulate(&config),
        Command::Filter => run_filter(&config),
        Command::Pmmh => run_pmmh(&config),
        Command::Evidence => run_evidence(&config),
        Command::Diag => run_diag(&config, options),
    })?;

    let meta = RunMeta {
        command,
        config: config.to_text(),
        seed: config.seed,
        version: env!("CARGO_PKG_VERSION").to_string(),
        threads: config.threads,
        started_unix_seconds: started,
        wall_clock_seconds: clock.elapsed().as_secs_f64(),
    };
    io::write_json(&config.out_dir.join("run_meta.json"), &meta)?;
    Ok(meta)
}

/// Re-run the command recorded in a `run_meta.json`, optionally into a
/// different output directory.
pub fn replay(meta_path: &Path, out_dir: Option<&Path>) -> Result<RunMeta, CliError> {
    let text = fs::read_to_string(meta_path).map_err(|source| DataError::Read {
        path: meta_path.display().to_string(),
        source,
    })?;
    let meta: RunMeta = serde_json::from_str(&text).map_err(|e| DataError::Format {
        path: meta_path.display().to_string(),
        reason: e.to_string(),
    })?;
    let mut config = parse_config(&meta.config)?;
    if let Some(dir) = out_dir {
        config.out_dir = dir.to_path_buf();
    }
    dispatch(meta.command, &config, &DispatchOptions::default())
}

fn sv_params(c: &RunConfig) -> Result<SvParams, CliError> {
    Ok(SvParams::new(c.params[0], c.params[1], c.params[2])?)
}

fn lg_params(c: &RunConfig) -> Result<LgParams, CliError> {
    Ok(LgParams::new(c.params[0], c.params[1], c.params[2])?)
}

fn lg_family(c: &RunConfig) -> LgPhiFamily {
    let fixed = c.fixed_params();
    LgPhiFamily {
        sigma_x: fixed[0],
        sigma_y: fixed[1],
    }
}

fn filter_config(c: &RunConfig) -> FilterConfig {
    FilterConfig::new(c.n, c.scheme).with_ess_threshold(c.ess_threshold)
}

/// Data from `data_path`, or simulated at `param.*` with the run seed (the
/// same series `simulate` writes for that seed).
fn observations(c: &RunConfig) -> Result<TimeSeries, CliError> {
    if let Some(path) = &c.data_path {
        return Ok(io::load_observations(path)?);
    }
    let (_, y) = match c.model {
        ModelId::Sv => simulate(&sv_params(c)?, c.t, c.seed)?,
        ModelId::Lg => simulate(&lg_params(c)?, c.t, c.seed)?,
    };
    Ok(y)
}

fn run_simulate(c: &RunConfig) -> Result<(), CliError> {
    let (x, y) = match c.model {
        ModelId::Sv => simulate(&sv_params(c)?, c.t, c.seed)?,
        ModelId::Lg => simulate(&lg_params(c)?, c.t, c.seed)?,
    };
    io::write_series(&c.out_dir.join("states.csv"), "x", &x)?;
    io::write_series(&c.out_dir.join("obs.csv"), "y", &y)?;
    Ok(())
}

#[derive(Serialize)]
struct FilterReport {
    log_lik_hat: f64,
    per_step_log_z: Vec<f64>,
    ess: Vec<f64>,
    n_particles: usize,
    scheme: String,
    /// Exact log-likelihood, LG model only.
    exact_log_lik: Option<f64>,
}

fn filter_report<M: StateSpaceModel>(model: &M, y: &TimeSeries, c: &RunConfig) -> Result<FilterReport, CliError> {
    let out = bootstrap_filter(model, y, &filter_config(c), rng::child_seed(c.seed, &[domain::FILTER]))?;
    Ok(FilterReport {
        log_lik_hat: out.log_lik_hat,
        per_step_log_z: out.per_step_log_z,
        ess: out.ess,
        n_particles: c.n,
        scheme: c.scheme.to_string(),
        exact_log_lik: None,
    })
}

fn run_filter(c: &RunConfig) -> Result<(), CliError> {
    let y = observations(c)?;
    let report = match c.model {
        ModelId::Sv => filter_report(&sv_params(c)?, &y, c)?,
        ModelId::Lg => {
            let p = lg_params(c)?;
            let mut r = filter_report(&p, &y, c)?;
            r.exact_log_lik = Some(kalman_loglik(&p, &y)?);
            r
        }
    };
    io::write_json(&c.out_dir.join("filter.json"), &report)?;
    Ok(())
}

fn chain<F: ModelFamily>(c: &RunConfig, family: &F, y: &TimeSeries) -> Result<ChainOutput, CliError> {
    let cfg = ChainConfig {
        n_iter: c.m,
        filter: filter_config(c),
        seed: c.seed,
        thin: c.thin,
        init: c.init.clone(),
    };
    Ok(run_chain(&cfg, y, family, &c.prior, &c.proposal)?)
}

fn run_chain_for(c: &RunConfig, y: &TimeSeries) -> Result<ChainOutput, CliError> {
    match c.model {
        ModelId::Sv => chain(c, &SvFamily, y),
        ModelId::Lg => chain(c, &lg_family(c), y),
    }
}

#[derive(Serialize)]
struct SamplerStats {
    filter_runs: u64,
    failed_proposals: u64,
    retained_trajectories: usize,
}

#[derive(Serialize)]
struct SummaryReport {
    n_iter: usize,
    /// Over all `M` iterations, burn-in included.
    acceptance_rate: Option<f64>,
    /// `None` when no iterations remain after burn-in.
    summary: Option<ChainSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    sampler: Option<SamplerStats>,
}

/// summary.json, acf.csv and hist.csv from raw traces.
fn write_diagnostics(
    dir: &Path,
    names: &[String],
    theta_trace: &[Vec<f64>],
    accept_flags: &[bool],
    burn_in: f64,
    sampler: Option<SamplerStats>,
) -> Result<(), CliError> {
    let summary = match trace_summary(names, theta_trace, accept_flags, burn_in) {
        Ok(s) => Some(s),
        Err(DiagError::Empty) => None,
        Err(e) => return Err(e.into()),
    };
    let m = accept_flags.len();
    let report = SummaryReport {
        n_iter: m,
        acceptance_rate: (m > 0).then(|| accept_flags.iter().filter(|&&a| a).count() as f64 / m as f64),
        summary,
        sampler,
    };
    io::write_json(&dir.join("summary.json"), &report)?;

    let burn = crate::diagnostics::burn_in_count(m, burn_in);
    let rows = if m > burn { &theta_trace[burn + 1..] } else { &theta_trace[..0] };
    let columns: Vec<Vec<f64>> = (0..names.len()).map(|j| rows.iter().map(|r| r[j]).collect()).collect();
    let acfs: Vec<_> = columns
        .iter()
        .map(|xs| {
            if xs.len() < 2 {
                None
            } else {
                acf(xs, ACF_MAX_LAG.min(xs.len() - 1)).ok()
            }
        })
        .collect();
    io::write_acf(&dir.join("acf.csv"), names, &acfs)?;
    let hists: Vec<_> = names
        .iter()
        .cloned()
        .zip(columns.iter().map(|xs| histogram(xs, HIST_BINS)))
        .collect();
    io::write_histograms(&dir.join("hist.csv"), &hists)?;
    Ok(())
}

fn run_pmmh(c: &RunConfig) -> Result<(), CliError> {
    let y = observations(c)?;
    let out = run_chain_for(c, &y)?;
    io::write_trace(&c.out_dir.join("trace.csv"), &out)?;
    io::write_trajectories(&c.out_dir.join("trajectories.csv"), &out.trajectories)?;
    let sampler = SamplerStats {
        filter_runs: out.filter_runs,
        failed_proposals: out.failed_proposals,
        retained_trajectories: out.trajectories.len(),
    };
    write_diagnostics(
        &c.out_dir,
        &out.param_names,
        &out.theta_trace,
        &out.accept_flags,
        c.burn_in,
        Some(sampler),
    )
}

#[derive(Serialize)]
struct EvidenceReport {
    model: String,
    /// LG model only.
    chib: Option<EvidenceResult>,
    prior_sampling: EvidenceResult,
    /// Grid quadrature with the exact likelihood, LG model only.
    quadrature_log_evidence: Option<f64>,
}

const QUADRATURE_NODES: usize = 2001;

fn run_evidence(c: &RunConfig) -> Result<(), CliError> {
    let y = observations(c)?;
    let filter = filter_config(c);
    let prior_seed = rng::child_seed(c.seed, &[domain::EVIDENCE_PRIOR]);
    let report = match c.model {
        ModelId::Sv => EvidenceReport {
            model: c.model.to_string(),
            chib: None,
            prior_sampling: prior_evidence(&SvFamily, &y, &c.prior, c.evidence_k, &filter, prior_seed)?,
            quadrature_log_evidence: None,
        },
        ModelId::Lg => {
            let family = lg_family(c);
            let out = chain(c, &family, &y)?;
            let options = ChibOptions {
                filter,
                replicates: c.evidence_r,
                seed: rng::child_seed(c.seed, &[domain::EVIDENCE_NUMERATOR]),
                burn_in_fraction: c.burn_in,
                theta_star: match c.theta_star {
                    ThetaStar::Median => ThetaStarRule::Median,
                    ThetaStar::Mean => ThetaStarRule::Mean,
                },
                conditional: c.conditional,
            };
            EvidenceReport {
                model: c.model.to_string(),
                chib: Some(chib_evidence(&out, &y, &family, &c.prior, &options)?),
                prior_sampling: prior_evidence(&family, &y, &c.prior, c.evidence_k, &filter, prior_seed)?,
                quadrature_log_evidence: Some(lg_quadrature_log_evidence(&y, &family, &c.prior, QUADRATURE_NODES)?),
            }
        }
    };
    io::write_json(&c.out_dir.join("evidence.json"), &report)?;
    Ok(())
}

fn run_diag(c: &RunConfig, options: &DispatchOptions) -> Result<(), CliError> {
    let path = options.trace_path.clone().unwrap_or_else(|| c.out_dir.join("trace.csv"));
    let trace = io::read_trace(&path)?;
    let expected = c.model.estimated_params();
    if trace.param_names.iter().map(String::as_str).ne(expected.iter().copied()) {
        return Err(CliError::Usage(format!(
            "{} has columns {:?} but model {} samples {:?}",
            path.display(),
            trace.param_names,
            c.model,
            expected
        )));
    }
    write_diagnostics(&c.out_dir, &trace.param_names, &trace.theta_trace, &trace.accept_flags, c.burn_in, None)
}
