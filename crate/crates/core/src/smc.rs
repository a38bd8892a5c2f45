//! Bootstrap particle filter.
//!
//! The filter proposes from the transition law, weights by the observation
//! density, and records `log p^(y_t | y_{1:t-1})` at every step. The sum of
//! those terms exponentiates to an unbiased estimate of `p(y_{1:T})`, which is
//! what PMMH plugs into its acceptance ratio.
//!
//! Weights are kept in log space. Every particle at every step draws from its
//! own stream keyed by `(step, index)`, and resampling at step `t` draws from a
//! stream keyed by `t`, so the output depends on the seed only and not on how
//! the particle loop is scheduled.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;

use crate::error::SmcError;
use crate::model::{StateSpaceModel, TimeSeries};
use crate::rng::{self, domain};

/// Below this many particles the particle loop stays on the calling thread.
const PAR_MIN_PARTICLES: usize = 512;
const PAR_CHUNK: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ResamplingScheme {
    Multinomial,
    Residual,
    #[default]
    Systematic,
}

impl ResamplingScheme {
    pub const ALL: [ResamplingScheme; 3] = [
        ResamplingScheme::Multinomial,
        ResamplingScheme::Residual,
        ResamplingScheme::Systematic,
    ];
}

impl fmt::Display for ResamplingScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ResamplingScheme::Multinomial => "multinomial",
            ResamplingScheme::Residual => "residual",
            ResamplingScheme::Systematic => "systematic",
        })
    }
}

impl FromStr for ResamplingScheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "multinomial" => Ok(ResamplingScheme::Multinomial),
            "residual" => Ok(ResamplingScheme::Residual),
            "systematic" => Ok(ResamplingScheme::Systematic),
            other => Err(format!(
                "unknown resampling scheme '{other}' (expected multinomial, residual or systematic)"
            )),
        }
    }
}

/// Normalised weights together with the log of the mean unnormalised weight.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedWeights {
    pub weights: Vec<f64>,
    pub log_mean: f64,
}

/// Max-shifted normalisation of log-weights.
///
/// `-inf` entries are allowed (zero weight) as long as one entry is finite.
/// NaN and `+inf` are rejected.
pub fn normalize_log_weights(logw: &[f64]) -> Result<NormalizedWeights, SmcError> {
    if logw.is_empty() {
        return Err(SmcError::NoParticles);
    }
    let mut max = f64::NEG_INFINITY;
    for (index, &value) in logw.iter().enumerate() {
        if value.is_nan() || value == f64::INFINITY {
            return Err(SmcError::NonFiniteLogWeight { index, value });
        }
        max = max.max(value);
    }
    if max == f64::NEG_INFINITY {
        return Err(SmcError::DegenerateWeights);
    }
    let mut weights: Vec<f64> = logw.iter().map(|&lw| (lw - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    let log_mean = max + total.ln() - (logw.len() as f64).ln();
    Ok(NormalizedWeights { weights, log_mean })
}

fn validate_weights(weights: &[f64]) -> Result<(), SmcError> {
    if weights.is_empty() {
        return Err(SmcError::NoParticles);
    }
    if let Some((i, w)) = weights
        .iter()
        .enumerate()
        .find(|(_, w)| !(w.is_finite() && **w >= 0.0))
    {
        return Err(SmcError::InvalidWeights(format!(
            "weight {i} is {w}; weights must be finite and non-negative"
        )));
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(SmcError::InvalidWeights(format!(
            "weights sum to {sum}, expected 1"
        )));
    }
    Ok(())
}

/// Effective sample size `1 / sum w_i^2` of normalised weights.
pub fn ess(weights: &[f64]) -> Result<f64, SmcError> {
    validate_weights(weights)?;
    Ok(ess_unchecked(weights))
}

#[inline]
fn ess_unchecked(weights: &[f64]) -> f64 {
    1.0 / weights.iter().map(|w| w * w).sum::<f64>()
}

fn cumulative(weights: &[f64]) -> Vec<f64> {
    weights
        .iter()
        .scan(0.0, |acc, &w| {
            *acc += w;
            Some(*acc)
        })
        .collect()
}

/// Smallest `i` with `cum[i] > u`, never landing on a zero-weight index.
#[inline]
fn inverse_cdf(cum: &[f64], weights: &[f64], u: f64) -> usize {
    let i = cum.partition_point(|&c| c <= u);
    if i < cum.len() {
        return i;
    }
    // u at or beyond the rounded total
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(cum.len() - 1)
}

fn multinomial_into<R: Rng + ?Sized>(weights: &[f64], draws: usize, rng: &mut R, out: &mut Vec<usize>) {
    let cum = cumulative(weights);
    let total = *cum.last().unwrap_or(&1.0);
    for _ in 0..draws {
        let u = rng.random::<f64>() * total;
        out.push(inverse_cdf(&cum, weights, u));
    }
}

/// Draw `N = weights.len()` ancestor indices.
///
/// Every scheme satisfies `E[count(i)] = N w_i`. Systematic counts lie in
/// `{floor(N w_i), ceil(N w_i)}` and residual counts are at least
/// `floor(N w_i)`.
pub fn resample<R: Rng + ?Sized>(
    weights: &[f64],
    scheme: ResamplingScheme,
    rng: &mut R,
) -> Result<Vec<usize>, SmcError> {
    validate_weights(weights)?;
    let n = weights.len();
    let mut out = Vec::with_capacity(n);
    match scheme {
        ResamplingScheme::Multinomial => multinomial_into(weights, n, rng, &mut out),
        ResamplingScheme::Residual => {
            let scaled: Vec<f64> = weights.iter().map(|w| w * n as f64).collect();
            let mut residual = Vec::with_capacity(n);
            for (i, &s) in scaled.iter().enumerate() {
                let copies = s.floor() as usize;
                out.extend(std::iter::repeat_n(i, copies));
                residual.push(s - copies as f64);
            }
            let remaining = n.saturating_sub(out.len());
            if remaining > 0 {
                let total: f64 = residual.iter().sum();
                if total > 0.0 {
                    residual.iter_mut().for_each(|r| *r /= total);
                    multinomial_into(&residual, remaining, rng, &mut out);
                } else {
                    // floors lost mass only to rounding
                    multinomial_into(weights, remaining, rng, &mut out);
                }
            }
            out.truncate(n);
        }
        ResamplingScheme::Systematic => {
            let cum = cumulative(weights);
            let total = cum[n - 1];
            let u: f64 = rng.random();
            let mut j = 0;
            for k in 0..n {
                let pos = (u + k as f64) / n as f64 * total;
                while j < n - 1 && cum[j] <= pos {
                    j += 1;
                }
                if weights[j] == 0.0 {
                    j = inverse_cdf(&cum, weights, pos);
                }
                out.push(j);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterConfig {
    pub n_particles: usize,
    pub scheme: ResamplingScheme,
    /// Resample when `ESS < ess_threshold * N`. `1.0` means every step.
    pub ess_threshold: f64,
}

impl FilterConfig {
    pub fn new(n_particles: usize, scheme: ResamplingScheme) -> Self {
        FilterConfig {
            n_particles,
            scheme,
            ess_threshold: 1.0,
        }
    }

    pub fn with_ess_threshold(mut self, threshold: f64) -> Self {
        self.ess_threshold = threshold;
        self
    }

    fn validate(&self) -> Result<(), SmcError> {
        if self.n_particles == 0 {
            return Err(SmcError::NoParticles);
        }
        if !(0.0..=1.0).contains(&self.ess_threshold) {
            return Err(SmcError::EssThreshold(self.ess_threshold));
        }
        Ok(())
    }

    fn should_resample(&self, ess: f64) -> bool {
        self.ess_threshold >= 1.0 || ess < self.ess_threshold * self.n_particles as f64
    }
}

/// Full `T x N` record of a filter run, stored row-major by step.
///
/// `ancestors(t)[i]` is the index at step `t - 1` of the parent of particle
/// `i` at step `t`. Row 0 is the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSystem {
    n: usize,
    steps: usize,
    states: Vec<f64>,
    log_weights: Vec<f64>,
    ancestors: Vec<usize>,
}

impl ParticleSystem {
    fn with_capacity(n: usize, steps: usize) -> Self {
        ParticleSystem {
            n,
            steps: 0,
            states: Vec::with_capacity(n * steps),
            log_weights: Vec::with_capacity(n * steps),
            ancestors: Vec::with_capacity(n * steps),
        }
    }

    fn push(&mut self, states: &[f64], log_weights: &[f64], ancestors: &[usize]) {
        self.states.extend_from_slice(states);
        self.log_weights.extend_from_slice(log_weights);
        self.ancestors.extend_from_slice(ancestors);
        self.steps += 1;
    }

    pub fn n_particles(&self) -> usize {
        self.n
    }

    pub fn n_steps(&self) -> usize {
        self.steps
    }

    pub fn states(&self, t: usize) -> &[f64] {
        &self.states[t * self.n..(t + 1) * self.n]
    }

    /// Unnormalised log-weights at step `t`.
    pub fn log_weights(&self, t: usize) -> &[f64] {
        &self.log_weights[t * self.n..(t + 1) * self.n]
    }

    pub fn ancestors(&self, t: usize) -> &[usize] {
        &self.ancestors[t * self.n..(t + 1) * self.n]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutput {
    /// `log p^(y_t | y_{1:t-1})` per step.
    pub per_step_log_z: Vec<f64>,
    pub log_lik_hat: f64,
    /// ESS of the normalised weights at each step, before resampling.
    pub ess: Vec<f64>,
    pub system: ParticleSystem,
}

impl FilterOutput {
    pub fn final_weights(&self) -> Vec<f64> {
        let last = self.system.n_steps() - 1;
        // Finite by construction: the run would have failed otherwise.
        normalize_log_weights(self.system.log_weights(last))
            .map(|w| w.weights)
            .unwrap_or_else(|_| vec![1.0 / self.system.n as f64; self.system.n])
    }
}

fn particle_map<F>(n: usize, f: F) -> Vec<(f64, f64)>
where
    F: Fn(usize) -> (f64, f64) + Sync + Send,
{
    if n >= PAR_MIN_PARTICLES && rayon::current_num_threads() > 1 {
        (0..n).into_par_iter().with_min_len(PAR_CHUNK).map(f).collect()
    } else {
        (0..n).map(f).collect()
    }
}

/// Run the bootstrap filter on `y` and return the likelihood estimate with the
/// full genealogy.
///
/// Steps are 0-based in errors. The output is a pure function of
/// `(model, y, config, seed)`.
pub fn bootstrap_filter<M: StateSpaceModel>(
    model: &M,
    y: &TimeSeries,
    config: &FilterConfig,
    seed: u64,
) -> Result<FilterOutput, SmcError> {
    config.validate()?;
    let n = config.n_particles;
    let steps = y.len();
    let mut system = ParticleSystem::with_capacity(n, steps);
    let mut per_step_log_z = Vec::with_capacity(steps);
    let mut ess_trace = Vec::with_capacity(steps);

    let identity: Vec<usize> = (0..n).collect();
    let mut ancestors = identity.clone();
    let mut states = vec![0.0; n];
    let mut log_w = vec![0.0; n];
    let mut offset = vec![0.0; n];
    let mut prev_weights: Vec<f64> = Vec::new();
    let mut prev_log_mean = 0.0;

    for (t, &obs) in y.iter().enumerate() {
        let step_key = rng::derive_key(seed, &[domain::PARTICLE, t as u64]);
        let propagated = if t == 0 {
            let init: Vec<Result<(f64, f64), _>> = (0..n)
                .map(|i| {
                    let mut r = rng::stream(step_key, &[i as u64]);
                    model
                        .initial_sample(&mut r)
                        .map(|x| (x, model.log_obs_density(obs, x)))
                })
                .collect();
            init.into_iter().collect::<Result<Vec<_>, _>>()?
        } else {
            let prev_ess = *ess_trace.last().expect("previous step recorded");
            if config.should_resample(prev_ess) {
                let mut r = rng::stream(seed, &[domain::RESAMPLE, t as u64]);
                ancestors = resample(&prev_weights, config.scheme, &mut r)?;
                offset.iter_mut().for_each(|o| *o = 0.0);
            } else {
                ancestors.copy_from_slice(&identity);
                for (o, &lw) in offset.iter_mut().zip(log_w.iter()) {
                    *o = lw - prev_log_mean;
                }
            }
            let prev_states = &states;
            let anc = &ancestors;
            particle_map(n, |i| {
                let mut r = rng::stream(step_key, &[i as u64]);
                let x = model.transition_sample(prev_states[anc[i]], &mut r);
                (x, model.log_obs_density(obs, x))
            })
        };

        for (i, (x, log_g)) in propagated.into_iter().enumerate() {
            states[i] = x;
            log_w[i] = offset[i] + log_g;
        }
        let normalized = normalize_log_weights(&log_w).map_err(|e| match e {
            SmcError::DegenerateWeights | SmcError::NonFiniteLogWeight { .. } => {
                SmcError::Degenerate { step: t }
            }
            other => other,
        })?;
        let row_ancestors = if t == 0 { &identity } else { &ancestors };
        system.push(&states, &log_w, row_ancestors);
        per_step_log_z.push(normalized.log_mean);
        ess_trace.push(ess_unchecked(&normalized.weights));
        prev_log_mean = normalized.log_mean;
        prev_weights = normalized.weights;
    }

    let log_lik_hat = per_step_log_z.iter().sum();
    Ok(FilterOutput {
        per_step_log_z,
        log_lik_hat,
        ess: ess_trace,
        system,
    })
}

/// Draw one final particle in proportion to its weight and follow its
/// ancestry back to the first step.
pub fn sample_trajectory<R: Rng + ?Sized>(out: &FilterOutput, rng: &mut R) -> TimeSeries {
    let system = &out.system;
    let weights = out.final_weights();
    let cum = cumulative(&weights);
    let u = rng.random::<f64>() * cum[cum.len() - 1];
    let k = inverse_cdf(&cum, &weights, u);
    trace_lineage(system, k)
}

/// The state path of final particle `k`.
pub fn trace_lineage(system: &ParticleSystem, mut k: usize) -> TimeSeries {
    let steps = system.n_steps();
    let mut path = vec![0.0; steps];
    for t in (0..steps).rev() {
        path[t] = system.states(t)[k];
        k = system.ancestors(t)[k];
    }
    TimeSeries::new(path).expect("filter states are finite")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{kalman_loglik, simulate, LgParams, SvParams};
    use crate::rng::stream;
    use proptest::prelude::any;
    use proptest::{prop_assert, prop_assert_eq, prop_assume, proptest};

    #[test]
    fn normalize_uniform() {
        let w = normalize_log_weights(&[0.0; 4]).unwrap();
        assert_eq!(w.weights, vec![0.25; 4]);
        assert_eq!(w.log_mean, 0.0);
    }

    #[test]
    fn normalize_constant() {
        let l2 = 2f64.ln();
        let w = normalize_log_weights(&[l2, l2]).unwrap();
        assert_eq!(w.weights, vec![0.5, 0.5]);
        assert!((w.log_mean - l2).abs() < 1e-15);
    }

    #[test]
    fn normalize_shift_and_overflow() {
        let a = normalize_log_weights(&[-1000.0; 3]).unwrap();
        let b = normalize_log_weights(&[0.0; 3]).unwrap();
        assert_eq!(a.weights, b.weights);
        assert_eq!(a.log_mean - b.log_mean, -1000.0);
    }

    #[test]
    fn normalize_errors() {
        assert_eq!(
            normalize_log_weights(&[f64::NEG_INFINITY; 3]),
            Err(SmcError::DegenerateWeights)
        );
        assert!(matches!(
            normalize_log_weights(&[0.0, f64::NAN]),
            Err(SmcError::NonFiniteLogWeight { index: 1, .. })
        ));
        assert!(normalize_log_weights(&[0.0, f64::INFINITY]).is_err());
        assert_eq!(normalize_log_weights(&[]), Err(SmcError::NoParticles));
        let w = normalize_log_weights(&[0.0, f64::NEG_INFINITY]).unwrap();
        assert_eq!(w.weights, vec![1.0, 0.0]);
    }

    #[test]
    fn degenerate_mass_resamples_to_one_index() {
        for scheme in ResamplingScheme::ALL {
            let idx = resample(&[1.0, 0.0, 0.0], scheme, &mut stream(1, &[0])).unwrap();
            assert_eq!(idx, vec![0, 0, 0], "{scheme}");
        }
    }

    #[test]
    fn residual_uniform_is_deterministic() {
        let mut idx = resample(&[0.25; 4], ResamplingScheme::Residual, &mut stream(2, &[0])).unwrap();
        idx.sort();
        assert_eq!(idx, vec![0, 1, 2, 3]);
    }

    #[test]
    fn resample_rejects_bad_weights() {
        let mut r = stream(0, &[0]);
        assert!(resample(&[0.5, 0.6], ResamplingScheme::Systematic, &mut r).is_err());
        assert!(resample(&[1.5, -0.5], ResamplingScheme::Multinomial, &mut r).is_err());
        assert!(resample(&[], ResamplingScheme::Residual, &mut r).is_err());
    }

    #[test]
    fn multinomial_mean_counts() {
        // N = 100 draws from the law [0.7, 0.2, 0.1], padded with zero-weight slots.
        let mut weights = vec![0.0; 100];
        weights[0] = 0.7;
        weights[1] = 0.2;
        weights[2] = 0.1;
        let reps = 10_000;
        let mut totals = [0.0f64; 3];
        for rep in 0..reps {
            let idx = resample(&weights, ResamplingScheme::Multinomial, &mut stream(5, &[rep])).unwrap();
            let mut c = [0.0f64; 3];
            for i in idx {
                c[i] += 1.0;
            }
            for k in 0..3 {
                totals[k] += c[k];
            }
        }
        for (k, expected) in [70.0, 20.0, 10.0].into_iter().enumerate() {
            let p: f64 = expected / 100.0;
            let se = (100.0 * p * (1.0 - p) / reps as f64).sqrt();
            let mean = totals[k] / reps as f64;
            assert!((mean - expected).abs() < 4.0 * se, "index {k}: {mean}");
        }
    }

    #[test]
    fn ess_values() {
        assert_eq!(ess(&[0.25; 4]).unwrap(), 4.0);
        assert_eq!(ess(&[0.0, 1.0, 0.0]).unwrap(), 1.0);
        assert!((ess(&[0.5, 0.25, 0.25]).unwrap() - 2.666_667).abs() < 1e-6);
        assert!(ess(&[0.5, 0.6]).is_err());
    }

    #[test]
    fn single_particle_is_a_prior_path() {
        let model = SvParams::new(1.0, 0.9, 0.5).unwrap();
        let (_, y) = simulate(&model, 30, 3).unwrap();
        for scheme in ResamplingScheme::ALL {
            let out = bootstrap_filter(&model, &y, &FilterConfig::new(1, scheme), 9).unwrap();
            let path = sample_trajectory(&out, &mut stream(0, &[0]));
            let direct: f64 = y
                .iter()
                .zip(path.iter())
                .map(|(&obs, &x)| model.log_obs_density(obs, x))
                .sum();
            assert!((out.log_lik_hat - direct).abs() < 1e-12);
            for t in 0..y.len() {
                assert_eq!(path[t], out.system.states(t)[0]);
            }
        }
    }

    #[test]
    fn log_lik_is_sum_of_terms() {
        let model = LgParams::new(0.8, 1.0, 0.5).unwrap();
        let (_, y) = simulate(&model, 50, 4).unwrap();
        let out = bootstrap_filter(&model, &y, &FilterConfig::new(64, ResamplingScheme::Systematic), 1).unwrap();
        let s: f64 = out.per_step_log_z.iter().sum();
        assert!((s - out.log_lik_hat).abs() < 1e-12);
        assert_eq!(out.ess.len(), 50);
        assert!(out.ess.iter().all(|&e| (1.0 - 1e-9..=64.0 + 1e-9).contains(&e)));
    }

    #[test]
    fn one_hot_final_weights_pick_that_lineage() {
        // Observation density that only supports particles above a cut at the last step.
        struct Cut(LgParams, f64);
        impl StateSpaceModel for Cut {
            fn initial_sample<R: Rng + ?Sized>(&self, r: &mut R) -> Result<f64, crate::error::ModelError> {
                self.0.initial_sample(r)
            }
            fn transition_sample<R: Rng + ?Sized>(&self, x: f64, r: &mut R) -> f64 {
                self.0.transition_sample(x, r)
            }
            fn log_obs_density(&self, y: f64, x: f64) -> f64 {
                if y > 100.0 {
                    if x >= self.1 { 0.0 } else { f64::NEG_INFINITY }
                } else {
                    self.0.log_obs_density(y, x)
                }
            }
            fn observation_sample<R: Rng + ?Sized>(&self, x: f64, r: &mut R) -> f64 {
                self.0.observation_sample(x, r)
            }
        }
        let base = LgParams::new(0.5, 1.0, 1.0).unwrap();
        let y = TimeSeries::new(vec![0.1, -0.3, 0.2, 1000.0]).unwrap();
        let cfg = FilterConfig::new(50, ResamplingScheme::Multinomial);
        // Find the maximal final state with a permissive cut, then cut just below it.
        let probe = bootstrap_filter(&Cut(base, f64::NEG_INFINITY), &y, &cfg, 77).unwrap();
        let last = probe.system.states(3);
        let (j, &xmax) = last
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap();
        let out = bootstrap_filter(&Cut(base, xmax), &y, &cfg, 77).unwrap();
        let w = out.final_weights();
        assert_eq!(w[j], 1.0);
        for rep in 0..10 {
            let path = sample_trajectory(&out, &mut stream(rep, &[1]));
            assert_eq!(path, trace_lineage(&out.system, j));
            assert_eq!(path[3], xmax);
        }
    }

    #[test]
    fn degeneracy_reports_step() {
        struct Never;
        impl StateSpaceModel for Never {
            fn initial_sample<R: Rng + ?Sized>(&self, _: &mut R) -> Result<f64, crate::error::ModelError> {
                Ok(0.0)
            }
            fn transition_sample<R: Rng + ?Sized>(&self, x: f64, _: &mut R) -> f64 {
                x
            }
            fn log_obs_density(&self, y: f64, _: f64) -> f64 {
                if y > 0.0 { f64::NEG_INFINITY } else { 0.0 }
            }
            fn observation_sample<R: Rng + ?Sized>(&self, _: f64, _: &mut R) -> f64 {
                0.0
            }
        }
        let y = TimeSeries::new(vec![0.0, -1.0, 1.0, 0.0]).unwrap();
        let err = bootstrap_filter(&Never, &y, &FilterConfig::new(10, ResamplingScheme::Systematic), 0)
            .unwrap_err();
        assert_eq!(err, SmcError::Degenerate { step: 2 });
        assert!(err.is_degeneracy());
    }

    #[test]
    fn invalid_config_and_params() {
        let y = TimeSeries::new(vec![0.0]).unwrap();
        let model = LgParams::new(0.5, 1.0, 1.0).unwrap();
        assert_eq!(
            bootstrap_filter(&model, &y, &FilterConfig::new(0, ResamplingScheme::Systematic), 0),
            Err(SmcError::NoParticles)
        );
        let bad = FilterConfig::new(4, ResamplingScheme::Systematic).with_ess_threshold(1.5);
        assert!(bootstrap_filter(&model, &y, &bad, 0).is_err());
        let unit_root = SvParams::new(0.0, 1.0, 0.5).unwrap();
        assert!(matches!(
            bootstrap_filter(&unit_root, &y, &FilterConfig::new(4, ResamplingScheme::Systematic), 0),
            Err(SmcError::Model(_))
        ));
    }

    #[test]
    fn shift_of_one_step_moves_loglik_exactly() {
        struct Shifted(SvParams, f64, f64);
        impl StateSpaceModel for Shifted {
            fn initial_sample<R: Rng + ?Sized>(&self, r: &mut R) -> Result<f64, crate::error::ModelError> {
                self.0.initial_sample(r)
            }
            fn transition_sample<R: Rng + ?Sized>(&self, x: f64, r: &mut R) -> f64 {
                self.0.transition_sample(x, r)
            }
            fn log_obs_density(&self, y: f64, x: f64) -> f64 {
                self.0.log_obs_density(y, x) + if y == self.1 { self.2 } else { 0.0 }
            }
            fn observation_sample<R: Rng + ?Sized>(&self, x: f64, r: &mut R) -> f64 {
                self.0.observation_sample(x, r)
            }
        }
        let base = SvParams::new(1.0, 0.9, 0.5).unwrap();
        let (_, y) = simulate(&base, 40, 8).unwrap();
        let target = y[17];
        for scheme in ResamplingScheme::ALL {
            let cfg = FilterConfig::new(32, scheme);
            let a = bootstrap_filter(&Shifted(base, target, 0.0), &y, &cfg, 5).unwrap();
            let b = bootstrap_filter(&Shifted(base, target, 3.25), &y, &cfg, 5).unwrap();
            assert!((b.log_lik_hat - a.log_lik_hat - 3.25).abs() < 1e-10);
            for t in 0..y.len() {
                assert_eq!(a.system.ancestors(t), b.system.ancestors(t));
            }
        }
    }

    #[test]
    fn adaptive_schedule_skips_resampling_and_stays_unbiased_in_bookkeeping() {
        // With ESS threshold 0 the filter never resamples: the estimate is plain
        // sequential importance sampling, log Z_t = log sum_i W_{t-1,i} g_t(i).
        let model = LgParams::new(0.5, 1.0, 1.0).unwrap();
        let (_, y) = simulate(&model, 5, 2).unwrap();
        let cfg = FilterConfig::new(16, ResamplingScheme::Systematic).with_ess_threshold(0.0);
        let out = bootstrap_filter(&model, &y, &cfg, 3).unwrap();
        for t in 0..5 {
            assert_eq!(out.system.ancestors(t), (0..16).collect::<Vec<_>>().as_slice());
        }
        // Path weights: product of g along each particle path.
        let mut path_lw = vec![0.0; 16];
        for t in 0..5 {
            for i in 0..16 {
                path_lw[i] += model.log_obs_density(y[t], out.system.states(t)[i]);
            }
        }
        let direct = normalize_log_weights(&path_lw).unwrap().log_mean;
        assert!((direct - out.log_lik_hat).abs() < 1e-10);
    }

    #[test]
    fn filter_is_reproducible_and_thread_independent() {
        let model = LgParams::new(0.8, 1.0, 0.5).unwrap();
        let (_, y) = simulate(&model, 20, 1).unwrap();
        let cfg = FilterConfig::new(2048, ResamplingScheme::Residual);
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let many = rayon::ThreadPoolBuilder::new().num_threads(8).build().unwrap();
        let a = one.install(|| bootstrap_filter(&model, &y, &cfg, 42).unwrap());
        let b = many.install(|| bootstrap_filter(&model, &y, &cfg, 42).unwrap());
        assert_eq!(a, b);
        let exact = kalman_loglik(&model, &y).unwrap();
        assert!((a.log_lik_hat - exact).abs() < 0.5);
    }

    proptest! {
        #[test]
        fn normalize_is_shift_invariant(
            lw in proptest::collection::vec(-50.0f64..50.0, 1..40),
            c in -500.0f64..500.0,
        ) {
            let a = normalize_log_weights(&lw).unwrap();
            let shifted: Vec<f64> = lw.iter().map(|v| v + c).collect();
            let b = normalize_log_weights(&shifted).unwrap();
            let sum: f64 = a.weights.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
            for (x, y) in a.weights.iter().zip(&b.weights) {
                prop_assert!((x - y).abs() < 1e-12);
            }
            prop_assert!((b.log_mean - a.log_mean - c).abs() < 1e-9);
        }

        #[test]
        fn systematic_and_residual_floor_guarantees(
            raw in proptest::collection::vec(0.0f64..1.0, 1..60),
            seed in any::<u64>(),
        ) {
            let total: f64 = raw.iter().sum();
            prop_assume!(total > 0.0);
            let w: Vec<f64> = raw.iter().map(|v| v / total).collect();
            let n = w.len();
            for scheme in [ResamplingScheme::Systematic, ResamplingScheme::Residual] {
                let idx = resample(&w, scheme, &mut stream(seed, &[0])).unwrap();
                prop_assert_eq!(idx.len(), n);
                let mut counts = vec![0usize; n];
                for &i in &idx {
                    prop_assert!(i < n);
                    counts[i] += 1;
                }
                for i in 0..n {
                    let nw = n as f64 * w[i];
                    // a hair of slack for cumulative-sum rounding
                    prop_assert!(counts[i] as f64 >= (nw - 1e-9).floor(), "{scheme} i={i} nw={nw} c={}", counts[i]);
                    if scheme == ResamplingScheme::Systematic {
                        prop_assert!(counts[i] as f64 <= (nw + 1e-9).ceil(), "i={i} nw={nw} c={}", counts[i]);
                    }
                }
            }
        }
    }
}
