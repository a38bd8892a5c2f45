//! State-space models.
//!
//! A model is anything that can draw an initial state, propagate a state one
//! step, and score an observation given a state. Everything else in the crate
//! (filtering, PMMH, evidence) is written against [`StateSpaceModel`], so a new
//! model needs exactly those methods plus [`StateSpaceModel::observation_sample`]
//! for simulation.
//!
//! Two models ship with the crate:
//!
//! * [`SvParams`]: stochastic volatility, `y_t | x_t ~ N(0, exp(x_t))` with
//!   AR(1) log-volatility `x_t = mu + rho (x_{t-1} - mu) + sigma eps_t`.
//! * [`LgParams`]: linear-Gaussian AR(1) observed in noise, with an exact
//!   Kalman likelihood ([`kalman_loglik`]) used as an oracle.

use std::f64::consts::PI;
use std::ops::Deref;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::ModelError;
use crate::rng::{self, domain};

pub(crate) const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// A finite, non-empty sequence of observations or latent states.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries(Vec<f64>);

impl TimeSeries {
    pub fn new(values: Vec<f64>) -> Result<Self, ModelError> {
        if values.is_empty() {
            return Err(ModelError::EmptySeries);
        }
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(ModelError::NonFinite { index, value });
        }
        Ok(TimeSeries(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for TimeSeries {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// The extension surface: initial law, transition law and observation law of a
/// univariate state-space model with fixed parameters.
pub trait StateSpaceModel: Sync {
    fn initial_sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<f64, ModelError>;

    fn transition_sample<R: Rng + ?Sized>(&self, x_prev: f64, rng: &mut R) -> f64;

    /// `log p(y | x)`. Must be deterministic.
    fn log_obs_density(&self, y: f64, x: f64) -> f64;

    /// Draw `y ~ p(. | x)`. Only needed for simulation.
    fn observation_sample<R: Rng + ?Sized>(&self, x: f64, rng: &mut R) -> f64;
}

/// A parametric family of models indexed by a real parameter vector `theta`
/// in natural coordinates.
pub trait ModelFamily: Sync {
    type Model: StateSpaceModel;

    fn param_names(&self) -> &[&'static str];

    fn build(&self, theta: &[f64]) -> Result<Self::Model, ModelError>;

    fn dim(&self) -> usize {
        self.param_names().len()
    }
}

fn check_finite(name: &'static str, value: f64) -> Result<(), ModelError> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(ModelError::InvalidParameter {
            name,
            value,
            reason: "must be finite",
        })
    }
}

/// Stochastic-volatility parameters.
///
/// `sigma = 0` is accepted and gives deterministic dynamics; inference always
/// works with `sigma > 0` because the chain moves `log sigma`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvParams {
    pub mu: f64,
    pub rho: f64,
    pub sigma: f64,
}

impl SvParams {
    pub fn new(mu: f64, rho: f64, sigma: f64) -> Result<Self, ModelError> {
        check_finite("mu", mu)?;
        check_finite("rho", rho)?;
        check_finite("sigma", sigma)?;
        if sigma < 0.0 {
            return Err(ModelError::InvalidParameter {
                name: "sigma",
                value: sigma,
                reason: "must be non-negative",
            });
        }
        Ok(SvParams { mu, rho, sigma })
    }

    pub fn stationary_variance(&self) -> Result<f64, ModelError> {
        if self.rho.abs() >= 1.0 {
            return Err(ModelError::NonStationary {
                name: "rho",
                value: self.rho,
            });
        }
        Ok(self.sigma * self.sigma / (1.0 - self.rho * self.rho))
    }
}

/// `-(ln 2pi + x + y^2 e^{-x}) / 2`, the log-density of `N(0, e^x)` at `y`.
#[inline]
pub fn sv_log_obs_density(y: f64, x: f64) -> f64 {
    -0.5 * (LN_2PI + x + y * y * (-x).exp())
}

impl StateSpaceModel for SvParams {
    fn initial_sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<f64, ModelError> {
        let sd = self.stationary_variance()?.sqrt();
        let eps: f64 = rng.sample(StandardNormal);
        Ok(self.mu + sd * eps)
    }

    #[inline]
    fn transition_sample<R: Rng + ?Sized>(&self, x_prev: f64, rng: &mut R) -> f64 {
        let eps: f64 = rng.sample(StandardNormal);
        self.mu + self.rho * (x_prev - self.mu) + self.sigma * eps
    }

    #[inline]
    fn log_obs_density(&self, y: f64, x: f64) -> f64 {
        sv_log_obs_density(y, x)
    }

    fn observation_sample<R: Rng + ?Sized>(&self, x: f64, rng: &mut R) -> f64 {
        let eta: f64 = rng.sample(StandardNormal);
        (0.5 * x).exp() * eta
    }
}

/// The SV family over `theta = (mu, rho, sigma)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct SvFamily;

impl ModelFamily for SvFamily {
    type Model = SvParams;

    fn param_names(&self) -> &[&'static str] {
        &["mu", "rho", "sigma"]
    }

    fn build(&self, theta: &[f64]) -> Result<SvParams, ModelError> {
        match *theta {
            [mu, rho, sigma] => SvParams::new(mu, rho, sigma),
            _ => Err(ModelError::Dimension {
                expected: 3,
                got: theta.len(),
            }),
        }
    }
}

/// Linear-Gaussian parameters: `x_t = phi x_{t-1} + sigma_x eps_t`,
/// `y_t = x_t + sigma_y eta_t`, `x_1 ~ N(0, sigma_x^2 / (1 - phi^2))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LgParams {
    pub phi: f64,
    pub sigma_x: f64,
    pub sigma_y: f64,
}

impl LgParams {
    pub fn new(phi: f64, sigma_x: f64, sigma_y: f64) -> Result<Self, ModelError> {
        check_finite("phi", phi)?;
        for (name, value) in [("sigma_x", sigma_x), ("sigma_y", sigma_y)] {
            check_finite(name, value)?;
            if value <= 0.0 {
                return Err(ModelError::InvalidParameter {
                    name,
                    value,
                    reason: "must be positive",
                });
            }
        }
        Ok(LgParams {
            phi,
            sigma_x,
            sigma_y,
        })
    }

    pub fn stationary_variance(&self) -> Result<f64, ModelError> {
        if self.phi.abs() >= 1.0 {
            return Err(ModelError::NonStationary {
                name: "phi",
                value: self.phi,
            });
        }
        Ok(self.sigma_x * self.sigma_x / (1.0 - self.phi * self.phi))
    }
}

impl StateSpaceModel for LgParams {
    fn initial_sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<f64, ModelError> {
        let sd = self.stationary_variance()?.sqrt();
        let eps: f64 = rng.sample(StandardNormal);
        Ok(sd * eps)
    }

    #[inline]
    fn transition_sample<R: Rng + ?Sized>(&self, x_prev: f64, rng: &mut R) -> f64 {
        let eps: f64 = rng.sample(StandardNormal);
        self.phi * x_prev + self.sigma_x * eps
    }

    #[inline]
    fn log_obs_density(&self, y: f64, x: f64) -> f64 {
        let z = (y - x) / self.sigma_y;
        -0.5 * (LN_2PI + z * z) - self.sigma_y.ln()
    }

    fn observation_sample<R: Rng + ?Sized>(&self, x: f64, rng: &mut R) -> f64 {
        let eta: f64 = rng.sample(StandardNormal);
        x + self.sigma_y * eta
    }
}

/// The LG family with noise scales held fixed and `theta = (phi)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LgPhiFamily {
    pub sigma_x: f64,
    pub sigma_y: f64,
}

impl ModelFamily for LgPhiFamily {
    type Model = LgParams;

    fn param_names(&self) -> &[&'static str] {
        &["phi"]
    }

    fn build(&self, theta: &[f64]) -> Result<LgParams, ModelError> {
        match *theta {
            [phi] => LgParams::new(phi, self.sigma_x, self.sigma_y),
            _ => Err(ModelError::Dimension {
                expected: 1,
                got: theta.len(),
            }),
        }
    }
}

/// Exact `log p(y_{1:T})` under the LG model by the prediction-error
/// decomposition.
pub fn kalman_loglik(params: &LgParams, y: &[f64]) -> Result<f64, ModelError> {
    let q = params.sigma_x * params.sigma_x;
    let r = params.sigma_y * params.sigma_y;
    let mut mean = 0.0;
    let mut var = params.stationary_variance()?;
    let mut loglik = 0.0;
    for &obs in y {
        let s = var + r;
        let innov = obs - mean;
        loglik -= 0.5 * ((2.0 * PI * s).ln() + innov * innov / s);
        let gain = var / s;
        let filt_mean = mean + gain * innov;
        let filt_var = (1.0 - gain) * var;
        mean = params.phi * filt_mean;
        var = params.phi * params.phi * filt_var + q;
    }
    Ok(loglik)
}

/// Draw `(x_{1:T}, y_{1:T})` from `model`. The whole path uses one stream
/// derived from `seed`, so the result is a pure function of `(model, t, seed)`.
pub fn simulate<M: StateSpaceModel>(
    model: &M,
    t: usize,
    seed: u64,
) -> Result<(TimeSeries, TimeSeries), ModelError> {
    if t == 0 {
        return Err(ModelError::EmptySeries);
    }
    let mut rng = rng::stream(seed, &[domain::SIMULATE]);
    let mut states = Vec::with_capacity(t);
    let mut obs = Vec::with_capacity(t);
    let mut x = model.initial_sample(&mut rng)?;
    for step in 0..t {
        if step > 0 {
            x = model.transition_sample(x, &mut rng);
        }
        states.push(x);
        obs.push(model.observation_sample(x, &mut rng));
    }
    Ok((TimeSeries::new(states)?, TimeSeries::new(obs)?))
}
