//! Marginal priors over model parameters.

use rand::Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ContinuousCDF, Normal as StdNormal};

use crate::model::LN_2PI;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Marginal {
    Normal { mean: f64, sd: f64 },
    /// Open interval `(lo, hi)`.
    Uniform { lo: f64, hi: f64 },
    /// `ln x ~ N(log_mean, log_sd^2)`.
    LogNormal { log_mean: f64, log_sd: f64 },
    /// Normal restricted to the open interval `(lo, hi)` and renormalised.
    TruncatedNormal { mean: f64, sd: f64, lo: f64, hi: f64 },
}

fn std_normal() -> StdNormal {
    StdNormal::new(0.0, 1.0).expect("standard normal")
}

#[inline]
fn normal_log_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -0.5 * (LN_2PI + z * z) - sd.ln()
}

impl Marginal {
    pub fn validate(&self) -> Result<(), String> {
        let ok = match *self {
            Marginal::Normal { mean, sd } => mean.is_finite() && sd.is_finite() && sd > 0.0,
            Marginal::Uniform { lo, hi } => lo.is_finite() && hi.is_finite() && lo < hi,
            Marginal::LogNormal { log_mean, log_sd } => {
                log_mean.is_finite() && log_sd.is_finite() && log_sd > 0.0
            }
            Marginal::TruncatedNormal { mean, sd, lo, hi } => {
                mean.is_finite() && sd.is_finite() && sd > 0.0 && lo < hi && !lo.is_nan() && !hi.is_nan()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(format!("invalid prior {self:?}"))
        }
    }

    /// Probability mass of the untruncated normal inside `(lo, hi)`.
    fn truncation_mass(mean: f64, sd: f64, lo: f64, hi: f64) -> f64 {
        let n = std_normal();
        n.cdf((hi - mean) / sd) - n.cdf((lo - mean) / sd)
    }

    pub fn log_density(&self, x: f64) -> f64 {
        if x.is_nan() {
            return f64::NEG_INFINITY;
        }
        match *self {
            Marginal::Normal { mean, sd } => normal_log_pdf(x, mean, sd),
            Marginal::Uniform { lo, hi } => {
                if x > lo && x < hi {
                    -(hi - lo).ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
            Marginal::LogNormal { log_mean, log_sd } => {
                if x > 0.0 {
                    normal_log_pdf(x.ln(), log_mean, log_sd) - x.ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
            Marginal::TruncatedNormal { mean, sd, lo, hi } => {
                if x > lo && x < hi {
                    normal_log_pdf(x, mean, sd) - Self::truncation_mass(mean, sd, lo, hi).ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Marginal::Normal { mean, sd } => {
                let z: f64 = rng.sample(StandardNormal);
                mean + sd * z
            }
            Marginal::Uniform { lo, hi } => loop {
                let x = lo + (hi - lo) * rng.random::<f64>();
                if x > lo {
                    break x;
                }
            },
            Marginal::LogNormal { log_mean, log_sd } => {
                let z: f64 = rng.sample(StandardNormal);
                (log_mean + log_sd * z).exp()
            }
            Marginal::TruncatedNormal { mean, sd, lo, hi } => {
                let n = std_normal();
                let a = n.cdf((lo - mean) / sd);
                let b = n.cdf((hi - mean) / sd);
                loop {
                    let p = a + (b - a) * rng.random::<f64>();
                    let x = mean + sd * n.inverse_cdf(p);
                    if x > lo && x < hi {
                        break x;
                    }
                }
            }
        }
    }

    /// Support endpoints (possibly infinite).
    pub fn support(&self) -> (f64, f64) {
        match *self {
            Marginal::Normal { .. } => (f64::NEG_INFINITY, f64::INFINITY),
            Marginal::Uniform { lo, hi } | Marginal::TruncatedNormal { lo, hi, .. } => (lo, hi),
            Marginal::LogNormal { .. } => (0.0, f64::INFINITY),
        }
    }
}

/// Independent marginal priors, one per parameter in model order.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorSpec {
    pub marginals: Vec<Marginal>,
}

impl PriorSpec {
    pub fn new(marginals: Vec<Marginal>) -> Self {
        PriorSpec { marginals }
    }

    /// `mu ~ N(0, 10^2)`, `rho ~ U(-1, 1)`, `sigma ~ LogNormal(0, 2^2)`.
    pub fn sv_default() -> Self {
        PriorSpec::new(vec![
            Marginal::Normal { mean: 0.0, sd: 10.0 },
            Marginal::Uniform { lo: -1.0, hi: 1.0 },
            Marginal::LogNormal {
                log_mean: 0.0,
                log_sd: 2.0,
            },
        ])
    }

    /// `phi ~ N(0, 1)` truncated to `(-1, 1)`.
    pub fn lg_default() -> Self {
        PriorSpec::new(vec![Marginal::TruncatedNormal {
            mean: 0.0,
            sd: 1.0,
            lo: -1.0,
            hi: 1.0,
        }])
    }

    pub fn dim(&self) -> usize {
        self.marginals.len()
    }

    pub fn validate(&self) -> Result<(), String> {
        self.marginals.iter().try_for_each(Marginal::validate)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.marginals.iter().map(|m| m.sample(rng)).collect()
    }
}

/// Sum of marginal log-densities; `-inf` outside the support.
///
/// Panics if `theta` and `prior` differ in dimension.
pub fn log_prior(theta: &[f64], prior: &PriorSpec) -> f64 {
    assert_eq!(theta.len(), prior.dim(), "theta/prior dimension mismatch");
    let mut total = 0.0;
    for (&x, m) in theta.iter().zip(&prior.marginals) {
        let lp = m.log_density(x);
        if lp == f64::NEG_INFINITY {
            return lp;
        }
        total += lp;
    }
    total
}
