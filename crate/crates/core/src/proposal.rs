//! Gaussian random-walk proposals in transformed coordinates.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::ChainError;
use crate::prior::{log_prior, PriorSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transform {
    Identity,
    /// The walk moves `ln theta`; `theta` must stay positive.
    Log,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProposalSpec {
    pub sds: Vec<f64>,
    pub transforms: Vec<Transform>,
}

impl ProposalSpec {
    pub fn new(sds: Vec<f64>, transforms: Vec<Transform>) -> Result<Self, ChainError> {
        let spec = ProposalSpec { sds, transforms };
        spec.validate()?;
        Ok(spec)
    }

    /// Step 0.05 on `mu`, `rho` and `ln sigma`.
    pub fn sv_default() -> Self {
        ProposalSpec {
            sds: vec![0.05; 3],
            transforms: vec![Transform::Identity, Transform::Identity, Transform::Log],
        }
    }

    pub fn lg_default() -> Self {
        ProposalSpec {
            sds: vec![0.05],
            transforms: vec![Transform::Identity],
        }
    }

    pub fn dim(&self) -> usize {
        self.sds.len()
    }

    pub fn validate(&self) -> Result<(), ChainError> {
        if self.sds.len() != self.transforms.len() {
            return Err(ChainError::Proposal(format!(
                "{} step sizes but {} transforms",
                self.sds.len(),
                self.transforms.len()
            )));
        }
        if let Some(sd) = self.sds.iter().find(|s| !(s.is_finite() && **s >= 0.0)) {
            return Err(ChainError::Proposal(format!(
                "step size {sd} must be finite and non-negative"
            )));
        }
        Ok(())
    }

    /// `sum ln theta_j` over log-transformed components.
    pub fn log_jacobian(&self, theta: &[f64]) -> f64 {
        theta
            .iter()
            .zip(&self.transforms)
            .filter(|(_, t)| **t == Transform::Log)
            .map(|(x, _)| x.ln())
            .sum()
    }
}

/// Symmetric random-walk move in transformed coordinates.
pub fn propose<R: Rng + ?Sized>(
    theta: &[f64],
    spec: &ProposalSpec,
    rng: &mut R,
) -> Result<Vec<f64>, ChainError> {
    if theta.len() != spec.dim() {
        return Err(ChainError::Dimension {
            model: theta.len(),
            what: "proposal",
            got: spec.dim(),
        });
    }
    theta
        .iter()
        .zip(spec.sds.iter().zip(&spec.transforms))
        .enumerate()
        .map(|(index, (&value, (&sd, &transform)))| {
            if transform == Transform::Log && (value.is_nan() || value <= 0.0) {
                return Err(ChainError::ProposalDomain { index, value });
            }
            let eps: f64 = rng.sample(StandardNormal);
            Ok(match transform {
                _ if sd == 0.0 => value,
                Transform::Identity => value + sd * eps,
                Transform::Log => (value.ln() + sd * eps).exp(),
            })
        })
        .collect()
}

/// Log prior density of the transformed coordinates, i.e. the natural-scale
/// prior plus the log-Jacobian of the inverse transform. This is the density
/// the random walk is symmetric against.
pub fn transformed_log_prior(theta: &[f64], prior: &PriorSpec, spec: &ProposalSpec) -> f64 {
    let lp = log_prior(theta, prior);
    if lp == f64::NEG_INFINITY {
        lp
    } else {
        lp + spec.log_jacobian(theta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prior::Marginal;
    use crate::rng::stream;

    #[test]
    fn zero_steps_are_exact() {
        let spec = ProposalSpec::new(vec![0.0; 3], ProposalSpec::sv_default().transforms).unwrap();
        let theta = [1.3, -0.2, 0.37];
        let out = propose(&theta, &spec, &mut stream(0, &[0])).unwrap();
        assert_eq!(out, theta);
    }

    #[test]
    fn sigma_stays_positive() {
        let spec = ProposalSpec::new(vec![0.05, 0.05, 5.0], ProposalSpec::sv_default().transforms).unwrap();
        let mut r = stream(1, &[0]);
        for _ in 0..10_000 {
            let out = propose(&[1.0, 0.9, 0.5], &spec, &mut r).unwrap();
            assert!(out[2] > 0.0);
        }
    }

    #[test]
    fn nonpositive_sigma_is_a_domain_error() {
        let spec = ProposalSpec::sv_default();
        let err = propose(&[1.0, 0.9, 0.0], &spec, &mut stream(0, &[0])).unwrap_err();
        assert_eq!(err, ChainError::ProposalDomain { index: 2, value: 0.0 });
    }

    #[test]
    fn empirical_step_size() {
        let spec = ProposalSpec::sv_default();
        let mut r = stream(2, &[0]);
        let n = 100_000;
        let d: Vec<f64> = (0..n)
            .map(|_| propose(&[1.0, 0.9, 0.5], &spec, &mut r).unwrap()[0] - 1.0)
            .collect();
        let m = d.iter().sum::<f64>() / n as f64;
        let sd = (d.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        assert!((sd / 0.05 - 1.0).abs() < 0.02, "{sd}");
    }

    #[test]
    fn lognormal_prior_is_gaussian_in_log_coordinates() {
        let prior = PriorSpec::new(vec![Marginal::LogNormal {
            log_mean: 0.3,
            log_sd: 2.0,
        }]);
        let spec = ProposalSpec::new(vec![0.1], vec![Transform::Log]).unwrap();
        for u in [-3.0f64, -0.5, 0.0, 0.3, 2.2] {
            let got = transformed_log_prior(&[u.exp()], &prior, &spec);
            let gauss = Marginal::Normal { mean: 0.3, sd: 2.0 }.log_density(u);
            assert!((got - gauss).abs() < 1e-12);
        }
    }

    #[test]
    fn invalid_specs() {
        assert!(ProposalSpec::new(vec![-0.1], vec![Transform::Identity]).is_err());
        assert!(ProposalSpec::new(vec![0.1, 0.1], vec![Transform::Identity]).is_err());
    }
}
