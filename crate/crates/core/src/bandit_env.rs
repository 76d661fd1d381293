//! Ground-truth linear bandit: a hidden ℓ* drawn from the prior and noisy
//! linear rewards.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::geometry::UnitVector;
use crate::priors::{PriorSpec, Sampler};
use crate::rng::{self, stream, SimRng};
use crate::{Error, Result};

/// Tolerance on ‖a‖ = 1 accepted by [`Environment::pull`].
pub const PULL_UNIT_TOL: f64 = 1e-6;

/// What the exploring algorithm may do with an environment: pull arms and
/// read the clock. The hidden parameter is not reachable through it.
pub trait RewardSource {
    fn pull(&mut self, a: &UnitVector) -> Result<f64>;
    fn steps(&self) -> u64;
}

#[derive(Debug, Clone)]
pub struct Environment {
    hidden_theta: Vec<f64>,
    t: u64,
    noise_sd: f64,
    rng: SimRng,
}

impl Environment {
    /// Draws ℓ* from `prior`; unit reward noise.
    pub fn spawn(prior: &PriorSpec, seed: u64) -> Result<Self> {
        let theta = Sampler::new(prior)?.draw(&mut rng::rng(seed, &[stream::ENV_THETA]));
        Ok(Self::with_theta(theta, 1.0, seed))
    }

    /// Environment with a fixed ℓ*, as used by evaluation code and tests.
    pub fn with_theta(theta: Vec<f64>, noise_sd: f64, seed: u64) -> Self {
        Environment {
            hidden_theta: theta,
            t: 0,
            noise_sd,
            rng: rng::rng(seed, &[stream::ENV_NOISE]),
        }
    }

    pub fn with_noise_sd(mut self, noise_sd: f64) -> Result<Self> {
        if !(noise_sd >= 0.0 && noise_sd.is_finite()) {
            return Err(Error::Precondition(format!("noise_sd = {noise_sd} must be ≥ 0")));
        }
        self.noise_sd = noise_sd;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.hidden_theta.len()
    }

    pub fn noise_sd(&self) -> f64 {
        self.noise_sd
    }

    /// Evaluation-only access to ℓ*.
    pub fn reveal_theta_for_evaluation(&self) -> &[f64] {
        &self.hidden_theta
    }
}

impl RewardSource for Environment {
    fn pull(&mut self, a: &UnitVector) -> Result<f64> {
        crate::geometry::check_dim(self.dim(), a.dim())?;
        let norm = a.as_vector().norm();
        if (norm - 1.0).abs() > PULL_UNIT_TOL {
            return Err(Error::NotUnit { norm });
        }
        let mean = a.dot(&self.hidden_theta);
        self.t += 1;
        if self.noise_sd == 0.0 {
            return Ok(mean);
        }
        let w: f64 = self.rng.sample(StandardNormal);
        Ok(mean + self.noise_sd * w)
    }

    fn steps(&self) -> u64 {
        self.t
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn point_mass_prior_fixes_theta() {
        let p = PriorSpec::Empirical {
            points: vec![vec![0.2, -0.1]],
            weights: vec![1.0],
        };
        let env = Environment::spawn(&p, 5).unwrap();
        assert_eq!(env.reveal_theta_for_evaluation(), &[0.2, -0.1]);
    }

    #[test]
    fn spawn_is_seed_deterministic() {
        let p = PriorSpec::uniform_ball(3, 1.0);
        assert_eq!(
            Environment::spawn(&p, 11).unwrap().reveal_theta_for_evaluation(),
            Environment::spawn(&p, 11).unwrap().reveal_theta_for_evaluation()
        );
    }

    #[test]
    fn noiseless_pull_is_exact() {
        let mut env = Environment::with_theta(vec![0.6, 0.8], 0.0, 0);
        assert_eq!(env.pull(&UnitVector::basis(2, 0)).unwrap(), 0.6);
        let a = UnitVector::from_slice(&[0.6, 0.8]).unwrap();
        assert!((env.pull(&a).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(env.steps(), 2);
    }

    #[test]
    fn spawned_theta_mean_matches_prior() {
        let p = PriorSpec::isotropic_gaussian(vec![0.0, 0.0], 1.0);
        let n = 10_000;
        let mut m = [0.0; 2];
        for s in 0..n {
            let e = Environment::spawn(&p, s).unwrap();
            for (mk, x) in m.iter_mut().zip(e.reveal_theta_for_evaluation()) {
                *mk += x / n as f64;
            }
        }
        assert!(m.iter().all(|x| x.abs() < 0.05), "{m:?}");
    }

    #[test]
    fn noisy_rewards_have_unit_variance() {
        let mut env = Environment::with_theta(vec![0.3, 0.4], 1.0, 7);
        let a = UnitVector::basis(2, 1);
        let n = 100_000;
        let r: Vec<f64> = (0..n).map(|_| env.pull(&a).unwrap()).collect();
        let (mean, se) = crate::stats::mean_se(&r);
        assert!((mean - 0.4).abs() < 3.0 * se.max(1.0 / (n as f64).sqrt()));
        let var = r.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((var - 1.0).abs() < 0.05);
        assert_eq!(env.steps(), n as u64);
    }
}
