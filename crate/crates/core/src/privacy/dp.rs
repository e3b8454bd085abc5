use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_DELTA: f64 = 1e-5;

/// Per-round Gaussian-mechanism budget. Budgets compose linearly over rounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DpConfig {
    pub epsilon: f64,
    pub delta: f64,
    pub clip_norm: f64,
    pub rounds: usize,
}

impl DpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::invalid(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::invalid(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        if !(self.clip_norm.is_finite() && self.clip_norm > 0.0) {
            return Err(Error::invalid(format!("clip_norm must be positive, got {}", self.clip_norm)));
        }
        Ok(())
    }

    pub fn sigma(&self) -> Result<f64> {
        gaussian_sigma(self.clip_norm, self.epsilon, self.delta)
    }

    /// Total epsilon spent after `rounds` rounds under basic composition.
    pub fn total_epsilon(&self) -> f64 {
        self.rounds as f64 * self.epsilon
    }
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Scales `delta` down so its L2 norm is at most `clip_norm`. The bound holds
/// for the rounded result, not just in exact arithmetic.
pub fn clip_update(delta: &[f64], clip_norm: f64) -> Vec<f64> {
    let norm = l2(delta);
    if norm <= clip_norm || norm == 0.0 {
        return delta.to_vec();
    }
    let mut factor = clip_norm / norm;
    loop {
        let clipped: Vec<f64> = delta.iter().map(|v| v * factor).collect();
        if l2(&clipped) <= clip_norm {
            return clipped;
        }
        factor *= 1.0 - f64::EPSILON;
    }
}

/// `sigma = C * sqrt(2 ln(1.25 / delta)) / epsilon`.
pub fn gaussian_sigma(clip_norm: f64, epsilon: f64, delta: f64) -> Result<f64> {
    if !(clip_norm.is_finite() && clip_norm > 0.0) {
        return Err(Error::invalid("clip norm must be positive"));
    }
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(Error::invalid("epsilon must be positive"));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid("delta must lie in (0, 1)"));
    }
    Ok(clip_norm * (2.0 * (1.25 / delta).ln()).sqrt() / epsilon)
}

/// Clips `delta` and adds i.i.d. `N(0, sigma^2)` noise to every coordinate.
pub fn dp_privatize<R: Rng + ?Sized>(delta: &[f64], cfg: &DpConfig, rng: &mut R) -> Result<Vec<f64>> {
    cfg.validate()?;
    let sigma = cfg.sigma()?;
    let noise = Normal::new(0.0, sigma).map_err(|e| Error::invalid(e.to_string()))?;
    Ok(clip_update(delta, cfg.clip_norm)
        .into_iter()
        .map(|v| v + noise.sample(rng))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn norm(v: &[f64]) -> f64 {
        v.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    #[test]
    fn clipping_cases() {
        assert_eq!(clip_update(&[0.1, 0.2], 1.0), vec![0.1, 0.2]);
        let c = clip_update(&[3.0, 4.0], 1.0);
        assert!((c[0] - 0.6).abs() < 1e-15 && (c[1] - 0.8).abs() < 1e-15);
        assert_eq!(clip_update(&[0.0, 0.0], 1.0), vec![0.0, 0.0]);
    }

    #[test]
    fn clipped_norm_is_min_of_norm_and_bound() {
        let mut r = rng::seeded(3);
        for _ in 0..500 {
            let v: Vec<f64> = (0..7).map(|_| r.random_range(-3.0..3.0)).collect();
            let c = r.random_range(0.1..5.0);
            assert!((norm(&clip_update(&v, c)) - norm(&v).min(c)).abs() < 1e-12);
        }
    }

    #[test]
    fn sigma_identities() {
        let delta = 1.25 / std::f64::consts::E.powi(2);
        assert!((gaussian_sigma(1.0, 2.0, delta).unwrap() - 1.0).abs() < 1e-15);
        let a = gaussian_sigma(1.3, 0.7, 1e-5).unwrap();
        let b = gaussian_sigma(1.3, 1.4, 1e-5).unwrap();
        assert_eq!(a / b, 2.0);
        let s = gaussian_sigma(1.0, 1.0, 1e-5).unwrap();
        assert!((s - 4.844805262605389).abs() < 1e-3);
        assert!(gaussian_sigma(1.0, 0.0, 1e-5).is_err());
        assert!(gaussian_sigma(1.0, 1.0, 1.0).is_err());
        assert!(gaussian_sigma(-1.0, 1.0, 0.1).is_err());
    }

    #[test]
    fn huge_epsilon_means_negligible_noise() {
        let cfg = DpConfig { epsilon: 1e9, delta: 1e-5, clip_norm: 1.0, rounds: 1 };
        let v = [3.0, 4.0];
        let out = dp_privatize(&v, &cfg, &mut rng::seeded(0)).unwrap();
        let clipped = clip_update(&v, 1.0);
        assert!(out.iter().zip(&clipped).all(|(a, b)| (a - b).abs() < 1e-6));
    }

    #[test]
    fn seeds_change_noise() {
        let cfg = DpConfig { epsilon: 1.0, delta: 1e-5, clip_norm: 1.0, rounds: 1 };
        let a = dp_privatize(&[0.5; 4], &cfg, &mut rng::seeded(1)).unwrap();
        let b = dp_privatize(&[0.5; 4], &cfg, &mut rng::seeded(2)).unwrap();
        assert_ne!(a, b);
        let c = dp_privatize(&[0.5; 4], &cfg, &mut rng::seeded(1)).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn composition_is_linear() {
        let cfg = DpConfig { epsilon: 0.75, delta: 1e-5, clip_norm: 1.0, rounds: 12 };
        assert_eq!(cfg.total_epsilon(), 9.0);
    }
}
