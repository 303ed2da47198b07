use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Serialized form embedded in checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    #[serde(rename = "T")]
    pub steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    pub sigma_scale: f64,
}

/// Largest admissible per-step beta; the linear endpoints are scaled by
/// `1000 / T` and would leave `(0, 1)` for very short chains.
pub const BETA_CAP: f64 = 0.999;

impl ScheduleConfig {
    /// Linear schedule with `beta_min = 1e-4 * 1000/T`, `beta_max = 2e-2 * 1000/T`
    /// and reverse variance `0.8 * beta_tilde`.
    pub fn linear(steps: usize) -> Self {
        let k = 1000.0 / steps as f64;
        Self { steps, beta_min: (1e-4 * k).min(BETA_CAP), beta_max: (2e-2 * k).min(BETA_CAP), sigma_scale: 0.8 }
    }
}

/// Per-step quantities indexed by `t` directly; index 0 is the clean data.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    config: ScheduleConfig,
    betas: Vec<f64>,
    alphas: Vec<f64>,
    beta_tilde: Vec<f64>,
}

impl NoiseSchedule {
    pub fn new(config: ScheduleConfig) -> Result<Self> {
        let t_max = config.steps;
        if t_max < 2 {
            return Err(Error::Config(format!("diffusion needs T >= 2, got {t_max}")));
        }
        if !(config.beta_min > 0.0 && config.beta_min < config.beta_max && config.beta_max < 1.0) {
            return Err(Error::Config(format!(
                "need 0 < beta_min < beta_max < 1, got {} and {}",
                config.beta_min, config.beta_max
            )));
        }
        if !(0.0..=1.0).contains(&config.sigma_scale) {
            return Err(Error::Config(format!("sigma_scale {} outside [0, 1]", config.sigma_scale)));
        }
        let mut betas = vec![0.0; t_max + 1];
        let mut alphas = vec![1.0; t_max + 1];
        let mut beta_tilde = vec![0.0; t_max + 1];
        for t in 1..=t_max {
            let frac = (t - 1) as f64 / (t_max - 1) as f64;
            betas[t] = config.beta_min + (config.beta_max - config.beta_min) * frac;
            alphas[t] = alphas[t - 1] * (1.0 - betas[t]);
            beta_tilde[t] = (1.0 - alphas[t - 1]) / (1.0 - alphas[t]) * betas[t];
        }
        Ok(Self { config, betas, alphas, beta_tilde })
    }

    pub fn linear(steps: usize) -> Result<Self> {
        Self::new(ScheduleConfig::linear(steps))
    }

    pub fn config(&self) -> ScheduleConfig {
        self.config
    }

    pub fn steps(&self) -> usize {
        self.config.steps
    }

    pub fn sigma_scale(&self) -> f64 {
        self.config.sigma_scale
    }

    /// Copy with the reverse-variance multiplier replaced.
    pub fn with_sigma_scale(&self, k: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&k) {
            return Err(Error::Config(format!("sigma_scale {k} outside [0, 1]")));
        }
        let mut s = self.clone();
        s.config.sigma_scale = k;
        Ok(s)
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t]
    }

    /// Cumulative product of `1 - beta` up to `t`; `alpha(0) == 1`.
    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t]
    }

    pub fn beta_tilde(&self, t: usize) -> f64 {
        self.beta_tilde[t]
    }

    /// Reverse-process standard deviation `sqrt(sigma_scale * beta_tilde)`.
    pub fn sigma(&self, t: usize) -> f64 {
        (self.config.sigma_scale * self.beta_tilde[t]).sqrt()
    }

    /// Rounds `frac * T` to a step index.
    pub fn step_at_fraction(&self, frac: f64) -> Result<usize> {
        if !(0.0..=1.0).contains(&frac) {
            return Err(Error::Config(format!("step fraction {frac} outside [0, 1]")));
        }
        Ok((frac * self.steps() as f64).round() as usize)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_endpoints() {
        let s = NoiseSchedule::linear(1000).unwrap();
        assert!((s.beta(1) - 1e-4).abs() < 1e-15);
        assert!((s.beta(1000) - 2e-2).abs() < 1e-15);
        assert!((s.alpha(1) - 0.9999).abs() < 1e-15);
        assert_eq!(s.beta_tilde(1), 0.0);
        assert_eq!(s.alpha(0), 1.0);
        assert_eq!(s.sigma_scale(), 0.8);

        let s = NoiseSchedule::linear(500).unwrap();
        assert!((s.beta(1) - 2e-4).abs() < 1e-15);
        assert!((s.beta(500) - 4e-2).abs() < 1e-15);
    }

    #[test]
    fn identities_hold() {
        for t_max in [10, 100, 1000] {
            let s = NoiseSchedule::linear(t_max).unwrap();
            let mut prod = 1.0;
            for t in 1..=t_max {
                prod *= 1.0 - s.beta(t);
                assert!((s.alpha(t) - prod).abs() <= 1e-12 * prod);
                let bt = (1.0 - s.alpha(t - 1)) / (1.0 - s.alpha(t)) * s.beta(t);
                assert!((s.beta_tilde(t) - bt).abs() <= 1e-12 * bt.max(1e-300));
                if t > 1 {
                    assert!(s.beta(t) > s.beta(t - 1));
                    assert!(s.alpha(t) < s.alpha(t - 1));
                }
            }
        }
    }

    #[test]
    fn rejects_short_chains_and_bad_scale() {
        assert!(matches!(NoiseSchedule::linear(1), Err(Error::Config(_))));
        let s = NoiseSchedule::linear(10).unwrap();
        assert!(s.with_sigma_scale(1.5).is_err());
        assert_eq!(s.step_at_fraction(0.2).unwrap(), 2);
    }
}
