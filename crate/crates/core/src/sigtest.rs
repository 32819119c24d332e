//! Distribution-free acceptance thresholds for the biased MMD statistic.
//!
//! For a kernel bounded by `K`, the level-`alpha` test between windows of
//! sizes `m` and `n` accepts while
//!
//! ```text
//! MMD_b < sqrt(K/m + K/n) * (1 + sqrt(2 ln(1/alpha)))
//! ```
//!
//! which reduces to `sqrt(2K/m) * (1 + sqrt(2 ln(1/alpha)))` for `m = n`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Multiple-testing correction applied across the splits tested at one step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Correction {
    /// Bonferroni on the level: each split is tested at `alpha / splits`.
    BonferroniLevel,
    /// Threshold divided by the number of splits tested this step.
    BonferroniSplits,
    /// Threshold divided by `t - 1`, `t` the number of observations in the chain.
    BonferroniStream,
    None,
}

impl std::str::FromStr for Correction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bonferroni_level" | "level" => Ok(Self::BonferroniLevel),
            "bonferroni_splits" | "splits" => Ok(Self::BonferroniSplits),
            "bonferroni_stream" | "stream" => Ok(Self::BonferroniStream),
            "none" => Ok(Self::None),
            other => Err(Error::InvalidArgument(format!("unknown correction '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestConfig {
    alpha: f64,
    bound: f64,
    correction: Correction,
}

impl TestConfig {
    pub fn new(alpha: f64, bound: f64, correction: Correction) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidArgument(format!("alpha must lie in (0, 1), got {alpha}")));
        }
        if !(bound.is_finite() && bound > 0.0) {
            return Err(Error::InvalidArgument(format!("kernel bound must be positive, got {bound}")));
        }
        Ok(Self {
            alpha,
            bound,
            correction,
        })
    }

    /// Level `alpha` for a kernel bounded by 1 with the default correction.
    pub fn with_alpha(alpha: f64) -> Result<Self> {
        Self::new(alpha, 1.0, Correction::BonferroniLevel)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn correction(&self) -> Correction {
        self.correction
    }

    pub fn with_correction(mut self, correction: Correction) -> Self {
        self.correction = correction;
        self
    }

    /// Threshold for one split with left size `m` and right size `n`, when
    /// `num_splits` splits are tested on a chain representing `stream_len`
    /// observations.
    pub fn threshold(&self, m: u64, n: u64, num_splits: usize, stream_len: u64) -> Result<f64> {
        check_sizes(m, n)?;
        self.threshold_for_sizes(m as f64, n as f64, num_splits, stream_len)
    }

    /// As [`TestConfig::threshold`] with real-valued (effective) window sizes.
    pub fn threshold_for_sizes(&self, m: f64, n: f64, num_splits: usize, stream_len: u64) -> Result<f64> {
        if !(m > 0.0 && n > 0.0) {
            return Err(Error::InvalidArgument(format!("window sizes must be positive, got m={m}, n={n}")));
        }
        if num_splits < 1 {
            return Err(Error::InvalidArgument("at least one split must be tested".into()));
        }
        match self.correction {
            Correction::BonferroniLevel => Ok(epsilon(m, n, self.bound, self.alpha / num_splits as f64)),
            Correction::BonferroniSplits => corrected_threshold(epsilon(m, n, self.bound, self.alpha), num_splits, self),
            Correction::BonferroniStream => {
                let tests = stream_len.saturating_sub(1).max(1) as usize;
                corrected_threshold(epsilon(m, n, self.bound, self.alpha), tests, self)
            }
            Correction::None => Ok(epsilon(m, n, self.bound, self.alpha)),
        }
    }
}

fn check_sizes(m: u64, n: u64) -> Result<()> {
    if m == 0 || n == 0 {
        Err(Error::InvalidArgument(format!("window sizes must be positive, got m={m}, n={n}")))
    } else {
        Ok(())
    }
}

fn epsilon(m: f64, n: f64, bound: f64, alpha: f64) -> f64 {
    let scale = (bound / m + bound / n).sqrt();
    scale * (1.0 + (2.0 * (1.0 / alpha).ln()).sqrt())
}

/// Threshold for two windows of equal size `m`.
pub fn epsilon_equal(m: u64, config: &TestConfig) -> Result<f64> {
    check_sizes(m, m)?;
    let scale = (2.0 * config.bound / m as f64).sqrt();
    Ok(scale * (1.0 + (2.0 * (1.0 / config.alpha).ln()).sqrt()))
}

/// Threshold for windows of sizes `m` and `n`.
pub fn epsilon_unequal(m: u64, n: u64, config: &TestConfig) -> Result<f64> {
    check_sizes(m, n)?;
    Ok(epsilon(m as f64, n as f64, config.bound, config.alpha))
}

/// Divides `eps` by `num_tests` for the threshold-dividing corrections.
/// `BonferroniLevel` and `None` leave `eps` unchanged.
pub fn corrected_threshold(eps: f64, num_tests: usize, config: &TestConfig) -> Result<f64> {
    if num_tests < 1 {
        return Err(Error::InvalidArgument("num_tests must be at least 1".into()));
    }
    Ok(match config.correction {
        Correction::BonferroniSplits | Correction::BonferroniStream => eps / num_tests as f64,
        Correction::BonferroniLevel | Correction::None => eps,
    })
}

/// Rejects the null hypothesis when the statistic reaches the threshold.
pub fn reject(statistic: f64, threshold: f64) -> bool {
    statistic >= threshold
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(alpha: f64) -> TestConfig {
        TestConfig::new(alpha, 1.0, Correction::BonferroniSplits).unwrap()
    }

    #[test]
    fn equal_size_examples() {
        // alpha -> 1 drops the log term
        let near_one = TestConfig::new(1.0 - 1e-15, 1.0, Correction::None).unwrap();
        assert!((epsilon_equal(100, &near_one).unwrap() - 0.02f64.sqrt()).abs() < 1e-6);
        assert!((epsilon_equal(100, &cfg(0.1)).unwrap() - 0.444907).abs() < 1e-6);
    }

    #[test]
    fn unequal_size_examples() {
        assert!((epsilon_unequal(100, 50, &cfg(0.05)).unwrap() - 0.597167).abs() < 1e-6);
        assert!((epsilon_unequal(100, 50, &cfg(0.05)).unwrap() - 0.597164).abs() < 1e-5);
        assert!((epsilon_unequal(100, 100, &cfg(0.1)).unwrap() - 0.444907).abs() < 1e-6);
        let near_one = TestConfig::new(1.0 - 1e-15, 1.0, Correction::None).unwrap();
        let v = epsilon_unequal(30, 70, &near_one).unwrap();
        assert!((v - (1.0 / 30.0 + 1.0 / 70.0f64).sqrt()).abs() < 1e-6);
    }

    #[test]
    fn equal_reduction() {
        let c = cfg(0.01);
        for m in 1..=10_000u64 {
            let a = epsilon_equal(m, &c).unwrap();
            let b = epsilon_unequal(m, m, &c).unwrap();
            assert!((a - b).abs() <= 1e-12 * a);
        }
    }

    #[test]
    fn monotonicity_grid() {
        let alphas = [0.2, 0.1, 0.05, 0.01, 0.001];
        let sizes = [1u64, 2, 5, 10, 100, 1000];
        for &m in &sizes {
            for &n in &sizes {
                for w in alphas.windows(2) {
                    assert!(epsilon_unequal(m, n, &cfg(w[1])).unwrap() > epsilon_unequal(m, n, &cfg(w[0])).unwrap());
                }
                let c = cfg(0.05);
                assert_eq!(epsilon_unequal(m, n, &c).unwrap(), epsilon_unequal(n, m, &c).unwrap());
                assert!(epsilon_unequal(m + 1, n, &c).unwrap() < epsilon_unequal(m, n, &c).unwrap());
                assert!(epsilon_unequal(m, n + 1, &c).unwrap() < epsilon_unequal(m, n, &c).unwrap());
            }
        }
    }

    #[test]
    fn corrections() {
        let c = cfg(0.1);
        assert!((corrected_threshold(0.6, 3, &c).unwrap() - 0.2).abs() < 1e-15);
        assert_eq!(corrected_threshold(0.6, 1, &c).unwrap(), 0.6);
        assert!((corrected_threshold(0.444907, 4, &c).unwrap() - 0.111227).abs() < 1e-6);
        assert!(corrected_threshold(0.6, 0, &c).is_err());
        let none = c.with_correction(Correction::None);
        assert_eq!(corrected_threshold(0.6, 3, &none).unwrap(), 0.6);
    }

    #[test]
    fn threshold_dispatch() {
        let c = cfg(0.1);
        let eps = epsilon_unequal(8, 4, &c).unwrap();
        assert_eq!(c.threshold(8, 4, 2, 12).unwrap(), eps / 2.0);
        let stream = c.with_correction(Correction::BonferroniStream);
        assert_eq!(stream.threshold(8, 4, 2, 12).unwrap(), eps / 11.0);
        let none = c.with_correction(Correction::None);
        assert_eq!(none.threshold(8, 4, 2, 12).unwrap(), eps);
        let level = c.with_correction(Correction::BonferroniLevel);
        let lvl = TestConfig::new(0.05, 1.0, Correction::None).unwrap();
        assert_eq!(level.threshold(8, 4, 2, 12).unwrap(), epsilon_unequal(8, 4, &lvl).unwrap());
        assert!(c.threshold(0, 4, 1, 4).is_err());
        assert!(c.threshold(4, 4, 0, 8).is_err());
    }

    #[test]
    fn reject_is_inclusive() {
        assert!(reject(0.5, 0.5));
        assert!(!reject(0.0, 0.1));
        assert!(reject(0.45, 0.111));
    }

    #[test]
    fn config_validation() {
        assert!(TestConfig::new(0.0, 1.0, Correction::None).is_err());
        assert!(TestConfig::new(1.0, 1.0, Correction::None).is_err());
        assert!(TestConfig::new(0.1, 0.0, Correction::None).is_err());
        assert_eq!("splits".parse::<Correction>().unwrap(), Correction::BonferroniSplits);
        assert!("holm".parse::<Correction>().is_err());
    }
}
