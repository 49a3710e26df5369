use serde::{Deserialize, Serialize};

use crate::attention::Temperature;
use crate::error::{Error, Result};

/// Optimization settings shared by both training phases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Query/projection (feature) steps.
    pub iterations: usize,
    /// Appearance steps.
    pub rgb_iterations: usize,
    /// Pixels sampled per model per step.
    pub points: usize,
    pub lambda_cos: f64,
    pub lambda_l2: f64,
    pub lr_query: f64,
    pub lr_w_m: f64,
    pub lr_color: f64,
    pub lr_opacity: f64,
    pub seed: u64,
    pub temperature: Temperature,
    /// Steps per report record.
    pub log_interval: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 30_000,
            rgb_iterations: 30_000,
            points: 2000,
            lambda_cos: 1.0,
            lambda_l2: 0.2,
            lr_query: 2.5e-2,
            lr_w_m: 1e-3,
            lr_color: 2.5e-3,
            lr_opacity: 5e-2,
            seed: 0,
            temperature: Temperature::InvSqrtD,
            log_interval: 100,
        }
    }
}

impl TrainConfig {
    /// The short schedule.
    pub fn fast() -> Self {
        Self { iterations: 7_000, rgb_iterations: 7_000, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.points == 0 {
            return bad("points must be at least 1".into());
        }
        if self.log_interval == 0 {
            return bad("log_interval must be at least 1".into());
        }
        for (name, lr) in [
            ("lr_query", self.lr_query),
            ("lr_w_m", self.lr_w_m),
            ("lr_color", self.lr_color),
            ("lr_opacity", self.lr_opacity),
        ] {
            if !(lr.is_finite() && lr > 0.0) {
                return bad(format!("{name} must be positive, got {lr}"));
            }
        }
        if !(self.lambda_cos >= 0.0 && self.lambda_l2 >= 0.0) || self.lambda_cos + self.lambda_l2 == 0.0 {
            return bad("loss weights must be non-negative and not both zero".into());
        }
        if let Temperature::Fixed(c) | Temperature::Learned(c) = self.temperature {
            if !(c.is_finite() && c > 0.0) {
                return bad(format!("temperature must be positive, got {c}"));
            }
        }
        Ok(())
    }
}
