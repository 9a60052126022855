//! Part-aware material fitting: appearance losses between a reference photo
//! and the differentiable render of a posed CAD model, and the gradient
//! descent loop that adjusts the continuous parameters of the body and wheel
//! material graphs. Window (glass) graphs are assigned as-is and never
//! optimized; roughness parameters stay fixed.

mod gradcheck;
mod losses;
mod optimize;

pub use losses::{
    gram_matrix, loss_rgb, loss_rgb_with_grad, loss_stat, loss_stat_with_grad, loss_vgg,
    loss_vgg_features, loss_vgg_with_grad, masked_mean_var,
};
pub use gradcheck::{gradient_check, GradCheckReport};
pub use optimize::optimize_materials;

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::retrieval::ComponentLabel;

/// Weights of the three loss terms.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LossWeights {
    pub stat: f64,
    pub vgg: f64,
    pub rgb: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            stat: 0.1,
            vgg: 1.0,
            rgb: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> crate::error::Result<()> {
        for (name, v) in [("stat", self.stat), ("vgg", self.vgg), ("rgb", self.rgb)] {
            if !v.is_finite() || v < 0.0 {
                return Err(crate::error::Error::Invalid(format!(
                    "loss weight {name} must be finite and non-negative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Settings of the fitting loop.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimizeConfig {
    /// Gradient steps.
    pub epochs: usize,
    /// Step size of the adaptive-moment optimizer.
    pub step: f64,
    /// First/second moment decay rates.
    pub beta1: f64,
    pub beta2: f64,
    /// Side length of the evaluated material textures (power of two).
    pub texture_size: usize,
    pub optimize_body: bool,
    pub optimize_wheels: bool,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        OptimizeConfig {
            epochs: 300,
            step: 0.02,
            beta1: 0.9,
            beta2: 0.999,
            texture_size: 64,
            optimize_body: true,
            optimize_wheels: true,
        }
    }
}

impl OptimizeConfig {
    pub fn validate(&self) -> crate::error::Result<()> {
        if self.epochs == 0 {
            return Err(crate::error::Error::Invalid("epochs must be >= 1".into()));
        }
        let step_ok = self.step.is_finite() && self.step > 0.0;
        if !step_ok || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(crate::error::Error::Invalid(format!(
                "bad optimizer settings: step {} beta1 {} beta2 {}",
                self.step, self.beta1, self.beta2
            )));
        }
        Ok(())
    }
}

/// Loss values of one component in one epoch (or their sum over components).
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct LossTerms {
    pub mean: f64,
    pub var: f64,
    pub vgg: f64,
    pub rgb: f64,
}

impl LossTerms {
    pub fn stat(&self) -> f64 {
        self.mean + self.var
    }

    pub fn weighted(&self, w: &LossWeights) -> f64 {
        w.stat * self.stat() + w.vgg * self.vgg + w.rgb * self.rgb
    }

    pub fn is_finite(&self) -> bool {
        [self.mean, self.var, self.vgg, self.rgb].iter().all(|v| v.is_finite())
    }
}

/// Weighted total over all optimized components.
pub fn total_loss(components: &[LossTerms], weights: &LossWeights) -> f64 {
    components.iter().map(|t| t.weighted(weights)).sum()
}

/// Loss values recorded for one epoch, summed over optimized components.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EpochLosses {
    pub mean: f64,
    pub var: f64,
    pub vgg: f64,
    pub rgb: f64,
    pub total: f64,
}

/// Full record of one optimization run.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct LossReport {
    pub epochs: Vec<EpochLosses>,
    /// Final continuous parameters per component graph, in theta-layout order.
    pub final_theta: BTreeMap<ComponentLabel, Vec<f64>>,
    pub warnings: Vec<String>,
}
