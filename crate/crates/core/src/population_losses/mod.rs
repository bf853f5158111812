//! Population-matching objectives between an unpaired generated set and a
//! target snapshot: kernel MMD, entropic transport cost, a drifting-field
//! term and a downhill hinge on the potential.

mod composite;
mod drift;
mod kernels;
mod sinkhorn;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use composite::{
    composite_loss, composite_loss_with_drift_anchor, downhill_loss, CompositeError, CompositeLoss,
    LossSettings,
};
pub use drift::{drift_loss, drift_loss_graph, drifting_field, drifting_field_from};
pub use kernels::{mmd, mmd_with_grad, sq_dist, BankPlan, KernelBank, KernelSums, DEFAULT_BANDWIDTHS};
pub use sinkhorn::{
    sinkhorn, sinkhorn_cost_with_grad, sinkhorn_w2, squared_distances, SinkhornConfig, Transport,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("{0} population is empty")]
    EmptySet(&'static str),
    #[error("populations have different dimensions ({left} vs {right})")]
    DimMismatch { left: usize, right: usize },
    #[error("transport cost has non-finite entries")]
    NonFiniteCost,
    #[error("invalid loss configuration: {0}")]
    InvalidConfig(String),
}

/// Weights of the four loss terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub mmd: f64,
    pub w2: f64,
    pub drift: f64,
    pub down: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            mmd: 1.0,
            w2: 1.0,
            drift: 1.0,
            down: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), LossError> {
        let all = [self.mmd, self.w2, self.drift, self.down];
        if all.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(LossError::InvalidConfig(format!(
                "loss weights must be non-negative, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Unweighted components of one batch loss plus the weighted total.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub mmd: f64,
    pub w2: f64,
    pub drift: f64,
    pub down: f64,
    pub total: f64,
}

impl LossReport {
    pub fn weighted(&self, w: &LossWeights) -> f64 {
        w.mmd * self.mmd + w.w2 * self.w2 + w.drift * self.drift + w.down * self.down
    }

    /// Name of the first non-finite component, if any.
    pub fn first_non_finite(&self) -> Option<&'static str> {
        [
            ("mmd", self.mmd),
            ("w2", self.w2),
            ("drift", self.drift),
            ("down", self.down),
            ("total", self.total),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(n, _)| n)
    }
}
