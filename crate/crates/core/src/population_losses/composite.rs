use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::drift::{drift_loss_graph, drifting_field_from};
use super::kernels::{check_pair, mmd_with_grad, KernelBank, KernelSums};
use super::sinkhorn::{sinkhorn_cost_with_grad, SinkhornConfig};
use super::{LossError, LossReport, LossWeights};
use crate::autodiff::{Graph, Mat, NodeId};
use crate::operator::{Bound, Model, ModelError, StepNodes};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CompositeError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Loss(#[from] LossError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossSettings {
    pub weights: LossWeights,
    pub bank: KernelBank,
    pub sinkhorn: SinkhornConfig,
    pub drift_on: bool,
    pub down_on: bool,
}

impl Default for LossSettings {
    fn default() -> Self {
        Self {
            weights: LossWeights::default(),
            bank: KernelBank::default(),
            sinkhorn: SinkhornConfig::default(),
            drift_on: true,
            down_on: true,
        }
    }
}

impl LossSettings {
    /// Weights after applying the on/off switches.
    pub fn effective_weights(&self) -> LossWeights {
        LossWeights {
            drift: if self.drift_on { self.weights.drift } else { 0.0 },
            down: if self.down_on { self.weights.down } else { 0.0 },
            ..self.weights
        }
    }
}

pub struct CompositeLoss {
    pub total: NodeId,
    pub report: LossReport,
    pub step: StepNodes,
}

/// Records the weighted four-term loss for one batch on `g`.
///
/// `noise` holds `K` standard-normal draws per source (`K·B×d`); the
/// generated population is all `K·B` samples.
#[allow(clippy::too_many_arguments)]
pub fn composite_loss(
    g: &mut Graph,
    model: &Model,
    bound: &Bound,
    source: &Mat,
    target: &Mat,
    delta: f64,
    action: Option<&Mat>,
    noise: &Mat,
    settings: &LossSettings,
) -> Result<CompositeLoss, CompositeError> {
    build(g, model, bound, source, target, delta, action, noise, settings, None)
}

/// As [`composite_loss`], but the drifting-field anchor `stop(ẑ + V)` is
/// replaced by `anchor`. With the anchor fixed the drift term is an ordinary
/// function of the parameters, so the whole loss can be checked against
/// finite differences.
#[allow(clippy::too_many_arguments)]
pub fn composite_loss_with_drift_anchor(
    g: &mut Graph,
    model: &Model,
    bound: &Bound,
    source: &Mat,
    target: &Mat,
    delta: f64,
    action: Option<&Mat>,
    noise: &Mat,
    settings: &LossSettings,
    anchor: &Mat,
) -> Result<CompositeLoss, CompositeError> {
    build(g, model, bound, source, target, delta, action, noise, settings, Some(anchor))
}

#[allow(clippy::too_many_arguments)]
fn build(
    g: &mut Graph,
    model: &Model,
    bound: &Bound,
    source: &Mat,
    target: &Mat,
    delta: f64,
    action: Option<&Mat>,
    noise: &Mat,
    settings: &LossSettings,
    anchor: Option<&Mat>,
) -> Result<CompositeLoss, CompositeError> {
    settings.weights.validate()?;
    settings.sinkhorn.validate()?;
    let z = g.constant(source.clone());
    let step = model.step_graph(g, bound, z, delta, action, noise)?;
    let gen = g.value(step.z_hat).clone();
    check_pair(&gen, target)?;

    let km = KernelSums::compute(&gen, target, &settings.bank);
    let (mmd_val, mmd_grad) = mmd_with_grad(&gen, target, &settings.bank, &km)?;
    let mmd = g.custom_scalar("mmd", &[step.z_hat], mmd_val, vec![Some(mmd_grad)]);

    let (w2_val, w2_grad) = sinkhorn_cost_with_grad(&gen, target, &settings.sinkhorn)?;
    let w2 = g.custom_scalar("sinkhorn", &[step.z_hat], w2_val, vec![Some(w2_grad)]);

    let drift = match anchor {
        None => {
            let v = drifting_field_from(&km);
            drift_loss_graph(g, step.z_hat, &v)
        }
        Some(c) => {
            let v = c - &gen;
            drift_loss_graph(g, step.z_hat, &v)
        }
    };

    let down = match step.potential {
        Some(u0) => {
            let u_det = model
                .potential_graph(g, bound, step.z_det, delta, action)
                .expect("variant with a potential head");
            let diff = g.sub(u_det, u0);
            let hinge = g.relu(diff);
            g.mean(hinge)
        }
        None => g.constant_scalar(0.0),
    };

    let w = settings.effective_weights();
    let terms = [(mmd, w.mmd), (w2, w.w2), (drift, w.drift), (down, w.down)];
    let mut total = g.constant_scalar(0.0);
    for (node, weight) in terms {
        let s = g.scale(node, weight);
        total = g.add(total, s);
    }
    let report = LossReport {
        mmd: g.scalar(mmd),
        w2: g.scalar(w2),
        drift: g.scalar(drift),
        down: g.scalar(down),
        total: g.scalar(total),
    };
    Ok(CompositeLoss {
        total,
        report,
        step,
    })
}

/// Mean over sources of `max(0, U(z_det) − U(z))`; zero for a variant
/// without a potential head.
pub fn downhill_loss(
    model: &Model,
    sources: &Mat,
    delta: f64,
    action: Option<&Mat>,
) -> Result<f64, ModelError> {
    let mut g = Graph::new();
    let b = model.params.bind(&mut g);
    let z = g.constant(sources.clone());
    let noise = Array2::zeros(sources.dim());
    let step = model.step_graph(&mut g, &b, z, delta, action, &noise)?;
    let Some(u0) = step.potential else {
        return Ok(0.0);
    };
    let u_det = model
        .potential_graph(&mut g, &b, step.z_det, delta, action)
        .expect("variant with a potential head");
    let diff = g.sub(u_det, u0);
    let hinge = g.relu(diff);
    let m = g.mean(hinge);
    Ok(g.scalar(m))
}
