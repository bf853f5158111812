//! AdamW with decoupled weight decay, global-norm clipping and the
//! warmup-cosine schedule.

use std::f64::consts::PI;

use crate::autodiff::Mat;

use super::{TrainConfig, TrainError};

/// Learning rate before update `step` of `total`: linear ramp from 0 to
/// `base_lr` over the warmup steps, then cosine decay to 0 at `total`.
pub fn lr_at(step: usize, total: usize, cfg: &TrainConfig) -> f64 {
    if total == 0 || step > total {
        return 0.0;
    }
    let warmup = warmup_steps(total, cfg.warmup_frac);
    if step < warmup {
        return cfg.base_lr * step as f64 / warmup as f64;
    }
    let span = total - warmup;
    if span == 0 {
        return cfg.base_lr;
    }
    let progress = (step - warmup) as f64 / span as f64;
    cfg.base_lr * 0.5 * (1.0 + (PI * progress).cos())
}

pub fn warmup_steps(total: usize, frac: f64) -> usize {
    ((frac * total as f64).round() as usize).clamp(1, total.max(1))
}

/// Scales `grads` in place so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Mat], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .map(|g| g.iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.mapv_inplace(|v| v * s);
        }
    }
    norm
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Mat>,
    pub v: Vec<Mat>,
}

impl AdamState {
    pub fn new(params: &[Mat]) -> Self {
        Self {
            step: 0,
            m: params.iter().map(|p| Mat::zeros(p.dim())).collect(),
            v: params.iter().map(|p| Mat::zeros(p.dim())).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamHyper {
    pub betas: (f64, f64),
    pub eps: f64,
    pub weight_decay: f64,
}

/// One AdamW update. `decay[i]` says whether parameter `i` is decayed.
/// Gradients are expected to be clipped already.
pub fn adamw_step(
    params: &mut [Mat],
    grads: &[Mat],
    decay: &[bool],
    state: &mut AdamState,
    lr: f64,
    hp: &AdamHyper,
) -> Result<(), TrainError> {
    if params.len() != grads.len() || params.len() != state.m.len() || params.len() != decay.len() {
        return Err(TrainError::Shape(format!(
            "{} parameters, {} gradients, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.step += 1;
    let (b1, b2) = hp.betas;
    let c1 = 1.0 - b1.powi(state.step as i32);
    let c2 = 1.0 - b2.powi(state.step as i32);
    for i in 0..params.len() {
        if params[i].dim() != grads[i].dim() || params[i].dim() != state.m[i].dim() {
            return Err(TrainError::Shape(format!(
                "parameter {i} is {:?}, gradient {:?}",
                params[i].dim(),
                grads[i].dim()
            )));
        }
        let wd = if decay[i] { hp.weight_decay } else { 0.0 };
        let p = &mut params[i];
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        ndarray::Zip::from(p)
            .and(m)
            .and(v)
            .and(&grads[i])
            .for_each(|p, m, v, &g| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p -= lr * wd * *p;
                *p -= lr * m_hat / (v_hat.sqrt() + hp.eps);
            });
    }
    Ok(())
}
