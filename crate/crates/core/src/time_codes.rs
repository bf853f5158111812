//! Time gate and the two time embeddings.
//!
//! The potential branch is conditioned on a learnable Time2Vec code (one
//! unbounded linear channel plus `m` sinusoidal channels with frequencies
//! bounded by π). The antisymmetric branch sees a fixed bank of low-frequency
//! sinusoids that stays in `[-1, 1]` for any elapsed time.

use std::f64::consts::{LN_2, PI};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{softplus_scalar, Graph, NodeId};

pub const FOURIER_PERIODS: [f64; 6] = [4.0, 8.0, 16.0, 32.0, 64.0, 128.0];
pub const FOURIER_DIM: usize = 2 * FOURIER_PERIODS.len();
pub const DEFAULT_PERIODIC_CHANNELS: usize = 8;
pub const OMEGA_MAX: f64 = PI;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TimeError {
    #[error("elapsed time must be non-negative and finite, got {0}")]
    NegativeDelta(f64),
    #[error("gate constant must be positive and finite, got {0}")]
    NonPositiveTau(f64),
}

/// `α(Δ) = 1 − exp(−Δ/τ)`.
pub fn alpha_gate(delta: f64, tau: f64) -> Result<f64, TimeError> {
    if !(delta >= 0.0) || !delta.is_finite() {
        return Err(TimeError::NegativeDelta(delta));
    }
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(TimeError::NonPositiveTau(tau));
    }
    Ok(-(-delta / tau).exp_m1())
}

/// `∂α/∂τ = −(Δ/τ²)·exp(−Δ/τ)`.
pub fn alpha_gate_dtau(delta: f64, tau: f64) -> f64 {
    -(delta / (tau * tau)) * (-delta / tau).exp()
}

/// Inverse of softplus, for positive targets.
pub fn inverse_softplus(y: f64) -> f64 {
    assert!(y > 0.0, "inverse_softplus of non-positive {y}");
    // y + ln(1 − e^{−y}) is stable for large y
    y + (-(-y).exp()).ln_1p()
}

/// Gate constant stored unconstrained; `τ = softplus(raw)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateParams {
    pub raw: f64,
}

impl GateParams {
    pub fn from_tau(tau: f64) -> Self {
        Self {
            raw: inverse_softplus(tau),
        }
    }

    pub fn tau(&self) -> f64 {
        softplus_scalar(self.raw)
    }
}

/// Per-trajectory normalizer for elapsed time, `τ_init · ln 2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaScale(pub f64);

impl DeltaScale {
    pub fn from_tau_init(tau_init: f64) -> Self {
        Self(tau_init * LN_2)
    }

    pub fn normalize(&self, delta: f64) -> f64 {
        delta / self.0
    }
}

/// Time2Vec parameters. Channel 0 is linear; channels `1..=m` are periodic
/// with frequency `π·tanh(raw)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Time2VecParams {
    pub omega_raw: Vec<f64>,
    pub phase: Vec<f64>,
}

impl Time2VecParams {
    pub fn zeros(periodic_channels: usize) -> Self {
        Self {
            omega_raw: vec![0.0; periodic_channels + 1],
            phase: vec![0.0; periodic_channels + 1],
        }
    }

    pub fn channels(&self) -> usize {
        self.omega_raw.len()
    }

    /// Effective frequencies: channel 0 unbounded, the rest in `(−π, π)`.
    pub fn omega(&self) -> Vec<f64> {
        self.omega_raw
            .iter()
            .enumerate()
            .map(|(i, &w)| if i == 0 { w } else { OMEGA_MAX * w.tanh() })
            .collect()
    }

    /// Raw value that produces a periodic frequency `omega` (|omega| < π).
    pub fn raw_for_omega(omega: f64) -> f64 {
        assert!(omega.abs() < OMEGA_MAX, "periodic frequency {omega} outside (-π, π)");
        (omega / OMEGA_MAX).atanh()
    }
}

/// `[ω₀Δ + b₀, sin(ω₁Δ + b₁), …, sin(ω_mΔ + b_m)]`.
pub fn time2vec(delta_norm: f64, p: &Time2VecParams) -> Vec<f64> {
    p.omega()
        .iter()
        .zip(&p.phase)
        .enumerate()
        .map(|(i, (&w, &b))| {
            let pre = w * delta_norm + b;
            if i == 0 {
                pre
            } else {
                pre.sin()
            }
        })
        .collect()
}

/// `(sin(2πΔ/p), cos(2πΔ/p))` for each fixed period, interleaved.
pub fn fourier_bank(delta_norm: f64) -> [f64; FOURIER_DIM] {
    let mut out = [0.0; FOURIER_DIM];
    for (k, p) in FOURIER_PERIODS.iter().enumerate() {
        // reduce the phase first so huge Δ stays accurate
        let phase = 2.0 * PI * (delta_norm / p).rem_euclid(1.0);
        out[2 * k] = phase.sin();
        out[2 * k + 1] = phase.cos();
    }
    out
}

/// Graph leaves holding Time2Vec parameters, each `1×(m+1)`.
#[derive(Clone, Copy, Debug)]
pub struct Time2VecNodes {
    pub omega_raw: NodeId,
    pub phase: NodeId,
}

/// Records the Time2Vec code as a `1×(m+1)` node, differentiable in its
/// parameters.
pub fn time2vec_graph(g: &mut Graph, nodes: Time2VecNodes, delta_norm: f64) -> NodeId {
    let channels = g.value(nodes.omega_raw).ncols();
    let mut linear = Array2::zeros((1, channels));
    linear[[0, 0]] = 1.0;
    let periodic = linear.mapv(|x| 1.0 - x);
    let lin_mask = g.constant(linear);
    let per_mask = g.constant(periodic);

    let t = g.tanh(nodes.omega_raw);
    let bounded = g.scale(t, OMEGA_MAX);
    let bounded = g.mul(bounded, per_mask);
    let unbounded = g.mul(nodes.omega_raw, lin_mask);
    let omega = g.add(bounded, unbounded);

    let scaled = g.scale(omega, delta_norm);
    let pre = g.add(scaled, nodes.phase);
    let s = g.sin(pre);
    let s = g.mul(s, per_mask);
    let l = g.mul(pre, lin_mask);
    g.add(s, l)
}

/// Records `α(Δ)` as a `1×1` node differentiable in the raw gate value.
pub fn alpha_graph(g: &mut Graph, tau_raw: NodeId, delta: f64) -> NodeId {
    let tau = g.softplus(tau_raw);
    let inv = g.recip(tau);
    let expo = g.scale(inv, -delta);
    let e = g.exp(expo);
    let ne = g.neg(e);
    g.add_scalar(ne, 1.0)
}
