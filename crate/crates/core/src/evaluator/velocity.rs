//! kNN cosine consistency of a predicted velocity field.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::knn::nearest;
use super::{EvalError, Propagator};
use crate::autodiff::Mat;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VelocityReport {
    /// Mean over cells of the mean cosine to the k nearest neighbours'
    /// velocities, in `[−1, 1]`.
    pub consistency: f64,
    /// Cells with an exactly zero velocity, left out of every cosine.
    pub zero_velocity: usize,
    pub cells: usize,
}

/// `(z_det(Δ_probe) − z) / Δ_probe` per cell.
pub fn cell_velocities(model: &dyn Propagator, cells: &Mat, delta_probe: f64) -> Result<Mat, EvalError> {
    if !(delta_probe > 0.0) || !delta_probe.is_finite() {
        return Err(EvalError::Config(format!("probe time must be positive, got {delta_probe}")));
    }
    Ok((model.mean(cells, delta_probe)? - cells) / delta_probe)
}

/// Velocity consistency of `model` on `cells` with `k` neighbours.
pub fn velocity_consistency(
    model: &dyn Propagator,
    cells: &Mat,
    delta_probe: f64,
    k: usize,
) -> Result<VelocityReport, EvalError> {
    check_count(cells.nrows(), k)?;
    let v = cell_velocities(model, cells, delta_probe)?;
    velocity_consistency_of(cells, &v, k)
}

fn check_count(n: usize, k: usize) -> Result<(), EvalError> {
    if k == 0 {
        return Err(EvalError::Config("need at least one neighbour".into()));
    }
    if n < k + 1 {
        return Err(EvalError::TooFew {
            what: "cells",
            need: k + 1,
            got: n,
        });
    }
    Ok(())
}

/// The same score for given positions and velocities. Neighbours are found
/// in state space among the cells that move.
pub fn velocity_consistency_of(cells: &Mat, velocities: &Mat, k: usize) -> Result<VelocityReport, EvalError> {
    if cells.dim() != velocities.dim() {
        return Err(EvalError::DimMismatch {
            expected: cells.ncols(),
            got: velocities.ncols(),
        });
    }
    check_count(cells.nrows(), k)?;
    let norms: Vec<f64> = velocities.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
    let moving: Vec<usize> = (0..cells.nrows()).filter(|&i| norms[i] > 0.0).collect();
    let zero_velocity = cells.nrows() - moving.len();
    check_count(moving.len(), k)?;
    let pos = cells.select(ndarray::Axis(0), &moving);
    let per_cell: Vec<f64> = (0..moving.len())
        .into_par_iter()
        .map(|a| {
            let i = moving[a];
            let nb = nearest(&pos, pos.row(a), k, Some(a));
            let sum: f64 = nb
                .iter()
                .map(|&b| {
                    let j = moving[b];
                    velocities.row(i).dot(&velocities.row(j)) / (norms[i] * norms[j])
                })
                .sum();
            sum / nb.len() as f64
        })
        .collect();
    let consistency = per_cell.iter().sum::<f64>() / per_cell.len() as f64;
    Ok(VelocityReport {
        consistency: consistency.clamp(-1.0, 1.0),
        zero_velocity,
        cells: cells.nrows(),
    })
}
