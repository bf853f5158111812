use ndarray::Array1;

use super::kernels::{check_pair, KernelBank, KernelSums};
use super::LossError;
use crate::autodiff::{Graph, Mat, NodeId};

/// Drift of each generated point: kernel-weighted mean of the targets minus
/// the kernel-weighted mean of the generated set (self-pairs included).
///
/// Both weighted means are taken relative to the same point, so that point
/// cancels and `V = 0` exactly when the two sets coincide.
pub fn drifting_field(gen: &Mat, target: &Mat, bank: &KernelBank) -> Result<Mat, LossError> {
    check_pair(gen, target)?;
    let km = KernelSums::compute(gen, target, bank);
    Ok(drifting_field_from(&km))
}

/// Drifting field from precomputed kernel sums.
pub fn drifting_field_from(km: &KernelSums) -> Mat {
    weighted_mean(&km.k_tgt_rows, &km.ky_tgt) - weighted_mean(&km.k_gen_rows, &km.kx_gen)
}

fn weighted_mean(norm: &Array1<f64>, weighted: &Mat) -> Mat {
    let mut out = weighted.clone();
    for (mut row, s) in out.rows_mut().into_iter().zip(norm.iter()) {
        row /= s.max(f64::MIN_POSITIVE);
    }
    out
}

/// `(1/K) Σ_k ‖ẑ_k − stop(ẑ_k + V_k)‖²`, recorded on the graph so the
/// gradient reaches whatever produced `gen`.
pub fn drift_loss_graph(g: &mut Graph, gen: NodeId, drift: &Mat) -> NodeId {
    let target = g.value(gen) + drift;
    let rows = target.nrows() as f64;
    let anchor = g.constant(target);
    let anchor = g.stop_gradient(anchor);
    let diff = g.sub(gen, anchor);
    let sq = g.mul(diff, diff);
    let s = g.sum(sq);
    g.scale(s, 1.0 / rows)
}

/// Value of the drift loss for given populations.
pub fn drift_loss(gen: &Mat, target: &Mat, bank: &KernelBank) -> Result<f64, LossError> {
    let v = drifting_field(gen, target, bank)?;
    Ok(v.iter().map(|x| x * x).sum::<f64>() / gen.nrows() as f64)
}
