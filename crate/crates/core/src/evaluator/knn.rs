//! Brute-force Euclidean nearest neighbours.

use ndarray::ArrayView1;

use crate::autodiff::Mat;
use crate::population_losses::sq_dist;

/// Indices of the `k` rows of `points` closest to `query`, nearest first,
/// ties broken by index. `skip` leaves one row out (the query itself).
pub(crate) fn nearest(points: &Mat, query: ArrayView1<f64>, k: usize, skip: Option<usize>) -> Vec<usize> {
    let mut d: Vec<(f64, usize)> = points
        .rows()
        .into_iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != skip)
        .map(|(i, r)| (sq_dist(r, query), i))
        .collect();
    let k = k.min(d.len());
    if k == 0 {
        return Vec::new();
    }
    let by = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    d.select_nth_unstable_by(k - 1, by);
    d.truncate(k);
    d.sort_unstable_by(by);
    d.into_iter().map(|(_, i)| i).collect()
}
