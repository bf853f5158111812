use ndarray::{Array1, Array2, ArrayView1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::LossError;
use crate::autodiff::Mat;

pub const DEFAULT_BANDWIDTHS: [f64; 6] = [0.001, 0.01, 0.1, 1.0, 10.0, 100.0];

/// Kernel values below `exp(−690) ≈ 1e−300` are dropped: they are far
/// below rounding of any sum they enter, and computing them would go
/// through slow subnormal arithmetic.
const EXP_UNDERFLOW: f64 = 690.0;

/// Rows per parallel work item; fixed so reductions do not depend on the
/// thread count.
const ROW_BLOCK: usize = 64;

/// Sum of RBF kernels `exp(−‖x−y‖²/b)` over a set of bandwidths.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelBank {
    pub bandwidths: Vec<f64>,
}

impl Default for KernelBank {
    fn default() -> Self {
        Self {
            bandwidths: DEFAULT_BANDWIDTHS.to_vec(),
        }
    }
}

impl KernelBank {
    pub fn new(bandwidths: Vec<f64>) -> Result<Self, LossError> {
        if bandwidths.is_empty() || bandwidths.iter().any(|b| !(*b > 0.0) || !b.is_finite()) {
            return Err(LossError::InvalidConfig(format!(
                "bandwidths must be positive and finite, got {bandwidths:?}"
            )));
        }
        Ok(Self { bandwidths })
    }

    /// `Σ_b exp(−sq/b)` for a squared distance.
    #[inline]
    pub fn eval(&self, sq: f64) -> f64 {
        self.plan().eval_with_slope(sq).0
    }

    /// `(Σ_b k_b, Σ_b k_b / b)`; the second is `−∂k/∂sq`.
    #[inline]
    pub fn eval_with_slope(&self, sq: f64) -> (f64, f64) {
        self.plan().eval_with_slope(sq)
    }

    /// Evaluation order for repeated use: bandwidths from widest to
    /// narrowest, where a bandwidth that divides the previous one by an
    /// integer `r ≤ 16` reuses that kernel value raised to the power `r`
    /// instead of a fresh exponential.
    pub fn plan(&self) -> BankPlan {
        let mut b = self.bandwidths.clone();
        b.sort_by(|x, y| y.total_cmp(x));
        let mut steps = Vec::with_capacity(b.len());
        for (i, &bw) in b.iter().enumerate() {
            let pow = (i > 0).then(|| b[i - 1] / bw).and_then(|r| {
                let k = r.round();
                ((2.0..=16.0).contains(&k) && (r - k).abs() <= 1e-12 * k).then_some(k as i32)
            });
            // smallest base whose power stays above the cutoff
            let min_base = pow.map_or(0.0, |r| (-EXP_UNDERFLOW / r as f64).exp());
            steps.push(PlanStep {
                inv: 1.0 / bw,
                pow,
                min_base,
            });
        }
        BankPlan { steps }
    }
}

#[derive(Clone, Copy, Debug)]
struct PlanStep {
    inv: f64,
    pow: Option<i32>,
    min_base: f64,
}

/// `x^r` by repeated squaring, inlined into the pair loops.
#[inline(always)]
fn int_pow(x: f64, mut r: i32) -> f64 {
    // no squaring past the last needed power, which could go subnormal
    let (mut base, mut acc) = (x, 1.0);
    loop {
        if r & 1 == 1 {
            acc *= base;
        }
        r >>= 1;
        if r == 0 {
            return acc;
        }
        base *= base;
    }
}

/// Precomputed evaluation order of a [`KernelBank`].
#[derive(Clone, Debug)]
pub struct BankPlan {
    steps: Vec<PlanStep>,
}

impl BankPlan {
    #[inline]
    pub fn eval(&self, sq: f64) -> f64 {
        self.eval_with_slope(sq).0
    }

    #[inline]
    pub fn eval_with_slope(&self, sq: f64) -> (f64, f64) {
        let (mut k, mut s) = (0.0, 0.0);
        let mut prev = 0.0f64;
        for st in &self.steps {
            let e = match st.pow {
                Some(r) if prev > st.min_base => int_pow(prev, r),
                Some(_) => 0.0,
                None => {
                    let x = sq * st.inv;
                    if x < EXP_UNDERFLOW {
                        (-x).exp()
                    } else {
                        0.0
                    }
                }
            };
            k += e;
            s += e * st.inv;
            prev = e;
        }
        (k, s)
    }
}

#[inline]
pub fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub(crate) fn check_pair(x: &Mat, y: &Mat) -> Result<(), LossError> {
    if x.nrows() == 0 {
        return Err(LossError::EmptySet("generated"));
    }
    if y.nrows() == 0 {
        return Err(LossError::EmptySet("target"));
    }
    if x.ncols() != y.ncols() {
        return Err(LossError::DimMismatch {
            left: x.ncols(),
            right: y.ncols(),
        });
    }
    Ok(())
}

/// `Σ_{i,j} k(x_i, x_j)`, accumulated row by row as the diagonal plus twice
/// the strictly lower triangle.
fn self_sum(x: &Mat, bank: &KernelBank) -> f64 {
    let bank = &bank.plan();
    let n = x.nrows();
    let diag = bank.eval(0.0);
    let rows: Vec<f64> = (0..n)
        .into_par_iter()
        .with_min_len(ROW_BLOCK)
        .map(|i| {
            let xi = x.row(i);
            let mut acc = diag;
            for j in 0..i {
                acc += 2.0 * bank.eval(sq_dist(xi, x.row(j)));
            }
            acc
        })
        .collect();
    rows.iter().sum()
}

/// `Σ_{i,j} k(x_i, y_j)`. For equal sizes the pairs are visited in the same
/// order as [`self_sum`], so identical inputs give bit-identical sums.
fn cross_sum(x: &Mat, y: &Mat, bank: &KernelBank) -> f64 {
    let bank = &bank.plan();
    let (n, m) = (x.nrows(), y.nrows());
    let rows: Vec<f64> = if n == m {
        (0..n)
            .into_par_iter()
            .with_min_len(ROW_BLOCK)
            .map(|i| {
                let (xi, yi) = (x.row(i), y.row(i));
                let mut acc = bank.eval(sq_dist(xi, yi));
                for j in 0..i {
                    acc += bank.eval(sq_dist(xi, y.row(j))) + bank.eval(sq_dist(x.row(j), yi));
                }
                acc
            })
            .collect()
    } else {
        (0..n)
            .into_par_iter()
            .with_min_len(ROW_BLOCK)
            .map(|i| {
                let xi = x.row(i);
                (0..m).map(|j| bank.eval(sq_dist(xi, y.row(j)))).sum()
            })
            .collect()
    };
    rows.iter().sum()
}

/// Squared MMD (V-statistic) summed over the bank:
/// `mean k(X,X) + mean k(Y,Y) − 2·mean k(X,Y)`.
///
/// Streams over pairs without storing kernel matrices.
pub fn mmd(x: &Mat, y: &Mat, bank: &KernelBank) -> Result<f64, LossError> {
    check_pair(x, y)?;
    let (n, m) = (x.nrows() as f64, y.nrows() as f64);
    let kxx = self_sum(x, bank) / (n * n);
    let kyy = self_sum(y, bank) / (m * m);
    let kxy = cross_sum(x, y, bank) / (n * m);
    Ok(kxx + kyy - 2.0 * kxy)
}

/// Kernel-weighted sums shared by the MMD gradient and the drifting field,
/// accumulated without storing any pairwise matrix.
///
/// For generated point `i`: `k_*_rows[i] = Σ_j k_ij`, `k*_[i] = Σ_j k_ij p_j`
/// and the same with the slope `s_ij = Σ_b k_b/b`, over generated (`gen`)
/// or target (`tgt`) points `p_j`. Every row is accumulated in ascending
/// `j`, so identical generated and target sets give bit-identical sums.
pub struct KernelSums {
    pub k_gen_rows: Array1<f64>,
    pub kx_gen: Mat,
    pub s_gen_rows: Array1<f64>,
    pub sx_gen: Mat,
    pub k_tgt_rows: Array1<f64>,
    pub ky_tgt: Mat,
    pub s_tgt_rows: Array1<f64>,
    pub sy_tgt: Mat,
}

impl KernelSums {
    pub fn compute(x: &Mat, y: &Mat, bank: &KernelBank) -> Self {
        let bank = &bank.plan();
        let (n, m, d) = (x.nrows(), y.nrows(), x.ncols());
        let xs = x.as_standard_layout();
        let ys = y.as_standard_layout();
        let (xs, ys) = (xs.as_slice().expect("standard layout"), ys.as_slice().expect("standard layout"));
        let dist = |a: &[f64], b: &[f64]| -> f64 { a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum() };

        // generated pairs: each unordered pair once, scattered to both rows;
        // row i then receives j < i, the diagonal, then j > i, in order
        let mut k_gen = vec![0.0; n];
        let mut s_gen = vec![0.0; n];
        let mut kx = vec![0.0; n * d];
        let mut sx = vec![0.0; n * d];
        for i in 0..n {
            let xi = &xs[i * d..(i + 1) * d];
            for j in 0..i {
                let xj = &xs[j * d..(j + 1) * d];
                let (k, s) = bank.eval_with_slope(dist(xi, xj));
                k_gen[i] += k;
                s_gen[i] += s;
                k_gen[j] += k;
                s_gen[j] += s;
                for c in 0..d {
                    kx[i * d + c] += k * xj[c];
                    sx[i * d + c] += s * xj[c];
                    kx[j * d + c] += k * xi[c];
                    sx[j * d + c] += s * xi[c];
                }
            }
            let (k, s) = bank.eval_with_slope(dist(xi, xi));
            k_gen[i] += k;
            s_gen[i] += s;
            for c in 0..d {
                kx[i * d + c] += k * xi[c];
                sx[i * d + c] += s * xi[c];
            }
        }

        let rows: Vec<(f64, f64, Vec<f64>, Vec<f64>)> = (0..n)
            .into_par_iter()
            .with_min_len(ROW_BLOCK)
            .map(|i| {
                let xi = &xs[i * d..(i + 1) * d];
                let (mut kr, mut sr) = (0.0, 0.0);
                let (mut ky, mut sy) = (vec![0.0; d], vec![0.0; d]);
                for j in 0..m {
                    let yj = &ys[j * d..(j + 1) * d];
                    let (k, s) = bank.eval_with_slope(dist(xi, yj));
                    kr += k;
                    sr += s;
                    for c in 0..d {
                        ky[c] += k * yj[c];
                        sy[c] += s * yj[c];
                    }
                }
                (kr, sr, ky, sy)
            })
            .collect();
        let mat = |v: Vec<f64>| Array2::from_shape_vec((n, d), v).expect("sized");
        let flat = |f: fn(&(f64, f64, Vec<f64>, Vec<f64>)) -> &Vec<f64>| {
            mat(rows.iter().flat_map(|r| f(r).iter().copied()).collect())
        };
        Self {
            k_gen_rows: Array1::from(k_gen),
            kx_gen: mat(kx),
            s_gen_rows: Array1::from(s_gen),
            sx_gen: mat(sx),
            k_tgt_rows: rows.iter().map(|r| r.0).collect(),
            ky_tgt: flat(|r| &r.2),
            s_tgt_rows: rows.iter().map(|r| r.1).collect(),
            sy_tgt: flat(|r| &r.3),
        }
    }
}

/// Squared MMD and its gradient with respect to the generated points.
///
/// `∂/∂x_i = −(4/n²) Σ_j s_ij (x_i − x_j) + (4/(nm)) Σ_j s'_ij (x_i − y_j)`
/// with `s = Σ_b k_b / b`.
pub fn mmd_with_grad(
    x: &Mat,
    y: &Mat,
    bank: &KernelBank,
    ks: &KernelSums,
) -> Result<(f64, Mat), LossError> {
    check_pair(x, y)?;
    let (n, m) = (x.nrows() as f64, y.nrows() as f64);
    let kxx = ks.k_gen_rows.sum() / (n * n);
    let kyy = self_sum(y, bank) / (m * m);
    let kxy = ks.k_tgt_rows.sum() / (n * m);
    let value = kxx + kyy - 2.0 * kxy;

    // Σ_j s_ij (x_i − x_j) = rowsum(s)_i x_i − (s P)_i
    let pull = |rows: &Array1<f64>, sp: &Mat| -> Mat {
        let rs = rows.view().insert_axis(ndarray::Axis(1));
        &rs * x - sp
    };
    let grad = pull(&ks.s_gen_rows, &ks.sx_gen) * (-4.0 / (n * n))
        + pull(&ks.s_tgt_rows, &ks.sy_tgt) * (4.0 / (n * m));
    Ok((value, grad))
}
