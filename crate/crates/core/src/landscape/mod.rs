//! Synthetic ground truth: the SDE `dz = (−∇U*(z) + S* z) dt + σ* dW` on a
//! known landscape, sampled destructively into unpaired snapshots.
//!
//! The first two coordinates form the active plane. Well landscapes use
//! `U*(z) = (z₁² − 1)² + ½ z₂²`, the rotation is `S* = ω·J` on the plane,
//! and every further coordinate relaxes to zero as an Ornstein–Uhlenbeck
//! process.

mod dataset;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Mat;
use crate::population_losses::{sinkhorn_w2, SinkhornConfig};
use crate::seeding::{derive_seed, item_rng};

pub use dataset::{
    format_dataset, parse_dataset, read_dataset, write_dataset, DatasetError, Fate, Provenance, Snapshot, Split,
    TrajectoryDataset, FORMAT_HEADER,
};

/// Half-width of the `undecided` band around `z₁ = 0`.
pub const UNDECIDED_BAND: f64 = 0.3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("time step must be positive and finite, got {0}")]
    BadStep(f64),
    #[error("elapsed time must be non-negative and finite, got {0}")]
    BadTime(f64),
    #[error("invalid landscape: {0}")]
    Invalid(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LandscapeKind {
    DoubleWell,
    RotationOnly,
    WellPlusRotation,
}

impl LandscapeKind {
    pub fn has_wells(self) -> bool {
        self != LandscapeKind::RotationOnly
    }

    pub fn has_rotation(self) -> bool {
        self != LandscapeKind::DoubleWell
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Landscape {
    pub kind: LandscapeKind,
    pub dim: usize,
    /// Angular velocity of the planar rotation.
    pub omega: f64,
    /// Per-coordinate diffusion scale.
    pub sigma: Vec<f64>,
    /// Relaxation rate of the coordinates outside the active plane.
    pub ou_rate: f64,
    /// Mean of the initial Gaussian.
    pub init_center: Vec<f64>,
    /// Per-coordinate standard deviation of the initial Gaussian.
    pub init_std: f64,
    pub dt: f64,
}

impl Landscape {
    /// Defaults: start on the ridge `z₁ = 0` with the other coordinates
    /// at 0.5, `σ* = 0.3`, `ω* = 1`, `dt = 0.01`.
    pub fn new(kind: LandscapeKind, dim: usize) -> Self {
        let mut center = vec![0.5; dim];
        if dim > 0 {
            center[0] = 0.0;
        }
        Self {
            kind,
            dim,
            omega: if kind.has_rotation() { 1.0 } else { 0.0 },
            sigma: vec![0.3; dim],
            ou_rate: 1.0,
            init_center: center,
            init_std: 0.1,
            dt: 0.01,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.dim < 2 {
            return Err(SimError::Invalid(format!("need at least 2 dimensions, got {}", self.dim)));
        }
        if self.sigma.len() != self.dim || self.init_center.len() != self.dim {
            return Err(SimError::Invalid(format!(
                "sigma and init_center need {} entries, got {} and {}",
                self.dim,
                self.sigma.len(),
                self.init_center.len()
            )));
        }
        if self.sigma.iter().any(|s| !(*s >= 0.0)) || !(self.init_std >= 0.0) {
            return Err(SimError::Invalid("diffusion and spread must be non-negative".into()));
        }
        if !self.omega.is_finite() || !(self.ou_rate >= 0.0) {
            return Err(SimError::Invalid("rotation and relaxation rates must be finite".into()));
        }
        if self.kind == LandscapeKind::DoubleWell && self.omega != 0.0 {
            return Err(SimError::Invalid("double_well has no rotation; set omega = 0".into()));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(SimError::BadStep(self.dt));
        }
        Ok(())
    }

    /// `U*(z)`; zero on the rotation-only landscape.
    pub fn potential(&self, z: &[f64]) -> f64 {
        if !self.kind.has_wells() {
            return 0.0;
        }
        let (a, b) = (z[0], z[1]);
        (a * a - 1.0).powi(2) + 0.5 * b * b
    }

    pub fn potential_grad(&self, z: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        if self.kind.has_wells() {
            out[0] = 4.0 * z[0] * (z[0] * z[0] - 1.0);
            out[1] = z[1];
        }
    }

    /// `S*` as a dense matrix.
    pub fn antisym(&self) -> Mat {
        let mut s = Array2::zeros((self.dim, self.dim));
        s[[0, 1]] = -self.omega;
        s[[1, 0]] = self.omega;
        s
    }

    /// Deterministic drift `−∇U* + S* z`, with OU relaxation off-plane.
    pub fn drift(&self, z: &[f64], out: &mut [f64]) {
        self.potential_grad(z, out);
        for v in out.iter_mut() {
            *v = -*v;
        }
        out[0] -= self.omega * z[1];
        out[1] += self.omega * z[0];
        for i in 2..self.dim {
            out[i] -= self.ou_rate * z[i];
        }
    }

    fn is_gradient_flow(&self) -> bool {
        self.omega == 0.0 && self.sigma.iter().all(|s| *s == 0.0)
    }

    /// Integrates one path from `z` for `duration` with Euler–Maruyama.
    ///
    /// For a noiseless pure gradient flow the step is halved until `U*`
    /// never increases along the path.
    pub fn integrate<R: Rng>(&self, z: &mut [f64], duration: f64, rng: &mut R) {
        if duration <= 0.0 {
            return;
        }
        if self.is_gradient_flow() {
            let start = z.to_vec();
            let mut dt = self.dt;
            for _ in 0..30 {
                z.copy_from_slice(&start);
                if self.euler(z, duration, dt, rng, true) {
                    return;
                }
                dt *= 0.5;
            }
            return;
        }
        self.euler(z, duration, self.dt, rng, false);
    }

    /// Returns false when `check_descent` is set and `U*` increased.
    fn euler<R: Rng>(&self, z: &mut [f64], duration: f64, dt: f64, rng: &mut R, check_descent: bool) -> bool {
        let steps = (duration / dt).ceil().max(1.0) as usize;
        let h = duration / steps as f64;
        let sq = h.sqrt();
        let mut f = vec![0.0; self.dim];
        let mut u_prev = self.potential(z);
        for _ in 0..steps {
            self.drift(z, &mut f);
            for i in 0..self.dim {
                let noise = if self.sigma[i] > 0.0 {
                    self.sigma[i] * sq * rng.sample::<f64, _>(StandardNormal)
                } else {
                    0.0
                };
                z[i] += f[i] * h + noise;
            }
            if check_descent {
                let u = self.potential(z);
                if u > u_prev {
                    return false;
                }
                u_prev = u;
            }
        }
        true
    }

    /// Step-size convergence check. Integrates `n` paths to `t` with steps
    /// `dt` and `dt/2` on the same Brownian increments and compares the
    /// Sinkhorn W₂ from the initial population to each endpoint population.
    pub fn dt_convergence(&self, t: f64, n: usize, seed: u64) -> Result<DtConvergence, SimError> {
        let (start, coarse, fine) = self.coupled_endpoints(t, n, seed)?;
        let cfg = SinkhornConfig::default();
        let w2 = |x: &Mat| sinkhorn_w2(&start, x, &cfg).map_err(|e| SimError::Invalid(e.to_string()));
        let (w2_coarse, w2_fine) = (w2(&coarse)?, w2(&fine)?);
        let gap = (&coarse - &fine).mapv(|v| v * v).sum() / n as f64;
        Ok(DtConvergence {
            w2_coarse,
            w2_fine,
            relative_change: (w2_coarse - w2_fine).abs() / w2_fine,
            paired_rms_gap: gap.sqrt(),
        })
    }

    /// Initial states and endpoints of `n` paths integrated to `t` with steps
    /// `dt` and `dt/2`, both driven by the same Brownian increments. Row `i`
    /// of each matrix is the same path.
    pub fn coupled_endpoints(&self, t: f64, n: usize, seed: u64) -> Result<(Mat, Mat, Mat), SimError> {
        self.validate()?;
        if !(t > 0.0) || !t.is_finite() || n == 0 {
            return Err(SimError::BadTime(t));
        }
        let stream = derive_seed(seed, "dt convergence");
        let steps = (t / self.dt).ceil().max(1.0) as usize;
        let h = t / steps as f64;
        let half = (0.5 * h).sqrt();
        let paths: Vec<[Vec<f64>; 3]> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut rng = item_rng(stream, i as u64);
                let start = self.initial_state(&mut rng);
                let (mut coarse, mut fine) = (start.clone(), start.clone());
                let mut f = vec![0.0; self.dim];
                for _ in 0..steps {
                    let xi: Vec<[f64; 2]> = (0..self.dim)
                        .map(|_| [rng.sample(StandardNormal), rng.sample(StandardNormal)])
                        .collect();
                    self.drift(&coarse, &mut f);
                    for j in 0..self.dim {
                        coarse[j] += f[j] * h + self.sigma[j] * half * (xi[j][0] + xi[j][1]);
                    }
                    for k in 0..2 {
                        self.drift(&fine, &mut f);
                        for j in 0..self.dim {
                            fine[j] += f[j] * 0.5 * h + self.sigma[j] * half * xi[j][k];
                        }
                    }
                }
                [start, coarse, fine]
            })
            .collect();
        let pick = |k: usize| stack(&paths.iter().map(|p| p[k].clone()).collect::<Vec<_>>(), self.dim);
        Ok((pick(0), pick(1), pick(2)))
    }

    fn initial_state<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        self.init_center
            .iter()
            .map(|c| c + self.init_std * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }

    /// Evolves each row of `starts` independently for `duration`. Row `i`
    /// draws from its own substream of `seed`, so results do not depend on
    /// the thread count.
    pub fn evolve(&self, starts: &Mat, duration: f64, seed: u64) -> Result<Mat, SimError> {
        self.validate()?;
        if !(duration >= 0.0) || !duration.is_finite() {
            return Err(SimError::BadTime(duration));
        }
        let rows: Vec<Vec<f64>> = (0..starts.nrows())
            .into_par_iter()
            .map(|i| {
                let mut rng = item_rng(seed, i as u64);
                let mut z = starts.row(i).to_vec();
                self.integrate(&mut z, duration, &mut rng);
                z
            })
            .collect();
        Ok(stack(&rows, self.dim))
    }

    /// `n` independent paths from the initial Gaussian, observed only at
    /// time `t`.
    pub fn simulate_population(&self, t: f64, n: usize, seed: u64) -> Result<Snapshot, SimError> {
        self.validate()?;
        if !(t >= 0.0) || !t.is_finite() {
            return Err(SimError::BadTime(t));
        }
        let stream = derive_seed(seed, &format!("population t={t:e}"));
        let rows: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut rng = item_rng(stream, i as u64);
                let mut z = self.initial_state(&mut rng);
                self.integrate(&mut z, t, &mut rng);
                z
            })
            .collect();
        Ok(Snapshot::new(t, stack(&rows, self.dim)))
    }

    /// One snapshot per time, each from fresh paths.
    pub fn simulate_dataset(
        &self,
        times: &[f64],
        cells_per_snapshot: usize,
        seed: u64,
    ) -> Result<TrajectoryDataset, SimError> {
        let snapshots = times
            .iter()
            .map(|&t| self.simulate_population(t, cells_per_snapshot, seed))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(TrajectoryDataset {
            snapshots,
            provenance: Some(Provenance {
                landscape: self.clone(),
                seed,
            }),
        })
    }

    /// Clonal benchmark: `n_clones` source states observed at `t_source`,
    /// each with `daughters` independent continuations to `t_end`.
    pub fn simulate_clones(
        &self,
        t_source: f64,
        t_end: f64,
        n_clones: usize,
        daughters: usize,
        seed: u64,
    ) -> Result<CloneBenchmark, SimError> {
        if !(t_end >= t_source) {
            return Err(SimError::BadTime(t_end - t_source));
        }
        let src = self.simulate_population(t_source, n_clones, derive_seed(seed, "clone sources"))?;
        let starts = Array2::from_shape_fn((n_clones * daughters, self.dim), |(r, j)| {
            src.cells[[r / daughters, j]]
        });
        let ends = self.evolve(&starts, t_end - t_source, derive_seed(seed, "clone daughters"))?;
        let fates: Vec<Fate> = ends.rows().into_iter().map(|r| Fate::of(r[0])).collect();
        let clone_of: Vec<u64> = (0..n_clones * daughters).map(|r| (r / daughters) as u64).collect();

        let mut ratios = Vec::with_capacity(n_clones);
        let mut majority = Vec::with_capacity(n_clones);
        for c in 0..n_clones {
            let own = &fates[c * daughters..(c + 1) * daughters];
            let left = own.iter().filter(|f| **f == Fate::LeftWell).count();
            let right = own.iter().filter(|f| **f == Fate::RightWell).count();
            let undecided = daughters - left - right;
            ratios.push((left + right > 0).then(|| left as f64 / (left + right) as f64));
            majority.push(if undecided > left.max(right) {
                Fate::Undecided
            } else if left > right {
                Fate::LeftWell
            } else if right > left {
                Fate::RightWell
            } else {
                Fate::Undecided
            });
        }
        let mut source = Snapshot::new(t_source, src.cells);
        source.clone_ids = Some((0..n_clones as u64).collect());
        source.fates = Some(majority);
        let mut atlas = Snapshot::new(t_end, ends);
        atlas.clone_ids = Some(clone_of);
        atlas.fates = Some(fates);
        Ok(CloneBenchmark {
            source,
            atlas,
            ratios,
        })
    }
}

/// Outcome of [`Landscape::dt_convergence`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DtConvergence {
    pub w2_coarse: f64,
    pub w2_fine: f64,
    /// `|W₂(dt) − W₂(dt/2)| / W₂(dt/2)`.
    pub relative_change: f64,
    /// Root-mean-square distance between paired endpoints; bounds the W₂
    /// between the two endpoint populations from above.
    pub paired_rms_gap: f64,
}

/// Clone sources, their labelled daughters and the per-clone ground-truth
/// ratio `left / (left + right)` (`None` when every daughter is undecided).
#[derive(Clone, Debug, PartialEq)]
pub struct CloneBenchmark {
    pub source: Snapshot,
    pub atlas: Snapshot,
    pub ratios: Vec<Option<f64>>,
}

impl CloneBenchmark {
    /// Rebuilds the benchmark from its two snapshots, e.g. after reading
    /// them from disk.
    pub fn from_snapshots(source: Snapshot, atlas: Snapshot) -> Result<Self, DatasetError> {
        let (Some(src_ids), Some(ids), Some(fates)) = (&source.clone_ids, &atlas.clone_ids, &atlas.fates) else {
            return Err(DatasetError::Invalid("clone benchmark needs clone ids and fates".into()));
        };
        let ratios = src_ids
            .iter()
            .map(|c| {
                let mut left = 0usize;
                let mut right = 0usize;
                for (id, f) in ids.iter().zip(fates) {
                    if id == c {
                        match f {
                            Fate::LeftWell => left += 1,
                            Fate::RightWell => right += 1,
                            Fate::Undecided => {}
                        }
                    }
                }
                (left + right > 0).then(|| left as f64 / (left + right) as f64)
            })
            .collect();
        Ok(Self {
            source,
            atlas,
            ratios,
        })
    }
}

fn stack(rows: &[Vec<f64>], dim: usize) -> Mat {
    let mut m = Array2::zeros((rows.len(), dim));
    for (i, r) in rows.iter().enumerate() {
        m.row_mut(i).assign(&Array1::from(r.clone()));
    }
    m
}
