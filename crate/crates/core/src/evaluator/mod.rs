//! Held-out evaluation: per-target transition metrics against identity and
//! linear baselines, velocity consistency, and clonal fate scoring.
//!
//! Anything that maps states forward in time implements [`Propagator`]:
//! the trained model, the baselines, and the ground-truth simulator.
//! Metrics are computed only on [`Population`]s standardized with the
//! train-split stats of the source timepoint.

mod fate;
mod knn;
mod standardize;
mod velocity;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Mat;
use crate::landscape::{Landscape, SimError, Split, TrajectoryDataset};
use crate::operator::{Model, ModelError};
use crate::population_losses::{mmd, sinkhorn_w2, KernelBank, LossError, SinkhornConfig};
use crate::seeding::rng_for;
use crate::trainer::standard_normal;

pub use fate::{fate_scores, knn_labels, pearson, FateConfig, FateReport};
pub use standardize::{Frame, Population, StandardizationStats, SPREAD_GUARD};
pub use velocity::{cell_velocities, velocity_consistency, velocity_consistency_of, VelocityReport};

/// Default stochastic samples per source cell at evaluation.
pub const K_EVAL: usize = 32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("{0} set is empty")]
    EmptySet(&'static str),
    #[error("expected {expected} columns, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("metric asked for on raw coordinates; standardize first")]
    Unstandardized,
    #[error("population is already standardized")]
    AlreadyStandardized,
    #[error("populations were standardized with different stats")]
    FrameMismatch,
    #[error("need at least {need} {what}, got {got}")]
    TooFew { what: &'static str, need: usize, got: usize },
    #[error("invalid evaluation setting: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Maps states forward by an elapsed time.
pub trait Propagator: Sync {
    fn dim(&self) -> usize;

    /// `k` stochastic draws per state; row `k·B + b` continues state `b`.
    fn sample(&self, z: &Mat, delta: f64, k: usize, seed: u64) -> Result<Mat, EvalError>;

    /// Noise-free continuation of each state.
    fn mean(&self, z: &Mat, delta: f64) -> Result<Mat, EvalError>;
}

impl Propagator for Model {
    fn dim(&self) -> usize {
        Model::dim(self)
    }

    fn sample(&self, z: &Mat, delta: f64, k: usize, seed: u64) -> Result<Mat, EvalError> {
        let mut rng = rng_for(seed, "eval noise");
        let noise = standard_normal(k * z.nrows(), z.ncols(), &mut rng);
        Ok(self.one_step(z, delta, None, &noise)?.z_hat)
    }

    fn mean(&self, z: &Mat, delta: f64) -> Result<Mat, EvalError> {
        Ok(self.predict_mean(z, delta, None)?)
    }
}

/// Ground truth: Euler–Maruyama paths of the simulator.
impl Propagator for Landscape {
    fn dim(&self) -> usize {
        self.dim
    }

    fn sample(&self, z: &Mat, delta: f64, k: usize, seed: u64) -> Result<Mat, EvalError> {
        Ok(self.evolve(&tile(z, k), delta, seed)?)
    }

    fn mean(&self, z: &Mat, delta: f64) -> Result<Mat, EvalError> {
        let quiet = Landscape {
            sigma: vec![0.0; self.dim],
            ..self.clone()
        };
        Ok(quiet.evolve(z, delta, 0)?)
    }
}

/// Source replay: every state stays where it is.
#[derive(Clone, Copy, Debug)]
pub struct Identity {
    pub dim: usize,
}

impl Propagator for Identity {
    fn dim(&self) -> usize {
        self.dim
    }

    fn sample(&self, z: &Mat, _delta: f64, k: usize, _seed: u64) -> Result<Mat, EvalError> {
        Ok(tile(z, k))
    }

    fn mean(&self, z: &Mat, _delta: f64) -> Result<Mat, EvalError> {
        Ok(z.clone())
    }
}

/// Shifts every state by `Δ·velocity`.
#[derive(Clone, Debug)]
pub struct LinearDrift {
    pub velocity: Array1<f64>,
}

impl LinearDrift {
    /// Mean displacement per unit time: the average over adjacent
    /// timepoints of `(mean_{i+1} − mean_i) / (t_{i+1} − t_i)`, using only
    /// the rows listed in each split's train part.
    pub fn fit(ds: &TrajectoryDataset, splits: &[Split]) -> Result<Self, EvalError> {
        let n = ds.snapshots.len();
        if n < 2 {
            return Err(EvalError::TooFew {
                what: "train timepoints",
                need: 2,
                got: n,
            });
        }
        let means = ds
            .snapshots
            .iter()
            .zip(splits)
            .map(|(s, sp)| {
                if sp.train.is_empty() {
                    return Err(EvalError::EmptySet("train split"));
                }
                Ok(s.select(&sp.train).mean_axis(ndarray::Axis(0)).expect("non-empty"))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut v = Array1::zeros(ds.dim());
        for i in 0..n - 1 {
            let dt = ds.snapshots[i + 1].t - ds.snapshots[i].t;
            v += &((&means[i + 1] - &means[i]) / dt);
        }
        v /= (n - 1) as f64;
        Ok(Self { velocity: v })
    }
}

impl Propagator for LinearDrift {
    fn dim(&self) -> usize {
        self.velocity.len()
    }

    fn sample(&self, z: &Mat, delta: f64, k: usize, _seed: u64) -> Result<Mat, EvalError> {
        Ok(tile(&self.mean(z, delta)?, k))
    }

    fn mean(&self, z: &Mat, delta: f64) -> Result<Mat, EvalError> {
        Ok(z + &(&self.velocity * delta))
    }
}

/// `k` stacked copies of `z`, copy-major.
pub fn tile(z: &Mat, k: usize) -> Mat {
    let b = z.nrows();
    Array2::from_shape_fn((k * b, z.ncols()), |(r, j)| z[[r % b, j]])
}

/// Metric settings shared by the model and the baselines.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub k_eval: usize,
    pub seeds: usize,
    pub sinkhorn: SinkhornConfig,
    pub bandwidths: Vec<f64>,
    /// Index of the source timepoint; every later timepoint is a target.
    pub source: usize,
    /// First evaluation seed; runs use `seed..seed + seeds`.
    pub seed: u64,
    /// Must match the split used in training.
    pub split_seed: u64,
    pub test_frac: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            k_eval: K_EVAL,
            seeds: 3,
            sinkhorn: SinkhornConfig::default(),
            bandwidths: KernelBank::default().bandwidths,
            source: 0,
            seed: 0,
            split_seed: 0,
            test_frac: 0.2,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.k_eval == 0 || self.seeds == 0 {
            return Err(EvalError::Config("k_eval and seeds must be positive".into()));
        }
        if !(self.test_frac > 0.0 && self.test_frac < 1.0) {
            return Err(EvalError::Config(format!("test_frac must lie in (0, 1), got {}", self.test_frac)));
        }
        self.sinkhorn.validate()?;
        KernelBank::new(self.bandwidths.clone())?;
        Ok(())
    }
}

/// W₂ and squared MMD of one predicted population against its target.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PopulationMetrics {
    pub w2: f64,
    pub mmd: f64,
}

/// Metrics between two standardized populations.
pub fn population_metrics(pred: &Population, target: &Population, cfg: &EvalConfig) -> Result<PopulationMetrics, EvalError> {
    standardize::common_frame(&[pred, target])?;
    let bank = KernelBank::new(cfg.bandwidths.clone())?;
    Ok(PopulationMetrics {
        w2: sinkhorn_w2(pred.cells(), target.cells(), &cfg.sinkhorn)?,
        mmd: mmd(pred.cells(), target.cells(), &bank)?,
    })
}

/// One (target, seed) evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub source_t: f64,
    pub target_t: f64,
    pub delta: f64,
    pub seed: u64,
    pub k_eval: usize,
    pub model: PopulationMetrics,
    pub identity: PopulationMetrics,
    pub linear: PopulationMetrics,
}

/// Raw source and target test cells of one transition plus the stats and
/// linear baseline they are compared under.
pub struct TransitionTask<'a> {
    pub source: &'a Mat,
    pub target: &'a Mat,
    pub source_t: f64,
    pub target_t: f64,
    pub stats: &'a StandardizationStats,
    pub linear: &'a LinearDrift,
}

/// Propagates the source `k_eval` times per cell with `model` and each
/// baseline, standardizes all predictions and the target with the task's
/// stats, and scores them against the target.
pub fn evaluate_transition(
    model: &dyn Propagator,
    task: &TransitionTask,
    cfg: &EvalConfig,
    seed: u64,
) -> Result<MetricsRecord, EvalError> {
    if task.source.nrows() == 0 {
        return Err(EvalError::EmptySet("source"));
    }
    if task.target.nrows() == 0 {
        return Err(EvalError::EmptySet("target"));
    }
    let delta = task.target_t - task.source_t;
    let target = task.stats.apply(&Population::raw(task.target.clone()))?;
    let score = |p: &dyn Propagator| -> Result<PopulationMetrics, EvalError> {
        let pred = p.sample(task.source, delta, cfg.k_eval, seed)?;
        population_metrics(&task.stats.apply(&Population::raw(pred))?, &target, cfg)
    };
    Ok(MetricsRecord {
        source_t: task.source_t,
        target_t: task.target_t,
        delta,
        seed,
        k_eval: cfg.k_eval,
        model: score(model)?,
        identity: score(&Identity { dim: task.source.ncols() })?,
        linear: score(task.linear)?,
    })
}

/// Every target after `cfg.source`, for `cfg.seeds` consecutive seeds, on
/// the given test splits. Stats come from the source timepoint's train
/// split.
pub fn evaluate_dataset(
    model: &dyn Propagator,
    ds: &TrajectoryDataset,
    splits: &[Split],
    cfg: &EvalConfig,
) -> Result<Vec<MetricsRecord>, EvalError> {
    cfg.validate()?;
    let n = ds.snapshots.len();
    if cfg.source + 1 >= n {
        return Err(EvalError::TooFew {
            what: "timepoints after the source",
            need: 1,
            got: n.saturating_sub(cfg.source + 1),
        });
    }
    if model.dim() != ds.dim() {
        return Err(EvalError::DimMismatch {
            expected: ds.dim(),
            got: model.dim(),
        });
    }
    let src_snap = &ds.snapshots[cfg.source];
    let stats = StandardizationStats::fit(&src_snap.select(&splits[cfg.source].train))?;
    let linear = LinearDrift::fit(ds, splits)?;
    let source = src_snap.select(&splits[cfg.source].test);
    let mut out = Vec::new();
    for j in cfg.source + 1..n {
        let target = ds.snapshots[j].select(&splits[j].test);
        let task = TransitionTask {
            source: &source,
            target: &target,
            source_t: src_snap.t,
            target_t: ds.snapshots[j].t,
            stats: &stats,
            linear: &linear,
        };
        for seed in cfg.seed..cfg.seed + cfg.seeds as u64 {
            out.push(evaluate_transition(model, &task, cfg, seed)?);
        }
    }
    Ok(out)
}

/// Mean and sample standard deviation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(v: &[f64]) -> Self {
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let std = if v.len() > 1 {
            (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { mean, std }
    }
}

/// Per-target summary over seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetSummary {
    pub target_t: f64,
    pub seeds: usize,
    pub w2: MeanStd,
    pub mmd: MeanStd,
    pub identity_w2: MeanStd,
    pub identity_mmd: MeanStd,
    pub linear_w2: MeanStd,
    pub linear_mmd: MeanStd,
}

/// Groups records by target time, in order of first appearance.
pub fn summarize(records: &[MetricsRecord]) -> Vec<TargetSummary> {
    let mut targets: Vec<f64> = Vec::new();
    for r in records {
        if !targets.contains(&r.target_t) {
            targets.push(r.target_t);
        }
    }
    targets
        .into_iter()
        .map(|t| {
            let rs: Vec<&MetricsRecord> = records.iter().filter(|r| r.target_t == t).collect();
            let col = |f: &dyn Fn(&MetricsRecord) -> f64| MeanStd::of(&rs.iter().map(|r| f(r)).collect::<Vec<_>>());
            TargetSummary {
                target_t: t,
                seeds: rs.len(),
                w2: col(&|r| r.model.w2),
                mmd: col(&|r| r.model.mmd),
                identity_w2: col(&|r| r.identity.w2),
                identity_mmd: col(&|r| r.identity.mmd),
                linear_w2: col(&|r| r.linear.w2),
                linear_mmd: col(&|r| r.linear.mmd),
            }
        })
        .collect()
}
