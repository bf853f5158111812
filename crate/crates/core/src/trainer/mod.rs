//! Multi-Δ population training: ordered-pair sampling, AdamW with a
//! warmup-cosine schedule and global-norm clipping, checkpoints and a
//! per-step history.

mod optim;

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::Path;

use ndarray::Array2;
use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{DiffError, Graph, Mat};
use crate::landscape::{Split, TrajectoryDataset};
use crate::operator::{Checkpoint, Model, ModelConfig, ModelError, TrunkKind, VariantKind};
use crate::population_losses::{
    composite_loss, sinkhorn_w2, CompositeError, KernelBank, LossSettings, LossWeights, SinkhornConfig,
};
use crate::seeding::{derive_seed, rng_for};

pub use optim::{adamw_step, clip_global_norm, lr_at, warmup_steps, AdamHyper, AdamState};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("dataset does not fit the run: {0}")]
    Data(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("non-finite value at step {step} in {component}; last finite state kept")]
    NonFinite {
        step: usize,
        component: String,
        last_good: Box<Checkpoint>,
        history: Box<TrainHistory>,
    },
    #[error("{0}")]
    Io(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairMode {
    /// Uniform over all pairs `(tᵢ, tⱼ)` with `i < j`.
    #[default]
    AllOrdered,
    /// Only the first-to-last transition.
    EndpointOnly,
}

impl PairMode {
    pub fn as_str(self) -> &'static str {
        match self {
            PairMode::AllOrdered => "all_ordered",
            PairMode::EndpointOnly => "endpoint_only",
        }
    }
}

impl std::str::FromStr for PairMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "all_ordered" => Ok(PairMode::AllOrdered),
            "endpoint_only" => Ok(PairMode::EndpointOnly),
            other => Err(format!("unknown pair mode `{other}` (all_ordered, endpoint_only)")),
        }
    }
}

/// Network sizes; the state dimension comes from the dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Architecture {
    pub rank: usize,
    pub width: usize,
    pub depth: usize,
    pub time_width: usize,
    pub periodic_channels: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        let c = ModelConfig::default();
        Self {
            rank: c.rank,
            width: c.width,
            depth: c.depth,
            time_width: c.time_width,
            periodic_channels: c.periodic_channels,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub variant: VariantKind,
    pub architecture: Architecture,
    pub weights: LossWeights,
    pub drift_on: bool,
    pub down_on: bool,
    /// Stochastic samples per source cell.
    pub k: usize,
    pub batch: usize,
    pub steps: usize,
    pub base_lr: f64,
    pub betas: (f64, f64),
    pub weight_decay: f64,
    pub warmup_frac: f64,
    pub grad_clip: f64,
    pub seed: u64,
    pub pair_mode: PairMode,
    /// Seed and test fraction of the per-timepoint train/test split.
    pub split_seed: u64,
    pub test_frac: f64,
    pub checkpoint_every: usize,
    pub eval_every: usize,
    pub sinkhorn: SinkhornConfig,
    pub bandwidths: Vec<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            variant: VariantKind::Selected,
            architecture: Architecture::default(),
            weights: LossWeights::default(),
            drift_on: true,
            down_on: true,
            k: 8,
            batch: 128,
            steps: 2000,
            base_lr: 3e-4,
            betas: (0.9, 0.95),
            weight_decay: 0.01,
            warmup_frac: 0.05,
            grad_clip: 1.0,
            seed: 0,
            pair_mode: PairMode::AllOrdered,
            split_seed: 0,
            test_frac: 0.2,
            checkpoint_every: 100,
            eval_every: 100,
            sinkhorn: SinkhornConfig::default(),
            bandwidths: KernelBank::default().bandwidths,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if !(self.warmup_frac > 0.0 && self.warmup_frac < 1.0) {
            return bad(format!("warmup_frac must be in (0, 1), got {}", self.warmup_frac));
        }
        let rates = [
            ("base_lr", self.base_lr),
            ("grad_clip", self.grad_clip),
        ];
        for (name, v) in rates {
            if !(v > 0.0) || !v.is_finite() {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.weight_decay >= 0.0) || !self.weight_decay.is_finite() {
            return bad(format!("weight_decay must be non-negative, got {}", self.weight_decay));
        }
        let (b1, b2) = self.betas;
        if !(0.0..1.0).contains(&b1) || !(0.0..1.0).contains(&b2) {
            return bad(format!("betas must lie in [0, 1), got {:?}", self.betas));
        }
        if self.k == 0 || self.batch == 0 {
            return bad("k and batch must be positive".into());
        }
        if !(self.test_frac >= 0.0 && self.test_frac < 1.0) {
            return bad(format!("test_frac must be in [0, 1), got {}", self.test_frac));
        }
        self.weights.validate().map_err(|e| TrainError::Config(e.to_string()))?;
        self.sinkhorn.validate().map_err(|e| TrainError::Config(e.to_string()))?;
        KernelBank::new(self.bandwidths.clone()).map_err(|e| TrainError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn model_config(&self, dim: usize) -> ModelConfig {
        let a = &self.architecture;
        ModelConfig {
            dim,
            rank: a.rank,
            width: a.width,
            depth: a.depth,
            time_width: a.time_width,
            periodic_channels: a.periodic_channels,
            variant: self.variant,
            trunk: TrunkKind::ModulatedMlp,
        }
    }

    pub fn loss_settings(&self) -> LossSettings {
        LossSettings {
            weights: self.weights,
            bank: KernelBank::new(self.bandwidths.clone()).expect("validated"),
            sinkhorn: self.sinkhorn,
            drift_on: self.drift_on,
            down_on: self.down_on,
        }
    }

    fn hyper(&self) -> AdamHyper {
        AdamHyper {
            betas: self.betas,
            eps: 1e-8,
            weight_decay: self.weight_decay,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub lr: f64,
    pub pair: (usize, usize),
    pub mmd: f64,
    pub w2: f64,
    pub drift: f64,
    pub down: f64,
    pub total: f64,
    pub grad_norm: f64,
    pub tau: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub step: usize,
    /// Held-out Sinkhorn W₂ of the first-to-last transition, raw coordinates.
    pub heldout_w2: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Where the initial parameters came from.
    pub init: String,
    pub steps: Vec<StepRecord>,
    pub evals: Vec<EvalRecord>,
    pub nan: bool,
}

impl TrainHistory {
    /// Median total loss over steps `range` (clamped to the recorded steps).
    pub fn median_total(&self, range: std::ops::Range<usize>) -> Option<f64> {
        let end = range.end.min(self.steps.len());
        let mut v: Vec<f64> = self.steps.get(range.start..end)?.iter().map(|r| r.total).collect();
        median(&mut v)
    }

    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for r in &self.steps {
            s.push_str(&serde_json::to_string(r).expect("record serializes"));
            s.push('\n');
        }
        s
    }
}

pub fn median(v: &mut [f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Median of `tⱼ − tᵢ` over all ordered pairs `i < j`; the initial gate
/// constant.
pub fn median_pair_delta(times: &[f64]) -> Option<f64> {
    let mut d = Vec::new();
    for i in 0..times.len() {
        for j in i + 1..times.len() {
            d.push(times[j] - times[i]);
        }
    }
    median(&mut d)
}

/// Picks a transition `(i, j)` with `i < j` over `n_times` timepoints.
pub fn sample_transition<R: Rng>(n_times: usize, mode: PairMode, rng: &mut R) -> Result<(usize, usize), TrainError> {
    if n_times < 2 {
        return Err(TrainError::Data(format!("need at least 2 timepoints, got {n_times}")));
    }
    Ok(match mode {
        PairMode::EndpointOnly => (0, n_times - 1),
        PairMode::AllOrdered => {
            let pairs = n_times * (n_times - 1) / 2;
            let mut k = rng.random_range(0..pairs);
            let mut i = 0;
            loop {
                let row = n_times - 1 - i;
                if k < row {
                    break (i, i + 1 + k);
                }
                k -= row;
                i += 1;
            }
        }
    })
}

/// `n` rows from `pool`: without replacement when the pool is large enough.
fn draw_rows<R: Rng>(pool: &[usize], n: usize, rng: &mut R) -> Vec<usize> {
    if pool.len() >= n {
        sample(rng, pool.len(), n).into_iter().map(|i| pool[i]).collect()
    } else {
        (0..n).map(|_| pool[rng.random_range(0..pool.len())]).collect()
    }
}

pub fn standard_normal<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Mat {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}

/// Result of a finished run.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub checkpoint: Checkpoint,
    pub history: TrainHistory,
    /// Per timepoint, which rows any training step read.
    pub rows_read: Vec<Vec<bool>>,
    pub splits: Vec<Split>,
}

/// Trains a freshly initialized model on `ds`.
///
/// With `out` set, the history is appended to `history.jsonl` after every
/// step and `checkpoint_latest.json` is rewritten every
/// `checkpoint_every` steps; on a non-finite value the last finite state is
/// written to `checkpoint_abort.json`.
pub fn train(ds: &TrajectoryDataset, cfg: &TrainConfig, out: Option<&Path>) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    ds.validate().map_err(|e| TrainError::Data(e.to_string()))?;
    let tau_init = median_pair_delta(&ds.times()).expect("at least two timepoints");
    let model = Model::new(cfg.model_config(ds.dim()), tau_init, derive_seed(cfg.seed, "init"))?;
    run(model, ds, cfg, out, "random".to_string())
}

/// Continues training from `init` with the same loop as [`train`].
pub fn finetune(
    init: &Checkpoint,
    ds: &TrajectoryDataset,
    cfg: &TrainConfig,
    out: Option<&Path>,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    ds.validate().map_err(|e| TrainError::Data(e.to_string()))?;
    let model = init.to_model()?;
    if model.dim() != ds.dim() {
        return Err(TrainError::Data(format!(
            "checkpoint has dimension {}, dataset {}",
            model.dim(),
            ds.dim()
        )));
    }
    if model.variant() != cfg.variant {
        return Err(TrainError::Config(format!(
            "checkpoint is variant {}, run asks for {}",
            model.variant().as_str(),
            cfg.variant.as_str()
        )));
    }
    let origin = init.meta.get("run").cloned().unwrap_or_else(|| "unnamed".into());
    run(model, ds, cfg, out, format!("checkpoint:{origin}"))
}

fn meta(cfg: &TrainConfig, init: &str, steps: usize) -> BTreeMap<String, String> {
    let mut m = BTreeMap::new();
    m.insert("variant".into(), cfg.variant.as_str().into());
    m.insert("pair_mode".into(), cfg.pair_mode.as_str().into());
    m.insert("seed".into(), cfg.seed.to_string());
    m.insert("steps".into(), steps.to_string());
    m.insert("init".into(), init.into());
    m.insert("tau_init_rule".into(), "median ordered-pair delta".into());
    m.insert(
        "run".into(),
        format!("{}/{}/seed{}", cfg.variant.as_str(), cfg.pair_mode.as_str(), cfg.seed),
    );
    m
}

fn io(e: std::io::Error) -> TrainError {
    TrainError::Io(e.to_string())
}

fn run(
    mut model: Model,
    ds: &TrajectoryDataset,
    cfg: &TrainConfig,
    out: Option<&Path>,
    init: String,
) -> Result<TrainOutcome, TrainError> {
    let splits = ds.splits(cfg.split_seed, cfg.test_frac);
    let settings = cfg.loss_settings();
    let hp = cfg.hyper();
    let decay: Vec<bool> = model.params.names().iter().map(|n| n.ends_with(".w")).collect();
    let mut state = AdamState::new(model.params.values());
    let mut rng: ChaCha8Rng = rng_for(cfg.seed, "train batches");
    let mut history = TrainHistory {
        init: init.clone(),
        ..Default::default()
    };
    let mut rows_read: Vec<Vec<bool>> = ds.snapshots.iter().map(|s| vec![false; s.len()]).collect();
    let mut log = match out {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(io)?;
            Some(std::fs::File::create(dir.join("history.jsonl")).map_err(io)?)
        }
        None => None,
    };

    for step in 0..cfg.steps {
        let (i, j) = sample_transition(ds.snapshots.len(), cfg.pair_mode, &mut rng)?;
        let src_rows = draw_rows(&splits[i].train, cfg.batch, &mut rng);
        let tgt_rows = draw_rows(&splits[j].train, cfg.batch, &mut rng);
        for &r in &src_rows {
            rows_read[i][r] = true;
        }
        for &r in &tgt_rows {
            rows_read[j][r] = true;
        }
        let src = ds.snapshots[i].select(&src_rows);
        let tgt = ds.snapshots[j].select(&tgt_rows);
        let delta = ds.snapshots[j].t - ds.snapshots[i].t;
        let noise = standard_normal(cfg.k * cfg.batch, ds.dim(), &mut rng);

        let abort = |component: String, history: &TrainHistory, model: &Model| {
            let mut h = history.clone();
            h.nan = true;
            let ck = Checkpoint::from_model(model, meta(cfg, &init, step));
            if let Some(dir) = out {
                let _ = ck.save(&dir.join("checkpoint_abort.json"));
            }
            TrainError::NonFinite {
                step,
                component,
                last_good: Box::new(ck),
                history: Box::new(h),
            }
        };

        let mut g = Graph::new();
        let bound = model.params.bind(&mut g);
        let loss = match composite_loss(&mut g, &model, &bound, &src, &tgt, delta, None, &noise, &settings) {
            Ok(l) => l,
            Err(CompositeError::Model(ModelError::NonFinite { component })) => {
                return Err(abort(component.to_string(), &history, &model))
            }
            Err(CompositeError::Loss(e)) => return Err(abort(e.to_string(), &history, &model)),
            Err(CompositeError::Model(e)) => return Err(e.into()),
        };
        if let Some(c) = loss.report.first_non_finite() {
            return Err(abort(format!("loss term `{c}`"), &history, &model));
        }
        let mut grads = match g.gradient_values(loss.total, bound.ids()) {
            Ok(gr) => gr,
            Err(DiffError::NonFinite { node, op }) => {
                return Err(abort(format!("gradient through node {node} (`{op}`)"), &history, &model))
            }
            Err(e) => return Err(TrainError::Model(ModelError::Diff(e))),
        };
        if let Some(k) = grads.iter().position(|m| m.iter().any(|v| !v.is_finite())) {
            let name = model.params.names()[k].clone();
            return Err(abort(format!("gradient of `{name}`"), &history, &model));
        }
        let grad_norm = clip_global_norm(&mut grads, cfg.grad_clip);
        let lr = lr_at(step + 1, cfg.steps, cfg);
        adamw_step(model.params.values_mut(), &grads, &decay, &mut state, lr, &hp)?;

        let rec = StepRecord {
            step,
            lr,
            pair: (i, j),
            mmd: loss.report.mmd,
            w2: loss.report.w2,
            drift: loss.report.drift,
            down: loss.report.down,
            total: loss.report.total,
            grad_norm,
            tau: model.tau(),
        };
        if let Some(f) = log.as_mut() {
            writeln!(f, "{}", serde_json::to_string(&rec).expect("record serializes")).map_err(io)?;
        }
        history.steps.push(rec);

        let done = step + 1;
        if cfg.eval_every > 0 && done % cfg.eval_every == 0 {
            history.evals.push(EvalRecord {
                step: done,
                heldout_w2: heldout_w2(&model, ds, &splits, cfg)?,
            });
        }
        if let Some(dir) = out {
            if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 {
                Checkpoint::from_model(&model, meta(cfg, &init, done))
                    .save(&dir.join("checkpoint_latest.json"))
                    .map_err(io)?;
            }
        }
    }

    let checkpoint = Checkpoint::from_model(&model, meta(cfg, &init, cfg.steps));
    if let Some(dir) = out {
        checkpoint.save(&dir.join("checkpoint.json")).map_err(io)?;
        let h = serde_json::to_string_pretty(&HistorySummary::from(&history)).expect("summary serializes");
        std::fs::write(dir.join("history_summary.json"), h).map_err(io)?;
    }
    Ok(TrainOutcome {
        model,
        checkpoint,
        history,
        rows_read,
        splits,
    })
}

#[derive(Serialize)]
struct HistorySummary<'a> {
    init: &'a str,
    steps: usize,
    nan: bool,
    first10_median_total: Option<f64>,
    last10_median_total: Option<f64>,
    evals: &'a [EvalRecord],
}

impl<'a> From<&'a TrainHistory> for HistorySummary<'a> {
    fn from(h: &'a TrainHistory) -> Self {
        let n = h.steps.len();
        Self {
            init: &h.init,
            steps: n,
            nan: h.nan,
            first10_median_total: h.median_total(0..10),
            last10_median_total: h.median_total(n.saturating_sub(10)..n),
            evals: &h.evals,
        }
    }
}

/// First-to-last held-out W₂ on at most 256 test cells per side, one draw
/// per source.
fn heldout_w2(model: &Model, ds: &TrajectoryDataset, splits: &[Split], cfg: &TrainConfig) -> Result<f64, TrainError> {
    let last = ds.snapshots.len() - 1;
    let cap = |v: &[usize]| v[..v.len().min(256)].to_vec();
    let (src_rows, tgt_rows) = (cap(&splits[0].test), cap(&splits[last].test));
    if src_rows.is_empty() || tgt_rows.is_empty() {
        return Ok(f64::NAN);
    }
    let src = ds.snapshots[0].select(&src_rows);
    let tgt = ds.snapshots[last].select(&tgt_rows);
    let delta = ds.snapshots[last].t - ds.snapshots[0].t;
    let mut rng = rng_for(cfg.seed, "heldout eval");
    let noise = standard_normal(src.nrows(), src.ncols(), &mut rng);
    let pred = model.one_step(&src, delta, None, &noise)?.z_hat;
    Ok(sinkhorn_w2(&pred, &tgt, &cfg.sinkhorn).unwrap_or(f64::NAN))
}
