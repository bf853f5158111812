use std::path::{Path, PathBuf};

use chreode::evaluator::{
    evaluate_dataset, fate_scores, summarize, EvalConfig, FateConfig, FateReport, Identity, MetricsRecord, Propagator,
};
use chreode::landscape::{read_dataset, write_dataset, CloneBenchmark, Provenance, TrajectoryDataset};
use chreode::operator::{Checkpoint, Model, VariantKind};
use chreode::trainer::{PairMode, TrainConfig, TrainOutcome};

use crate::config::{echo, load, SimulateConfig, ECHO_FILE};
use crate::{io_error, CliError, Common};

/// Checkpoint argument that selects the source-replay stub.
pub const IDENTITY_CHECKPOINT: &str = "builtin:identity";

pub(crate) fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(io_error(path))
}

pub(crate) fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(io_error(dir))
}

pub(crate) fn to_json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("output serializes")
}

/// Writes `dataset.txt` and, when configured, `clones.txt`.
pub fn simulate(common: &Common) -> Result<PathBuf, CliError> {
    let mut cfg = load(common.config.as_deref(), SimulateConfig::default())?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    if let Some(c) = &cfg.clones {
        if !(c.t_end > c.t_source) {
            return Err(CliError::Config("clone end time must follow the source time".into()));
        }
    }
    let land = cfg.landscape()?;
    let ds = land.simulate_dataset(&cfg.times, cfg.cells, cfg.seed)?;
    create_dir(&common.out)?;
    write(&common.out.join(ECHO_FILE), &echo(&cfg, "chreode simulate")?)?;
    let path = common.out.join("dataset.txt");
    write_dataset(&ds, &path)?;
    if let Some(c) = &cfg.clones {
        let bench = land.simulate_clones(c.t_source, c.t_end, c.n_clones, c.daughters, cfg.seed)?;
        let clones = TrajectoryDataset {
            snapshots: vec![bench.source, bench.atlas],
            provenance: Some(Provenance {
                landscape: land.clone(),
                seed: cfg.seed,
            }),
        };
        write_dataset(&clones, &common.out.join("clones.txt"))?;
    }
    Ok(path)
}

/// Trains from scratch; the trainer writes `checkpoint.json` and the
/// history next to the config echo.
pub fn train(
    common: &Common,
    data: &Path,
    variant: Option<VariantKind>,
    pair_mode: Option<PairMode>,
) -> Result<TrainOutcome, CliError> {
    let mut cfg = load(common.config.as_deref(), TrainConfig::default())?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(v) = variant {
        cfg.variant = v;
    }
    if let Some(m) = pair_mode {
        cfg.pair_mode = m;
    }
    cfg.validate()?;
    let ds = read_dataset(data)?;
    create_dir(&common.out)?;
    write(
        &common.out.join(ECHO_FILE),
        &echo(&cfg, &format!("chreode train --data {}", data.display()))?,
    )?;
    Ok(chreode::trainer::train(&ds, &cfg, Some(&common.out))?)
}

/// Loads a checkpoint, or the identity stub for [`IDENTITY_CHECKPOINT`].
pub(crate) fn load_propagator(checkpoint: &str, dim: usize) -> Result<Box<dyn Propagator>, CliError> {
    if checkpoint == IDENTITY_CHECKPOINT {
        return Ok(Box::new(Identity { dim }));
    }
    let path = Path::new(checkpoint);
    if !path.is_file() {
        return Err(CliError::Data(format!("checkpoint {checkpoint} does not exist")));
    }
    let model: Model = Checkpoint::load(path)?.to_model()?;
    if model.dim() != dim {
        return Err(CliError::Data(format!(
            "checkpoint has dimension {}, dataset {dim}",
            model.dim()
        )));
    }
    Ok(Box::new(model))
}

/// Writes `metrics.jsonl` (one record per target and seed) and
/// `metrics_summary.json` (mean and standard deviation per target).
pub fn eval(common: &Common, checkpoint: &str, data: &Path, seeds: Option<usize>) -> Result<Vec<MetricsRecord>, CliError> {
    let mut cfg = load(common.config.as_deref(), EvalConfig::default())?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(n) = seeds {
        cfg.seeds = n;
    }
    cfg.validate()?;
    let ds = read_dataset(data)?;
    let model = load_propagator(checkpoint, ds.dim())?;
    let splits = ds.splits(cfg.split_seed, cfg.test_frac);
    let records = evaluate_dataset(model.as_ref(), &ds, &splits, &cfg)?;

    create_dir(&common.out)?;
    write(
        &common.out.join(ECHO_FILE),
        &echo(
            &cfg,
            &format!("chreode eval --checkpoint {checkpoint} --data {}", data.display()),
        )?,
    )?;
    let lines: String = records
        .iter()
        .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
        .collect();
    write(&common.out.join("metrics.jsonl"), &lines)?;
    write(&common.out.join("metrics_summary.json"), &to_json(&summarize(&records)))?;
    Ok(records)
}

/// Writes `fate.json`.
pub fn fate(common: &Common, checkpoint: &str, data: &Path, k: Option<usize>) -> Result<FateReport, CliError> {
    let mut cfg = load(common.config.as_deref(), FateConfig::default())?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(k) = k {
        cfg.k = k;
    }
    let ds = read_dataset(data)?;
    let [source, atlas]: [_; 2] = ds
        .snapshots
        .try_into()
        .map_err(|_| CliError::Data("clone benchmark needs exactly a source and an atlas snapshot".into()))?;
    let dim = source.cells.ncols();
    let bench = CloneBenchmark::from_snapshots(source, atlas)?;
    let model = load_propagator(checkpoint, dim)?;
    let report = fate_scores(model.as_ref(), &bench, &cfg)?;

    create_dir(&common.out)?;
    write(
        &common.out.join(ECHO_FILE),
        &echo(
            &cfg,
            &format!("chreode fate --checkpoint {checkpoint} --data {}", data.display()),
        )?,
    )?;
    write(&common.out.join("fate.json"), &to_json(&report))?;
    Ok(report)
}
