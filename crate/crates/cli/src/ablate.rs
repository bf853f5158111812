//! The ablation grid: the selected variant plus six single-component swaps,
//! each trained and evaluated over several seeds, summarized as a rank
//! table. Each finished run leaves a `done.json` marker holding its
//! metrics, so an interrupted grid resumes where it stopped.

use std::path::Path;

use chreode::evaluator::{evaluate_dataset, MeanStd, MetricsRecord};
use chreode::landscape::read_dataset;
use chreode::operator::VariantKind;
use chreode::trainer::{PairMode, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::commands::{create_dir, to_json, write};
use crate::config::{echo, load, AblateConfig, ECHO_FILE};
use crate::{io_error, CliError, Common};

/// Grid rows in table order.
pub const VARIANTS: [&str; 7] = [
    "selected",
    "unconstrained",
    "tied_time2vec",
    "tied_fourier",
    "single_delta",
    "no_drift",
    "no_down",
];

/// `base` with one component swapped.
pub fn variant_config(name: &str, base: &TrainConfig) -> Result<TrainConfig, CliError> {
    let mut c = base.clone();
    c.variant = VariantKind::Selected;
    c.pair_mode = PairMode::AllOrdered;
    c.drift_on = true;
    c.down_on = true;
    match name {
        "selected" => {}
        "unconstrained" => c.variant = VariantKind::Unconstrained,
        "tied_time2vec" => c.variant = VariantKind::TiedTime2vec,
        "tied_fourier" => c.variant = VariantKind::TiedFourier,
        "single_delta" => c.pair_mode = PairMode::EndpointOnly,
        "no_drift" => c.drift_on = false,
        "no_down" => c.down_on = false,
        other => return Err(CliError::Config(format!("unknown ablation variant `{other}`"))),
    }
    Ok(c)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    /// Held-out W₂ per target, over seeds.
    pub w2: Vec<MeanStd>,
    /// Rank per target (1 = lowest mean W₂).
    pub ranks: Vec<usize>,
    pub average_rank: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub targets: Vec<f64>,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    /// Ranks rows per target from per-variant records.
    pub fn build(runs: &[(String, Vec<MetricsRecord>)]) -> Self {
        let mut targets: Vec<f64> = Vec::new();
        for r in runs.iter().flat_map(|(_, rs)| rs) {
            if !targets.contains(&r.target_t) {
                targets.push(r.target_t);
            }
        }
        let mut rows: Vec<AblationRow> = runs
            .iter()
            .map(|(name, recs)| AblationRow {
                variant: name.clone(),
                w2: targets
                    .iter()
                    .map(|t| {
                        let v: Vec<f64> = recs.iter().filter(|r| r.target_t == *t).map(|r| r.model.w2).collect();
                        MeanStd::of(&v)
                    })
                    .collect(),
                ranks: vec![0; targets.len()],
                average_rank: 0.0,
            })
            .collect();
        for j in 0..targets.len() {
            for i in 0..rows.len() {
                let mine = rows[i].w2[j].mean;
                rows[i].ranks[j] = 1 + rows.iter().filter(|r| r.w2[j].mean < mine).count();
            }
        }
        for r in &mut rows {
            r.average_rank = r.ranks.iter().sum::<usize>() as f64 / r.ranks.len().max(1) as f64;
        }
        Self { targets, rows }
    }

    /// Tab-separated: variant, one `mean±std` column per target, average rank.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("variant");
        for t in &self.targets {
            out.push_str(&format!("\tW2@t={t}"));
        }
        out.push_str("\tavg_rank\n");
        for r in &self.rows {
            out.push_str(&r.variant);
            for m in &r.w2 {
                out.push_str(&format!("\t{:.4}±{:.4}", m.mean, m.std));
            }
            out.push_str(&format!("\t{:.2}\n", r.average_rank));
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblateOutcome {
    pub table: AblationTable,
    /// Runs trained in this invocation, as `variant/seedN`.
    pub executed: Vec<String>,
    /// Runs whose completion marker was already present.
    pub skipped: Vec<String>,
}

const MARKER: &str = "done.json";

pub fn ablate(common: &Common, data: &Path, seeds: Option<usize>) -> Result<AblateOutcome, CliError> {
    let mut cfg = load(common.config.as_deref(), AblateConfig::default())?;
    if let Some(s) = common.seed {
        cfg.train.seed = s;
    }
    if let Some(n) = seeds {
        cfg.seeds = n;
    }
    if cfg.seeds == 0 {
        return Err(CliError::Config("ablation needs at least one seed".into()));
    }
    // evaluation must see the training split
    cfg.eval.split_seed = cfg.train.split_seed;
    cfg.eval.test_frac = cfg.train.test_frac;
    cfg.train.validate()?;
    cfg.eval.validate()?;
    let ds = read_dataset(data)?;
    let splits = ds.splits(cfg.train.split_seed, cfg.train.test_frac);

    create_dir(&common.out)?;
    write(
        &common.out.join(ECHO_FILE),
        &echo(&cfg, &format!("chreode ablate --data {}", data.display()))?,
    )?;
    let mut executed = Vec::new();
    let mut skipped = Vec::new();
    let mut runs = Vec::new();
    for name in VARIANTS {
        let vcfg = variant_config(name, &cfg.train)?;
        let mut recs = Vec::new();
        for s in 0..cfg.seeds as u64 {
            let seed = cfg.train.seed + s;
            let label = format!("{name}/seed{seed}");
            let dir = common.out.join(name).join(format!("seed{seed}"));
            let marker = dir.join(MARKER);
            if marker.is_file() {
                let text = std::fs::read_to_string(&marker).map_err(io_error(&marker))?;
                let done: Vec<MetricsRecord> = serde_json::from_str(&text)
                    .map_err(|e| CliError::Data(format!("{}: {e}", marker.display())))?;
                recs.extend(done);
                skipped.push(label);
                continue;
            }
            let run_cfg = TrainConfig { seed, ..vcfg.clone() };
            let out = chreode::trainer::train(&ds, &run_cfg, Some(&dir))?;
            let got = evaluate_dataset(&out.model, &ds, &splits, &cfg.eval)?;
            write(&marker, &to_json(&got))?;
            recs.extend(got);
            executed.push(label);
        }
        runs.push((name.to_string(), recs));
    }
    let table = AblationTable::build(&runs);
    write(&common.out.join("ablation.json"), &to_json(&table))?;
    write(&common.out.join("ablation.tsv"), &table.to_tsv())?;
    Ok(AblateOutcome {
        table,
        executed,
        skipped,
    })
}
