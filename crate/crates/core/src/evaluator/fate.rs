//! Zero-shot clonal fate scoring: push each clone source to the endpoint
//! time, label every draw by its nearest atlas cells, and correlate the
//! predicted left/(left+right) ratio with the clone's observed ratio.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::knn::nearest;
use super::{EvalError, Propagator};
use crate::autodiff::Mat;
use crate::landscape::{CloneBenchmark, Fate};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FateConfig {
    /// Stochastic endpoint draws per source.
    pub k: usize,
    /// Atlas neighbours consulted per draw.
    pub knn: usize,
    pub seed: u64,
}

impl Default for FateConfig {
    fn default() -> Self {
        Self { k: 32, knn: 20, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FateReport {
    /// Predicted ratio per source; `None` when every draw was undecided.
    pub predicted: Vec<Option<f64>>,
    /// Observed ratio per source from its labelled daughters.
    pub observed: Vec<Option<f64>>,
    /// Sources with at least one classified draw.
    pub n_with_pred: usize,
    /// Sources entering the correlation (classified draw and an observed
    /// ratio).
    pub n_scored: usize,
    /// Pearson correlation over the scored sources; `None` when degenerate.
    pub r_masked: Option<f64>,
    /// Set when either side has zero variance or fewer than two sources
    /// are scored.
    pub degenerate: bool,
    pub k: usize,
    pub knn: usize,
}

/// Majority label among the `knn` atlas cells nearest each row of `points`.
/// A tie for the most votes gives [`Fate::Undecided`].
pub fn knn_labels(points: &Mat, atlas: &Mat, labels: &[Fate], knn: usize) -> Result<Vec<Fate>, EvalError> {
    if atlas.nrows() < knn || knn == 0 {
        return Err(EvalError::TooFew {
            what: "atlas cells",
            need: knn.max(1),
            got: atlas.nrows(),
        });
    }
    if labels.len() != atlas.nrows() {
        return Err(EvalError::Config(format!(
            "{} labels for {} atlas cells",
            labels.len(),
            atlas.nrows()
        )));
    }
    if points.ncols() != atlas.ncols() {
        return Err(EvalError::DimMismatch {
            expected: atlas.ncols(),
            got: points.ncols(),
        });
    }
    Ok((0..points.nrows())
        .into_par_iter()
        .map(|i| {
            let mut votes = [0usize; 3];
            for j in nearest(atlas, points.row(i), knn, None) {
                votes[slot(labels[j])] += 1;
            }
            let best = *votes.iter().max().expect("three classes");
            match votes.iter().filter(|&&v| v == best).count() {
                1 if votes[0] == best => Fate::LeftWell,
                1 if votes[1] == best => Fate::RightWell,
                _ => Fate::Undecided,
            }
        })
        .collect())
}

fn slot(f: Fate) -> usize {
    match f {
        Fate::LeftWell => 0,
        Fate::RightWell => 1,
        Fate::Undecided => 2,
    }
}

/// Scores `model` on a clone benchmark, propagating sources over the gap
/// between the source and atlas times.
pub fn fate_scores(model: &dyn Propagator, bench: &CloneBenchmark, cfg: &FateConfig) -> Result<FateReport, EvalError> {
    if cfg.k == 0 {
        return Err(EvalError::Config("need at least one draw per source".into()));
    }
    let labels = bench
        .atlas
        .fates
        .as_ref()
        .ok_or_else(|| EvalError::Config("atlas carries no fate labels".into()))?;
    let n = bench.source.len();
    if n == 0 {
        return Err(EvalError::EmptySet("clone source"));
    }
    if bench.atlas.len() < cfg.knn {
        return Err(EvalError::TooFew {
            what: "atlas cells",
            need: cfg.knn,
            got: bench.atlas.len(),
        });
    }
    let delta = bench.atlas.t - bench.source.t;
    let draws = model.sample(&bench.source.cells, delta, cfg.k, cfg.seed)?;
    let classes = knn_labels(&draws, &bench.atlas.cells, labels, cfg.knn)?;

    let mut left = vec![0usize; n];
    let mut right = vec![0usize; n];
    for (r, c) in classes.iter().enumerate() {
        match c {
            Fate::LeftWell => left[r % n] += 1,
            Fate::RightWell => right[r % n] += 1,
            Fate::Undecided => {}
        }
    }
    let predicted: Vec<Option<f64>> = (0..n)
        .map(|b| (left[b] + right[b] > 0).then(|| left[b] as f64 / (left[b] + right[b]) as f64))
        .collect();
    let n_with_pred = predicted.iter().filter(|p| p.is_some()).count();
    let (xs, ys): (Vec<f64>, Vec<f64>) = predicted
        .iter()
        .zip(&bench.ratios)
        .filter_map(|(p, o)| Some(((*p)?, (*o)?)))
        .unzip();
    let r_masked = pearson(&xs, &ys);
    Ok(FateReport {
        predicted,
        observed: bench.ratios.clone(),
        n_with_pred,
        n_scored: xs.len(),
        degenerate: r_masked.is_none(),
        r_masked,
        k: cfg.k,
        knn: cfg.knn,
    })
}

/// Pearson correlation; `None` for fewer than two pairs or zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}
