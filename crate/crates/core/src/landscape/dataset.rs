//! Snapshot containers and the `CHREODE-DS v1` text format.
//!
//! ```text
//! CHREODE-DS v1 d=<d> T=<T>
//! SNAP t=<t> n=<n> clones=<0|1>
//! <n rows of d values, 17 significant digits, space separated>
//! ...
//! ```
//!
//! With `clones=1` every row carries two trailing columns: the integer clone
//! id and a fate token (`left_well`, `right_well` or `undecided`). Times are
//! written in shortest round-trip form, so a write/read cycle is lossless.
//! The landscape and seed that produced a file, when known, live in a JSON
//! sidecar next to it (`<file>.provenance.json`).

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Landscape, UNDECIDED_BAND};
use crate::autodiff::Mat;
use crate::seeding::rng_for;

pub const FORMAT_HEADER: &str = "CHREODE-DS";
const FORMAT_VERSION: &str = "v1";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("unsupported dataset version `{0}` (expected {FORMAT_VERSION})")]
    Version(String),
    #[error("line {line}: malformed header: {msg}")]
    MalformedHeader { line: usize, msg: String },
    #[error("line {line}: header declares {expected} {what}, found {found}")]
    CountMismatch {
        line: usize,
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: {msg}")]
    MalformedRow { line: usize, msg: String },
    #[error("file ends before snapshot {snapshot} is complete")]
    Truncated { snapshot: usize },
    #[error("snapshot at t={0} has no cells")]
    EmptySnapshot(f64),
    #[error("invalid dataset: {0}")]
    Invalid(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fate {
    LeftWell,
    RightWell,
    Undecided,
}

impl Fate {
    /// Basin of a state from its first coordinate.
    pub fn of(z1: f64) -> Fate {
        if z1.abs() < UNDECIDED_BAND {
            Fate::Undecided
        } else if z1 < 0.0 {
            Fate::LeftWell
        } else {
            Fate::RightWell
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Fate::LeftWell => "left_well",
            Fate::RightWell => "right_well",
            Fate::Undecided => "undecided",
        }
    }
}

impl FromStr for Fate {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "left_well" => Ok(Fate::LeftWell),
            "right_well" => Ok(Fate::RightWell),
            "undecided" => Ok(Fate::Undecided),
            other => Err(format!("unknown fate `{other}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub t: f64,
    pub cells: Mat,
    pub clone_ids: Option<Vec<u64>>,
    pub fates: Option<Vec<Fate>>,
}

impl Snapshot {
    pub fn new(t: f64, cells: Mat) -> Self {
        Self {
            t,
            cells,
            clone_ids: None,
            fates: None,
        }
    }

    pub fn len(&self) -> usize {
        self.cells.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.nrows() == 0
    }

    pub fn has_clones(&self) -> bool {
        self.clone_ids.is_some()
    }

    /// Rows `idx` of the cells.
    pub fn select(&self, idx: &[usize]) -> Mat {
        self.cells.select(ndarray::Axis(0), idx)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub landscape: Landscape,
    pub seed: u64,
}

/// Train/test row indices of one snapshot.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryDataset {
    pub snapshots: Vec<Snapshot>,
    pub provenance: Option<Provenance>,
}

impl TrajectoryDataset {
    pub fn times(&self) -> Vec<f64> {
        self.snapshots.iter().map(|s| s.t).collect()
    }

    pub fn dim(&self) -> usize {
        self.snapshots.first().map_or(0, |s| s.cells.ncols())
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.snapshots.len() < 2 {
            return Err(DatasetError::Invalid(format!(
                "need at least 2 timepoints, got {}",
                self.snapshots.len()
            )));
        }
        let d = self.dim();
        for (i, s) in self.snapshots.iter().enumerate() {
            if s.is_empty() {
                return Err(DatasetError::EmptySnapshot(s.t));
            }
            if s.cells.ncols() != d {
                return Err(DatasetError::Invalid(format!(
                    "snapshot {i} has dimension {}, expected {d}",
                    s.cells.ncols()
                )));
            }
            if !s.t.is_finite() || (i > 0 && s.t <= self.snapshots[i - 1].t) {
                return Err(DatasetError::Invalid("timepoints must be finite and strictly increasing".into()));
            }
            if s.cells.iter().any(|v| !v.is_finite()) {
                return Err(DatasetError::Invalid(format!("snapshot at t={} has non-finite values", s.t)));
            }
            match (&s.clone_ids, &s.fates) {
                (None, None) => {}
                (Some(c), Some(f)) if c.len() == s.len() && f.len() == s.len() => {}
                _ => {
                    return Err(DatasetError::Invalid(format!(
                        "snapshot at t={} needs both clone ids and fates for every cell, or neither",
                        s.t
                    )))
                }
            }
        }
        Ok(())
    }

    /// Deterministic split of every snapshot; `test_frac` of the rows (at
    /// least one, when the snapshot has two or more) go to test.
    pub fn splits(&self, seed: u64, test_frac: f64) -> Vec<Split> {
        self.snapshots
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let n = s.len();
                let mut idx: Vec<usize> = (0..n).collect();
                idx.shuffle(&mut rng_for(seed, &format!("split {i}")));
                let mut n_test = (test_frac * n as f64).round() as usize;
                if n >= 2 {
                    n_test = n_test.clamp(1, n - 1);
                } else {
                    n_test = 0;
                }
                let mut test = idx[..n_test].to_vec();
                let mut train = idx[n_test..].to_vec();
                test.sort_unstable();
                train.sort_unstable();
                Split { train, test }
            })
            .collect()
    }
}

fn provenance_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".provenance.json");
    PathBuf::from(s)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn format_dataset(ds: &TrajectoryDataset) -> Result<String, DatasetError> {
    ds.validate()?;
    let mut out = String::new();
    let _ = writeln!(out, "{FORMAT_HEADER} {FORMAT_VERSION} d={} T={}", ds.dim(), ds.snapshots.len());
    for s in &ds.snapshots {
        let _ = writeln!(out, "SNAP t={} n={} clones={}", s.t, s.len(), s.has_clones() as u8);
        for (r, row) in s.cells.rows().into_iter().enumerate() {
            let mut first = true;
            for v in row {
                if !first {
                    out.push(' ');
                }
                first = false;
                let _ = write!(out, "{v:.16e}");
            }
            if let (Some(c), Some(f)) = (&s.clone_ids, &s.fates) {
                let _ = write!(out, " {} {}", c[r], f[r].as_str());
            }
            out.push('\n');
        }
    }
    Ok(out)
}

pub fn write_dataset(ds: &TrajectoryDataset, path: &Path) -> Result<(), DatasetError> {
    let text = format_dataset(ds)?;
    std::fs::write(path, text).map_err(io_err(path))?;
    let side = provenance_path(path);
    match &ds.provenance {
        Some(p) => {
            let json = serde_json::to_string_pretty(p).expect("provenance serializes");
            std::fs::write(&side, json).map_err(io_err(&side))?;
        }
        None => {
            if side.exists() {
                std::fs::remove_file(&side).map_err(io_err(&side))?;
            }
        }
    }
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<TrajectoryDataset, DatasetError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let mut ds = parse_dataset(&text)?;
    let side = provenance_path(path);
    if side.exists() {
        let json = std::fs::read_to_string(&side).map_err(io_err(&side))?;
        let p = serde_json::from_str(&json).map_err(|e| DatasetError::Invalid(format!("{}: {e}", side.display())))?;
        ds.provenance = Some(p);
    }
    Ok(ds)
}

/// Parses `key=value` and checks the key.
fn field<'a>(tok: Option<&'a str>, key: &str, line: usize) -> Result<&'a str, DatasetError> {
    let tok = tok.ok_or_else(|| DatasetError::MalformedHeader {
        line,
        msg: format!("missing `{key}=`"),
    })?;
    tok.strip_prefix(key)
        .and_then(|r| r.strip_prefix('='))
        .ok_or_else(|| DatasetError::MalformedHeader {
            line,
            msg: format!("expected `{key}=...`, found `{tok}`"),
        })
}

fn parse_num<T: FromStr>(s: &str, key: &str, line: usize) -> Result<T, DatasetError> {
    s.parse().map_err(|_| DatasetError::MalformedHeader {
        line,
        msg: format!("bad value `{s}` for `{key}`"),
    })
}

pub fn parse_dataset(text: &str) -> Result<TrajectoryDataset, DatasetError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l)).peekable();
    let (ln, header) = lines.next().ok_or(DatasetError::MalformedHeader {
        line: 1,
        msg: "empty file".into(),
    })?;
    let mut toks = header.split_whitespace();
    if toks.next() != Some(FORMAT_HEADER) {
        return Err(DatasetError::MalformedHeader {
            line: ln,
            msg: format!("expected `{FORMAT_HEADER}`"),
        });
    }
    match toks.next() {
        Some(FORMAT_VERSION) => {}
        Some(v) => return Err(DatasetError::Version(v.to_string())),
        None => {
            return Err(DatasetError::MalformedHeader {
                line: ln,
                msg: "missing version".into(),
            })
        }
    }
    let d: usize = parse_num(field(toks.next(), "d", ln)?, "d", ln)?;
    let n_snaps: usize = parse_num(field(toks.next(), "T", ln)?, "T", ln)?;
    if toks.next().is_some() {
        return Err(DatasetError::MalformedHeader {
            line: ln,
            msg: "trailing tokens".into(),
        });
    }

    let mut snapshots = Vec::with_capacity(n_snaps);
    for k in 0..n_snaps {
        let (ln, snap) = lines.next().ok_or(DatasetError::Truncated { snapshot: k })?;
        let mut toks = snap.split_whitespace();
        if toks.next() != Some("SNAP") {
            return Err(DatasetError::MalformedHeader {
                line: ln,
                msg: format!("expected `SNAP` for snapshot {k}"),
            });
        }
        let t: f64 = parse_num(field(toks.next(), "t", ln)?, "t", ln)?;
        let n: usize = parse_num(field(toks.next(), "n", ln)?, "n", ln)?;
        let clones = match field(toks.next(), "clones", ln)? {
            "0" => false,
            "1" => true,
            other => {
                return Err(DatasetError::MalformedHeader {
                    line: ln,
                    msg: format!("clones must be 0 or 1, found `{other}`"),
                })
            }
        };
        let width = d + if clones { 2 } else { 0 };
        let mut data = Vec::with_capacity(n * d);
        let mut ids = Vec::new();
        let mut fates = Vec::new();
        for r in 0..n {
            let Some(&(rl, row)) = lines.peek() else {
                return Err(DatasetError::Truncated { snapshot: k });
            };
            if row.starts_with("SNAP") {
                return Err(DatasetError::CountMismatch {
                    line: ln,
                    what: "cells",
                    expected: n,
                    found: r,
                });
            }
            lines.next();
            let cols: Vec<&str> = row.split_whitespace().collect();
            if cols.len() != width {
                return Err(DatasetError::MalformedRow {
                    line: rl,
                    msg: format!("expected {width} columns, found {}", cols.len()),
                });
            }
            for c in &cols[..d] {
                let v: f64 = c.parse().map_err(|_| DatasetError::MalformedRow {
                    line: rl,
                    msg: format!("bad number `{c}`"),
                })?;
                data.push(v);
            }
            if clones {
                ids.push(cols[d].parse::<u64>().map_err(|_| DatasetError::MalformedRow {
                    line: rl,
                    msg: format!("bad clone id `{}`", cols[d]),
                })?);
                fates.push(cols[d + 1].parse::<Fate>().map_err(|msg| DatasetError::MalformedRow { line: rl, msg })?);
            }
        }
        if let Some(&(_, row)) = lines.peek() {
            if !row.starts_with("SNAP") && !row.trim().is_empty() {
                let extra = lines.clone().take_while(|(_, l)| !l.starts_with("SNAP")).count();
                return Err(DatasetError::CountMismatch {
                    line: ln,
                    what: "cells",
                    expected: n,
                    found: n + extra,
                });
            }
        }
        let cells = Array2::from_shape_vec((n, d), data).expect("row widths checked");
        let mut s = Snapshot::new(t, cells);
        if clones {
            s.clone_ids = Some(ids);
            s.fates = Some(fates);
        }
        snapshots.push(s);
    }
    let rest: usize = lines.filter(|(_, l)| l.starts_with("SNAP")).count();
    if rest > 0 {
        return Err(DatasetError::CountMismatch {
            line: 1,
            what: "snapshots",
            expected: n_snaps,
            found: n_snaps + rest,
        });
    }
    let ds = TrajectoryDataset {
        snapshots,
        provenance: None,
    };
    ds.validate()?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> TrajectoryDataset {
        let a = Snapshot::new(0.0, Array2::from_shape_fn((3, 2), |(i, j)| 0.1 * i as f64 - j as f64 / 3.0));
        let mut b = Snapshot::new(0.5, Array2::from_shape_fn((2, 2), |(i, j)| 1e-300 * (i + j) as f64 + 1.0 / 7.0));
        b.clone_ids = Some(vec![4, 9]);
        b.fates = Some(vec![Fate::LeftWell, Fate::Undecided]);
        TrajectoryDataset {
            snapshots: vec![a, b],
            provenance: None,
        }
    }

    #[test]
    fn text_round_trip() {
        let ds = small();
        let text = format_dataset(&ds).unwrap();
        assert!(text.starts_with("CHREODE-DS v1 d=2 T=2\nSNAP t=0 n=3 clones=0\n"));
        assert_eq!(parse_dataset(&text).unwrap(), ds);
    }

    #[test]
    fn corrupted_count_is_a_mismatch() {
        let text = format_dataset(&small()).unwrap().replace("n=3", "n=4");
        assert!(matches!(parse_dataset(&text), Err(DatasetError::CountMismatch { expected: 4, found: 3, .. })));
        let text = format_dataset(&small()).unwrap().replace("n=3", "n=2");
        assert!(matches!(parse_dataset(&text), Err(DatasetError::CountMismatch { .. })));
    }

    #[test]
    fn version_and_truncation() {
        let text = format_dataset(&small()).unwrap();
        assert!(matches!(parse_dataset(&text.replace("v1", "v2")), Err(DatasetError::Version(v)) if v == "v2"));
        let cut: String = text.lines().take(5).map(|l| format!("{l}\n")).collect();
        assert!(matches!(parse_dataset(&cut), Err(DatasetError::Truncated { snapshot: 1 })));
        let cut: String = text.lines().take(4).map(|l| format!("{l}\n")).collect();
        assert!(matches!(parse_dataset(&cut), Err(DatasetError::Truncated { snapshot: 0 })));
        assert!(matches!(parse_dataset("CHREODE-DS v1 d=x T=2"), Err(DatasetError::MalformedHeader { .. })));
    }

    #[test]
    fn empty_snapshot_refused_at_write() {
        let mut ds = small();
        ds.snapshots[0].cells = Array2::zeros((0, 2));
        assert!(matches!(format_dataset(&ds), Err(DatasetError::EmptySnapshot(_))));
    }

    #[test]
    fn splits_are_deterministic_and_disjoint() {
        let ds = small();
        let a = ds.splits(3, 0.5);
        assert_eq!(a, ds.splits(3, 0.5));
        for (s, sp) in ds.snapshots.iter().zip(&a) {
            let mut all: Vec<usize> = sp.train.iter().chain(&sp.test).copied().collect();
            all.sort_unstable();
            assert_eq!(all, (0..s.len()).collect::<Vec<_>>());
            assert!(!sp.test.is_empty() && !sp.train.is_empty());
        }
    }
}
