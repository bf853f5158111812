//! Train-only standardization with a provenance tag on every set, so a
//! metric can refuse raw coordinates and a set cannot be standardized twice.

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::autodiff::Mat;

/// Added to the per-dimension spread so constant dimensions stay finite.
pub const SPREAD_GUARD: f64 = 1e-6;

/// Coordinate frame of a [`Population`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Frame {
    Raw,
    /// Standardized with the stats whose fingerprint is stored.
    Standardized(u64),
}

/// A set of cells together with the frame its coordinates live in.
#[derive(Clone, Debug, PartialEq)]
pub struct Population {
    cells: Mat,
    frame: Frame,
}

impl Population {
    pub fn raw(cells: Mat) -> Self {
        Self { cells, frame: Frame::Raw }
    }

    pub fn cells(&self) -> &Mat {
        &self.cells
    }

    pub fn frame(&self) -> Frame {
        self.frame
    }

    pub fn len(&self) -> usize {
        self.cells.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.nrows() == 0
    }
}

/// Per-dimension mean and standard deviation of a training set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StandardizationStats {
    pub mean: Array1<f64>,
    pub std: Array1<f64>,
}

impl StandardizationStats {
    /// Stats of `train` (population standard deviation).
    pub fn fit(train: &Mat) -> Result<Self, EvalError> {
        if train.nrows() == 0 {
            return Err(EvalError::EmptySet("standardization train"));
        }
        let mean = train.mean_axis(ndarray::Axis(0)).expect("non-empty");
        let std = train.std_axis(ndarray::Axis(0), 0.0);
        Ok(Self { mean, std })
    }

    /// Identifies these stats in [`Frame::Standardized`].
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for v in self.mean.iter().chain(self.std.iter()) {
            for b in v.to_bits().to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }

    /// `(z − mean) / (std + 1e-6)` on a raw population.
    pub fn apply(&self, set: &Population) -> Result<Population, EvalError> {
        if let Frame::Standardized(_) = set.frame {
            return Err(EvalError::AlreadyStandardized);
        }
        if set.cells.ncols() != self.mean.len() {
            return Err(EvalError::DimMismatch {
                expected: self.mean.len(),
                got: set.cells.ncols(),
            });
        }
        let denom = self.std.mapv(|s| s + SPREAD_GUARD);
        let cells = (&set.cells - &self.mean) / &denom;
        Ok(Population {
            cells,
            frame: Frame::Standardized(self.fingerprint()),
        })
    }

    /// Fits on `train` and standardizes it together with `others`.
    pub fn standardize(train: &Mat, others: &[&Mat]) -> Result<(Self, Population, Vec<Population>), EvalError> {
        let stats = Self::fit(train)?;
        let t = stats.apply(&Population::raw(train.clone()))?;
        let rest = others
            .iter()
            .map(|m| stats.apply(&Population::raw((*m).clone())))
            .collect::<Result<Vec<_>, _>>()?;
        Ok((stats, t, rest))
    }
}

/// Checks that every set is standardized with the same stats.
pub(crate) fn common_frame(sets: &[&Population]) -> Result<u64, EvalError> {
    let mut id = None;
    for s in sets {
        match s.frame {
            Frame::Raw => return Err(EvalError::Unstandardized),
            Frame::Standardized(f) => match id {
                None => id = Some(f),
                Some(g) if g != f => return Err(EvalError::FrameMismatch),
                _ => {}
            },
        }
    }
    id.ok_or(EvalError::EmptySet("metric input"))
}
