//! JSON checkpoint container.
//!
//! Field order: `format`, `version`, `config`, `tau_init`, `delta_scale`,
//! `meta`, `params`. Each parameter record is `name`, `rows`, `cols` and the
//! row-major `data`. Floats are written in shortest round-trip form, so a
//! write/read cycle is bit-exact.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig, ModelError};
use crate::time_codes::DeltaScale;

pub const CHECKPOINT_FORMAT: &str = "chreode-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamRecord {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: ModelConfig,
    pub tau_init: f64,
    pub delta_scale: f64,
    #[serde(default)]
    pub meta: BTreeMap<String, String>,
    pub params: Vec<ParamRecord>,
}

impl Checkpoint {
    pub fn from_model(model: &Model, meta: BTreeMap<String, String>) -> Self {
        let params = model
            .params
            .names()
            .iter()
            .zip(model.params.values())
            .map(|(name, v)| ParamRecord {
                name: name.clone(),
                rows: v.nrows(),
                cols: v.ncols(),
                data: v.iter().copied().collect(),
            })
            .collect();
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            config: model.config.clone(),
            tau_init: model.tau_init,
            delta_scale: model.delta_scale.0,
            meta,
            params,
        }
    }

    /// Rebuilds the model, checking every record against the layout the
    /// configuration implies.
    pub fn to_model(&self) -> Result<Model, ModelError> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(ModelError::Checkpoint(format!("unknown format `{}`", self.format)));
        }
        if self.version != CHECKPOINT_VERSION {
            return Err(ModelError::Checkpoint(format!(
                "version {} not supported (expected {CHECKPOINT_VERSION})",
                self.version
            )));
        }
        let mut model = Model::new(self.config.clone(), self.tau_init, 0)?;
        if model.params.len() != self.params.len() {
            return Err(ModelError::Checkpoint(format!(
                "{} parameter arrays, configuration implies {}",
                self.params.len(),
                model.params.len()
            )));
        }
        for (i, rec) in self.params.iter().enumerate() {
            let expected = &model.params.names()[i];
            let shape = model.params.values()[i].dim();
            if &rec.name != expected || (rec.rows, rec.cols) != shape {
                return Err(ModelError::Checkpoint(format!(
                    "record {i} is `{}` {}x{}, expected `{expected}` {}x{}",
                    rec.name, rec.rows, rec.cols, shape.0, shape.1
                )));
            }
            let arr = Array2::from_shape_vec((rec.rows, rec.cols), rec.data.clone())
                .map_err(|e| ModelError::Checkpoint(format!("`{}`: {e}", rec.name)))?;
            model.params.values_mut()[i] = arr;
        }
        model.delta_scale = DeltaScale(self.delta_scale);
        Ok(model)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, ModelError> {
        serde_json::from_str(s).map_err(|e| ModelError::Checkpoint(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_json())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let s = std::fs::read_to_string(path)
            .map_err(|e| ModelError::Checkpoint(format!("{}: {e}", path.display())))?;
        Self::from_json(&s)
    }
}
