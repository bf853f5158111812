//! One-step transition operator
//! `ẑ = z + α(Δ)[−∇_z U(z) + S(z) z + σ(z) ⊙ ε]`.
//!
//! A shared modulated MLP trunk is run twice per step: once conditioned on
//! the Time2Vec code (features `h_U`, feeding the potential and noise
//! heads) and once on the fixed Fourier code (features `h_curl`, feeding the
//! antisymmetric head `S = PQᵀ − QPᵀ`). `S z` is formed as
//! `P(Qᵀz) − Q(Pᵀz)` without building `S`.

mod checkpoint;
mod forward;
mod params;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{DiffError, Mat};
use crate::time_codes::{inverse_softplus, DeltaScale, Time2VecParams, FOURIER_DIM};

pub use checkpoint::{Checkpoint, ParamRecord, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use forward::{ResidualParts, StepNodes, TimeCode};
pub use params::{Bound, Params};

/// Lower bound added to the noise scale.
pub const SIGMA_FLOOR: f64 = 1e-4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("expected {expected} columns, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("noise has {got} rows, expected a multiple of the {batch} input rows")]
    NoiseShape { got: usize, batch: usize },
    #[error("elapsed time must be non-negative and finite, got {0}")]
    NegativeDelta(f64),
    #[error("non-finite value in the {component} term")]
    NonFinite { component: &'static str },
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum VariantKind {
    Selected,
    Unconstrained,
    TiedTime2vec,
    TiedFourier,
}

impl VariantKind {
    pub const ALL: [VariantKind; 4] = [
        VariantKind::Selected,
        VariantKind::Unconstrained,
        VariantKind::TiedTime2vec,
        VariantKind::TiedFourier,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            VariantKind::Selected => "selected",
            VariantKind::Unconstrained => "unconstrained",
            VariantKind::TiedTime2vec => "tied_time2vec",
            VariantKind::TiedFourier => "tied_fourier",
        }
    }

    fn uses_time2vec(self) -> bool {
        self != VariantKind::TiedFourier
    }

    fn uses_fourier(self) -> bool {
        self != VariantKind::TiedTime2vec
    }
}

impl fmt::Display for VariantKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for VariantKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        VariantKind::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| ModelError::Config(format!("unknown variant `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrunkKind {
    #[default]
    ModulatedMlp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub dim: usize,
    pub rank: usize,
    pub width: usize,
    pub depth: usize,
    pub time_width: usize,
    pub periodic_channels: usize,
    pub variant: VariantKind,
    pub trunk: TrunkKind,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dim: 8,
            rank: 16,
            width: 64,
            depth: 3,
            time_width: 32,
            periodic_channels: 8,
            variant: VariantKind::Selected,
            trunk: TrunkKind::ModulatedMlp,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let sizes = [
            ("dim", self.dim),
            ("rank", self.rank),
            ("width", self.width),
            ("time_width", self.time_width),
        ];
        for (name, v) in sizes {
            if v == 0 {
                return Err(ModelError::Config(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

/// Model parameters together with the time normalization they were built
/// for.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: Params,
    pub tau_init: f64,
    pub delta_scale: DeltaScale,
}

/// Parameter count of a model built with `config`.
pub fn parameter_count(config: &ModelConfig) -> Result<usize, ModelError> {
    Ok(Model::new(config.clone(), 1.0, 0)?.params.count())
}

impl Model {
    /// Builds a freshly initialized model. Head output layers start at zero
    /// except the `Q` factor of the antisymmetric head (see [`Model::heads`]).
    pub fn new(config: ModelConfig, tau_init: f64, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        if !(tau_init > 0.0) || !tau_init.is_finite() {
            return Err(ModelError::Config(format!(
                "initial gate constant must be positive, got {tau_init}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = &config;
        let (d, w, tw) = (c.dim, c.width, c.time_width);
        let mut p = Params::new();

        p.push("gate.tau_raw", Mat::from_elem((1, 1), inverse_softplus(tau_init)));
        if c.variant.uses_time2vec() {
            let ch = c.periodic_channels + 1;
            let mut t2v = Time2VecParams::zeros(c.periodic_channels);
            t2v.omega_raw[0] = 1.0;
            for i in 1..ch {
                t2v.omega_raw[i] = rng.random_range(-1.5..1.5);
                t2v.phase[i] = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            }
            p.push("t2v.omega_raw", Mat::from_shape_vec((1, ch), t2v.omega_raw).unwrap());
            p.push("t2v.phase", Mat::from_shape_vec((1, ch), t2v.phase).unwrap());
            p.push("embed.t2v.w", params::fan_in(&mut rng, ch, tw));
            p.push("embed.t2v.b", Mat::zeros((1, tw)));
        }
        if c.variant.uses_fourier() {
            p.push("embed.fourier.w", params::fan_in(&mut rng, FOURIER_DIM, tw));
            p.push("embed.fourier.b", Mat::zeros((1, tw)));
        }

        p.push("trunk.in.w", params::fan_in(&mut rng, d, w));
        if c.variant == VariantKind::Unconstrained {
            p.push("trunk.in_noise.w", params::fan_in(&mut rng, d, w));
        }
        p.push("trunk.in.b", Mat::zeros((1, w)));
        for l in 0..c.depth {
            p.push(format!("trunk.l{l}.w"), params::fan_in(&mut rng, w, w));
            p.push(format!("trunk.l{l}.b"), Mat::zeros((1, w)));
            p.push(format!("trunk.l{l}.gamma.w"), Mat::zeros((tw, w)));
            p.push(format!("trunk.l{l}.gamma.b"), Mat::zeros((1, w)));
            p.push(format!("trunk.l{l}.beta.w"), Mat::zeros((tw, w)));
            p.push(format!("trunk.l{l}.beta.b"), Mat::zeros((1, w)));
        }

        if c.variant == VariantKind::Unconstrained {
            let hidden = unconstrained_hidden(c)?;
            p.push("head.r.hidden.w", params::fan_in(&mut rng, w, hidden));
            p.push("head.r.hidden.b", Mat::zeros((1, hidden)));
            p.push("head.r.out.w", Mat::zeros((hidden, d)));
            p.push("head.r.out.b", Mat::zeros((1, d)));
        } else {
            Self::heads(&mut p, &mut rng, c);
        }

        Ok(Self {
            config,
            params: p,
            tau_init,
            delta_scale: DeltaScale::from_tau_init(tau_init),
        })
    }

    /// Potential, antisymmetric and noise heads. With both `P` and `Q` at
    /// zero the bilinear head has a vanishing gradient in either factor, so
    /// `Q` starts random and `P` at zero: `S = 0` at initialization but it
    /// can move.
    fn heads(p: &mut Params, rng: &mut ChaCha8Rng, c: &ModelConfig) {
        let (d, w, dr) = (c.dim, c.width, c.dim * c.rank);
        p.push("head.u.w", Mat::zeros((w, 1)));
        p.push("head.u.b", Mat::zeros((1, 1)));
        p.push("head.p.w", Mat::zeros((w, dr)));
        p.push("head.p.b", Mat::zeros((1, dr)));
        p.push("head.q.w", params::fan_in(rng, w, dr));
        p.push("head.q.b", Mat::zeros((1, dr)));
        p.push("head.sigma.w", Mat::zeros((w, d)));
        p.push("head.sigma.b", Mat::zeros((1, d)));
    }

    pub fn variant(&self) -> VariantKind {
        self.config.variant
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn tau(&self) -> f64 {
        crate::autodiff::softplus_scalar(self.params.get("gate.tau_raw").unwrap()[[0, 0]])
    }

    /// A copy whose deterministic and noise heads are all zero. For the
    /// unconstrained variant this is the identity map.
    pub fn zero_heads(&self) -> Self {
        let mut m = self.clone();
        let names: Vec<String> = m.params.names().to_vec();
        for n in names.iter().filter(|n| n.starts_with("head.")) {
            m.params.get_mut(n).unwrap().fill(0.0);
        }
        m
    }

    /// Perturbs every parameter in place by `N(0, scale²)`; used to leave
    /// the zero-initialized start in tests and fuzzing.
    pub fn randomize(&mut self, seed: u64, scale: f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in self.params.values_mut() {
            let noise = params::normal(&mut rng, v.nrows(), v.ncols(), scale);
            *v += &noise;
        }
    }
}

fn selected_count(c: &ModelConfig) -> usize {
    let (d, w, tw, dr) = (c.dim, c.width, c.time_width, c.dim * c.rank);
    let ch = c.periodic_channels + 1;
    let time = 1 + 2 * ch + (ch + 1) * tw + (FOURIER_DIM + 1) * tw;
    let trunk = (d + 1) * w + c.depth * ((w + 1) * w + 2 * (tw + 1) * w);
    let heads = (w + 1) + 2 * (w + 1) * dr + (w + 1) * d;
    time + trunk + heads
}

/// Hidden width of the unconstrained residual head, chosen so the total
/// parameter count matches the selected variant.
fn unconstrained_hidden(c: &ModelConfig) -> Result<usize, ModelError> {
    let target = selected_count(c) as f64;
    let (d, w, tw) = (c.dim, c.width, c.time_width);
    let ch = c.periodic_channels + 1;
    let time = 1 + 2 * ch + (ch + 1) * tw + (FOURIER_DIM + 1) * tw;
    let trunk = (2 * d + 1) * w + c.depth * ((w + 1) * w + 2 * (tw + 1) * w);
    let base = (time + trunk + d) as f64;
    let per_hidden = (w + 1 + d) as f64;
    let hidden = ((target - base) / per_hidden).round().max(1.0) as usize;
    Ok(hidden)
}
