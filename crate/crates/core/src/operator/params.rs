use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{Graph, Mat, NodeId};

/// Named parameter arrays in a fixed order.
#[derive(Clone, Debug, PartialEq)]
pub struct Params {
    names: Vec<String>,
    values: Vec<Mat>,
}

impl Params {
    pub(crate) fn new() -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
        }
    }

    pub(crate) fn push(&mut self, name: impl Into<String>, value: Mat) {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.values.push(value);
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Mat] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Mat] {
        &mut self.values
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Mat> {
        self.index(name).map(|i| &self.values[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Mat> {
        self.index(name).map(move |i| &mut self.values[i])
    }

    /// Total number of scalars.
    pub fn count(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    /// Records every parameter as a graph leaf.
    pub fn bind(&self, g: &mut Graph) -> Bound {
        Bound {
            ids: self.values.iter().map(|v| g.variable(v.clone())).collect(),
            names: self.names.clone(),
        }
    }
}

/// Graph leaves for one [`Params`] set, in the same order.
#[derive(Clone, Debug)]
pub struct Bound {
    ids: Vec<NodeId>,
    names: Vec<String>,
}

impl Bound {
    pub fn ids(&self) -> &[NodeId] {
        &self.ids
    }

    pub fn get(&self, name: &str) -> NodeId {
        match self.names.iter().position(|n| n == name) {
            Some(i) => self.ids[i],
            None => panic!("no parameter named {name}"),
        }
    }

    pub fn try_get(&self, name: &str) -> Option<NodeId> {
        self.names.iter().position(|n| n == name).map(|i| self.ids[i])
    }
}

pub(crate) fn normal(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Mat {
    Array2::from_shape_fn((rows, cols), |_| std * rng.sample::<f64, _>(StandardNormal))
}

pub(crate) fn fan_in(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Mat {
    normal(rng, rows, cols, 1.0 / (rows as f64).sqrt())
}
