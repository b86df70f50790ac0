//! Named parameter tensors.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::Rng;

use crate::error::{LearnError, Result};

pub type Mat = Array2<f64>;

/// Parameters keyed by a stable dotted path; iteration order is the sorted path order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Mat>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, path: impl Into<String>, value: Mat) {
        self.params.insert(path.into(), value);
    }

    pub fn get(&self, path: &str) -> Option<&Mat> {
        self.params.get(path)
    }

    pub fn get_mut(&mut self, path: &str) -> Option<&mut Mat> {
        self.params.get_mut(path)
    }

    pub fn require(&self, path: &str) -> Result<&Mat> {
        self.params
            .get(path)
            .ok_or_else(|| LearnError::Shape(format!("missing parameter {path}")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Mat)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Mat)> {
        self.params.iter_mut()
    }

    pub fn paths(&self) -> Vec<String> {
        self.params.keys().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.values().map(|m| m.len()).sum()
    }

    /// Parameters whose path starts with `prefix`.
    pub fn subset(&self, prefix: &str) -> ParamStore {
        ParamStore {
            params: self
                .params
                .iter()
                .filter(|(k, _)| k.starts_with(prefix))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    pub fn check_finite(&self) -> Result<()> {
        for (path, m) in &self.params {
            if m.iter().any(|v| !v.is_finite()) {
                return Err(LearnError::NonFinite(format!("parameter {path}")));
            }
        }
        Ok(())
    }

    pub fn same_layout(&self, other: &ParamStore) -> Result<()> {
        if self.params.len() != other.params.len() {
            return Err(LearnError::Shape(format!(
                "parameter sets differ in size: {} vs {}",
                self.params.len(),
                other.params.len()
            )));
        }
        for ((pa, a), (pb, b)) in self.params.iter().zip(&other.params) {
            if pa != pb || a.dim() != b.dim() {
                return Err(LearnError::Shape(format!("parameter {pa} {:?} vs {pb} {:?}", a.dim(), b.dim())));
            }
        }
        Ok(())
    }

    /// FNV-1a over paths, shapes and value bits.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        };
        for (path, m) in &self.params {
            eat(path.as_bytes());
            eat(&(m.nrows() as u64).to_le_bytes());
            eat(&(m.ncols() as u64).to_le_bytes());
            for v in m.iter() {
                eat(&v.to_bits().to_le_bytes());
            }
        }
        h
    }
}

/// Uniform Glorot initialization.
pub fn glorot(rng: &mut impl Rng, fan_in: usize, fan_out: usize) -> Mat {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Mat::from_shape_fn((fan_in, fan_out), |_| rng.random_range(-limit..limit))
}

pub fn normal_init(rng: &mut impl Rng, rows: usize, cols: usize, std: f64) -> Mat {
    use rand_distr::{Distribution, Normal};
    let n = Normal::new(0.0, std).expect("positive std");
    Mat::from_shape_fn((rows, cols), |_| n.sample(rng))
}
