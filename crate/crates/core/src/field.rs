//! Per-Gaussian feature fields and the `SSFF` container.

use std::io::Cursor;
use std::path::Path;

use ndarray::{Array2, ArrayView1};

use crate::binio::*;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"SSFF";
const VERSION: u32 = 1;

/// Feature vectors aligned 1:1 with a scene's primitives.
///
/// Rows of never-observed Gaussians are zero and carry the `unlabeled` flag.
/// Lifted and predicted fields hold unit rows; compressed (autoencoder) fields
/// do not, so unit norm is checked by [`SemanticFeatureField::check_unit_rows`]
/// rather than on construction.
#[derive(Clone, Debug, PartialEq)]
pub struct SemanticFeatureField {
    pub scene_id: String,
    pub features: Array2<f32>,
    pub unlabeled: Vec<bool>,
}

impl SemanticFeatureField {
    pub fn new(scene_id: impl Into<String>, features: Array2<f32>, unlabeled: Vec<bool>) -> Result<Self> {
        if features.nrows() != unlabeled.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} feature rows but {} flags",
                features.nrows(),
                unlabeled.len()
            )));
        }
        for (i, row) in features.outer_iter().enumerate() {
            if let Some(v) = row.iter().find(|v| !v.is_finite()) {
                return Err(Error::Validation(format!("non-finite feature {v} in row {i}")));
            }
            if unlabeled[i] && row.iter().any(|&v| v != 0.0) {
                return Err(Error::Validation(format!("unlabeled row {i} is not zero")));
            }
        }
        Ok(Self {
            scene_id: scene_id.into(),
            features,
            unlabeled,
        })
    }

    /// Builds a field from arbitrary rows, L2-normalizing each; zero rows become unlabeled.
    pub fn from_unnormalized(scene_id: impl Into<String>, rows: &Array2<f64>) -> Self {
        let (n, d) = rows.dim();
        let mut features = Array2::<f32>::zeros((n, d));
        let mut unlabeled = vec![false; n];
        for (i, row) in rows.outer_iter().enumerate() {
            let norm = row.dot(&row).sqrt();
            if norm > 0.0 && norm.is_finite() {
                for (o, &v) in features.row_mut(i).iter_mut().zip(row.iter()) {
                    *o = (v / norm) as f32;
                }
            } else {
                unlabeled[i] = true;
            }
        }
        Self {
            scene_id: scene_id.into(),
            features,
            unlabeled,
        }
    }

    pub fn len(&self) -> usize {
        self.unlabeled.len()
    }

    pub fn is_empty(&self) -> bool {
        self.unlabeled.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f32> {
        self.features.row(i)
    }

    pub fn labeled_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| !self.unlabeled[i]).collect()
    }

    pub fn check_unit_rows(&self, tol: f64) -> Result<()> {
        for (i, row) in self.features.outer_iter().enumerate() {
            if self.unlabeled[i] {
                continue;
            }
            let n = row.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
            if (n - 1.0).abs() > tol {
                return Err(Error::Validation(format!("row {i} has norm {n}")));
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let (n, d) = self.features.dim();
        let mut out = Vec::with_capacity(21 + n + n * d * 4);
        write_all(&mut out, MAGIC).unwrap();
        write_u32(&mut out, VERSION).unwrap();
        write_u64(&mut out, n as u64).unwrap();
        write_u32(&mut out, d as u32).unwrap();
        out.extend(self.unlabeled.iter().map(|&u| u as u8));
        write_f32s(&mut out, self.features.iter().copied()).unwrap();
        out
    }

    pub fn from_bytes(bytes: &[u8], scene_id: &str) -> Result<Self> {
        let mut r = Cursor::new(bytes);
        read_magic(&mut r, MAGIC)?;
        let version = read_u32(&mut r, "version")?;
        if version != VERSION {
            return Err(Error::Parse(format!("unsupported SSFF version {version}")));
        }
        let n = read_u64(&mut r, "row count")? as usize;
        let d = read_u32(&mut r, "dimension")? as usize;
        let mut unlabeled = Vec::with_capacity(n);
        for _ in 0..n {
            match read_u8(&mut r, "unlabeled flags")? {
                0 => unlabeled.push(false),
                1 => unlabeled.push(true),
                f => return Err(Error::Parse(format!("invalid unlabeled flag {f}"))),
            }
        }
        let data = read_f32_vec(&mut r, n * d, "feature rows")?;
        let features = Array2::from_shape_vec((n, d), data).expect("shape matches length");
        Self::new(scene_id, features, unlabeled)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Self::from_bytes(&read_file(path)?, &id)
    }
}
