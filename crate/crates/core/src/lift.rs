//! Optimization-free lifting of 2D feature maps onto Gaussians.

use ndarray::Array2;

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::field::SemanticFeatureField;
use crate::fusion::FeatureMap2D;
use crate::raster::{composite, BlendContribution};
use crate::scene::GaussianScene;

/// One view's blend weights and the feature map painted for it.
pub struct LiftInput<'a> {
    pub width: u32,
    pub height: u32,
    pub contributions: &'a [BlendContribution],
    pub feature_map: &'a FeatureMap2D,
}

/// Running weighted sums; views can be folded in one at a time.
#[derive(Clone, Debug)]
pub struct LiftAccumulator {
    sums: Array2<f64>,
    weight: Vec<f64>,
    dim: Option<usize>,
}

impl LiftAccumulator {
    pub fn new(n_primitives: usize) -> Self {
        Self {
            sums: Array2::zeros((n_primitives, 0)),
            weight: vec![0.0; n_primitives],
            dim: None,
        }
    }

    pub fn add_view(&mut self, view: &LiftInput<'_>) -> Result<()> {
        let map = view.feature_map;
        if map.width != view.width || map.height != view.height {
            return Err(Error::DimensionMismatch(format!(
                "feature map is {}x{} but the camera renders {}x{}",
                map.height, map.width, view.height, view.width
            )));
        }
        match self.dim {
            None => {
                self.dim = Some(map.dim);
                self.sums = Array2::zeros((self.weight.len(), map.dim));
            }
            Some(d) if d != map.dim => {
                return Err(Error::DimensionMismatch(format!("feature dim {} differs from earlier views ({d})", map.dim)));
            }
            _ => {}
        }
        let n = self.weight.len();
        for c in view.contributions {
            let i = c.primitive as usize;
            if i >= n {
                return Err(Error::Validation(format!("contribution references primitive {i} of {n}")));
            }
            if let Some(f) = map.pixel(c.row, c.col) {
                let mut row = self.sums.row_mut(i);
                for (acc, &v) in row.iter_mut().zip(f) {
                    *acc += c.weight * v as f64;
                }
                self.weight[i] += c.weight;
            }
        }
        Ok(())
    }

    /// Normalizes the sums; Gaussians that never hit a valid pixel come out unlabeled.
    pub fn finish(self, scene_id: &str) -> SemanticFeatureField {
        let mut sums = self.sums;
        for (i, w) in self.weight.iter().enumerate() {
            if *w == 0.0 {
                sums.row_mut(i).fill(0.0);
            }
        }
        SemanticFeatureField::from_unnormalized(scene_id, &sums)
    }
}

pub fn lift_features(scene_id: &str, n_primitives: usize, views: &[LiftInput<'_>]) -> Result<SemanticFeatureField> {
    let mut acc = LiftAccumulator::new(n_primitives);
    for v in views {
        acc.add_view(v)?;
    }
    Ok(acc.finish(scene_id))
}

/// Renders each camera and lifts its map without holding more than one view's contributions.
pub fn lift_scene(
    scene: &GaussianScene,
    views: &[(Camera, FeatureMap2D)],
    max_contribs_per_pixel: usize,
) -> Result<SemanticFeatureField> {
    let mut acc = LiftAccumulator::new(scene.len());
    for (cam, map) in views {
        let out = composite(scene, cam, max_contribs_per_pixel)?;
        acc.add_view(&LiftInput {
            width: cam.width,
            height: cam.height,
            contributions: &out.contributions,
            feature_map: map,
        })?;
    }
    Ok(acc.finish(&scene.scene_id))
}
