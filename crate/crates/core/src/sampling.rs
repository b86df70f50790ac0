//! Grid sampling, neighborhood crops and token masking.

use std::collections::HashMap;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{AugLogEntry, AugmentationSpec};
use crate::error::{Error, Result};
use crate::scene::GaussianScene;
use crate::spatial::KdTree;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ViewKind {
    Global,
    Local,
    /// Whole-scene subsets that are not neighborhood crops (grid samples).
    Full,
}

/// A subset of primitive indices plus the transforms that produced it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CropView {
    pub indices: Vec<usize>,
    pub kind: ViewKind,
    pub augmentation_log: Vec<AugLogEntry>,
}

impl CropView {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn validate(&self, scene_len: usize) -> Result<()> {
        let mut seen = vec![false; scene_len];
        for &i in &self.indices {
            if i >= scene_len {
                return Err(Error::Validation(format!("view index {i} out of bounds ({scene_len})")));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::Validation(format!("duplicate view index {i}")));
            }
        }
        Ok(())
    }
}

pub(crate) fn voxel_key(c: &[f64; 3], size: f64) -> [i64; 3] {
    c.map(|v| (v / size).floor() as i64)
}

/// Keeps the smallest-position member of every occupied voxel; positions are returned ascending.
pub(crate) fn grid_sample_positions(centers: &[[f64; 3]], grid_size: f64) -> Vec<usize> {
    let mut first: HashMap<[i64; 3], usize> = HashMap::with_capacity(centers.len());
    for (i, c) in centers.iter().enumerate() {
        first.entry(voxel_key(c, grid_size)).or_insert(i);
    }
    let mut kept: Vec<usize> = first.into_values().collect();
    kept.sort_unstable();
    kept
}

/// One representative per occupied voxel of side `grid_size` (smallest index wins).
pub fn grid_sample(scene: &GaussianScene, grid_size: f64) -> Result<CropView> {
    if !(grid_size > 0.0) || !grid_size.is_finite() {
        return Err(Error::Validation(format!("grid size must be positive, got {grid_size}")));
    }
    let indices = grid_sample_positions(&scene.centers(), grid_size);
    Ok(CropView {
        indices,
        kind: ViewKind::Full,
        augmentation_log: vec![AugLogEntry::new("grid_sample").with("grid_size", grid_size)],
    })
}

/// The `k` nearest neighbors (center to center) of a random anchor primitive.
pub fn sample_crop(scene: &GaussianScene, kind: ViewKind, spec: &AugmentationSpec, rng_seed: u64) -> Result<CropView> {
    if scene.is_empty() {
        return Err(Error::Validation("cannot crop an empty scene".into()));
    }
    let band = match kind {
        ViewKind::Global => &spec.global_crop,
        ViewKind::Local => &spec.local_crop,
        ViewKind::Full => {
            return Ok(CropView {
                indices: (0..scene.len()).collect(),
                kind,
                augmentation_log: Vec::new(),
            })
        }
    };
    band.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let ratio = if band.ratio[0] < band.ratio[1] {
        rng.random_range(band.ratio[0]..=band.ratio[1])
    } else {
        band.ratio[0]
    };
    let requested = ((ratio * band.cap as f64).round() as usize).max(1);
    let anchor = rng.random_range(0..scene.len());

    let mut log = vec![AugLogEntry::new("random_crop")
        .with("ratio", ratio)
        .with("k", requested as f64)
        .with("anchor", anchor as f64)];
    let k = if requested > scene.len() {
        log.push(
            AugLogEntry::new("crop_clamped")
                .with("requested", requested as f64)
                .with("k", scene.len() as f64),
        );
        scene.len()
    } else {
        requested
    };

    let centers = scene.centers();
    let mut indices: Vec<usize> = if k == scene.len() {
        (0..k).collect()
    } else {
        KdTree::new(&centers)
            .nearest(centers[anchor], k)
            .into_iter()
            .map(|(i, _)| i)
            .collect()
    };
    indices.sort_unstable();
    Ok(CropView {
        indices,
        kind,
        augmentation_log: log,
    })
}

/// Boolean mask over `n` token positions with exactly `round(n * ratio)` set.
pub fn mask_positions(n: usize, ratio: f64, rng_seed: u64) -> Result<Vec<bool>> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::Validation(format!("mask ratio {ratio} outside [0, 1]")));
    }
    let count = ((n as f64) * ratio).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut mask = vec![false; n];
    for i in sample(&mut rng, n, count.min(n)).into_iter() {
        mask[i] = true;
    }
    Ok(mask)
}

/// Splits a view's indices into (masked, kept) sets.
pub fn mask_tokens(view: &CropView, ratio: f64, rng_seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let mask = mask_positions(view.len(), ratio, rng_seed)?;
    let (mut masked, mut kept) = (Vec::new(), Vec::new());
    for (&idx, &m) in view.indices.iter().zip(&mask) {
        if m {
            masked.push(idx);
        } else {
            kept.push(idx);
        }
    }
    Ok((masked, kept))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::CropBand;
    use crate::scene::GaussianPrimitive;

    fn scene_at(points: &[[f32; 3]]) -> GaussianScene {
        GaussianScene::new(
            "t",
            points
                .iter()
                .map(|&c| GaussianPrimitive::new(c, [0.01; 3], [1.0, 0.0, 0.0, 0.0], 0.5))
                .collect(),
        )
    }

    #[test]
    fn grid_same_voxel_keeps_first() {
        let s = scene_at(&[[0.0, 0.0, 0.0], [0.001, 0.0, 0.0]]);
        assert_eq!(grid_sample(&s, 0.02).unwrap().indices, vec![0]);
    }

    #[test]
    fn grid_distinct_voxels() {
        let s = scene_at(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
        assert_eq!(grid_sample(&s, 0.02).unwrap().indices, vec![0, 1]);
    }

    #[test]
    fn grid_rejects_bad_size_and_accepts_empty() {
        assert!(grid_sample(&scene_at(&[]), 0.0).is_err());
        assert!(grid_sample(&scene_at(&[]), 0.1).unwrap().is_empty());
    }

    #[test]
    fn crop_full_band_returns_all() {
        let pts: Vec<[f32; 3]> = (0..10).map(|i| [i as f32, 0.0, 0.0]).collect();
        let s = scene_at(&pts);
        let mut spec = AugmentationSpec::default();
        spec.global_crop = CropBand { ratio: [1.0, 1.0], cap: 10 };
        let v = sample_crop(&s, ViewKind::Global, &spec, 9).unwrap();
        assert_eq!(v.indices, (0..10).collect::<Vec<_>>());
        v.validate(10).unwrap();
    }

    #[test]
    fn crop_colinear_matches_distance_sort() {
        let s = scene_at(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [3.0, 0.0, 0.0]]);
        let mut spec = AugmentationSpec::default();
        spec.local_crop = CropBand { ratio: [1.0, 1.0], cap: 2 };
        for seed in 0..20 {
            let v = sample_crop(&s, ViewKind::Local, &spec, seed).unwrap();
            let anchor = v.augmentation_log[0].get("anchor").unwrap() as usize;
            let c = s.centers();
            let mut order: Vec<usize> = (0..3).collect();
            order.sort_by(|&a, &b| {
                let da = (c[a][0] - c[anchor][0]).abs();
                let db = (c[b][0] - c[anchor][0]).abs();
                da.total_cmp(&db).then(a.cmp(&b))
            });
            let mut want = order[..2].to_vec();
            want.sort();
            assert_eq!(v.indices, want);
        }
    }

    #[test]
    fn crop_clamps_and_logs() {
        let s = scene_at(&[[0.0; 3], [1.0, 0.0, 0.0]]);
        let mut spec = AugmentationSpec::default();
        spec.global_crop = CropBand { ratio: [1.0, 1.0], cap: 5 };
        let v = sample_crop(&s, ViewKind::Global, &spec, 1).unwrap();
        assert_eq!(v.len(), 2);
        assert!(v.augmentation_log.iter().any(|e| e.name == "crop_clamped"));
    }

    #[test]
    fn crop_deterministic() {
        let pts: Vec<[f32; 3]> = (0..50).map(|i| [(i % 7) as f32, (i / 7) as f32, 0.0]).collect();
        let s = scene_at(&pts);
        let spec = AugmentationSpec::default();
        assert_eq!(
            sample_crop(&s, ViewKind::Local, &spec, 42).unwrap(),
            sample_crop(&s, ViewKind::Local, &spec, 42).unwrap()
        );
    }

    #[test]
    fn mask_counts() {
        let view = CropView {
            indices: (100..110).collect(),
            kind: ViewKind::Global,
            augmentation_log: vec![],
        };
        assert!(mask_tokens(&view, 0.0, 1).unwrap().0.is_empty());
        assert!(mask_tokens(&view, 1.0, 1).unwrap().1.is_empty());
        let (m, k) = mask_tokens(&view, 0.6, 1).unwrap();
        assert_eq!((m.len(), k.len()), (6, 4));
        assert_eq!(mask_tokens(&view, 0.6, 1).unwrap().0, m);
        assert!(mask_tokens(&view, 1.5, 1).is_err());
    }
}
