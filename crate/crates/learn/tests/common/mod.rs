#![allow(dead_code)]

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use splatsem_core::augment::CropBand;
use splatsem_core::{GaussianPrimitive, GaussianScene, SemanticFeatureField};
use splatsem_learn::config::RunConfig;
use splatsem_learn::pretrain::TrainScene;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn unit_quat(r: &mut impl Rng) -> [f32; 4] {
    loop {
        let q: [f64; 4] = [0; 4].map(|_| r.random_range(-1.0..1.0));
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.1 && n < 1.0 {
            return q.map(|v| (v / n) as f32);
        }
    }
}

pub fn unit(r: &mut impl Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| r.random_range(-1.0..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-3 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// `side`³ Gaussians on a lattice of spacing 0.1 with moderate colors and small scales.
pub fn lattice_scene(side: usize, seed: u64) -> GaussianScene {
    let mut r = rng(seed);
    let mut prims = Vec::new();
    for x in 0..side {
        for y in 0..side {
            for z in 0..side {
                let c = [x, y, z].map(|v| v as f32 * 0.1 + 0.013);
                let rgb = [0; 3].map(|_| r.random_range(0.3..0.7));
                let g = GaussianPrimitive::new(
                    c,
                    [0; 3].map(|_| r.random_range(0.01..0.05f32)),
                    unit_quat(&mut r),
                    r.random_range(0.5..0.95),
                )
                .with_rgb(rgb);
                prims.push(g);
            }
        }
    }
    GaussianScene::new("lattice", prims)
}

pub fn field_from_rows(scene_id: &str, rows: &[Vec<f64>]) -> SemanticFeatureField {
    let d = rows[0].len();
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    SemanticFeatureField::from_unnormalized(scene_id, &Array2::from_shape_vec((rows.len(), d), flat).unwrap())
}

pub fn random_field(n: usize, d: usize, seed: u64) -> SemanticFeatureField {
    let mut r = rng(seed);
    let rows: Vec<Vec<f64>> = (0..n).map(|_| unit(&mut r, d)).collect();
    field_from_rows("lattice", &rows)
}

/// Small backbone, full-scene crops, no augmentation.
pub fn small_config(out_dim: usize, epochs: u64) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.seed = 7;
    cfg.model.embed_dim = 48;
    cfg.model.embed_hidden = 64;
    cfg.model.out_dim = out_dim;
    cfg.model.head_hidden = 64;
    cfg.model.pos_scale = 1.0;
    cfg.schedule.epochs = epochs;
    cfg.schedule.checkpoint_every = 0;
    cfg.augment.enabled = false;
    cfg.crop.grid_size = 0.05;
    cfg.crop.global = CropBand { ratio: [1.0, 1.0], cap: 4096 };
    cfg.crop.local = CropBand { ratio: [0.5, 0.5], cap: 64 };
    cfg
}

pub fn train_scene(scene: GaussianScene, features: SemanticFeatureField) -> TrainScene {
    let mut ts = TrainScene::new(scene);
    ts.features = Some(features);
    ts
}
