#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use splatsem_core::{GaussianPrimitive, GaussianScene};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_unit_quat(r: &mut impl Rng) -> [f32; 4] {
    loop {
        let q: [f64; 4] = [0; 4].map(|_| r.random_range(-1.0..1.0));
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.1 && n < 1.0 {
            return q.map(|v| (v / n) as f32);
        }
    }
}

pub fn random_primitive(r: &mut impl Rng, extent: f32) -> GaussianPrimitive {
    let mut g = GaussianPrimitive::new(
        [0; 3].map(|_| r.random_range(-extent..extent)),
        [0; 3].map(|_| r.random_range(0.01..0.2f32)),
        random_unit_quat(r),
        r.random_range(0.0..1.0),
    );
    for c in g.color_sh.iter_mut() {
        *c = r.random_range(-1.0..1.0);
    }
    g
}

pub fn random_scene(seed: u64, n: usize, extent: f32) -> GaussianScene {
    let mut r = rng(seed);
    GaussianScene::new("random", (0..n).map(|_| random_primitive(&mut r, extent)).collect())
}

pub fn random_unit(r: &mut impl Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| r.random_range(-1.0..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-3 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}
