mod common;

use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use rand::Rng;
use splatsem_core::augment::{AugmentationSpec, CropBand};
use splatsem_core::sampling::{grid_sample, mask_tokens, sample_crop, CropView, ViewKind};
use splatsem_core::{GaussianPrimitive, GaussianScene};

fn points_scene(points: &[[f32; 3]]) -> GaussianScene {
    GaussianScene::new(
        "pts",
        points.iter().map(|&c| GaussianPrimitive::new(c, [0.01; 3], [1.0, 0.0, 0.0, 0.0], 0.5)).collect(),
    )
}

/// Voxel -> smallest index, using floor(c / size) keys built independently.
fn voxel_oracle(points: &[[f32; 3]], size: f64) -> BTreeMap<(i64, i64, i64), usize> {
    let mut m = BTreeMap::new();
    for (i, p) in points.iter().enumerate() {
        let k = (
            (p[0] as f64 / size).floor() as i64,
            (p[1] as f64 / size).floor() as i64,
            (p[2] as f64 / size).floor() as i64,
        );
        m.entry(k).and_modify(|j: &mut usize| *j = (*j).min(i)).or_insert(i);
    }
    m
}

#[test]
fn grid_sample_matches_voxel_hash_oracle() {
    let mut r = common::rng(3);
    let pts: Vec<[f32; 3]> = (0..1000).map(|_| [0; 3].map(|_| r.random_range(0.0..1.0f32))).collect();
    let view = grid_sample(&points_scene(&pts), 0.05).unwrap();
    let oracle = voxel_oracle(&pts, 0.05);
    assert_eq!(view.len(), oracle.len());
    let expect: BTreeSet<usize> = oracle.values().copied().collect();
    assert_eq!(view.indices, expect.into_iter().collect::<Vec<_>>());
}

fn crop_spec(band: [f64; 2], cap: usize) -> AugmentationSpec {
    AugmentationSpec {
        global_crop: CropBand { ratio: band, cap },
        local_crop: CropBand { ratio: band, cap },
        ..AugmentationSpec::with_steps(vec![])
    }
}

#[test]
fn crop_is_k_nearest_to_anchor() {
    let scene = common::random_scene(11, 300, 1.0);
    let spec = crop_spec([0.1, 0.4], 300);
    for seed in 0..20 {
        let view = sample_crop(&scene, ViewKind::Local, &spec, seed).unwrap();
        let anchor = view.augmentation_log[0].get("anchor").unwrap() as usize;
        let k = view.len();
        assert!((30..=120).contains(&k), "k = {k}");
        let a = scene.primitives[anchor].center_f64();
        let mut order: Vec<(f64, usize)> = scene
            .primitives
            .iter()
            .enumerate()
            .map(|(i, g)| {
                let c = g.center_f64();
                ((c[0] - a[0]).powi(2) + (c[1] - a[1]).powi(2) + (c[2] - a[2]).powi(2), i)
            })
            .collect();
        order.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
        let mut expect: Vec<usize> = order[..k].iter().map(|&(_, i)| i).collect();
        expect.sort_unstable();
        assert_eq!(view.indices, expect);
        view.validate(scene.len()).unwrap();
    }
}

#[test]
fn mask_ratio_sixty_percent_of_ten() {
    let view = CropView { indices: (0..10).collect(), kind: ViewKind::Global, augmentation_log: vec![] };
    let (masked, kept) = mask_tokens(&view, 0.6, 5).unwrap();
    assert_eq!(masked.len(), 6);
    assert_eq!(kept.len(), 4);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn grid_sample_permutation_invariant(seed in any::<u64>(), n in 1usize..200, size in 0.02f64..0.5) {
        let mut r = common::rng(seed);
        let pts: Vec<[f32; 3]> = (0..n).map(|_| [0; 3].map(|_| r.random_range(-1.0..1.0f32))).collect();
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, r.random_range(0..=i));
        }
        let shuffled: Vec<[f32; 3]> = perm.iter().map(|&i| pts[i]).collect();
        let a = grid_sample(&points_scene(&pts), size).unwrap();
        let b = grid_sample(&points_scene(&shuffled), size).unwrap();
        let oracle_a = voxel_oracle(&pts, size);
        let oracle_b = voxel_oracle(&shuffled, size);
        prop_assert_eq!(oracle_a.keys().collect::<Vec<_>>(), oracle_b.keys().collect::<Vec<_>>());
        prop_assert_eq!(a.indices, oracle_a.values().copied().collect::<BTreeSet<_>>().into_iter().collect::<Vec<_>>());
        prop_assert_eq!(b.indices, oracle_b.values().copied().collect::<BTreeSet<_>>().into_iter().collect::<Vec<_>>());
    }

    #[test]
    fn mask_tokens_partition(seed in any::<u64>(), n in 0usize..300, ratio in 0.0f64..=1.0) {
        let indices: Vec<usize> = (0..n).map(|i| i * 3 + 1).collect();
        let view = CropView { indices: indices.clone(), kind: ViewKind::Global, augmentation_log: vec![] };
        let (m, k) = mask_tokens(&view, ratio, seed).unwrap();
        prop_assert_eq!(m.len(), (n as f64 * ratio).round() as usize);
        let mut all: Vec<usize> = m.iter().chain(&k).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(&all, &indices);
        prop_assert_eq!(mask_tokens(&view, ratio, seed).unwrap(), (m, k));
    }

    #[test]
    fn crop_within_band(seed in any::<u64>(), n in 1usize..150) {
        let scene = common::random_scene(seed, n, 1.0);
        let spec = crop_spec([0.4, 1.0], 100);
        let view = sample_crop(&scene, ViewKind::Global, &spec, seed).unwrap();
        view.validate(n).unwrap();
        let clamped = view.augmentation_log.iter().any(|e| e.name == "crop_clamped");
        if clamped {
            prop_assert_eq!(view.len(), n);
        } else {
            prop_assert!(view.len() >= 40 && view.len() <= 100);
        }
    }
}
