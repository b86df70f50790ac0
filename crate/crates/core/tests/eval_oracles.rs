mod common;

use ndarray::Array2;
use proptest::prelude::*;
use rand::Rng;
use splatsem_core::eval::{classify_gaussians, knn_vote, seg_metrics, text_query, ClassEntry, ClassTable, VOID};
use splatsem_core::field::SemanticFeatureField;

fn random_table(r: &mut impl Rng, n: usize, d: usize) -> ClassTable {
    let names = ["wall", "floor", "chair", "table", "ceiling", "lamp", "bed", "sofa"];
    let classes = (0..n)
        .map(|i| ClassEntry { id: (i * 3 + 1) as u32, name: names[i % names.len()].to_string() + &i.to_string(), embedding: common::random_unit(r, d) })
        .collect();
    ClassTable::new(d, classes, None).unwrap()
}

fn brute_knn(centers: &[[f64; 3]], classes: &[u32], q: [f64; 3], k: usize) -> u32 {
    let mut d: Vec<(f64, usize)> = centers
        .iter()
        .enumerate()
        .map(|(i, c)| ((c[0] - q[0]).powi(2) + (c[1] - q[1]).powi(2) + (c[2] - q[2]).powi(2), i))
        .collect();
    d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let near: Vec<u32> = d.iter().take(k).map(|&(_, i)| classes[i]).filter(|&c| c != VOID).collect();
    if near.is_empty() {
        return VOID;
    }
    let best = near.iter().map(|c| near.iter().filter(|x| *x == c).count()).max().unwrap();
    // first (nearest) class reaching the best count
    *near.iter().find(|c| near.iter().filter(|x| x == c).count() == best).unwrap()
}

#[test]
fn knn_matches_brute_force() {
    let mut r = common::rng(42);
    for inst in 0..100 {
        let n = r.random_range(1..=2000);
        let m = r.random_range(1..=500);
        let k = [1, 5, 25][inst % 3];
        // coarse lattice coordinates produce exact distance ties
        let coord = |r: &mut rand_chacha::ChaCha8Rng| [0; 3].map(|_| r.random_range(0..20) as f64 * 0.1);
        let centers: Vec<[f64; 3]> = (0..n).map(|_| coord(&mut r)).collect();
        let classes: Vec<u32> = (0..n).map(|_| if r.random_bool(0.1) { VOID } else { r.random_range(0..6) }).collect();
        let queries: Vec<[f64; 3]> = (0..m).map(|_| coord(&mut r)).collect();
        let got = knn_vote(&centers, &classes, &queries, k).unwrap();
        for (j, q) in queries.iter().enumerate() {
            assert_eq!(got[j], brute_knn(&centers, &classes, *q, k), "instance {inst} query {j}");
        }
    }
}

#[test]
fn classify_matches_exhaustive_argmax() {
    let mut r = common::rng(5);
    let table = random_table(&mut r, 7, 12);
    let rows = Array2::from_shape_fn((100, 12), |_| r.random_range(-1.0..1.0));
    let field = SemanticFeatureField::from_unnormalized("s", &rows);
    let got = classify_gaussians(&field, &table).unwrap();
    for i in 0..100 {
        let mut best = (f64::NEG_INFINITY, VOID);
        let mut sorted = table.classes.clone();
        sorted.sort_by_key(|c| c.id);
        for c in &sorted {
            let s: f64 = (0..12).map(|k| field.features[[i, k]] as f64 * c.embedding[k]).sum();
            if s > best.0 {
                best = (s, c.id);
            }
        }
        assert_eq!(got[i], best.1);
    }
}

#[test]
fn query_matches_quantile_oracle() {
    let mut r = common::rng(9);
    let rows = Array2::from_shape_fn((500, 8), |(i, _)| if i % 7 == 0 { 0.0 } else { r.random_range(-1.0..1.0) });
    let field = SemanticFeatureField::from_unnormalized("s", &rows);
    let q = common::random_unit(&mut r, 8);
    for p in [0.02, 0.1, 0.5, 1.0] {
        let got = text_query(&field, &q, p).unwrap();
        let labeled = field.labeled_indices();
        let mut scores: Vec<(f64, usize)> = labeled
            .iter()
            .map(|&i| ((0..8).map(|k| field.features[[i, k]] as f64 * q[k]).sum::<f64>(), i))
            .collect();
        scores.sort_by(|a, b| b.0.total_cmp(&a.0));
        let k = (p * labeled.len() as f64).ceil() as usize;
        let threshold = scores[k - 1].0;
        assert_eq!(got.len(), k);
        for &i in &got {
            let s: f64 = (0..8).map(|c| field.features[[i, c]] as f64 * q[c]).sum();
            assert!(s >= threshold - 1e-9);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn classify_invariant_to_row_rescaling(seed in any::<u64>(), scale in 0.01f32..100.0) {
        let mut r = common::rng(seed);
        let table = random_table(&mut r, 5, 6);
        let rows = Array2::from_shape_fn((20, 6), |_| r.random_range(-1.0..1.0));
        let field = SemanticFeatureField::from_unnormalized("s", &rows);
        let scaled = SemanticFeatureField::new("s", field.features.mapv(|v| v * scale), field.unlabeled.clone()).unwrap();
        prop_assert_eq!(classify_gaussians(&field, &table).unwrap(), classify_gaussians(&scaled, &table).unwrap());
    }

    #[test]
    fn metrics_confusion_totals_and_relabeling(seed in any::<u64>(), m in 1usize..300) {
        let mut r = common::rng(seed);
        let table = random_table(&mut r, 5, 4);
        let ids = table.ids();
        let gt: Vec<u32> = (0..m).map(|_| ids[r.random_range(0..5)]).collect();
        let pred: Vec<u32> = (0..m).map(|_| if r.random_bool(0.1) { VOID } else { ids[r.random_range(0..5)] }).collect();
        let rep = seg_metrics(&pred, &gt, &table).unwrap();
        let total: u64 = rep.confusion.iter().flatten().sum();
        prop_assert_eq!(total as usize, m);
        for (c, id) in rep.class_ids.iter().enumerate() {
            let count = gt.iter().filter(|g| *g == id).count() as u64;
            prop_assert_eq!(rep.confusion[c].iter().sum::<u64>(), count);
            if let Some(v) = rep.iou[c] { prop_assert!((0.0..=1.0).contains(&v)); }
        }
        // relabel ids by reversing order; per-class numbers follow the names
        let mut relabeled = table.clone();
        let map = |id: u32| if id == VOID { VOID } else { 1000 - id };
        for c in &mut relabeled.classes { c.id = map(c.id); }
        relabeled.background = table.background.iter().map(|&b| map(b)).collect();
        let rep2 = seg_metrics(&pred.iter().map(|&p| map(p)).collect::<Vec<_>>(), &gt.iter().map(|&g| map(g)).collect::<Vec<_>>(), &relabeled).unwrap();
        prop_assert!((rep.miou - rep2.miou).abs() < 1e-12);
        for (c, name) in rep.class_names.iter().enumerate() {
            let c2 = rep2.class_names.iter().position(|n| n == name).unwrap();
            prop_assert_eq!(rep.iou[c], rep2.iou[c2]);
        }
    }
}
