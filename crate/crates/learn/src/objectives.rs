//! Training objectives. Every function records its value on the graph so
//! gradients come from the same backward pass as the network.
//!
//! All losses are "lower is better": similarities enter negated.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use splatsem_core::eval::VOID;

use crate::error::{LearnError, Result};
use crate::graph::{Graph, Var};
use crate::params::Mat;

pub const NORM_FLOOR: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum LossWarning {
    /// A prediction row had norm below the floor.
    ZeroNormPrediction,
    /// Fewer than two classes met the size threshold.
    TooFewClasses,
    /// Fewer than two batch elements for the covariance.
    TooFewSamples,
    EmptyMask,
    /// No row was both masked and labeled.
    NoLabeledRows,
    /// No student/teacher view pairs.
    NoViewPairs,
}

pub struct LossTerm {
    pub value: Var,
    pub warnings: Vec<LossWarning>,
}

impl LossTerm {
    fn ok(value: Var) -> Self {
        Self { value, warnings: Vec::new() }
    }

    fn zero(g: &mut Graph, w: LossWarning) -> Self {
        Self {
            value: g.zero_scalar(),
            warnings: vec![w],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_cos: f64,
    pub lambda_l2: f64,
    pub lambda_con: f64,
    /// Fraction of training after which the contrastive term switches on (inclusive).
    pub contrastive_start: f64,
    pub tau_init: f64,
    pub min_class_size: usize,
    pub omega_sim: f64,
    pub omega_cr: f64,
    pub coding_eps: f64,
    pub omega_mgm: f64,
    pub omega_dino: f64,
    pub omega_ibot: f64,
    pub omega_la: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_cos: 1.0,
            lambda_l2: 1.0,
            lambda_con: 0.02,
            contrastive_start: 0.25,
            tau_init: 0.2,
            min_class_size: 10,
            omega_sim: 1.0,
            omega_cr: 0.05,
            coding_eps: 0.5,
            omega_mgm: 1.0,
            omega_dino: 1.0,
            omega_ibot: 1.0,
            omega_la: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let w = [
            ("lambda_cos", self.lambda_cos),
            ("lambda_l2", self.lambda_l2),
            ("lambda_con", self.lambda_con),
            ("omega_sim", self.omega_sim),
            ("omega_cr", self.omega_cr),
            ("omega_mgm", self.omega_mgm),
            ("omega_dino", self.omega_dino),
            ("omega_ibot", self.omega_ibot),
            ("omega_la", self.omega_la),
        ];
        if let Some((name, v)) = w.iter().find(|(_, v)| !(*v >= 0.0) || !v.is_finite()) {
            return Err(LearnError::Config(format!("loss.{name} must be a finite non-negative number, got {v}")));
        }
        if !(self.tau_init > 0.0) {
            return Err(LearnError::Config("loss.tau_init must be positive".into()));
        }
        if !(self.coding_eps > 0.0) {
            return Err(LearnError::Config("loss.coding_eps must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.contrastive_start) {
            return Err(LearnError::Config("loss.contrastive_start must be in [0, 1]".into()));
        }
        Ok(())
    }
}

fn warn_small_rows(g: &Graph, v: Var, warnings: &mut Vec<LossWarning>) {
    if g.value(v).rows().into_iter().any(|r| r.dot(&r).sqrt() < NORM_FLOOR) {
        warnings.push(LossWarning::ZeroNormPrediction);
    }
}

/// Mean over `rows` of 1 − cos(pred, target).
pub fn cosine_loss(g: &mut Graph, pred: Var, target: &Mat, rows: &[usize]) -> LossTerm {
    if rows.is_empty() {
        return LossTerm::zero(g, LossWarning::NoLabeledRows);
    }
    let p = g.gather_rows(pred, rows);
    let mut warnings = Vec::new();
    warn_small_rows(g, p, &mut warnings);
    let pn = g.l2_normalize_rows(p, NORM_FLOOR);
    let t = g.constant(target.select(ndarray::Axis(0), rows));
    let tn = g.l2_normalize_rows(t, NORM_FLOOR);
    let cos = g.row_dot(pn, tn);
    let m = g.mean_all(cos);
    let neg = g.scale(m, -1.0);
    let one = g.constant(Mat::ones((1, 1)));
    LossTerm {
        value: g.add(one, neg),
        warnings,
    }
}

/// Mean over `rows` of the squared Euclidean distance.
pub fn l2_loss(g: &mut Graph, pred: Var, target: &Mat, rows: &[usize]) -> LossTerm {
    if rows.is_empty() {
        return LossTerm::zero(g, LossWarning::NoLabeledRows);
    }
    let p = g.gather_rows(pred, rows);
    let t = g.constant(target.select(ndarray::Axis(0), rows));
    let d = g.sub(p, t);
    let sq = g.square(d);
    let s = g.sum_all(sq);
    LossTerm::ok(g.scale(s, 1.0 / rows.len() as f64))
}

/// Random disjoint halves for each class with at least `min_class_size` (and two) members.
pub fn class_splits(labels: &[u32], min_class_size: usize, seed: u64) -> Vec<(u32, Vec<usize>, Vec<usize>)> {
    let mut members: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        if l != VOID {
            members.entry(l).or_default().push(i);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    members
        .into_iter()
        .filter(|(_, m)| m.len() >= min_class_size.max(2))
        .map(|(c, mut m)| {
            m.shuffle(&mut rng);
            let b = m.split_off(m.len() / 2);
            (c, m, b)
        })
        .collect()
}

/// Class-pooled bidirectional contrastive loss with temperature exp(log_tau).
pub fn aggregated_contrastive(
    g: &mut Graph,
    pred: Var,
    labels: &[u32],
    log_tau: Var,
    min_class_size: usize,
    seed: u64,
) -> LossTerm {
    let splits = class_splits(labels, min_class_size, seed);
    if splits.len() < 2 {
        return LossTerm::zero(g, LossWarning::TooFewClasses);
    }
    let mut pooled_a = Vec::with_capacity(splits.len());
    let mut pooled_b = Vec::with_capacity(splits.len());
    for (_, a, b) in &splits {
        let ra = g.gather_rows(pred, a);
        pooled_a.push(g.mean_rows(ra));
        let rb = g.gather_rows(pred, b);
        pooled_b.push(g.mean_rows(rb));
    }
    let fa = g.concat_rows(&pooled_a);
    let fb = g.concat_rows(&pooled_b);
    let mut warnings = Vec::new();
    warn_small_rows(g, fa, &mut warnings);
    warn_small_rows(g, fb, &mut warnings);
    let fa = g.l2_normalize_rows(fa, NORM_FLOOR);
    let fb = g.l2_normalize_rows(fb, NORM_FLOOR);
    let neg_log_tau = g.scale(log_tau, -1.0);
    let inv_tau = g.exp(neg_log_tau);
    let sim = g.matmul_t(fa, fb);
    let za = g.scale_by(sim, inv_tau);
    let zb = g.transpose(za);
    let diag: Vec<usize> = (0..splits.len()).collect();
    let la = g.cross_entropy_rows(za, &diag);
    let lb = g.cross_entropy_rows(zb, &diag);
    let s = g.add(la, lb);
    LossTerm {
        value: g.scale(s, 0.5),
        warnings,
    }
}

/// λ_cos·cos + λ_L2·L2, plus λ_con·contrastive once `epoch_fraction` reaches the start fraction.
pub fn vl_total(g: &mut Graph, cos: Var, l2: Var, contrastive: Option<Var>, w: &LossWeights, epoch_fraction: f64) -> Var {
    let a = g.scale(cos, w.lambda_cos);
    let b = g.scale(l2, w.lambda_l2);
    let mut total = g.add(a, b);
    if let Some(c) = contrastive {
        let weight = if epoch_fraction >= w.contrastive_start { w.lambda_con } else { 0.0 };
        let c = g.scale(c, weight);
        total = g.add(total, c);
    }
    total
}

pub fn contrastive_active(w: &LossWeights, epoch_fraction: f64) -> bool {
    epoch_fraction >= w.contrastive_start && w.lambda_con > 0.0
}

/// Squared error summed over attributes, averaged over masked rows.
pub fn mgm_loss(g: &mut Graph, pred: Var, target: &Mat, masked: &[usize]) -> LossTerm {
    if masked.is_empty() {
        return LossTerm::zero(g, LossWarning::EmptyMask);
    }
    let p = g.gather_rows(pred, masked);
    let t = g.constant(target.select(ndarray::Axis(0), masked));
    let d = g.sub(p, t);
    let sq = g.square(d);
    let s = g.sum_all(sq);
    LossTerm::ok(g.scale(s, 1.0 / masked.len() as f64))
}

/// Negative mean cosine over all (student view, teacher view) pairs; inputs are unit rows.
pub fn sim_loss(g: &mut Graph, students: &[Var], teachers: &[Mat]) -> LossTerm {
    if students.is_empty() || teachers.is_empty() {
        return LossTerm::zero(g, LossWarning::NoViewPairs);
    }
    let s = g.concat_rows(students);
    let t = g.constant(ndarray::concatenate(ndarray::Axis(0), &teachers.iter().map(|m| m.view()).collect::<Vec<_>>()).expect("teacher rows"));
    let cos = g.matmul_t(s, t);
    let m = g.mean_all(cos);
    LossTerm::ok(g.scale(m, -1.0))
}

/// −½·logdet(I + (d/ε²)·Γ) with Γ the unbiased covariance of the batch rows.
pub fn coding_rate_loss(g: &mut Graph, batch: Var, eps: f64) -> LossTerm {
    let (n, d) = g.value(batch).dim();
    if n < 2 {
        return LossTerm::zero(g, LossWarning::TooFewSamples);
    }
    let cov = g.covariance(batch);
    let r = g.half_logdet_identity_plus(cov, d as f64 / (eps * eps));
    LossTerm::ok(g.scale(r, -1.0))
}

/// R_ε(Γ) for a given covariance matrix.
pub fn coding_rate(gamma: &Mat, eps: f64) -> f64 {
    let mut g = Graph::new();
    let x = g.constant(gamma.clone());
    let r = g.half_logdet_identity_plus(x, gamma.nrows() as f64 / (eps * eps));
    g.scalar(r)
}

/// Negative mean cosine between student and teacher tokens at the masked rows; inputs are unit rows.
pub fn ibot_loss(g: &mut Graph, student: Var, teacher: &Mat, masked: &[usize]) -> LossTerm {
    if masked.is_empty() {
        return LossTerm::zero(g, LossWarning::EmptyMask);
    }
    let s = g.gather_rows(student, masked);
    let t = g.constant(teacher.select(ndarray::Axis(0), masked));
    let cos = g.row_dot(s, t);
    let m = g.mean_all(cos);
    LossTerm::ok(g.scale(m, -1.0))
}

/// Cosine plus L2 on rows that are both masked and labeled.
pub fn la_loss(g: &mut Graph, pred: Var, target: &Mat, masked: &[usize], unlabeled: &[bool]) -> LossTerm {
    let rows: Vec<usize> = masked.iter().copied().filter(|&i| !unlabeled[i]).collect();
    if rows.is_empty() {
        return LossTerm::zero(g, LossWarning::NoLabeledRows);
    }
    let c = cosine_loss(g, pred, target, &rows);
    let l = l2_loss(g, pred, target, &rows);
    let mut warnings = c.warnings;
    warnings.extend(l.warnings);
    LossTerm {
        value: g.add(c.value, l.value),
        warnings,
    }
}
