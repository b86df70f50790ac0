//! Central finite-difference verification of graph gradients.
//!
//! The relative error of a tensor is ‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖);
//! tensors whose gradients are both below 1e-10 in norm count as matching.

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::params::ParamStore;

pub const DEFAULT_EPS: f64 = 1e-3;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// (parameter path, relative error)
    pub entries: Vec<(String, f64)>,
}

impl GradCheckReport {
    pub fn max_error(&self) -> f64 {
        self.entries.iter().map(|e| e.1).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&(String, f64)> {
        self.entries.iter().max_by(|a, b| a.1.total_cmp(&b.1))
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max_error() < tol
    }
}

fn evaluate<F>(store: &ParamStore, build: &F) -> Result<f64>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    let mut g = Graph::new();
    let out = build(&mut g, store)?;
    Ok(g.value(out).sum())
}

/// Compares reverse-mode gradients of the (summed) output of `build` against central differences.
pub fn check_gradients<F>(store: &ParamStore, eps: f64, build: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &ParamStore) -> Result<Var>,
{
    let mut g = Graph::new();
    let out = build(&mut g, store)?;
    let loss = g.sum_all(out);
    let grads = g.backward(loss)?;
    let mut entries = Vec::new();
    let mut probe = store.clone();
    for (path, analytic) in &grads.params {
        let mut numeric = analytic.clone();
        for idx in 0..analytic.len() {
            let (r, c) = (idx / analytic.ncols(), idx % analytic.ncols());
            let orig = probe.get(path).unwrap()[[r, c]];
            probe.get_mut(path).unwrap()[[r, c]] = orig + eps;
            let plus = evaluate(&probe, &build)?;
            probe.get_mut(path).unwrap()[[r, c]] = orig - eps;
            let minus = evaluate(&probe, &build)?;
            probe.get_mut(path).unwrap()[[r, c]] = orig;
            numeric[[r, c]] = (plus - minus) / (2.0 * eps);
        }
        let diff = (analytic - &numeric).mapv(|v| v * v).sum().sqrt();
        let scale = analytic.mapv(|v| v * v).sum().sqrt().max(numeric.mapv(|v| v * v).sum().sqrt());
        let rel = if scale < 1e-10 { 0.0 } else { diff / scale };
        entries.push((path.clone(), rel));
    }
    Ok(GradCheckReport { entries })
}
