//! AdamW with decoupled weight decay, the one-cycle learning-rate schedule and the EMA teacher update.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{LearnError, Result};
use crate::params::{Mat, ParamStore};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamW {
    pub config: AdamWConfig,
    pub step: u64,
    pub m: BTreeMap<String, Mat>,
    pub v: BTreeMap<String, Mat>,
}

impl AdamW {
    pub fn new(config: AdamWConfig) -> Self {
        Self {
            config,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    /// One update of every parameter that has a gradient; parameters without one are left alone.
    pub fn step(&mut self, params: &mut ParamStore, grads: &BTreeMap<String, Mat>, lr: f64) -> Result<()> {
        if !(lr > 0.0) || !lr.is_finite() {
            return Err(LearnError::Config(format!("learning rate must be positive, got {lr}")));
        }
        for (path, g) in grads {
            let p = params
                .get(path)
                .ok_or_else(|| LearnError::Shape(format!("gradient for unknown parameter {path}")))?;
            if p.dim() != g.dim() {
                return Err(LearnError::Shape(format!("gradient {path} {:?} vs parameter {:?}", g.dim(), p.dim())));
            }
        }
        self.step += 1;
        let c = &self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        for (path, g) in grads {
            let p = params.get_mut(path).unwrap();
            let m = self.m.entry(path.clone()).or_insert_with(|| Mat::zeros(g.dim()));
            let v = self.v.entry(path.clone()).or_insert_with(|| Mat::zeros(g.dim()));
            ndarray::Zip::from(p).and(m).and(v).and(g).for_each(|p, m, v, &g| {
                *p -= lr * c.weight_decay * *p;
                *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                let mh = *m / bc1;
                let vh = *v / bc2;
                *p -= lr * mh / (vh.sqrt() + c.eps);
            });
        }
        Ok(())
    }
}

/// Warm-up then cosine decay, parameterized like the common one-cycle policy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OneCycle {
    pub max_lr: f64,
    pub pct_start: f64,
    pub div_factor: f64,
    pub final_div_factor: f64,
}

impl Default for OneCycle {
    fn default() -> Self {
        Self {
            max_lr: 0.006,
            pct_start: 0.05,
            div_factor: 25.0,
            final_div_factor: 1e4,
        }
    }
}

fn cos_anneal(start: f64, end: f64, frac: f64) -> f64 {
    end + (start - end) / 2.0 * (1.0 + (std::f64::consts::PI * frac).cos())
}

impl OneCycle {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_lr > 0.0) {
            return Err(LearnError::Config("optim.lr must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.pct_start) {
            return Err(LearnError::Config("optim.pct_start must be in [0, 1]".into()));
        }
        if !(self.div_factor >= 1.0 && self.final_div_factor >= 1.0) {
            return Err(LearnError::Config("optim div factors must be >= 1".into()));
        }
        Ok(())
    }

    /// Learning rate at `step` (0-based) of `total` steps.
    pub fn lr(&self, step: u64, total: u64) -> f64 {
        let initial = self.max_lr / self.div_factor;
        let min = initial / self.final_div_factor;
        if total <= 1 {
            return self.max_lr;
        }
        let last = (total - 1) as f64;
        let peak = (self.pct_start * total as f64 - 1.0).max(0.0);
        let s = step as f64;
        if s <= peak && peak > 0.0 {
            cos_anneal(initial, self.max_lr, s / peak)
        } else {
            let span = (last - peak).max(1.0);
            cos_anneal(self.max_lr, min, ((s - peak) / span).clamp(0.0, 1.0))
        }
    }
}

/// shadow ← m·shadow + (1 − m)·student for every parameter.
pub fn ema_update(teacher: &mut ParamStore, student: &ParamStore, momentum: f64) -> Result<()> {
    if !(0.0..1.0).contains(&momentum) {
        return Err(LearnError::Config(format!("teacher momentum must be in [0, 1), got {momentum}")));
    }
    teacher.same_layout(student)?;
    for (path, shadow) in teacher.iter_mut() {
        let s = student.get(path).unwrap();
        ndarray::Zip::from(shadow).and(s).for_each(|t, &s| *t = momentum * *t + (1.0 - momentum) * s);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn single(v: f64) -> ParamStore {
        let mut p = ParamStore::new();
        p.insert("x", array![[v]]);
        p
    }

    fn grads(g: f64) -> BTreeMap<String, Mat> {
        BTreeMap::from([("x".to_string(), array![[g]])])
    }

    #[test]
    fn zero_gradient_without_decay_is_noop() {
        let mut p = single(1.5);
        let mut opt = AdamW::new(AdamWConfig { weight_decay: 0.0, ..Default::default() });
        opt.step(&mut p, &grads(0.0), 0.1).unwrap();
        assert_eq!(p.get("x").unwrap()[[0, 0]], 1.5);
    }

    #[test]
    fn first_step_closed_form() {
        let (lr, g, eps) = (0.01, 0.3, 1e-8);
        let mut p = single(0.0);
        let mut opt = AdamW::new(AdamWConfig { weight_decay: 0.0, ..Default::default() });
        opt.step(&mut p, &grads(g), lr).unwrap();
        // bias-corrected moments after one step are exactly g and g^2
        let expect = -lr * g / (g.abs() + eps);
        assert!((p.get("x").unwrap()[[0, 0]] - expect).abs() < 1e-15);
    }

    #[test]
    fn decoupled_decay_shrinks() {
        let (lr, wd, theta) = (0.1, 0.05, 2.0);
        let mut p = single(theta);
        let mut opt = AdamW::new(AdamWConfig { weight_decay: wd, ..Default::default() });
        opt.step(&mut p, &grads(0.0), lr).unwrap();
        assert!((p.get("x").unwrap()[[0, 0]] - (theta - lr * wd * theta)).abs() < 1e-15);
        assert!(opt.step(&mut p, &grads(0.0), 0.0).is_err());
    }

    #[test]
    fn ema_cases() {
        let student = single(4.0);
        let mut t = single(1.0);
        ema_update(&mut t, &student, 0.0).unwrap();
        assert_eq!(t, student);
        let mut t = single(1.0);
        ema_update(&mut t, &student, 1.0 - 1e-12).unwrap();
        assert!((t.get("x").unwrap()[[0, 0]] - 1.0).abs() < 1e-11);
        let mut t = single(0.0);
        for _ in 0..3 {
            ema_update(&mut t, &student, 0.5).unwrap();
        }
        assert!((t.get("x").unwrap()[[0, 0]] - 4.0 * (1.0 - 0.125)).abs() < 1e-15);
        assert!(ema_update(&mut single(0.0), &ParamStore::new(), 0.5).is_err());
    }

    #[test]
    fn one_cycle_shape() {
        let s = OneCycle { max_lr: 1.0, pct_start: 0.1, div_factor: 10.0, final_div_factor: 100.0 };
        assert!((s.lr(0, 100) - 0.1).abs() < 1e-12);
        assert!((s.lr(9, 100) - 1.0).abs() < 1e-12);
        assert!((s.lr(99, 100) - 0.001).abs() < 1e-12);
        let mut prev = f64::INFINITY;
        for t in 9..100 {
            let lr = s.lr(t, 100);
            assert!(lr <= prev);
            prev = lr;
        }
    }
}
