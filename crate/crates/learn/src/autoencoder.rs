//! Feature-compression autoencoder: GELU MLP encoder/decoder trained on L2 reconstruction.

use ndarray::{s, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use splatsem_core::SemanticFeatureField;

use crate::checkpoint::{Checkpoint, SECTION_AE};
use crate::config::AutoencoderConfig;
use crate::error::{LearnError, Result};
use crate::graph::{Graph, Var};
use crate::layers::{init_mlp, mlp};
use crate::objectives::l2_loss;
use crate::optim::{AdamW, AdamWConfig, OneCycle};
use crate::params::{Mat, ParamStore};

const ENCODER: &str = "ae.encoder";
const DECODER: &str = "ae.decoder";
const EVAL_CHUNK: usize = 4096;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AutoencoderSpec {
    pub encoder: Vec<usize>,
    pub decoder: Vec<usize>,
}

impl Default for AutoencoderSpec {
    fn default() -> Self {
        let c = AutoencoderConfig::default();
        Self {
            encoder: c.encoder,
            decoder: c.decoder,
        }
    }
}

impl AutoencoderSpec {
    pub fn new(encoder: Vec<usize>, decoder: Vec<usize>) -> Result<Self> {
        let bad = |m: &str| Err(LearnError::Config(format!("autoencoder: {m}")));
        if encoder.len() < 2 || decoder.len() < 2 {
            return bad("encoder and decoder need at least two widths");
        }
        if encoder.iter().chain(&decoder).any(|&w| w == 0) {
            return bad("widths must be positive");
        }
        if encoder.last() != decoder.first() {
            return bad("encoder output width must equal decoder input width");
        }
        if encoder.first() != decoder.last() {
            return bad("decoder output width must equal encoder input width");
        }
        Ok(Self { encoder, decoder })
    }

    pub fn input_dim(&self) -> usize {
        self.encoder[0]
    }

    pub fn latent_dim(&self) -> usize {
        *self.encoder.last().unwrap()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Autoencoder {
    pub spec: AutoencoderSpec,
    pub params: ParamStore,
}

/// Held-out metrics: mean squared L2 distance and mean (1 − cos) per row.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionMetrics {
    pub l2: f64,
    pub cosine: f64,
    pub rows: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AeReport {
    pub train: ReconstructionMetrics,
    pub holdout: Option<ReconstructionMetrics>,
    /// (epoch, mean training L2)
    pub log: Vec<(u64, f64)>,
}

impl Autoencoder {
    pub fn init(spec: AutoencoderSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        init_mlp(&mut params, &mut rng, ENCODER, &spec.encoder);
        init_mlp(&mut params, &mut rng, DECODER, &spec.decoder);
        Self { spec, params }
    }

    fn encode_var(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        mlp(g, store, ENCODER, self.spec.encoder.len() - 1, x)
    }

    fn decode_var(&self, g: &mut Graph, store: &ParamStore, z: Var) -> Result<Var> {
        mlp(g, store, DECODER, self.spec.decoder.len() - 1, z)
    }

    fn check_width(&self, x: &Mat, expect: usize) -> Result<()> {
        if x.ncols() != expect {
            return Err(LearnError::Shape(format!("autoencoder expects {expect} columns, got {}", x.ncols())));
        }
        Ok(())
    }

    fn chunked(&self, x: &Mat, f: impl Fn(&mut Graph, Var) -> Result<Var>, out_dim: usize) -> Result<Mat> {
        let mut out = Mat::zeros((x.nrows(), out_dim));
        let mut start = 0;
        while start < x.nrows() {
            let end = (start + EVAL_CHUNK).min(x.nrows());
            let mut g = Graph::new();
            let v = g.constant(x.slice(s![start..end, ..]).to_owned());
            let y = f(&mut g, v)?;
            out.slice_mut(s![start..end, ..]).assign(g.value(y));
            start = end;
        }
        Ok(out)
    }

    pub fn encode(&self, x: &Mat) -> Result<Mat> {
        self.check_width(x, self.spec.input_dim())?;
        self.chunked(x, |g, v| self.encode_var(g, &self.params, v), self.spec.latent_dim())
    }

    pub fn decode(&self, z: &Mat) -> Result<Mat> {
        self.check_width(z, self.spec.latent_dim())?;
        self.chunked(z, |g, v| self.decode_var(g, &self.params, v), self.spec.input_dim())
    }

    pub fn reconstruct(&self, x: &Mat) -> Result<Mat> {
        self.decode(&self.encode(x)?)
    }

    pub fn evaluate(&self, x: &Mat) -> Result<ReconstructionMetrics> {
        let r = self.reconstruct(x)?;
        Ok(reconstruction_metrics(x, &r))
    }

    pub fn to_checkpoint(&self, seed: u64) -> Checkpoint {
        let mut ck = Checkpoint {
            seed,
            ..Checkpoint::default()
        };
        ck.meta.insert("ae.spec".into(), serde_json::to_string(&self.spec).expect("spec serializes"));
        ck.sections.insert(SECTION_AE.into(), self.params.clone());
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let spec: AutoencoderSpec = ck
            .meta
            .get("ae.spec")
            .ok_or_else(|| LearnError::Checkpoint("checkpoint has no autoencoder".into()))
            .and_then(|s| serde_json::from_str(s).map_err(|e| LearnError::Checkpoint(format!("ae.spec: {e}"))))?;
        let spec = AutoencoderSpec::new(spec.encoder, spec.decoder)?;
        let params = ck.section(SECTION_AE)?.clone();
        let reference = Self::init(spec.clone(), 0);
        params.same_layout(&reference.params)?;
        params.check_finite()?;
        Ok(Self { spec, params })
    }
}

pub fn reconstruction_metrics(x: &Mat, r: &Mat) -> ReconstructionMetrics {
    let n = x.nrows();
    if n == 0 {
        return ReconstructionMetrics { l2: 0.0, cosine: 0.0, rows: 0 };
    }
    let (mut l2, mut cos) = (0.0, 0.0);
    for (a, b) in x.outer_iter().zip(r.outer_iter()) {
        let d = &a - &b;
        l2 += d.dot(&d);
        let na = a.dot(&a).sqrt().max(crate::objectives::NORM_FLOOR);
        let nb = b.dot(&b).sqrt().max(crate::objectives::NORM_FLOOR);
        cos += 1.0 - a.dot(&b) / (na * nb);
    }
    ReconstructionMetrics {
        l2: l2 / n as f64,
        cosine: cos / n as f64,
        rows: n,
    }
}

/// Deterministic train/holdout split of row indices.
pub fn holdout_split(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_4e1d);
    idx.shuffle(&mut rng);
    let mut hold = ((n as f64) * fraction).round() as usize;
    if fraction > 0.0 && n >= 2 {
        hold = hold.clamp(1, n - 1);
    } else {
        hold = 0;
    }
    let mut train = idx.split_off(hold);
    let mut holdout = idx;
    train.sort_unstable();
    holdout.sort_unstable();
    (train, holdout)
}

/// Minibatch AdamW on the mean squared reconstruction error.
pub fn train_autoencoder(cfg: &AutoencoderConfig, rows: &Mat, seed: u64) -> Result<(Autoencoder, AeReport)> {
    let spec = AutoencoderSpec::new(cfg.encoder.clone(), cfg.decoder.clone())?;
    let mut ae = Autoencoder::init(spec, seed);
    ae.check_width(rows, ae.spec.input_dim())?;
    if rows.nrows() == 0 {
        return Err(LearnError::Config("autoencoder corpus is empty".into()));
    }
    let (train_idx, hold_idx) = holdout_split(rows.nrows(), cfg.holdout_fraction, seed);
    let train = rows.select(Axis(0), &train_idx);
    let holdout = rows.select(Axis(0), &hold_idx);

    let batch = cfg.batch_size.min(train.nrows()).max(1);
    let per_epoch = train.nrows().div_ceil(batch) as u64;
    let total = cfg.epochs * per_epoch;
    let schedule = OneCycle {
        max_lr: cfg.lr,
        ..OneCycle::default()
    };
    let mut opt = AdamW::new(AdamWConfig {
        weight_decay: cfg.weight_decay,
        ..AdamWConfig::default()
    });
    let mut log = Vec::with_capacity(cfg.epochs as usize);
    let mut order: Vec<usize> = (0..train.nrows()).collect();
    let mut step = 0u64;
    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(epoch).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for chunk in order.chunks(batch) {
            let x = train.select(Axis(0), chunk);
            let mut g = Graph::new();
            let xv = g.constant(x.clone());
            let z = ae.encode_var(&mut g, &ae.params, xv)?;
            let y = ae.decode_var(&mut g, &ae.params, z)?;
            let all: Vec<usize> = (0..x.nrows()).collect();
            let loss = l2_loss(&mut g, y, &x, &all).value;
            let value = g.scalar(loss);
            if !value.is_finite() {
                return Err(LearnError::NonFinite(format!("autoencoder loss at epoch {epoch} step {step}")));
            }
            sum += value * x.nrows() as f64;
            let grads = g.backward(loss)?;
            opt.step(&mut ae.params, &grads.params, schedule.lr(step, total))?;
            step += 1;
        }
        log.push((epoch, sum / train.nrows() as f64));
    }
    let report = AeReport {
        train: ae.evaluate(&train)?,
        holdout: if holdout.nrows() > 0 { Some(ae.evaluate(&holdout)?) } else { None },
        log,
    };
    Ok((ae, report))
}

/// Labeled rows of every field, stacked, as f64.
pub fn feature_corpus(fields: &[SemanticFeatureField]) -> Result<Mat> {
    let dim = match fields.first() {
        Some(f) => f.dim(),
        None => return Ok(Mat::zeros((0, 0))),
    };
    let mut rows = Vec::new();
    let mut n = 0;
    for f in fields {
        if f.dim() != dim {
            return Err(LearnError::Shape(format!("field {} has dim {}, expected {dim}", f.scene_id, f.dim())));
        }
        for i in f.labeled_indices() {
            rows.extend(f.row(i).iter().map(|&v| v as f64));
            n += 1;
        }
    }
    Ok(Array2::from_shape_vec((n, dim), rows).expect("corpus shape"))
}

/// Encodes labeled rows; unlabeled rows stay zero and flagged.
pub fn compress_features(ae: &Autoencoder, field: &SemanticFeatureField) -> Result<SemanticFeatureField> {
    if field.dim() != ae.spec.input_dim() {
        return Err(LearnError::Shape(format!(
            "field {} has dim {}, autoencoder expects {}",
            field.scene_id,
            field.dim(),
            ae.spec.input_dim()
        )));
    }
    let labeled = field.labeled_indices();
    let x = field.features.select(Axis(0), &labeled).mapv(|v| v as f64);
    let z = ae.encode(&x)?;
    let mut out = Array2::<f32>::zeros((field.len(), ae.spec.latent_dim()));
    for (k, &i) in labeled.iter().enumerate() {
        out.row_mut(i).assign(&z.row(k).mapv(|v| v as f32));
    }
    Ok(SemanticFeatureField::new(field.scene_id.clone(), out, field.unlabeled.clone())?)
}
