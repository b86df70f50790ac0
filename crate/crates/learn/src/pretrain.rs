//! Training loops: language-feature regression, self-supervised pretraining and inference.

use std::ops::Range;
use std::path::Path;

use ndarray::Axis;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use splatsem_core::augment::{apply_augmentation, AugmentationTable, GaussianSet};
use splatsem_core::eval::{knn_vote, LabelSet};
use splatsem_core::ply::load_scene_ply;
use splatsem_core::sampling::{mask_positions, sample_crop, ViewKind};
use splatsem_core::{GaussianScene, SemanticFeatureField};

use crate::checkpoint::{Checkpoint, SECTION_EMA, SECTION_PARAMS};
use crate::config::RunConfig;
use crate::error::{LearnError, Result};
use crate::graph::{Graph, Var};
use crate::network::{Network, NetworkSpec};
use crate::objectives::{
    aggregated_contrastive, coding_rate_loss, contrastive_active, cosine_loss, ibot_loss, l2_loss, la_loss, mgm_loss,
    sim_loss, vl_total,
};
use crate::optim::{ema_update, AdamW, OneCycle};
use crate::params::{Mat, ParamStore};

pub const LOG_TAU: &str = "contrastive.log_tau";
/// Token cap for dense attention at inference.
pub const MAX_INFER_TOKENS: usize = 4096;

/// A scene with whatever supervision it carries.
#[derive(Clone, Debug)]
pub struct TrainScene {
    pub scene: GaussianScene,
    pub features: Option<SemanticFeatureField>,
    /// Per-Gaussian class ids (VOID allowed).
    pub labels: Option<Vec<u32>>,
    pub compressed: Option<SemanticFeatureField>,
}

impl TrainScene {
    pub fn new(scene: GaussianScene) -> Self {
        Self {
            scene,
            features: None,
            labels: None,
            compressed: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.scene.len();
        let id = &self.scene.scene_id;
        for (what, f) in [("features", &self.features), ("compressed features", &self.compressed)] {
            if let Some(f) = f {
                if f.len() != n {
                    return Err(LearnError::Shape(format!("scene {id}: {what} have {} rows for {n} Gaussians", f.len())));
                }
            }
        }
        if let Some(l) = &self.labels {
            if l.len() != n {
                return Err(LearnError::Shape(format!("scene {id}: {} labels for {n} Gaussians", l.len())));
            }
        }
        Ok(())
    }
}

/// Per-Gaussian labels from the nearest labeled point.
pub fn labels_from_points(scene: &GaussianScene, points: &LabelSet) -> Result<Vec<u32>> {
    Ok(knn_vote(&points.positions_f64(), &points.labels, &scene.centers(), 1)?)
}

pub fn load_scenes(cfg: &RunConfig) -> Result<Vec<TrainScene>> {
    let mut out = Vec::with_capacity(cfg.data.scenes.len());
    for entry in &cfg.data.scenes {
        let id = entry.scene_id();
        let mut scene = load_scene_ply(&entry.ply, entry.activation)?;
        scene.scene_id = id.clone();
        let mut ts = TrainScene::new(scene);
        if let Some(p) = &entry.features {
            ts.features = Some(SemanticFeatureField::load(p)?);
        }
        if let Some(p) = &entry.compressed {
            ts.compressed = Some(SemanticFeatureField::load(p)?);
        }
        if let Some(p) = &entry.labels {
            ts.labels = Some(labels_from_points(&ts.scene, &LabelSet::load(p)?)?);
        }
        ts.validate()?;
        out.push(ts);
    }
    Ok(out)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent seed for (run seed, step, stream).
pub fn derive_seed(seed: u64, step: u64, stream: u64) -> u64 {
    splitmix(splitmix(splitmix(seed) ^ step) ^ stream)
}

/// Tokens of one view.
#[derive(Clone, Debug, PartialEq)]
pub struct View {
    /// Source scene indices, one per token.
    pub indices: Vec<usize>,
    pub attrs: Mat,
    pub positions: Mat,
    /// Token positions replaced by the mask token.
    pub masked: Vec<usize>,
}

impl View {
    pub fn from_set(set: &GaussianSet) -> Self {
        let n = set.len();
        let mut attrs = Mat::zeros((n, splatsem_core::ATTR_DIM));
        let mut positions = Mat::zeros((n, 3));
        for (r, p) in set.primitives.iter().enumerate() {
            for (c, v) in p.to_attributes().iter().enumerate() {
                attrs[[r, c]] = *v as f64;
            }
            for c in 0..3 {
                positions[[r, c]] = p.center[c] as f64;
            }
        }
        Self {
            indices: set.indices.clone(),
            attrs,
            positions,
            masked: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn set_mask(&mut self, ratio: f64, seed: u64) -> Result<()> {
        let m = mask_positions(self.len(), ratio, seed)?;
        self.masked = (0..self.len()).filter(|&i| m[i]).collect();
        Ok(())
    }
}

fn crop(base: &GaussianSet, scene_id: &str, kind: ViewKind, table: &AugmentationTable, seed: u64) -> Result<GaussianSet> {
    let view = sample_crop(&base.to_scene(scene_id), kind, &table.base, seed)?;
    Ok(base.subset(&view.indices))
}

/// Base augmentation (ending in grid sampling) followed by one global crop.
pub fn build_vl_view(scene: &GaussianScene, table: &AugmentationTable, seed: u64) -> Result<View> {
    let (base, _) = apply_augmentation(&GaussianSet::from_scene(scene), &table.base, derive_seed(seed, 0, 1))?;
    let set = crop(&base, &scene.scene_id, ViewKind::Global, table, derive_seed(seed, 0, 2))?;
    Ok(View::from_set(&set))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SslViews {
    pub globals: Vec<View>,
    pub locals: Vec<View>,
    /// Index of the weakly augmented global view.
    pub weak: usize,
}

impl SslViews {
    /// Global views that carry a mask.
    pub fn masked_globals(&self) -> Vec<usize> {
        (0..self.globals.len()).filter(|&g| !self.globals[g].masked.is_empty()).collect()
    }
}

/// Global/local views of one scene for a self-supervised step.
pub fn build_ssl_views(scene: &GaussianScene, cfg: &RunConfig, table: &AugmentationTable, seed: u64) -> Result<SslViews> {
    let s = &cfg.ssl;
    let id = &scene.scene_id;
    let (base, _) = apply_augmentation(&GaussianSet::from_scene(scene), &table.base, derive_seed(seed, 0, 1))?;
    let weak = if s.n_global >= 2 { 1 } else { 0 };
    let mut globals = Vec::with_capacity(s.n_global);
    for g in 0..s.n_global {
        let k = g as u64;
        let set = crop(&base, id, ViewKind::Global, table, derive_seed(seed, k, 10))?;
        let (set, _) = apply_augmentation(&set, &table.global_base, derive_seed(seed, k, 11))?;
        let (set, _) = apply_augmentation(&set, &table.global[g % 2], derive_seed(seed, k, 12))?;
        globals.push(View::from_set(&set));
    }
    let mut locals = Vec::new();
    if s.dino {
        for l in 0..s.n_local {
            let k = l as u64;
            let set = crop(&base, id, ViewKind::Local, table, derive_seed(seed, k, 20))?;
            let (set, _) = apply_augmentation(&set, &table.local_base, derive_seed(seed, k, 21))?;
            let (set, _) = apply_augmentation(&set, &table.local, derive_seed(seed, k, 22))?;
            locals.push(View::from_set(&set));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0, 30));
    let band = |rng: &mut ChaCha8Rng| {
        let [lo, hi] = s.ibot_ratio;
        if lo < hi {
            rng.random_range(lo..=hi)
        } else {
            lo
        }
    };
    if s.mgm || s.la {
        globals[weak].set_mask(s.mgm_ratio, derive_seed(seed, weak as u64, 31))?;
    }
    if s.ibot {
        let count = ((s.masked_global_fraction * s.n_global as f64).round() as usize).clamp(1, s.n_global);
        let order = std::iter::once(weak).chain((0..s.n_global).filter(|&g| g != weak));
        for g in order.take(count) {
            if g == weak && (s.mgm || s.la) {
                continue;
            }
            let r = band(&mut rng);
            globals[g].set_mask(r, derive_seed(seed, g as u64, 31))?;
        }
    }
    Ok(SslViews { globals, locals, weak })
}

/// Runs `produce` ahead of `consume` on a worker thread; items arrive in step order.
pub fn prefetched<T, P, C>(steps: Range<u64>, depth: usize, produce: P, mut consume: C) -> Result<()>
where
    T: Send,
    P: Fn(u64) -> Result<T> + Sync,
    C: FnMut(u64, T) -> Result<()>,
{
    if depth == 0 {
        for s in steps {
            consume(s, produce(s)?)?;
        }
        return Ok(());
    }
    std::thread::scope(|scope| {
        let (tx, rx) = std::sync::mpsc::sync_channel(depth);
        let produce = &produce;
        let range = steps.clone();
        scope.spawn(move || {
            for s in range {
                let item = produce(s);
                let failed = item.is_err();
                if tx.send((s, item)).is_err() || failed {
                    break;
                }
            }
        });
        for (s, item) in rx {
            consume(s, item?)?;
        }
        Ok(())
    })
}

/// Columns and rows of a training log.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl TrainLog {
    fn new(columns: &[&str]) -> Self {
        Self {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let c = self.columns.iter().position(|n| n == name)?;
        Some(self.rows.iter().map(|r| r[c]).collect())
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for r in &self.rows {
            let cells: Vec<String> = r.iter().map(|v| v.to_string()).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| LearnError::io(path, e))
    }
}

/// Student parameters, optimizer, optional EMA teacher and the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub network: Network,
    pub params: ParamStore,
    pub optimizer: AdamW,
    pub teacher: Option<ParamStore>,
    pub step: u64,
    pub seed: u64,
}

impl TrainState {
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint {
            step: self.step,
            seed: self.seed,
            ..Checkpoint::default()
        };
        ck.meta.insert("model".into(), serde_json::to_string(&self.network.spec).expect("spec serializes"));
        ck.sections.insert(SECTION_PARAMS.into(), self.params.clone());
        ck.put_optimizer(&self.optimizer);
        if let Some(t) = &self.teacher {
            ck.sections.insert(SECTION_EMA.into(), t.clone());
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let network = network_from_checkpoint(ck)?;
        let params = ck.section(SECTION_PARAMS)?.clone();
        params.check_finite()?;
        Ok(Self {
            network,
            params,
            optimizer: ck.optimizer()?,
            teacher: ck.sections.get(SECTION_EMA).cloned(),
            step: ck.step,
            seed: ck.seed,
        })
    }

    pub fn checksum(&self) -> u64 {
        self.params.checksum()
    }
}

pub fn network_from_checkpoint(ck: &Checkpoint) -> Result<Network> {
    let spec: NetworkSpec = ck
        .meta
        .get("model")
        .ok_or_else(|| LearnError::Checkpoint("checkpoint has no model spec".into()))
        .and_then(|s| serde_json::from_str(s).map_err(|e| LearnError::Checkpoint(format!("model spec: {e}"))))?;
    Network::new(spec)
}

/// Receives intermediate checkpoints.
pub type CheckpointSink<'a> = &'a mut dyn FnMut(&Checkpoint) -> Result<()>;

fn non_finite(step: u64, what: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(LearnError::NonFinite(format!("{what} loss {v} at step {step}")))
    }
}

fn rows_f64(field: &SemanticFeatureField, rows: &[usize]) -> Mat {
    field.features.select(Axis(0), rows).mapv(|v| v as f64)
}

/// Language-feature regression with the warm-started contrastive term.
pub struct VlTrainer<'a> {
    pub cfg: &'a RunConfig,
    pub scenes: &'a [TrainScene],
    pub state: TrainState,
    pub table: AugmentationTable,
    pub schedule: OneCycle,
    pub total_steps: u64,
    pub log: TrainLog,
}

pub const VL_COLUMNS: [&str; 6] = ["step", "lr", "cosine", "l2", "contrastive", "total"];

impl<'a> VlTrainer<'a> {
    pub fn new(cfg: &'a RunConfig, scenes: &'a [TrainScene]) -> Result<Self> {
        cfg.validate()?;
        if !cfg.model.language_head {
            return Err(LearnError::Config("language training needs model.language_head".into()));
        }
        if scenes.is_empty() {
            return Err(LearnError::Config("no training scenes".into()));
        }
        for s in scenes {
            s.validate()?;
            let f = s.features.as_ref().ok_or_else(|| {
                LearnError::Config(format!("scene {} has no feature field", s.scene.scene_id))
            })?;
            if f.dim() != cfg.model.out_dim {
                return Err(LearnError::Config(format!(
                    "scene {} features have dim {}, model.out_dim is {}",
                    s.scene.scene_id,
                    f.dim(),
                    cfg.model.out_dim
                )));
            }
        }
        let network = Network::new(cfg.model.clone())?;
        let mut params = network.init(cfg.seed);
        if scenes.iter().any(|s| s.labels.is_some()) {
            params.insert(LOG_TAU, Mat::from_elem((1, 1), cfg.loss.tau_init.ln()));
        }
        Ok(Self {
            cfg,
            scenes,
            state: TrainState {
                network,
                params,
                optimizer: AdamW::new(cfg.optim.adamw()),
                teacher: None,
                step: 0,
                seed: cfg.seed,
            },
            table: cfg.augmentation_table(),
            schedule: cfg.optim.schedule(),
            total_steps: cfg.schedule.epochs * scenes.len() as u64,
            log: TrainLog::new(&VL_COLUMNS),
        })
    }

    fn scene_for(&self, step: u64) -> &'a TrainScene {
        scene_for(self.scenes, step)
    }

    pub fn view(&self, step: u64) -> Result<View> {
        vl_view_for(self.cfg, self.scenes, &self.table, step)
    }

    /// Loss graph of one step; returns the graph, the total and the logged components.
    pub fn loss_graph(&self, step: u64, view: &View, params: &ParamStore) -> Result<(Graph, Var, [f64; 4])> {
        let ts = self.scene_for(step);
        let field = ts.features.as_ref().expect("checked at construction");
        let net = &self.state.network;
        let mut g = Graph::new();
        let out = net.forward(&mut g, params, &view.attrs, &view.positions, &[])?;
        let pred = out.language.expect("language head");
        let target = rows_f64(field, &view.indices);
        let labeled: Vec<usize> = (0..view.len()).filter(|&r| !field.unlabeled[view.indices[r]]).collect();
        let cos = cosine_loss(&mut g, pred, &target, &labeled).value;
        let l2 = l2_loss(&mut g, pred, &target, &labeled).value;
        let frac = step as f64 / self.total_steps.max(1) as f64;
        let con = match &ts.labels {
            Some(labels) if contrastive_active(&self.cfg.loss, frac) => {
                let view_labels: Vec<u32> = view.indices.iter().map(|&i| labels[i]).collect();
                let log_tau = g.param(params, LOG_TAU)?;
                Some(
                    aggregated_contrastive(
                        &mut g,
                        pred,
                        &view_labels,
                        log_tau,
                        self.cfg.loss.min_class_size,
                        derive_seed(self.cfg.seed, step, 3),
                    )
                    .value,
                )
            }
            _ => None,
        };
        let total = vl_total(&mut g, cos, l2, con, &self.cfg.loss, frac);
        let parts = [g.scalar(cos), g.scalar(l2), con.map_or(0.0, |c| g.scalar(c)), g.scalar(total)];
        Ok((g, total, parts))
    }

    fn apply(&mut self, step: u64, view: View) -> Result<()> {
        let (g, total, parts) = self.loss_graph(step, &view, &self.state.params)?;
        non_finite(step, "total", parts[3])?;
        let grads = g.backward(total).map_err(|e| match e {
            LearnError::NonFinite(m) => LearnError::NonFinite(format!("{m} at step {step}")),
            other => other,
        })?;
        let lr = self.schedule.lr(step, self.total_steps);
        self.state.optimizer.step(&mut self.state.params, &grads.params, lr)?;
        self.state.step = step + 1;
        let mut row = vec![step as f64, lr];
        row.extend(parts);
        self.log.rows.push(row);
        Ok(())
    }

    pub fn run(&mut self, mut sink: Option<CheckpointSink<'_>>) -> Result<()> {
        let (cfg, scenes, table) = (self.cfg, self.scenes, self.table.clone());
        let total = self.total_steps;
        let every = cfg.schedule.checkpoint_every;
        prefetched(
            self.state.step..total,
            cfg.schedule.prefetch,
            |s| vl_view_for(cfg, scenes, &table, s),
            |s, v| {
                self.apply(s, v)?;
                if every > 0 && (s + 1) % every == 0 && s + 1 < total {
                    if let Some(sink) = sink.as_mut() {
                        sink(&self.state.to_checkpoint())?;
                    }
                }
                Ok(())
            },
        )
    }
}

fn scene_for(scenes: &[TrainScene], step: u64) -> &TrainScene {
    &scenes[(step % scenes.len() as u64) as usize]
}

fn vl_view_for(cfg: &RunConfig, scenes: &[TrainScene], table: &AugmentationTable, step: u64) -> Result<View> {
    build_vl_view(&scene_for(scenes, step).scene, table, derive_seed(cfg.seed, step, 0))
}

pub fn train_vl(cfg: &RunConfig, scenes: &[TrainScene], sink: Option<CheckpointSink<'_>>) -> Result<(TrainState, TrainLog)> {
    let mut t = VlTrainer::new(cfg, scenes)?;
    t.run(sink)?;
    Ok((t.state, t.log))
}

pub const SSL_COLUMNS: [&str; 9] = ["step", "lr", "mgm", "sim", "coding_rate", "dino", "ibot", "la", "total"];

/// Student/teacher self-supervised pretraining with any subset of the four objectives.
pub struct SslTrainer<'a> {
    pub cfg: &'a RunConfig,
    pub scenes: &'a [TrainScene],
    pub state: TrainState,
    pub table: AugmentationTable,
    pub schedule: OneCycle,
    pub total_steps: u64,
    pub log: TrainLog,
}

/// Logged loss components of one self-supervised step.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SslParts {
    pub mgm: f64,
    pub sim: f64,
    pub coding_rate: f64,
    pub dino: f64,
    pub ibot: f64,
    pub la: f64,
    pub total: f64,
}

impl<'a> SslTrainer<'a> {
    pub fn new(cfg: &'a RunConfig, scenes: &'a [TrainScene]) -> Result<Self> {
        cfg.validate()?;
        let s = &cfg.ssl;
        let m = &cfg.model;
        if scenes.is_empty() {
            return Err(LearnError::Config("no training scenes".into()));
        }
        if s.mgm && !m.recon_heads {
            return Err(LearnError::Config("masked modeling needs model.recon_heads".into()));
        }
        if (s.dino || s.ibot) && !m.projectors {
            return Err(LearnError::Config("self-distillation needs model.projectors".into()));
        }
        if s.dino && s.n_local == 0 && s.n_global < 2 {
            log::warn!("self-distillation with a single global view compares it only with itself");
        }
        for ts in scenes {
            ts.validate()?;
        }
        if s.la {
            if !m.language_head {
                return Err(LearnError::Config("language alignment needs model.language_head".into()));
            }
            for ts in scenes {
                let c = ts.compressed.as_ref().ok_or_else(|| {
                    LearnError::Config(format!(
                        "language alignment enabled but scene {} has no compressed features",
                        ts.scene.scene_id
                    ))
                })?;
                if c.dim() != m.out_dim {
                    return Err(LearnError::Config(format!(
                        "scene {} compressed features have dim {}, model.out_dim is {}",
                        ts.scene.scene_id,
                        c.dim(),
                        m.out_dim
                    )));
                }
            }
        }
        let network = Network::new(m.clone())?;
        let params = network.init(cfg.seed);
        Ok(Self {
            cfg,
            scenes,
            state: TrainState {
                network,
                teacher: Some(params.clone()),
                params,
                optimizer: AdamW::new(cfg.optim.adamw()),
                step: 0,
                seed: cfg.seed,
            },
            table: cfg.augmentation_table(),
            schedule: cfg.optim.schedule(),
            total_steps: cfg.schedule.epochs * scenes.len() as u64,
            log: TrainLog::new(&SSL_COLUMNS),
        })
    }

    pub fn views(&self, step: u64) -> Result<SslViews> {
        ssl_views_for(self.cfg, self.scenes, &self.table, step)
    }

    /// Loss graph of one step under the given student and teacher parameters.
    pub fn loss_graph(&self, step: u64, views: &SslViews, params: &ParamStore, teacher: &ParamStore) -> Result<(Graph, Var, SslParts)> {
        let (s, w, net) = (&self.cfg.ssl, &self.cfg.loss, &self.state.network);
        let mut g = Graph::new();
        let mut parts = SslParts::default();
        let mut total = g.zero_scalar();

        let mut student = Vec::with_capacity(views.globals.len());
        for (gi, v) in views.globals.iter().enumerate() {
            let weak_needed = gi == views.weak && (s.mgm || s.la);
            student.push(if s.dino || weak_needed || !v.masked.is_empty() {
                Some(net.forward(&mut g, params, &v.attrs, &v.positions, &v.masked)?)
            } else {
                None
            });
        }
        let masked_globals = views.masked_globals();

        // Teacher sees unmasked globals; its outputs enter the loss as constants.
        let mut t_pooled: Vec<Mat> = Vec::new();
        let mut t_tokens: Vec<Option<Mat>> = vec![None; views.globals.len()];
        if s.dino || s.ibot {
            let mut tg = Graph::new();
            for (gi, v) in views.globals.iter().enumerate() {
                let want_tokens = s.ibot && masked_globals.contains(&gi);
                if !s.dino && !want_tokens {
                    continue;
                }
                let out = net.forward(&mut tg, teacher, &v.attrs, &v.positions, &[])?;
                if s.dino {
                    let p = net.dino_project(&mut tg, teacher, out.pooled)?;
                    t_pooled.push(tg.value(p).clone());
                }
                if want_tokens {
                    let p = net.ibot_project(&mut tg, teacher, out.decoded)?;
                    t_tokens[gi] = Some(tg.value(p).clone());
                }
            }
        }

        let weak = views.weak;
        if s.mgm {
            let out = student[weak].as_ref().expect("weak view forwarded");
            let l = mgm_loss(&mut g, out.recon.expect("recon heads"), &views.globals[weak].attrs, &views.globals[weak].masked).value;
            parts.mgm = g.scalar(l);
            let l = g.scale(l, w.omega_mgm);
            total = g.add(total, l);
        }
        if s.dino {
            let mut global_proj = Vec::new();
            for out in student.iter().flatten() {
                global_proj.push(net.dino_project(&mut g, params, out.pooled)?);
            }
            let mut local_proj = Vec::new();
            for v in &views.locals {
                let out = net.forward(&mut g, params, &v.attrs, &v.positions, &[])?;
                local_proj.push(net.dino_project(&mut g, params, out.pooled)?);
            }
            let students = if local_proj.is_empty() { &global_proj } else { &local_proj };
            let sim = sim_loss(&mut g, students, &t_pooled).value;
            let all: Vec<Var> = global_proj.iter().chain(&local_proj).copied().collect();
            let batch = g.concat_rows(&all);
            let cr = coding_rate_loss(&mut g, batch, w.coding_eps).value;
            let a = g.scale(sim, w.omega_sim);
            let b = g.scale(cr, w.omega_cr);
            let dino = g.add(a, b);
            parts.sim = g.scalar(sim);
            parts.coding_rate = g.scalar(cr);
            parts.dino = g.scalar(dino);
            let l = g.scale(dino, w.omega_dino);
            total = g.add(total, l);
        }
        if s.ibot && !masked_globals.is_empty() {
            let mut acc = g.zero_scalar();
            for &gi in &masked_globals {
                let out = student[gi].as_ref().expect("masked view forwarded");
                let sp = net.ibot_project(&mut g, params, out.decoded)?;
                let l = ibot_loss(&mut g, sp, t_tokens[gi].as_ref().expect("teacher tokens"), &views.globals[gi].masked).value;
                acc = g.add(acc, l);
            }
            let l = g.scale(acc, 1.0 / masked_globals.len() as f64);
            parts.ibot = g.scalar(l);
            let l = g.scale(l, w.omega_ibot);
            total = g.add(total, l);
        }
        if s.la {
            let v = &views.globals[weak];
            let field = scene_for(self.scenes, step).compressed.as_ref().expect("checked at construction");
            let out = student[weak].as_ref().expect("weak view forwarded");
            let target = rows_f64(field, &v.indices);
            let unlabeled: Vec<bool> = v.indices.iter().map(|&i| field.unlabeled[i]).collect();
            let l = la_loss(&mut g, out.language.expect("language head"), &target, &v.masked, &unlabeled).value;
            parts.la = g.scalar(l);
            let l = g.scale(l, w.omega_la);
            total = g.add(total, l);
        }
        parts.total = g.scalar(total);
        Ok((g, total, parts))
    }

    fn apply(&mut self, step: u64, views: SslViews) -> Result<()> {
        let teacher = self.state.teacher.as_ref().expect("teacher present");
        let (g, total, parts) = self.loss_graph(step, &views, &self.state.params, teacher)?;
        non_finite(step, "total", parts.total)?;
        let grads = g.backward(total).map_err(|e| match e {
            LearnError::NonFinite(m) => LearnError::NonFinite(format!("{m} at step {step}")),
            other => other,
        })?;
        let lr = self.schedule.lr(step, self.total_steps);
        self.state.optimizer.step(&mut self.state.params, &grads.params, lr)?;
        ema_update(self.state.teacher.as_mut().unwrap(), &self.state.params, self.cfg.ssl.teacher_momentum)?;
        self.state.step = step + 1;
        self.log.rows.push(vec![
            step as f64,
            lr,
            parts.mgm,
            parts.sim,
            parts.coding_rate,
            parts.dino,
            parts.ibot,
            parts.la,
            parts.total,
        ]);
        Ok(())
    }

    /// Runs one step (views built inline) and returns its logged components.
    pub fn step_once(&mut self) -> Result<SslParts> {
        let step = self.state.step;
        let views = self.views(step)?;
        self.apply(step, views)?;
        let r = self.log.rows.last().unwrap();
        Ok(SslParts {
            mgm: r[2],
            sim: r[3],
            coding_rate: r[4],
            dino: r[5],
            ibot: r[6],
            la: r[7],
            total: r[8],
        })
    }

    pub fn run(&mut self, mut sink: Option<CheckpointSink<'_>>) -> Result<()> {
        let (cfg, scenes, table) = (self.cfg, self.scenes, self.table.clone());
        let total = self.total_steps;
        let every = cfg.schedule.checkpoint_every;
        prefetched(
            self.state.step..total,
            cfg.schedule.prefetch,
            |s| ssl_views_for(cfg, scenes, &table, s),
            |s, v| {
                self.apply(s, v)?;
                if every > 0 && (s + 1) % every == 0 && s + 1 < total {
                    if let Some(sink) = sink.as_mut() {
                        sink(&self.state.to_checkpoint())?;
                    }
                }
                Ok(())
            },
        )
    }
}

fn ssl_views_for(cfg: &RunConfig, scenes: &[TrainScene], table: &AugmentationTable, step: u64) -> Result<SslViews> {
    build_ssl_views(&scene_for(scenes, step).scene, cfg, table, derive_seed(cfg.seed, step, 0))
}

pub fn train_ssl(cfg: &RunConfig, scenes: &[TrainScene], sink: Option<CheckpointSink<'_>>) -> Result<(TrainState, TrainLog)> {
    let mut t = SslTrainer::new(cfg, scenes)?;
    t.run(sink)?;
    Ok((t.state, t.log))
}

/// Reconstruction loss on a grid-sampled copy of `scene` under a fixed mask.
pub fn mgm_eval_loss(network: &Network, params: &ParamStore, scene: &GaussianScene, grid_size: f64, ratio: f64, seed: u64) -> Result<f64> {
    let kept = splatsem_core::sampling::grid_sample(scene, grid_size)?;
    let mut view = View::from_set(&GaussianSet::from_view(scene, &kept));
    view.set_mask(ratio, seed)?;
    let mut g = Graph::new();
    let out = network.forward(&mut g, params, &view.attrs, &view.positions, &view.masked)?;
    let recon = out
        .recon
        .ok_or_else(|| LearnError::Config("network has no reconstruction heads".into()))?;
    let l = mgm_loss(&mut g, recon, &view.attrs, &view.masked).value;
    Ok(g.scalar(l))
}

/// Runs the backbone over every Gaussian and writes unit language features.
///
/// Scenes above `max_tokens` are split into contiguous chunks along x.
pub fn infer(network: &Network, params: &ParamStore, scene: &GaussianScene, max_tokens: usize) -> Result<SemanticFeatureField> {
    if !network.spec.language_head {
        return Err(LearnError::Config("inference needs a language head".into()));
    }
    if scene.is_empty() {
        return Err(LearnError::Shape(format!("scene {} is empty", scene.scene_id)));
    }
    let max_tokens = max_tokens.max(1);
    let mut order: Vec<usize> = (0..scene.len()).collect();
    if scene.len() > max_tokens {
        order.sort_by(|&a, &b| {
            let (pa, pb) = (&scene.primitives[a].center, &scene.primitives[b].center);
            pa[0].total_cmp(&pb[0]).then(pa[1].total_cmp(&pb[1])).then(pa[2].total_cmp(&pb[2])).then(a.cmp(&b))
        });
    }
    let mut rows = Mat::zeros((scene.len(), network.spec.out_dim));
    let full = GaussianSet::from_scene(scene);
    for chunk in order.chunks(max_tokens) {
        let mut idx = chunk.to_vec();
        idx.sort_unstable();
        let view = View::from_set(&full.subset(&idx));
        let mut g = Graph::new();
        let out = network.forward(&mut g, params, &view.attrs, &view.positions, &[])?;
        let lang = g.value(out.language.expect("language head"));
        for (r, &i) in idx.iter().enumerate() {
            rows.row_mut(i).assign(&lang.row(r));
        }
    }
    if let Some(bad) = rows.iter().position(|v| !v.is_finite()) {
        return Err(LearnError::NonFinite(format!("inferred feature of Gaussian {}", bad / rows.ncols())));
    }
    Ok(SemanticFeatureField::from_unnormalized(scene.scene_id.clone(), &rows))
}
