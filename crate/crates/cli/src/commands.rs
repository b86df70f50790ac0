//! Subcommand configs and their runs. Relative paths in a config resolve against its directory.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::json;
use splatsem_core::camera::load_cameras;
use splatsem_core::curate::{curate_dir, CurationConfig};
use splatsem_core::eval::{classify_gaussians, knn_vote, seg_metrics, text_query, highlight_selection, ClassTable, LabelSet, DEFAULT_KNN, DEFAULT_QUERY_FRACTION};
use splatsem_core::fusion::{build_feature_map, load_triples, FeatureMap2D, SegmentMask};
use splatsem_core::imaging::{save_png, Image};
use splatsem_core::lift::lift_scene;
use splatsem_core::ply::{load_scene_ply, write_scene_ply, Activation};
use splatsem_core::raster::{composite, DEFAULT_MAX_CONTRIBS};
use splatsem_core::{GaussianScene, SemanticFeatureField};
use splatsem_learn::autoencoder::{compress_features, feature_corpus, train_autoencoder};
use splatsem_learn::checkpoint::{Checkpoint, SECTION_PARAMS};
use splatsem_learn::pretrain::{infer, load_scenes, network_from_checkpoint, train_ssl, train_vl, CheckpointSink, TrainLog, TrainScene, TrainState, MAX_INFER_TOKENS};
use splatsem_learn::RunConfig;

use crate::failure::{Context, Failure};
use crate::run::Run;

pub trait Command: Sized {
    const NAME: &'static str;

    /// Parses, resolves paths and checks values; `path` is the config file.
    fn parse(text: &str, path: &Path) -> Result<Self, Failure>;

    /// Files and directories that must exist before anything runs.
    fn required_inputs(&self) -> Vec<PathBuf>;

    fn seed(&self) -> Option<u64> {
        None
    }

    fn set_seed(&mut self, _seed: u64) {}

    fn execute(self, run: &mut Run) -> Result<(), Failure>;
}

fn parse_toml<T: DeserializeOwned>(text: &str, path: &Path) -> Result<T, Failure> {
    toml::from_str(text).map_err(|e| Failure::input(format!("config {}: {e}", path.display())))
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

fn base_dir(path: &Path) -> &Path {
    path.parent().unwrap_or(Path::new(""))
}

fn raw() -> Activation {
    Activation::Raw
}

fn default_max_contribs() -> usize {
    DEFAULT_MAX_CONTRIBS
}

/// Ids become file names, so they may not contain separators.
fn file_stem_safe(id: &str, what: &str) -> Result<(), Failure> {
    if id.is_empty() || id == "." || id == ".." || id.contains(['/', '\\']) {
        return Err(Failure::input(format!("{what} {id:?} cannot be used as a file name")));
    }
    Ok(())
}

fn load_scene(run: &mut Run, ply: &Path, activation: Activation, scene_id: Option<&str>) -> Result<GaussianScene, Failure> {
    run.input("ply", ply)?;
    let mut scene = load_scene_ply(ply, activation).with_input(ply.display())?;
    if let Some(id) = scene_id {
        scene.scene_id = id.to_string();
    }
    file_stem_safe(&scene.scene_id, "scene id")?;
    Ok(scene)
}

fn load_field(run: &mut Run, path: &Path, scene: &GaussianScene) -> Result<SemanticFeatureField, Failure> {
    run.input("features", path)?;
    let field = SemanticFeatureField::load(path).with_input(path.display())?;
    if field.len() != scene.len() {
        return Err(Failure::input(format!(
            "{}: {} feature rows for {} Gaussians",
            path.display(),
            field.len(),
            scene.len()
        )));
    }
    Ok(field)
}

/// Records a class table and its embedding blob as inputs.
fn load_classes(run: &mut Run, path: &Path) -> Result<ClassTable, Failure> {
    run.input("classes", path)?;
    let table = ClassTable::load(path).with_input(path.display())?;
    let text = fs::read_to_string(path).map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
    if let Some(blob) = serde_json::from_str::<serde_json::Value>(&text).ok().and_then(|v| v["blob"].as_str().map(PathBuf::from)) {
        run.input("class embeddings", &base_dir(path).join(blob))?;
    }
    Ok(table)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FuseFrame {
    /// Output map is written as `<name>.ssfm`.
    pub name: String,
    pub mask: PathBuf,
    pub triples: PathBuf,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FuseConfig {
    pub frames: Vec<FuseFrame>,
}

impl Command for FuseConfig {
    const NAME: &'static str = "fuse";

    fn parse(text: &str, path: &Path) -> Result<Self, Failure> {
        let mut cfg: Self = parse_toml(text, path)?;
        if cfg.frames.is_empty() {
            return Err(Failure::input(format!("config {}: no frames listed", path.display())));
        }
        let mut names = BTreeSet::new();
        for f in &mut cfg.frames {
            file_stem_safe(&f.name, "frame name")?;
            if !names.insert(f.name.clone()) {
                return Err(Failure::input(format!("config {}: frame {} listed twice", path.display(), f.name)));
            }
            resolve(base_dir(path), &mut f.mask);
            resolve(base_dir(path), &mut f.triples);
        }
        Ok(cfg)
    }

    fn required_inputs(&self) -> Vec<PathBuf> {
        self.frames.iter().flat_map(|f| [f.mask.clone(), f.triples.clone()]).collect()
    }

    fn execute(self, run: &mut Run) -> Result<(), Failure> {
        let mut report = serde_json::Map::new();
        for f in &self.frames {
            run.input("mask", &f.mask)?;
            run.input("triples", &f.triples)?;
            let mask = SegmentMask::load(&f.mask).with_input(f.mask.display())?;
            let triples = load_triples(&f.triples).with_input(f.triples.display())?;
            let (map, diag) = build_feature_map(&mask, &triples).with_input(format!("frame {}", f.name))?;
            if !diag.unused_ids.is_empty() {
                warn!("frame {}: {} triple(s) not present in the mask", f.name, diag.unused_ids.len());
            }
            info!("frame {}: {} of {} pixels painted", f.name, map.valid_count(), mask.ids.len());
            run.write(&format!("{}.ssfm", f.name), &map.to_bytes())?;
            report.insert(f.name.clone(), json!({ "valid_pixels": map.valid_count(), "unused_ids": diag.unused_ids }));
        }
        run.write("fuse_report.json", pretty(&serde_json::Value::Object(report)).as_bytes())
    }
}

fn pretty(v: &serde_json::Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json value serializes");
    s.push('\n');
    s
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LiftConfig {
    pub ply: PathBuf,
    #[serde(default = "raw")]
    pub activation: Activation,
    #[serde(default)]
    pub scene_id: Option<String>,
    pub cameras: PathBuf,
    /// Directory holding `<frame_id>.ssfm` for every camera.
    pub feature_maps: PathBuf,
    #[serde(default = "default_max_contribs")]
    pub max_contribs: usize,
}

impl Command for LiftConfig {
    const NAME: &'static str = "lift";

    fn parse(text: &str, path: &Path) -> Result<Self, Failure> {
        let mut cfg: Self = parse_toml(text, path)?;
        let base = base_dir(path);
        for p in [&mut cfg.ply, &mut cfg.cameras, &mut cfg.feature_maps] {
            resolve(base, p);
        }
        if cfg.max_contribs == 0 {
            return Err(Failure::input(format!("config {}: max_contribs must be positive", path.display())));
        }
        Ok(cfg)
    }

    fn required_inputs(&self) -> Vec<PathBuf> {
        vec![self.ply.clone(), self.cameras.clone(), self.feature_maps.clone()]
    }

    fn execute(self, run: &mut Run) -> Result<(), Failure> {
        let scene = load_scene(run, &self.ply, self.activation, self.scene_id.as_deref())?;
        run.input("cameras", &self.cameras)?;
        let records = load_cameras(&self.cameras).with_input(self.cameras.display())?;
        let mut views = Vec::with_capacity(records.len());
        for r in &records {
            let map_path = self.feature_maps.join(format!("{}.ssfm", r.frame_id));
            if !map_path.is_file() {
                return Err(Failure::input(format!("camera {} has no feature map at {}", r.frame_id, map_path.display())));
            }
            run.input("feature map", &map_path)?;
            let map = FeatureMap2D::load(&map_path).with_input(map_path.display())?;
            views.push((r.camera()?, map));
        }
        let field = lift_scene(&scene, &views, self.max_contribs).with_input(format!("scene {}", scene.scene_id))?;
        let labeled = field.labeled_indices().len();
        info!("lifted {} views onto {} Gaussians; {labeled} labeled", views.len(), scene.len());
        run.write(&format!("{}.ssff", scene.scene_id), &field.to_bytes())
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenderConfig {
    pub ply: PathBuf,
    #[serde(default = "raw")]
    pub activation: Activation,
    pub cameras: PathBuf,
    #[serde(default = "default_max_contribs")]
    pub max_contribs: usize,
}

impl Command for RenderConfig {
    const NAME: &'static str = "render";

    fn parse(text: &str, path: &Path) -> Result<Self, Failure> {
        let mut cfg: Self = parse_toml(text, path)?;
        resolve(base_dir(path), &mut cfg.ply);
        resolve(base_dir(path), &mut cfg.cameras);
        if cfg.max_contribs == 0 {
            return Err(Failure::input(format!("config {}: max_contribs must be positive", path.display())));
        }
        Ok(cfg)
    }

    fn required_inputs(&self) -> Vec<PathBuf> {
        vec![self.ply.clone(), self.cameras.clone()]
    }

    fn execute(self, run: &mut Run) -> Result<(), Failure> {
        let scene = load_scene(run, &self.ply, self.activation, None)?;
        run.input("cameras", &self.cameras)?;
        let records = load_cameras(&self.cameras).with_input(self.cameras.display())?;
        for r in &records {
            file_stem_safe(&r.frame_id, "frame id")?;
            let out = composite(&scene, &r.camera()?, self.max_contribs).with_input(format!("camera {}", r.frame_id))?;
            if out.diagnostics.singular_skips > 0 {
                warn!("camera {}: {} singular footprint evaluations skipped", r.frame_id, out.diagnostics.singular_skips);
            }
            let t = out.target;
            let img = Image::new(t.width as usize, t.height as usize, 3, t.rgb)?;
            let path = run.artifact(&format!("{}.png", r.frame_id))?;
            save_png(&img, &path)?;
        }
        info!("rendered {} view(s)", records.len());
        Ok(())
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurateConfig {
    /// Holds `frames/`, and optionally `renders/` and `gt/`.
    pub scene_dir: PathBuf,
    #[serde(default)]
    pub thresholds: CurationConfig,
}

fn pngs_under(dir: &Path) -> Vec<PathBuf> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .into_iter()
        .flatten()
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    out.sort();
    out
}

impl Command for CurateConfig {
    const NAME: &'static str = "curate";

    fn parse(text: &str, path: &Path) -> Result<Self, Failure> {
        let mut cfg: Self = parse_toml(text, path)?;
        resolve(base_dir(path), &mut cfg.scene_dir);
        Ok(cfg)
    }

    fn required_inputs(&self) -> Vec<PathBuf> {
        vec![self.scene_dir.clone()]
    }

    fn execute(self, run: &mut Run) -> Result<(), Failure> {
        for sub in ["frames", "renders", "gt"] {
            for p in pngs_under(&self.scene_dir.join(sub)) {
                run.input(sub, &p)?;
            }
        }
        let report = curate_dir(&self.scene_dir, &self.thresholds)?;
        let name = self.scene_dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        if report.keep {
            println!("{name}: keep");
        } else {
            println!("{name}: drop ({})", report.reasons.join(", "));
        }
        if !report.blurry_frames.is_empty() {
            println!("{name}: {} frame(s) below the sharpness threshold", report.blurry_frames.len());
        }
        let text = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
        run.write("curation.json", text.as_bytes())
    }
}

type Trainer = fn(&RunConfig, &[TrainScene], Option<CheckpointSink<'_>>) -> splatsem_learn::Result<(TrainState, TrainLog)>;

/// Training configs share the run-config format.
pub struct Training<const KIND: u8> {
    pub cfg: RunConfig,
}

pub const TRAIN_AE: u8 = 0;
pub const TRAIN_VL: u8 = 1;
pub const TRAIN_SSL: u8 = 2;

impl<const KIND: u8> Training<KIND> {
    fn record_scene_inputs(&self, run: &mut Run) -> Result<(), Failure> {
        for s in &self.cfg.data.scenes {
            if KIND != TRAIN_AE {
                run.input("ply", &s.ply)?;
            }
            for (role, p) in [("features", &s.features), ("labels", &s.labels), ("compressed", &s.compressed)] {
                if let Some(p) = p {
                    if KIND == TRAIN_AE && role != "features" {
                        continue;
                    }
                    run.input(role, p)?;
                }
            }
        }
        Ok(())
    }

    fn write_model(&self, run: &mut Run, state: &TrainState, log: &TrainLog, checkpoints: &[u64]) -> Result<(), Failure> {
        for step in checkpoints {
            run.artifact(&checkpoint_name(*step))?;
        }
        run.write("model.ssck", &state.to_checkpoint().to_bytes())?;
        run.write("train_log.csv", log.to_csv().as_bytes())?;
        info!("trained {} steps; parameter checksum {:016x}", state.step, state.checksum());
        Ok(())
    }

    fn train(&self, run: &mut Run, f: Trainer) -> Result<(), Failure> {
        self.record_scene_inputs(run)?;
        let scenes = load_scenes(&self.cfg)?;
        fs::create_dir_all(run.out.join("checkpoints"))
            .map_err(|e| Failure::runtime(format!("cannot create {}: {e}", run.out.display())))?;
        let out = run.out.clone();
        let mut written = Vec::new();
        let mut sink = |ck: &Checkpoint| -> splatsem_learn::Result<()> {
            ck.save(&out.join(checkpoint_name(ck.step)))?;
            written.push(ck.step);
            Ok(())
        };
        let (state, log) = f(&self.cfg, &scenes, Some(&mut sink))?;
        self.write_model(run, &state, &log, &written)
    }
}

fn checkpoint_name(step: u64) -> String {
    format!("checkpoints/step_{step:08}.ssck")
}

impl<const KIND: u8> Command for Training<KIND> {
    const NAME: &'static str = match KIND {
        TRAIN_AE => "train-ae",
        TRAIN_VL => "train-vl",
        _ => "train-ssl",
    };

    fn parse(_text: &str, path: &Path) -> Result<Self, Failure> {
        let cfg = RunConfig::load(path)?;
        if cfg.data.scenes.is_empty() {
            return Err(Failure::input(format!("config {}: no scenes under [data]", path.display())));
        }
        for s in &cfg.data.scenes {
            file_stem_safe(&s.scene_id(), "scene id")?;
            if KIND == TRAIN_AE && s.features.is_none() {
                return Err(Failure::input(format!("config {}: scene {} has no features", path.display(), s.scene_id())));
            }
        }
        Ok(Self { cfg })
    }

    fn required_inputs(&self) -> Vec<PathBuf> {
        let mut out = Vec::new();
        for s in &self.cfg.data.scenes {
            if KIND != TRAIN_AE {
                out.push(s.ply.clone());
            }
            out.extend(s.features.iter().cloned());
            if KIND != TRAIN_AE {
                out.extend(s.labels.iter().cloned());
                out.extend(s.compressed.iter().cloned());
            }
        }
        out
    }

    fn seed(&self) -> Option<u64> {
        Some(self.cfg.seed)
    }

    fn set_seed(&mut self, seed: u64) {
        self.cfg.seed = seed;
    }

    fn execute(self, run: &mut Run) -> Result<(), Failure> {
        match KIND {
            TRAIN_AE => self.train_ae(run),
            TRAIN_VL => self.train(run, train_vl),
            _ => self.train(run, train_ssl),
        }
    }
}

impl<const KIND: u8> Training<KIND> {
    fn train_ae(&self, run: &mut Run) -> Result<(), Failure> {
        self.record_scene_inputs(run)?;
        let mut fields = Vec::new();
        for s in &self.cfg.data.scenes {
            let p = s.features.as_ref().expect("checked at parse");
            let mut f = SemanticFeatureField::load(p).with_input(p.display())?;
            f.scene_id = s.scene_id();
            fields.push(f);
        }
        let corpus = feature_corpus(&fields)?;
        info!("autoencoder corpus: {} rows of dim {}", corpus.nrows(), corpus.ncols());
        let (ae, report) = train_autoencoder(&self.cfg.autoencoder, &corpus, self.cfg.seed)?;
        if let Some(h) = &report.holdout {
            info!("held-out reconstruction: l2 {:.6}, cosine {:.6} over {} rows", h.l2, h.cosine, h.rows);
        }
        run.write("autoencoder.ssck", &ae.to_checkpoint(self.cfg.seed).to_bytes())?;
        for f in &fields {
            let c = compress_features(&ae, f)?;
            run.write(&format!("compressed/{}.ssff", f.scene_id), &c.to_bytes())?;
        }
        let mut log = String::from("epoch,l2\n");
        for (e, l) in &report.log {
            log.push_str(&format!("{e},{l}\n"));
        }
        run.write("ae_log.csv", log.as_bytes())?;
        let text = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
        run.write("ae_report.json", text.as_bytes())
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InferConfig {
    pub checkpoint: PathBuf,
    pub ply: PathBuf,
    #[serde(default = "raw")]
    pub activation: Activation,
    #[serde(default)]
    pub scene_id: Option<String>,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: usize,
}

fn default_max_tokens() -> usize {
    MAX_INFER_TOKENS
}

impl Command for InferConfig {
    const NAME: &'static str = "infer";

    fn parse(text: &str, path: &Path) -> Result<Self, Failure> {
        let mut cfg: Self = parse_toml(text, path)?;
        resolve(base_dir(path), &mut cfg.checkpoint);
        resolve(base_dir(path), &mut cfg.ply);
        if cfg.max_tokens == 0 {
            return Err(Failure::input(format!("config {}: max_tokens must be positive", path.display())));
        }
        Ok(cfg)
    }

    fn required_inputs(&self) -> Vec<PathBuf> {
        vec![self.checkpoint.clone(), self.ply.clone()]
    }

    fn execute(self, run: &mut Run) -> Result<(), Failure> {
        run.input("checkpoint", &self.checkpoint)?;
        let ck = Checkpoint::load(&self.checkpoint).with_input(self.checkpoint.display())?;
        let network = network_from_checkpoint(&ck).with_input(self.checkpoint.display())?;
        let params = ck.section(SECTION_PARAMS).with_input(self.checkpoint.display())?;
        let scene = load_scene(run, &self.ply, self.activation, self.scene_id.as_deref())?;
        let field = infer(&network, params, &scene, self.max_tokens)?;
        info!("inferred {}-d features for {} Gaussians", field.dim(), field.len());
        run.write(&format!("{}.ssff", scene.scene_id), &field.to_bytes())
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub features: PathBuf,
    pub ply: PathBuf,
    #[serde(default = "raw")]
    pub activation: Activation,
    pub classes: PathBuf,
    /// Labeled evaluation points (SSPT).
    pub points: PathBuf,
    #[serde(default = "default_k")]
    pub k: usize,
}

fn default_k() -> usize {
    DEFAULT_KNN
}

impl Command for EvalConfig {
    const NAME: &'static str = "eval";

    fn parse(text: &str, path: &Path) -> Result<Self, Failure> {
        let mut cfg: Self = parse_toml(text, path)?;
        for p in [&mut cfg.features, &mut cfg.ply, &mut cfg.classes, &mut cfg.points] {
            resolve(base_dir(path), p);
        }
        if cfg.k == 0 {
            return Err(Failure::input(format!("config {}: k must be positive", path.display())));
        }
        Ok(cfg)
    }

    fn required_inputs(&self) -> Vec<PathBuf> {
        vec![self.features.clone(), self.ply.clone(), self.classes.clone(), self.points.clone()]
    }

    fn execute(self, run: &mut Run) -> Result<(), Failure> {
        let scene = load_scene(run, &self.ply, self.activation, None)?;
        let field = load_field(run, &self.features, &scene)?;
        let table = load_classes(run, &self.classes)?;
        run.input("points", &self.points)?;
        let points = LabelSet::load(&self.points).with_input(self.points.display())?;
        points.check_classes(&table).with_input(self.points.display())?;

        let classes = classify_gaussians(&field, &table).with_input(self.features.display())?;
        let pred = knn_vote(&scene.centers(), &classes, &points.positions_f64(), self.k)?;
        let report = seg_metrics(&pred, &points.labels, &table)?;
        let summary = report.summary();
        println!("{summary}");
        run.write("report.csv", report.to_csv().as_bytes())?;
        run.write("summary.txt", format!("{summary}\n").as_bytes())?;
        let metrics = json!({
            "points": points.len(),
            "k": self.k,
            "miou": report.miou,
            "macc": report.macc,
            "f_miou": report.f_miou,
            "f_macc": report.f_macc,
        });
        run.write("metrics.json", pretty(&metrics).as_bytes())
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryConfig {
    pub features: PathBuf,
    pub ply: PathBuf,
    #[serde(default = "raw")]
    pub activation: Activation,
    #[serde(default = "default_fraction")]
    pub top_fraction: f64,
    /// Class table to look `class` up in.
    #[serde(default)]
    pub classes: Option<PathBuf>,
    #[serde(default)]
    pub class: Option<String>,
    /// Raw query embedding; alternative to `class`.
    #[serde(default)]
    pub embedding: Option<Vec<f64>>,
}

fn default_fraction() -> f64 {
    DEFAULT_QUERY_FRACTION
}

impl Command for QueryConfig {
    const NAME: &'static str = "query";

    fn parse(text: &str, path: &Path) -> Result<Self, Failure> {
        let mut cfg: Self = parse_toml(text, path)?;
        let base = base_dir(path);
        resolve(base, &mut cfg.features);
        resolve(base, &mut cfg.ply);
        if let Some(c) = &mut cfg.classes {
            resolve(base, c);
        }
        match (&cfg.class, &cfg.embedding, &cfg.classes) {
            (Some(_), None, Some(_)) | (None, Some(_), _) => {}
            (Some(_), None, None) => {
                return Err(Failure::input(format!("config {}: class lookup needs a classes table", path.display())))
            }
            _ => {
                return Err(Failure::input(format!(
                    "config {}: give exactly one of class or embedding",
                    path.display()
                )))
            }
        }
        if !(cfg.top_fraction > 0.0 && cfg.top_fraction <= 1.0) {
            return Err(Failure::input(format!("config {}: top_fraction must be in (0, 1]", path.display())));
        }
        Ok(cfg)
    }

    fn required_inputs(&self) -> Vec<PathBuf> {
        let mut v = vec![self.features.clone(), self.ply.clone()];
        v.extend(self.classes.iter().cloned());
        v
    }

    fn execute(self, run: &mut Run) -> Result<(), Failure> {
        let scene = load_scene(run, &self.ply, self.activation, None)?;
        let field = load_field(run, &self.features, &scene)?;
        let query = match (&self.embedding, &self.class, &self.classes) {
            (Some(e), _, _) => e.clone(),
            (None, Some(name), Some(path)) => {
                let table = load_classes(run, path)?;
                let id = table
                    .classes
                    .iter()
                    .find(|c| &c.name == name)
                    .map(|c| c.id)
                    .ok_or_else(|| Failure::input(format!("{}: no class named {name}", path.display())))?;
                table.embedding(id).expect("id from table").to_vec()
            }
            _ => unreachable!("checked at parse"),
        };
        let selected = text_query(&field, &query, self.top_fraction).with_input("query")?;
        info!("selected {} of {} labeled Gaussians", selected.len(), field.labeled_indices().len());
        let highlighted = highlight_selection(&scene, &selected)?;
        run.write(
            &format!("{}_query.ply", scene.scene_id),
            &write_scene_ply(&highlighted, self.activation),
        )?;
        let sel = json!({ "top_fraction": self.top_fraction, "selected": selected });
        run.write("selection.json", pretty(&sel).as_bytes())
    }
}
