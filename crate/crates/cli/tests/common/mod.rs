#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use splatsem_core::augment::CropBand;
use splatsem_core::camera::{save_cameras, Camera, CameraRecord};
use splatsem_core::eval::{ClassEntry, ClassTable, LabelSet};
use splatsem_core::fusion::{save_triples, SegmentFeatureTriple, SegmentMask};
use splatsem_core::ply::{save_scene_ply, Activation};
use splatsem_core::{GaussianPrimitive, GaussianScene, SemanticFeatureField};
use splatsem_learn::config::{RunConfig, SceneEntry};

pub const CLASS_NAMES: [&str; 4] = ["chair", "table", "sofa", "wall"];

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
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

/// A box of Gaussians centered on the optical axis at depth ~`z0`.
pub struct Slab {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub spacing: f32,
    pub z0: f32,
    pub classes: usize,
}

impl Slab {
    pub fn half_width(&self) -> f64 {
        (self.nx as f64 - 1.0) * self.spacing as f64 / 2.0
    }

    pub fn half_height(&self) -> f64 {
        (self.ny as f64 - 1.0) * self.spacing as f64 / 2.0
    }

    pub fn mid_depth(&self) -> f64 {
        self.z0 as f64 + (self.nz as f64 - 1.0) * self.spacing as f64 / 2.0
    }

    /// Classes are equal-width bands along x.
    pub fn class_of(&self, x: f64) -> u32 {
        let w = 2.0 * self.half_width() + self.spacing as f64;
        let t = (x + self.half_width() + self.spacing as f64 / 2.0) / w;
        ((t * self.classes as f64).floor() as i64).clamp(0, self.classes as i64 - 1) as u32
    }

    pub fn scene(&self, seed: u64) -> (GaussianScene, Vec<u32>) {
        let mut r = rng(seed);
        let mut prims = Vec::new();
        let mut labels = Vec::new();
        for i in 0..self.nx {
            for j in 0..self.ny {
                for k in 0..self.nz {
                    let x = i as f32 * self.spacing - self.half_width() as f32;
                    let y = j as f32 * self.spacing - self.half_height() as f32;
                    let z = self.z0 + k as f32 * self.spacing;
                    let q = unit(&mut r, 4);
                    let rgb = [0; 3].map(|_| r.random_range(0.3..0.7));
                    prims.push(
                        GaussianPrimitive::new(
                            [x, y, z],
                            [0; 3].map(|_| r.random_range(0.02..0.035f32)),
                            [q[0] as f32, q[1] as f32, q[2] as f32, q[3] as f32],
                            r.random_range(0.6..0.9),
                        )
                        .with_rgb(rgb),
                    );
                    labels.push(self.class_of(x as f64));
                }
            }
        }
        (GaussianScene::new("scene", prims), labels)
    }
}

pub fn class_table(n: usize, d: usize, seed: u64) -> ClassTable {
    let mut r = rng(seed);
    let classes = (0..n)
        .map(|i| ClassEntry { id: i as u32, name: CLASS_NAMES[i].into(), embedding: unit(&mut r, d) })
        .collect();
    ClassTable::new(d, classes, None).unwrap()
}

pub fn class_features(labels: &[u32], table: &ClassTable) -> SemanticFeatureField {
    let rows: Vec<f64> = labels.iter().flat_map(|&l| table.embedding(l).unwrap().to_vec()).collect();
    SemanticFeatureField::from_unnormalized("scene", &Array2::from_shape_vec((labels.len(), table.dim), rows).unwrap())
}

pub fn label_points(scene: &GaussianScene, labels: &[u32]) -> LabelSet {
    LabelSet::new(scene.primitives.iter().map(|g| g.center).collect(), labels.to_vec()).unwrap()
}

/// Run config with a small backbone trained on full, unaugmented scenes.
pub fn vl_config(out_dim: usize, epochs: u64) -> RunConfig {
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

pub fn scene_entry(ply: &str, features: Option<&str>) -> SceneEntry {
    SceneEntry {
        id: Some("scene".into()),
        ply: ply.into(),
        activation: Activation::Raw,
        features: features.map(PathBuf::from),
        labels: None,
        compressed: None,
    }
}

pub fn write(path: &Path, text: &str) {
    if let Some(p) = path.parent() {
        fs::create_dir_all(p).unwrap();
    }
    fs::write(path, text).unwrap();
}

pub fn splatsem(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_splatsem"))
        .args(args)
        .current_dir(cwd)
        .env("SPLATSEM_LOG", "warn")
        .output()
        .expect("binary runs")
}

pub fn run_ok(args: &[&str], cwd: &Path) -> String {
    let out = splatsem(args, cwd);
    assert!(
        out.status.success(),
        "splatsem {args:?} failed ({:?}):\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// Writes scene, labels and class table under `dir`.
pub fn write_labeled_scene(dir: &Path, slab: &Slab, d: usize, seed: u64) -> (GaussianScene, Vec<u32>, ClassTable) {
    let (scene, labels) = slab.scene(seed);
    let table = class_table(slab.classes, d, seed + 1);
    save_scene_ply(&scene, &dir.join("scene.ply"), Activation::Raw).unwrap();
    table.save(&dir.join("classes.json"), "classes.bin").unwrap();
    label_points(&scene, &labels).save(&dir.join("points.sspt")).unwrap();
    (scene, labels, table)
}

pub const CAMERA_SHIFTS: [[f64; 2]; 4] = [[0.0, 0.0], [0.05, 0.0], [-0.05, 0.03], [0.0, -0.04]];

/// Cameras, per-frame segment masks painted by class band, and triples whose three features agree.
pub fn write_frames(dir: &Path, slab: &Slab, table: &ClassTable) {
    let mut records = Vec::new();
    let mut frames = String::new();
    let z = slab.mid_depth();
    for (f, shift) in CAMERA_SHIFTS.iter().enumerate() {
        let mut cam = Camera::looking_down_z(64, 48, 60.0);
        cam.translation = [shift[0], shift[1], 0.0];
        let name = format!("frame{f}");
        let mut ids = Vec::with_capacity(64 * 48);
        for row in 0..48u32 {
            for col in 0..64u32 {
                let x = (col as f64 + 0.5 - cam.cx) * z / cam.fx - shift[0];
                let y = (row as f64 + 0.5 - cam.cy) * z / cam.fy - shift[1];
                let margin = slab.spacing as f64 / 2.0;
                let inside = x.abs() <= slab.half_width() + margin && y.abs() <= slab.half_height() + margin;
                ids.push(if inside { slab.class_of(x) + 1 } else { 0 });
            }
        }
        fs::create_dir_all(dir.join("masks")).unwrap();
        SegmentMask::new(48, 64, ids).unwrap().save(&dir.join(format!("masks/{name}.sseg"))).unwrap();
        records.push(CameraRecord::from_camera(name.clone(), &cam));
        frames.push_str(&format!(
            "[[frames]]\nname = \"{name}\"\nmask = \"masks/{name}.sseg\"\ntriples = \"segments.sstr\"\n\n"
        ));
    }
    let triples: Vec<SegmentFeatureTriple> = table
        .classes
        .iter()
        .map(|c| SegmentFeatureTriple::new(c.id + 1, c.embedding.clone(), c.embedding.clone(), c.embedding.clone()).unwrap())
        .collect();
    save_triples(&dir.join("segments.sstr"), &triples).unwrap();
    save_cameras(&dir.join("cameras.json"), &records).unwrap();
    write(&dir.join("fuse.toml"), &frames);
}

/// Config files for fuse → lift → train-vl → infer → eval, all relative to `dir`.
pub fn write_pipeline(dir: &Path, slab: &Slab, d: usize, epochs: u64, seed: u64) -> (GaussianScene, Vec<u32>, ClassTable) {
    let fixture = write_labeled_scene(dir, slab, d, seed);
    write_frames(dir, slab, &fixture.2);
    write(
        &dir.join("lift.toml"),
        "ply = \"scene.ply\"\nactivation = \"raw\"\ncameras = \"cameras.json\"\nfeature_maps = \"out/fuse\"\n",
    );
    let mut cfg = vl_config(d, epochs);
    cfg.data.scenes = vec![scene_entry("scene.ply", Some("out/lift/scene.ssff"))];
    write(&dir.join("train.toml"), &cfg.to_toml());
    write(&dir.join("infer.toml"), "checkpoint = \"out/train/model.ssck\"\nply = \"scene.ply\"\n");
    write(
        &dir.join("eval.toml"),
        "features = \"out/infer/scene.ssff\"\nply = \"scene.ply\"\nclasses = \"classes.json\"\npoints = \"points.sspt\"\nk = 25\n",
    );
    fixture
}

pub const PIPELINE: [(&str, &str, &str); 5] = [
    ("fuse", "fuse.toml", "out/fuse"),
    ("lift", "lift.toml", "out/lift"),
    ("train-vl", "train.toml", "out/train"),
    ("infer", "infer.toml", "out/infer"),
    ("eval", "eval.toml", "out/eval"),
];

pub fn run_pipeline(dir: &Path) {
    for (cmd, cfg, out) in PIPELINE {
        run_ok(&[cmd, "--config", cfg, "--out", out], dir);
    }
}

pub fn metrics(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("metrics.json")).unwrap()).unwrap()
}
