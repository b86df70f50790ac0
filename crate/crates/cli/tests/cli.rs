mod common;

use std::fs;
use std::path::Path;

use common::*;
use splatsem_core::imaging::{save_png, Image};
use splatsem_core::ply::{load_scene_ply, Activation};
use splatsem_core::SemanticFeatureField;

const SMALL: Slab = Slab { nx: 4, ny: 4, nz: 4, spacing: 0.1, z0: 2.5, classes: 4 };

fn frames(dir: &Path, n: usize) {
    fs::create_dir_all(dir.join("frames")).unwrap();
    for i in 0..n {
        let mut img = Image::filled(6, 6, 1, 0.5);
        img.data[i % 36] = 1.0;
        save_png(&img, &dir.join(format!("frames/{i:04}.png"))).unwrap();
    }
}

#[test]
fn curate_reports_drop_below_frame_minimum() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    frames(&d.join("short"), 399);
    write(&d.join("curate.toml"), "scene_dir = \"short\"\n");
    let out = run_ok(&["curate", "--config", "curate.toml", "--out", "cur"], d);
    assert!(out.contains("drop"), "{out}");
    assert!(out.contains("frame_count"));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("cur/curation.json")).unwrap()).unwrap();
    assert_eq!(report["keep"], false);

    frames(&d.join("short"), 400);
    let out = run_ok(&["curate", "--config", "curate.toml", "--out", "cur2"], d);
    assert!(out.contains("keep"), "{out}");
}

#[test]
fn overfit_fixture_infer_then_eval_is_perfect() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let (scene, labels, table) = write_labeled_scene(d, &SMALL, 8, 3);
    class_features(&labels, &table).save(&d.join("features.ssff")).unwrap();
    let mut cfg = vl_config(8, 400);
    cfg.data.scenes = vec![scene_entry("scene.ply", Some("features.ssff"))];
    write(&d.join("train.toml"), &cfg.to_toml());
    write(&d.join("infer.toml"), "checkpoint = \"train/model.ssck\"\nply = \"scene.ply\"\n");
    write(
        &d.join("eval.toml"),
        "features = \"infer/scene.ssff\"\nply = \"scene.ply\"\nclasses = \"classes.json\"\npoints = \"points.sspt\"\n",
    );
    run_ok(&["train-vl", "--config", "train.toml", "--out", "train"], d);
    run_ok(&["infer", "--config", "infer.toml", "--out", "infer"], d);
    let field = SemanticFeatureField::load(&d.join("infer/scene.ssff")).unwrap();
    assert_eq!(field.len(), scene.len());
    let summary = run_ok(&["eval", "--config", "eval.toml", "--out", "eval"], d);
    let m = metrics(&d.join("eval"));
    assert_eq!(m["f_miou"], 1.0, "{summary}");
    assert_eq!(m["miou"], 1.0);
    let log = fs::read_to_string(d.join("train/train_log.csv")).unwrap();
    assert!(log.starts_with("step,lr,cosine,l2,contrastive,total"));
    assert_eq!(log.lines().count(), 401);
}

#[test]
fn query_with_full_fraction_paints_every_labeled_splat() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let (scene, labels, table) = write_labeled_scene(d, &SMALL, 8, 5);
    let mut field = class_features(&labels, &table);
    for i in [3usize, 17, 40] {
        field.unlabeled[i] = true;
        field.features.row_mut(i).fill(0.0);
    }
    field.save(&d.join("features.ssff")).unwrap();
    write(
        &d.join("query.toml"),
        "features = \"features.ssff\"\nply = \"scene.ply\"\nclasses = \"classes.json\"\nclass = \"sofa\"\ntop_fraction = 1.0\n",
    );
    run_ok(&["query", "--config", "query.toml", "--out", "q"], d);
    let painted = load_scene_ply(&d.join("q/scene_query.ply"), Activation::Raw).unwrap();
    for (i, (g, orig)) in painted.primitives.iter().zip(&scene.primitives).enumerate() {
        let rgb = g.rgb();
        if field.unlabeled[i] {
            assert_eq!(g.color_sh, orig.color_sh, "unlabeled splat {i} changed");
        } else {
            assert!((rgb[0] - 1.0).abs() < 1e-6 && rgb[1].abs() < 1e-6 && rgb[2].abs() < 1e-6, "splat {i}: {rgb:?}");
        }
    }

    write(
        &d.join("top.toml"),
        "features = \"features.ssff\"\nply = \"scene.ply\"\nclasses = \"classes.json\"\nclass = \"sofa\"\ntop_fraction = 0.2\n",
    );
    run_ok(&["query", "--config", "top.toml", "--out", "top"], d);
    let sel: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("top/selection.json")).unwrap()).unwrap();
    let sofa = 2u32;
    for i in sel["selected"].as_array().unwrap() {
        assert_eq!(labels[i.as_u64().unwrap() as usize], sofa);
    }
}

#[test]
fn manifests_are_identical_across_runs_and_locations() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [a.path(), b.path()] {
        write_pipeline(dir, &SMALL, 8, 5, 11);
        for (cmd, cfg, out) in &PIPELINE[..2] {
            run_ok(&[cmd, "--config", cfg, "--out", out], dir);
        }
        run_ok(&["lift", "--config", "lift.toml", "--out", "out/lift_again", "--threads", "2"], dir);
    }
    for stage in ["fuse", "lift"] {
        let ma = fs::read(a.path().join(format!("out/{stage}/manifest.json"))).unwrap();
        let mb = fs::read(b.path().join(format!("out/{stage}/manifest.json"))).unwrap();
        assert_eq!(ma, mb, "{stage} manifests differ");
        let text = String::from_utf8(ma).unwrap();
        assert!(!text.contains(&a.path().display().to_string()));
    }
    let m1 = fs::read(a.path().join("out/lift/manifest.json")).unwrap();
    let m2 = fs::read(a.path().join("out/lift_again/manifest.json")).unwrap();
    assert_eq!(m1, m2);
    let field = SemanticFeatureField::load(&a.path().join("out/lift/scene.ssff")).unwrap();
    assert!(field.labeled_indices().len() > field.len() / 2);
}

#[test]
fn dry_run_touches_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    write_pipeline(d, &SMALL, 8, 5, 1);
    let out = run_ok(&["fuse", "--config", "fuse.toml", "--out", "dry", "--dry-run"], d);
    assert!(out.contains("valid"));
    assert!(!d.join("dry").exists());
    for (cmd, cfg, out) in &PIPELINE[..2] {
        run_ok(&[cmd, "--config", cfg, "--out", out], d);
    }
    run_ok(&["train-vl", "--config", "train.toml", "--out", "dry", "--dry-run", "--seed", "3"], d);
    assert!(!d.join("dry").exists());
}

#[test]
fn exit_codes_distinguish_bad_input_from_runtime_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    write_pipeline(d, &SMALL, 8, 5, 2);

    let unknown_flag = splatsem(&["fuse", "--config", "fuse.toml", "--out", "o", "--bogus"], d);
    assert_eq!(unknown_flag.status.code(), Some(2));

    write(&d.join("typo.toml"), "ply = \"scene.ply\"\ncamras = \"cameras.json\"\n");
    let typo = splatsem(&["render", "--config", "typo.toml", "--out", "o"], d);
    assert_eq!(typo.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&typo.stderr).contains("typo.toml"));

    let missing = splatsem(&["lift", "--config", "lift.toml", "--out", "o"], d);
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("fuse"), "{}", String::from_utf8_lossy(&missing.stderr));

    fs::write(d.join("broken.ply"), b"ply\nformat ascii 1.0\nend_header\n").unwrap();
    write(&d.join("render.toml"), "ply = \"broken.ply\"\ncameras = \"cameras.json\"\n");
    let broken = splatsem(&["render", "--config", "render.toml", "--out", "o"], d);
    assert_eq!(broken.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&broken.stderr).contains("broken.ply"));

    let (_, labels, table) = write_labeled_scene(d, &SMALL, 8, 2);
    class_features(&labels, &table).save(&d.join("features.ssff")).unwrap();
    let mut cfg = vl_config(8, 5);
    cfg.optim.lr = 1e300;
    cfg.data.scenes = vec![scene_entry("scene.ply", Some("features.ssff"))];
    write(&d.join("diverge.toml"), &cfg.to_toml());
    let diverged = splatsem(&["train-vl", "--config", "diverge.toml", "--out", "o"], d);
    assert_eq!(diverged.status.code(), Some(3), "{}", String::from_utf8_lossy(&diverged.stderr));
    assert!(String::from_utf8_lossy(&diverged.stderr).contains("step"));
}

#[test]
fn render_writes_one_png_per_camera() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    write_pipeline(d, &SMALL, 8, 5, 4);
    write(&d.join("render.toml"), "ply = \"scene.ply\"\ncameras = \"cameras.json\"\n");
    run_ok(&["render", "--config", "render.toml", "--out", "r", "--threads", "1"], d);
    for f in 0..CAMERA_SHIFTS.len() {
        let img = splatsem_core::imaging::load_png(&d.join(format!("r/frame{f}.png"))).unwrap();
        assert_eq!((img.width, img.height, img.channels), (64, 48, 3));
        assert!(img.data.iter().any(|&v| v > 0.1));
    }
    let manifest = fs::read_to_string(d.join("r/manifest.json")).unwrap();
    assert!(manifest.contains("frame3.png"));
}

#[test]
fn autoencoder_and_ssl_training_write_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let (_, labels, table) = write_labeled_scene(d, &SMALL, 8, 6);
    class_features(&labels, &table).save(&d.join("features.ssff")).unwrap();
    let mut cfg = vl_config(8, 3);
    cfg.autoencoder.encoder = vec![8, 6, 3];
    cfg.autoencoder.decoder = vec![3, 6, 8];
    cfg.autoencoder.epochs = 5;
    cfg.autoencoder.batch_size = 16;
    cfg.data.scenes = vec![scene_entry("scene.ply", Some("features.ssff"))];
    write(&d.join("ae.toml"), &cfg.to_toml());
    run_ok(&["train-ae", "--config", "ae.toml", "--out", "ae"], d);
    let compressed = SemanticFeatureField::load(&d.join("ae/compressed/scene.ssff")).unwrap();
    assert_eq!(compressed.dim(), 3);
    assert!(d.join("ae/autoencoder.ssck").is_file());

    cfg.model.out_dim = 3;
    cfg.model.projectors = true;
    cfg.ssl.la = true;
    cfg.ssl.n_local = 1;
    cfg.schedule.checkpoint_every = 2;
    cfg.data.scenes = vec![{
        let mut e = scene_entry("scene.ply", None);
        e.compressed = Some("ae/compressed/scene.ssff".into());
        e
    }];
    write(&d.join("ssl.toml"), &cfg.to_toml());
    run_ok(&["train-ssl", "--config", "ssl.toml", "--out", "ssl", "--seed", "9"], d);
    assert!(d.join("ssl/model.ssck").is_file());
    assert!(d.join("ssl/checkpoints/step_00000002.ssck").is_file());
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("ssl/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 9);
    assert!(manifest["artifacts"].as_array().unwrap().iter().any(|a| a["path"] == "checkpoints/step_00000002.ssck"));
}
