mod common;

use common::*;
use splatsem_core::eval::VOID;
use splatsem_learn::pretrain::{train_vl, VlTrainer, LOG_TAU};
use splatsem_learn::{LearnError, Network};

#[test]
fn overfit_single_scene() {
    let scenes = vec![train_scene(lattice_scene(4, 1), random_field(64, 32, 2))];
    let cfg = small_config(32, 2000);
    let (_, log) = train_vl(&cfg, &scenes, None).unwrap();
    let cos = log.column("cosine").unwrap();
    assert_eq!(cos.len(), 2000);
    assert!(cos[0] > 0.5);
    assert!(*cos.last().unwrap() < 0.05, "final cosine loss {}", cos.last().unwrap());
}

#[test]
fn zero_epochs_returns_initial_state() {
    let scenes = vec![train_scene(lattice_scene(3, 1), random_field(27, 8, 2))];
    let cfg = small_config(8, 0);
    let (state, log) = train_vl(&cfg, &scenes, None).unwrap();
    assert!(log.rows.is_empty());
    assert_eq!(state.step, 0);
    assert_eq!(state.params, Network::new(cfg.model.clone()).unwrap().init(cfg.seed));
}

fn augmented_config() -> splatsem_learn::RunConfig {
    let mut cfg = small_config(8, 12);
    cfg.augment.enabled = true;
    cfg.crop.global.ratio = [0.5, 1.0];
    cfg.crop.global.cap = 27;
    cfg
}

#[test]
fn identical_seeds_identical_checksums() {
    let scenes = vec![
        train_scene(lattice_scene(3, 1), random_field(27, 8, 2)),
        train_scene(lattice_scene(3, 5), random_field(27, 8, 6)),
    ];
    let cfg = augmented_config();
    let (a, la) = train_vl(&cfg, &scenes, None).unwrap();
    let (b, lb) = train_vl(&cfg, &scenes, None).unwrap();
    assert_eq!(a.checksum(), b.checksum());
    assert_eq!(la, lb);

    let mut inline = cfg.clone();
    inline.schedule.prefetch = 0;
    let (c, _) = train_vl(&inline, &scenes, None).unwrap();
    assert_eq!(a.checksum(), c.checksum());

    let mut other = cfg.clone();
    other.seed += 1;
    let (d, _) = train_vl(&other, &scenes, None).unwrap();
    assert_ne!(a.checksum(), d.checksum());
}

#[test]
fn checkpoints_at_cadence_and_resume_state() {
    let scenes = vec![train_scene(lattice_scene(3, 1), random_field(27, 8, 2))];
    let mut cfg = small_config(8, 10);
    cfg.schedule.checkpoint_every = 4;
    let mut steps = Vec::new();
    let mut sink = |ck: &splatsem_learn::checkpoint::Checkpoint| {
        steps.push(ck.step);
        Ok(())
    };
    let mut t = VlTrainer::new(&cfg, &scenes).unwrap();
    t.run(Some(&mut sink)).unwrap();
    assert_eq!(steps, vec![4, 8]);
    let ck = t.state.to_checkpoint();
    let back = splatsem_learn::pretrain::TrainState::from_checkpoint(
        &splatsem_learn::checkpoint::Checkpoint::from_bytes(&ck.to_bytes()).unwrap(),
    )
    .unwrap();
    assert_eq!(back, t.state);
}

#[test]
fn contrastive_term_warm_starts() {
    let scene = lattice_scene(4, 2);
    let mut ts = train_scene(scene, random_field(64, 8, 3));
    ts.labels = Some((0..64).map(|i| if i == 5 { VOID } else { (i % 3) as u32 }).collect());
    let scenes = vec![ts];
    let cfg = small_config(8, 20);
    let (state, log) = train_vl(&cfg, &scenes, None).unwrap();
    let con = log.column("contrastive").unwrap();
    for (step, c) in con.iter().enumerate() {
        if step < 5 {
            assert_eq!(*c, 0.0, "step {step}");
        } else {
            assert!(*c > 0.0, "step {step}");
        }
    }
    assert_ne!(state.params.get(LOG_TAU).unwrap()[[0, 0]], cfg.loss.tau_init.ln());
}

#[test]
fn divergence_reports_step() {
    let scenes = vec![train_scene(lattice_scene(3, 1), random_field(27, 8, 2))];
    let mut cfg = small_config(8, 50);
    cfg.optim.lr = 1e300;
    cfg.optim.div_factor = 1.0;
    cfg.optim.weight_decay = 0.0;
    let err = train_vl(&cfg, &scenes, None).unwrap_err();
    assert!(matches!(err, LearnError::NonFinite(_)), "{err}");
    assert!(err.to_string().contains("step"), "{err}");
}

#[test]
fn missing_features_rejected() {
    let scenes = vec![splatsem_learn::pretrain::TrainScene::new(lattice_scene(2, 1))];
    let err = train_vl(&small_config(8, 1), &scenes, None).unwrap_err();
    assert!(matches!(err, LearnError::Config(_)));
    let wrong_dim = vec![train_scene(lattice_scene(2, 1), random_field(8, 5, 1))];
    assert!(train_vl(&small_config(8, 1), &wrong_dim, None).is_err());
}
