mod common;

use common::tiny_config;
use r2c::checkpoint::Checkpoint;
use r2c::data::{synthesize_toy_corpus, Dataset, ToyConfig};
use r2c::training::{train, Batch, LrSchedule, Trainer};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_corpus(seed: u64) -> Dataset {
    let cfg = ToyConfig { n_poor: 6, n_high: 6, n_test: 2, size: 16, ..Default::default() };
    synthesize_toy_corpus(&cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap().train
}

fn weight_bits(t: &Trainer<f32>) -> Vec<u32> {
    let ck = t.to_checkpoint().unwrap();
    ck.arrays.iter().flat_map(|(_, a)| a.data().iter().map(|v| v.to_bits())).collect()
}

#[test]
fn fixed_seed_steps_are_bit_identical() {
    let data = small_corpus(3);
    let run = || {
        let mut t = Trainer::<f32>::new(tiny_config(11, 16)).unwrap();
        for i in 0..10 {
            let y = Batch::from_samples(&data, &[6 + i % 6]).unwrap();
            let x = Batch::from_samples(&data, &[i % 6]).unwrap();
            t.train_step(&y, &x, 2e-4).unwrap();
        }
        t
    };
    let (a, b) = (run(), run());
    assert_eq!(a.step, 10);
    assert_eq!(weight_bits(&a), weight_bits(&b));
    let fresh = Trainer::<f32>::new(tiny_config(11, 16)).unwrap();
    assert_ne!(weight_bits(&a), weight_bits(&fresh));
}

#[test]
fn different_seeds_give_different_initializations() {
    let a = Trainer::<f32>::new(tiny_config(1, 16)).unwrap();
    let b = Trainer::<f32>::new(tiny_config(2, 16)).unwrap();
    assert_ne!(weight_bits(&a), weight_bits(&b));
}

#[test]
fn resume_matches_uninterrupted_run() {
    let data = small_corpus(4);
    let mut cfg = tiny_config(5, 16);
    cfg.epochs = 3;
    cfg.schedule = LrSchedule { alpha0: 2e-4, hold_epochs: 1, total_epochs: 3 };
    let mut straight = Trainer::<f32>::new(cfg.clone()).unwrap();
    let full: Vec<_> = (0..3).map(|_| straight.run_epoch(&data).unwrap()).collect();

    let mut first = Trainer::<f32>::new(cfg).unwrap();
    first.run_epoch(&data).unwrap();
    let bytes = first.to_checkpoint().unwrap().to_bytes();
    let mut resumed = Trainer::<f32>::from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
    assert_eq!((resumed.epoch, resumed.step), (1, first.step));
    let rest: Vec<_> = (0..2).map(|_| resumed.run_epoch(&data).unwrap()).collect();
    for (a, b) in full[1..].iter().zip(&rest) {
        assert_eq!((a.epoch, a.iter), (b.epoch, b.iter));
        assert!((a.losses.l_g - b.losses.l_g).abs() < 1e-5);
        assert!((a.losses.l_d - b.losses.l_d).abs() < 1e-5);
    }
    assert_eq!(weight_bits(&straight), weight_bits(&resumed));
}

#[test]
fn checkpoint_save_load_save_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let t = Trainer::<f32>::new(tiny_config(8, 16)).unwrap();
    let p1 = dir.path().join("a.r2c");
    let p2 = dir.path().join("b.r2c");
    t.to_checkpoint().unwrap().save(&p1).unwrap();
    let back = Trainer::<f32>::from_checkpoint(&Checkpoint::load(&p1).unwrap()).unwrap();
    back.to_checkpoint().unwrap().save(&p2).unwrap();
    assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
}

#[test]
fn checkpoint_from_other_topology_is_rejected() {
    let t = Trainer::<f32>::new(tiny_config(8, 16)).unwrap();
    let mut ck = t.to_checkpoint().unwrap();
    let mut cfg = tiny_config(8, 16);
    cfg.generator.base_channels = 8;
    ck.config_json = serde_json::to_string(&cfg).unwrap();
    assert!(Trainer::<f32>::from_checkpoint(&ck).is_err());
}

#[test]
fn train_writes_loss_curve_and_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let data = small_corpus(6);
    let mut cfg = tiny_config(9, 16);
    cfg.epochs = 2;
    let mut t = Trainer::<f32>::new(cfg).unwrap();
    let out = train(&mut t, &data, Some(dir.path())).unwrap();
    assert_eq!(out.reports.len(), 2);
    let csv = std::fs::read_to_string(dir.path().join("losses.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], r2c::training::LOSS_CSV_HEADER);
    assert_eq!(lines.len(), 3);
    assert!(dir.path().join("latest.r2c").exists());
    let latest = Checkpoint::load(&dir.path().join("latest.r2c")).unwrap();
    assert_eq!(latest.epoch, 2);
    assert_eq!(latest.step, 12);
}

#[test]
fn mismatched_dataset_is_rejected() {
    let data = small_corpus(6);
    let mut cfg = tiny_config(9, 32);
    cfg.epochs = 1;
    let mut t = Trainer::<f32>::new(cfg).unwrap();
    assert!(train(&mut t, &data, None).is_err());
}
