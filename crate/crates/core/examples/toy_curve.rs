//! Per-epoch restoration and classification curve on the toy corpus.
//!
//! `cargo run --release -p r2c-core --example toy_curve` with optional
//! `Q`, `GB`, `DB`, `GAMMA`, `LR`, `EPOCHS`, `SEED`, `N` environment overrides.

use std::time::Instant;

use r2c::data::{synthesize_toy_corpus, Domain, ToyConfig};
use r2c::metrics::{classify_testset, mean_l1, psnr, restore_iterative};
use r2c::training::{Trainer, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn env<T: std::str::FromStr>(k: &str, d: T) -> T {
    std::env::var(k).ok().and_then(|v| v.parse().ok()).unwrap_or(d)
}

fn main() {
    let mut cfg = TrainConfig::default();
    cfg.generator.q = env("Q", 3);
    cfg.generator.base_channels = env("GB", 8);
    cfg.discriminator.q = env("Q", 3);
    cfg.discriminator.base_channels = env("DB", 8);
    cfg.weights.gamma = env("GAMMA", 0.1);
    cfg.schedule.alpha0 = env("LR", 2e-4);
    cfg.optimizer.alpha = cfg.schedule.alpha0;
    cfg.epochs = env("EPOCHS", 30);
    cfg.seed = env("SEED", 7);
    let n: usize = env("N", 400);
    let toy = ToyConfig { n_poor: n, n_high: n, ..Default::default() };
    let corpus = synthesize_toy_corpus(&toy, &mut ChaCha8Rng::seed_from_u64(cfg.seed)).unwrap();
    let mut tr = Trainer::<f32>::new(cfg.clone()).unwrap();
    println!("params G {}", tr.model.g.parameter_count());
    let t0 = Instant::now();
    for e in 0..cfg.epochs {
        let r = tr.run_epoch(&corpus.train).unwrap();
        let g = &tr.model.g;
        let mut pin = 0.0;
        let mut pout = 0.0;
        for (i, clean) in &corpus.oracle.test {
            let y = &corpus.test.samples[*i].image;
            pin += psnr(y, clean).unwrap();
            pout += psnr(&restore_iterative(g, y, 3).unwrap(), clean).unwrap();
        }
        let k = corpus.oracle.test.len() as f64;
        let c = classify_testset(g, &corpus.test, 1).unwrap();
        let mut idl = 0.0;
        let mut cor = 0.0;
        let mut nh = 0.0;
        for s in corpus.test.samples.iter().filter(|s| s.domain == Domain::High) {
            idl += mean_l1(&restore_iterative(g, &s.image, 1).unwrap(), &s.image).unwrap();
            nh += 1.0;
        }
        for (i, clean) in &corpus.oracle.test {
            cor += mean_l1(&corpus.test.samples[*i].image, clean).unwrap();
        }
        println!(
            "ep {e} {:.1}s LG {:.3} cyc {:.3} cls {:.3} LD {:.3} | psnr in {:.2} out {:.2} | f1 {} acc {} | id {:.4} corr {:.4}",
            t0.elapsed().as_secs_f64(), r.losses.l_g, r.losses.l_cyc, r.losses.l_class, r.losses.l_d,
            pin / k, pout / k, c.f_beta(1.0), c.accuracy(), idl / nh, cor / k
        );
    }
}
