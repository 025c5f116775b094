//! Alternating generator / discriminator optimization.
//!
//! One iteration draws a poor sample `y` and a high-quality sample `x`,
//! updates both generators on `L_G`, regenerates `x̂ = G(y)` and `ŷ = F(x)`
//! with the updated generators, then updates both discriminators on `L_D`.
//! Each of the four networks owns its Adam state.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::checkpoint::Checkpoint;
use crate::data::{epoch_iterator, one_hot, Dataset};
use crate::error::{Error, Result};
use crate::losses::{discriminator_loss, total_generator_loss, CyclePass, DomainInputs, LossWeights};
use crate::models::{Discriminator, DiscriminatorConfig, Generator, GeneratorConfig};
use crate::optim::{adam_step, AdamState, OptimizerConfig};
use crate::params::ParamSet;
use crate::tensor::{Real, Tensor};

/// Constant rate for `hold_epochs`, then linear decay reaching zero at `total_epochs`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub alpha0: f64,
    pub hold_epochs: usize,
    pub total_epochs: usize,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self { alpha0: 2e-4, hold_epochs: 100, total_epochs: 2000 }
    }
}

impl LrSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.alpha0 < 0.0 || self.hold_epochs > self.total_epochs || self.total_epochs == 0 {
            return Err(Error::Config(format!("invalid learning-rate schedule {self:?}")));
        }
        Ok(())
    }

    pub fn rate(&self, epoch: usize) -> f64 {
        if epoch < self.hold_epochs {
            self.alpha0
        } else if epoch >= self.total_epochs {
            0.0
        } else {
            let span = (self.total_epochs - self.hold_epochs) as f64;
            self.alpha0 * (self.total_epochs - epoch) as f64 / span
        }
    }
}

pub fn lr_at(schedule: &LrSchedule, epoch: usize) -> f64 {
    schedule.rate(epoch)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    pub weights: LossWeights,
    pub optimizer: OptimizerConfig,
    pub schedule: LrSchedule,
    pub epochs: usize,
    pub seed: u64,
    pub batch_size: usize,
    /// Write a checkpoint every this many epochs (0 disables periodic checkpoints).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            generator: GeneratorConfig::default(),
            discriminator: DiscriminatorConfig::default(),
            weights: LossWeights::default(),
            optimizer: OptimizerConfig::default(),
            schedule: LrSchedule::default(),
            epochs: 2000,
            seed: 0,
            batch_size: 1,
            checkpoint_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.discriminator.validate()?;
        self.weights.validate()?;
        self.optimizer.validate()?;
        self.schedule.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        if self.generator.image_size != self.discriminator.image_size {
            return Err(Error::Config("generator and discriminator image sizes differ".into()));
        }
        Ok(())
    }
}

/// The four networks.
#[derive(Clone, Debug)]
pub struct R2cModel<T> {
    /// `G: Y → X, C_Y`
    pub g: Generator<T>,
    /// `F: X → Y, C_X`
    pub f: Generator<T>,
    pub dx: Discriminator<T>,
    pub dy: Discriminator<T>,
}

impl<T: Real> R2cModel<T> {
    pub fn new(config: &TrainConfig) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Self {
            g: Generator::new(config.generator.clone(), "g", &mut rng)?,
            f: Generator::new(config.generator.clone(), "f", &mut rng)?,
            dx: Discriminator::new(config.discriminator.clone(), "dx", &mut rng)?,
            dy: Discriminator::new(config.discriminator.clone(), "dy", &mut rng)?,
        })
    }

    fn param_sets(&self) -> [&ParamSet<T>; 4] {
        [self.g.params(), self.f.params(), self.dx.params(), self.dy.params()]
    }

    fn param_sets_mut(&mut self) -> [&mut ParamSet<T>; 4] {
        [self.g.params_mut(), self.f.params_mut(), self.dx.params_mut(), self.dy.params_mut()]
    }
}

/// Parameter handles of one generator-step graph.
#[derive(Clone, Debug)]
pub struct GeneratorBindings {
    pub g: Vec<Var>,
    pub f: Vec<Var>,
    pub dx: Vec<Var>,
    pub dy: Vec<Var>,
}

/// Runs the six generator passes of one iteration.
pub fn cycle_pass<T: Real>(
    graph: &mut Graph<T>,
    model: &R2cModel<T>,
    bind: &GeneratorBindings,
    y: Var,
    x: Var,
) -> Result<CyclePass> {
    let x_hat = model.g.forward(graph, &bind.g, y)?;
    let y_hat = model.f.forward(graph, &bind.f, x)?;
    let y_tilde = model.f.forward(graph, &bind.f, x_hat.restored)?;
    let x_tilde = model.g.forward(graph, &bind.g, y_hat.restored)?;
    let x_bar = model.g.forward(graph, &bind.g, x)?;
    let y_bar = model.f.forward(graph, &bind.f, y)?;
    Ok(CyclePass { x_hat, y_hat, y_tilde, x_tilde, x_bar, y_bar })
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossReport {
    pub l_g: f64,
    pub l_adv: f64,
    pub l_cyc: f64,
    pub l_id: f64,
    pub l_class: f64,
    pub l_d: f64,
}

impl LossReport {
    fn accumulate(&mut self, o: &LossReport) {
        self.l_g += o.l_g;
        self.l_adv += o.l_adv;
        self.l_cyc += o.l_cyc;
        self.l_id += o.l_id;
        self.l_class += o.l_class;
        self.l_d += o.l_d;
    }

    fn scaled(&self, s: f64) -> LossReport {
        LossReport {
            l_g: self.l_g * s,
            l_adv: self.l_adv * s,
            l_cyc: self.l_cyc * s,
            l_id: self.l_id * s,
            l_class: self.l_class * s,
            l_d: self.l_d * s,
        }
    }
}

/// Per-epoch row of the loss curve.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochReport {
    pub epoch: usize,
    /// Optimizer steps completed at the end of the epoch.
    pub iter: u64,
    pub losses: LossReport,
    pub lr: f64,
}

pub const LOSS_CSV_HEADER: &str = "epoch,iter,L_G,L_adv,L_cyc,L_id,L_class,L_D,lr";

impl EpochReport {
    pub fn csv_line(&self) -> String {
        let l = &self.losses;
        format!(
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:e}",
            self.epoch, self.iter, l.l_g, l.l_adv, l.l_cyc, l.l_id, l.l_class, l.l_d, self.lr
        )
    }
}

/// Appends rows to a loss-curve CSV, writing the header for new files.
pub fn append_loss_rows(path: &Path, rows: &[EpochReport]) -> Result<()> {
    let fresh = !path.exists();
    let mut f = OpenOptions::new().create(true).append(true).open(path).map_err(|e| Error::io(path, e))?;
    let mut text = String::new();
    if fresh {
        text.push_str(LOSS_CSV_HEADER);
        text.push('\n');
    }
    for r in rows {
        text.push_str(&r.csv_line());
        text.push('\n');
    }
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

/// A stacked mini-batch from one domain.
#[derive(Clone, Debug)]
pub struct Batch<T> {
    /// `[B, 1, H, W]`
    pub images: Tensor<T>,
    /// `[B, N_C]`
    pub labels: Tensor<T>,
}

impl<T: Real> Batch<T> {
    pub fn from_samples(dataset: &Dataset, indices: &[usize]) -> Result<Self> {
        let first = dataset.samples.get(*indices.first().ok_or(Error::Empty("batch"))?).ok_or(Error::Empty("batch"))?;
        let (h, w) = first.size();
        let mut images = Vec::with_capacity(indices.len() * h * w);
        let mut labels = Vec::with_capacity(indices.len() * dataset.num_classes);
        for &i in indices {
            let s = &dataset.samples[i];
            if s.size() != (h, w) {
                return Err(Error::shape("batch", format!("{} has size {:?}", s.source_path, s.size())));
            }
            images.extend(s.image.data().iter().map(|&v| T::lit(v as f64)));
            labels.extend(one_hot(s.label, dataset.num_classes).into_iter().map(|v| T::lit(v as f64)));
        }
        Ok(Self {
            images: Tensor::from_vec(&[indices.len(), 1, h, w], images)?,
            labels: Tensor::from_vec(&[indices.len(), dataset.num_classes], labels)?,
        })
    }
}

#[derive(Clone, Debug)]
pub struct Trainer<T> {
    pub config: TrainConfig,
    pub model: R2cModel<T>,
    /// Adam states in order `g, f, dx, dy`.
    pub optim: [AdamState<T>; 4],
    pub step: u64,
    /// Completed epochs.
    pub epoch: usize,
}

impl<T: Real> Trainer<T> {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let model = R2cModel::new(&config)?;
        let optim = model.param_sets().map(|p| AdamState::zeros_like(p.tensors()));
        Ok(Self { config, model, optim, step: 0, epoch: 0 })
    }

    /// One iteration on batches `y` (poor) and `x` (high) at learning rate `lr`.
    pub fn train_step(&mut self, y: &Batch<T>, x: &Batch<T>, lr: f64) -> Result<LossReport> {
        if y.images.shape() != x.images.shape() {
            return Err(Error::shape("train_step", "poor and high batches differ in shape"));
        }
        let t = self.step + 1;
        let opt = self.config.optimizer.with_alpha(lr);
        let weights = self.config.weights;

        // Generators.
        let mut graph = Graph::new();
        let bind = GeneratorBindings {
            g: self.model.g.params().bind(&mut graph, true),
            f: self.model.f.params().bind(&mut graph, true),
            dx: self.model.dx.params().bind(&mut graph, false),
            dy: self.model.dy.params().bind(&mut graph, false),
        };
        let yv = graph.constant(y.images.clone());
        let xv = graph.constant(x.images.clone());
        let pass = cycle_pass(&mut graph, &self.model, &bind, yv, xv)?;
        let mask_x = self.model.dx.forward(&mut graph, &bind.dx, pass.x_hat.restored)?;
        let mask_y = self.model.dy.forward(&mut graph, &bind.dy, pass.y_hat.restored)?;
        let inputs = DomainInputs { y: yv, x: xv, c_y: y.labels.clone(), c_x: x.labels.clone() };
        let lv = total_generator_loss(&mut graph, &pass, &inputs, &weights, mask_x, mask_y)?;
        let scalar = |v: Var| graph.value(v).item().to_f64().unwrap_or(f64::NAN);
        let mut report = LossReport {
            l_g: scalar(lv.total),
            l_adv: scalar(lv.adversarial),
            l_cyc: scalar(lv.cycle),
            l_id: scalar(lv.identity),
            l_class: lv.classification.map(scalar).unwrap_or(0.0),
            l_d: 0.0,
        };
        if !report.l_g.is_finite() {
            return Err(Error::NonFinite { what: "generator loss".into(), iteration: t });
        }
        graph.backward(lv.total)?;
        let grads_g = self.model.g.params().grads(&graph, &bind.g);
        let grads_f = self.model.f.params().grads(&graph, &bind.f);
        drop(graph);
        adam_step(self.model.g.params_mut().tensors_mut(), &grads_g, &mut self.optim[0], &opt, t)?;
        adam_step(self.model.f.params_mut().tensors_mut(), &grads_f, &mut self.optim[1], &opt, t)?;

        // Discriminators, against fakes from the updated generators.
        let x_hat = self.model.g.infer(&y.images)?.restored;
        let y_hat = self.model.f.infer(&x.images)?.restored;
        let mut graph = Graph::new();
        let bdx = self.model.dx.params().bind(&mut graph, true);
        let bdy = self.model.dy.params().bind(&mut graph, true);
        let xr = graph.constant(x.images.clone());
        let xf = graph.constant(x_hat);
        let yr = graph.constant(y.images.clone());
        let yf = graph.constant(y_hat);
        let m_xr = self.model.dx.forward(&mut graph, &bdx, xr)?;
        let m_xf = self.model.dx.forward(&mut graph, &bdx, xf)?;
        let m_yr = self.model.dy.forward(&mut graph, &bdy, yr)?;
        let m_yf = self.model.dy.forward(&mut graph, &bdy, yf)?;
        let ld = discriminator_loss(&mut graph, m_xr, m_xf, m_yr, m_yf)?;
        report.l_d = graph.value(ld).item().to_f64().unwrap_or(f64::NAN);
        if !report.l_d.is_finite() {
            return Err(Error::NonFinite { what: "discriminator loss".into(), iteration: t });
        }
        graph.backward(ld)?;
        let grads_dx = self.model.dx.params().grads(&graph, &bdx);
        let grads_dy = self.model.dy.params().grads(&graph, &bdy);
        drop(graph);
        adam_step(self.model.dx.params_mut().tensors_mut(), &grads_dx, &mut self.optim[2], &opt, t)?;
        adam_step(self.model.dy.params_mut().tensors_mut(), &grads_dy, &mut self.optim[3], &opt, t)?;

        self.step = t;
        Ok(report)
    }

    /// Sampling RNG for `epoch`, independent of any earlier epoch.
    pub fn epoch_rng(&self, epoch: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(epoch as u64 + 1);
        rng
    }

    /// Runs the next epoch: `min(N_p, N_h) / batch_size` iterations.
    pub fn run_epoch(&mut self, dataset: &Dataset) -> Result<EpochReport> {
        let epoch = self.epoch;
        let lr = self.config.schedule.rate(epoch);
        let draws = epoch_iterator(dataset, &mut self.epoch_rng(epoch))?;
        let bs = self.config.batch_size;
        let mut sum = LossReport::default();
        let mut n = 0usize;
        for chunk in draws.chunks(bs).filter(|c| c.len() == bs) {
            let (py, px): (Vec<usize>, Vec<usize>) = chunk.iter().copied().unzip();
            let yb = Batch::from_samples(dataset, &py)?;
            let xb = Batch::from_samples(dataset, &px)?;
            let r = self.train_step(&yb, &xb, lr)?;
            sum.accumulate(&r);
            n += 1;
        }
        if n == 0 {
            return Err(Error::Empty("epoch (fewer samples than one batch)"));
        }
        self.epoch += 1;
        Ok(EpochReport { epoch, iter: self.step, losses: sum.scaled(1.0 / n as f64), lr })
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut arrays = Vec::new();
        for set in self.model.param_sets() {
            for (name, t) in set.iter() {
                arrays.push((name.to_string(), t.cast::<f32>()));
            }
        }
        for (set, state) in self.model.param_sets().iter().zip(&self.optim) {
            for (i, name) in set.names().iter().enumerate() {
                arrays.push((format!("adam.m.{name}"), state.first[i].cast::<f32>()));
                arrays.push((format!("adam.v.{name}"), state.second[i].cast::<f32>()));
            }
        }
        Ok(Checkpoint {
            q: self.config.generator.effective_q() as u32,
            epoch: self.epoch as u32,
            step: self.step,
            config_json: serde_json::to_string(&self.config)?,
            arrays,
        })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let config: TrainConfig = serde_json::from_str(&ckpt.config_json)?;
        let mut trainer = Self::new(config)?;
        let fetch = |name: &str| -> Result<Tensor<T>> {
            ckpt.get(name)
                .map(|t| t.cast::<T>())
                .ok_or_else(|| Error::Checkpoint(format!("missing array {name}")))
        };
        let Trainer { model, optim, .. } = &mut trainer;
        for (set, state) in model.param_sets_mut().into_iter().zip(optim.iter_mut()) {
            let names = set.names().to_vec();
            for (i, name) in names.iter().enumerate() {
                let loaded = [fetch(name)?, fetch(&format!("adam.m.{name}"))?, fetch(&format!("adam.v.{name}"))?];
                if loaded.iter().any(|t| t.shape() != set.get(i).shape()) {
                    return Err(Error::Checkpoint(format!("shape mismatch for {name}")));
                }
                let [p, m, v] = loaded;
                set.tensors_mut()[i] = p;
                state.first[i] = m;
                state.second[i] = v;
            }
        }
        trainer.epoch = ckpt.epoch as usize;
        trainer.step = ckpt.step;
        Ok(trainer)
    }
}

#[derive(Clone, Debug, Default)]
pub struct TrainOutcome {
    pub reports: Vec<EpochReport>,
    pub checkpoints: Vec<PathBuf>,
}

/// Trains until `trainer.config.epochs` epochs are complete. When `out_dir`
/// is given, appends to `losses.csv` there and writes checkpoints at the
/// configured cadence plus `latest.r2c`.
pub fn train<T: Real>(trainer: &mut Trainer<T>, dataset: &Dataset, out_dir: Option<&Path>) -> Result<TrainOutcome> {
    let stats = dataset.stats();
    if stats.n_poor == 0 {
        return Err(Error::Empty("poor-quality domain"));
    }
    if stats.n_high == 0 {
        return Err(Error::Empty("high-quality domain"));
    }
    if dataset.num_classes != trainer.config.generator.num_classes {
        return Err(Error::Config(format!(
            "dataset has {} classes, model expects {}",
            dataset.num_classes, trainer.config.generator.num_classes
        )));
    }
    let size = dataset.image_size()?;
    if size != trainer.config.generator.image_size {
        return Err(Error::Config(format!(
            "dataset images are {size:?}, model expects {:?}",
            trainer.config.generator.image_size
        )));
    }
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut outcome = TrainOutcome::default();
    while trainer.epoch < trainer.config.epochs {
        let report = trainer.run_epoch(dataset)?;
        if let Some(dir) = out_dir {
            append_loss_rows(&dir.join("losses.csv"), &[report])?;
            let every = trainer.config.checkpoint_every;
            let last = trainer.epoch == trainer.config.epochs;
            if (every > 0 && trainer.epoch.is_multiple_of(every)) || last {
                let ckpt = trainer.to_checkpoint()?;
                let path = dir.join(format!("epoch_{:04}.r2c", trainer.epoch));
                ckpt.save(&path)?;
                ckpt.save(&dir.join("latest.r2c"))?;
                outcome.checkpoints.push(path);
            }
        }
        outcome.reports.push(report);
    }
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_examples() {
        let s = LrSchedule::default();
        assert_eq!(lr_at(&s, 50), 2e-4);
        assert_eq!(lr_at(&s, 2000), 0.0);
        assert!((lr_at(&s, 1050) - 1e-4).abs() < 1e-15);
        assert_eq!(lr_at(&s, 100), 2e-4);
        let mut prev = f64::INFINITY;
        for e in 0..=2100 {
            let r = s.rate(e);
            assert!(r <= prev);
            prev = r;
        }
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let mut c = TrainConfig::default();
        c.batch_size = 0;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::default();
        c.discriminator.image_size = (32, 32);
        assert!(c.validate().is_err());
    }
}
