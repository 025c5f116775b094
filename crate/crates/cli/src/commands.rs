//! Subcommand definitions and their drivers.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use r2c::checkpoint::Checkpoint;
use r2c::data::{
    load_manifest, save_png, synthesize_toy_corpus, write_toy_corpus, ArtifactMix, Dataset, Domain, ToyConfig,
};
use r2c::metrics::{classify_testset, restore_iterative, write_eval_report, EvalRow};
use r2c::models::Generator;
use r2c::training::{train, TrainConfig, Trainer};
use r2c::Tensor;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::study::{write_bundle, QueryImages};

pub type CliResult<T> = Result<T, Box<dyn std::error::Error + Send + Sync>>;

#[derive(Debug, Parser)]
#[command(name = "r2c", version, about = "Restore-to-classify cycle GAN")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train on a manifest of poor- and high-quality images.
    Train(TrainArgs),
    /// Restore images with a trained generator.
    Restore(RestoreArgs),
    /// Write per-sample class predictions as CSV.
    Classify(ClassifyArgs),
    /// Report accuracy, sensitivity, specificity, precision, F1 and F2.
    Eval(EvalArgs),
    /// Generate the two-class synthetic glyph corpus.
    MakeToy(MakeToyArgs),
    /// Build a blinded preference-study bundle.
    ExportStudy(ExportStudyArgs),
    /// Serve study bundles over HTTP.
    ServeStudy(ServeStudyArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub ckpt_dir: PathBuf,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 3)]
    pub q: usize,
    #[arg(long, default_value_t = 0.1)]
    pub gamma: f64,
    #[arg(long, default_value_t = 10.0)]
    pub lambda: f64,
    #[arg(long, default_value_t = 5.0)]
    pub beta: f64,
    #[arg(long, default_value_t = 2000)]
    pub epochs: usize,
    /// Epochs at the initial rate before linear decay to zero at `--epochs`.
    #[arg(long, default_value_t = 100)]
    pub hold_epochs: usize,
    #[arg(long, default_value_t = 2e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 64)]
    pub gen_base: usize,
    #[arg(long, default_value_t = 32)]
    pub disc_base: usize,
    #[arg(long, default_value_t = 2)]
    pub num_classes: usize,
    #[arg(long, default_value_t = 1)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1)]
    pub checkpoint_every: usize,
    /// Plain convolutions with ReLU instead of operational layers.
    #[arg(long)]
    pub plain: bool,
    /// Continue from `latest.r2c` in the checkpoint directory.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Debug, Args)]
pub struct RestoreArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub iterate_k: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Restore every sample listed in a manifest.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    pub num_classes: usize,
    /// PNG files to restore.
    pub inputs: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ClassifyArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = 2)]
    pub num_classes: usize,
    /// Output CSV; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// `NAME=PATH`; repeat to compare models.
    #[arg(long = "model", required = true)]
    pub models: Vec<String>,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub positive_class: usize,
    #[arg(long, default_value_t = 2)]
    pub num_classes: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MakeToyArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: u64,
    /// Scales every corruption range; 0 leaves poor images clean.
    #[arg(long, default_value_t = 1.0)]
    pub severity: f64,
    #[arg(long, default_value_t = 400)]
    pub n_poor: usize,
    #[arg(long, default_value_t = 400)]
    pub n_high: usize,
    #[arg(long, default_value_t = 100)]
    pub n_test: usize,
    #[arg(long, default_value_t = 64)]
    pub size: usize,
}

#[derive(Debug, Args)]
pub struct ExportStudyArgs {
    #[arg(long)]
    pub study_id: String,
    /// Poor-quality samples from this manifest become the queries.
    #[arg(long)]
    pub manifest: PathBuf,
    /// `NAME=PATH` or `NAME=PATH@K`; repeat for each method.
    #[arg(long = "model", required = true)]
    pub models: Vec<String>,
    /// Default iteration count for models given without `@K`.
    #[arg(long, default_value_t = 3)]
    pub iterate_k: usize,
    #[arg(long)]
    pub limit: Option<usize>,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 2)]
    pub num_classes: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeStudyArgs {
    /// Bundle directory; repeat to serve several studies.
    #[arg(long = "bundle", required = true)]
    pub bundles: Vec<PathBuf>,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    /// Directory served at `/` for a browser front end.
    #[arg(long)]
    pub static_dir: Option<PathBuf>,
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Train(a) => cmd_train(&a),
        Command::Restore(a) => cmd_restore(&a),
        Command::Classify(a) => cmd_classify(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::MakeToy(a) => cmd_make_toy(&a),
        Command::ExportStudy(a) => cmd_export_study(&a),
        Command::ServeStudy(a) => crate::server::serve_blocking(&a),
    }
}

/// Loads the `Y → X` generator from a checkpoint.
pub fn load_generator(path: &Path) -> CliResult<Generator<f32>> {
    let ckpt = Checkpoint::load(path)?;
    Ok(Trainer::<f32>::from_checkpoint(&ckpt)?.model.g)
}

fn load_nonempty(path: &Path, num_classes: usize) -> CliResult<Dataset> {
    let ds = load_manifest(path, num_classes)?;
    if ds.is_empty() {
        return Err(format!("{}: manifest lists no samples", path.display()).into());
    }
    Ok(ds)
}

pub fn train_config(a: &TrainArgs, image_size: (usize, usize)) -> TrainConfig {
    let mut c = TrainConfig::default();
    c.generator.q = a.q;
    c.generator.base_channels = a.gen_base;
    c.generator.num_classes = a.num_classes;
    c.generator.image_size = image_size;
    c.generator.use_operational = !a.plain;
    c.discriminator.q = a.q;
    c.discriminator.base_channels = a.disc_base;
    c.discriminator.image_size = image_size;
    c.weights.gamma = a.gamma;
    c.weights.lambda = a.lambda;
    c.weights.beta = a.beta;
    c.optimizer.alpha = a.lr;
    c.schedule.alpha0 = a.lr;
    c.schedule.total_epochs = a.epochs;
    c.schedule.hold_epochs = a.hold_epochs.min(a.epochs);
    c.epochs = a.epochs;
    c.seed = a.seed;
    c.batch_size = a.batch_size;
    c.checkpoint_every = a.checkpoint_every;
    c
}

fn cmd_train(a: &TrainArgs) -> CliResult<()> {
    let dataset = load_nonempty(&a.manifest, a.num_classes)?;
    let mut trainer = if a.resume {
        let latest = a.ckpt_dir.join("latest.r2c");
        let mut t = Trainer::<f32>::from_checkpoint(&Checkpoint::load(&latest)?)?;
        t.config.epochs = a.epochs;
        t
    } else {
        let config = train_config(a, dataset.image_size()?);
        config.validate()?;
        Trainer::<f32>::new(config)?
    };
    eprintln!(
        "training Q={} for {} epochs from epoch {} ({} params in G)",
        trainer.config.generator.effective_q(),
        trainer.config.epochs,
        trainer.epoch,
        trainer.model.g.parameter_count()
    );
    let outcome = train(&mut trainer, &dataset, Some(&a.ckpt_dir))?;
    for r in &outcome.reports {
        let l = &r.losses;
        eprintln!(
            "epoch {:>4}  L_G {:.4}  L_cyc {:.4}  L_class {:.4}  L_D {:.4}  lr {:.2e}",
            r.epoch, l.l_g, l.l_cyc, l.l_class, l.l_d, r.lr
        );
    }
    Ok(())
}

fn cmd_restore(a: &RestoreArgs) -> CliResult<()> {
    let g = load_generator(&a.ckpt)?;
    let mut jobs: Vec<(String, Tensor<f32>)> = Vec::new();
    if let Some(m) = &a.manifest {
        for s in load_nonempty(m, a.num_classes)?.samples {
            jobs.push((s.source_path, s.image));
        }
    }
    for p in &a.inputs {
        let name = p.file_name().ok_or_else(|| format!("{}: not a file", p.display()))?;
        jobs.push((name.to_string_lossy().into_owned(), r2c::data::load_png(p)?));
    }
    if jobs.is_empty() {
        return Err("nothing to restore: pass PNG paths or --manifest".into());
    }
    for (rel, img) in &jobs {
        let out = restore_iterative(&g, img, a.iterate_k)?;
        save_png(&a.out.join(rel), &out)?;
    }
    eprintln!("restored {} images into {}", jobs.len(), a.out.display());
    Ok(())
}

fn cmd_classify(a: &ClassifyArgs) -> CliResult<()> {
    let g = load_generator(&a.ckpt)?;
    let ds = load_nonempty(&a.manifest, a.num_classes)?;
    let mut rows = Vec::with_capacity(ds.len() + 1);
    let probs: Vec<String> = (0..a.num_classes).map(|c| format!("p{c}")).collect();
    rows.push(format!("path,domain,label,predicted,{}", probs.join(",")));
    for s in &ds.samples {
        let (h, w) = s.size();
        let out = g.infer(&s.image.clone().reshape(&[1, 1, h, w])?)?;
        let p = out.class_probs.data();
        let pred = (0..p.len()).fold(0, |best, i| if p[i] > p[best] { i } else { best });
        let ps: Vec<String> = p.iter().map(|v| format!("{v:.6}")).collect();
        rows.push(format!("{},{},{},{},{}", s.source_path, s.domain, s.label, pred, ps.join(",")));
    }
    write_text(a.out.as_deref(), &(rows.join("\n") + "\n"))
}

fn write_text(path: Option<&Path>, text: &str) -> CliResult<()> {
    match path {
        Some(p) => fs::write(p, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

/// `NAME=PATH[@K]`
pub fn parse_model_spec(spec: &str, default_k: usize) -> CliResult<(String, PathBuf, usize)> {
    let (name, rest) = spec.split_once('=').ok_or_else(|| format!("model spec {spec:?} must be NAME=PATH[@K]"))?;
    if name.is_empty() {
        return Err(format!("model spec {spec:?} has an empty name").into());
    }
    let (path, k) = match rest.rsplit_once('@') {
        Some((p, k)) if k.parse::<usize>().is_ok() => (p, k.parse().unwrap_or(default_k)),
        _ => (rest, default_k),
    };
    Ok((name.to_string(), PathBuf::from(path), k))
}

fn cmd_eval(a: &EvalArgs) -> CliResult<()> {
    let ds = load_nonempty(&a.manifest, a.num_classes)?;
    let mut rows = Vec::new();
    for spec in &a.models {
        let (name, path, _) = parse_model_spec(spec, 0)?;
        let g = load_generator(&path)?;
        let counts = classify_testset(&g, &ds, a.positive_class)?;
        rows.push(EvalRow { model: name, q: g.config().effective_q(), counts });
    }
    let mut buf = Vec::new();
    write_eval_report(&mut buf, &rows)?;
    write_text(a.out.as_deref(), &String::from_utf8(buf)?)
}

fn cmd_make_toy(a: &MakeToyArgs) -> CliResult<()> {
    if !(0.0..=1.0).contains(&a.severity) {
        return Err(format!("severity {} outside [0, 1]", a.severity).into());
    }
    let config = ToyConfig {
        n_poor: a.n_poor,
        n_high: a.n_high,
        n_test: a.n_test,
        size: a.size,
        artifacts: ArtifactMix::default().scaled(a.severity),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let corpus = synthesize_toy_corpus(&config, &mut rng)?;
    write_toy_corpus(&corpus, &a.out)?;
    eprintln!(
        "wrote {} training and {} test samples to {}",
        corpus.train.len(),
        corpus.test.len(),
        a.out.display()
    );
    Ok(())
}

fn encode_png(t: &Tensor<f32>) -> CliResult<Vec<u8>> {
    let img = r2c::data::to_gray_image(t)?;
    let mut buf = std::io::Cursor::new(Vec::new());
    img.write_to(&mut buf, image::ImageFormat::Png)?;
    Ok(buf.into_inner())
}

fn cmd_export_study(a: &ExportStudyArgs) -> CliResult<()> {
    let ds = load_nonempty(&a.manifest, a.num_classes)?;
    let mut models = Vec::new();
    for spec in &a.models {
        let (name, path, k) = parse_model_spec(spec, a.iterate_k)?;
        models.push((name, load_generator(&path)?, k));
    }
    let mut picks = ds.indices(Domain::Poor);
    if picks.is_empty() {
        return Err(format!("{}: no poor-quality samples to rate", a.manifest.display()).into());
    }
    picks.shuffle(&mut ChaCha8Rng::seed_from_u64(a.seed));
    picks.truncate(a.limit.unwrap_or(picks.len()));
    picks.sort_unstable();
    let mut queries = Vec::with_capacity(picks.len());
    for i in picks {
        let s = &ds.samples[i];
        let mut columns = vec![encode_png(&s.image)?];
        for (_, g, k) in &models {
            columns.push(encode_png(&restore_iterative(g, &s.image, *k)?)?);
        }
        queries.push(QueryImages { label: s.label, columns });
    }
    let names: Vec<String> = models.iter().map(|(n, _, _)| n.clone()).collect();
    let manifest = write_bundle(&a.out, &a.study_id, a.seed, &names, &queries)?;
    eprintln!("wrote study {} with {} queries to {}", manifest.study_id, manifest.queries.len(), a.out.display());
    Ok(())
}
