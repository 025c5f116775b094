//! Unpaired two-domain datasets, manifests and the synthetic toy corpus.
//!
//! Manifest format (CSV with header):
//!
//! ```text
//! path,domain,label
//! images/a.png,poor,1
//! images/b.png,high,0
//! ```
//!
//! Paths are resolved relative to the manifest's directory. Images are 8-bit
//! grayscale PNGs, mapped to `[-1, 1]` on load.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use image::GrayImage;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    /// Poor quality, `Y`.
    Poor,
    /// High quality, `X`.
    High,
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Domain::Poor => "poor",
            Domain::High => "high",
        })
    }
}

impl std::str::FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "poor" => Ok(Domain::Poor),
            "high" => Ok(Domain::High),
            other => Err(Error::InvalidArgument(format!("unknown domain tag {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DomainSample {
    /// `[H, W]`, values in `[-1, 1]`.
    pub image: Tensor<f32>,
    pub label: usize,
    pub domain: Domain,
    pub source_path: String,
}

impl DomainSample {
    pub fn one_hot(&self, num_classes: usize) -> Vec<f32> {
        one_hot(self.label, num_classes)
    }

    pub fn size(&self) -> (usize, usize) {
        (self.image.shape()[0], self.image.shape()[1])
    }
}

pub fn one_hot(label: usize, num_classes: usize) -> Vec<f32> {
    let mut v = vec![0.0; num_classes];
    v[label] = 1.0;
    v
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct DatasetStats {
    pub n_poor: usize,
    pub n_high: usize,
    /// `[class] -> (poor, high)`
    pub per_class: Vec<(usize, usize)>,
}

#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub samples: Vec<DomainSample>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn new(samples: Vec<DomainSample>, num_classes: usize) -> Result<Self> {
        if let Some(s) = samples.iter().find(|s| s.label >= num_classes) {
            return Err(Error::InvalidArgument(format!(
                "{}: label {} outside {num_classes} classes",
                s.source_path, s.label
            )));
        }
        Ok(Self { samples, num_classes })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn indices(&self, domain: Domain) -> Vec<usize> {
        (0..self.samples.len()).filter(|&i| self.samples[i].domain == domain).collect()
    }

    pub fn stats(&self) -> DatasetStats {
        let mut per_class = vec![(0, 0); self.num_classes];
        for s in &self.samples {
            match s.domain {
                Domain::Poor => per_class[s.label].0 += 1,
                Domain::High => per_class[s.label].1 += 1,
            }
        }
        DatasetStats {
            n_poor: per_class.iter().map(|c| c.0).sum(),
            n_high: per_class.iter().map(|c| c.1).sum(),
            per_class,
        }
    }

    /// Common image size, or an error if samples disagree.
    pub fn image_size(&self) -> Result<(usize, usize)> {
        let first = self.samples.first().ok_or(Error::Empty("dataset"))?.size();
        if let Some(s) = self.samples.iter().find(|s| s.size() != first) {
            return Err(Error::InvalidArgument(format!(
                "{} is {:?}, expected {first:?}",
                s.source_path,
                s.size()
            )));
        }
        Ok(first)
    }
}

/// `[0, 255] -> [-1, 1]`.
pub fn normalize(v: f32) -> f32 {
    v / 127.5 - 1.0
}

/// `[-1, 1] -> [0, 255]`, rounded and clamped.
pub fn denormalize(v: f32) -> u8 {
    ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
}

pub fn normalize_image(img: &GrayImage) -> Tensor<f32> {
    let (w, h) = img.dimensions();
    let data = img.pixels().map(|p| normalize(p.0[0] as f32)).collect();
    Tensor::from_vec(&[h as usize, w as usize], data).expect("pixel count matches dimensions")
}

/// Accepts `[H, W]` or any shape ending in `[H, W]` with a single image.
pub fn to_gray_image(t: &Tensor<f32>) -> Result<GrayImage> {
    let s = t.shape();
    if s.len() < 2 || s[..s.len() - 2].iter().product::<usize>() != 1 {
        return Err(Error::shape("to_gray_image", format!("expected one image, got {s:?}")));
    }
    let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
    let buf = t.data().iter().map(|&v| denormalize(v)).collect();
    Ok(GrayImage::from_raw(w as u32, h as u32, buf).expect("buffer matches dimensions"))
}

pub fn load_png(path: &Path) -> Result<Tensor<f32>> {
    let img = image::open(path).map_err(|source| Error::Image { path: path.into(), source })?;
    Ok(normalize_image(&img.to_luma8()))
}

pub fn save_png(path: &Path, t: &Tensor<f32>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    to_gray_image(t)?
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| Error::Image { path: path.into(), source })
}

#[derive(Debug, Deserialize)]
struct ManifestRow {
    path: String,
    domain: String,
    label: String,
}

/// Loads every manifest row; any bad row fails the whole load with
/// per-row diagnostics.
pub fn load_manifest(path: &Path, num_classes: usize) -> Result<Dataset> {
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let headers = reader.headers()?.clone();
    if headers.iter().map(str::trim).collect::<Vec<_>>() != ["path", "domain", "label"] {
        return Err(Error::Manifest {
            path: path.into(),
            errors: vec![format!("header must be path,domain,label, got {:?}", headers)],
        });
    }
    let mut samples = Vec::new();
    let mut errors = Vec::new();
    for (i, row) in reader.deserialize::<ManifestRow>().enumerate() {
        let line = i + 2;
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                errors.push(format!("line {line}: {e}"));
                continue;
            }
        };
        let domain = match row.domain.parse::<Domain>() {
            Ok(d) => Some(d),
            Err(e) => {
                errors.push(format!("line {line}: {e}"));
                None
            }
        };
        let label = match row.label.trim().parse::<usize>() {
            Ok(l) if l < num_classes => Some(l),
            Ok(l) => {
                errors.push(format!("line {line}: label {l} outside {num_classes} classes"));
                None
            }
            Err(e) => {
                errors.push(format!("line {line}: bad label {:?}: {e}", row.label));
                None
            }
        };
        let full: PathBuf = base.join(row.path.trim());
        let image = match load_png(&full) {
            Ok(img) => Some(img),
            Err(e) => {
                errors.push(format!("line {line}: {e}"));
                None
            }
        };
        if let (Some(domain), Some(label), Some(image)) = (domain, label, image) {
            samples.push(DomainSample { image, label, domain, source_path: row.path.trim().to_string() });
        }
    }
    if !errors.is_empty() {
        return Err(Error::Manifest { path: path.into(), errors });
    }
    Dataset::new(samples, num_classes)
}

/// Index pairs `(poor, high)` for one epoch: each domain is reshuffled and
/// `min(N_p, N_h)` pairs are drawn.
pub fn epoch_iterator<R: Rng + ?Sized>(dataset: &Dataset, rng: &mut R) -> Result<Vec<(usize, usize)>> {
    let mut poor = dataset.indices(Domain::Poor);
    let mut high = dataset.indices(Domain::High);
    if poor.is_empty() {
        return Err(Error::Empty("poor-quality domain"));
    }
    if high.is_empty() {
        return Err(Error::Empty("high-quality domain"));
    }
    poor.shuffle(rng);
    high.shuffle(rng);
    Ok(poor.into_iter().zip(high).collect())
}

// ---------------------------------------------------------------------------
// Synthetic corpus

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.hi <= self.lo {
            self.lo
        } else {
            rng.random_range(self.lo..self.hi)
        }
    }
}

/// Corruptions applied to clean images, each drawn from its severity range.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArtifactMix {
    /// Gaussian blur standard deviation in pixels.
    pub blur_sigma: Option<Range>,
    /// Additive Gaussian noise standard deviation on the `[0, 1]` scale.
    pub noise_sigma: Option<Range>,
    /// Exponent of the intensity map `v ↦ v^γ` on `[0, 1]`.
    pub gamma: Option<Range>,
}

impl ArtifactMix {
    pub fn is_empty(&self) -> bool {
        self.blur_sigma.is_none() && self.noise_sigma.is_none() && self.gamma.is_none()
    }

    /// Mix whose corruption leaves images unchanged.
    pub fn identity() -> Self {
        Self {
            blur_sigma: Some(Range::new(0.0, 0.0)),
            noise_sigma: Some(Range::new(0.0, 0.0)),
            gamma: Some(Range::new(1.0, 1.0)),
        }
    }

    /// Interpolates every range toward its identity value; `0` gives
    /// [`ArtifactMix::identity`]-equivalent draws, `1` leaves the mix unchanged.
    pub fn scaled(&self, severity: f64) -> Self {
        let s = |r: Range, id: f64| Range::new(id + (r.lo - id) * severity, id + (r.hi - id) * severity);
        Self {
            blur_sigma: self.blur_sigma.map(|r| s(r, 0.0)),
            noise_sigma: self.noise_sigma.map(|r| s(r, 0.0)),
            gamma: self.gamma.map(|r| s(r, 1.0)),
        }
    }
}

impl Default for ArtifactMix {
    fn default() -> Self {
        Self {
            blur_sigma: Some(Range::new(0.8, 1.4)),
            noise_sigma: Some(Range::new(0.03, 0.06)),
            gamma: Some(Range::new(1.8, 2.4)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyConfig {
    pub n_poor: usize,
    pub n_high: usize,
    /// Held-out pairs; each contributes one corrupted and one clean test sample.
    pub n_test: usize,
    pub size: usize,
    pub artifacts: ArtifactMix,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self { n_poor: 400, n_high: 400, n_test: 100, size: 64, artifacts: ArtifactMix::default() }
    }
}

/// Ground truth linking corrupted samples to their clean sources.
/// Only evaluation code consumes it.
#[derive(Clone, Debug, Default)]
pub struct PairingOracle {
    /// `(index of a poor sample in its dataset, clean image)`
    pub train: Vec<(usize, Tensor<f32>)>,
    pub test: Vec<(usize, Tensor<f32>)>,
}

#[derive(Clone, Debug)]
pub struct ToyCorpus {
    pub train: Dataset,
    /// Held-out samples; poor and high halves come from distinct clean images.
    pub test: Dataset,
    pub oracle: PairingOracle,
}

/// Normalized 1-d Gaussian taps with radius `ceil(3σ)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let r = (3.0 * sigma).ceil() as i64;
    let taps: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / s).collect()
}

/// Separable blur on a row-major `[h, w]` grid with edge clamping.
pub fn gaussian_blur(img: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    let k = gaussian_kernel(sigma);
    if k.len() == 1 {
        return img.to_vec();
    }
    let r = (k.len() / 2) as isize;
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = k
                .iter()
                .enumerate()
                .map(|(i, t)| t * img[y * w + clamp(x as isize + i as isize - r, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = k
                .iter()
                .enumerate()
                .map(|(i, t)| t * tmp[clamp(y as isize + i as isize - r, h) * w + x])
                .sum();
        }
    }
    out
}

/// Draws one clean glyph image on `[0, 1]`: class 0 is a ring, class 1 a cross.
fn draw_glyph<R: Rng + ?Sized>(label: usize, size: usize, rng: &mut R) -> Vec<f64> {
    let s = size as f64;
    let bg = rng.random_range(0.10..0.25);
    let tilt_x = rng.random_range(-0.1..0.1);
    let tilt_y = rng.random_range(-0.1..0.1);
    let fg = rng.random_range(0.75..0.95);
    let cx = s * (0.5 + rng.random_range(-0.12..0.12));
    let cy = s * (0.5 + rng.random_range(-0.12..0.12));
    let radius = s * rng.random_range(0.22..0.32);
    let thick = s * rng.random_range(0.06..0.10);
    let mut img = vec![0.0; size * size];
    for y in 0..size {
        for x in 0..size {
            let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
            let base = bg + tilt_x * (fx / s - 0.5) + tilt_y * (fy / s - 0.5);
            let (dx, dy) = (fx - cx, fy - cy);
            let inside = match label % 2 {
                0 => ((dx * dx + dy * dy).sqrt() - radius).abs() < thick / 2.0,
                _ => (dx.abs() < thick / 2.0 && dy.abs() < radius) || (dy.abs() < thick / 2.0 && dx.abs() < radius),
            };
            img[y * size + x] = if inside { fg } else { base };
        }
    }
    img
}

fn quantize(img: &[f64], size: usize) -> Tensor<f32> {
    let data = img.iter().map(|&v| normalize((v.clamp(0.0, 1.0) * 255.0).round() as f32)).collect();
    Tensor::from_vec(&[size, size], data).expect("square grid")
}

/// Applies one random draw of `mix` to a clean `[0, 1]` image.
pub fn corrupt<R: Rng + ?Sized>(clean: &[f64], size: usize, mix: &ArtifactMix, rng: &mut R) -> Vec<f64> {
    let mut img = clean.to_vec();
    if let Some(g) = mix.gamma {
        let gamma = g.sample(rng);
        img.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0).powf(gamma));
    }
    if let Some(b) = mix.blur_sigma {
        img = gaussian_blur(&img, size, size, b.sample(rng));
    }
    if let Some(n) = mix.noise_sigma {
        let sigma = n.sample(rng);
        if sigma > 0.0 {
            let dist = Normal::new(0.0, sigma).expect("positive sigma");
            img.iter_mut().for_each(|v| *v += dist.sample(rng));
        }
    }
    img
}

/// Generates a two-class corpus where the poor domain holds corrupted
/// versions of clean images disjoint from the high domain.
pub fn synthesize_toy_corpus<R: Rng + ?Sized>(config: &ToyConfig, rng: &mut R) -> Result<ToyCorpus> {
    if config.artifacts.is_empty() {
        return Err(Error::Config("artifact mix must name at least one corruption".into()));
    }
    if config.size == 0 {
        return Err(Error::Config("image size must be positive".into()));
    }
    let num_classes = 2;
    let size = config.size;
    let coin = Uniform::new(0usize, num_classes).expect("non-empty range");
    let mut build = |n_poor: usize, n_high: usize, tag: &str| -> (Vec<DomainSample>, Vec<(usize, Tensor<f32>)>) {
        let mut samples = Vec::with_capacity(n_poor + n_high);
        let mut pairs = Vec::with_capacity(n_poor);
        for i in 0..n_high {
            let label = coin.sample(rng);
            let clean = draw_glyph(label, size, rng);
            samples.push(DomainSample {
                image: quantize(&clean, size),
                label,
                domain: Domain::High,
                source_path: format!("{tag}/high_{i:04}.png"),
            });
        }
        for i in 0..n_poor {
            let label = coin.sample(rng);
            let clean = draw_glyph(label, size, rng);
            let bad = corrupt(&clean, size, &config.artifacts, rng);
            pairs.push((samples.len(), quantize(&clean, size)));
            samples.push(DomainSample {
                image: quantize(&bad, size),
                label,
                domain: Domain::Poor,
                source_path: format!("{tag}/poor_{i:04}.png"),
            });
        }
        (samples, pairs)
    };
    let (train, train_pairs) = build(config.n_poor, config.n_high, "train");
    let (test, test_pairs) = build(config.n_test, config.n_test, "test");
    Ok(ToyCorpus {
        train: Dataset::new(train, num_classes)?,
        test: Dataset::new(test, num_classes)?,
        oracle: PairingOracle { train: train_pairs, test: test_pairs },
    })
}

fn write_manifest(path: &Path, samples: &[DomainSample]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["path", "domain", "label"])?;
    for s in samples {
        w.write_record([s.source_path.clone(), s.domain.to_string(), s.label.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes `manifest.csv`, `test_manifest.csv`, all images, the clean
/// references under `oracle/` and the oracle-only `pairs.csv`.
pub fn write_toy_corpus(corpus: &ToyCorpus, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for s in corpus.train.samples.iter().chain(&corpus.test.samples) {
        save_png(&dir.join(&s.source_path), &s.image)?;
    }
    write_manifest(&dir.join("manifest.csv"), &corpus.train.samples)?;
    write_manifest(&dir.join("test_manifest.csv"), &corpus.test.samples)?;
    let pairs_path = dir.join("pairs.csv");
    let mut w = csv::Writer::from_path(&pairs_path)?;
    w.write_record(["clean_path", "corrupt_path"])?;
    for (set, pairs) in [(&corpus.train, &corpus.oracle.train), (&corpus.test, &corpus.oracle.test)] {
        for (idx, clean) in pairs {
            let corrupt = &set.samples[*idx].source_path;
            let clean_path = format!("oracle/{corrupt}");
            save_png(&dir.join(&clean_path), clean)?;
            w.write_record([clean_path.as_str(), corrupt.as_str()])?;
        }
    }
    w.flush().map_err(|e| Error::io(&pairs_path, e))
}

/// Reads `pairs.csv` back as `(clean_path, corrupt_path)` rows.
pub fn read_pairs(path: &Path) -> Result<Vec<(String, String)>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        out.push((rec[0].to_string(), rec[1].to_string()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::psnr;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn normalize_endpoints() {
        assert_eq!(normalize(0.0), -1.0);
        assert_eq!(normalize(255.0), 1.0);
        assert_eq!(normalize(127.5), 0.0);
        for v in 0..=255u8 {
            assert_eq!(denormalize(normalize(v as f32)), v);
        }
    }

    #[test]
    fn blur_kernel_sums_to_one() {
        for sigma in [0.5, 1.0, 2.3] {
            let s: f64 = gaussian_kernel(sigma).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_corruption_keeps_clean_image() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let clean = draw_glyph(1, 32, &mut rng);
        let out = corrupt(&clean, 32, &ArtifactMix::identity(), &mut rng);
        assert_eq!(clean, out);
        let out = corrupt(&clean, 32, &ArtifactMix::default().scaled(0.0), &mut rng);
        assert_eq!(clean, out);
        assert_eq!(ArtifactMix::default().scaled(1.0), ArtifactMix::default());
    }

    #[test]
    fn empty_mix_rejected() {
        let cfg = ToyConfig {
            artifacts: ArtifactMix { blur_sigma: None, noise_sigma: None, gamma: None },
            ..ToyConfig::default()
        };
        assert!(synthesize_toy_corpus(&cfg, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn default_severity_psnr_band() {
        let cfg = ToyConfig { n_poor: 40, n_high: 0, n_test: 0, ..ToyConfig::default() };
        let corpus = synthesize_toy_corpus(&cfg, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        let vals: Vec<f64> = corpus
            .oracle
            .train
            .iter()
            .map(|(i, clean)| psnr(clean, &corpus.train.samples[*i].image).unwrap())
            .collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        // Band measured on pilot corpora at the default severity.
        assert!((PSNR_BAND.0..PSNR_BAND.1).contains(&mean), "mean PSNR {mean}");
    }

    const PSNR_BAND: (f64, f64) = (10.0, 20.0);

    #[test]
    fn epoch_draws_are_min_length_and_reproducible() {
        let cfg = ToyConfig { n_poor: 7, n_high: 5, n_test: 0, size: 8, ..ToyConfig::default() };
        let c = synthesize_toy_corpus(&cfg, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let a = epoch_iterator(&c.train, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = epoch_iterator(&c.train, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 5);
        for (p, h) in &a {
            assert_eq!(c.train.samples[*p].domain, Domain::Poor);
            assert_eq!(c.train.samples[*h].domain, Domain::High);
        }
    }

    #[test]
    fn epoch_draw_frequencies_are_uniform() {
        // 6 poor vs 3 high: every epoch uses 3 of the 6 poor samples.
        let cfg = ToyConfig { n_poor: 6, n_high: 3, n_test: 0, size: 8, ..ToyConfig::default() };
        let c = synthesize_toy_corpus(&cfg, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let epochs = 4000;
        let mut counts = vec![0usize; c.train.len()];
        for _ in 0..epochs {
            for (p, _) in epoch_iterator(&c.train, &mut rng).unwrap() {
                counts[p] += 1;
            }
        }
        let expected = epochs as f64 * 0.5;
        let sd = (epochs as f64 * 0.5 * 0.5).sqrt();
        for i in c.train.indices(Domain::Poor) {
            assert!((counts[i] as f64 - expected).abs() < 3.0 * sd, "{i}: {}", counts[i]);
        }
    }

    #[test]
    fn empty_domain_rejected() {
        let cfg = ToyConfig { n_poor: 3, n_high: 0, n_test: 0, size: 8, ..ToyConfig::default() };
        let c = synthesize_toy_corpus(&cfg, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert!(epoch_iterator(&c.train, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }
}
