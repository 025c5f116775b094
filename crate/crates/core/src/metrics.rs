//! Classification metrics and desk-side restoration measures.

use std::fmt;
use std::io::Write;

use serde::Serialize;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::models::Generator;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

/// A ratio that may be undefined because its denominator is zero.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Ratio {
    Defined(f64),
    Undefined,
}

impl Ratio {
    fn of(num: f64, den: f64) -> Self {
        if den > 0.0 { Ratio::Defined(num / den) } else { Ratio::Undefined }
    }

    pub fn value(self) -> Option<f64> {
        match self {
            Ratio::Defined(v) => Some(v),
            Ratio::Undefined => None,
        }
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Ratio::Defined(v) => write!(f, "{v:.4}"),
            Ratio::Undefined => f.write_str("undefined"),
        }
    }
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    pub fn accuracy(&self) -> Ratio {
        Ratio::of((self.tp + self.tn) as f64, self.total() as f64)
    }

    pub fn sensitivity(&self) -> Ratio {
        Ratio::of(self.tp as f64, (self.tp + self.fn_) as f64)
    }

    pub fn specificity(&self) -> Ratio {
        Ratio::of(self.tn as f64, (self.tn + self.fp) as f64)
    }

    pub fn precision(&self) -> Ratio {
        Ratio::of(self.tp as f64, (self.tp + self.fp) as f64)
    }

    /// `(1 + β²)·P·S / (β²·P + S)`.
    pub fn f_beta(&self, beta: f64) -> Ratio {
        match (self.precision(), self.sensitivity()) {
            (Ratio::Defined(p), Ratio::Defined(s)) if p == s => Ratio::Defined(p),
            (Ratio::Defined(p), Ratio::Defined(s)) => {
                let b2 = beta * beta;
                Ratio::of((1.0 + b2) * p * s, b2 * p + s)
            }
            _ => Ratio::Undefined,
        }
    }
}

/// Counts with respect to `positive_class`; every other class is negative.
pub fn confusion(predictions: &[usize], labels: &[usize], positive_class: usize) -> Result<ConfusionCounts> {
    if predictions.is_empty() {
        return Err(Error::Empty("prediction list"));
    }
    if predictions.len() != labels.len() {
        return Err(Error::shape(
            "confusion",
            format!("{} predictions vs {} labels", predictions.len(), labels.len()),
        ));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &l) in predictions.iter().zip(labels) {
        match (p == positive_class, l == positive_class) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

fn argmax(row: &[f32]) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f32::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0
}

/// Class predicted by `generator` for each sample, read from its class head.
pub fn predict_classes(generator: &Generator<f32>, dataset: &Dataset) -> Result<Vec<usize>> {
    dataset
        .samples
        .iter()
        .map(|s| {
            let (h, w) = s.size();
            let x = s.image.clone().reshape(&[1, 1, h, w])?;
            let out = generator.infer(&x)?;
            Ok(argmax(out.class_probs.data()))
        })
        .collect()
}

/// Routes every sample, whatever its quality, through `generator`.
pub fn classify_testset(
    generator: &Generator<f32>,
    dataset: &Dataset,
    positive_class: usize,
) -> Result<ConfusionCounts> {
    let preds = predict_classes(generator, dataset)?;
    let labels: Vec<usize> = dataset.samples.iter().map(|s| s.label).collect();
    confusion(&preds, &labels, positive_class)
}

/// `k`-fold application of the generator's image head; `k = 0` is the identity.
pub fn restore_iterative(generator: &Generator<f32>, image: &Tensor<f32>, k: usize) -> Result<Tensor<f32>> {
    let shape = image.shape().to_vec();
    let (h, w) = match shape.as_slice() {
        [h, w] | [1, h, w] | [1, 1, h, w] => (*h, *w),
        _ => return Err(Error::shape("restore_iterative", format!("expected one image, got {shape:?}"))),
    };
    let mut x = image.clone().reshape(&[1, 1, h, w])?;
    for _ in 0..k {
        x = generator.infer(&x)?.restored;
    }
    x.reshape(&shape)
}

/// Peak signal-to-noise ratio in dB for images on `[-1, 1]` (peak-to-peak 2).
/// Identical images give `f64::INFINITY`.
pub fn psnr(a: &Tensor<f32>, b: &Tensor<f32>) -> Result<f64> {
    if a.numel() != b.numel() || a.numel() == 0 {
        return Err(Error::shape("psnr", format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| ((x - y) as f64).powi(2))
        .sum::<f64>()
        / a.numel() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (4.0 / mse).log10())
}

/// Mean absolute difference.
pub fn mean_l1(a: &Tensor<f32>, b: &Tensor<f32>) -> Result<f64> {
    if a.numel() != b.numel() || a.numel() == 0 {
        return Err(Error::shape("mean_l1", format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(a.data().iter().zip(b.data()).map(|(&x, &y)| (x - y).abs() as f64).sum::<f64>() / a.numel() as f64)
}

/// One row of the evaluation report.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub model: String,
    pub q: usize,
    pub counts: ConfusionCounts,
}

pub const EVAL_HEADER: &str = "model,Q,accuracy,sensitivity,specificity,precision,f1,f2";

impl EvalRow {
    pub fn csv_line(&self) -> String {
        let c = &self.counts;
        format!(
            "{},{},{},{},{},{},{},{}",
            self.model,
            self.q,
            c.accuracy(),
            c.sensitivity(),
            c.specificity(),
            c.precision(),
            c.f_beta(1.0),
            c.f_beta(2.0)
        )
    }
}

pub fn write_eval_report<W: Write>(mut out: W, rows: &[EvalRow]) -> std::io::Result<()> {
    writeln!(out, "{EVAL_HEADER}")?;
    for r in rows {
        writeln!(out, "{}", r.csv_line())?;
    }
    Ok(())
}
