//! Self-organized operational layers built from generative neurons.
//!
//! Each output channel applies a learned Q-th order polynomial of the input
//! before the spatial sum, realized as a sum of Q convolutions over element-wise
//! powers of the input:
//!
//! ```text
//! y = act( Σ_{q=1..Q} conv(x^q, W_q) + Σ_q b_q )
//! ```
//!
//! The constant term is carried by the bias, so powers start at 1. With
//! `Q = 1` the layer is an ordinary convolution.

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::autodiff::{Activation, Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Stride/padding of a (possibly transposed) operational convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
    pub pad: usize,
    /// Only meaningful for transposed layers.
    pub output_pad: usize,
    pub transposed: bool,
}

impl ConvSpec {
    pub fn same(stride: usize, kernel: usize) -> Self {
        Self { stride, pad: kernel / 2, output_pad: 0, transposed: false }
    }

    /// Transposed layer that multiplies the spatial extent by `stride`.
    pub fn upsample(stride: usize, kernel: usize) -> Self {
        Self { stride, pad: kernel / 2, output_pad: stride - 1, transposed: true }
    }
}

/// Taylor weights `[Q, a, b, m, n]` and per-order biases `[Q, c_out]`.
///
/// For a plain layer `(a, b) = (c_out, c_in)`; for a transposed layer
/// `(a, b) = (c_in, c_out)`, matching the underlying convolution layouts.
#[derive(Clone, Debug, PartialEq)]
pub struct OperationalFilterParams<T> {
    pub weights: Tensor<T>,
    pub biases: Tensor<T>,
    pub transposed: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitScheme {
    /// `U(-s, s)` with `s = 1/sqrt(fan_in)` for the first order and
    /// `s / q!` for order `q`.
    ScaledUniform,
}

impl<T: Real> OperationalFilterParams<T> {
    pub fn zeros(
        q: usize,
        c_in: usize,
        c_out: usize,
        kernel: (usize, usize),
        transposed: bool,
    ) -> Result<Self> {
        if q == 0 {
            return Err(Error::Config("Taylor order Q must be >= 1".into()));
        }
        if kernel.0.is_multiple_of(2) || kernel.1.is_multiple_of(2) {
            return Err(Error::Config(format!("kernel {kernel:?} must be odd in both axes")));
        }
        let (a, b) = if transposed { (c_in, c_out) } else { (c_out, c_in) };
        Ok(Self {
            weights: Tensor::zeros(&[q, a, b, kernel.0, kernel.1]),
            biases: Tensor::zeros(&[q, c_out]),
            transposed,
        })
    }

    pub fn q(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn c_in(&self) -> usize {
        let s = self.weights.shape();
        if self.transposed { s[1] } else { s[2] }
    }

    pub fn c_out(&self) -> usize {
        let s = self.weights.shape();
        if self.transposed { s[2] } else { s[1] }
    }

    pub fn kernel(&self) -> (usize, usize) {
        let s = self.weights.shape();
        (s[3], s[4])
    }

    /// `Q·c_out·c_in·m·n + Q·c_out`.
    pub fn parameter_count(&self) -> usize {
        self.weights.numel() + self.biases.numel()
    }

    pub fn validate(&self) -> Result<()> {
        let ws = self.weights.shape();
        if ws.len() != 5 || ws[0] == 0 {
            return Err(Error::shape("operational", format!("weights {ws:?}")));
        }
        if self.biases.shape() != [ws[0], self.c_out()] {
            return Err(Error::shape(
                "operational",
                format!(
                    "biases {:?} inconsistent with Q = {} and {} output channels",
                    self.biases.shape(),
                    ws[0],
                    self.c_out()
                ),
            ));
        }
        Ok(())
    }

    pub fn bind(&self, graph: &mut Graph<T>, trainable: bool) -> (Var, Var) {
        (graph.leaf(self.weights.clone(), trainable), graph.leaf(self.biases.clone(), trainable))
    }

    fn fan_in(&self) -> usize {
        let (m, n) = self.kernel();
        self.c_in() * m * n
    }
}

/// Fills `params` in place according to `scheme`.
pub fn init_operational<T: Real, R: Rng + ?Sized>(
    params: &mut OperationalFilterParams<T>,
    scheme: InitScheme,
    rng: &mut R,
) {
    match scheme {
        InitScheme::ScaledUniform => {
            let bound = 1.0 / (params.fan_in() as f64).sqrt();
            let per_order = params.weights.numel() / params.q();
            let mut factorial = 1.0;
            for (q, chunk) in params.weights.data_mut().chunks_mut(per_order).enumerate() {
                factorial *= (q + 1) as f64;
                let s = bound / factorial;
                let dist = Uniform::new_inclusive(-s, s).expect("finite bound");
                chunk.iter_mut().for_each(|w| *w = T::lit(dist.sample(rng)));
            }
            params.biases.data_mut().iter_mut().for_each(|b| *b = T::zero());
        }
    }
}

/// `act(Σ_q conv(x^q, W_q) + Σ_q b_q)` with `weights: [Q, …]` and `biases: [Q, c_out]`.
pub fn operational_conv2d<T: Real>(
    graph: &mut Graph<T>,
    input: Var,
    weights: Var,
    biases: Var,
    spec: ConvSpec,
    activation: Activation,
) -> Result<Var> {
    let ws = graph.shape(weights).to_vec();
    if ws.len() != 5 {
        return Err(Error::shape("operational_conv2d", format!("weights {ws:?}")));
    }
    let q = ws[0];
    let c_out = if spec.transposed { ws[2] } else { ws[1] };
    if graph.shape(biases) != [q, c_out] {
        return Err(Error::shape(
            "operational_conv2d",
            format!("biases {:?} inconsistent with Q = {q}, c_out = {c_out}", graph.shape(biases)),
        ));
    }
    let bias = graph.sum_axis0(biases)?;
    let mut acc: Option<Var> = None;
    for order in 1..=q {
        let x = if order == 1 { input } else { graph.pow(input, order as u32)? };
        let w = graph.select(weights, order - 1)?;
        let b = if order == 1 { Some(bias) } else { None };
        let y = if spec.transposed {
            graph.conv_transpose2d(x, w, b, spec.stride, spec.pad, spec.output_pad)?
        } else {
            graph.conv2d(x, w, b, spec.stride, spec.pad)?
        };
        acc = Some(match acc {
            None => y,
            Some(a) => graph.add(a, y)?,
        });
    }
    Ok(graph.activate(acc.expect("Q >= 1"), activation))
}

/// Convenience wrapper binding `params` as trainable leaves.
pub fn apply_params<T: Real>(
    graph: &mut Graph<T>,
    input: Var,
    params: &OperationalFilterParams<T>,
    spec: ConvSpec,
    activation: Activation,
) -> Result<Var> {
    params.validate()?;
    if spec.transposed != params.transposed {
        return Err(Error::Config("conv spec and params disagree on transposition".into()));
    }
    let (w, b) = params.bind(graph, true);
    operational_conv2d(graph, input, w, b, spec, activation)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn hand_evaluated_polynomial() {
        // y = 0.5, W = [1, 2, -1], b = [0.1, 0, 0]
        let mut p = OperationalFilterParams::<f64>::zeros(3, 1, 1, (1, 1), false).unwrap();
        p.weights.data_mut().copy_from_slice(&[1.0, 2.0, -1.0]);
        p.biases.data_mut().copy_from_slice(&[0.1, 0.0, 0.0]);
        let mut g = Graph::new();
        let x = g.constant(Tensor::full(&[1, 1, 1, 1], 0.5));
        let y = apply_params(&mut g, x, &p, ConvSpec::same(1, 1), Activation::Linear).unwrap();
        assert!((g.value(y).item() - 0.975).abs() < 1e-12);
    }

    #[test]
    fn rejects_inconsistent_q() {
        let mut p = OperationalFilterParams::<f64>::zeros(3, 2, 2, (3, 3), false).unwrap();
        p.biases = Tensor::zeros(&[2, 2]);
        assert!(p.validate().is_err());
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[1, 2, 4, 4]));
        let (w, b) = p.bind(&mut g, true);
        assert!(operational_conv2d(&mut g, x, w, b, ConvSpec::same(1, 3), Activation::Tanh).is_err());
    }

    #[test]
    fn rejects_even_kernel_and_zero_order() {
        assert!(OperationalFilterParams::<f32>::zeros(1, 1, 1, (2, 3), false).is_err());
        assert!(OperationalFilterParams::<f32>::zeros(0, 1, 1, (3, 3), false).is_err());
    }

    #[test]
    fn parameter_count_is_linear_in_q() {
        let counts: Vec<usize> = (1..=5)
            .map(|q| OperationalFilterParams::<f32>::zeros(q, 4, 6, (3, 3), false).unwrap().parameter_count())
            .collect();
        for (q, c) in counts.iter().enumerate() {
            assert_eq!(*c, (q + 1) * (6 * 4 * 9 + 6));
        }
    }

    #[test]
    fn init_scales_by_factorial_and_reseeds() {
        let mut a = OperationalFilterParams::<f64>::zeros(3, 16, 16, (3, 3), false).unwrap();
        let mut b = a.clone();
        init_operational(&mut a, InitScheme::ScaledUniform, &mut ChaCha8Rng::seed_from_u64(7));
        init_operational(&mut b, InitScheme::ScaledUniform, &mut ChaCha8Rng::seed_from_u64(7));
        assert_eq!(a, b);
        let per = a.weights.numel() / 3;
        let max_abs = |k: usize| {
            a.weights.data()[k * per..(k + 1) * per].iter().fold(0.0f64, |m, v| m.max(v.abs()))
        };
        let bound = 1.0 / (16.0f64 * 9.0).sqrt();
        assert!(max_abs(0) <= bound && max_abs(0) > 0.9 * bound);
        assert!(max_abs(2) <= bound / 6.0 && max_abs(2) > 0.9 * bound / 6.0);
        assert!(a.weights.all_finite());
    }

    #[test]
    fn first_order_variance_matches_fan_in() {
        // 10k draws: U(-s, s) has variance s²/3.
        let mut p = OperationalFilterParams::<f64>::zeros(1, 40, 28, (3, 3), false).unwrap();
        assert!(p.weights.numel() >= 10_000);
        init_operational(&mut p, InitScheme::ScaledUniform, &mut ChaCha8Rng::seed_from_u64(1));
        let w = p.weights.data();
        let n = w.len() as f64;
        let mean = w.iter().sum::<f64>() / n;
        let var = w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let expected = 1.0 / (40.0 * 9.0) / 3.0;
        assert!((var / expected - 1.0).abs() < 0.10, "{var} vs {expected}");
    }

    #[test]
    fn upsample_spec_doubles() {
        let s = ConvSpec::upsample(2, 3);
        assert_eq!((s.pad, s.output_pad), (1, 1));
        let mut g = Graph::<f32>::new();
        let p = OperationalFilterParams::<f32>::zeros(2, 3, 2, (3, 3), true).unwrap();
        let x = g.constant(Tensor::zeros(&[1, 3, 5, 7]));
        let y = apply_params(&mut g, x, &p, s, Activation::Tanh).unwrap();
        assert_eq!(g.shape(y), &[1, 2, 10, 14]);
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
    }
}
