//! Adam with bias-corrected moment estimates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self { alpha: 2e-4, beta1: 0.5, beta2: 0.999, epsilon: 1e-8 }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.alpha >= 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid optimizer settings {self:?}")))
        }
    }

    pub fn with_alpha(self, alpha: f64) -> Self {
        Self { alpha, ..self }
    }
}

/// First and second moment estimates, one pair per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub first: Vec<Tensor<T>>,
    pub second: Vec<Tensor<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn zeros_like(params: &[Tensor<T>]) -> Self {
        Self {
            first: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            second: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }
}

/// One Adam update at step index `t` (1-based).
pub fn adam_step<T: Real>(
    params: &mut [Tensor<T>],
    grads: &[Tensor<T>],
    state: &mut AdamState<T>,
    config: &OptimizerConfig,
    t: u64,
) -> Result<()> {
    if t == 0 {
        return Err(Error::InvalidArgument("adam step index starts at 1".into()));
    }
    if params.len() != grads.len() || params.len() != state.first.len() || params.len() != state.second.len() {
        return Err(Error::shape(
            "adam_step",
            format!("{} params, {} grads, {} moment slots", params.len(), grads.len(), state.first.len()),
        ));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || p.shape() != state.first[i].shape() || p.shape() != state.second[i].shape() {
            return Err(Error::shape(
                "adam_step",
                format!("param {i}: {:?} vs grad {:?}", p.shape(), g.shape()),
            ));
        }
    }
    let (b1, b2) = (T::lit(config.beta1), T::lit(config.beta2));
    let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
    let ti = i32::try_from(t).unwrap_or(i32::MAX);
    let corr1 = T::one() - b1.powi(ti);
    let corr2 = T::one() - b2.powi(ti);
    let alpha = T::lit(config.alpha);
    let eps = T::lit(config.epsilon);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = state.first[i].data_mut();
        let v = state.second[i].data_mut();
        for (k, (w, &gk)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
            m[k] = b1 * m[k] + one_b1 * gk;
            v[k] = b2 * v[k] + one_b2 * gk * gk;
            let mh = m[k] / corr1;
            let vh = v[k] / corr2;
            *w -= alpha * mh / (vh.sqrt() + eps);
        }
    }
    Ok(())
}
