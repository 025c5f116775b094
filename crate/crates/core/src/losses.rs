//! Generator and discriminator objectives.
//!
//! Generator side, per sample pair `(y ∈ Y, x ∈ X)` with one-hot labels:
//!
//! ```text
//! L1 = ‖D_X(x̂) − 1‖² − λa Σ c_y log ĉ_y  +  ‖D_Y(ŷ) − 1‖² − λa Σ c_x log ĉ_x
//! L2 = ‖ỹ − y‖₁ + ‖x̃ − x‖₁ − λc (Σ c_y log c̃_y + Σ c_x log c̃_x)
//! L3 = ‖x̄ − x‖₁ + ‖ȳ − y‖₁ − λi (Σ c_x log c̄_x + Σ c_y log c̄_y)
//! L_G = L1 + λ·L2 + β·L3,   λa = γ, λc = γ/λ, λi = γ/β
//! ```
//!
//! Squared norms are means over the mask, L1 norms are per-pixel means.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::models::GeneratorVars;
use crate::tensor::{Real, Tensor};

/// Tolerance on class-probability row sums.
pub const SIMPLEX_TOL: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda: 10.0, beta: 5.0, gamma: 0.1 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.lambda > 0.0 && self.beta > 0.0 && self.gamma >= 0.0 {
            Ok(())
        } else {
            Err(Error::Config(format!("loss weights need λ, β > 0 and γ >= 0, got {self:?}")))
        }
    }

    pub fn lambda_a(&self) -> f64 {
        self.gamma
    }

    pub fn lambda_c(&self) -> f64 {
        self.gamma / self.lambda
    }

    pub fn lambda_i(&self) -> f64 {
        self.gamma / self.beta
    }
}

/// Every intermediate product of one generator iteration.
#[derive(Clone, Copy, Debug)]
pub struct CyclePass {
    /// `G(y) = {x̂, ĉ_y}`
    pub x_hat: GeneratorVars,
    /// `F(x) = {ŷ, ĉ_x}`
    pub y_hat: GeneratorVars,
    /// `F(x̂) = {ỹ, c̃_y}`
    pub y_tilde: GeneratorVars,
    /// `G(ŷ) = {x̃, c̃_x}`
    pub x_tilde: GeneratorVars,
    /// `G(x) = {x̄, c̄_x}`
    pub x_bar: GeneratorVars,
    /// `F(y) = {ȳ, c̄_y}`
    pub y_bar: GeneratorVars,
}

impl CyclePass {
    pub fn images(&self) -> [Var; 6] {
        [
            self.x_hat.restored,
            self.y_hat.restored,
            self.y_tilde.restored,
            self.x_tilde.restored,
            self.x_bar.restored,
            self.y_bar.restored,
        ]
    }

    pub fn class_probs(&self) -> [Var; 6] {
        [
            self.x_hat.class_probs,
            self.y_hat.class_probs,
            self.y_tilde.class_probs,
            self.x_tilde.class_probs,
            self.x_bar.class_probs,
            self.y_bar.class_probs,
        ]
    }

    /// Checks that every image matches the input shape and every class row
    /// lies on the simplex.
    pub fn validate<T: Real>(&self, g: &Graph<T>, input_shape: &[usize]) -> Result<()> {
        for v in self.images() {
            if g.shape(v) != input_shape {
                return Err(Error::shape(
                    "cycle pass",
                    format!("image {:?} vs input {input_shape:?}", g.shape(v)),
                ));
            }
        }
        for v in self.class_probs() {
            check_simplex(g.value(v))?;
        }
        Ok(())
    }
}

/// The real images and labels an iteration is computed from.
#[derive(Clone, Debug)]
pub struct DomainInputs<T> {
    pub y: Var,
    pub x: Var,
    /// One-hot rows `[N, N_C]`.
    pub c_y: Tensor<T>,
    pub c_x: Tensor<T>,
}

/// Scalar handles for each generator-side loss component.
#[derive(Clone, Copy, Debug)]
pub struct GeneratorLossVars {
    /// `L_G`
    pub total: Var,
    /// Least-squares adversarial part of `L1`.
    pub adversarial: Var,
    /// L1 part of `L2`.
    pub cycle: Var,
    /// L1 part of `L3`.
    pub identity: Var,
    /// Sum of the six cross-entropy terms, unweighted. `None` when γ = 0.
    pub classification: Option<Var>,
}

pub fn check_simplex<T: Real>(probs: &Tensor<T>) -> Result<()> {
    let cols = *probs.shape().last().ok_or_else(|| Error::shape("simplex", "scalar"))?;
    for row in probs.data().chunks(cols) {
        let s: T = row.iter().copied().sum();
        let s = s.to_f64().unwrap_or(f64::NAN);
        if !(s - 1.0).abs().le(&SIMPLEX_TOL) || row.iter().any(|&p| p < T::zero()) {
            return Err(Error::OffSimplex { sum: s });
        }
    }
    Ok(())
}

fn weighted_ce<T: Real>(g: &mut Graph<T>, target: &Tensor<T>, probs: Var, weight: f64) -> Result<Option<Var>> {
    check_simplex(g.value(probs))?;
    if weight == 0.0 {
        return Ok(None);
    }
    let ce = g.cross_entropy(target, probs)?;
    Ok(Some(g.scale(ce, T::lit(weight))))
}

fn add_opt<T: Real>(g: &mut Graph<T>, a: Var, b: Option<Var>) -> Result<Var> {
    match b {
        Some(b) => g.add(a, b),
        None => Ok(a),
    }
}

/// `‖mask − 1‖² − λa Σ c log ĉ` for one generator.
pub fn adversarial_gen_loss<T: Real>(
    g: &mut Graph<T>,
    mask: Var,
    c_true: &Tensor<T>,
    c_pred: Var,
    lambda_a: f64,
) -> Result<Var> {
    let adv = g.mse_to_const(mask, T::one());
    let ce = weighted_ce(g, c_true, c_pred, lambda_a)?;
    add_opt(g, adv, ce)
}

/// `‖ỹ − y‖₁ + ‖x̃ − x‖₁ − λc (Σ c_y log c̃_y + Σ c_x log c̃_x)`.
pub fn cycle_loss<T: Real>(
    g: &mut Graph<T>,
    pass: &CyclePass,
    inputs: &DomainInputs<T>,
    lambda_c: f64,
) -> Result<Var> {
    let ry = g.l1_mean(pass.y_tilde.restored, inputs.y)?;
    let rx = g.l1_mean(pass.x_tilde.restored, inputs.x)?;
    let mut total = g.add(ry, rx)?;
    let ce = weighted_ce(g, &inputs.c_y, pass.y_tilde.class_probs, lambda_c)?;
    total = add_opt(g, total, ce)?;
    let ce = weighted_ce(g, &inputs.c_x, pass.x_tilde.class_probs, lambda_c)?;
    add_opt(g, total, ce)
}

/// `‖x̄ − x‖₁ + ‖ȳ − y‖₁ − λi (Σ c_x log c̄_x + Σ c_y log c̄_y)`.
pub fn identity_loss<T: Real>(
    g: &mut Graph<T>,
    pass: &CyclePass,
    inputs: &DomainInputs<T>,
    lambda_i: f64,
) -> Result<Var> {
    let rx = g.l1_mean(pass.x_bar.restored, inputs.x)?;
    let ry = g.l1_mean(pass.y_bar.restored, inputs.y)?;
    let mut total = g.add(rx, ry)?;
    let ce = weighted_ce(g, &inputs.c_x, pass.x_bar.class_probs, lambda_i)?;
    total = add_opt(g, total, ce)?;
    let ce = weighted_ce(g, &inputs.c_y, pass.y_bar.class_probs, lambda_i)?;
    add_opt(g, total, ce)
}

/// `L_G = L1 + λ·L2 + β·L3` given the discriminator masks `D_X(x̂)` and `D_Y(ŷ)`.
///
/// Also records the per-component terms used for loss curves; those extra
/// nodes do not feed `total`.
pub fn total_generator_loss<T: Real>(
    g: &mut Graph<T>,
    pass: &CyclePass,
    inputs: &DomainInputs<T>,
    weights: &LossWeights,
    mask_x: Var,
    mask_y: Var,
) -> Result<GeneratorLossVars> {
    weights.validate()?;
    pass.validate(g, g.shape(inputs.y).to_vec().as_slice())?;
    if g.shape(inputs.x) != g.shape(inputs.y) {
        return Err(Error::shape("generator loss", "x and y batches differ in shape"));
    }
    let a1 = adversarial_gen_loss(g, mask_x, &inputs.c_y, pass.x_hat.class_probs, weights.lambda_a())?;
    let a2 = adversarial_gen_loss(g, mask_y, &inputs.c_x, pass.y_hat.class_probs, weights.lambda_a())?;
    let l1 = g.add(a1, a2)?;
    let l2 = cycle_loss(g, pass, inputs, weights.lambda_c())?;
    let l3 = identity_loss(g, pass, inputs, weights.lambda_i())?;
    let l2s = g.scale(l2, T::lit(weights.lambda));
    let l3s = g.scale(l3, T::lit(weights.beta));
    let partial = g.add(l1, l2s)?;
    let total = g.add(partial, l3s)?;

    // Reporting-only components.
    let mx = g.mse_to_const(mask_x, T::one());
    let my = g.mse_to_const(mask_y, T::one());
    let adversarial = g.add(mx, my)?;
    let c1 = g.l1_mean(pass.y_tilde.restored, inputs.y)?;
    let c2 = g.l1_mean(pass.x_tilde.restored, inputs.x)?;
    let cycle = g.add(c1, c2)?;
    let i1 = g.l1_mean(pass.x_bar.restored, inputs.x)?;
    let i2 = g.l1_mean(pass.y_bar.restored, inputs.y)?;
    let identity = g.add(i1, i2)?;
    let classification = if weights.gamma == 0.0 {
        None
    } else {
        let terms = [
            (&inputs.c_y, pass.x_hat.class_probs),
            (&inputs.c_x, pass.y_hat.class_probs),
            (&inputs.c_y, pass.y_tilde.class_probs),
            (&inputs.c_x, pass.x_tilde.class_probs),
            (&inputs.c_x, pass.x_bar.class_probs),
            (&inputs.c_y, pass.y_bar.class_probs),
        ];
        let mut acc: Option<Var> = None;
        for (c, p) in terms {
            let ce = g.cross_entropy(c, p)?;
            acc = Some(match acc {
                None => ce,
                Some(a) => g.add(a, ce)?,
            });
        }
        acc
    };
    Ok(GeneratorLossVars { total, adversarial, cycle, identity, classification })
}

/// `‖M_x,r − 1‖² + ‖M_x,f‖² + ‖M_y,r − 1‖² + ‖M_y,f‖²` over discriminator masks.
pub fn discriminator_loss<T: Real>(
    g: &mut Graph<T>,
    real_x: Var,
    fake_x: Var,
    real_y: Var,
    fake_y: Var,
) -> Result<Var> {
    if g.shape(real_x) != g.shape(fake_x) || g.shape(real_y) != g.shape(fake_y) {
        return Err(Error::shape("discriminator loss", "real and fake masks differ in shape"));
    }
    let a = g.mse_to_const(real_x, T::one());
    let b = g.mse_to_const(fake_x, T::zero());
    let c = g.mse_to_const(real_y, T::one());
    let d = g.mse_to_const(fake_y, T::zero());
    let ab = g.add(a, b)?;
    let cd = g.add(c, d)?;
    g.add(ab, cd)
}
