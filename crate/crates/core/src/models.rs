//! Generators (joint restore + classify) and patch discriminators.
//!
//! Generator topology, all kernels 3×3:
//!
//! ```text
//! image [N,1,H,W]
//!   down1: op-conv s2, 1 → C        [N,C,H/2,W/2]   norm, act
//!   down2: op-conv s2, C → 4C       [N,4C,H/4,W/4]  norm, act ──► GAP → dense → softmax  (class head)
//!   up1:   op-tconv s2, 4C → C      [N,C,H/2,W/2]   norm, act
//!   concat(up1, down1)              [N,2C,H/2,W/2]
//!   up2:   op-tconv s2, 2C → 1      [N,1,H,W]       tanh       (image head)
//! ```
//!
//! Discriminator: three op-conv stride-2 stages `1 → C → 2C → 4C` with
//! leaky-relu, then a stride-1 projection to a single-channel patch mask of
//! extent `H/8 × W/8`. The mask is left unbounded for least-squares targets.

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Activation, Graph, Var};
use crate::error::{Error, Result};
use crate::operational::{init_operational, operational_conv2d, ConvSpec, InitScheme, OperationalFilterParams};
use crate::params::ParamSet;
use crate::tensor::{Real, Tensor};

const KERNEL: usize = 3;
const DISC_SLOPE: f64 = 0.2;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub q: usize,
    pub base_channels: usize,
    pub num_classes: usize,
    pub image_size: (usize, usize),
    /// `false` selects the plain-convolution variant with ReLU activations.
    pub use_operational: bool,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self { q: 3, base_channels: 64, num_classes: 2, image_size: (64, 64), use_operational: true }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.image_size;
        if h == 0 || w == 0 || h % 4 != 0 || w % 4 != 0 {
            return Err(Error::Config(format!("image size {h}x{w} must be non-zero multiples of 4")));
        }
        if self.num_classes < 2 {
            return Err(Error::Config("at least two classes are required".into()));
        }
        if self.q == 0 || self.base_channels == 0 {
            return Err(Error::Config("Q and base_channels must be >= 1".into()));
        }
        Ok(())
    }

    /// Taylor order actually used: the plain variant is first order.
    pub fn effective_q(&self) -> usize {
        if self.use_operational { self.q } else { 1 }
    }

    fn hidden_activation(&self) -> Activation {
        if self.use_operational { Activation::Tanh } else { Activation::Relu }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscriminatorConfig {
    pub q: usize,
    pub base_channels: usize,
    pub image_size: (usize, usize),
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self { q: 3, base_channels: 32, image_size: (64, 64) }
    }
}

impl DiscriminatorConfig {
    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.image_size;
        if h < 8 || w < 8 || h % 8 != 0 || w % 8 != 0 {
            return Err(Error::Config(format!("discriminator input {h}x{w} must be multiples of 8")));
        }
        if self.q == 0 || self.base_channels == 0 {
            return Err(Error::Config("Q and base_channels must be >= 1".into()));
        }
        Ok(())
    }

    /// Extent `(d_m, d_n)` of the patch mask.
    pub fn mask_size(&self) -> (usize, usize) {
        (self.image_size.0 / 8, self.image_size.1 / 8)
    }
}

/// Image and class prediction produced by one generator pass.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorOutput<T> {
    /// `[N, 1, H, W]`, every pixel in `[-1, 1]`.
    pub restored: Tensor<T>,
    /// `[N, N_C]`, rows on the simplex.
    pub class_probs: Tensor<T>,
}

/// Graph handles of a generator pass.
#[derive(Clone, Copy, Debug)]
pub struct GeneratorVars {
    pub restored: Var,
    pub class_probs: Var,
}

/// Per-region realism scores `[N, d_m, d_n]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchMask<T> {
    pub mask: Tensor<T>,
}

#[derive(Clone, Copy, Debug)]
struct OpLayer {
    weights: usize,
    biases: usize,
    norm: Option<(usize, usize)>,
    spec: ConvSpec,
}

#[allow(clippy::too_many_arguments)]
fn push_op_layer<T: Real, R: Rng + ?Sized>(
    params: &mut ParamSet<T>,
    name: &str,
    q: usize,
    c_in: usize,
    c_out: usize,
    spec: ConvSpec,
    norm: bool,
    rng: &mut R,
) -> Result<OpLayer> {
    let mut p = OperationalFilterParams::zeros(q, c_in, c_out, (KERNEL, KERNEL), spec.transposed)?;
    init_operational(&mut p, InitScheme::ScaledUniform, rng);
    let weights = params.push(format!("{name}.weight"), p.weights);
    let biases = params.push(format!("{name}.bias"), p.biases);
    let norm = norm.then(|| {
        (
            params.push(format!("{name}.norm.gain"), Tensor::ones(&[c_out])),
            params.push(format!("{name}.norm.shift"), Tensor::zeros(&[c_out])),
        )
    });
    Ok(OpLayer { weights, biases, norm, spec })
}

fn apply_layer<T: Real>(
    g: &mut Graph<T>,
    bound: &[Var],
    layer: &OpLayer,
    x: Var,
    act: Activation,
) -> Result<Var> {
    let y = operational_conv2d(g, x, bound[layer.weights], bound[layer.biases], layer.spec, Activation::Linear)?;
    let y = match layer.norm {
        Some((gain, shift)) => g.instance_norm(y, bound[gain], bound[shift])?,
        None => y,
    };
    Ok(g.activate(y, act))
}

/// Inserts `params` as frozen constants and returns the handles.
fn bind_frozen<T: Real>(params: &ParamSet<T>, g: &mut Graph<T>) -> Vec<Var> {
    params.bind(g, false)
}

#[derive(Clone, Debug)]
pub struct Generator<T> {
    config: GeneratorConfig,
    params: ParamSet<T>,
    down1: OpLayer,
    down2: OpLayer,
    up1: OpLayer,
    up2: OpLayer,
    head_weight: usize,
    head_bias: usize,
}

impl<T: Real> Generator<T> {
    /// Builds a freshly initialized generator whose parameter names start with `prefix`.
    pub fn new<R: Rng + ?Sized>(config: GeneratorConfig, prefix: &str, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let q = config.effective_q();
        let c = config.base_channels;
        let mut params = ParamSet::new();
        let down1 = push_op_layer(&mut params, &format!("{prefix}.down1"), q, 1, c, ConvSpec::same(2, KERNEL), true, rng)?;
        let down2 =
            push_op_layer(&mut params, &format!("{prefix}.down2"), q, c, 4 * c, ConvSpec::same(2, KERNEL), true, rng)?;
        let up1 = push_op_layer(
            &mut params,
            &format!("{prefix}.up1"),
            q,
            4 * c,
            c,
            ConvSpec::upsample(2, KERNEL),
            true,
            rng,
        )?;
        let up2 = push_op_layer(
            &mut params,
            &format!("{prefix}.up2"),
            q,
            2 * c,
            1,
            ConvSpec::upsample(2, KERNEL),
            false,
            rng,
        )?;
        let bound = 1.0 / ((4 * c) as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        let w: Vec<T> = (0..config.num_classes * 4 * c).map(|_| T::lit(dist.sample(rng))).collect();
        let head_weight = params.push(format!("{prefix}.head.weight"), Tensor::from_vec(&[config.num_classes, 4 * c], w)?);
        let head_bias = params.push(format!("{prefix}.head.bias"), Tensor::zeros(&[config.num_classes]));
        Ok(Self { config, params, down1, down2, up1, up2, head_weight, head_bias })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.count()
    }

    /// Indices of the classification-head parameters within [`Self::params`].
    pub fn head_param_indices(&self) -> [usize; 2] {
        [self.head_weight, self.head_bias]
    }

    pub fn check_input(&self, shape: &[usize]) -> Result<()> {
        match *shape {
            [_, 1, h, w] if h > 0 && w > 0 && h % 4 == 0 && w % 4 == 0 => Ok(()),
            _ => Err(Error::shape(
                "generator",
                format!("expected [N, 1, H, W] with H, W multiples of 4, got {shape:?}"),
            )),
        }
    }

    /// Builds the forward pass on `g` using parameter handles `bound`.
    pub fn forward(&self, g: &mut Graph<T>, bound: &[Var], image: Var) -> Result<GeneratorVars> {
        self.check_input(g.shape(image))?;
        let act = self.config.hidden_activation();
        let d1 = apply_layer(g, bound, &self.down1, image, act)?;
        let d2 = apply_layer(g, bound, &self.down2, d1, act)?;
        let pooled = g.global_avg_pool(d2)?;
        let logits = g.dense(pooled, bound[self.head_weight], bound[self.head_bias])?;
        let class_probs = g.softmax(logits)?;
        let u1 = apply_layer(g, bound, &self.up1, d2, act)?;
        let skip = g.concat_channels(u1, d1)?;
        let restored = apply_layer(g, bound, &self.up2, skip, Activation::Tanh)?;
        Ok(GeneratorVars { restored, class_probs })
    }

    /// Inference over frozen weights.
    pub fn infer(&self, image: &Tensor<T>) -> Result<GeneratorOutput<T>> {
        let mut g = Graph::new();
        let bound = bind_frozen(&self.params, &mut g);
        let x = g.constant(image.clone());
        let out = self.forward(&mut g, &bound, x)?;
        Ok(GeneratorOutput {
            restored: g.value(out.restored).clone(),
            class_probs: g.value(out.class_probs).clone(),
        })
    }
}

#[derive(Clone, Debug)]
pub struct Discriminator<T> {
    config: DiscriminatorConfig,
    params: ParamSet<T>,
    stages: [OpLayer; 3],
    projection: OpLayer,
}

impl<T: Real> Discriminator<T> {
    pub fn new<R: Rng + ?Sized>(config: DiscriminatorConfig, prefix: &str, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let (q, c) = (config.q, config.base_channels);
        let mut params = ParamSet::new();
        let widths = [1, c, 2 * c, 4 * c];
        let mut stages = Vec::with_capacity(3);
        for i in 0..3 {
            stages.push(push_op_layer(
                &mut params,
                &format!("{prefix}.stage{}", i + 1),
                q,
                widths[i],
                widths[i + 1],
                ConvSpec::same(2, KERNEL),
                i > 0,
                rng,
            )?);
        }
        let projection = push_op_layer(
            &mut params,
            &format!("{prefix}.mask"),
            q,
            4 * c,
            1,
            ConvSpec::same(1, KERNEL),
            false,
            rng,
        )?;
        Ok(Self { config, params, stages: [stages[0], stages[1], stages[2]], projection })
    }

    pub fn config(&self) -> &DiscriminatorConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.count()
    }

    /// Mask handle of shape `[N, 1, d_m, d_n]`.
    pub fn forward(&self, g: &mut Graph<T>, bound: &[Var], image: Var) -> Result<Var> {
        match *g.shape(image) {
            [_, 1, h, w] if h >= 8 && w >= 8 && h % 8 == 0 && w % 8 == 0 => {}
            ref s => {
                return Err(Error::shape(
                    "discriminator",
                    format!("expected [N, 1, H, W] with H, W multiples of 8, got {s:?}"),
                ))
            }
        }
        let act = Activation::LeakyRelu(DISC_SLOPE);
        let mut x = image;
        for stage in &self.stages {
            x = apply_layer(g, bound, stage, x, act)?;
        }
        apply_layer(g, bound, &self.projection, x, Activation::Linear)
    }

    pub fn infer(&self, image: &Tensor<T>) -> Result<PatchMask<T>> {
        let mut g = Graph::new();
        let bound = bind_frozen(&self.params, &mut g);
        let x = g.constant(image.clone());
        let m = self.forward(&mut g, &bound, x)?;
        let v = g.value(m);
        let s = v.shape();
        let mask = v.clone().reshape(&[s[0], s[2], s[3]])?;
        Ok(PatchMask { mask })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(3)
    }

    fn small() -> GeneratorConfig {
        GeneratorConfig { q: 3, base_channels: 4, num_classes: 2, image_size: (16, 16), use_operational: true }
    }

    #[test]
    fn zero_image_gives_finite_simplex_output() {
        let gen = Generator::<f32>::new(small(), "g", &mut rng()).unwrap();
        let out = gen.infer(&Tensor::zeros(&[1, 1, 16, 16])).unwrap();
        assert_eq!(out.restored.shape(), &[1, 1, 16, 16]);
        assert!(out.restored.all_finite() && out.class_probs.all_finite());
        let s: f32 = out.class_probs.data().iter().sum();
        assert!((s - 1.0).abs() < 1e-6);
    }

    #[test]
    fn forward_is_deterministic_and_bounded() {
        let gen = Generator::<f32>::new(small(), "g", &mut rng()).unwrap();
        let img: Vec<f32> = (0..256).map(|i| ((i * 37 % 100) as f32 / 50.0) - 1.0).collect();
        let img = Tensor::from_vec(&[1, 1, 16, 16], img).unwrap();
        let a = gen.infer(&img).unwrap();
        let b = gen.infer(&img).unwrap();
        assert_eq!(a, b);
        assert!(a.restored.data().iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn rejects_bad_inputs_and_configs() {
        let gen = Generator::<f32>::new(small(), "g", &mut rng()).unwrap();
        assert!(gen.infer(&Tensor::zeros(&[1, 3, 16, 16])).is_err());
        assert!(gen.infer(&Tensor::zeros(&[1, 1, 18, 16])).is_err());
        let bad = GeneratorConfig { image_size: (30, 32), ..small() };
        assert!(Generator::<f32>::new(bad, "g", &mut rng()).is_err());
        let bad = GeneratorConfig { num_classes: 1, ..small() };
        assert!(Generator::<f32>::new(bad, "g", &mut rng()).is_err());
    }

    #[test]
    fn parameter_count_matches_brute_force_sum() {
        let gen = Generator::<f32>::new(small(), "g", &mut rng()).unwrap();
        let brute: usize = gen.params().tensors().iter().map(|t| t.shape().iter().product::<usize>()).sum();
        assert_eq!(gen.parameter_count(), brute);
        assert!(gen.params().names().iter().all(|n| n.starts_with("g.")));
    }

    #[test]
    fn plain_variant_is_first_order() {
        let cfg = GeneratorConfig { use_operational: false, q: 5, ..small() };
        let plain = Generator::<f32>::new(cfg, "g", &mut rng()).unwrap();
        let q1 = Generator::<f32>::new(GeneratorConfig { q: 1, ..small() }, "g", &mut rng()).unwrap();
        assert_eq!(plain.parameter_count(), q1.parameter_count());
    }

    #[test]
    fn discriminator_mask_extent() {
        let cfg = DiscriminatorConfig { q: 2, base_channels: 4, image_size: (64, 64) };
        let d = Discriminator::<f32>::new(cfg.clone(), "dx", &mut rng()).unwrap();
        let m = d.infer(&Tensor::zeros(&[1, 1, 64, 64])).unwrap();
        assert_eq!(m.mask.shape(), &[1, 8, 8]);
        assert_eq!(cfg.mask_size(), (8, 8));
    }

    #[test]
    fn constant_weight_discriminator_gives_constant_mask() {
        let cfg = DiscriminatorConfig { q: 1, base_channels: 2, image_size: (16, 16) };
        let mut d = Discriminator::<f64>::new(cfg, "dx", &mut rng()).unwrap();
        for t in d.params_mut().tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let img = Tensor::from_vec(&[1, 1, 16, 16], (0..256).map(|i| i as f64 / 256.0).collect()).unwrap();
        let m = d.infer(&img).unwrap();
        let first = m.mask.data()[0];
        assert!(m.mask.data().iter().all(|&v| v == first));
    }
}
