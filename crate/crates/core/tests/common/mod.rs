//! Independent oracles shared by the integration tests.

#![allow(dead_code)]

pub mod cases;

use r2c::{Graph, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut impl Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Uniform on `[lo, hi]` with a random sign, so values stay away from zero.
pub fn signed_away_from_zero(rng: &mut impl Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.random_range(lo..hi);
            if rng.random_bool(0.5) { m } else { -m }
        })
        .collect();
    Tensor::from_vec(shape, data).unwrap()
}

pub fn one_hot_rows(rng: &mut impl Rng, n: usize, classes: usize) -> Tensor<f64> {
    let mut data = vec![0.0; n * classes];
    for r in 0..n {
        data[r * classes + rng.random_range(0..classes)] = 1.0;
    }
    Tensor::from_vec(&[n, classes], data).unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Direct sextuple loop. `x: [n, ci, h, w]`, `w: [co, ci, kh, kw]`.
pub fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, stride: usize, pad: usize) -> Tensor<f64> {
    let [n, ci, h, wd] = dims4(x);
    let [co, _, kh, kw] = dims4(w);
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (wd + 2 * pad - kw) / stride + 1;
    let (xd, wdat) = (x.data(), w.data());
    let mut out = vec![0.0; n * co * oh * ow];
    for b in 0..n {
        for o in 0..co {
            for i in 0..oh {
                for j in 0..ow {
                    let mut acc = 0.0;
                    for c in 0..ci {
                        for u in 0..kh {
                            for v in 0..kw {
                                let yy = (i * stride + u) as isize - pad as isize;
                                let xx = (j * stride + v) as isize - pad as isize;
                                if yy < 0 || xx < 0 || yy >= h as isize || xx >= wd as isize {
                                    continue;
                                }
                                acc += xd[((b * ci + c) * h + yy as usize) * wd + xx as usize]
                                    * wdat[((o * ci + c) * kh + u) * kw + v];
                            }
                        }
                    }
                    out[((b * co + o) * oh + i) * ow + j] = acc;
                }
            }
        }
    }
    Tensor::from_vec(&[n, co, oh, ow], out).unwrap()
}

/// Gradients of `Σ gy ⊙ naive_conv(x, w)` with respect to `x` and `w`.
pub fn naive_conv_grads(
    x: &Tensor<f64>,
    w: &Tensor<f64>,
    gy: &Tensor<f64>,
    stride: usize,
    pad: usize,
) -> (Tensor<f64>, Tensor<f64>) {
    let [n, ci, h, wd] = dims4(x);
    let [co, _, kh, kw] = dims4(w);
    let [_, _, oh, ow] = dims4(gy);
    let mut gx = vec![0.0; x.numel()];
    let mut gw = vec![0.0; w.numel()];
    for b in 0..n {
        for o in 0..co {
            for i in 0..oh {
                for j in 0..ow {
                    let g = gy.data()[((b * co + o) * oh + i) * ow + j];
                    for c in 0..ci {
                        for u in 0..kh {
                            for v in 0..kw {
                                let yy = (i * stride + u) as isize - pad as isize;
                                let xx = (j * stride + v) as isize - pad as isize;
                                if yy < 0 || xx < 0 || yy >= h as isize || xx >= wd as isize {
                                    continue;
                                }
                                let xi = ((b * ci + c) * h + yy as usize) * wd + xx as usize;
                                let wi = ((o * ci + c) * kh + u) * kw + v;
                                gx[xi] += g * w.data()[wi];
                                gw[wi] += g * x.data()[xi];
                            }
                        }
                    }
                }
            }
        }
    }
    (Tensor::from_vec(x.shape(), gx).unwrap(), Tensor::from_vec(w.shape(), gw).unwrap())
}

/// Scatter form of the transposed convolution. `w: [ci, co, kh, kw]`.
pub fn naive_conv_transpose(
    x: &Tensor<f64>,
    w: &Tensor<f64>,
    stride: usize,
    pad: usize,
    output_pad: usize,
) -> Tensor<f64> {
    let [n, ci, h, wd] = dims4(x);
    let [_, co, kh, kw] = dims4(w);
    let oh = (h - 1) * stride + kh + output_pad - 2 * pad;
    let ow = (wd - 1) * stride + kw + output_pad - 2 * pad;
    let mut out = vec![0.0; n * co * oh * ow];
    for b in 0..n {
        for c in 0..ci {
            for i in 0..h {
                for j in 0..wd {
                    let xv = x.data()[((b * ci + c) * h + i) * wd + j];
                    for o in 0..co {
                        for u in 0..kh {
                            for v in 0..kw {
                                let yy = (i * stride + u) as isize - pad as isize;
                                let xx = (j * stride + v) as isize - pad as isize;
                                if yy < 0 || xx < 0 || yy >= oh as isize || xx >= ow as isize {
                                    continue;
                                }
                                out[((b * co + o) * oh + yy as usize) * ow + xx as usize] +=
                                    xv * w.data()[((c * co + o) * kh + u) * kw + v];
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[n, co, oh, ow], out).unwrap()
}

pub fn naive_conv_transpose_grads(
    x: &Tensor<f64>,
    w: &Tensor<f64>,
    gy: &Tensor<f64>,
    stride: usize,
    pad: usize,
) -> (Tensor<f64>, Tensor<f64>) {
    let [n, ci, h, wd] = dims4(x);
    let [_, co, kh, kw] = dims4(w);
    let [_, _, oh, ow] = dims4(gy);
    let mut gx = vec![0.0; x.numel()];
    let mut gw = vec![0.0; w.numel()];
    for b in 0..n {
        for c in 0..ci {
            for i in 0..h {
                for j in 0..wd {
                    let xi = ((b * ci + c) * h + i) * wd + j;
                    for o in 0..co {
                        for u in 0..kh {
                            for v in 0..kw {
                                let yy = (i * stride + u) as isize - pad as isize;
                                let xx = (j * stride + v) as isize - pad as isize;
                                if yy < 0 || xx < 0 || yy >= oh as isize || xx >= ow as isize {
                                    continue;
                                }
                                let g = gy.data()[((b * co + o) * oh + yy as usize) * ow + xx as usize];
                                let wi = ((c * co + o) * kh + u) * kw + v;
                                gx[xi] += g * w.data()[wi];
                                gw[wi] += g * x.data()[xi];
                            }
                        }
                    }
                }
            }
        }
    }
    (Tensor::from_vec(x.shape(), gx).unwrap(), Tensor::from_vec(w.shape(), gw).unwrap())
}

/// Per-channel sums of `gy`, the gradient of a channel bias.
pub fn channel_sums(gy: &Tensor<f64>) -> Vec<f64> {
    let [n, c, h, w] = dims4(gy);
    (0..c)
        .map(|ch| {
            (0..n).map(|b| gy.data()[(b * c + ch) * h * w..(b * c + ch + 1) * h * w].iter().sum::<f64>()).sum()
        })
        .collect()
}

pub fn dims4(t: &Tensor<f64>) -> [usize; 4] {
    t.shape().try_into().expect("rank-4 tensor")
}

/// Fixed random projection so any output reduces to a scalar.
fn projection(seed: u64, shape: &[usize]) -> Tensor<f64> {
    uniform(&mut rng(seed ^ 0x9e37_79b9_7f4a_7c15), shape, -1.0, 1.0)
}

/// Builds `f` on fresh graphs and compares reverse-mode gradients of
/// `Σ P ⊙ f(leaves)` against central differences with step `1e-4`.
/// Returns the largest per-leaf relative error `‖a − n‖ / (‖a‖ + ‖n‖)`.
pub fn gradcheck<F>(leaves: &[Tensor<f64>], seed: u64, f: F) -> f64
where
    F: Fn(&mut Graph<f64>, &[Var]) -> r2c::Result<Var>,
{
    let run = |vals: &[Tensor<f64>], backward: bool| -> (f64, Vec<Tensor<f64>>) {
        let mut g = Graph::new();
        let vars: Vec<Var> = vals.iter().map(|t| g.param(t.clone())).collect();
        let out = f(&mut g, &vars).expect("graph builds");
        let p = g.constant(projection(seed, g.shape(out)));
        let m = g.mul(out, p).unwrap();
        let root = g.sum(m);
        let value = g.value(root).item();
        if !backward {
            return (value, vec![]);
        }
        g.backward(root).unwrap();
        let grads = vars
            .iter()
            .map(|&v| g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(g.shape(v))))
            .collect();
        (value, grads)
    };
    let (_, analytic) = run(leaves, true);
    let h = 1e-4;
    let mut worst: f64 = 0.0;
    for (li, leaf) in leaves.iter().enumerate() {
        let mut numeric = vec![0.0; leaf.numel()];
        for k in 0..leaf.numel() {
            let mut vals = leaves.to_vec();
            vals[li].data_mut()[k] = leaf.data()[k] + h;
            let (fp, _) = run(&vals, false);
            vals[li].data_mut()[k] = leaf.data()[k] - h;
            let (fm, _) = run(&vals, false);
            numeric[k] = (fp - fm) / (2.0 * h);
        }
        let a = analytic[li].data();
        let diff: f64 = a.iter().zip(&numeric).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nn: f64 = numeric.iter().map(|x| x * x).sum::<f64>().sqrt();
        let rel = if na + nn == 0.0 { 0.0 } else { diff / (na + nn) };
        worst = worst.max(rel);
    }
    worst
}

/// Small four-network configuration for fast f64 checks.
pub fn tiny_config(seed: u64, size: usize) -> r2c::training::TrainConfig {
    use r2c::models::{DiscriminatorConfig, GeneratorConfig};
    r2c::training::TrainConfig {
        generator: GeneratorConfig { q: 3, base_channels: 4, num_classes: 2, image_size: (size, size), use_operational: true },
        discriminator: DiscriminatorConfig { q: 3, base_channels: 4, image_size: (size, size) },
        seed,
        ..Default::default()
    }
}

/// `L_G` as assembled by the library and as expanded term by term from the
/// forward values, plus the expansion with every cross-entropy term dropped.
pub struct LossIdentity {
    pub assembled: f64,
    pub expanded: f64,
    pub classification_free: f64,
}

pub fn loss_identity(seed: u64, weights: r2c::losses::LossWeights) -> LossIdentity {
    use r2c::losses::{total_generator_loss, DomainInputs};
    use r2c::training::{cycle_pass, GeneratorBindings, R2cModel};

    let mut r = rng(seed);
    let n = r.random_range(1..=3);
    let size = 16;
    let model = R2cModel::<f64>::new(&tiny_config(seed, size)).unwrap();
    let y = uniform(&mut r, &[n, 1, size, size], -1.0, 1.0);
    let x = uniform(&mut r, &[n, 1, size, size], -1.0, 1.0);
    let c_y = one_hot_rows(&mut r, n, 2);
    let c_x = one_hot_rows(&mut r, n, 2);

    let mut g = Graph::new();
    let bind = GeneratorBindings {
        g: model.g.params().bind(&mut g, true),
        f: model.f.params().bind(&mut g, true),
        dx: model.dx.params().bind(&mut g, false),
        dy: model.dy.params().bind(&mut g, false),
    };
    let yv = g.constant(y.clone());
    let xv = g.constant(x.clone());
    let pass = cycle_pass(&mut g, &model, &bind, yv, xv).unwrap();
    let mx = model.dx.forward(&mut g, &bind.dx, pass.x_hat.restored).unwrap();
    let my = model.dy.forward(&mut g, &bind.dy, pass.y_hat.restored).unwrap();
    let inputs = DomainInputs { y: yv, x: xv, c_y: c_y.clone(), c_x: c_x.clone() };
    let lv = total_generator_loss(&mut g, &pass, &inputs, &weights, mx, my).unwrap();

    let val = |v: Var| g.value(v).data().to_vec();
    let lsq = |m: &[f64]| m.iter().map(|v| (v - 1.0).powi(2)).sum::<f64>() / m.len() as f64;
    let l1 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| (p - q).abs()).sum::<f64>() / a.len() as f64;
    let ce = |c: &Tensor<f64>, p: &[f64]| {
        -c.data().iter().zip(p).map(|(t, q)| t * q.max(1e-7).ln()).sum::<f64>() / n as f64
    };
    let (yd, xd) = (y.data(), x.data());
    let adversarial = lsq(&val(mx)) + lsq(&val(my));
    let cycle = l1(&val(pass.y_tilde.restored), yd) + l1(&val(pass.x_tilde.restored), xd);
    let identity = l1(&val(pass.x_bar.restored), xd) + l1(&val(pass.y_bar.restored), yd);
    let classes = ce(&c_y, &val(pass.x_hat.class_probs))
        + ce(&c_x, &val(pass.y_hat.class_probs))
        + ce(&c_y, &val(pass.y_tilde.class_probs))
        + ce(&c_x, &val(pass.x_tilde.class_probs))
        + ce(&c_x, &val(pass.x_bar.class_probs))
        + ce(&c_y, &val(pass.y_bar.class_probs));
    let classification_free = adversarial + weights.lambda * cycle + weights.beta * identity;
    LossIdentity {
        assembled: g.value(lv.total).item(),
        expanded: classification_free + weights.gamma * classes,
        classification_free,
    }
}
