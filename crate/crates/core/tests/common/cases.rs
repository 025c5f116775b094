//! Gradient-check cases covering every graph primitive and the operational layer.

use super::{gradcheck, one_hot_rows, rng, signed_away_from_zero, uniform};
use r2c::operational::{operational_conv2d, ConvSpec};
use r2c::{Activation, Graph, Tensor, Var};

pub const SEEDS: u64 = 20;
pub const TOL: f64 = 1e-4;

type Build = Box<dyn Fn(&mut Graph<f64>, &[Var]) -> r2c::Result<Var>>;

pub struct Case {
    pub name: &'static str,
    pub leaves: Vec<Tensor<f64>>,
    pub build: Build,
}

fn case(name: &'static str, leaves: Vec<Tensor<f64>>, build: impl Fn(&mut Graph<f64>, &[Var]) -> r2c::Result<Var> + 'static) -> Case {
    Case { name, leaves, build: Box::new(build) }
}

pub fn primitive_cases(seed: u64) -> Vec<Case> {
    let mut r = rng(seed);
    let u = |r: &mut _, s: &[usize]| uniform(r, s, -1.0, 1.0);
    let away = |r: &mut _, s: &[usize]| signed_away_from_zero(r, s, 0.05, 1.0);
    let a = u(&mut r, &[2, 3]);
    let b = u(&mut r, &[2, 3]);
    let pos = uniform(&mut r, &[2, 3], 0.3, 1.2);
    let kinked = away(&mut r, &[2, 3]);
    let logits = u(&mut r, &[3, 4]);
    let target = one_hot_rows(&mut r, 3, 4);
    let img = u(&mut r, &[2, 3, 6, 6]);
    let w33 = u(&mut r, &[4, 3, 3, 3]);
    let w11 = u(&mut r, &[4, 3, 1, 1]);
    let bias4 = u(&mut r, &[4]);
    let tw = u(&mut r, &[3, 2, 3, 3]);
    let bias2 = u(&mut r, &[2]);
    let gain = uniform(&mut r, &[3], 0.5, 1.5);
    let shift = u(&mut r, &[3]);
    let feats = u(&mut r, &[3, 5]);
    let dw = u(&mut r, &[4, 5]);
    let db = u(&mut r, &[4]);
    let l1_a = u(&mut r, &[2, 3]);
    let l1_b = Tensor::from_vec(
        &[2, 3],
        l1_a.data().iter().zip(away(&mut r, &[2, 3]).data()).map(|(x, d)| x + d).collect(),
    )
    .unwrap();
    let stack = u(&mut r, &[3, 2, 4]);
    let other = u(&mut r, &[2, 2, 6, 6]);

    vec![
        case("add", vec![a.clone(), b.clone()], |g, v| g.add(v[0], v[1])),
        case("sub", vec![a.clone(), b.clone()], |g, v| g.sub(v[0], v[1])),
        case("mul", vec![a.clone(), b.clone()], |g, v| g.mul(v[0], v[1])),
        case("scale", vec![a.clone()], |g, v| Ok(g.scale(v[0], -0.7))),
        case("add_scalar", vec![a.clone()], |g, v| Ok(g.add_scalar(v[0], 0.3))),
        case("pow2", vec![pos.clone()], |g, v| g.pow(v[0], 2)),
        case("pow3", vec![a.clone()], |g, v| g.pow(v[0], 3)),
        case("pow5", vec![pos.clone()], |g, v| g.pow(v[0], 5)),
        case("tanh", vec![a.clone()], |g, v| Ok(g.tanh(v[0]))),
        case("sigmoid", vec![a.clone()], |g, v| Ok(g.sigmoid(v[0]))),
        case("leaky_relu", vec![kinked.clone()], |g, v| Ok(g.leaky_relu(v[0], 0.2))),
        case("relu", vec![kinked.clone()], |g, v| Ok(g.relu(v[0]))),
        case("softmax", vec![logits.clone()], |g, v| g.softmax(v[0])),
        case("cross_entropy", vec![logits.clone()], move |g, v| {
            let p = g.softmax(v[0])?;
            g.cross_entropy(&target, p)
        }),
        case("conv2d_s1", vec![img.clone(), w33.clone(), bias4.clone()], |g, v| {
            g.conv2d(v[0], v[1], Some(v[2]), 1, 1)
        }),
        case("conv2d_s2", vec![img.clone(), w33.clone()], |g, v| g.conv2d(v[0], v[1], None, 2, 1)),
        case("conv2d_1x1", vec![img.clone(), w11.clone(), bias4.clone()], |g, v| {
            g.conv2d(v[0], v[1], Some(v[2]), 1, 0)
        }),
        case("conv_transpose2d", vec![img.clone(), tw.clone(), bias2.clone()], |g, v| {
            g.conv_transpose2d(v[0], v[1], Some(v[2]), 2, 1, 1)
        }),
        case("instance_norm", vec![img.clone(), gain.clone(), shift.clone()], |g, v| {
            g.instance_norm(v[0], v[1], v[2])
        }),
        case("global_avg_pool", vec![img.clone()], |g, v| g.global_avg_pool(v[0])),
        case("dense", vec![feats.clone(), dw.clone(), db.clone()], |g, v| g.dense(v[0], v[1], v[2])),
        case("sum", vec![a.clone()], |g, v| Ok(g.sum(v[0]))),
        case("mean", vec![a.clone()], |g, v| Ok(g.mean(v[0]))),
        case("l1_mean", vec![l1_a.clone(), l1_b.clone()], |g, v| g.l1_mean(v[0], v[1])),
        case("mse", vec![a.clone(), b.clone()], |g, v| g.mse(v[0], v[1])),
        case("mse_to_const", vec![a.clone()], |g, v| Ok(g.mse_to_const(v[0], 1.0))),
        case("select", vec![stack.clone()], |g, v| g.select(v[0], 1)),
        case("sum_axis0", vec![stack.clone()], |g, v| g.sum_axis0(v[0])),
        case("concat_channels", vec![img.clone(), other.clone()], |g, v| g.concat_channels(v[0], v[1])),
    ]
}

pub fn operational_cases(seed: u64, q: usize) -> Vec<Case> {
    let mut r = rng(seed.wrapping_mul(31).wrapping_add(q as u64));
    let x = uniform(&mut r, &[2, 2, 5, 5], -1.0, 1.0);
    let w = uniform(&mut r, &[q, 3, 2, 3, 3], -0.5, 0.5);
    let b = uniform(&mut r, &[q, 3], -0.5, 0.5);
    let tw = uniform(&mut r, &[q, 2, 3, 3, 3], -0.5, 0.5);
    let tb = uniform(&mut r, &[q, 3], -0.5, 0.5);
    vec![
        case("operational_s1_tanh", vec![x.clone(), w.clone(), b.clone()], |g, v| {
            operational_conv2d(g, v[0], v[1], v[2], ConvSpec::same(1, 3), Activation::Tanh)
        }),
        case("operational_s2_linear", vec![x.clone(), w, b], |g, v| {
            operational_conv2d(g, v[0], v[1], v[2], ConvSpec::same(2, 3), Activation::Linear)
        }),
        case("operational_up_sigmoid", vec![x, tw, tb], |g, v| {
            operational_conv2d(g, v[0], v[1], v[2], ConvSpec::upsample(2, 3), Activation::Sigmoid)
        }),
    ]
}

pub fn check(cases: Vec<Case>, seed: u64) -> Vec<String> {
    cases
        .into_iter()
        .filter_map(|c| {
            let err = gradcheck(&c.leaves, seed, &c.build);
            (!(err < TOL)).then(|| format!("{} seed {seed}: relative error {err:e}", c.name))
        })
        .collect()
}

