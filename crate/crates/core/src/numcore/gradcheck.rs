//! Central finite-difference checks of tape gradients.
//!
//! [`OPS`] lists every differentiable op with a generator of random inputs
//! away from its non-smooth points; [`check_op`] compares the reverse-mode
//! gradient of a random linear functional of the op's output against
//! central differences.

use alloc::boxed::Box;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{gaussian_log2_mass, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Step used by [`check_op`].
pub const FD_STEP: f64 = 1e-5;

type Build = Box<dyn for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>>;

/// Largest norm-wise relative error `‖g − ĝ‖∞ / max(‖g‖∞, ‖ĝ‖∞)` over the
/// inputs of `f`, where `ĝ` is the central difference with step `h`.
pub fn max_relative_error(
    inputs: &[Tensor],
    h: f64,
    f: impl for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
) -> Result<f64> {
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = f(&tape, &vars)?;
    let grads = tape.backward(loss)?;
    let eval = |xs: &[Tensor]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = xs.iter().map(|t| tape.constant(t.clone())).collect();
        Ok(f(&tape, &vars)?.item())
    };
    let mut worst: f64 = 0.0;
    for (k, v) in vars.iter().enumerate() {
        let analytic = grads.wrt(*v);
        let mut xs = inputs.to_vec();
        let mut numeric = Vec::with_capacity(analytic.len());
        for i in 0..analytic.len() {
            let orig = xs[k].data()[i];
            xs[k].data_mut()[i] = orig + h;
            let up = eval(&xs)?;
            xs[k].data_mut()[i] = orig - h;
            let down = eval(&xs)?;
            xs[k].data_mut()[i] = orig;
            numeric.push((up - down) / (2.0 * h));
        }
        let diff = analytic.iter().zip(&numeric).fold(0.0f64, |m, (a, n)| m.max((a - n).abs()));
        let scale = analytic.iter().chain(&numeric).fold(0.0f64, |m, v| m.max(v.abs()));
        if scale > 0.0 {
            worst = worst.max(diff / scale);
        }
    }
    Ok(worst)
}

/// Differentiable ops covered by [`check_op`].
pub const OPS: [&str; 25] = [
    "add",
    "sub",
    "mul",
    "scale",
    "neg",
    "offset",
    "square",
    "exp",
    "log",
    "softplus",
    "sigmoid",
    "tanh",
    "atanh",
    "leaky_relu",
    "clamp",
    "sum",
    "mean",
    "matmul",
    "conv2d",
    "conv_transpose2d",
    "add_bias",
    "mul_channel",
    "grouped_linear",
    "slice_channels",
    "gaussian_log2_mass",
];

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(lo..hi))
}

/// Uniform draws kept at least `gap` away from every point in `kinks`.
fn avoiding(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64, kinks: &[f64], gap: f64) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| loop {
        let v = rng.random_range(lo..hi);
        if kinks.iter().all(|k| (v - k).abs() > gap) {
            break v;
        }
    })
}

fn small_shape(rng: &mut ChaCha8Rng) -> Vec<usize> {
    (0..rng.random_range(1..=3)).map(|_| rng.random_range(1..=4)).collect()
}

/// Random inputs and the op applied to them.
fn case(op: &str, rng: &mut ChaCha8Rng) -> Result<(Vec<Tensor>, Build)> {
    let shape = small_shape(rng);
    let un = |rng: &mut ChaCha8Rng| uniform(rng, &shape, -2.0, 2.0);
    let c: f64 = rng.random_range(-3.0..3.0);
    Ok(match op {
        "add" => (vec![un(rng), un(rng)], Box::new(|_, v| v[0].add(v[1]))),
        "sub" => (vec![un(rng), un(rng)], Box::new(|_, v| v[0].sub(v[1]))),
        "mul" => (vec![un(rng), un(rng)], Box::new(|_, v| v[0].mul(v[1]))),
        "scale" => (vec![un(rng)], Box::new(move |_, v| v[0].scale(c))),
        "neg" => (vec![un(rng)], Box::new(|_, v| v[0].neg())),
        "offset" => (vec![un(rng)], Box::new(move |_, v| v[0].offset(c))),
        "square" => (vec![un(rng)], Box::new(|_, v| v[0].square())),
        "exp" => (vec![un(rng)], Box::new(|_, v| v[0].exp())),
        "log" => (vec![uniform(rng, &shape, 0.1, 5.0)], Box::new(|_, v| v[0].log())),
        "softplus" => (vec![uniform(rng, &shape, -6.0, 6.0)], Box::new(|_, v| v[0].softplus())),
        "sigmoid" => (vec![uniform(rng, &shape, -6.0, 6.0)], Box::new(|_, v| v[0].sigmoid())),
        "tanh" => (vec![un(rng)], Box::new(|_, v| v[0].tanh())),
        "atanh" => (vec![uniform(rng, &shape, -0.95, 0.95)], Box::new(|_, v| v[0].atanh())),
        "leaky_relu" => {
            let slope = rng.random_range(0.01..0.5);
            (vec![avoiding(rng, &shape, -2.0, 2.0, &[0.0], 1e-3)], Box::new(move |_, v| v[0].leaky_relu(slope)))
        }
        "clamp" => {
            let (lo, hi) = (-rng.random_range(0.2..1.5), rng.random_range(0.2..1.5));
            (vec![avoiding(rng, &shape, -2.0, 2.0, &[lo, hi], 1e-3)], Box::new(move |_, v| v[0].clamp(lo, hi)))
        }
        "sum" => (vec![un(rng)], Box::new(|_, v| v[0].sum())),
        "mean" => (vec![un(rng)], Box::new(|_, v| v[0].mean())),
        "matmul" => {
            let (m, k, n) = (rng.random_range(1..=4), rng.random_range(1..=4), rng.random_range(1..=4));
            (vec![uniform(rng, &[m, k], -2.0, 2.0), uniform(rng, &[k, n], -2.0, 2.0)], Box::new(|_, v| v[0].matmul(v[1])))
        }
        "conv2d" | "conv_transpose2d" => {
            let kernel = [1, 3, 5][rng.random_range(0..3)];
            let stride = rng.random_range(1..=2);
            let pad = rng.random_range(0..=kernel / 2);
            let (n, cb, cs) = (rng.random_range(1..=2), rng.random_range(1..=3), rng.random_range(1..=3));
            let big = rng.random_range(kernel.max(2)..=7);
            let small = (big + 2 * pad - kernel) / stride + 1;
            if op == "conv2d" {
                let x = uniform(rng, &[n, cb, big, big], -1.0, 1.0);
                let w = uniform(rng, &[cs, cb, kernel, kernel], -1.0, 1.0);
                (vec![x, w], Box::new(move |_, v| v[0].conv2d(v[1], stride, pad)))
            } else {
                let x = uniform(rng, &[n, cs, small, small], -1.0, 1.0);
                let w = uniform(rng, &[cs, cb, kernel, kernel], -1.0, 1.0);
                (vec![x, w], Box::new(move |_, v| v[0].conv_transpose2d(v[1], stride, pad, (big, big))))
            }
        }
        "add_bias" | "mul_channel" => {
            let (n, ch, hw) = (rng.random_range(1..=2), rng.random_range(1..=4), rng.random_range(1..=3));
            let x = uniform(rng, &[n, ch, hw, hw], -2.0, 2.0);
            let b = uniform(rng, &[ch], -2.0, 2.0);
            if op == "add_bias" {
                (vec![x, b], Box::new(|_, v| v[0].add_bias(v[1])))
            } else {
                (vec![x, b], Box::new(|_, v| v[0].mul_channel(v[1])))
            }
        }
        "grouped_linear" => {
            let (n, g, ki, ko, inner) =
                (rng.random_range(1..=2), rng.random_range(1..=3), rng.random_range(1..=3), rng.random_range(1..=3), rng.random_range(1..=4));
            let x = uniform(rng, &[n, g * ki, inner], -2.0, 2.0);
            let w = uniform(rng, &[g, ko, ki], -2.0, 2.0);
            (vec![x, w], Box::new(|_, v| v[0].grouped_linear(v[1])))
        }
        "slice_channels" => {
            let (n, ch, hw) = (rng.random_range(1..=2), rng.random_range(1..=5), rng.random_range(1..=3));
            let start = rng.random_range(0..ch);
            let len = rng.random_range(1..=ch - start);
            (vec![uniform(rng, &[n, ch, hw, hw], -2.0, 2.0)], Box::new(move |_, v| v[0].slice_channels(start, len)))
        }
        "gaussian_log2_mass" => {
            // Keep the mass well above the floor, where the op is smooth.
            let loc = uniform(rng, &shape, -3.0, 3.0);
            let scale = uniform(rng, &shape, 0.3, 3.0);
            let y = Tensor::from_fn(shape.clone(), |i| loc.data()[i] + scale.data()[i] * rng.random_range(-2.0..2.0));
            (vec![y, loc, scale], Box::new(|_, v| gaussian_log2_mass(v[0], v[1], v[2])))
        }
        _ => return Err(Error::InvalidArgument(format!("no gradient check for op {op:?}"))),
    })
}

/// Relative error of one random case of `op` (see [`OPS`]), reduced to a
/// scalar through a random linear functional.
pub fn check_op(op: &str, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (inputs, build) = case(op, &mut rng)?;
    let probe_seed: u64 = rng.random();
    max_relative_error(&inputs, FD_STEP, move |tape, v| {
        let out = build(tape, v)?;
        let mut prng = ChaCha8Rng::seed_from_u64(probe_seed);
        let c = uniform(&mut prng, &out.shape(), -1.0, 1.0);
        out.mul(tape.constant(c))?.sum()
    })
}
