//! Tensor-level reverse-mode automatic differentiation.
//!
//! Every operation on a [`Var`] evaluates eagerly and appends a node to its
//! [`Tape`]. [`Tape::backward`] walks the nodes in reverse creation order
//! (a valid topological order) and accumulates vector-Jacobian products for
//! every node that depends on a `param` leaf. A tape supports exactly one
//! backward pass.

use alloc::format;
use alloc::rc::Rc;
use alloc::vec;
use alloc::vec::Vec;
use core::cell::{Cell, Ref, RefCell};
use core::f64::consts::LN_2;

use super::conv::{self, ConvGeom};
use super::special::{self, MASS_FLOOR};
use super::tensor::Tensor;
use crate::error::{shape_err, Error, Result};

#[derive(Debug)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    /// Elementwise map with its local derivative recorded at forward time.
    Pointwise { x: usize, deriv: Vec<f64> },
    MatMul { a: usize, b: usize, m: usize, k: usize, n: usize },
    Conv { x: usize, w: usize, geom: ConvGeom },
    ConvT { x: usize, w: usize, geom: ConvGeom },
    AddBias { x: usize, b: usize, channels: usize, inner: usize },
    MulChannel { x: usize, v: usize, channels: usize, inner: usize },
    GroupedLinear { x: usize, w: usize, groups: usize, k_in: usize, k_out: usize, inner: usize },
    SliceChannels { x: usize, start: usize, channels: usize, inner: usize },
    Sum(usize),
    Mean(usize),
    GaussLog2Mass { y: usize, loc: usize, scale: usize, d: [Vec<f64>; 3] },
}

#[derive(Debug)]
struct Node {
    value: Rc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Records operations for one forward/backward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    consumed: Cell<bool>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl core::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("Var").field("id", &self.id).field("shape", &self.shape()).finish()
    }
}

/// Gradients produced by [`Tape::backward`], indexed by variable.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient for `v`, or `None` if the loss does not depend on it.
    pub fn get(&self, v: Var<'_>) -> Option<&[f64]> {
        self.grads.get(v.id).and_then(|g| g.as_deref())
    }

    /// Gradient for `v`, zero-filled if the loss does not depend on it.
    pub fn wrt(&self, v: Var<'_>) -> Vec<f64> {
        match self.get(v) {
            Some(g) => g.to_vec(),
            None => vec![0.0; v.len()],
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A constant input; receives no gradient.
    pub fn constant(&self, t: Tensor) -> Var<'_> {
        self.push(t, Op::Leaf, false)
    }

    /// A differentiable input.
    pub fn param(&self, t: Tensor) -> Var<'_> {
        self.push(t, Op::Leaf, true)
    }

    pub fn scalar(&self, v: f64) -> Var<'_> {
        self.constant(Tensor::scalar(v))
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value: Rc::new(value), op, requires_grad });
        Var { tape: self, id: nodes.len() - 1 }
    }

    fn value(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn requires_grad(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        if self.consumed.get() {
            return Err(Error::TapeConsumed);
        }
        let nodes: Ref<'_, Vec<Node>> = self.nodes.borrow();
        let len = nodes[loss.id].value.len();
        if len != 1 {
            return Err(Error::NotScalar { len });
        }
        self.consumed.set(true);
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        grads[loss.id] = Some(vec![1.0]);
        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            propagate(&nodes, &node.op, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], nodes: &[Node], id: usize, contrib: impl Iterator<Item = f64>) {
    if !nodes[id].requires_grad {
        return;
    }
    match &mut grads[id] {
        Some(acc) => acc.iter_mut().zip(contrib).for_each(|(a, c)| *a += c),
        slot @ None => *slot = Some(contrib.collect()),
    }
}

fn propagate(nodes: &[Node], op: &Op, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let val = |id: usize| -> &Tensor { &nodes[id].value };
    match op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            accumulate(grads, nodes, *a, g.iter().copied());
            accumulate(grads, nodes, *b, g.iter().copied());
        }
        Op::Sub(a, b) => {
            accumulate(grads, nodes, *a, g.iter().copied());
            accumulate(grads, nodes, *b, g.iter().map(|v| -v));
        }
        Op::Mul(a, b) => {
            let (va, vb) = (val(*a).data(), val(*b).data());
            accumulate(grads, nodes, *a, g.iter().zip(vb).map(|(g, b)| g * b));
            accumulate(grads, nodes, *b, g.iter().zip(va).map(|(g, a)| g * a));
        }
        Op::Scale(x, c) => accumulate(grads, nodes, *x, g.iter().map(|v| v * c)),
        Op::Pointwise { x, deriv } => {
            accumulate(grads, nodes, *x, g.iter().zip(deriv).map(|(g, d)| g * d))
        }
        Op::MatMul { a, b, m, k, n } => {
            let (m, k, n) = (*m, *k, *n);
            let (va, vb) = (val(*a).data(), val(*b).data());
            if nodes[*a].requires_grad {
                let mut ga = vec![0.0; m * k];
                for i in 0..m {
                    for p in 0..k {
                        ga[i * k + p] = (0..n).map(|j| g[i * n + j] * vb[p * n + j]).sum();
                    }
                }
                accumulate(grads, nodes, *a, ga.into_iter());
            }
            if nodes[*b].requires_grad {
                let mut gb = vec![0.0; k * n];
                for i in 0..m {
                    for p in 0..k {
                        let av = va[i * k + p];
                        for j in 0..n {
                            gb[p * n + j] += av * g[i * n + j];
                        }
                    }
                }
                accumulate(grads, nodes, *b, gb.into_iter());
            }
        }
        Op::Conv { x, w, geom } => {
            if nodes[*x].requires_grad {
                let gx = conv::scatter(g, val(*w).data(), geom);
                accumulate(grads, nodes, *x, gx.into_iter());
            }
            if nodes[*w].requires_grad {
                let gw = conv::weight_grad(val(*x).data(), g, geom);
                accumulate(grads, nodes, *w, gw.into_iter());
            }
        }
        Op::ConvT { x, w, geom } => {
            if nodes[*x].requires_grad {
                let gx = conv::correlate(g, val(*w).data(), geom);
                accumulate(grads, nodes, *x, gx.into_iter());
            }
            if nodes[*w].requires_grad {
                let gw = conv::weight_grad(g, val(*x).data(), geom);
                accumulate(grads, nodes, *w, gw.into_iter());
            }
        }
        Op::AddBias { x, b, channels, inner } => {
            accumulate(grads, nodes, *x, g.iter().copied());
            if nodes[*b].requires_grad {
                let mut gb = vec![0.0; *channels];
                for (i, v) in g.iter().enumerate() {
                    gb[(i / inner) % channels] += v;
                }
                accumulate(grads, nodes, *b, gb.into_iter());
            }
        }
        Op::MulChannel { x, v, channels, inner } => {
            let (vx, vv) = (val(*x).data(), val(*v).data());
            accumulate(grads, nodes, *x, g.iter().enumerate().map(|(i, g)| g * vv[(i / inner) % channels]));
            if nodes[*v].requires_grad {
                let mut gv = vec![0.0; *channels];
                for (i, gi) in g.iter().enumerate() {
                    gv[(i / inner) % channels] += gi * vx[i];
                }
                accumulate(grads, nodes, *v, gv.into_iter());
            }
        }
        Op::GroupedLinear { x, w, groups, k_in, k_out, inner } => {
            let (vx, vw) = (val(*x).data(), val(*w).data());
            let (groups, k_in, k_out, inner) = (*groups, *k_in, *k_out, *inner);
            let batch = vx.len() / (groups * k_in * inner);
            let mut gx = vec![0.0; vx.len()];
            let mut gw = vec![0.0; vw.len()];
            for n in 0..batch {
                for gr in 0..groups {
                    for o in 0..k_out {
                        let go = &g[((n * groups + gr) * k_out + o) * inner..][..inner];
                        for i in 0..k_in {
                            let wi = (gr * k_out + o) * k_in + i;
                            let xo = ((n * groups + gr) * k_in + i) * inner;
                            let xs = &vx[xo..xo + inner];
                            let mut acc = 0.0;
                            for s in 0..inner {
                                gx[xo + s] += vw[wi] * go[s];
                                acc += go[s] * xs[s];
                            }
                            gw[wi] += acc;
                        }
                    }
                }
            }
            accumulate(grads, nodes, *x, gx.into_iter());
            accumulate(grads, nodes, *w, gw.into_iter());
        }
        Op::SliceChannels { x, start, channels, inner } => {
            if nodes[*x].requires_grad {
                let total = val(*x).len();
                let batch = total / (channels * inner);
                let len = g.len() / (batch * inner);
                let mut gx = vec![0.0; total];
                for n in 0..batch {
                    let src = &g[n * len * inner..(n + 1) * len * inner];
                    let dst = (n * channels + start) * inner;
                    gx[dst..dst + len * inner].copy_from_slice(src);
                }
                accumulate(grads, nodes, *x, gx.into_iter());
            }
        }
        Op::Sum(x) => {
            let n = val(*x).len();
            accumulate(grads, nodes, *x, core::iter::repeat_n(g[0], n));
        }
        Op::Mean(x) => {
            let n = val(*x).len();
            accumulate(grads, nodes, *x, core::iter::repeat_n(g[0] / n as f64, n));
        }
        Op::GaussLog2Mass { y, loc, scale, d } => {
            accumulate(grads, nodes, *y, g.iter().zip(&d[0]).map(|(g, d)| g * d));
            accumulate(grads, nodes, *loc, g.iter().zip(&d[1]).map(|(g, d)| g * d));
            accumulate(grads, nodes, *scale, g.iter().zip(&d[2]).map(|(g, d)| g * d));
        }
    }
}

fn check_finite(op: &'static str, data: &[f64]) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { op })
    }
}

/// `(channels, inner)` for a tensor with a channel axis at position 1.
fn channel_layout(op: &'static str, shape: &[usize]) -> Result<(usize, usize)> {
    if shape.len() < 2 {
        return Err(shape_err(op, format!("need a channel axis, got {:?}", shape)));
    }
    Ok((shape[1], shape[2..].iter().product()))
}

impl<'t> Var<'t> {
    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value(self.id)
    }

    /// Owned copy of the value.
    pub fn tensor(&self) -> Tensor {
        (*self.value()).clone()
    }

    pub fn item(&self) -> f64 {
        self.value().item()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn len(&self) -> usize {
        self.value().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The tape this variable is recorded on.
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad(self.id)
    }

    fn same_tape(&self, other: &Var<'t>) -> bool {
        core::ptr::eq(self.tape, other.tape)
    }

    fn emit(&self, op_name: &'static str, shape: Vec<usize>, data: Vec<f64>, op: Op, rg: bool) -> Result<Var<'t>> {
        check_finite(op_name, &data)?;
        Ok(self.tape.push(Tensor::from_parts(shape, data), op, rg))
    }

    fn binary(
        self,
        other: Var<'t>,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: fn(usize, usize) -> Op,
    ) -> Result<Var<'t>> {
        assert!(self.same_tape(&other), "variables from different tapes");
        let (a, b) = (self.value(), other.value());
        if a.shape() != b.shape() {
            return Err(shape_err(name, format!("{:?} vs {:?}", a.shape(), b.shape())));
        }
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        let rg = self.requires_grad() || other.requires_grad();
        self.emit(name, a.shape().to_vec(), data, op(self.id, other.id), rg)
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "add", |a, b| a + b, Op::Add)
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "sub", |a, b| a - b, Op::Sub)
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "mul", |a, b| a * b, Op::Mul)
    }

    pub fn scale(self, c: f64) -> Result<Var<'t>> {
        let v = self.value();
        let data = v.data().iter().map(|x| x * c).collect();
        self.emit("scale", v.shape().to_vec(), data, Op::Scale(self.id, c), self.requires_grad())
    }

    pub fn neg(self) -> Result<Var<'t>> {
        self.scale(-1.0)
    }

    fn pointwise(self, name: &'static str, f: impl Fn(f64) -> (f64, f64)) -> Result<Var<'t>> {
        let v = self.value();
        let (data, deriv): (Vec<f64>, Vec<f64>) = v.data().iter().map(|&x| f(x)).unzip();
        check_finite(name, &deriv)?;
        self.emit(name, v.shape().to_vec(), data, Op::Pointwise { x: self.id, deriv }, self.requires_grad())
    }

    /// `self + c` elementwise.
    pub fn offset(self, c: f64) -> Result<Var<'t>> {
        self.pointwise("offset", |x| (x + c, 1.0))
    }

    pub fn square(self) -> Result<Var<'t>> {
        self.pointwise("square", |x| (x * x, 2.0 * x))
    }

    pub fn exp(self) -> Result<Var<'t>> {
        self.pointwise("exp", |x| {
            let e = libm::exp(x);
            (e, e)
        })
    }

    pub fn log(self) -> Result<Var<'t>> {
        if self.value().data().iter().any(|&x| x <= 0.0) {
            return Err(Error::Domain { op: "log" });
        }
        self.pointwise("log", |x| (libm::log(x), 1.0 / x))
    }

    pub fn softplus(self) -> Result<Var<'t>> {
        self.pointwise("softplus", |x| (special::softplus(x), special::sigmoid(x)))
    }

    pub fn sigmoid(self) -> Result<Var<'t>> {
        self.pointwise("sigmoid", |x| {
            let s = special::sigmoid(x);
            (s, s * (1.0 - s))
        })
    }

    pub fn tanh(self) -> Result<Var<'t>> {
        self.pointwise("tanh", |x| {
            let t = libm::tanh(x);
            (t, 1.0 - t * t)
        })
    }

    /// Inverse hyperbolic tangent; inputs must lie in `(-1, 1)`.
    pub fn atanh(self) -> Result<Var<'t>> {
        if self.value().data().iter().any(|&x| !(x > -1.0 && x < 1.0)) {
            return Err(Error::Domain { op: "atanh" });
        }
        self.pointwise("atanh", |x| (libm::atanh(x), 1.0 / (1.0 - x * x)))
    }

    pub fn leaky_relu(self, slope: f64) -> Result<Var<'t>> {
        self.pointwise("leaky_relu", |x| if x >= 0.0 { (x, 1.0) } else { (slope * x, slope) })
    }

    /// Clamp to `[lo, hi]`; gradient passes inside the interval and is zero
    /// outside.
    pub fn clamp(self, lo: f64, hi: f64) -> Result<Var<'t>> {
        self.pointwise("clamp", |x| {
            if x < lo {
                (lo, 0.0)
            } else if x > hi {
                (hi, 0.0)
            } else {
                (x, 1.0)
            }
        })
    }

    /// Rounds on the forward pass, identity on the backward pass.
    pub fn straight_round(self) -> Result<Var<'t>> {
        self.pointwise("straight_round", |x| (libm::round(x), 1.0))
    }

    pub fn sum(self) -> Result<Var<'t>> {
        let s = self.value().sum();
        self.emit("sum", Vec::new(), vec![s], Op::Sum(self.id), self.requires_grad())
    }

    pub fn mean(self) -> Result<Var<'t>> {
        let v = self.value();
        let m = v.sum() / v.len() as f64;
        self.emit("mean", Vec::new(), vec![m], Op::Mean(self.id), self.requires_grad())
    }

    /// `[m, k] × [k, n] → [m, n]`.
    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        let (a, b) = (self.value(), other.value());
        let (&[m, k], &[k2, n]) = (a.shape(), b.shape()) else {
            return Err(shape_err("matmul", format!("{:?} x {:?}", a.shape(), b.shape())));
        };
        if k != k2 {
            return Err(shape_err("matmul", format!("{:?} x {:?}", a.shape(), b.shape())));
        }
        let (da, db) = (a.data(), b.data());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let av = da[i * k + p];
                for j in 0..n {
                    out[i * n + j] += av * db[p * n + j];
                }
            }
        }
        let rg = self.requires_grad() || other.requires_grad();
        self.emit("matmul", vec![m, n], out, Op::MatMul { a: self.id, b: other.id, m, k, n }, rg)
    }

    /// Strided 2-D convolution of `[N, Cin, H, W]` with `[Cout, Cin, k, k]`.
    pub fn conv2d(self, weight: Var<'t>, stride: usize, pad: usize) -> Result<Var<'t>> {
        let (x, w) = (self.value(), weight.value());
        let (&[batch, c_big, h_big, w_big], &[c_small, cin, k, k2]) = (x.shape(), w.shape()) else {
            return Err(shape_err("conv2d", format!("input {:?}, weight {:?}", x.shape(), w.shape())));
        };
        if cin != c_big || k != k2 {
            return Err(shape_err("conv2d", format!("input {:?}, weight {:?}", x.shape(), w.shape())));
        }
        let (Some(h_small), Some(w_small)) =
            (ConvGeom::conv_out(h_big, k, stride, pad), ConvGeom::conv_out(w_big, k, stride, pad))
        else {
            return Err(shape_err("conv2d", "kernel larger than padded input"));
        };
        let geom = ConvGeom { batch, c_big, h_big, w_big, c_small, h_small, w_small, kernel: k, stride, pad };
        let out = conv::correlate(x.data(), w.data(), &geom);
        let rg = self.requires_grad() || weight.requires_grad();
        self.emit("conv2d", vec![batch, c_small, h_small, w_small], out, Op::Conv { x: self.id, w: weight.id, geom }, rg)
    }

    /// Transposed convolution of `[N, Cin, h, w]` with `[Cin, Cout, k, k]`
    /// producing `[N, Cout, out_h, out_w]`; the output size must be one the
    /// matching forward convolution maps back onto the input size.
    pub fn conv_transpose2d(self, weight: Var<'t>, stride: usize, pad: usize, out_hw: (usize, usize)) -> Result<Var<'t>> {
        let (x, w) = (self.value(), weight.value());
        let (&[batch, c_small, h_small, w_small], &[cin, c_big, k, k2]) = (x.shape(), w.shape()) else {
            return Err(shape_err("conv_transpose2d", format!("input {:?}, weight {:?}", x.shape(), w.shape())));
        };
        if cin != c_small || k != k2 {
            return Err(shape_err("conv_transpose2d", format!("input {:?}, weight {:?}", x.shape(), w.shape())));
        }
        let (h_big, w_big) = out_hw;
        if ConvGeom::conv_out(h_big, k, stride, pad) != Some(h_small)
            || ConvGeom::conv_out(w_big, k, stride, pad) != Some(w_small)
        {
            return Err(shape_err("conv_transpose2d", format!("output {:?} incompatible with input {:?}", out_hw, x.shape())));
        }
        let geom = ConvGeom { batch, c_big, h_big, w_big, c_small, h_small, w_small, kernel: k, stride, pad };
        let out = conv::scatter(x.data(), w.data(), &geom);
        let rg = self.requires_grad() || weight.requires_grad();
        self.emit("conv_transpose2d", vec![batch, c_big, h_big, w_big], out, Op::ConvT { x: self.id, w: weight.id, geom }, rg)
    }

    /// Adds `bias[c]` along the channel axis (axis 1).
    pub fn add_bias(self, bias: Var<'t>) -> Result<Var<'t>> {
        let (x, b) = (self.value(), bias.value());
        let (channels, inner) = channel_layout("add_bias", x.shape())?;
        if b.len() != channels {
            return Err(shape_err("add_bias", format!("{} channels, bias {:?}", channels, b.shape())));
        }
        let bd = b.data();
        let data = x.data().iter().enumerate().map(|(i, v)| v + bd[(i / inner) % channels]).collect();
        let rg = self.requires_grad() || bias.requires_grad();
        self.emit("add_bias", x.shape().to_vec(), data, Op::AddBias { x: self.id, b: bias.id, channels, inner }, rg)
    }

    /// Multiplies by `v[c]` along the channel axis (axis 1).
    pub fn mul_channel(self, v: Var<'t>) -> Result<Var<'t>> {
        let (x, s) = (self.value(), v.value());
        let (channels, inner) = channel_layout("mul_channel", x.shape())?;
        if s.len() != channels {
            return Err(shape_err("mul_channel", format!("{} channels, scale {:?}", channels, s.shape())));
        }
        let sd = s.data();
        let data = x.data().iter().enumerate().map(|(i, a)| a * sd[(i / inner) % channels]).collect();
        let rg = self.requires_grad() || v.requires_grad();
        self.emit("mul_channel", x.shape().to_vec(), data, Op::MulChannel { x: self.id, v: v.id, channels, inner }, rg)
    }

    /// Per-group linear map over channels: `x` is `[N, G·Kin, ...]`, `w` is
    /// `[G, Kout, Kin]`, result `[N, G·Kout, ...]`.
    pub fn grouped_linear(self, w: Var<'t>) -> Result<Var<'t>> {
        let (x, wv) = (self.value(), w.value());
        let (channels, inner) = channel_layout("grouped_linear", x.shape())?;
        let &[groups, k_out, k_in] = wv.shape() else {
            return Err(shape_err("grouped_linear", format!("weight {:?}", wv.shape())));
        };
        if groups * k_in != channels {
            return Err(shape_err("grouped_linear", format!("input {:?}, weight {:?}", x.shape(), wv.shape())));
        }
        let batch = x.shape()[0];
        let (xd, wd) = (x.data(), wv.data());
        let mut out = vec![0.0; batch * groups * k_out * inner];
        for n in 0..batch {
            for g in 0..groups {
                for o in 0..k_out {
                    let dst = ((n * groups + g) * k_out + o) * inner;
                    for i in 0..k_in {
                        let wval = wd[(g * k_out + o) * k_in + i];
                        let src = ((n * groups + g) * k_in + i) * inner;
                        for s in 0..inner {
                            out[dst + s] += wval * xd[src + s];
                        }
                    }
                }
            }
        }
        let mut shape = x.shape().to_vec();
        shape[1] = groups * k_out;
        let rg = self.requires_grad() || w.requires_grad();
        self.emit("grouped_linear", shape, out, Op::GroupedLinear { x: self.id, w: w.id, groups, k_in, k_out, inner }, rg)
    }

    /// Channels `start..start + len` of a tensor with a channel axis.
    pub fn slice_channels(self, start: usize, len: usize) -> Result<Var<'t>> {
        let x = self.value();
        let (channels, inner) = channel_layout("slice_channels", x.shape())?;
        if start + len > channels {
            return Err(shape_err("slice_channels", format!("{}..{} of {}", start, start + len, channels)));
        }
        let batch = x.shape()[0];
        let mut out = Vec::with_capacity(batch * len * inner);
        for n in 0..batch {
            let src = (n * channels + start) * inner;
            out.extend_from_slice(&x.data()[src..src + len * inner]);
        }
        let mut shape = x.shape().to_vec();
        shape[1] = len;
        self.emit("slice_channels", shape, out, Op::SliceChannels { x: self.id, start, channels, inner }, self.requires_grad())
    }
}

/// `log₂ P(y)` elementwise, where `P(y)` is the mass of `N(loc, scale²)` on
/// `[y − ½, y + ½]`, floored at 2⁻³².
///
/// Below the floor the gradient keeps the direction of the unfloored mass
/// (scaled by the floor) so that far-off values still move towards the
/// mode.
pub fn gaussian_log2_mass<'t>(y: Var<'t>, loc: Var<'t>, scale: Var<'t>) -> Result<Var<'t>> {
    let (vy, vl, vs) = (y.value(), loc.value(), scale.value());
    if vy.shape() != vl.shape() || vy.shape() != vs.shape() {
        return Err(shape_err(
            "gaussian_log2_mass",
            format!("{:?}, {:?}, {:?}", vy.shape(), vl.shape(), vs.shape()),
        ));
    }
    if vs.data().iter().any(|&s| s <= 0.0) {
        return Err(Error::Domain { op: "gaussian_log2_mass" });
    }
    let n = vy.len();
    let mut out = Vec::with_capacity(n);
    let mut d = [Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n)];
    for i in 0..n {
        let m = special::gaussian_interval_mass(vy.data()[i], vl.data()[i], vs.data()[i]);
        let denom = m.mass.max(MASS_FLOOR) * LN_2;
        out.push(libm::log(m.mass.max(MASS_FLOOR)) / LN_2);
        d[0].push(m.d_y / denom);
        d[1].push(m.d_loc / denom);
        d[2].push(m.d_scale / denom);
    }
    for v in &d {
        check_finite("gaussian_log2_mass", v)?;
    }
    let rg = y.requires_grad() || loc.requires_grad() || scale.requires_grad();
    y.emit(
        "gaussian_log2_mass",
        vy.shape().to_vec(),
        out,
        Op::GaussLog2Mass { y: y.id, loc: loc.id, scale: scale.id, d },
        rg,
    )
}
