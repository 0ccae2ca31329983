//! The two-level hierarchical model: encoder `f`, hyper-encoder `f_h`,
//! decoder `g`, hyper-decoder `g_h`, a Gaussian conditional prior
//! `p(y|z)` and a factorized hyperprior `p(z)`.
//!
//! [`ModelParams`] holds plain tensors. [`ModelParams::bind`] places them on
//! a [`Tape`] so the forward passes can be differentiated, either with
//! respect to the weights (training) or only with respect to the inputs
//! (compression-time inference).

mod params;

use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::LN_2;

pub use params::{ConvLayer, DensityParams, ModelConfig, ModelParams, HYPERLATENT_STRIDE, LATENT_STRIDE};

use crate::error::{shape_err, Result};
use crate::numcore::special::MASS_FLOOR;
use crate::numcore::{Tape, Tensor, Var};

/// Floor added to the softplus output of the prior scale.
pub const SCALE_FLOOR: f64 = 1e-6;

/// Location and scale of `p(y|z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorParams {
    pub loc: Tensor,
    pub scale: Tensor,
}

/// Amortized variational parameters for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct Inference {
    pub mu_y: Tensor,
    pub mu_z: Tensor,
    /// Present only in bits-back mode.
    pub var_z: Option<Tensor>,
}

/// Output of the hyper-encoder on a tape.
#[derive(Debug, Clone, Copy)]
pub struct HyperPosterior<'t> {
    pub mu: Var<'t>,
    pub log_var: Option<Var<'t>>,
}

#[derive(Debug, Clone, Copy)]
struct LayerVars<'t> {
    weight: Var<'t>,
    bias: Var<'t>,
}

/// Model weights recorded on a tape.
#[derive(Debug)]
pub struct BoundModel<'t> {
    pub config: ModelConfig,
    encoder: [LayerVars<'t>; 2],
    hyper_encoder: [LayerVars<'t>; 2],
    decoder: [LayerVars<'t>; 2],
    hyper_decoder: [LayerVars<'t>; 2],
    matrices: [Var<'t>; 3],
    biases: [Var<'t>; 3],
    factors: [Var<'t>; 2],
}

/// Squared error `‖x − x′‖²` summed over all elements.
pub fn likelihood_distortion(x: &Tensor, x_hat: &Tensor) -> Result<f64> {
    x.squared_distance(x_hat)
}

/// Checks that `x` is `[N, C, H, W]` with `H` and `W` multiples of the
/// total downsampling factor.
pub fn check_image_shape(config: &ModelConfig, shape: &[usize]) -> Result<()> {
    match *shape {
        [_, c, h, w] if c == config.image_channels && h > 0 && w > 0 => {
            if h % HYPERLATENT_STRIDE != 0 || w % HYPERLATENT_STRIDE != 0 {
                return Err(shape_err(
                    "infer",
                    format!("image {h}x{w} is not a multiple of {HYPERLATENT_STRIDE}"),
                ));
            }
            Ok(())
        }
        _ => Err(shape_err(
            "infer",
            format!("expected [N, {}, H, W], got {:?}", config.image_channels, shape),
        )),
    }
}

impl ModelParams {
    /// Records the weights on `tape`. With `trainable` false they are
    /// constants and only inputs receive gradients.
    pub fn bind<'t>(&self, tape: &'t Tape, trainable: bool) -> BoundModel<'t> {
        let leaf = |t: &Tensor| if trainable { tape.param(t.clone()) } else { tape.constant(t.clone()) };
        let layers = |ls: &[ConvLayer; 2]| ls.each_ref().map(|l| LayerVars { weight: leaf(&l.weight), bias: leaf(&l.bias) });
        BoundModel {
            config: self.config.clone(),
            encoder: layers(&self.encoder),
            hyper_encoder: layers(&self.hyper_encoder),
            decoder: layers(&self.decoder),
            hyper_decoder: layers(&self.hyper_decoder),
            matrices: self.density.matrices.each_ref().map(leaf),
            biases: self.density.biases.each_ref().map(leaf),
            factors: self.density.factors.each_ref().map(leaf),
        }
    }

    /// Amortized inference `μ_y = f(x)`, `μ_z = f_h(μ_y)` (plus `σ²_z` in
    /// bits-back mode).
    pub fn infer(&self, x: &Tensor) -> Result<Inference> {
        let tape = Tape::new();
        let m = self.bind(&tape, false);
        let mu_y = m.analysis(tape.constant(x.clone()))?;
        let post = m.hyper_analysis(mu_y)?;
        let var_z = match post.log_var {
            Some(lv) => Some(lv.exp()?.tensor()),
            None => None,
        };
        Ok(Inference { mu_y: mu_y.tensor(), mu_z: post.mu.tensor(), var_z })
    }

    /// Hyper-encoder applied to an arbitrary latent (e.g. a rounded one).
    pub fn hyper_infer(&self, y: &Tensor) -> Result<(Tensor, Option<Tensor>)> {
        let tape = Tape::new();
        let m = self.bind(&tape, false);
        let post = m.hyper_analysis(tape.constant(y.clone()))?;
        let var = match post.log_var {
            Some(lv) => Some(lv.exp()?.tensor()),
            None => None,
        };
        Ok((post.mu.tensor(), var))
    }

    pub fn hyper_decode(&self, z: &Tensor) -> Result<PriorParams> {
        let tape = Tape::new();
        let m = self.bind(&tape, false);
        let (loc, scale) = m.hyper_synthesis(tape.constant(z.clone()))?;
        Ok(PriorParams { loc: loc.tensor(), scale: scale.tensor() })
    }

    /// Reconstruction `g(y)`, unclamped.
    pub fn decode(&self, y: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        let m = self.bind(&tape, false);
        Ok(m.synthesis(tape.constant(y.clone()))?.tensor())
    }

    /// `Σ log₂ P(ẑ)` under the discretized hyperprior, each mass floored
    /// at 2⁻³².
    pub fn hyperprior_logmass(&self, z_hat: &Tensor) -> Result<f64> {
        self.check_hyperlatent(z_hat)?;
        let inner = z_hat.shape()[2] * z_hat.shape()[3];
        let c = self.config.hyperlatent_channels;
        Ok(z_hat
            .data()
            .iter()
            .enumerate()
            .map(|(i, &k)| {
                let mass = self.density.interval_mass((i / inner) % c, k - 0.5, k + 0.5);
                libm::log(mass.max(MASS_FLOOR)) / LN_2
            })
            .sum())
    }

    /// `Σ log₂ p(z)` under the continuous hyperprior density.
    pub fn hyperprior_logpdf(&self, z: &Tensor) -> Result<f64> {
        self.check_hyperlatent(z)?;
        let inner = z.shape()[2] * z.shape()[3];
        let c = self.config.hyperlatent_channels;
        Ok(z.data().iter().enumerate().map(|(i, &v)| self.density.log_pdf((i / inner) % c, v) / LN_2).sum())
    }

    fn check_hyperlatent(&self, z: &Tensor) -> Result<()> {
        match *z.shape() {
            [_, c, _, _] if c == self.config.hyperlatent_channels => Ok(()),
            _ => Err(shape_err("hyperprior", format!("unexpected hyperlatent shape {:?}", z.shape()))),
        }
    }
}

fn conv<'t>(x: Var<'t>, l: &LayerVars<'t>, pad: usize) -> Result<Var<'t>> {
    x.conv2d(l.weight, 2, pad)?.add_bias(l.bias)
}

fn tconv<'t>(x: Var<'t>, l: &LayerVars<'t>, pad: usize) -> Result<Var<'t>> {
    let s = x.shape();
    x.conv_transpose2d(l.weight, 2, pad, (2 * s[2], 2 * s[3]))?.add_bias(l.bias)
}

impl<'t> BoundModel<'t> {
    /// All weight variables in the canonical order of [`ModelParams::tensors`].
    pub fn vars(&self) -> Vec<Var<'t>> {
        let mut out = Vec::new();
        for l in self.encoder.iter().chain(&self.hyper_encoder).chain(&self.decoder).chain(&self.hyper_decoder) {
            out.push(l.weight);
            out.push(l.bias);
        }
        out.extend(self.matrices);
        out.extend(self.biases);
        out.extend(self.factors);
        out
    }

    fn leaky(&self, x: Var<'t>) -> Result<Var<'t>> {
        x.leaky_relu(self.config.leaky_slope)
    }

    /// `μ_y = f(x)`.
    pub fn analysis(&self, x: Var<'t>) -> Result<Var<'t>> {
        check_image_shape(&self.config, &x.shape())?;
        let p = self.config.kernel / 2;
        let h = self.leaky(conv(x, &self.encoder[0], p)?)?;
        conv(h, &self.encoder[1], p)
    }

    /// `f_h(y)`.
    pub fn hyper_analysis(&self, y: Var<'t>) -> Result<HyperPosterior<'t>> {
        let p = self.config.hyper_kernel / 2;
        let h = self.leaky(conv(y, &self.hyper_encoder[0], p)?)?;
        let out = conv(h, &self.hyper_encoder[1], p)?;
        let c = self.config.hyperlatent_channels;
        if self.config.bits_back {
            Ok(HyperPosterior { mu: out.slice_channels(0, c)?, log_var: Some(out.slice_channels(c, c)?) })
        } else {
            Ok(HyperPosterior { mu: out, log_var: None })
        }
    }

    /// `(loc, scale) = g_h(z)` with `scale = softplus(raw) + 1e-6`.
    pub fn hyper_synthesis(&self, z: Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
        let s = z.shape();
        if s.len() != 4 || s[1] != self.config.hyperlatent_channels {
            return Err(shape_err("hyper_decode", format!("unexpected hyperlatent shape {s:?}")));
        }
        let p = self.config.hyper_kernel / 2;
        let h = self.leaky(tconv(z, &self.hyper_decoder[0], p)?)?;
        let out = tconv(h, &self.hyper_decoder[1], p)?;
        let c = self.config.latent_channels;
        let loc = out.slice_channels(0, c)?;
        let scale = out.slice_channels(c, c)?.softplus()?.offset(SCALE_FLOOR)?;
        Ok((loc, scale))
    }

    /// `x′ = g(y)`, unclamped.
    pub fn synthesis(&self, y: Var<'t>) -> Result<Var<'t>> {
        let s = y.shape();
        if s.len() != 4 || s[1] != self.config.latent_channels {
            return Err(shape_err("decode", format!("unexpected latent shape {s:?}")));
        }
        let p = self.config.kernel / 2;
        let h = self.leaky(tconv(y, &self.decoder[0], p)?)?;
        tconv(h, &self.decoder[1], p)
    }

    /// Pre-sigmoid CDF values of the hyperprior at `z`, and optionally
    /// their derivative with respect to `z`.
    fn density_logits(&self, z: Var<'t>, with_slope: bool) -> Result<(Var<'t>, Option<Var<'t>>)> {
        let mut act = z;
        let mut slope = if with_slope { Some(z.tape().constant(Tensor::ones(z.shape()))) } else { None };
        for layer in 0..3 {
            let w = self.matrices[layer].exp()?;
            let pre = act.grouped_linear(w)?.add_bias(self.biases[layer])?;
            let ds = match slope {
                Some(s) => Some(s.grouped_linear(w)?),
                None => None,
            };
            if layer < 2 {
                let gate = self.factors[layer].tanh()?;
                let th = pre.tanh()?;
                act = pre.add(th.mul_channel(gate)?)?;
                slope = match ds {
                    Some(ds) => {
                        let factor = th.square()?.neg()?.offset(1.0)?.mul_channel(gate)?.offset(1.0)?;
                        Some(ds.mul(factor)?)
                    }
                    None => None,
                };
            } else {
                act = pre;
                slope = ds;
            }
        }
        Ok((act, slope))
    }

    /// Elementwise `log₂ P(z)` of the hyperprior convolved with
    /// `Uniform(−½, ½)`, i.e. CDF differences over `[z − ½, z + ½]`,
    /// floored at 2⁻³².
    pub fn hyper_log2_mass(&self, z: Var<'t>) -> Result<Var<'t>> {
        let (upper, _) = self.density_logits(z.offset(0.5)?, false)?;
        let (lower, _) = self.density_logits(z.offset(-0.5)?, false)?;
        // Work on the tail nearer to zero: mass = s·(σ(s·u) − σ(s·l)).
        let sign: Vec<f64> = upper
            .value()
            .data()
            .iter()
            .zip(lower.value().data())
            .map(|(u, l)| if u + l > 0.0 { -1.0 } else { 1.0 })
            .collect();
        let sign = z.tape().constant(Tensor::new(z.shape(), sign)?);
        let mass = upper.mul(sign)?.sigmoid()?.sub(lower.mul(sign)?.sigmoid()?)?.mul(sign)?;
        mass.clamp(MASS_FLOOR, 1.0)?.log()?.scale(1.0 / LN_2)
    }

    /// Elementwise `log₂ p(z)` of the unconvolved hyperprior density.
    pub fn hyper_log2_pdf(&self, z: Var<'t>) -> Result<Var<'t>> {
        let (h, slope) = self.density_logits(z, true)?;
        let slope = slope.expect("slope requested");
        // log σ'(h) = −softplus(−h) − softplus(h)
        let log_sig = h.neg()?.softplus()?.add(h.softplus()?)?.neg()?;
        log_sig.add(slope.log()?)?.scale(1.0 / LN_2)
    }
}
