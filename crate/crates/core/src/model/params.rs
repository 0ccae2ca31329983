use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numcore::Tensor;

/// Architecture and trade-off settings of the toy hierarchical model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// 1 (grayscale) or 3 (RGB).
    pub image_channels: usize,
    pub hidden_channels: usize,
    /// Latent channel count `C_y`.
    pub latent_channels: usize,
    pub hyper_hidden_channels: usize,
    /// Hyperlatent channel count `C_z`.
    pub hyperlatent_channels: usize,
    pub kernel: usize,
    pub hyper_kernel: usize,
    /// Hidden width of the per-channel monotone density network.
    pub density_width: usize,
    pub leaky_slope: f64,
    /// Rate-distortion trade-off λ (bits per unit of summed squared error).
    pub lambda: f64,
    /// Hyper-encoder also emits a log-variance and the hyperprior is used
    /// as a continuous density.
    pub bits_back: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            image_channels: 1,
            hidden_channels: 32,
            latent_channels: 8,
            hyper_hidden_channels: 16,
            hyperlatent_channels: 4,
            kernel: 5,
            hyper_kernel: 3,
            density_width: 3,
            leaky_slope: 0.1,
            lambda: 0.01,
            bits_back: false,
        }
    }
}

/// Every layer halves (or doubles) the spatial extent.
pub const LATENT_STRIDE: usize = 4;
pub const HYPERLATENT_STRIDE: usize = 16;

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            self.hidden_channels,
            self.latent_channels,
            self.hyper_hidden_channels,
            self.hyperlatent_channels,
            self.density_width,
        ];
        if !matches!(self.image_channels, 1 | 3) {
            return Err(Error::InvalidArgument(format!("image_channels must be 1 or 3, got {}", self.image_channels)));
        }
        if counts.contains(&0) || self.kernel % 2 == 0 || self.hyper_kernel % 2 == 0 {
            return Err(Error::InvalidArgument("channel counts must be positive and kernels odd".into()));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!("lambda must be positive, got {}", self.lambda)));
        }
        if !(0.0..1.0).contains(&self.leaky_slope) {
            return Err(Error::InvalidArgument(format!("leaky slope {} outside [0, 1)", self.leaky_slope)));
        }
        Ok(())
    }

    /// Output channels of the hyper-encoder: doubled in bits-back mode to
    /// carry `(μ_z, log σ²_z)`.
    pub fn hyper_encoder_out(&self) -> usize {
        if self.bits_back {
            2 * self.hyperlatent_channels
        } else {
            self.hyperlatent_channels
        }
    }

    /// Variance of the Gaussian likelihood implied by λ = 1/(2σ² ln 2).
    pub fn likelihood_variance(&self) -> f64 {
        1.0 / (2.0 * self.lambda * core::f64::consts::LN_2)
    }

    /// λ implied by a likelihood variance.
    pub fn lambda_for_variance(variance: f64) -> f64 {
        1.0 / (2.0 * variance * core::f64::consts::LN_2)
    }

    pub fn latent_shape(&self, height: usize, width: usize) -> [usize; 4] {
        [1, self.latent_channels, height / LATENT_STRIDE, width / LATENT_STRIDE]
    }

    pub fn hyperlatent_shape(&self, height: usize, width: usize) -> [usize; 4] {
        [1, self.hyperlatent_channels, height / HYPERLATENT_STRIDE, width / HYPERLATENT_STRIDE]
    }
}

/// Weights and bias of one (possibly transposed) convolution.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Parameters of the per-channel monotone CDF network `1 → K → K → 1`.
///
/// `matrices` hold unconstrained values; the network uses their
/// exponentials so every weight is positive. `factors` gate the
/// `h + tanh(a)·tanh(h)` nonlinearity.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityParams {
    pub matrices: [Tensor; 3],
    pub biases: [Tensor; 3],
    pub factors: [Tensor; 2],
}

/// All learned weights of the model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub encoder: [ConvLayer; 2],
    pub hyper_encoder: [ConvLayer; 2],
    /// Transposed convolutions; weights `[C_in, C_out, k, k]`.
    pub decoder: [ConvLayer; 2],
    pub hyper_decoder: [ConvLayer; 2],
    pub density: DensityParams,
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], bound: f64) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-bound..bound))
}

fn conv(rng: &mut ChaCha8Rng, c_out: usize, c_in: usize, k: usize, gain: f64) -> ConvLayer {
    let bound = gain * libm::sqrt(3.0 / (c_in * k * k) as f64);
    ConvLayer { weight: uniform(rng, &[c_out, c_in, k, k], bound), bias: Tensor::zeros([c_out]) }
}

/// Transposed layer: each output sees about a quarter of the taps.
fn tconv(rng: &mut ChaCha8Rng, c_in: usize, c_out: usize, k: usize, gain: f64) -> ConvLayer {
    let taps = (c_in * k * k).div_ceil(4).max(1);
    let bound = gain * libm::sqrt(3.0 / taps as f64);
    ConvLayer { weight: uniform(rng, &[c_in, c_out, k, k], bound), bias: Tensor::zeros([c_out]) }
}

impl ModelParams {
    /// Seeded random initialization.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = &config;
        let relu_gain = libm::sqrt(2.0 / (1.0 + c.leaky_slope * c.leaky_slope));
        let encoder = [
            conv(&mut rng, c.hidden_channels, c.image_channels, c.kernel, relu_gain),
            conv(&mut rng, c.latent_channels, c.hidden_channels, c.kernel, 1.0),
        ];
        let hyper_encoder = [
            conv(&mut rng, c.hyper_hidden_channels, c.latent_channels, c.hyper_kernel, relu_gain),
            conv(&mut rng, c.hyper_encoder_out(), c.hyper_hidden_channels, c.hyper_kernel, 1.0),
        ];
        let decoder = [
            tconv(&mut rng, c.latent_channels, c.hidden_channels, c.kernel, relu_gain),
            tconv(&mut rng, c.hidden_channels, c.image_channels, c.kernel, 0.5),
        ];
        let hyper_decoder = [
            tconv(&mut rng, c.hyperlatent_channels, c.hyper_hidden_channels, c.hyper_kernel, relu_gain),
            tconv(&mut rng, c.hyper_hidden_channels, 2 * c.latent_channels, c.hyper_kernel, 0.5),
        ];
        let density = DensityParams::init(c.hyperlatent_channels, c.density_width, 10.0, &mut rng);
        let mut params = Self { config, encoder, hyper_encoder, decoder, hyper_decoder, density };
        // Reconstructions start near mid-gray.
        params.decoder[1].bias = Tensor::full([params.config.image_channels], 0.5);
        Ok(params)
    }

    /// All tensors in canonical order (the order of [`Self::names`]).
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for l in self.encoder.iter().chain(&self.hyper_encoder).chain(&self.decoder).chain(&self.hyper_decoder) {
            out.push(&l.weight);
            out.push(&l.bias);
        }
        out.extend(self.density.matrices.iter());
        out.extend(self.density.biases.iter());
        out.extend(self.density.factors.iter());
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for l in self
            .encoder
            .iter_mut()
            .chain(self.hyper_encoder.iter_mut())
            .chain(self.decoder.iter_mut())
            .chain(self.hyper_decoder.iter_mut())
        {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        out.extend(self.density.matrices.iter_mut());
        out.extend(self.density.biases.iter_mut());
        out.extend(self.density.factors.iter_mut());
        out
    }

    pub fn names() -> Vec<String> {
        let mut out = Vec::new();
        for group in ["encoder", "hyper_encoder", "decoder", "hyper_decoder"] {
            for i in 0..2 {
                out.push(format!("{group}.{i}.weight"));
                out.push(format!("{group}.{i}.bias"));
            }
        }
        for i in 0..3 {
            out.push(format!("density.matrix.{i}"));
        }
        for i in 0..3 {
            out.push(format!("density.bias.{i}"));
        }
        for i in 0..2 {
            out.push(format!("density.factor.{i}"));
        }
        out
    }

    /// Rebuilds parameters from a config and tensors in canonical order,
    /// checking every shape against a fresh initialization.
    pub fn from_tensors(config: ModelConfig, tensors: Vec<Tensor>) -> Result<Self> {
        let mut params = Self::init(config, 0)?;
        let slots = params.tensors_mut();
        if slots.len() != tensors.len() {
            return Err(Error::InvalidArgument(format!("expected {} tensors, got {}", slots.len(), tensors.len())));
        }
        for (slot, t) in slots.into_iter().zip(tensors) {
            if slot.shape() != t.shape() {
                return Err(crate::error::shape_err(
                    "from_tensors",
                    format!("expected {:?}, got {:?}", slot.shape(), t.shape()),
                ));
            }
            *slot = t;
        }
        Ok(params)
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// 64-bit content hash over the configuration and every weight
    /// (little-endian), used to bind bitstreams to a model.
    pub fn fingerprint(&self) -> u64 {
        let c = &self.config;
        let mut h = Sha256::new();
        h.update(b"sgac-model-v1");
        for v in [
            c.image_channels,
            c.hidden_channels,
            c.latent_channels,
            c.hyper_hidden_channels,
            c.hyperlatent_channels,
            c.kernel,
            c.hyper_kernel,
            c.density_width,
        ] {
            h.update((v as u64).to_le_bytes());
        }
        h.update(c.leaky_slope.to_le_bytes());
        h.update(c.lambda.to_le_bytes());
        h.update([c.bits_back as u8]);
        for t in self.tensors() {
            h.update((t.shape().len() as u64).to_le_bytes());
            for &d in t.shape() {
                h.update((d as u64).to_le_bytes());
            }
            for &v in t.data() {
                h.update(v.to_le_bytes());
            }
        }
        let digest = h.finalize();
        let mut first = [0u8; 8];
        first.copy_from_slice(&digest[..8]);
        u64::from_le_bytes(first)
    }
}

impl DensityParams {
    /// Initial CDF is roughly logistic with width `init_scale`.
    pub fn init(channels: usize, width: usize, init_scale: f64, rng: &mut ChaCha8Rng) -> Self {
        let dims = [1, width, width, 1];
        let per_layer = libm::pow(1.0 / init_scale, 1.0 / 3.0);
        let matrices = core::array::from_fn(|i| {
            let (k_out, k_in) = (dims[i + 1], dims[i]);
            Tensor::full([channels, k_out, k_in], libm::log(per_layer / k_in as f64))
        });
        let biases = core::array::from_fn(|i| uniform(rng, &[channels * dims[i + 1]], 0.5));
        let factors = core::array::from_fn(|_| Tensor::zeros([channels * width]));
        Self { matrices, biases, factors }
    }

    pub fn channels(&self) -> usize {
        self.matrices[0].shape()[0]
    }

    fn width(&self) -> usize {
        self.matrices[0].shape()[1]
    }

    /// Pre-sigmoid CDF value `h(x)` of channel `c`: the CDF is `σ(h(x))`.
    pub fn logit(&self, c: usize, x: f64) -> f64 {
        self.logit_and_slope(c, x).0
    }

    /// `(h(x), h'(x))` for channel `c`.
    pub fn logit_and_slope(&self, c: usize, x: f64) -> (f64, f64) {
        let k = self.width();
        let mut act = vec![x];
        let mut slope = vec![1.0];
        for layer in 0..3 {
            let m = &self.matrices[layer];
            let (k_out, k_in) = (m.shape()[1], m.shape()[2]);
            let mut next = vec![0.0; k_out];
            let mut next_slope = vec![0.0; k_out];
            for o in 0..k_out {
                let mut acc = self.biases[layer].data()[c * k_out + o];
                let mut dacc = 0.0;
                for i in 0..k_in {
                    let w = libm::exp(m.data()[(c * k_out + o) * k_in + i]);
                    acc += w * act[i];
                    dacc += w * slope[i];
                }
                if layer < 2 {
                    let t = libm::tanh(self.factors[layer].data()[c * k + o]);
                    let th = libm::tanh(acc);
                    next[o] = acc + t * th;
                    next_slope[o] = dacc * (1.0 + t * (1.0 - th * th));
                } else {
                    next[o] = acc;
                    next_slope[o] = dacc;
                }
            }
            act = next;
            slope = next_slope;
        }
        (act[0], slope[0])
    }

    pub fn cdf(&self, c: usize, x: f64) -> f64 {
        crate::numcore::special::sigmoid(self.logit(c, x))
    }

    /// Mass of channel `c` on `[k − ½, k + ½]`, unfloored. Evaluated on the
    /// tail nearer to zero to keep relative precision.
    pub fn interval_mass(&self, c: usize, lo: f64, hi: f64) -> f64 {
        let (l, u) = (self.logit(c, lo), self.logit(c, hi));
        let s = if l + u > 0.0 { -1.0 } else { 1.0 };
        use crate::numcore::special::sigmoid;
        s * (sigmoid(s * u) - sigmoid(s * l))
    }

    /// Natural-log density of channel `c` at `x`.
    pub fn log_pdf(&self, c: usize, x: f64) -> f64 {
        use crate::numcore::special::softplus;
        let (h, slope) = self.logit_and_slope(c, x);
        -softplus(-h) - softplus(h) + libm::log(slope)
    }
}
