//! Lossy bits-back coding.
//!
//! Encoder: refine `(μ_y, μ_z, σ²_z)` jointly, round `ŷ`, rebuild
//! `(μ_z, σ²_z)` from `ŷ` alone with a seeded, replayable BBVI run, *decode*
//! `ẑ` from the side information under `Q(ẑ|μ_z, σ²_z)`, then encode `ŷ`
//! under `P(ŷ|ẑ)` and `ẑ` under `P(ẑ)`. The decoder mirrors this and
//! re-encodes `ẑ` under `Q` to recover the side information.
//!
//! The first four side-information bytes seed the rANS state so that `ẑ`
//! is drawn from `Q` rather than fixed by the initial state. Side
//! information shorter than what the `Q` decode consumes is zero-padded;
//! the header stores its true length and the decoder strips the padding.

use alloc::format;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::standard::decode_latents;
use super::{
    channel_of, check_stream, clamp_unit, conditional_models, crop_image, from_symbols, hyperprior_models, image_dims,
    pad_image, to_symbols, Bitstream, Mode, QuantizedModel, RansCodec, STATE_LOWER,
};
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::numcore::{adam_step, AdamState, Tape, Tensor};
use crate::objectives::{bbvi_objective, conditional_rate, distortion, normal_noise};
use crate::relaxations::{gumbel_round, TemperatureSchedule};

/// Seed shared by encoder and decoder for the replayed BBVI run.
pub const PROTOCOL_SEED: u64 = 0x5347_4143_4242_5631;

/// Offset added to the four seed bytes when they become the rANS state.
const SEED_STATE_BASE: u64 = 1 << 32;
const SEED_BYTES: usize = 4;

/// Parameters of the replayed hyperlatent refinement. Encoder and decoder
/// must agree on them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BbviConfig {
    pub steps: u64,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for BbviConfig {
    fn default() -> Self {
        Self { steps: 2000, learning_rate: 0.003, seed: PROTOCOL_SEED }
    }
}

impl BbviConfig {
    /// The protocol configuration with `steps` steps. Only the step count
    /// is recorded in a bitstream; the rest is fixed.
    pub fn with_steps(steps: u64) -> Self {
        Self { steps, ..Self::default() }
    }
}

/// Joint refinement of `μ_y` (stochastic rounding) and `(μ_z, σ²_z)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointConfig {
    pub steps: u64,
    pub learning_rate: f64,
    pub schedule: TemperatureSchedule,
    pub seed: u64,
}

impl Default for JointConfig {
    fn default() -> Self {
        Self { steps: 2000, learning_rate: 0.005, schedule: TemperatureSchedule::default(), seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BitsBackConfig {
    /// `None` keeps the amortized `μ_y`.
    pub joint: Option<JointConfig>,
    pub bbvi: BbviConfig,
}

impl BitsBackConfig {
    /// The full protocol: joint refinement followed by replayable BBVI.
    pub fn full() -> Self {
        Self { joint: Some(JointConfig::default()), bbvi: BbviConfig::default() }
    }

    /// No compression-time optimization at all: `ŷ = round(f(x))` and
    /// `(μ_z, σ²_z) = f_h(ŷ)`.
    pub fn amortized() -> Self {
        Self { joint: None, bbvi: BbviConfig::with_steps(0) }
    }
}

fn require_bits_back(params: &ModelParams) -> Result<()> {
    if params.config.bits_back {
        Ok(())
    } else {
        Err(Error::Protocol("model was not trained for bits-back coding".into()))
    }
}

/// Refines `(μ_z, σ²_z)` for a fixed integer `ŷ` by BBVI from `f_h(ŷ)`.
/// The result depends only on `ŷ`, the configuration and the model.
pub fn reproducible_bbvi(params: &ModelParams, y_hat: &Tensor, cfg: &BbviConfig) -> Result<(Tensor, Tensor)> {
    require_bits_back(params)?;
    if !y_hat.is_integral() {
        return Err(Error::InvalidArgument("BBVI needs an integer latent".into()));
    }
    let (mut mu, mut log_var) = {
        let tape = Tape::new();
        let post = params.bind(&tape, false).hyper_analysis(tape.constant(y_hat.clone()))?;
        (post.mu.tensor(), post.log_var.expect("bits-back model").tensor())
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam_mu = AdamState::new(mu.len(), cfg.learning_rate);
    let mut adam_lv = AdamState::new(log_var.len(), cfg.learning_rate);
    for _ in 0..cfg.steps {
        let tape = Tape::new();
        let m = params.bind(&tape, false);
        let (mv, lv) = (tape.param(mu.clone()), tape.param(log_var.clone()));
        let eps = normal_noise(mu.shape(), &mut rng);
        let loss = bbvi_objective(&m, tape.constant(y_hat.clone()), mv, lv, &eps)
            .map_err(|e| Error::Protocol(format!("BBVI replay failed: {e}")))?;
        let g = tape.backward(loss)?;
        adam_step(&mut mu, &g.wrt(mv), &mut adam_mu)?;
        adam_step(&mut log_var, &g.wrt(lv), &mut adam_lv)?;
    }
    let var = log_var.map(libm::exp);
    if var.data().iter().chain(mu.data()).any(|v| !v.is_finite()) || var.data().iter().any(|&v| v <= 0.0) {
        return Err(Error::Protocol("BBVI produced invalid variational parameters".into()));
    }
    Ok((mu, var))
}

/// Image-dependent part of the encoder, independent of the side
/// information.
#[derive(Debug, Clone, PartialEq)]
pub struct BitsBackPrepared {
    pub width: u16,
    pub height: u16,
    pub padded: Tensor,
    pub y_hat: Tensor,
    /// `(μ_z, σ²_z)` from the replayed BBVI on `ŷ`.
    pub mu_z: Tensor,
    pub var_z: Tensor,
    pub bbvi_steps: u32,
}

/// Encoder lines up to the `Q` construction: joint refinement, rounding
/// and the replayable BBVI run.
pub fn bitsback_prepare(params: &ModelParams, x: &Tensor, cfg: &BitsBackConfig) -> Result<BitsBackPrepared> {
    require_bits_back(params)?;
    let bbvi_steps = u32::try_from(cfg.bbvi.steps)
        .ok()
        .filter(|&s| BbviConfig::with_steps(s as u64) == cfg.bbvi)
        .ok_or_else(|| Error::InvalidArgument("the replayed refinement only allows changing its step count (< 2^32)".into()))?;
    let (width, height) = image_dims(params, x)?;
    let padded = pad_image(x)?;
    let inf = params.infer(&padded)?;
    let mu_y = match cfg.joint {
        None => inf.mu_y,
        Some(j) => joint_refine(params, &padded, inf.mu_y, inf.mu_z, inf.var_z.expect("bits-back model"), &j)?,
    };
    let y_sym = to_symbols(&mu_y.round())?;
    let y_hat = from_symbols(mu_y.shape().try_into().expect("4-d"), &y_sym);
    let (mu_z, var_z) = reproducible_bbvi(params, &y_hat, &cfg.bbvi)?;
    Ok(BitsBackPrepared { width, height, padded, y_hat, mu_z, var_z, bbvi_steps })
}

/// Alternates one stochastic-rounding step on `μ_y` with one BBVI step on
/// `(μ_z, log σ²_z)`.
fn joint_refine(
    params: &ModelParams,
    x: &Tensor,
    mut mu_y: Tensor,
    mut mu_z: Tensor,
    var_z: Tensor,
    cfg: &JointConfig,
) -> Result<Tensor> {
    let lambda = params.config.lambda;
    let mut log_var = var_z.map(libm::log);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam_y = AdamState::new(mu_y.len(), cfg.learning_rate);
    let mut adam_z = AdamState::new(mu_z.len(), cfg.learning_rate);
    let mut adam_v = AdamState::new(log_var.len(), cfg.learning_rate);
    for t in 0..cfg.steps {
        let tau = cfg.schedule.tau(t);
        let y_relaxed = {
            let tape = Tape::new();
            let m = params.bind(&tape, false);
            let yv = tape.param(mu_y.clone());
            let y = gumbel_round(yv, tau, &mut rng)?;
            let eps = normal_noise(mu_z.shape(), &mut rng);
            let z = Tensor::from_fn(mu_z.shape().to_vec(), |i| {
                mu_z.data()[i] + libm::exp(0.5 * log_var.data()[i]) * eps.data()[i]
            });
            let loss = conditional_rate(&m, y, tape.constant(z))?
                .add(distortion(&m, tape.constant(x.clone()), y)?.scale(lambda)?)?;
            let g = tape.backward(loss)?;
            adam_step(&mut mu_y, &g.wrt(yv), &mut adam_y)?;
            y.tensor()
        };
        let tape = Tape::new();
        let m = params.bind(&tape, false);
        let (zv, lv) = (tape.param(mu_z.clone()), tape.param(log_var.clone()));
        let eps = normal_noise(mu_z.shape(), &mut rng);
        let loss = bbvi_objective(&m, tape.constant(y_relaxed), zv, lv, &eps)?;
        let g = tape.backward(loss)?;
        adam_step(&mut mu_z, &g.wrt(zv), &mut adam_z)?;
        adam_step(&mut log_var, &g.wrt(lv), &mut adam_v)?;
    }
    Ok(mu_y)
}

/// Result of [`bitsback_finish`].
#[derive(Debug, Clone)]
pub struct BitsBackEncoding {
    pub bitstream: Bitstream,
    pub y_hat: Tensor,
    pub z_hat: Tensor,
    pub reconstruction: Tensor,
    /// `payload bits − 8·|ξ|`.
    pub net_rate_bits: f64,
    /// `−log₂ P(ẑ, ŷ) + log₂ Q(ẑ|·)` under the coded frequency tables.
    pub ledger_bits: f64,
    /// `−log₂ Q(ẑ|·)`: side-information bits the `Q` decode consumed.
    pub q_bits: f64,
    /// Zero bytes appended because the side information ran out.
    pub pads: usize,
}

fn posterior_models(mu: &Tensor, var: &Tensor) -> Result<Vec<QuantizedModel>> {
    mu.data().iter().zip(var.data()).map(|(&m, &v)| QuantizedModel::gaussian(m, libm::sqrt(v))).collect()
}

/// Encoder lines from the `ẑ` decode on: consumes `side_info`, codes the
/// latents, and builds the bitstream.
pub fn bitsback_finish(
    params: &ModelParams,
    prep: &BitsBackPrepared,
    side_info: &[u8],
    lambda_index: u8,
) -> Result<BitsBackEncoding> {
    require_bits_back(params)?;
    let side_info_len = u32::try_from(side_info.len()).map_err(|_| Error::InvalidArgument("side information too long".into()))?;
    let q = posterior_models(&prep.mu_z, &prep.var_z)?;
    let mut codec;
    let z_sym: Vec<i32> = if side_info.is_empty() {
        codec = RansCodec::new();
        q.iter().map(QuantizedModel::mode).collect()
    } else {
        codec = RansCodec::with_stack(side_info.to_vec());
        let mut seed = 0u64;
        for i in 0..SEED_BYTES {
            seed |= (codec.pop_padded() as u64) << (8 * i);
        }
        codec.set_state(SEED_STATE_BASE + seed)?;
        q.iter().map(|m| codec.decode_padded(m)).collect()
    };
    let pads = codec.pads();
    let z_hat = from_symbols(prep.mu_z.shape().try_into().expect("4-d"), &z_sym);
    let prior = params.hyper_decode(&z_hat)?;
    let py = conditional_models(&prior, true)?;
    let pz = hyperprior_models(params)?;
    let y_sym = to_symbols(&prep.y_hat)?;

    let mut ledger = 0.0;
    let mut q_bits = 0.0;
    for (s, m) in y_sym.iter().zip(&py).rev() {
        codec.encode(*s, m)?;
        ledger += m.cost_bits(*s)?;
    }
    for (i, s) in z_sym.iter().enumerate().rev() {
        let m = &pz[channel_of(z_hat.shape(), i)];
        codec.encode(*s, m)?;
        ledger += m.cost_bits(*s)?;
        if !side_info.is_empty() {
            let c = q[i].cost_bits(*s)?;
            ledger -= c;
            q_bits += c;
        }
    }
    let payload = codec.into_payload();
    let net_rate_bits = 8.0 * payload.len() as f64 - 8.0 * side_info.len() as f64;
    let bitstream = Bitstream {
        mode: Mode::BitsBack,
        width: prep.width,
        height: prep.height,
        model_hash: params.fingerprint(),
        lambda_index,
        side_info_len,
        bbvi_steps: prep.bbvi_steps,
        payload,
    };
    let reconstruction =
        crop_image(&clamp_unit(&params.decode(&prep.y_hat)?), prep.height as usize, prep.width as usize)?;
    Ok(BitsBackEncoding {
        bitstream,
        y_hat: prep.y_hat.clone(),
        z_hat,
        reconstruction,
        net_rate_bits,
        ledger_bits: ledger,
        q_bits,
        pads,
    })
}

/// Full encoder: [`bitsback_prepare`] then [`bitsback_finish`].
pub fn bitsback_encode(
    params: &ModelParams,
    x: &Tensor,
    side_info: &[u8],
    cfg: &BitsBackConfig,
    lambda_index: u8,
) -> Result<BitsBackEncoding> {
    let prep = bitsback_prepare(params, x, cfg)?;
    bitsback_finish(params, &prep, side_info, lambda_index)
}

/// Decodes the image and recovers the side information, replaying the
/// refinement for the step count recorded in the header.
pub fn bitsback_decode(params: &ModelParams, bs: &Bitstream) -> Result<(Tensor, Vec<u8>)> {
    require_bits_back(params)?;
    let ((ph, pw), (h, w)) = check_stream(params, bs, Mode::BitsBack)?;
    let ((y_hat, z_hat), mut codec) = decode_latents(params, &bs.payload, ph, pw, true, false)?;
    let reconstruction = crop_image(&clamp_unit(&params.decode(&y_hat)?), h, w)?;
    let n = bs.side_info_len as usize;
    if n == 0 {
        if codec.state() != STATE_LOWER || !codec.stack().is_empty() {
            return Err(Error::Corrupt("trailing data after the last symbol".into()));
        }
        return Ok((reconstruction, Vec::new()));
    }
    let (mu_z, var_z) = reproducible_bbvi(params, &y_hat, &BbviConfig::with_steps(bs.bbvi_steps as u64))?;
    let q = posterior_models(&mu_z, &var_z)?;
    let z_sym = to_symbols(&z_hat)?;
    for (s, m) in z_sym.iter().zip(&q).rev() {
        codec
            .encode(*s, m)
            .map_err(|e| Error::Protocol(format!("hyperlatent outside the replayed posterior: {e}")))?;
    }
    let seed = codec
        .state()
        .checked_sub(SEED_STATE_BASE)
        .filter(|&s| s < 1 << (8 * SEED_BYTES))
        .ok_or_else(|| Error::Protocol("replayed state does not match the side-information seed".into()))?;
    for i in (0..SEED_BYTES).rev() {
        codec.push_byte((seed >> (8 * i)) as u8);
    }
    let stack = codec.into_stack();
    if stack.len() < n {
        return Err(Error::Protocol(format!("recovered {} side-information bytes, header says {n}", stack.len())));
    }
    let extra = stack.len() - n;
    if stack[..extra].iter().any(|&b| b != 0) {
        return Err(Error::Protocol("side-information padding is not zero".into()));
    }
    Ok((reconstruction, stack[extra..].to_vec()))
}
