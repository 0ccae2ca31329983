//! Entropy coding: quantized entropy models, rANS, the bitstream container,
//! standard two-part coding of `(ẑ, ŷ)` and lossy bits-back coding.
//!
//! Latents are coded in raster order per channel with channels ascending,
//! `ẑ` before `ŷ`, so the decoder can build `P(ŷ|ẑ)` from the decoded `ẑ`.

mod bitsback;
mod bitstream;
mod quantize;
mod rans;
mod standard;

use alloc::format;
use alloc::vec::Vec;

pub use bitsback::{
    bitsback_decode, bitsback_encode, bitsback_finish, bitsback_prepare, reproducible_bbvi, BbviConfig, BitsBackConfig,
    BitsBackEncoding, BitsBackPrepared, JointConfig, PROTOCOL_SEED,
};
pub use bitstream::{Bitstream, Mode, MAGIC, VERSION};
pub use quantize::{
    clip_to_gaussian_support, gaussian_support, QuantizedModel, PRECISION_BITS, SUPPORT_SIGMAS, TOTAL_FREQ, WINDOW_MAX,
    WINDOW_MIN,
};
pub use rans::{rans_decode, rans_encode, RansCodec, STATE_BYTES, STATE_LOWER};
pub use standard::{decode_standard, encode_standard, StandardEncoding};

use crate::error::{shape_err, Error, Result};
use crate::model::{ModelParams, PriorParams, HYPERLATENT_STRIDE};
use crate::numcore::Tensor;

/// Pads a `[1, C, H, W]` image by edge replication so both extents are
/// multiples of the total downsampling factor.
pub fn pad_image(x: &Tensor) -> Result<Tensor> {
    let (c, h, w) = x.chw()?;
    let (ph, pw) = (h.div_ceil(HYPERLATENT_STRIDE) * HYPERLATENT_STRIDE, w.div_ceil(HYPERLATENT_STRIDE) * HYPERLATENT_STRIDE);
    if h == 0 || w == 0 {
        return Err(shape_err("pad_image", "empty image"));
    }
    let d = x.data();
    Ok(Tensor::from_fn([1, c, ph, pw], |i| {
        let (ch, r, col) = (i / (ph * pw), (i / pw) % ph, i % pw);
        d[(ch * h + r.min(h - 1)) * w + col.min(w - 1)]
    }))
}

/// Top-left `h × w` window of a `[1, C, H, W]` tensor.
pub fn crop_image(x: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let (c, ph, pw) = x.chw()?;
    if h > ph || w > pw {
        return Err(shape_err("crop_image", format!("{h}x{w} larger than {ph}x{pw}")));
    }
    let d = x.data();
    Ok(Tensor::from_fn([1, c, h, w], |i| {
        let (ch, r, col) = (i / (h * w), (i / w) % h, i % w);
        d[(ch * ph + r) * pw + col]
    }))
}

/// Clamps reconstruction values to `[0, 1]`.
pub fn clamp_unit(x: &Tensor) -> Tensor {
    x.map(|v| v.clamp(0.0, 1.0))
}

/// One frequency table per hyperlatent channel.
pub fn hyperprior_models(params: &ModelParams) -> Result<Vec<QuantizedModel>> {
    (0..params.config.hyperlatent_channels).map(|c| QuantizedModel::density_channel(&params.density, c)).collect()
}

/// Per-element tables of `P(ŷ|ẑ)`; `full_window` selects the global
/// window instead of the `±16σ` support.
pub fn conditional_models(prior: &PriorParams, full_window: bool) -> Result<Vec<QuantizedModel>> {
    prior
        .loc
        .data()
        .iter()
        .zip(prior.scale.data())
        .map(|(&l, &s)| if full_window { QuantizedModel::gaussian_full_window(l, s) } else { QuantizedModel::gaussian(l, s) })
        .collect()
}

/// Channel of element `i` in a `[1, C, H, W]` tensor.
fn channel_of(shape: &[usize], i: usize) -> usize {
    (i / (shape[2] * shape[3])) % shape[1]
}

pub(crate) fn to_symbols(t: &Tensor) -> Result<Vec<i32>> {
    if !t.is_integral() {
        return Err(Error::InvalidArgument("latents must be integers".into()));
    }
    Ok(t.data().iter().map(|&v| v.clamp(WINDOW_MIN as f64, WINDOW_MAX as f64) as i32).collect())
}

pub(crate) fn from_symbols(shape: [usize; 4], s: &[i32]) -> Tensor {
    Tensor::from_fn(shape, |i| s[i] as f64)
}

/// Checks a bitstream against the loaded model and returns the padded
/// `(H, W)` and the true `(h, w)`.
pub(crate) fn check_stream(params: &ModelParams, bs: &Bitstream, mode: Mode) -> Result<((usize, usize), (usize, usize))> {
    if bs.mode != mode {
        return Err(Error::Protocol(format!("expected a {mode:?} bitstream, found {:?}", bs.mode)));
    }
    let expected = params.fingerprint();
    if bs.model_hash != expected {
        return Err(Error::ModelMismatch { expected, found: bs.model_hash });
    }
    let (h, w) = (bs.height as usize, bs.width as usize);
    let pad = |n: usize| n.div_ceil(HYPERLATENT_STRIDE) * HYPERLATENT_STRIDE;
    Ok(((pad(h), pad(w)), (h, w)))
}

pub(crate) fn image_dims(params: &ModelParams, x: &Tensor) -> Result<(u16, u16)> {
    let (c, h, w) = x.chw()?;
    if c != params.config.image_channels {
        return Err(shape_err("encode", format!("{c} channels, model expects {}", params.config.image_channels)));
    }
    let h16 = u16::try_from(h).map_err(|_| shape_err("encode", "image too tall"))?;
    let w16 = u16::try_from(w).map_err(|_| shape_err("encode", "image too wide"))?;
    if h == 0 || w == 0 || h.div_ceil(HYPERLATENT_STRIDE) * HYPERLATENT_STRIDE > u16::MAX as usize {
        return Err(shape_err("encode", format!("unsupported image size {h}x{w}")));
    }
    Ok((w16, h16))
}
