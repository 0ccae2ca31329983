use alloc::vec::Vec;

use super::{
    channel_of, check_stream, clamp_unit, clip_to_gaussian_support, conditional_models, crop_image, from_symbols,
    hyperprior_models, image_dims, pad_image, to_symbols, Bitstream, Mode, RansCodec, STATE_LOWER,
};
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::numcore::Tensor;
use crate::objectives::{true_rd, RDLoss};
use crate::relaxations::{optimize, ImageProblem, InferenceConfig, InferenceOutcome};

/// Result of [`encode_standard`].
#[derive(Debug, Clone)]
pub struct StandardEncoding {
    pub bitstream: Bitstream,
    pub y_hat: Tensor,
    pub z_hat: Tensor,
    /// What the decoder will output: `g(ŷ)` clamped and cropped.
    pub reconstruction: Tensor,
    /// True objective of the coded latents on the padded image; its rate
    /// is the model's estimate of the payload size.
    pub rd: RDLoss,
    pub outcome: Option<InferenceOutcome>,
}

impl StandardEncoding {
    pub fn payload_bits(&self) -> usize {
        8 * self.bitstream.payload.len()
    }
}

/// Two-part coding of one `[1, C, H, W]` image with `[0, 1]` values.
///
/// `search` selects how the latents are found: `None` rounds the amortized
/// means, otherwise the given iterative method refines them first.
pub fn encode_standard(
    params: &ModelParams,
    x: &Tensor,
    search: Option<&InferenceConfig>,
    lambda_index: u8,
) -> Result<StandardEncoding> {
    let (width, height) = image_dims(params, x)?;
    let padded = pad_image(x)?;
    let inf = params.infer(&padded)?;
    let (mut y_hat, z_hat, outcome) = match search {
        None => (inf.mu_y.round(), inf.mu_z.round(), None),
        Some(cfg) => {
            let out = optimize(&ImageProblem { params, x: &padded }, &[inf.mu_y, inf.mu_z], cfg)?;
            (out.latents[0].clone(), out.latents[1].clone(), Some(out))
        }
    };
    let z_sym = to_symbols(&z_hat)?;
    let z_hat = from_symbols(z_hat.shape().try_into().expect("4-d"), &z_sym);
    let prior = params.hyper_decode(&z_hat)?;
    // ŷ beyond 16σ of its prior is clipped into the coded support.
    let y_sym: Vec<i32> = to_symbols(&y_hat)?
        .iter()
        .enumerate()
        .map(|(i, &k)| clip_to_gaussian_support(k, prior.loc.data()[i], prior.scale.data()[i]))
        .collect();
    y_hat = from_symbols(y_hat.shape().try_into().expect("4-d"), &y_sym);

    let pz = hyperprior_models(params)?;
    let py = conditional_models(&prior, false)?;
    let mut codec = RansCodec::new();
    for (s, m) in y_sym.iter().zip(&py).rev() {
        codec.encode(*s, m)?;
    }
    for (i, s) in z_sym.iter().enumerate().rev() {
        codec.encode(*s, &pz[channel_of(z_hat.shape(), i)])?;
    }
    let bitstream = Bitstream {
        mode: Mode::Standard,
        width,
        height,
        model_hash: params.fingerprint(),
        lambda_index,
        side_info_len: 0,
        bbvi_steps: 0,
        payload: codec.into_payload(),
    };
    let rd = true_rd(params, &y_hat, &z_hat, &padded)?;
    let reconstruction = crop_image(&clamp_unit(&params.decode(&y_hat)?), height as usize, width as usize)?;
    Ok(StandardEncoding { bitstream, y_hat, z_hat, reconstruction, rd, outcome })
}

/// Decodes a standard bitstream to the clamped, cropped reconstruction.
pub fn decode_standard(params: &ModelParams, bs: &Bitstream) -> Result<Tensor> {
    let ((ph, pw), (h, w)) = check_stream(params, bs, Mode::Standard)?;
    let (y_hat, _) = decode_latents(params, &bs.payload, ph, pw, false, true)?.0;
    crop_image(&clamp_unit(&params.decode(&y_hat)?), h, w)
}

/// Decodes `ẑ` then `ŷ`; returns the latents and the codec left over.
pub(crate) fn decode_latents(
    params: &ModelParams,
    payload: &[u8],
    ph: usize,
    pw: usize,
    full_window: bool,
    expect_end: bool,
) -> Result<((Tensor, Tensor), RansCodec)> {
    let c = &params.config;
    let z_shape = c.hyperlatent_shape(ph, pw);
    let y_shape = c.latent_shape(ph, pw);
    let mut codec = RansCodec::from_payload(payload)?;
    let pz = hyperprior_models(params)?;
    let n_z: usize = z_shape.iter().product();
    let z_sym = (0..n_z).map(|i| codec.decode(&pz[channel_of(&z_shape, i)])).collect::<Result<Vec<_>>>()?;
    let z_hat = from_symbols(z_shape, &z_sym);
    let prior = params.hyper_decode(&z_hat)?;
    let py = conditional_models(&prior, full_window)?;
    let y_sym = py.iter().map(|m| codec.decode(m)).collect::<Result<Vec<_>>>()?;
    let y_hat = from_symbols(y_shape, &y_sym);
    if expect_end && (codec.state() != STATE_LOWER || !codec.stack().is_empty()) {
        return Err(Error::Corrupt("trailing data after the last symbol".into()));
    }
    Ok(((y_hat, z_hat), codec))
}
