use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Gumbel};

use crate::error::{Error, Result};
use crate::numcore::special::sigmoid;
use crate::numcore::{Tensor, Var};

/// Upper clip applied to fractional distances before `atanh`.
pub const ATANH_CLIP: f64 = 1.0 - 1e-9;

/// Tempered two-point rounding distribution per coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundingDistribution {
    pub p_down: Vec<f64>,
    pub p_up: Vec<f64>,
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("temperature must be positive, got {tau}")))
    }
}

/// `(p_down, p_up)` for one coordinate. The upper neighbour is always
/// `⌊μ⌋ + 1`; an exactly integral `μ` rounds to itself with certainty.
pub fn round_probs_scalar(mu: f64, tau: f64) -> (f64, f64) {
    let frac = mu - libm::floor(mu);
    if frac == 0.0 {
        return (1.0, 0.0);
    }
    let a_down = libm::atanh(frac.clamp(0.0, ATANH_CLIP));
    let a_up = libm::atanh((1.0 - frac).clamp(0.0, ATANH_CLIP));
    let p_up = sigmoid((a_down - a_up) / tau);
    (1.0 - p_up, p_up)
}

pub fn round_probs(mu: &Tensor, tau: f64) -> Result<RoundingDistribution> {
    check_tau(tau)?;
    let (p_down, p_up) = mu.data().iter().map(|&m| round_probs_scalar(m, tau)).unzip();
    Ok(RoundingDistribution { p_down, p_up })
}

/// `(⌊μ⌋, atanh(μ − ⌊μ⌋) − atanh(⌊μ⌋ + 1 − μ))` with the floor held
/// constant so gradients flow through the fractional part.
fn split<'t>(mu: Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
    let tape = mu.tape();
    let floor = tape.constant(mu.value().floor());
    let frac = mu.sub(floor)?;
    let a_down = frac.clamp(0.0, ATANH_CLIP)?.atanh()?;
    let a_up = frac.neg()?.offset(1.0)?.clamp(0.0, ATANH_CLIP)?.atanh()?;
    Ok((floor, a_down.sub(a_up)?))
}

/// Gumbel-softmax relaxed rounding: `⌊μ⌋ + r_up`, where `r_up` is the
/// up-component of a relaxed one-hot sample from the tempered rounding
/// distribution, using the same temperature for the softmax.
pub fn gumbel_round<'t, R: Rng + ?Sized>(mu: Var<'t>, tau: f64, rng: &mut R) -> Result<Var<'t>> {
    check_tau(tau)?;
    let (floor, diff) = split(mu)?;
    let g = Gumbel::new(0.0, 1.0).expect("valid Gumbel");
    let noise = Tensor::from_fn(mu.shape(), |_| {
        let up: f64 = g.sample(rng);
        let down: f64 = g.sample(rng);
        up - down
    });
    let r_up = diff.scale(1.0 / tau)?.add(mu.tape().constant(noise))?.scale(1.0 / tau)?.sigmoid()?;
    floor.add(r_up)
}

/// Hard sample from the same relaxation: the argmax of the perturbed
/// logits.
pub fn gumbel_hard_round<R: Rng + ?Sized>(mu: f64, tau: f64, rng: &mut R) -> f64 {
    let floor = libm::floor(mu);
    let frac = mu - floor;
    let a_down = libm::atanh(frac.clamp(0.0, ATANH_CLIP));
    let a_up = libm::atanh((1.0 - frac).clamp(0.0, ATANH_CLIP));
    let g = Gumbel::new(0.0, 1.0).expect("valid Gumbel");
    let up: f64 = g.sample(rng);
    let down: f64 = g.sample(rng);
    if (a_down - a_up) / tau + up - down > 0.0 {
        floor + 1.0
    } else {
        floor
    }
}

/// Deterministic annealing: `⌊μ⌋ + p_up`, the expected rounding.
pub fn expected_round<'t>(mu: Var<'t>, tau: f64) -> Result<Var<'t>> {
    check_tau(tau)?;
    let (floor, diff) = split(mu)?;
    floor.add(diff.scale(1.0 / tau)?.sigmoid()?)
}
