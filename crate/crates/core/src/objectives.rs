//! Loss functions: the discrete rate-distortion objective, its uniform-noise
//! and stochastic-rounding relaxations, and the bits-back variant with the
//! posterior entropy subtracted.
//!
//! Rates are in bits, distortion is the summed squared error on the `[0, 1]`
//! pixel scale, and every loss is `rate + λ·distortion` summed over the
//! batch.

use alloc::format;
use core::f64::consts::{E, LN_2, PI};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use crate::error::{Error, Result};
use crate::model::{BoundModel, ModelParams};
use crate::numcore::{gaussian_log2_mass, Tape, Tensor, Var};
use crate::relaxations::gumbel_round;

/// Evaluated rate-distortion loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RDLoss {
    pub rate_bits: f64,
    pub distortion: f64,
    pub lambda: f64,
    pub total: f64,
}

impl RDLoss {
    pub fn new(rate_bits: f64, distortion: f64, lambda: f64) -> Self {
        Self { rate_bits, distortion, lambda, total: rate_bits + lambda * distortion }
    }
}

/// Rate and distortion terms recorded on a tape.
#[derive(Debug, Clone, Copy)]
pub struct RdTerms<'t> {
    /// `−log₂` of the hyperlatent probability (mass or density).
    pub rate_z: Var<'t>,
    /// `−log₂ P(y|z)` under the discretized Gaussian conditional.
    pub rate_y: Var<'t>,
    pub distortion: Var<'t>,
}

impl<'t> RdTerms<'t> {
    pub fn rate(&self) -> Result<Var<'t>> {
        self.rate_z.add(self.rate_y)
    }

    pub fn total(&self, lambda: f64) -> Result<Var<'t>> {
        self.rate()?.add(self.distortion.scale(lambda)?)
    }
}

/// How the hyperlatent rate is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HyperRate {
    /// CDF differences over unit bins (the density convolved with a
    /// uniform).
    Discretized,
    /// The unconvolved density, as used by bits-back coding.
    Continuous,
}

/// `−log₂ P(y|z)` elementwise summed, with `(loc, scale) = g_h(z)`.
pub fn conditional_rate<'t>(m: &BoundModel<'t>, y: Var<'t>, z: Var<'t>) -> Result<Var<'t>> {
    let (loc, scale) = m.hyper_synthesis(z)?;
    gaussian_log2_mass(y, loc, scale)?.sum()?.neg()
}

/// `−log₂ P(z)` summed.
pub fn hyper_rate<'t>(m: &BoundModel<'t>, z: Var<'t>, kind: HyperRate) -> Result<Var<'t>> {
    match kind {
        HyperRate::Discretized => m.hyper_log2_mass(z)?.sum()?.neg(),
        HyperRate::Continuous => m.hyper_log2_pdf(z)?.sum()?.neg(),
    }
}

/// `‖x − g(y)‖²`.
pub fn distortion<'t>(m: &BoundModel<'t>, x: Var<'t>, y: Var<'t>) -> Result<Var<'t>> {
    m.synthesis(y)?.sub(x)?.square()?.sum()
}

/// All terms of `L_λ` at real-valued `(y, z)`.
pub fn rd_terms<'t>(m: &BoundModel<'t>, x: Var<'t>, y: Var<'t>, z: Var<'t>, kind: HyperRate) -> Result<RdTerms<'t>> {
    Ok(RdTerms { rate_z: hyper_rate(m, z, kind)?, rate_y: conditional_rate(m, y, z)?, distortion: distortion(m, x, y)? })
}

/// The discrete objective at integer latents.
pub fn true_rd(params: &ModelParams, y_hat: &Tensor, z_hat: &Tensor, x: &Tensor) -> Result<RDLoss> {
    if !y_hat.is_integral() || !z_hat.is_integral() {
        return Err(Error::InvalidArgument("true_rd needs integer latents".into()));
    }
    let tape = Tape::new();
    let m = params.bind(&tape, false);
    let t = rd_terms(&m, tape.constant(x.clone()), tape.constant(y_hat.clone()), tape.constant(z_hat.clone()), HyperRate::Discretized)?;
    Ok(RDLoss::new(t.rate()?.item(), t.distortion.item(), params.config.lambda))
}

/// Tensor of i.i.d. `Uniform(−½, ½)` draws.
pub fn uniform_noise<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor {
    let u = Uniform::new(-0.5, 0.5).expect("valid range");
    Tensor::from_fn(shape.to_vec(), |_| u.sample(rng))
}

/// Tensor of i.i.d. standard normal draws.
pub fn normal_noise<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| StandardNormal.sample(rng))
}

/// One-sample uniform-noise relaxation: `L_λ` at `y = μ_y + u`,
/// `z = μ_z + u′`.
pub fn nelbo_uniform<'t, R: Rng + ?Sized>(
    m: &BoundModel<'t>,
    x: Var<'t>,
    mu_y: Var<'t>,
    mu_z: Var<'t>,
    rng: &mut R,
) -> Result<Var<'t>> {
    let tape = x.tape();
    let y = mu_y.add(tape.constant(uniform_noise(&mu_y.shape(), rng)))?;
    let z = mu_z.add(tape.constant(uniform_noise(&mu_z.shape(), rng)))?;
    rd_terms(m, x, y, z, HyperRate::Discretized)?.total(m.config.lambda)
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("temperature must be positive, got {tau}")))
    }
}

/// Stochastic rounding objective: `L_λ` at Gumbel-softmax relaxed roundings
/// of `(μ_y, μ_z)`, averaged over `n_samples`.
pub fn sga_objective<'t, R: Rng + ?Sized>(
    m: &BoundModel<'t>,
    x: Var<'t>,
    mu_y: Var<'t>,
    mu_z: Var<'t>,
    tau: f64,
    n_samples: usize,
    rng: &mut R,
) -> Result<Var<'t>> {
    check_tau(tau)?;
    if n_samples == 0 {
        return Err(Error::InvalidArgument("n_samples must be at least 1".into()));
    }
    let mut acc: Option<Var<'t>> = None;
    for _ in 0..n_samples {
        let y = gumbel_round(mu_y, tau, rng)?;
        let z = gumbel_round(mu_z, tau, rng)?;
        let l = rd_terms(m, x, y, z, HyperRate::Discretized)?.total(m.config.lambda)?;
        acc = Some(match acc {
            Some(a) => a.add(l)?,
            None => l,
        });
    }
    acc.expect("n_samples >= 1").scale(1.0 / n_samples as f64)
}

/// Entropy of `N(μ, exp(log_var))` in bits, summed over coordinates.
pub fn gaussian_entropy_bits<'t>(log_var: Var<'t>) -> Result<Var<'t>> {
    let per = 0.5 * libm::log2(2.0 * PI * E);
    log_var.scale(0.5 / LN_2)?.offset(per)?.sum()
}

/// `−log₂ p(z) − log₂ P(y|z) − H[q(z)]` with `z = μ_z + σ_z·ε`: the
/// hyperlatent part of the bits-back objective for a given `y`.
pub fn bbvi_objective<'t>(
    m: &BoundModel<'t>,
    y: Var<'t>,
    mu_z: Var<'t>,
    log_var_z: Var<'t>,
    eps: &Tensor,
) -> Result<Var<'t>> {
    let sigma = log_var_z.scale(0.5)?.exp()?;
    let z = mu_z.add(sigma.mul(y.tape().constant(eps.clone()))?)?;
    let rate = hyper_rate(m, z, HyperRate::Continuous)?.add(conditional_rate(m, y, z)?)?;
    rate.sub(gaussian_entropy_bits(log_var_z)?)
}

/// Relaxation applied to the latent in the bits-back objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum YRelaxation {
    /// `y = μ_y + u` (training).
    UniformNoise,
    /// Gumbel-softmax relaxed rounding at temperature `tau` (compression).
    Sga { tau: f64 },
    /// `y = μ_y` as given, e.g. an already rounded latent.
    Fixed,
}

/// One-sample bits-back objective with posterior variance `var_z`.
#[allow(clippy::too_many_arguments)]
pub fn nelbo_bitsback<'t, R: Rng + ?Sized>(
    m: &BoundModel<'t>,
    x: Var<'t>,
    mu_y: Var<'t>,
    mu_z: Var<'t>,
    var_z: Var<'t>,
    y_relax: YRelaxation,
    rng: &mut R,
) -> Result<Var<'t>> {
    if var_z.value().data().iter().any(|&v| v <= 0.0) {
        return Err(Error::Domain { op: "nelbo_bitsback" });
    }
    nelbo_bitsback_logvar(m, x, mu_y, mu_z, var_z.log()?, y_relax, rng)
}

/// [`nelbo_bitsback`] parameterized by `log σ²_z`.
pub fn nelbo_bitsback_logvar<'t, R: Rng + ?Sized>(
    m: &BoundModel<'t>,
    x: Var<'t>,
    mu_y: Var<'t>,
    mu_z: Var<'t>,
    log_var_z: Var<'t>,
    y_relax: YRelaxation,
    rng: &mut R,
) -> Result<Var<'t>> {
    let tape = x.tape();
    let y = match y_relax {
        YRelaxation::UniformNoise => mu_y.add(tape.constant(uniform_noise(&mu_y.shape(), rng)))?,
        YRelaxation::Sga { tau } => {
            check_tau(tau)?;
            gumbel_round(mu_y, tau, rng)?
        }
        YRelaxation::Fixed => mu_y,
    };
    let eps = normal_noise(&mu_z.shape(), rng);
    let rates = bbvi_objective(m, y, mu_z, log_var_z, &eps)?;
    rates.add(distortion(m, x, y)?.scale(m.config.lambda)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::numcore::special::{gaussian_entropy_bits as entropy_scalar, gaussian_interval_mass, MASS_FLOOR};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (ModelParams, Tensor) {
        let m = ModelParams::init(ModelConfig { lambda: 300.0, ..ModelConfig::default() }, 11).unwrap();
        let x = Tensor::from_fn([1, 1, 32, 32], |i| 0.5 + 0.3 * libm::sin(i as f64 * 0.21));
        (m, x)
    }

    #[test]
    fn rd_loss_total_is_exact_sum() {
        let l = RDLoss::new(123.25, 0.75, 300.0);
        assert_eq!(l.total, 123.25 + 300.0 * 0.75);
    }

    #[test]
    fn true_rd_rate_is_additive() {
        let (m, x) = setup();
        let inf = m.infer(&x).unwrap();
        let (y, z) = (inf.mu_y.round(), inf.mu_z.round());
        let rd = true_rd(&m, &y, &z, &x).unwrap();
        let rz = -m.hyperprior_logmass(&z).unwrap();
        let p = m.hyper_decode(&z).unwrap();
        let ry: f64 = (0..y.len())
            .map(|i| {
                let mass = gaussian_interval_mass(y.data()[i], p.loc.data()[i], p.scale.data()[i]).mass;
                -libm::log2(mass.max(MASS_FLOOR))
            })
            .sum();
        assert!((rd.rate_bits - (rz + ry)).abs() < 1e-9 * rd.rate_bits.max(1.0));
        let xh = m.decode(&y).unwrap();
        assert!((rd.distortion - x.squared_distance(&xh).unwrap()).abs() < 1e-12);
        assert!(true_rd(&m, &inf.mu_y, &z, &x).is_err());
    }

    #[test]
    fn zero_latents_on_symmetric_model_cost_mass_at_zero() {
        let (mut m, x) = setup();
        // Zero hyper-decoder output: loc 0, scale softplus(0) + 1e-6.
        for l in &mut m.hyper_decoder {
            l.weight = Tensor::zeros(l.weight.shape().to_vec());
            l.bias = Tensor::zeros(l.bias.shape().to_vec());
        }
        let y = Tensor::zeros([1, 8, 8, 8]);
        let z = Tensor::zeros([1, 4, 2, 2]);
        let rd = true_rd(&m, &y, &z, &x).unwrap();
        let s = libm::log(2.0) + 1e-6;
        let per_y = -libm::log2(gaussian_interval_mass(0.0, 0.0, s).mass);
        let per_z: f64 = (0..16).map(|i| -libm::log2(m.density.interval_mass(i / 4, -0.5, 0.5))).sum();
        assert!((rd.rate_bits - (512.0 * per_y + per_z)).abs() < 1e-9);
    }

    #[test]
    fn gaussian_rate_grows_with_distance_from_loc() {
        let (m, x) = setup();
        let z = Tensor::zeros([1, 4, 2, 2]);
        let p = m.hyper_decode(&z).unwrap();
        let mut y = p.loc.round();
        let mut prev = true_rd(&m, &y, &z, &x).unwrap().rate_bits;
        let loc0 = p.loc.data()[5];
        for _ in 0..30 {
            let v = y.data()[5];
            y.data_mut()[5] = if v >= loc0 { v + 1.0 } else { v - 1.0 };
            let r = true_rd(&m, &y, &z, &x).unwrap().rate_bits;
            assert!(r >= prev - 1e-9);
            prev = r;
        }
    }

    #[test]
    fn losses_are_reproducible_under_a_seed() {
        let (m, x) = setup();
        let inf = m.infer(&x).unwrap();
        let eval = |seed: u64| {
            let tape = Tape::new();
            let b = m.bind(&tape, false);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (xv, y, z) = (tape.constant(x.clone()), tape.param(inf.mu_y.clone()), tape.param(inf.mu_z.clone()));
            let a = nelbo_uniform(&b, xv, y, z, &mut rng).unwrap().item();
            let s = sga_objective(&b, xv, y, z, 0.3, 2, &mut rng).unwrap().item();
            (a, s)
        };
        assert_eq!(eval(5), eval(5));
        assert_ne!(eval(5), eval(6));
    }

    #[test]
    fn nelbo_uniform_gradient_reaches_mu_y() {
        let (m, x) = setup();
        let inf = m.infer(&x).unwrap();
        let tape = Tape::new();
        let b = m.bind(&tape, false);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let y = tape.param(inf.mu_y.clone());
        let loss = nelbo_uniform(&b, tape.constant(x.clone()), y, tape.constant(inf.mu_z.clone()), &mut rng).unwrap();
        let g = tape.backward(loss).unwrap();
        assert!(g.wrt(y).iter().any(|&v| v != 0.0));
    }

    #[test]
    fn sga_at_integer_mu_matches_true_rd() {
        let (m, x) = setup();
        let inf = m.infer(&x).unwrap();
        let (y, z) = (inf.mu_y.round(), inf.mu_z.round());
        let reference = true_rd(&m, &y, &z, &x).unwrap().total;
        for &tau in &[0.5, 0.1, 0.01] {
            let tape = Tape::new();
            let b = m.bind(&tape, false);
            let mut rng = ChaCha8Rng::seed_from_u64(2);
            let v = sga_objective(&b, tape.constant(x.clone()), tape.constant(y.clone()), tape.constant(z.clone()), tau, 3, &mut rng)
                .unwrap()
                .item();
            assert!((v - reference).abs() < 1e-6 * reference, "{tau}: {v} vs {reference}");
        }
    }

    #[test]
    fn rejects_bad_temperature_and_variance() {
        let (m, x) = setup();
        let inf = m.infer(&x).unwrap();
        let tape = Tape::new();
        let b = m.bind(&tape, false);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (xv, y, z) = (tape.constant(x.clone()), tape.constant(inf.mu_y.clone()), tape.constant(inf.mu_z.clone()));
        assert!(sga_objective(&b, xv, y, z, 0.0, 1, &mut rng).is_err());
        assert!(sga_objective(&b, xv, y, z, 0.5, 0, &mut rng).is_err());
        let bad = tape.constant(Tensor::full(inf.mu_z.shape().to_vec(), -1.0));
        assert!(nelbo_bitsback(&b, xv, y, z, bad, YRelaxation::Fixed, &mut rng).is_err());
    }

    #[test]
    fn entropy_term_matches_closed_form() {
        let tape = Tape::new();
        let v0 = 1.0 / (2.0 * PI * E);
        let lv = tape.constant(Tensor::full([4], libm::log(v0)));
        assert!(gaussian_entropy_bits(lv).unwrap().item().abs() < 1e-12);
        let lv2 = tape.constant(Tensor::full([4], libm::log(2.0 * v0)));
        assert!((gaussian_entropy_bits(lv2).unwrap().item() - 2.0).abs() < 1e-12);
        assert!((entropy_scalar(2.0 * v0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn bitsback_objective_is_consistent_with_its_parts() {
        let m = ModelParams::init(ModelConfig { bits_back: true, lambda: 300.0, ..ModelConfig::default() }, 4).unwrap();
        let x = Tensor::from_fn([1, 1, 32, 32], |i| (i % 32) as f64 / 31.0);
        let inf = m.infer(&x).unwrap();
        let var = inf.var_z.clone().unwrap();
        let tape = Tape::new();
        let b = m.bind(&tape, false);
        let y = inf.mu_y.round();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let total = nelbo_bitsback(
            &b,
            tape.constant(x.clone()),
            tape.constant(y.clone()),
            tape.constant(inf.mu_z.clone()),
            tape.constant(var.clone()),
            YRelaxation::Fixed,
            &mut rng,
        )
        .unwrap()
        .item();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let eps = normal_noise(inf.mu_z.shape(), &mut rng);
        let z = Tensor::from_fn(inf.mu_z.shape().to_vec(), |i| inf.mu_z.data()[i] + libm::sqrt(var.data()[i]) * eps.data()[i]);
        let p = m.hyper_decode(&z).unwrap();
        let ry: f64 = (0..y.len())
            .map(|i| -libm::log2(gaussian_interval_mass(y.data()[i], p.loc.data()[i], p.scale.data()[i]).mass.max(MASS_FLOOR)))
            .sum();
        let rz = -m.hyperprior_logpdf(&z).unwrap();
        let h: f64 = var.data().iter().map(|&v| entropy_scalar(v)).sum();
        let d = x.squared_distance(&m.decode(&y).unwrap()).unwrap();
        let expected = rz + ry - h + 300.0 * d;
        assert!((total - expected).abs() < 1e-8 * expected.abs().max(1.0), "{total} vs {expected}");
    }
}
