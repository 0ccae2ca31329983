use super::*;
use alloc::vec;
use crate::numcore::{Tape, Tensor, Var};
use crate::objectives::RDLoss;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Direct evaluation of the tempered two-point distribution with explicit
/// normalization.
fn eq_oracle(mu: f64, tau: f64) -> (f64, f64) {
    let f = mu - mu.floor();
    let down = (-libm::atanh(f) / tau).exp();
    let up = (-libm::atanh(1.0 - f) / tau).exp();
    (down / (down + up), up / (down + up))
}

#[test]
fn round_probs_examples() {
    for &tau in &[0.01, 0.2, 0.5, 3.0] {
        assert_eq!(round_probs_scalar(2.5, tau), (0.5, 0.5));
        assert_eq!(round_probs_scalar(3.0, tau), (1.0, 0.0));
    }
    let (d, u) = round_probs_scalar(2.75, 0.2);
    let (od, ou) = eq_oracle(2.75, 0.2);
    assert!((u - ou).abs() < 1e-12 && (d - od).abs() < 1e-12);
    assert!((u - 0.973).abs() < 5e-4);
    assert!(round_probs(&Tensor::scalar(0.3), 0.0).is_err());
}

#[test]
fn limit_law_at_small_temperature() {
    for &mu in &[4.1, 4.3, 4.49, -2.8] {
        assert!(round_probs_scalar(mu, 1e-3).0 > 1.0 - 1e-6);
    }
    for &mu in &[4.51, 4.7, 4.95, -2.2] {
        assert!(round_probs_scalar(mu, 1e-3).1 > 1.0 - 1e-6);
    }
}

proptest! {
    #[test]
    fn round_probs_normalized(mu in -300.0f64..300.0, tau in 1e-4f64..10.0) {
        let (d, u) = round_probs_scalar(mu, tau);
        prop_assert!((0.0..=1.0).contains(&d) && (0.0..=1.0).contains(&u));
        prop_assert_eq!(d + u, 1.0);
        let f = mu - mu.floor();
        if f > 1e-6 && f < 1.0 - 1e-6 {
            let (od, ou) = eq_oracle(mu, tau);
            prop_assert!((d - od).abs() < 1e-9 && (u - ou).abs() < 1e-9);
        }
    }

    #[test]
    fn schedule_nonincreasing(t in 0u64..100_000, tau0 in 0.01f64..2.0, decay in 0.0f64..0.01, hold in 0u64..2000) {
        let s = TemperatureSchedule { tau0, decay, hold };
        prop_assert!(s.tau(t + 1) <= s.tau(t));
        prop_assert!(s.tau(t) > 0.0);
        if t <= hold {
            prop_assert_eq!(s.tau(t), tau0);
        }
    }
}

#[test]
fn default_schedule_values() {
    let s = TemperatureSchedule::default();
    assert_eq!(s.tau(0), 0.5);
    assert_eq!(s.tau(700), 0.5);
    assert!((s.tau(1700) - 0.5 * (-1.0f64).exp()).abs() < 1e-15);
}

#[test]
fn hard_gumbel_frequencies_match_round_probs() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let n = 100_000;
    for &tau in &[0.5, 0.1] {
        for &mu in &[0.3, 1.45, -0.62, 7.9] {
            let p_up = round_probs_scalar(mu, tau).1;
            let ups = (0..n).filter(|_| gumbel_hard_round(mu, tau, &mut rng) > mu).count();
            let sd = (n as f64 * p_up * (1.0 - p_up)).sqrt();
            let dev = (ups as f64 - n as f64 * p_up).abs();
            assert!(dev <= 3.0 * sd + 1.0, "mu {mu} tau {tau}: {ups} vs {}", n as f64 * p_up);
        }
    }
}

#[test]
fn relaxed_samples_stay_between_neighbours() {
    let tape = Tape::new();
    let mu = tape.param(Tensor::new([4], vec![0.3, -1.7, 2.0, 5.5]).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let y = gumbel_round(mu, 0.5, &mut rng).unwrap().tensor();
    for (v, m) in y.data().iter().zip([0.3f64, -1.7, 2.0, 5.5]) {
        assert!(*v >= m.floor() && *v <= m.floor() + 1.0);
    }
    let e = expected_round(mu, 0.2).unwrap().tensor();
    assert!((e.data()[3] - 5.5).abs() < 1e-15);
    assert!(e.data()[2] == 2.0 || (e.data()[2] - 2.0).abs() < 1e-20);
}

#[test]
fn sga_scalar_toy_converges_to_zero() {
    for &x0 in &[2.3, -1.7, 0.6] {
        let cfg = InferenceConfig::new(Method::Sga).with_seed(1);
        let out = sga_optimize(&ScalarProblem { linear: 0.0 }, &[Tensor::scalar(x0)], &cfg).unwrap();
        assert_eq!(out.latents[0].item(), 0.0, "from {x0}");
        assert_eq!(out.result.total, 0.0);
    }
}

#[test]
fn map_rounds_continuous_minimum() {
    let cfg = InferenceConfig::new(Method::Map);
    let out = ablation_optimize(&ScalarProblem { linear: 0.4 }, &[Tensor::scalar(0.3)], &cfg).unwrap();
    assert!((out.mu[0].item() + 0.2).abs() < 1e-2);
    assert_eq!(out.latents[0].item(), 0.0);
}

#[test]
fn zero_steps_keep_direct_rounding() {
    let cfg = InferenceConfig::new(Method::UniformNoise).with_steps(0);
    let init = [Tensor::new([3], vec![0.4, -2.6, 1.5]).unwrap()];
    let out = ablation_optimize(&ScalarProblem { linear: 0.0 }, &init, &cfg).unwrap();
    assert_eq!(out.latents[0], init[0].round());
    assert_eq!(out.result, out.initial);
}

#[test]
fn already_optimal_integer_init_is_a_fixed_point() {
    let cfg = InferenceConfig::new(Method::Sga).with_steps(300);
    let out = sga_optimize(&ScalarProblem { linear: 0.0 }, &[Tensor::zeros([5])], &cfg).unwrap();
    assert_eq!(out.latents[0], Tensor::zeros([5]));
    assert_eq!(out.result.total, 0.0);
}

#[test]
fn det_anneal_relaxed_latent_reaches_grid() {
    let mut cfg = InferenceConfig::new(Method::DetAnneal).with_steps(1500);
    cfg.schedule = TemperatureSchedule { tau0: 0.5, decay: 0.01, hold: 700 };
    assert!(cfg.schedule.tau(1500) <= 0.01);
    let init = [Tensor::new([4], vec![2.3, -1.2, 0.45, 3.8]).unwrap()];
    let out = ablation_optimize(&ScalarProblem { linear: 0.3 }, &init, &cfg).unwrap();
    let tape = Tape::new();
    let relaxed = expected_round(tape.constant(out.mu[0].clone()), cfg.schedule.tau(1500)).unwrap().tensor();
    for v in relaxed.data() {
        assert!((v - v.round()).abs() < 1e-2, "{v}");
    }
}

#[test]
fn method_mismatch_is_rejected() {
    let init = [Tensor::scalar(0.5)];
    assert!(sga_optimize(&ScalarProblem { linear: 0.0 }, &init, &InferenceConfig::new(Method::Map)).is_err());
    assert!(ablation_optimize(&ScalarProblem { linear: 0.0 }, &init, &InferenceConfig::new(Method::Sga)).is_err());
    let mut bad = InferenceConfig::new(Method::Map);
    bad.learning_rate = 0.0;
    assert!(ablation_optimize(&ScalarProblem { linear: 0.0 }, &init, &bad).is_err());
}

/// Relaxed loss pushes the latent upward while the true loss grows.
struct Runaway;

impl LatentProblem for Runaway {
    fn relaxed_loss<'t>(&self, _tape: &'t Tape, latents: &[Var<'t>]) -> crate::Result<Var<'t>> {
        latents[0].neg()?.sum()
    }

    fn true_loss(&self, latents: &[Tensor]) -> crate::Result<RDLoss> {
        Ok(RDLoss::new(latents[0].item().powi(2) + 1.0, 0.0, 1.0))
    }
}

#[test]
fn divergence_guard() {
    let mut cfg = InferenceConfig::new(Method::Map);
    cfg.learning_rate = 0.5;
    let out = ablation_optimize(&Runaway, &[Tensor::scalar(0.0)], &cfg).unwrap();
    assert!(out.diverged);
    assert_eq!(out.latents[0].item(), 0.0);
    cfg.early_stopping = false;
    let out = ablation_optimize(&Runaway, &[Tensor::scalar(0.0)], &cfg).unwrap();
    assert!(out.diverged);
    assert!(out.result.total > 10.0 * out.initial.total);
    assert_eq!(out.trace.rows.last().unwrap().true_rd, out.result.total);
    let mut sga = InferenceConfig::new(Method::Sga);
    sga.learning_rate = 0.5;
    assert!(matches!(
        sga_optimize(&Runaway, &[Tensor::scalar(0.0)], &sga),
        Err(crate::Error::Diverged { .. })
    ));
}

#[test]
fn gap_series_and_csv() {
    assert!(discretization_gap(&Trace::default()).is_err());
    let mut t = Trace::default();
    for s in 0..5 {
        t.push(TraceRow { step: s * 10, tau: Some(0.5), relaxed_loss: 2.0, true_rd: 3.0, rate_bits: 3.0, distortion: 0.0 });
    }
    let g = discretization_gap(&t).unwrap();
    assert!(g.gap.iter().all(|&v| v == 1.0));
    assert_eq!(g.final_gap, 1.0);
    let csv = t.to_csv();
    assert!(csv.starts_with("step,tau,relaxed_loss,true_rd,rate_bits,distortion\n0,0.5,2,3,3,0\n"));
    assert_eq!(csv.lines().count(), 6);
}

#[test]
fn runs_are_deterministic() {
    let cfg = InferenceConfig::new(Method::Sga).with_steps(200).with_seed(9);
    let init = [Tensor::new([3], vec![1.3, -0.4, 2.6]).unwrap()];
    let a = sga_optimize(&ScalarProblem { linear: 0.1 }, &init, &cfg).unwrap();
    let b = sga_optimize(&ScalarProblem { linear: 0.1 }, &init, &cfg).unwrap();
    assert_eq!(a, b);
}
