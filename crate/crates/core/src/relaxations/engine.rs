use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::rounding::{expected_round, gumbel_round};
use super::trace::{Trace, TraceRow};
use super::{InferenceConfig, Method};
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::numcore::{adam_step, AdamState, Tape, Tensor, Var};
use crate::objectives::{rd_terms, true_rd, uniform_noise, HyperRate, RDLoss};

/// An objective over a list of latent tensors that can be evaluated both
/// at relaxed real values (on a tape) and at integers.
pub trait LatentProblem {
    fn relaxed_loss<'t>(&self, tape: &'t Tape, latents: &[Var<'t>]) -> Result<Var<'t>>;
    fn true_loss(&self, latents: &[Tensor]) -> Result<RDLoss>;
}

/// Per-image rate-distortion problem over `[y, z]`.
#[derive(Debug, Clone, Copy)]
pub struct ImageProblem<'a> {
    pub params: &'a ModelParams,
    pub x: &'a Tensor,
}

impl LatentProblem for ImageProblem<'_> {
    fn relaxed_loss<'t>(&self, tape: &'t Tape, latents: &[Var<'t>]) -> Result<Var<'t>> {
        let m = self.params.bind(tape, false);
        let x = tape.constant(self.x.clone());
        rd_terms(&m, x, latents[0], latents[1], HyperRate::Discretized)?.total(self.params.config.lambda)
    }

    fn true_loss(&self, latents: &[Tensor]) -> Result<RDLoss> {
        true_rd(self.params, &latents[0], &latents[1], self.x)
    }
}

/// `f(z) = Σ zᵢ² + linear·zᵢ` over a single latent tensor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarProblem {
    pub linear: f64,
}

impl LatentProblem for ScalarProblem {
    fn relaxed_loss<'t>(&self, _tape: &'t Tape, latents: &[Var<'t>]) -> Result<Var<'t>> {
        let z = latents[0];
        z.square()?.add(z.scale(self.linear)?)?.sum()
    }

    fn true_loss(&self, latents: &[Tensor]) -> Result<RDLoss> {
        let v = latents[0].data().iter().map(|&z| z * z + self.linear * z).sum();
        Ok(RDLoss::new(v, 0.0, 1.0))
    }
}

/// Result of one inference run.
#[derive(Debug, Clone, PartialEq)]
pub struct InferenceOutcome {
    /// Rounded latents that are returned for coding.
    pub latents: Vec<Tensor>,
    /// Continuous parameters at the end of the run.
    pub mu: Vec<Tensor>,
    /// True objective of the amortized rounding.
    pub initial: RDLoss,
    /// True objective of `latents`.
    pub result: RDLoss,
    pub trace: Trace,
    /// The divergence guard fired and the run stopped early.
    pub diverged: bool,
    pub steps_run: u64,
}

fn rounded(mu: &[Tensor]) -> Vec<Tensor> {
    mu.iter().map(Tensor::round).collect()
}

fn relax<'t>(method: Method, mu: Var<'t>, tau: f64, rng: &mut ChaCha8Rng) -> Result<Var<'t>> {
    match method {
        Method::Sga => gumbel_round(mu, tau, rng),
        Method::Map => Ok(mu),
        Method::Ste => mu.straight_round(),
        Method::UniformNoise => mu.add(mu.tape().constant(uniform_noise(&mu.shape(), rng))),
        Method::DetAnneal => expected_round(mu, tau),
    }
}

fn relaxed_value<P: LatentProblem>(problem: &P, mu: &[Tensor], cfg: &InferenceConfig, tau: f64, rng: &mut ChaCha8Rng) -> Result<f64> {
    let mut acc = 0.0;
    for _ in 0..cfg.final_samples {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = mu.iter().map(|t| tape.constant(t.clone())).collect();
        let relaxed = vars.iter().map(|&v| relax(cfg.method, v, tau, rng)).collect::<Result<Vec<_>>>()?;
        acc += problem.relaxed_loss(&tape, &relaxed)?.item();
    }
    Ok(acc / cfg.final_samples as f64)
}

/// Runs `cfg.steps` Adam steps on the method's relaxed objective starting
/// from `init`, then rounds.
///
/// The true objective of the rounded iterate is evaluated every
/// `cfg.trace_every` steps. If it exceeds ten times the initial value the
/// run stops. SGA then fails with [`Error::Diverged`]; the other methods
/// return an outcome flagged `diverged`, holding the best iterate with
/// early stopping and the diverged one without.
pub fn optimize<P: LatentProblem>(problem: &P, init: &[Tensor], cfg: &InferenceConfig) -> Result<InferenceOutcome> {
    cfg.validate()?;
    if init.is_empty() {
        return Err(Error::InvalidArgument("no latents to optimize".into()));
    }
    let mut mu = init.to_vec();
    let mut adam: Vec<AdamState> = mu.iter().map(|t| AdamState::new(t.len(), cfg.learning_rate)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let tau_of = |t: u64| cfg.method.anneals().then(|| cfg.schedule.tau(t));

    let initial = problem.true_loss(&rounded(&mu))?;
    let limit = 10.0 * initial.total.abs().max(1.0);
    let mut best = (initial, rounded(&mu));
    let mut trace = Trace::default();
    let mut diverged = false;
    let mut steps_run = 0;

    for t in 0..cfg.steps {
        let tau = cfg.schedule.tau(t);
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = mu.iter().map(|m| tape.param(m.clone())).collect();
        let relaxed = vars.iter().map(|&v| relax(cfg.method, v, tau, &mut rng)).collect::<Result<Vec<_>>>()?;
        let loss = problem.relaxed_loss(&tape, &relaxed)?;
        if t % cfg.trace_every == 0 {
            let hard = rounded(&mu);
            let rd = problem.true_loss(&hard)?;
            trace.push(TraceRow {
                step: t,
                tau: tau_of(t),
                relaxed_loss: loss.item(),
                true_rd: rd.total,
                rate_bits: rd.rate_bits,
                distortion: rd.distortion,
            });
            if rd.total > limit {
                if cfg.method == Method::Sga {
                    return Err(Error::Diverged { step: t, loss: rd.total, initial: initial.total });
                }
                diverged = true;
                break;
            }
            if rd.total < best.0.total {
                best = (rd, hard);
            }
        }
        let grads = tape.backward(loss)?;
        for ((m, v), state) in mu.iter_mut().zip(&vars).zip(&mut adam) {
            adam_step(m, &grads.wrt(*v), state)?;
        }
        steps_run = t + 1;
    }

    let hard = rounded(&mu);
    let rd = problem.true_loss(&hard)?;
    if !diverged {
        let relaxed = relaxed_value(problem, &mu, cfg, cfg.schedule.tau(steps_run), &mut rng)?;
        trace.push(TraceRow {
            step: steps_run,
            tau: tau_of(steps_run),
            relaxed_loss: relaxed,
            true_rd: rd.total,
            rate_bits: rd.rate_bits,
            distortion: rd.distortion,
        });
        if rd.total > limit {
            if cfg.method == Method::Sga {
                return Err(Error::Diverged { step: steps_run, loss: rd.total, initial: initial.total });
            }
            diverged = true;
        } else if rd.total < best.0.total {
            best = (rd, hard.clone());
        }
    }
    let (result, latents) = if cfg.early_stopping { best } else { (rd, hard) };
    Ok(InferenceOutcome { latents, mu, initial, result, trace, diverged, steps_run })
}
