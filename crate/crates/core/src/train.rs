//! Training loop: Adam on the relaxed rate-distortion objective.
//!
//! Standard models minimize the uniform-noise NELBO with the discretized
//! hyperprior; bits-back models minimize the bits-back NELBO (continuous
//! hyperprior, Gaussian posterior over `z`, entropy refunded).

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{BoundModel, ModelParams};
use crate::numcore::{adam_step, AdamState, Tape, Tensor, Var};
use crate::objectives::{nelbo_bitsback_logvar, nelbo_uniform, YRelaxation};
use crate::synth::stack;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Running-mean loss is reported every `log_every` steps.
    pub log_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { steps: 5000, batch_size: 8, learning_rate: 1e-3, seed: 0, log_every: 250 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainLog {
    pub step: u64,
    /// Mean per-image training NELBO since the previous log.
    pub nelbo: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub initial_nelbo: f64,
    pub final_nelbo: f64,
    pub history: Vec<TrainLog>,
}

/// Seed of the noise used by [`eval_nelbo`].
pub const EVAL_SEED: u64 = 0x6576_616c;

/// Per-image NELBO of one batch, as a tape scalar.
fn batch_loss<'t, R: Rng + ?Sized>(
    m: &BoundModel<'t>,
    tape: &'t Tape,
    x: &Tensor,
    rng: &mut R,
) -> Result<Var<'t>> {
    let n = x.shape()[0] as f64;
    let xv = tape.constant(x.clone());
    let mu_y = m.analysis(xv)?;
    let post = m.hyper_analysis(mu_y)?;
    let total = match post.log_var {
        None => nelbo_uniform(m, xv, mu_y, post.mu, rng)?,
        Some(lv) => nelbo_bitsback_logvar(m, xv, mu_y, post.mu, lv, YRelaxation::UniformNoise, rng)?,
    };
    total.scale(1.0 / n)
}

/// Mean per-image NELBO over `data` with fixed noise, in batches of
/// `batch_size`.
pub fn eval_nelbo(params: &ModelParams, data: &[Tensor], batch_size: usize) -> Result<f64> {
    if data.is_empty() || batch_size == 0 {
        return Err(Error::InvalidArgument("evaluation needs data and a positive batch size".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(EVAL_SEED);
    let mut sum = 0.0;
    for chunk in data.chunks(batch_size) {
        let x = stack(&chunk.iter().collect::<Vec<_>>());
        let tape = Tape::new();
        let m = params.bind(&tape, false);
        sum += batch_loss(&m, &tape, &x, &mut rng)?.item() * chunk.len() as f64;
    }
    Ok(sum / data.len() as f64)
}

/// Trains `params` in place on minibatches drawn uniformly from `data`.
///
/// A non-finite loss or gradient aborts with [`Error::NonFinite`] and
/// leaves `params` at the last finite iterate. `on_log` sees each
/// running-mean report as it is produced.
pub fn train(
    params: &mut ModelParams,
    data: &[Tensor],
    eval: &[Tensor],
    cfg: &TrainConfig,
    mut on_log: impl FnMut(&TrainLog),
) -> Result<TrainReport> {
    if data.is_empty() || cfg.batch_size == 0 || !(cfg.learning_rate > 0.0) || cfg.log_every == 0 {
        return Err(Error::InvalidArgument("training needs data, a batch size, a learning rate and a log interval".into()));
    }
    let initial_nelbo = eval_nelbo(params, eval, cfg.batch_size)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam: Vec<AdamState> = params.tensors().iter().map(|t| AdamState::new(t.len(), cfg.learning_rate)).collect();
    let mut history = Vec::new();
    let (mut acc, mut acc_n) = (0.0, 0u64);
    for step in 1..=cfg.steps {
        let batch: Vec<&Tensor> = (0..cfg.batch_size).map(|_| &data[rng.random_range(0..data.len())]).collect();
        let x = stack(&batch);
        let grads = {
            let tape = Tape::new();
            let m = params.bind(&tape, true);
            let loss = batch_loss(&m, &tape, &x, &mut rng)?;
            let l = loss.item();
            if !l.is_finite() {
                return Err(Error::NonFinite { op: "train" });
            }
            acc += l;
            acc_n += 1;
            let g = tape.backward(loss)?;
            let grads: Vec<Vec<f64>> = m.vars().into_iter().map(|v| g.wrt(v)).collect();
            if grads.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { op: "train" });
            }
            grads
        };
        for ((t, g), s) in params.tensors_mut().into_iter().zip(&grads).zip(&mut adam) {
            adam_step(t, g, s)?;
        }
        if step % cfg.log_every == 0 || step == cfg.steps {
            let row = TrainLog { step, nelbo: acc / acc_n as f64 };
            on_log(&row);
            history.push(row);
            (acc, acc_n) = (0.0, 0);
        }
    }
    let final_nelbo = eval_nelbo(params, eval, cfg.batch_size)?;
    Ok(TrainReport { initial_nelbo, final_nelbo, history })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::synth::corpus;

    fn cfg(steps: u64) -> TrainConfig {
        TrainConfig { steps, batch_size: 4, log_every: 5, ..TrainConfig::default() }
    }

    #[test]
    fn zero_steps_leaves_initialization() {
        let init = ModelParams::init(ModelConfig::default(), 2).unwrap();
        let mut p = init.clone();
        let data = corpus(0, 8);
        let r = train(&mut p, &data, &data[..4], &cfg(0), |_| {}).unwrap();
        assert_eq!(p, init);
        assert_eq!(r.initial_nelbo, r.final_nelbo);
        assert!(r.history.is_empty());
    }

    #[test]
    fn short_run_lowers_nelbo_and_is_deterministic() {
        for bits_back in [false, true] {
            let init = ModelParams::init(ModelConfig { bits_back, ..ModelConfig::default() }, 3).unwrap();
            let data = corpus(1, 16);
            let mut a = init.clone();
            let mut logs = 0;
            let ra = train(&mut a, &data, &data[..8], &cfg(40), |_| logs += 1).unwrap();
            assert_eq!(logs, 8);
            assert!(ra.final_nelbo < ra.initial_nelbo, "{ra:?}");
            let mut b = init.clone();
            let rb = train(&mut b, &data, &data[..8], &cfg(40), |_| {}).unwrap();
            assert_eq!(a, b);
            assert_eq!(ra, rb);
        }
    }

    #[test]
    fn eval_is_deterministic() {
        let p = ModelParams::init(ModelConfig::default(), 4).unwrap();
        let data = corpus(2, 5);
        assert_eq!(eval_nelbo(&p, &data, 2).unwrap(), eval_nelbo(&p, &data, 2).unwrap());
        assert!(eval_nelbo(&p, &[], 2).is_err());
    }
}
