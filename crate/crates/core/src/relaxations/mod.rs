//! Compression-time inference: per-image refinement of the latent means,
//! starting from the amortized encoder output, with several ways of
//! handling the rounding step.
//!
//! | method          | latent fed to the loss                     |
//! |-----------------|--------------------------------------------|
//! | `Sga`           | Gumbel-softmax relaxed rounding, annealed  |
//! | `Map`           | `μ` itself                                 |
//! | `Ste`           | `round(μ)`, identity gradient              |
//! | `UniformNoise`  | `μ + u`, `u ~ U(−½, ½)`                    |
//! | `DetAnneal`     | `⌊μ⌋ + p_up(μ, τ)`                         |

mod engine;
mod rounding;
mod trace;

use alloc::format;

pub use engine::{optimize, ImageProblem, InferenceOutcome, LatentProblem, ScalarProblem};
pub use rounding::{expected_round, gumbel_hard_round, gumbel_round, round_probs, round_probs_scalar, RoundingDistribution, ATANH_CLIP};
pub use trace::{discretization_gap, GapSeries, Trace, TraceRow};

use crate::error::{Error, Result};

/// `τ(t) = min(τ₀, τ₀·exp(−c·(t − t₀)))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TemperatureSchedule {
    pub tau0: f64,
    pub decay: f64,
    pub hold: u64,
}

impl Default for TemperatureSchedule {
    fn default() -> Self {
        Self { tau0: 0.5, decay: 0.001, hold: 700 }
    }
}

impl TemperatureSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau0 > 0.0 && self.tau0.is_finite()) || !(self.decay >= 0.0 && self.decay.is_finite()) {
            return Err(Error::InvalidArgument(format!("invalid temperature schedule {self:?}")));
        }
        Ok(())
    }

    pub fn tau(&self, t: u64) -> f64 {
        if t <= self.hold {
            return self.tau0;
        }
        let v = self.tau0 * libm::exp(-self.decay * (t - self.hold) as f64);
        // Keep the temperature strictly positive for very long runs.
        v.max(f64::MIN_POSITIVE)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Sga,
    Map,
    Ste,
    UniformNoise,
    DetAnneal,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Sga, Method::Map, Method::Ste, Method::UniformNoise, Method::DetAnneal];

    pub fn name(self) -> &'static str {
        match self {
            Method::Sga => "sga",
            Method::Map => "map",
            Method::Ste => "ste",
            Method::UniformNoise => "uniform",
            Method::DetAnneal => "det_anneal",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name().eq_ignore_ascii_case(s))
    }

    pub fn default_learning_rate(self) -> f64 {
        match self {
            Method::Ste => 1e-4,
            _ => 0.005,
        }
    }

    /// Whether the loss uses the temperature schedule.
    pub fn anneals(self) -> bool {
        matches!(self, Method::Sga | Method::DetAnneal)
    }
}

/// Settings of one inference run.
#[derive(Debug, Clone, PartialEq)]
pub struct InferenceConfig {
    pub method: Method,
    pub steps: u64,
    pub learning_rate: f64,
    pub schedule: TemperatureSchedule,
    /// Return the best rounded iterate seen instead of the last one.
    pub early_stopping: bool,
    pub seed: u64,
    /// The true objective is evaluated (and traced) every this many steps.
    pub trace_every: u64,
    /// Samples averaged for the relaxed loss in the final trace row.
    pub final_samples: usize,
}

impl InferenceConfig {
    pub fn new(method: Method) -> Self {
        Self {
            method,
            steps: 2000,
            learning_rate: method.default_learning_rate(),
            schedule: TemperatureSchedule::default(),
            early_stopping: matches!(method, Method::Map | Method::Ste),
            seed: 0,
            trace_every: 10,
            final_samples: 10,
        }
    }

    pub fn with_steps(mut self, steps: u64) -> Self {
        self.steps = steps;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Zero steps is accepted and leaves the amortized rounding unchanged.
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if self.trace_every == 0 || self.final_samples == 0 {
            return Err(Error::InvalidArgument("trace_every and final_samples must be positive".into()));
        }
        self.schedule.validate()
    }
}

/// Stochastic Gumbel annealing from the given initialization.
pub fn sga_optimize<P: LatentProblem>(
    problem: &P,
    init: &[crate::numcore::Tensor],
    cfg: &InferenceConfig,
) -> Result<InferenceOutcome> {
    if cfg.method != Method::Sga {
        return Err(Error::InvalidArgument(format!("sga_optimize called with {:?}", cfg.method)));
    }
    optimize(problem, init, cfg)
}

/// One of the alternative rounding strategies.
pub fn ablation_optimize<P: LatentProblem>(
    problem: &P,
    init: &[crate::numcore::Tensor],
    cfg: &InferenceConfig,
) -> Result<InferenceOutcome> {
    if cfg.method == Method::Sga {
        return Err(Error::InvalidArgument("ablation_optimize does not run SGA".into()));
    }
    optimize(problem, init, cfg)
}

#[cfg(test)]
mod tests;
