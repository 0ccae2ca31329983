//! Run configuration: a flat TOML file mirrored one-to-one by command-line
//! flags. Flags win over the file.

use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};
use sgac_core::bench::Ablation;
use sgac_core::relaxations::{Method, TemperatureSchedule};

use crate::error::{read, Error, Result};

/// Value of `corpus` selecting the procedural corpus.
pub const SYNTHETIC: &str = "synthetic";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, Args)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Rate-distortion trade-off (bits per unit of summed squared error on
    /// the [0, 1] scale).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    /// Train a model for bits-back coding.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bits_back: Option<bool>,
    /// Training steps.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    /// Training learning rate.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    /// Report the training loss every this many steps.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub log_every: Option<u64>,
    /// `synthetic`, a directory of PNG files, or one PNG file.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corpus: Option<String>,
    /// Number of synthetic images.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corpus_size: Option<usize>,
    /// Seed of the synthetic corpus.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corpus_seed: Option<u64>,
    /// Latent search for standard coding: round, sga, map, ste, uniform or
    /// det_anneal.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub method: Option<String>,
    /// Methods for `ablate`: M1, M2, A1-A6.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub methods: Option<Vec<String>>,
    /// Compression-time optimization steps.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inference_steps: Option<u64>,
    /// Compression-time learning rate (default depends on the method).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inference_learning_rate: Option<f64>,
    /// Initial annealing temperature.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau0: Option<f64>,
    /// Exponential temperature decay rate per step.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau_decay: Option<f64>,
    /// Steps before the temperature starts to decay.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau_hold: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// `standard` or `bitsback`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<String>,
    /// Joint refinement steps of bits-back encoding (0 disables it).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub joint_steps: Option<u64>,
    /// Replayed hyperlatent refinement steps (recorded in the bitstream).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bbvi_steps: Option<u64>,
    /// Side information: read by `compress`, written by `decompress`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub side_info: Option<PathBuf>,
    /// λ index stored in the bitstream header.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_index: Option<u8>,
    /// Model checkpoint (written by `train`, read otherwise).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    /// Checkpoints for `ablate`, one per λ.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoints: Option<Vec<PathBuf>>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    /// Original image, to report PSNR after `decompress`.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference: Option<PathBuf>,
    /// Report format: markdown or json.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub format: Option<String>,
}

macro_rules! overlay {
    ($base:ident, $top:ident; $($f:ident),*) => {
        $( if $top.$f.is_some() { $base.$f = $top.$f; } )*
    };
}

impl RunConfig {
    pub fn from_toml(text: &str) -> std::result::Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("flat config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = read(path)?;
        let text = std::str::from_utf8(&bytes).map_err(|_| Error::Config(format!("{}: not UTF-8", path.display())))?;
        Self::from_toml(text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// `self` with every field set in `flags` replaced.
    pub fn overlay(mut self, flags: Self) -> Self {
        overlay!(self, flags; lambda, bits_back, steps, batch_size, learning_rate, log_every, corpus, corpus_size,
            corpus_seed, method, methods, inference_steps, inference_learning_rate, tau0, tau_decay, tau_hold, seed,
            mode, joint_steps, bbvi_steps, side_info, lambda_index, checkpoint, checkpoints, input, output, reference,
            format);
        self
    }

    /// Range checks that do not depend on the command.
    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        if let Some(l) = self.lambda {
            if !(l > 0.0 && l.is_finite()) {
                return cfg(format!("lambda must be positive, got {l}"));
            }
        }
        for (name, v) in [("learning_rate", self.learning_rate), ("inference_learning_rate", self.inference_learning_rate)] {
            if let Some(v) = v {
                if !(v > 0.0 && v.is_finite()) {
                    return cfg(format!("{name} must be positive, got {v}"));
                }
            }
        }
        if self.batch_size == Some(0) || self.log_every == Some(0) {
            return cfg("batch_size and log_every must be positive".into());
        }
        if let Some(m) = &self.method {
            parse_method(m)?;
        }
        for m in self.methods.iter().flatten() {
            Ablation::parse(m).ok_or_else(|| Error::Config(format!("unknown ablation method {m:?}")))?;
        }
        if let Some(m) = &self.mode {
            if !matches!(m.as_str(), "standard" | "bitsback") {
                return cfg(format!("mode must be standard or bitsback, got {m:?}"));
            }
        }
        if let Some(f) = &self.format {
            if !matches!(f.as_str(), "markdown" | "json") {
                return cfg(format!("format must be markdown or json, got {f:?}"));
            }
        }
        self.schedule().validate().map_err(|e| Error::Config(e.to_string()))
    }

    pub fn schedule(&self) -> TemperatureSchedule {
        let d = TemperatureSchedule::default();
        TemperatureSchedule {
            tau0: self.tau0.unwrap_or(d.tau0),
            decay: self.tau_decay.unwrap_or(d.decay),
            hold: self.tau_hold.unwrap_or(d.hold),
        }
    }

    pub fn bits_back_mode(&self) -> bool {
        self.mode.as_deref() == Some("bitsback")
    }
}

/// `None` is direct rounding.
pub fn parse_method(s: &str) -> Result<Option<Method>> {
    if s.eq_ignore_ascii_case("round") {
        return Ok(None);
    }
    Method::parse(s).map(Some).ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
}

pub fn require<'a, T>(v: &'a Option<T>, key: &str) -> Result<&'a T> {
    v.as_ref().ok_or_else(|| Error::Config(format!("missing required setting `{key}`")))
}
