//! Lossy image compression with a two-level latent variable model and
//! compression-time inference.
//!
//! The crate is `no_std` (with `alloc`). It contains everything that is pure
//! computation:
//!
//! * [`numcore`]: dense `f64` tensors, a reverse-mode tape and Adam.
//! * [`model`]: the hierarchical VAE (analysis/synthesis transforms, the
//!   hyper transforms, the conditional Gaussian prior and the factorized
//!   hyperprior density).
//! * [`objectives`]: the discrete rate-distortion loss and its relaxations.
//! * [`relaxations`]: compression-time optimizers over discrete latents
//!   (stochastic Gumbel annealing and the MAP / STE / uniform-noise /
//!   deterministic-annealing baselines).
//! * [`coder`]: rANS, quantized entropy models, the bitstream container,
//!   standard two-part coding and lossy bits-back coding.
//! * [`bench`]: PSNR, rate points and Bjøntegaard-delta rate.
//! * [`synth`] and [`train`]: the procedural training corpus and the
//!   training loop.
//!
//! File IO, PNG handling, checkpoints and the CLI live in the `sgac` crate.
#![no_std]

extern crate alloc;
#[cfg(feature = "std")]
extern crate std;

pub mod bench;
pub mod coder;
pub mod error;
pub mod model;
pub mod numcore;
pub mod objectives;
pub mod relaxations;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
