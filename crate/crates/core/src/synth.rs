//! Procedural training and test patches: grayscale Gaussian random fields
//! at mixed length-scales.
//!
//! Each patch is a blend of two stationary fields with squared-exponential
//! covariance, approximated by random Fourier features. Patch `i` of a
//! corpus seeded with `s` is drawn from ChaCha8 stream `i` of seed `s`, so
//! any patch can be regenerated alone. Output is pinned by
//! [`SYNTH_VERSION`]; any change to the values must bump it.

use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::numcore::Tensor;

pub const SYNTH_VERSION: u32 = 1;
pub const PATCH_SIZE: usize = 32;

/// Length-scales in pixels; each patch mixes two of them.
pub const LENGTH_SCALES: [f64; 5] = [1.5, 3.0, 6.0, 12.0, 24.0];
const FEATURES: usize = 48;
const CONTRAST: f64 = 0.18;
const MEAN_JITTER: f64 = 0.15;

/// One unit-variance field sample on a `size × size` grid.
fn field(rng: &mut ChaCha8Rng, size: usize, length_scale: f64) -> Vec<f64> {
    let feats: Vec<(f64, f64, f64)> = (0..FEATURES)
        .map(|_| {
            let wx: f64 = StandardNormal.sample(rng);
            let wy: f64 = StandardNormal.sample(rng);
            (wx / length_scale, wy / length_scale, rng.random_range(0.0..2.0 * PI))
        })
        .collect();
    let norm = libm::sqrt(2.0 / FEATURES as f64);
    (0..size * size)
        .map(|i| {
            let (r, c) = ((i / size) as f64, (i % size) as f64);
            norm * feats.iter().map(|&(wx, wy, ph)| libm::cos(wx * c + wy * r + ph)).sum::<f64>()
        })
        .collect()
}

/// Patch `index` of the corpus with `seed`, shape `[1, 1, size, size]`,
/// values in `[0, 1]`.
pub fn patch(seed: u64, index: u64, size: usize) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let a = LENGTH_SCALES[rng.random_range(0..LENGTH_SCALES.len())];
    let b = LENGTH_SCALES[rng.random_range(0..LENGTH_SCALES.len())];
    let wa: f64 = rng.random_range(0.2..1.0);
    let wb = 1.0 - wa;
    let mean = 0.5 + rng.random_range(-MEAN_JITTER..MEAN_JITTER);
    let fa = field(&mut rng, size, a);
    let fb = field(&mut rng, size, b);
    let scale = CONTRAST / libm::sqrt(wa * wa + wb * wb);
    Tensor::from_fn([1, 1, size, size], |i| (mean + scale * (wa * fa[i] + wb * fb[i])).clamp(0.0, 1.0))
}

/// `n` patches of [`PATCH_SIZE`]² pixels, indices `0..n`.
pub fn corpus(seed: u64, n: usize) -> Vec<Tensor> {
    (0..n as u64).map(|i| patch(seed, i, PATCH_SIZE)).collect()
}

/// Stacks `[1, C, H, W]` images into one `[N, C, H, W]` batch.
pub fn stack(images: &[&Tensor]) -> Tensor {
    let first = images.first().expect("at least one image").shape();
    let per = images[0].len();
    let mut data = Vec::with_capacity(per * images.len());
    for im in images {
        assert_eq!(im.shape(), first, "batch images must share a shape");
        data.extend_from_slice(im.data());
    }
    Tensor::new([images.len(), first[1], first[2], first[3]], data).expect("consistent batch")
}
