use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::model::DensityParams;
use crate::numcore::special::{gaussian_interval_mass, sigmoid, std_normal_cdf};

pub const PRECISION_BITS: u32 = 16;
pub const TOTAL_FREQ: u32 = 1 << PRECISION_BITS;
/// Global symbol window shared by every model.
pub const WINDOW_MIN: i32 = -255;
pub const WINDOW_MAX: i32 = 256;
/// Half-width of a Gaussian support in standard deviations.
pub const SUPPORT_SIGMAS: f64 = 16.0;

/// Integer frequency table over a contiguous symbol range, summing to
/// 2¹⁶ with every symbol at least 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantizedModel {
    k_min: i32,
    /// `cdf[i]` is the cumulative frequency below symbol `k_min + i`;
    /// `cdf.len() == n + 1` and `cdf[n] == 2¹⁶`.
    cdf: Vec<u32>,
}

/// Support `[k_min, k_max]` of a Gaussian model: `±⌈16σ⌉` around the
/// rounded location, clamped to the global window.
pub fn gaussian_support(loc: f64, scale: f64) -> (i32, i32) {
    let radius = libm::ceil(SUPPORT_SIGMAS * scale).min(2.0 * (WINDOW_MAX - WINDOW_MIN) as f64) as i32;
    let center = libm::round(loc.clamp(WINDOW_MIN as f64, WINDOW_MAX as f64)) as i32;
    ((center - radius).max(WINDOW_MIN), (center + radius).min(WINDOW_MAX))
}

/// Clamps a symbol into the support of a Gaussian model.
pub fn clip_to_gaussian_support(k: i32, loc: f64, scale: f64) -> i32 {
    let (lo, hi) = gaussian_support(loc, scale);
    k.clamp(lo, hi)
}

impl QuantizedModel {
    /// Quantizes nonnegative masses (tails already folded into the edges)
    /// for symbols `k_min, k_min + 1, ...`.
    ///
    /// Each symbol gets `max(1, ⌊m·2¹⁶⌋)`; the remaining slack goes to the
    /// largest fractional remainders, and any excess from the minimum
    /// frequency is taken from the most frequent symbols.
    pub fn from_masses(k_min: i32, masses: &[f64]) -> Result<Self> {
        let n = masses.len();
        if n == 0 || n > TOTAL_FREQ as usize {
            return Err(Error::InvalidArgument(format!("cannot quantize {n} symbols")));
        }
        let total: f64 = masses.iter().sum();
        if !(total > 0.0 && total.is_finite()) || masses.iter().any(|&m| !(m >= 0.0)) {
            return Err(Error::NonFinite { op: "quantize_model" });
        }
        let scale = TOTAL_FREQ as f64 / total;
        let mut freq: Vec<u32> = Vec::with_capacity(n);
        let mut rem: Vec<f64> = Vec::with_capacity(n);
        for &m in masses {
            let raw = m * scale;
            let f = libm::floor(raw);
            freq.push((f as u32).max(1));
            rem.push(raw - f);
        }
        let mut sum: i64 = freq.iter().map(|&f| f as i64).sum();
        let target = TOTAL_FREQ as i64;
        if sum < target {
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| rem[b].total_cmp(&rem[a]).then(a.cmp(&b)));
            let mut i = 0;
            while sum < target {
                freq[order[i % n]] += 1;
                sum += 1;
                i += 1;
            }
        }
        while sum > target {
            let (idx, _) = freq
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
                .expect("nonempty");
            let excess = (sum - target).min(freq[idx] as i64 - 1).max(1);
            freq[idx] -= excess as u32;
            sum -= excess;
        }
        let mut cdf = vec![0u32; n + 1];
        for i in 0..n {
            cdf[i + 1] = cdf[i] + freq[i];
        }
        debug_assert_eq!(cdf[n], TOTAL_FREQ);
        Ok(Self { k_min, cdf })
    }

    /// Discretized `N(loc, scale²)` on its clamped support.
    pub fn gaussian(loc: f64, scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite() && loc.is_finite()) {
            return Err(Error::Domain { op: "quantize_model" });
        }
        let (lo, hi) = gaussian_support(loc, scale);
        Self::gaussian_on(loc, scale, lo, hi)
    }

    /// Discretized `N(loc, scale²)` over the full window.
    pub fn gaussian_full_window(loc: f64, scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite() && loc.is_finite()) {
            return Err(Error::Domain { op: "quantize_model" });
        }
        Self::gaussian_on(loc, scale, WINDOW_MIN, WINDOW_MAX)
    }

    fn gaussian_on(loc: f64, scale: f64, lo: i32, hi: i32) -> Result<Self> {
        let masses: Vec<f64> = (lo..=hi)
            .map(|k| {
                let kf = k as f64;
                if lo == hi {
                    1.0
                } else if k == lo {
                    std_normal_cdf((kf + 0.5 - loc) / scale)
                } else if k == hi {
                    std_normal_cdf((loc - (kf - 0.5)) / scale)
                } else {
                    gaussian_interval_mass(kf, loc, scale).mass
                }
            })
            .collect();
        Self::from_masses(lo, &masses)
    }

    /// Channel `c` of the factorized hyperprior over the full window.
    pub fn density_channel(density: &DensityParams, c: usize) -> Result<Self> {
        let (lo, hi) = (WINDOW_MIN, WINDOW_MAX);
        let masses: Vec<f64> = (lo..=hi)
            .map(|k| {
                let kf = k as f64;
                if k == lo {
                    sigmoid(density.logit(c, kf + 0.5))
                } else if k == hi {
                    sigmoid(-density.logit(c, kf - 0.5))
                } else {
                    density.interval_mass(c, kf - 0.5, kf + 0.5)
                }
            })
            .collect();
        Self::from_masses(lo, &masses)
    }

    pub fn support(&self) -> (i32, i32) {
        (self.k_min, self.k_min + self.cdf.len() as i32 - 2)
    }

    pub fn contains(&self, k: i32) -> bool {
        let (lo, hi) = self.support();
        (lo..=hi).contains(&k)
    }

    /// `(start, freq)` of symbol `k`.
    pub fn interval(&self, k: i32) -> Result<(u32, u32)> {
        let (lo, hi) = self.support();
        if !(lo..=hi).contains(&k) {
            return Err(Error::OutOfSupport { symbol: k, min: lo, max: hi });
        }
        let i = (k - self.k_min) as usize;
        Ok((self.cdf[i], self.cdf[i + 1] - self.cdf[i]))
    }

    pub fn freq(&self, k: i32) -> u32 {
        self.interval(k).map(|(_, f)| f).unwrap_or(0)
    }

    /// Symbol whose cumulative interval contains `slot < 2¹⁶`, with its
    /// `(start, freq)`.
    pub fn lookup(&self, slot: u32) -> (i32, u32, u32) {
        // Largest i with cdf[i] <= slot.
        let i = self.cdf.partition_point(|&c| c <= slot) - 1;
        (self.k_min + i as i32, self.cdf[i], self.cdf[i + 1] - self.cdf[i])
    }

    /// Most probable symbol (lowest on ties).
    pub fn mode(&self) -> i32 {
        let mut best = (0, 0);
        for i in 0..self.cdf.len() - 1 {
            let f = self.cdf[i + 1] - self.cdf[i];
            if f > best.1 {
                best = (i, f);
            }
        }
        self.k_min + best.0 as i32
    }

    /// Ideal code length of `k` under the quantized table, in bits.
    pub fn cost_bits(&self, k: i32) -> Result<f64> {
        let (_, f) = self.interval(k)?;
        Ok(PRECISION_BITS as f64 - libm::log2(f as f64))
    }
}
