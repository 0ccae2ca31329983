//! PSNR, rate-distortion sweeps and Bjøntegaard-delta rate.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::coder::{bitsback_encode, encode_standard, BbviConfig, BitsBackConfig, JointConfig};
use crate::error::{shape_err, Error, Result};
use crate::model::ModelParams;
use crate::numcore::Tensor;
use crate::relaxations::{InferenceConfig, Method, Trace};

/// Reported for identical images.
pub const PSNR_CAP: f64 = 100.0;

/// `10·log₁₀(1/MSE)` for images in `[0, 1]`, capped at [`PSNR_CAP`].
pub fn psnr(x: &Tensor, x_hat: &Tensor) -> Result<f64> {
    if x.shape() != x_hat.shape() {
        return Err(shape_err("psnr", format!("{:?} vs {:?}", x.shape(), x_hat.shape())));
    }
    if x.is_empty() {
        return Err(shape_err("psnr", "empty image"));
    }
    if x.data().iter().chain(x_hat.data()).any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::InvalidArgument("psnr expects values in [0, 1]".into()));
    }
    let mse = x.squared_distance(x_hat)? / x.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((-10.0 * libm::log10(mse)).min(PSNR_CAP))
}

/// One coded image.
#[derive(Debug, Clone, PartialEq)]
pub struct RDPoint {
    pub image_id: usize,
    pub method: String,
    pub lambda: f64,
    /// Payload bits per pixel (net of refunded side information in
    /// bits-back mode).
    pub bpp: f64,
    pub psnr: f64,
    /// True rate-distortion loss `R + λ·D` of the coded latents, with `R`
    /// the model's rate estimate in bits.
    pub loss: f64,
}

/// How a sweep codes each image.
#[derive(Debug, Clone, PartialEq)]
pub enum SweepCoder {
    /// Two-part coding; `None` is direct rounding of the amortized means.
    Standard(Option<InferenceConfig>),
    BitsBack(BitsBackConfig),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepMethod {
    pub name: String,
    pub coder: SweepCoder,
}

/// Side information used by bits-back sweeps; long enough that the
/// hyperlatent decode never runs out.
pub const SWEEP_SIDE_INFO_BYTES: usize = 4096;

/// Codes every image with every method under every `(λ, model)` pair.
/// Rows are ordered by λ, then method, then image.
pub fn rd_sweep(models: &[(f64, &ModelParams)], corpus: &[Tensor], methods: &[SweepMethod]) -> Result<Vec<RDPoint>> {
    Ok(rd_sweep_traced(models, corpus, methods)?.into_iter().map(|(p, _)| p).collect())
}

/// [`rd_sweep`], also returning the optimization trace of every iterative
/// standard-path run.
pub fn rd_sweep_traced(
    models: &[(f64, &ModelParams)],
    corpus: &[Tensor],
    methods: &[SweepMethod],
) -> Result<Vec<(RDPoint, Option<Trace>)>> {
    let mut out = Vec::with_capacity(models.len() * methods.len() * corpus.len());
    for (li, &(lambda, params)) in models.iter().enumerate() {
        for method in methods {
            for (image_id, x) in corpus.iter().enumerate() {
                out.push(code_one(params, x, image_id, lambda, li as u8, method)?);
            }
        }
    }
    Ok(out)
}

fn code_one(
    params: &ModelParams,
    x: &Tensor,
    image_id: usize,
    lambda: f64,
    li: u8,
    m: &SweepMethod,
) -> Result<(RDPoint, Option<Trace>)> {
    let pixels = x.len() as f64 / params.config.image_channels as f64;
    let (bits, recon, loss, trace) = match &m.coder {
        SweepCoder::Standard(search) => {
            let enc = encode_standard(params, x, search.as_ref(), li)?;
            (enc.payload_bits() as f64, enc.reconstruction, enc.rd.total, enc.outcome.map(|o| o.trace))
        }
        SweepCoder::BitsBack(cfg) => {
            let mut rng = ChaCha8Rng::seed_from_u64(image_id as u64);
            let xi: Vec<u8> = (0..SWEEP_SIDE_INFO_BYTES).map(|_| rng.random()).collect();
            let enc = bitsback_encode(params, x, &xi, cfg, li)?;
            let d = x.squared_distance(&enc.reconstruction)?;
            (enc.net_rate_bits, enc.reconstruction, enc.net_rate_bits + params.config.lambda * d, None)
        }
    };
    let point = RDPoint { image_id, method: m.name.clone(), lambda, bpp: bits / pixels, psnr: psnr(x, &recon)?, loss };
    Ok((point, trace))
}

/// Mean discretization gap of one `(method, λ)` pair at a recorded step.
#[derive(Debug, Clone, PartialEq)]
pub struct GapPoint {
    pub method: String,
    pub lambda: f64,
    pub step: u64,
    pub tau: Option<f64>,
    pub true_rd: f64,
    pub relaxed_loss: f64,
    /// `true_rd − relaxed_loss`.
    pub gap: f64,
    pub images: usize,
}

/// Averages traces over images, per method and λ, step by step. Traces of
/// one group must record the same steps.
pub fn mean_gap_curves(traced: &[(RDPoint, Option<Trace>)]) -> Result<Vec<GapPoint>> {
    let mut out: Vec<GapPoint> = Vec::new();
    let mut groups: Vec<(String, f64, usize, usize)> = Vec::new();
    for (p, trace) in traced {
        let Some(trace) = trace else { continue };
        let start = match groups.iter_mut().find(|g| g.0 == p.method && g.1 == p.lambda) {
            Some(g) => {
                if g.3 != trace.rows.len() {
                    return Err(Error::InvalidArgument(format!("traces of {} have different lengths", p.method)));
                }
                g.2
            }
            None => {
                groups.push((p.method.clone(), p.lambda, out.len(), trace.rows.len()));
                for r in &trace.rows {
                    out.push(GapPoint {
                        method: p.method.clone(),
                        lambda: p.lambda,
                        step: r.step,
                        tau: r.tau,
                        true_rd: 0.0,
                        relaxed_loss: 0.0,
                        gap: 0.0,
                        images: 0,
                    });
                }
                out.len() - trace.rows.len()
            }
        };
        for (g, r) in out[start..start + trace.rows.len()].iter_mut().zip(&trace.rows) {
            g.true_rd += r.true_rd;
            g.relaxed_loss += r.relaxed_loss;
            g.images += 1;
        }
    }
    for g in &mut out {
        let n = g.images as f64;
        g.true_rd /= n;
        g.relaxed_loss /= n;
        g.gap = g.true_rd - g.relaxed_loss;
    }
    Ok(out)
}

pub const GAP_CSV_HEADER: &str = "method,lambda,step,tau,true_rd,relaxed_loss,gap,images";

pub fn gap_curves_csv(points: &[GapPoint]) -> String {
    let mut s = String::from(GAP_CSV_HEADER);
    s.push('\n');
    for g in points {
        let tau = g.tau.map(|t| format!("{t}")).unwrap_or_default();
        let _ = writeln!(s, "{},{},{},{},{},{},{},{}", g.method, g.lambda, g.step, tau, g.true_rd, g.relaxed_loss, g.gap, g.images);
    }
    s
}

/// Name of the direct-rounding baseline in sweeps and reports.
pub const BASELINE: &str = "round";

pub fn baseline_method() -> SweepMethod {
    SweepMethod { name: BASELINE.into(), coder: SweepCoder::Standard(None) }
}

/// The compared methods: two proposed variants and six ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Ablation {
    /// Stochastic Gumbel annealing.
    M1,
    /// Stochastic Gumbel annealing with bits-back coding.
    M2,
    /// MAP: optimize the continuous means, then round.
    A1,
    /// Straight-through rounding.
    A2,
    /// Uniform noise.
    A3,
    /// Deterministic annealing.
    A4,
    /// Bits-back without optimizing `ŷ`.
    A5,
    /// Bits-back without any compression-time optimization.
    A6,
}

impl Ablation {
    pub const ALL: [Self; 8] = [Self::M1, Self::M2, Self::A1, Self::A2, Self::A3, Self::A4, Self::A5, Self::A6];

    pub fn id(self) -> &'static str {
        match self {
            Self::M1 => "M1",
            Self::M2 => "M2",
            Self::A1 => "A1",
            Self::A2 => "A2",
            Self::A3 => "A3",
            Self::A4 => "A4",
            Self::A5 => "A5",
            Self::A6 => "A6",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.id().eq_ignore_ascii_case(s))
    }

    pub fn description(self) -> &'static str {
        match self {
            Self::M1 => "SGA",
            Self::M2 => "SGA + bits-back",
            Self::A1 => "MAP",
            Self::A2 => "straight-through",
            Self::A3 => "uniform noise",
            Self::A4 => "deterministic annealing",
            Self::A5 => "bits-back, amortized y",
            Self::A6 => "bits-back, no inference",
        }
    }

    /// Needs a model trained for bits-back coding.
    pub fn bits_back(self) -> bool {
        matches!(self, Self::M2 | Self::A5 | Self::A6)
    }

    /// Sweep entry with every iterative stage run for `steps` iterations.
    pub fn sweep_method(self, steps: u64) -> SweepMethod {
        let standard = |m: Method| SweepCoder::Standard(Some(InferenceConfig::new(m).with_steps(steps)));
        let bbvi = BbviConfig::with_steps(steps);
        let coder = match self {
            Self::M1 => standard(Method::Sga),
            Self::A1 => standard(Method::Map),
            Self::A2 => standard(Method::Ste),
            Self::A3 => standard(Method::UniformNoise),
            Self::A4 => standard(Method::DetAnneal),
            Self::M2 => SweepCoder::BitsBack(BitsBackConfig {
                joint: Some(JointConfig { steps, ..JointConfig::default() }),
                bbvi,
            }),
            Self::A5 => SweepCoder::BitsBack(BitsBackConfig { joint: None, bbvi }),
            Self::A6 => SweepCoder::BitsBack(BitsBackConfig::amortized()),
        };
        SweepMethod { name: self.id().into(), coder }
    }
}

/// Per-`(method, λ)` means of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub method: String,
    pub lambda: f64,
    pub bpp: f64,
    pub psnr: f64,
    pub loss: f64,
    pub images: usize,
}

/// Averages rows by method (in order of first appearance) and λ
/// (ascending).
pub fn mean_curves(points: &[RDPoint]) -> Vec<CurvePoint> {
    let mut out: Vec<CurvePoint> = Vec::new();
    for p in points {
        match out.iter_mut().find(|c| c.method == p.method && c.lambda == p.lambda) {
            Some(c) => {
                c.bpp += p.bpp;
                c.psnr += p.psnr;
                c.loss += p.loss;
                c.images += 1;
            }
            None => out.push(CurvePoint {
                method: p.method.clone(),
                lambda: p.lambda,
                bpp: p.bpp,
                psnr: p.psnr,
                loss: p.loss,
                images: 1,
            }),
        }
    }
    for c in &mut out {
        let n = c.images as f64;
        c.bpp /= n;
        c.psnr /= n;
        c.loss /= n;
    }
    let order: Vec<String> = out.iter().fold(Vec::new(), |mut v, c| {
        if !v.contains(&c.method) {
            v.push(c.method.clone());
        }
        v
    });
    out.sort_by(|a, b| {
        let ia = order.iter().position(|m| *m == a.method);
        let ib = order.iter().position(|m| *m == b.method);
        ia.cmp(&ib).then(a.lambda.total_cmp(&b.lambda))
    });
    out
}

/// `(bpp, psnr)` pairs of one method's curve.
pub fn curve_of(curves: &[CurvePoint], method: &str) -> Vec<(f64, f64)> {
    curves.iter().filter(|c| c.method == method).map(|c| (c.bpp, c.psnr)).collect()
}

pub const RD_CSV_HEADER: &str = "image_id,method,lambda,bpp,psnr,loss";
pub const CURVE_CSV_HEADER: &str = "method,lambda,bpp,psnr,loss,images";

pub fn rd_points_csv(points: &[RDPoint]) -> String {
    let mut s = String::from(RD_CSV_HEADER);
    s.push('\n');
    for p in points {
        let _ = writeln!(s, "{},{},{},{},{},{}", p.image_id, p.method, p.lambda, p.bpp, p.psnr, p.loss);
    }
    s
}

pub fn curves_csv(curves: &[CurvePoint]) -> String {
    let mut s = String::from(CURVE_CSV_HEADER);
    s.push('\n');
    for c in curves {
        let _ = writeln!(s, "{},{},{},{},{},{}", c.method, c.lambda, c.bpp, c.psnr, c.loss, c.images);
    }
    s
}

/// Bjøntegaard-delta rate of `test` against `reference`, in percent;
/// negative means `test` needs fewer bits at equal PSNR.
///
/// Each curve is a list of `(bpp, psnr)` points. `ln(bpp)` is fitted as a
/// cubic in PSNR by least squares and the fits are integrated over the
/// shared PSNR range.
pub fn bd_rate(reference: &[(f64, f64)], test: &[(f64, f64)]) -> Result<f64> {
    for (name, c) in [("reference", reference), ("test", test)] {
        if c.len() < 4 {
            return Err(Error::InvalidArgument(format!("{name} curve has {} points, need at least 4", c.len())));
        }
        if c.iter().any(|&(r, q)| !(r > 0.0 && r.is_finite() && q.is_finite())) {
            return Err(Error::InvalidArgument(format!("{name} curve needs positive finite rates and finite PSNR")));
        }
    }
    let range = |c: &[(f64, f64)]| c.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.1), hi.max(p.1)));
    let (rlo, rhi) = range(reference);
    let (tlo, thi) = range(test);
    let (lo, hi) = (rlo.max(tlo), rhi.min(thi));
    if !(hi > lo) {
        return Err(Error::InvalidArgument(format!("no PSNR overlap: [{rlo}, {rhi}] vs [{tlo}, {thi}]")));
    }
    // Fit in a centred, scaled variable to keep the normal equations sane.
    let (mid, half) = (0.5 * (lo + hi), 0.5 * (hi - lo));
    let avg = |c: &[(f64, f64)]| -> Result<f64> {
        let pts: Vec<(f64, f64)> = c.iter().map(|&(r, q)| ((q - mid) / half, libm::log(r))).collect();
        let p = cubic_fit(&pts)?;
        // Mean of the cubic over t ∈ [−1, 1].
        Ok(p[0] + p[2] / 3.0)
    };
    let diff = avg(test)? - avg(reference)?;
    Ok((libm::exp(diff) - 1.0) * 100.0)
}

/// Least-squares `a + b·t + c·t² + d·t³`.
fn cubic_fit(pts: &[(f64, f64)]) -> Result<[f64; 4]> {
    let mut a = [[0.0f64; 5]; 4];
    for &(t, v) in pts {
        let pw = [1.0, t, t * t, t * t * t];
        for i in 0..4 {
            for j in 0..4 {
                a[i][j] += pw[i] * pw[j];
            }
            a[i][4] += pw[i] * v;
        }
    }
    for col in 0..4 {
        let piv = (col..4).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).expect("rows");
        if a[piv][col].abs() < 1e-12 {
            return Err(Error::InvalidArgument("BD-rate fit is degenerate (repeated PSNR values)".into()));
        }
        a.swap(col, piv);
        for r in 0..4 {
            if r != col {
                let f = a[r][col] / a[col][col];
                for k in col..5 {
                    a[r][k] -= f * a[col][k];
                }
            }
        }
    }
    Ok(core::array::from_fn(|i| a[i][4] / a[i][i]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::relaxations::Method;
    use alloc::vec;
    use proptest::prelude::*;

    fn reference() -> Vec<(f64, f64)> {
        vec![(0.2, 24.1), (0.45, 27.3), (0.8, 30.2), (1.4, 33.0), (2.1, 35.4)]
    }

    #[test]
    fn psnr_examples() {
        let x = Tensor::from_fn([1, 1, 4, 4], |i| 0.05 * i as f64);
        assert_eq!(psnr(&x, &x).unwrap(), PSNR_CAP);
        let y = Tensor::from_fn([1, 1, 4, 4], |i| 0.05 * i as f64 + if i % 2 == 0 { 0.1 } else { -0.1 });
        let y = y.map(|v| v.clamp(0.0, 1.0));
        let x2 = Tensor::full([1, 1, 4, 4], 0.5);
        assert!((psnr(&x2, &Tensor::full([1, 1, 4, 4], 0.6)).unwrap() - 20.0).abs() < 1e-9);
        let e = libm::sqrt(0.001);
        assert!((psnr(&x2, &Tensor::full([1, 1, 4, 4], 0.5 + e)).unwrap() - 30.0).abs() < 1e-9);
        assert!(psnr(&x, &y).unwrap().is_finite());
        assert!(psnr(&x, &Tensor::zeros([1, 1, 4, 5])).is_err());
    }

    #[test]
    fn psnr_decreases_with_noise() {
        let x = Tensor::from_fn([1, 1, 8, 8], |i| 0.3 + 0.005 * i as f64);
        let mut last = f64::INFINITY;
        for k in 1..20 {
            let a = 0.01 * k as f64;
            let y = Tensor::from_fn([1, 1, 8, 8], |i| x.data()[i] + if (i * 7) % 3 == 0 { a } else { -a });
            let p = psnr(&x, &y).unwrap();
            assert!(p < last);
            last = p;
        }
    }

    #[test]
    fn bd_rate_unit_cases() {
        let r = reference();
        assert!(bd_rate(&r, &r).unwrap().abs() < 1e-9);
        let scaled = |k: f64| r.iter().map(|&(b, q)| (b * k, q)).collect::<Vec<_>>();
        assert!((bd_rate(&r, &scaled(0.9)).unwrap() + 10.0).abs() < 1e-6);
        assert!((bd_rate(&r, &scaled(1.25)).unwrap() - 25.0).abs() < 1e-6);
    }

    #[test]
    fn bd_rate_matches_independent_oracle() {
        // Frozen from an independent polynomial-fit implementation.
        let test = vec![(0.18, 24.6), (0.40, 27.5), (0.77, 30.9), (1.3, 33.4), (2.0, 36.0)];
        let got = bd_rate(&reference(), &test).unwrap();
        assert!((got - -15.631104296118226).abs() < 1e-6, "{got}");
    }

    #[test]
    fn bd_rate_errors() {
        let r = reference();
        assert!(bd_rate(&r[..3], &r).is_err());
        let far: Vec<(f64, f64)> = r.iter().map(|&(b, q)| (b, q + 50.0)).collect();
        assert!(bd_rate(&r, &far).is_err());
        let bad: Vec<(f64, f64)> = r.iter().map(|&(_, q)| (0.0, q)).collect();
        assert!(bd_rate(&r, &bad).is_err());
    }

    proptest! {
        #[test]
        fn bd_rate_uniform_shift_antisymmetry(k in 0.3f64..3.0) {
            let a = reference();
            let b: Vec<(f64, f64)> = a.iter().map(|&(r, q)| (r * k, q)).collect();
            let ab = bd_rate(&a, &b).unwrap() / 100.0;
            let ba = bd_rate(&b, &a).unwrap() / 100.0;
            prop_assert!((ab - (k - 1.0)).abs() < 1e-9);
            prop_assert!((ab + ba / (1.0 + ba)).abs() < 1e-9);
        }
    }

    #[test]
    fn sweep_rows_and_curves() {
        let m = ModelParams::init(ModelConfig::default(), 1).unwrap();
        let corpus: Vec<Tensor> =
            (0..2).map(|s| Tensor::from_fn([1, 1, 16, 16], |i| 0.5 + 0.2 * libm::sin((i + s) as f64))).collect();
        let methods = vec![
            SweepMethod { name: "round".into(), coder: SweepCoder::Standard(None) },
            SweepMethod {
                name: "sga".into(),
                coder: SweepCoder::Standard(Some(InferenceConfig::new(Method::Sga).with_steps(5))),
            },
        ];
        let rows = rd_sweep(&[(0.01, &m)], &corpus, &methods).unwrap();
        assert_eq!(rows.len(), 4);
        let direct = encode_standard(&m, &corpus[1], None, 0).unwrap();
        assert_eq!(rows[1].bpp, direct.payload_bits() as f64 / 256.0);
        assert_eq!(rows, rd_sweep(&[(0.01, &m)], &corpus, &methods).unwrap());
        let curves = mean_curves(&rows);
        assert_eq!(curves.len(), 2);
        assert_eq!(curves[0].method, "round");
        assert_eq!(curves[0].images, 2);
        assert!(rd_sweep(&[(0.01, &m)], &[], &methods).unwrap().is_empty());
        let csv = rd_points_csv(&rows);
        assert_eq!(csv.lines().count(), 5);
        assert!(csv.starts_with(RD_CSV_HEADER));
        assert_eq!(curves_csv(&curves).lines().count(), 3);
    }

    #[test]
    fn gap_curves_average_traces() {
        let m = ModelParams::init(ModelConfig::default(), 1).unwrap();
        let corpus: Vec<Tensor> =
            (0..3).map(|s| Tensor::from_fn([1, 1, 16, 16], |i| 0.5 + 0.2 * libm::cos((i * (s + 1)) as f64))).collect();
        let mut sga = InferenceConfig::new(Method::Sga).with_steps(20);
        sga.trace_every = 5;
        let methods = vec![baseline_method(), SweepMethod { name: "sga".into(), coder: SweepCoder::Standard(Some(sga)) }];
        let traced = rd_sweep_traced(&[(0.01, &m)], &corpus, &methods).unwrap();
        assert!(traced[..3].iter().all(|(_, t)| t.is_none()));
        let curve = mean_gap_curves(&traced).unwrap();
        let traces: Vec<&Trace> = traced[3..].iter().map(|(_, t)| t.as_ref().unwrap()).collect();
        assert_eq!(curve.len(), traces[0].rows.len());
        for (k, g) in curve.iter().enumerate() {
            assert_eq!(g.images, 3);
            let t = traces.iter().map(|tr| tr.rows[k].true_rd).sum::<f64>() / 3.0;
            let r = traces.iter().map(|tr| tr.rows[k].relaxed_loss).sum::<f64>() / 3.0;
            assert!((g.true_rd - t).abs() < 1e-9 && (g.gap - (t - r)).abs() < 1e-9);
        }
        assert_eq!(gap_curves_csv(&curve).lines().count(), curve.len() + 1);
    }

    #[test]
    fn ablation_catalogue() {
        for a in Ablation::ALL {
            assert_eq!(Ablation::parse(a.id()), Some(a));
            assert_eq!(Ablation::parse(&a.id().to_lowercase()), Some(a));
            let sm = a.sweep_method(7);
            assert_eq!(sm.name, a.id());
            assert_eq!(matches!(sm.coder, SweepCoder::BitsBack(_)), a.bits_back());
        }
        assert_eq!(Ablation::parse("A7"), None);
        match Ablation::A6.sweep_method(7).coder {
            SweepCoder::BitsBack(c) => assert_eq!(c, BitsBackConfig::amortized()),
            _ => unreachable!(),
        }
        match Ablation::A5.sweep_method(7).coder {
            SweepCoder::BitsBack(c) => assert!(c.joint.is_none() && c.bbvi.steps == 7),
            _ => unreachable!(),
        }
    }
}
