//! Summaries of a rate-distortion sweep: per-method curves, paired
//! comparisons against direct rounding on the same model, and BD rates.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sgac_core::bench::{bd_rate, curve_of, mean_curves, Ablation, CurvePoint, GapPoint, RDPoint, BASELINE};

use crate::error::{read, Error, Result};

/// Direct rounding on a bits-back model.
pub const BASELINE_BITS_BACK: &str = "round-bb";

/// Baseline a method is compared against: direct rounding on the same
/// checkpoint.
pub fn paired_baseline(method: &str) -> &'static str {
    match Ablation::parse(method) {
        Some(a) if a.bits_back() => BASELINE_BITS_BACK,
        _ => BASELINE,
    }
}

pub fn is_baseline(method: &str) -> bool {
    method == BASELINE || method == BASELINE_BITS_BACK
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub image_id: usize,
    pub method: String,
    pub lambda: f64,
    pub bpp: f64,
    pub psnr: f64,
    pub loss: f64,
}

impl From<&Row> for RDPoint {
    fn from(r: &Row) -> Self {
        RDPoint { image_id: r.image_id, method: r.method.clone(), lambda: r.lambda, bpp: r.bpp, psnr: r.psnr, loss: r.loss }
    }
}

pub fn read_points(path: &Path) -> Result<Vec<RDPoint>> {
    let bytes = read(path)?;
    let mut rdr = csv::Reader::from_reader(bytes.as_slice());
    rdr.deserialize::<Row>()
        .map(|r| r.map(|r| RDPoint::from(&r)).map_err(|e| Error::format(path, e.to_string())))
        .collect()
}

#[derive(Deserialize)]
struct GapRow {
    method: String,
    lambda: f64,
    step: u64,
    tau: Option<f64>,
    true_rd: f64,
    relaxed_loss: f64,
    gap: f64,
    images: usize,
}

pub fn read_gaps(path: &Path) -> Result<Vec<GapPoint>> {
    let bytes = read(path)?;
    let mut rdr = csv::Reader::from_reader(bytes.as_slice());
    rdr.deserialize::<GapRow>()
        .map(|r| {
            let r = r.map_err(|e| Error::format(path, e.to_string()))?;
            Ok(GapPoint {
                method: r.method,
                lambda: r.lambda,
                step: r.step,
                tau: r.tau,
                true_rd: r.true_rd,
                relaxed_loss: r.relaxed_loss,
                gap: r.gap,
                images: r.images,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Curve {
    pub method: String,
    pub lambda: f64,
    pub bpp: f64,
    pub psnr: f64,
    pub loss: f64,
    pub images: usize,
}

/// One method at one λ against its paired baseline.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Paired {
    pub method: String,
    pub baseline: String,
    pub lambda: f64,
    pub images: usize,
    /// Images whose true rate-distortion loss beats the baseline's.
    pub improved: usize,
    pub loss: f64,
    pub baseline_loss: f64,
    pub bpp: f64,
    pub baseline_bpp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BdRow {
    pub method: String,
    pub baseline: String,
    /// Percent; negative is a saving. `None` when the curves do not allow
    /// it (`note` says why).
    pub bd_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Final mean discretization gap of an iterative method.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FinalGap {
    pub method: String,
    pub lambda: f64,
    pub gap: f64,
    /// `gap / true_rd`.
    pub relative: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct Report {
    pub curves: Vec<Curve>,
    pub paired: Vec<Paired>,
    pub bd: Vec<BdRow>,
    pub final_gaps: Vec<FinalGap>,
    /// Checkpoints that could not be loaded.
    pub missing: Vec<String>,
}

pub fn build(points: &[RDPoint], gaps: &[GapPoint]) -> Report {
    let curves = mean_curves(points);
    let mut methods: Vec<&str> = Vec::new();
    for c in &curves {
        if !is_baseline(&c.method) && !methods.contains(&c.method.as_str()) {
            methods.push(&c.method);
        }
    }
    let mut paired = Vec::new();
    for c in curves.iter().filter(|c| !is_baseline(&c.method)) {
        let base = paired_baseline(&c.method);
        let mut p = Paired {
            method: c.method.clone(),
            baseline: base.into(),
            lambda: c.lambda,
            images: 0,
            improved: 0,
            loss: 0.0,
            baseline_loss: 0.0,
            bpp: 0.0,
            baseline_bpp: 0.0,
        };
        for r in points.iter().filter(|r| r.method == c.method && r.lambda == c.lambda) {
            let Some(b) = points.iter().find(|b| b.method == base && b.lambda == r.lambda && b.image_id == r.image_id)
            else {
                continue;
            };
            p.images += 1;
            p.improved += (r.loss < b.loss) as usize;
            p.loss += r.loss;
            p.baseline_loss += b.loss;
            p.bpp += r.bpp;
            p.baseline_bpp += b.bpp;
        }
        if p.images > 0 {
            let n = p.images as f64;
            p.loss /= n;
            p.baseline_loss /= n;
            p.bpp /= n;
            p.baseline_bpp /= n;
            paired.push(p);
        }
    }
    let bd = methods
        .iter()
        .map(|m| {
            let base = paired_baseline(m);
            let (bd_rate, note) = match bd_rate(&curve_of(&curves, base), &curve_of(&curves, m)) {
                Ok(v) => (Some(v), None),
                Err(e) => (None, Some(e.to_string())),
            };
            BdRow { method: m.to_string(), baseline: base.into(), bd_rate, note }
        })
        .collect();
    let mut final_gaps: Vec<FinalGap> = Vec::new();
    for g in gaps {
        let row = FinalGap { method: g.method.clone(), lambda: g.lambda, gap: g.gap, relative: g.gap / g.true_rd };
        // Rows of one group are in step order; keep the last.
        match final_gaps.iter_mut().find(|f| f.method == g.method && f.lambda == g.lambda) {
            Some(f) => *f = row,
            None => final_gaps.push(row),
        }
    }
    let curves = curves.iter().map(curve).collect();
    Report { curves, paired, bd, final_gaps, missing: Vec::new() }
}

fn curve(c: &CurvePoint) -> Curve {
    Curve { method: c.method.clone(), lambda: c.lambda, bpp: c.bpp, psnr: c.psnr, loss: c.loss, images: c.images }
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_markdown(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "## Rate-distortion curves\n");
        let _ = writeln!(s, "| method | lambda | bpp | PSNR (dB) | R + lambda D | images |");
        let _ = writeln!(s, "|---|---|---|---|---|---|");
        for c in &self.curves {
            let _ = writeln!(s, "| {} | {} | {:.4} | {:.3} | {:.2} | {} |", label(&c.method), c.lambda, c.bpp, c.psnr, c.loss, c.images);
        }
        let _ = writeln!(s, "\n## Against direct rounding on the same model\n");
        let _ = writeln!(s, "| method | lambda | improved | mean loss | baseline loss | bpp | baseline bpp |");
        let _ = writeln!(s, "|---|---|---|---|---|---|---|");
        for p in &self.paired {
            let _ = writeln!(
                s,
                "| {} | {} | {}/{} | {:.2} | {:.2} | {:.4} | {:.4} |",
                label(&p.method),
                p.lambda,
                p.improved,
                p.images,
                p.loss,
                p.baseline_loss,
                p.bpp,
                p.baseline_bpp
            );
        }
        let _ = writeln!(s, "\n## BD rate against direct rounding\n");
        let _ = writeln!(s, "| method | BD rate (%) |");
        let _ = writeln!(s, "|---|---|");
        for b in &self.bd {
            let v = b.bd_rate.map(|v| format!("{v:.2}")).unwrap_or_else(|| format!("n/a ({})", b.note.as_deref().unwrap_or("")));
            let _ = writeln!(s, "| {} | {} |", label(&b.method), v);
        }
        if !self.final_gaps.is_empty() {
            let _ = writeln!(s, "\n## Final discretization gap\n");
            let _ = writeln!(s, "| method | lambda | gap | relative |");
            let _ = writeln!(s, "|---|---|---|---|");
            for g in &self.final_gaps {
                let _ = writeln!(s, "| {} | {} | {:.3} | {:.5} |", label(&g.method), g.lambda, g.gap, g.relative);
            }
        }
        if !self.missing.is_empty() {
            let _ = writeln!(s, "\nMissing checkpoints: {}", self.missing.join(", "));
        }
        s
    }
}

fn label(method: &str) -> String {
    match Ablation::parse(method) {
        Some(a) => format!("{} {}", a.id(), a.description()),
        None => method.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(image_id: usize, method: &str, lambda: f64, bpp: f64, psnr: f64, loss: f64) -> RDPoint {
        RDPoint { image_id, method: method.into(), lambda, bpp, psnr, loss }
    }

    #[test]
    fn paired_counts_and_bd() {
        let mut pts = Vec::new();
        for (k, lambda) in [1.0, 2.0, 4.0, 8.0].into_iter().enumerate() {
            let q = 25.0 + 3.0 * k as f64;
            for i in 0..2 {
                pts.push(pt(i, BASELINE, lambda, 0.5 * (k + 1) as f64, q, 10.0));
                pts.push(pt(i, "M1", lambda, 0.45 * (k + 1) as f64, q, if i == 0 { 9.0 } else { 11.0 }));
            }
        }
        let r = build(&pts, &[]);
        assert_eq!(r.bd.len(), 1);
        assert!((r.bd[0].bd_rate.unwrap() + 10.0).abs() < 1e-6);
        assert_eq!(r.paired.len(), 4);
        assert!(r.paired.iter().all(|p| p.improved == 1 && p.images == 2 && p.baseline == BASELINE));
        let md = r.to_markdown();
        assert!(md.contains("M1 SGA"));
        let json: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(json["bd"][0]["method"], "M1");
    }

    #[test]
    fn bits_back_methods_pair_with_their_own_baseline() {
        let pts = vec![pt(0, BASELINE_BITS_BACK, 1.0, 0.5, 30.0, 10.0), pt(0, "A6", 1.0, 0.6, 30.0, 12.0)];
        let r = build(&pts, &[]);
        assert_eq!(r.paired[0].baseline, BASELINE_BITS_BACK);
        assert_eq!(r.paired[0].improved, 0);
        assert!(r.bd[0].bd_rate.is_none() && r.bd[0].note.is_some());
    }

    #[test]
    fn keeps_last_gap_row() {
        let g = |step, gap| GapPoint {
            method: "M1".into(),
            lambda: 1.0,
            step,
            tau: Some(0.5),
            true_rd: 100.0,
            relaxed_loss: 100.0 - gap,
            gap,
            images: 1,
        };
        let r = build(&[], &[g(0, 5.0), g(10, 0.5)]);
        assert_eq!(r.final_gaps.len(), 1);
        assert_eq!(r.final_gaps[0].relative, 0.005);
    }
}
