use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use crate::error::{Error, Result};

/// One recorded optimization step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub step: u64,
    /// Temperature in effect, for annealed methods.
    pub tau: Option<f64>,
    /// Relaxed objective `L̃_λ` (a one-sample estimate, except for the
    /// final row which averages several samples).
    pub relaxed_loss: f64,
    /// True objective `L_λ` at the rounded iterate.
    pub true_rd: f64,
    pub rate_bits: f64,
    pub distortion: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    pub rows: Vec<TraceRow>,
}

impl Trace {
    pub const CSV_HEADER: &'static str = "step,tau,relaxed_loss,true_rd,rate_bits,distortion";

    pub fn push(&mut self, row: TraceRow) {
        self.rows.push(row);
    }

    pub fn last(&self) -> Option<&TraceRow> {
        self.rows.last()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let tau = r.tau.map(|t| alloc::format!("{t}")).unwrap_or_default();
            let _ = writeln!(out, "{},{},{},{},{},{}", r.step, tau, r.relaxed_loss, r.true_rd, r.rate_bits, r.distortion);
        }
        out
    }
}

/// Gap `L_λ − L̃_λ` per recorded step.
#[derive(Debug, Clone, PartialEq)]
pub struct GapSeries {
    pub steps: Vec<u64>,
    pub gap: Vec<f64>,
    /// Gap at the last recorded step.
    pub final_gap: f64,
}

pub fn discretization_gap(trace: &Trace) -> Result<GapSeries> {
    let last = trace.last().ok_or_else(|| Error::InvalidArgument("empty trace".into()))?;
    Ok(GapSeries {
        steps: trace.rows.iter().map(|r| r.step).collect(),
        gap: trace.rows.iter().map(|r| r.true_rd - r.relaxed_loss).collect(),
        final_gap: last.true_rd - last.relaxed_loss,
    })
}
