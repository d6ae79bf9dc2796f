//! Report documents: the JSON bound report of one run and the flat CSV row
//! used for convergence tables.

use std::collections::BTreeMap;

use majorant_core::bounds::BoundEntry;
use majorant_core::constants::ConstantSet;
use majorant_core::fields::MeasureTerms;
use majorant_core::pipeline::{EquivalenceDiagnostic, Settings};
use majorant_core::residuals::CorrectionReport;
use serde::{Deserialize, Serialize};

/// Version tag of the JSON layout.
pub const REPORT_SCHEMA: &str = "bound-report/1";

/// A bound, or the reason it could not be evaluated.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum BoundStatus {
    Ok(Box<BoundEntry>),
    Unavailable { reason: String },
}

impl BoundStatus {
    pub fn value(&self) -> Option<f64> {
        match self {
            BoundStatus::Ok(e) => Some(e.value),
            BoundStatus::Unavailable { .. } => None,
        }
    }

    pub fn entry(&self) -> Option<&BoundEntry> {
        match self {
            BoundStatus::Ok(e) => Some(e),
            BoundStatus::Unavailable { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum EquivalenceStatus {
    Ok(EquivalenceDiagnostic),
    Unavailable { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeshSummary {
    pub dim: usize,
    pub resolution: usize,
    pub time_steps: usize,
    /// Largest cell diameter.
    pub h: f64,
    /// Largest time step.
    pub dt: f64,
    pub cells: usize,
    pub faces: usize,
    pub robin_faces: usize,
    pub strong_cells: usize,
    pub weak_cells: usize,
    pub threshold: f64,
}

/// Bound keys in report order.
pub const BOUND_KEYS: [&str; 5] = ["majorant_I", "majorant_I_N", "majorant_II_N", "majorant_optimized", "minorant"];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub schema: &'static str,
    pub id: String,
    pub problem: String,
    pub level: usize,
    pub settings: Settings,
    pub mesh: MeshSummary,
    pub constants: ConstantSet,
    /// μ per cell.
    pub mu: Vec<f64>,
    pub correction: Option<CorrectionReport>,
    /// Keyed by `BOUND_KEYS`.
    pub bounds: BTreeMap<String, BoundStatus>,
    /// Majorant after each accepted optimizer step.
    pub optimizer_history: Vec<f64>,
    /// Error measure under the weights of each bound (known solution only).
    pub error_measures: Option<BTreeMap<String, MeasureTerms>>,
    /// √(bound / error measure) per bound (known solution only).
    pub efficiency: Option<BTreeMap<String, f64>>,
    /// Minorant ≤ decomposed majorant (same measure weights up to κ₂).
    pub sandwich: bool,
    pub equivalence: EquivalenceStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_time_s: Option<f64>,
}

/// One CSV line. Field order is the column order.
#[allow(non_snake_case)]
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub id: String,
    pub level: usize,
    pub resolution: usize,
    pub time_steps: usize,
    pub h: f64,
    pub dt: f64,
    pub error_measure: Option<f64>,
    pub error_measure_I: Option<f64>,
    pub error_measure_II_N: Option<f64>,
    pub majorant_I: Option<f64>,
    pub majorant_I_N: Option<f64>,
    pub majorant_II_N: Option<f64>,
    pub majorant_optimized: Option<f64>,
    pub minorant: Option<f64>,
    pub minorant_measure: Option<f64>,
    pub I_maj_I: Option<f64>,
    pub I_maj_I_N: Option<f64>,
    pub I_maj_II_N: Option<f64>,
    pub I_maj_optimized: Option<f64>,
    pub I_min: Option<f64>,
    pub C_max: Option<f64>,
    pub C_alpha3_gamma: Option<f64>,
    pub C_ER: Option<f64>,
    pub C_MAJ: Option<f64>,
    pub K_II: Option<f64>,
    pub wall_time_s: Option<f64>,
    pub rate_error_measure: Option<f64>,
    pub rate_majorant_I_N: Option<f64>,
    pub rate_majorant_II_N: Option<f64>,
    pub rate_majorant_optimized: Option<f64>,
    pub rate_minorant: Option<f64>,
}

/// log₂(previous / current) when both are positive.
pub fn rate(previous: Option<f64>, current: Option<f64>) -> Option<f64> {
    match (previous, current) {
        (Some(a), Some(b)) if a > 0.0 && b > 0.0 => Some((a / b).log2()),
        _ => None,
    }
}

/// Fills the rate columns of every row from the row before it.
pub fn fill_rates(rows: &mut [ReportRow]) {
    for k in 1..rows.len() {
        let (head, tail) = rows.split_at_mut(k);
        let (p, c) = (&head[k - 1], &mut tail[0]);
        c.rate_error_measure = rate(p.error_measure, c.error_measure);
        c.rate_majorant_I_N = rate(p.majorant_I_N, c.majorant_I_N);
        c.rate_majorant_II_N = rate(p.majorant_II_N, c.majorant_II_N);
        c.rate_majorant_optimized = rate(p.majorant_optimized, c.majorant_optimized);
        c.rate_minorant = rate(p.minorant, c.minorant);
    }
}

pub fn write_csv<W: std::io::Write>(rows: &[ReportRow], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<R: std::io::Read>(input: R) -> csv::Result<Vec<ReportRow>> {
    csv::Reader::from_reader(input).deserialize().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(level: usize, e: f64, m: f64) -> ReportRow {
        ReportRow {
            id: "x".into(),
            level,
            resolution: 4 << level,
            time_steps: 4 << level,
            h: 0.25 / (1 << level) as f64,
            dt: 0.25 / (1 << level) as f64,
            error_measure: Some(e),
            error_measure_I: None,
            error_measure_II_N: None,
            majorant_I: None,
            majorant_I_N: Some(m),
            majorant_II_N: None,
            majorant_optimized: None,
            minorant: Some(0.0),
            minorant_measure: None,
            I_maj_I: None,
            I_maj_I_N: None,
            I_maj_II_N: None,
            I_maj_optimized: None,
            I_min: None,
            C_max: None,
            C_alpha3_gamma: None,
            C_ER: None,
            C_MAJ: None,
            K_II: None,
            wall_time_s: None,
            rate_error_measure: None,
            rate_majorant_I_N: None,
            rate_majorant_II_N: None,
            rate_majorant_optimized: None,
            rate_minorant: None,
        }
    }

    #[test]
    fn rates_and_round_trip() {
        let mut rows = vec![row(0, 1.0, 8.0), row(1, 0.25, 2.0)];
        fill_rates(&mut rows);
        assert_eq!(rows[0].rate_error_measure, None);
        assert_eq!(rows[1].rate_error_measure, Some(2.0));
        assert_eq!(rows[1].rate_majorant_I_N, Some(2.0));
        // zero values have no rate
        assert_eq!(rows[1].rate_minorant, None);
        let mut buf = Vec::new();
        write_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("id,level,resolution,time_steps,h,dt,error_measure,"));
        assert_eq!(read_csv(&buf[..]).unwrap(), rows);
    }
}
