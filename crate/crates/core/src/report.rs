//! Tabular outputs: every table is produced both as TSV and as an aligned
//! plain-text table.
//!
//! TSV cells carry six decimals, text tables two (one for percent changes).
//! Rounding is half away from zero after nudging by a tiny epsilon, so a mean
//! such as 0.865 renders as 0.87 even though its binary value sits just below.

use std::fmt::Write as _;

use crate::analysis::{CrossCityRow, DiversityCorrelation, MotifReportRow};
use crate::ranker::{DimensionReport, MetricReport, PerceptionScore, PerceptualDimension};

pub const TABLE1_COLUMNS: [&str; 6] = ["Model", "AUC", "accuracy", "recall", "f1", "precision"];
pub const TABLE3_COLUMNS: [&str; 4] = ["Metric", "source", "target", "Change"];

/// A rendered table: header plus rows of cells.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn to_tsv(&self) -> String {
        let mut out = self.header.join("\t");
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.join("\t"));
            out.push('\n');
        }
        out
    }

    /// First column left-aligned, the rest right-aligned, two-space gutters.
    pub fn to_text(&self) -> String {
        let ncol = self.header.len();
        let mut widths = vec![0; ncol];
        for row in std::iter::once(&self.header).chain(&self.rows) {
            for (w, cell) in widths.iter_mut().zip(row) {
                *w = (*w).max(cell.chars().count());
            }
        }
        let mut out = String::new();
        for row in std::iter::once(&self.header).chain(&self.rows) {
            let mut line = String::new();
            for (i, cell) in row.iter().enumerate() {
                if i == 0 {
                    let _ = write!(line, "{cell:<w$}", w = widths[0]);
                } else {
                    let _ = write!(line, "  {cell:>w$}", w = widths[i]);
                }
            }
            out.push_str(line.trim_end());
            out.push('\n');
        }
        out
    }
}

/// Round half away from zero to `decimals` places, tolerating representation
/// error just below the half.
pub fn round_half_up(x: f64, decimals: u32) -> f64 {
    let scale = 10f64.powi(decimals as i32);
    let y = x * scale;
    (y + y.signum() * 1e-9).round() / scale
}

pub fn fmt_fixed(x: f64, decimals: u32) -> String {
    let r = round_half_up(x, decimals);
    // Avoid "-0.00".
    let r = if r == 0.0 { 0.0 } else { r };
    format!("{r:.prec$}", prec = decimals as usize)
}

/// Signed percent with one decimal: "+1.2%", "-5.6%", "+0.0%"; "n/a" if undefined.
pub fn fmt_change(change: Option<f64>) -> String {
    match change {
        None => "n/a".to_string(),
        Some(c) => {
            let r = round_half_up(c, 1);
            if r < 0.0 {
                format!("-{:.1}%", -r)
            } else {
                format!("+{:.1}%", r.abs())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    /// Six decimals, for machine-readable files.
    Tsv,
    /// Two decimals, for human-readable tables.
    Text,
}

impl Precision {
    fn decimals(self) -> u32 {
        match self {
            Precision::Tsv => 6,
            Precision::Text => 2,
        }
    }
}

/// Table 1 layout: one row per labelled metric report.
pub fn table1(rows: &[(&str, &MetricReport)], p: Precision) -> Table {
    let d = p.decimals();
    Table {
        header: TABLE1_COLUMNS.iter().map(|s| s.to_string()).collect(),
        rows: rows
            .iter()
            .map(|(model, r)| {
                vec![
                    model.to_string(),
                    fmt_fixed(r.auc, d),
                    fmt_fixed(r.accuracy, d),
                    fmt_fixed(r.recall, d),
                    fmt_fixed(r.f1, d),
                    fmt_fixed(r.precision, d),
                ]
            })
            .collect(),
    }
}

/// Table 1 for one evaluation: pooled pairs and the per-dimension mean.
pub fn table1_for(model: &str, report: &DimensionReport, p: Precision) -> Table {
    let pooled = format!("{model} (pooled)");
    let mean = format!("{model} (dimension mean)");
    table1(
        &[(&pooled, &report.pooled), (&mean, &report.dimension_mean)],
        p,
    )
}

pub fn table2_header() -> Vec<String> {
    let mut h = vec!["Model".to_string()];
    h.extend(PerceptualDimension::TABLE_ORDER.iter().map(|d| d.table_header().to_string()));
    h.push("average".to_string());
    h
}

/// Table 2 layout: per-dimension accuracy plus the unweighted mean. Missing
/// dimensions render as "-".
pub fn table2(model: &str, report: &DimensionReport, p: Precision) -> Table {
    let d = p.decimals();
    let mut row = vec![model.to_string()];
    for dim in PerceptualDimension::TABLE_ORDER {
        row.push(
            report
                .per_dimension
                .get(&dim)
                .map_or_else(|| "-".to_string(), |r| fmt_fixed(r.accuracy, d)),
        );
    }
    row.push(fmt_fixed(report.mean_accuracy, d));
    Table {
        header: table2_header(),
        rows: vec![row],
    }
}

/// Table 3 layout; the change column is always signed with one decimal.
pub fn table3(rows: &[CrossCityRow], p: Precision) -> Table {
    let d = p.decimals();
    Table {
        header: TABLE3_COLUMNS.iter().map(|s| s.to_string()).collect(),
        rows: rows
            .iter()
            .map(|r| {
                vec![
                    r.metric.to_string(),
                    fmt_fixed(r.source, d),
                    fmt_fixed(r.target, d),
                    fmt_change(r.change),
                ]
            })
            .collect(),
    }
}

pub fn motif_table(rows: &[MotifReportRow], p: Precision) -> Table {
    let d = p.decimals();
    Table {
        header: ["subject", "predicate", "object", "low_freq", "high_freq", "log_odds", "support"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        rows: rows
            .iter()
            .map(|r| {
                vec![
                    r.motif.subject.clone(),
                    r.motif.predicate.clone(),
                    r.motif.object.clone(),
                    fmt_fixed(r.low_freq, d),
                    fmt_fixed(r.high_freq, d),
                    fmt_fixed(r.log_odds, d),
                    r.support.to_string(),
                ]
            })
            .collect(),
    }
}

/// Scores use shortest round-trip formatting so they can be read back exactly.
pub fn scores_table(scores: &[PerceptionScore]) -> Table {
    Table {
        header: ["scene_id", "dimension", "score"].iter().map(|s| s.to_string()).collect(),
        rows: scores
            .iter()
            .map(|s| vec![s.scene_id.clone(), s.dimension.to_string(), format!("{:?}", s.score)])
            .collect(),
    }
}

pub fn diversity_table(dimension: PerceptualDimension, c: &DiversityCorrelation, p: Precision) -> Table {
    Table {
        header: ["dimension", "statistic", "spearman"].iter().map(|s| s.to_string()).collect(),
        rows: c
            .rows()
            .iter()
            .map(|(name, rho)| {
                vec![
                    dimension.to_string(),
                    name.to_string(),
                    rho.map_or_else(|| "undefined".to_string(), |r| fmt_fixed(r, p.decimals())),
                ]
            })
            .collect(),
    }
}
