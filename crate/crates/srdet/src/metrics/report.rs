//! Fixed-width ablation report table and its CSV companion.

use std::io::Write;
use std::path::Path;

use crate::error::Result;

/// One experiment row. Metric fields are percentages; `None` renders as a
/// dash (used by the enhancement-only arm, which has no detector).
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub experiment: usize,
    pub method: String,
    pub accuracy_pct: Option<f64>,
    pub precision_pct: Option<f64>,
    pub recall_pct: Option<f64>,
    pub ap_pct: Option<f64>,
}

/// One decimal place, with a whole-number result shown bare (89, not 89.0).
fn fmt_metric(v: Option<f64>) -> String {
    match v {
        None => "-".to_string(),
        Some(v) => {
            let s = format!("{v:.1}");
            s.strip_suffix(".0").map(str::to_string).unwrap_or(s)
        }
    }
}

/// Render the experiment table as plain fixed-width ASCII. The footer
/// spells out the accuracy definition since the name is overloaded.
pub fn build_report(rows: &[ReportRow]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:>10}  {:<12}{:>8}  {:>9}  {:>6}\n",
        "experiment", "method", "accuracy", "precision", "recall"
    ));
    for r in rows {
        out.push_str(&format!(
            "{:>10}  {:<12}{:>8}  {:>9}  {:>6}\n",
            r.experiment,
            r.method,
            fmt_metric(r.accuracy_pct),
            fmt_metric(r.precision_pct),
            fmt_metric(r.recall_pct),
        ));
    }
    out.push('\n');
    out.push_str("accuracy = tp / (tp + fp + fn)\n");
    out
}

/// CSV mirror of the table plus the AP column; missing metrics are empty
/// fields rather than dashes.
pub fn write_report_csv(path: &Path, rows: &[ReportRow]) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "experiment,accuracy_pct,precision_pct,recall_pct,ap_pct")?;
    let cell = |v: Option<f64>| match v {
        None => String::new(),
        some => fmt_metric(some),
    };
    for r in rows {
        writeln!(
            f,
            "{},{},{},{},{}",
            r.experiment,
            cell(r.accuracy_pct),
            cell(r.precision_pct),
            cell(r.recall_pct),
            cell(r.ap_pct),
        )?;
    }
    Ok(())
}
