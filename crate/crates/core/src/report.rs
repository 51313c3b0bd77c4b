//! JSON and CSV rendering of reports and sweep tables.
//!
//! CSV numbers use six significant digits (`0.6948` prints as `0.694800`).
//! Column order is fixed by [`CSV_HEADER`].

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::write_atomic;
use crate::error::Result;
use crate::meanshift::NeighborSource;
use crate::pipeline::{Report, SweepRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Json,
    Csv,
}

impl std::str::FromStr for ReportFormat {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(crate::Error::InvalidConfig(format!(
                "unknown report format {other:?}"
            ))),
        }
    }
}

pub const CSV_HEADER: [&str; 18] = [
    "dataset",
    "mode",
    "axis",
    "value",
    "n_samples",
    "top1_accuracy",
    "compactness_before",
    "compactness_after",
    "separation_before",
    "separation_after",
    "alpha",
    "k",
    "q",
    "lambda",
    "softmax_scale",
    "neighbor_source",
    "entropy_threshold",
    "wall_time_ms",
];

/// `x` with six significant digits, in the style of C's `%#.6g`.
pub fn format_sig6(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    if x == 0.0 {
        return "0.00000".into();
    }
    let exp = x.abs().log10().floor() as i32;
    let fixed = |e: i32| format!("{:.*}", (5 - e).max(0) as usize, x);
    if (-5..6).contains(&exp) {
        let s = fixed(exp);
        // Rounding may carry into a new leading digit (9.999996 -> 10.00000).
        let digits = s.chars().filter(|c| c.is_ascii_digit()).skip_while(|&c| c == '0').count();
        if digits > 6 {
            if exp + 1 < 6 {
                return fixed(exp + 1);
            }
        } else {
            return s;
        }
    }
    format!("{x:.5e}")
}

fn opt(x: Option<f64>) -> String {
    x.map(format_sig6).unwrap_or_default()
}

fn csv_record(report: &Report, axis: &str, value: String) -> Vec<String> {
    let cfg = &report.config_echo;
    vec![
        report.dataset.clone(),
        cfg.mode.cli_name().to_owned(),
        axis.to_owned(),
        value,
        report.n_samples.to_string(),
        format_sig6(report.top1_accuracy),
        opt(report.compactness_before),
        opt(report.compactness_after),
        opt(report.separation_before),
        opt(report.separation_after),
        format_sig6(cfg.ms.alpha),
        cfg.ms.k.to_string(),
        cfg.cache_q.to_string(),
        format_sig6(cfg.lambda),
        format_sig6(cfg.softmax_scale),
        match cfg.ms.neighbor_source {
            NeighborSource::BankRaw => "bank_raw",
            NeighborSource::CacheRefined => "cache_refined",
        }
        .to_owned(),
        opt(cfg.entropy_threshold),
        report.wall_time_ms.to_string(),
    ]
}

fn csv_string(records: impl IntoIterator<Item = Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER)?;
    for r in records {
        w.write_record(&r)?;
    }
    let bytes = w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("CSV fields are UTF-8"))
}

pub fn render_report(report: &Report, format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Json => Ok(serde_json::to_string_pretty(report).expect("report serializes") + "\n"),
        ReportFormat::Csv => csv_string([csv_record(report, "none", String::new())]),
    }
}

pub fn render_sweep(rows: &[SweepRow], format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Json => Ok(serde_json::to_string_pretty(rows).expect("sweep serializes") + "\n"),
        ReportFormat::Csv => csv_string(rows.iter().map(|row| {
            let value = if row.axis.is_integer() {
                format!("{}", row.value as u64)
            } else {
                format_sig6(row.value)
            };
            csv_record(&row.report, row.axis.name(), value)
        })),
    }
}

/// Writes the rendered report atomically.
pub fn write_report(report: &Report, path: &Path, format: ReportFormat) -> Result<()> {
    write_atomic(path, render_report(report, format)?.as_bytes())
}

pub fn write_sweep(rows: &[SweepRow], path: &Path, format: ReportFormat) -> Result<()> {
    write_atomic(path, render_sweep(rows, format)?.as_bytes())
}
