//! Attack report serialization and console rendering.
//!
//! Reports are flat `key = value` text files with keys in sorted order and
//! fixed six-decimal float formatting, so identical runs produce identical
//! bytes. Infinite values (PSNR on identical images) print as `inf`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use cmbd_core::victim::AttackReport;

use crate::errors::{CliError, Result};

pub fn fmt_f64(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf".to_string() } else { "-inf".to_string() }
    } else {
        format!("{v:.6}")
    }
}

/// Extra context stored next to the core metrics.
#[derive(Debug, Clone)]
pub struct ReportMeta {
    pub target: usize,
    pub queries: usize,
    pub database: usize,
    /// Query texts left untouched because they had no substitutable
    /// keyword.
    pub untriggered_texts: usize,
}

pub fn render_report(report: &AttackReport, meta: &ReportMeta) -> String {
    let mut lines: Vec<(String, String)> = vec![
        ("asr".into(), fmt_f64(report.asr)),
        ("ba_avg".into(), fmt_f64(report.ba_avg)),
        ("ba_i2t".into(), fmt_f64(report.ba_i2t)),
        ("ba_t2i".into(), fmt_f64(report.ba_t2i)),
        ("database".into(), meta.database.to_string()),
        (
            "dual_key_scored_as_v2l".into(),
            report.dual_key_scored_as_v2l.to_string(),
        ),
        ("k".into(), report.k.to_string()),
        ("mse_avg".into(), fmt_f64(report.mse_avg)),
        ("psnr_avg".into(), fmt_f64(report.psnr_avg)),
        ("queries".into(), meta.queries.to_string()),
        ("sbert_avg".into(), fmt_f64(report.sbert_avg)),
        ("scenario".into(), report.scenario.name().to_string()),
        ("ssim_avg".into(), fmt_f64(report.ssim_avg)),
        ("target".into(), meta.target.to_string()),
        ("untriggered_texts".into(), meta.untriggered_texts.to_string()),
    ];
    lines.sort();
    let mut out = String::new();
    for (key, value) in lines {
        writeln!(out, "{key} = {value}").unwrap();
    }
    out
}

pub fn write_report(path: &Path, report: &AttackReport, meta: &ReportMeta) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| CliError::io_at("creating", parent, e))?;
    }
    fs::write(path, render_report(report, meta))
        .map_err(|e| CliError::io_at("writing", path, e))
}

/// Reads a flat report back as `(key, value)` pairs.
pub fn read_report(path: &Path) -> Result<Vec<(String, String)>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io_at("opening", path, e))?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (key, value) = line.split_once(" = ").ok_or_else(|| {
            CliError::Format(format!("{} line {}: not `key = value`", path.display(), n + 1))
        })?;
        out.push((key.to_string(), value.to_string()));
    }
    Ok(out)
}

pub fn report_value(pairs: &[(String, String)], key: &str) -> Option<f64> {
    pairs.iter().find(|(k, _)| k == key).and_then(|(_, v)| {
        if v == "inf" {
            Some(f64::INFINITY)
        } else {
            v.parse().ok()
        }
    })
}

/// One metric row of the console summary.
fn table_row(name: &str, report: &AttackReport) -> String {
    format!(
        "{name:<22} {:>8} {:>8} {:>8} {:>8} {:>9} {:>8} {:>9} {:>8}",
        fmt_f64(report.ba_i2t),
        fmt_f64(report.ba_t2i),
        fmt_f64(report.ba_avg),
        fmt_f64(report.asr),
        fmt_f64(report.psnr_avg),
        fmt_f64(report.ssim_avg),
        fmt_f64(report.mse_avg),
        fmt_f64(report.sbert_avg),
    )
}

pub fn render_table(rows: &[(&str, &AttackReport)]) -> String {
    let mut out = String::new();
    writeln!(
        out,
        "{:<22} {:>8} {:>8} {:>8} {:>8} {:>9} {:>8} {:>9} {:>8}",
        "", "BA-i2t", "BA-t2i", "BA-avg", "ASR", "PSNR", "SSIM", "MSE", "SBERT"
    )
    .unwrap();
    for (name, report) in rows {
        writeln!(out, "{}", table_row(name, report)).unwrap();
    }
    out
}

/// Averages numeric keys across several report files; non-numeric keys are
/// kept when every file agrees on them.
pub fn aggregate_reports(paths: &[std::path::PathBuf]) -> Result<String> {
    if paths.is_empty() {
        return Err(CliError::Format("no reports to aggregate".into()));
    }
    let parsed: Vec<_> = paths
        .iter()
        .map(|p| read_report(p))
        .collect::<Result<_>>()?;
    let keys: Vec<String> = parsed[0].iter().map(|(k, _)| k.clone()).collect();
    let mut out = String::new();
    writeln!(out, "reports = {}", parsed.len()).unwrap();
    for key in keys {
        if key == "target" {
            let mut targets: Vec<String> = parsed
                .iter()
                .filter_map(|pairs| {
                    pairs
                        .iter()
                        .find(|(k, _)| *k == key)
                        .map(|(_, v)| v.clone())
                })
                .collect();
            targets.sort();
            writeln!(out, "targets = {}", targets.join(",")).unwrap();
            continue;
        }
        let values: Vec<Option<f64>> = parsed
            .iter()
            .map(|pairs| report_value(pairs, &key))
            .collect();
        if values.iter().all(|v| v.is_some()) {
            let sum: f64 = values.iter().map(|v| v.unwrap()).sum();
            writeln!(out, "{key} = {}", fmt_f64(sum / values.len() as f64)).unwrap();
        } else {
            let firsts: Vec<&str> = parsed
                .iter()
                .filter_map(|pairs| {
                    pairs
                        .iter()
                        .find(|(k, _)| *k == key)
                        .map(|(_, v)| v.as_str())
                })
                .collect();
            if firsts.windows(2).all(|w| w[0] == w[1]) {
                writeln!(out, "{key} = {}", firsts[0]).unwrap();
            }
        }
    }
    Ok(out)
}
