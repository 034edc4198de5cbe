//! CSV ingestion: production time series and provider forecasts, with
//! strict headers, RFC 3339 UTC timestamps, normalization by rated power,
//! and line-numbered diagnostics on every rejected row.

use std::path::Path;

use chrono::{DateTime, Utc};
use windtrade::calib::ForecastObs;

use crate::CliError;

/// Rows whose normalized power fell outside [0, 1] and was clamped.
#[derive(Debug, Default, Clone, Copy)]
pub struct ClampCounts {
    pub low: usize,
    pub high: usize,
}

fn parse_timestamp(s: &str, file: &Path, line: u64) -> Result<DateTime<Utc>, CliError> {
    match DateTime::parse_from_rfc3339(s) {
        Ok(t) => Ok(t.with_timezone(&Utc)),
        Err(e) => Err(CliError::Parse(format!(
            "{}:{line}: timestamp {s:?} must be RFC 3339 with an explicit UTC offset ({e})",
            file.display()
        ))),
    }
}

fn parse_power(
    s: &str,
    rated_kw: f64,
    counts: &mut ClampCounts,
    file: &Path,
    line: u64,
) -> Result<f64, CliError> {
    let kw: f64 = s.trim().parse().map_err(|_| {
        CliError::Parse(format!(
            "{}:{line}: power {s:?} is not a number",
            file.display()
        ))
    })?;
    if !kw.is_finite() {
        return Err(CliError::Parse(format!(
            "{}:{line}: power {s:?} is not finite",
            file.display()
        )));
    }
    let mut f = kw / rated_kw;
    if f < 0.0 {
        counts.low += 1;
        f = 0.0;
    }
    if f > 1.0 {
        counts.high += 1;
        f = 1.0;
    }
    Ok(f)
}

fn open_csv(path: &Path, want_header: &[&str]) -> Result<csv::Reader<std::fs::File>, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Parse(format!("cannot open {}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?;
    let got: Vec<&str> = headers.iter().collect();
    if got != want_header {
        return Err(CliError::Parse(format!(
            "{}: header must be {:?}, got {:?}",
            path.display(),
            want_header.join(","),
            got.join(",")
        )));
    }
    Ok(reader)
}

fn record_line(record: &csv::StringRecord) -> u64 {
    record.position().map(|p| p.line()).unwrap_or(0)
}

/// Normalized production rows, sorted by time.
pub type ProductionRows = Vec<(DateTime<Utc>, f64)>;

/// Read `timestamp,power` rows, normalize by rated power, clamp into
/// [0, 1], keep every `subsample`-th row, and sort by time.
pub fn read_production(
    path: &Path,
    rated_kw: f64,
    subsample: usize,
) -> Result<(ProductionRows, ClampCounts), CliError> {
    if !(rated_kw > 0.0) {
        return Err(CliError::Parse(format!(
            "rated power {rated_kw} kW must be positive"
        )));
    }
    let step = subsample.max(1);
    let mut reader = open_csv(path, &["timestamp", "power"])?;
    let mut rows = Vec::new();
    let mut counts = ClampCounts::default();
    for (idx, record) in reader.records().enumerate() {
        let record =
            record.map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?;
        if idx % step != 0 {
            continue;
        }
        let line = record_line(&record);
        if record.len() != 2 {
            return Err(CliError::Parse(format!(
                "{}:{line}: expected 2 fields, got {}",
                path.display(),
                record.len()
            )));
        }
        let t = parse_timestamp(&record[0], path, line)?;
        let f = parse_power(&record[1], rated_kw, &mut counts, path, line)?;
        rows.push((t, f));
    }
    if rows.is_empty() {
        return Err(CliError::Parse(format!(
            "{}: no data rows",
            path.display()
        )));
    }
    rows.sort_by_key(|(t, _)| *t);
    Ok((rows, counts))
}

#[derive(Debug, Clone, Copy)]
pub struct ForecastRow {
    pub issue: DateTime<Utc>,
    pub target: DateTime<Utc>,
    /// Normalized forecast in [0, 1].
    pub value: f64,
}

/// Read `issue_time,target_time,forecast` rows, normalized and clamped
/// like production; targets must lie strictly after issues.
pub fn read_forecasts(
    path: &Path,
    rated_kw: f64,
) -> Result<(Vec<ForecastRow>, ClampCounts), CliError> {
    if !(rated_kw > 0.0) {
        return Err(CliError::Parse(format!(
            "rated power {rated_kw} kW must be positive"
        )));
    }
    let mut reader = open_csv(path, &["issue_time", "target_time", "forecast"])?;
    let mut rows = Vec::new();
    let mut counts = ClampCounts::default();
    for record in reader.records() {
        let record =
            record.map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?;
        let line = record_line(&record);
        if record.len() != 3 {
            return Err(CliError::Parse(format!(
                "{}:{line}: expected 3 fields, got {}",
                path.display(),
                record.len()
            )));
        }
        let issue = parse_timestamp(&record[0], path, line)?;
        let target = parse_timestamp(&record[1], path, line)?;
        if target <= issue {
            return Err(CliError::Parse(format!(
                "{}:{line}: target_time {} must be after issue_time {}",
                path.display(),
                &record[1],
                &record[0]
            )));
        }
        let value = parse_power(&record[2], rated_kw, &mut counts, path, line)?;
        rows.push(ForecastRow {
            issue,
            target,
            value,
        });
    }
    if rows.is_empty() {
        return Err(CliError::Parse(format!(
            "{}: no data rows",
            path.display()
        )));
    }
    Ok((rows, counts))
}

/// Pair each forecast with the production reading nearest its target time,
/// within the tolerance; forecasts without a close-enough reading are
/// dropped and counted. Production must be sorted by time.
pub fn align(
    forecasts: &[ForecastRow],
    production: &[(DateTime<Utc>, f64)],
    tolerance_minutes: i64,
) -> (Vec<ForecastObs>, usize) {
    let tol = chrono::Duration::minutes(tolerance_minutes);
    let mut obs = Vec::with_capacity(forecasts.len());
    let mut dropped = 0usize;
    for fc in forecasts {
        let idx = production.partition_point(|(t, _)| *t < fc.target);
        let mut best: Option<(chrono::Duration, f64)> = None;
        for cand in [idx.wrapping_sub(1), idx] {
            if let Some((t, f)) = production.get(cand) {
                let gap = (*t - fc.target).abs();
                if gap <= tol && best.is_none_or(|(g, _)| gap < g) {
                    best = Some((gap, *f));
                }
            }
        }
        match best {
            Some((_, realized)) => obs.push(ForecastObs {
                forecast: fc.value,
                realized,
                horizon: (fc.target - fc.issue).num_seconds() as f64 / 3600.0,
            }),
            None => dropped += 1,
        }
    }
    (obs, dropped)
}
