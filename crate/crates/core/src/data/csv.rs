//! CSV artifacts with fixed column orders.
//!
//! Floats are written in Rust's shortest round-trip form, so files are
//! byte-identical whenever the values are bit-identical.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::sigma::SigmaTracePoint;
use crate::smoothing::{CurvePoint, SampleCertification};
use crate::train::EpochMetrics;

pub const METRICS_HEADER: &str = "epoch,loss,train_acc,reg_value,seconds";
pub const CERTIFICATION_HEADER: &str = "sample_index,label,predicted,abstain,pa_lower,radius,correct";
pub const CURVE_HEADER: &str = "radius,accuracy";
pub const SIGMA_HEADER: &str = "sigma2,mean_drop";

fn write_rows<T>(path: &Path, header: &str, rows: &[T], mut line: impl FnMut(&mut String, &T)) -> Result<()> {
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(header);
    out.push('\n');
    for r in rows {
        line(&mut out, r);
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn write_metrics_csv(path: impl AsRef<Path>, rows: &[EpochMetrics]) -> Result<()> {
    write_rows(path.as_ref(), METRICS_HEADER, rows, |s, m| {
        let _ = write!(s, "{},{},{},{},{}", m.epoch, m.loss, m.train_acc, m.reg_value, m.seconds);
    })
}

/// `predicted` is empty for abstentions.
pub fn write_certification_csv(path: impl AsRef<Path>, rows: &[SampleCertification]) -> Result<()> {
    write_rows(path.as_ref(), CERTIFICATION_HEADER, rows, |s, c| {
        let predicted = c.result.predicted.map(|p| p.to_string()).unwrap_or_default();
        let _ = write!(
            s,
            "{},{},{},{},{},{},{}",
            c.sample_index,
            c.label,
            predicted,
            c.result.abstained(),
            c.result.pa_lower,
            c.result.radius,
            c.correct()
        );
    })
}

pub fn write_curve_csv(path: impl AsRef<Path>, rows: &[CurvePoint]) -> Result<()> {
    write_rows(path.as_ref(), CURVE_HEADER, rows, |s, p| {
        let _ = write!(s, "{},{}", p.radius, p.accuracy);
    })
}

pub fn write_sigma_trace_csv(path: impl AsRef<Path>, rows: &[SigmaTracePoint]) -> Result<()> {
    write_rows(path.as_ref(), SIGMA_HEADER, rows, |s, p| {
        let _ = write!(s, "{},{}", p.sigma2, p.mean_drop);
    })
}

pub fn read_curve_csv(path: impl AsRef<Path>) -> Result<Vec<CurvePoint>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let bad = |detail: String| Error::format("curve CSV", format!("{}: {detail}", path.display()));
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(CURVE_HEADER) {
        return Err(bad(format!("expected header `{CURVE_HEADER}`")));
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let mut cols = l.split(',');
            let mut num = || -> Result<f64> {
                cols.next()
                    .and_then(|c| c.trim().parse().ok())
                    .ok_or_else(|| bad(format!("line {}: `{l}`", i + 2)))
            };
            Ok(CurvePoint { radius: num()?, accuracy: num()? })
        })
        .collect()
}
