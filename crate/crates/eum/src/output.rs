//! CSV and JSON artifacts written by the commands.

use std::fs;
use std::path::Path;

use eum_core::metrics::{Roc, RocPoint};
use eum_core::TrainHistory;
use serde::Serialize;

use crate::error::{IoContext, Result};

pub const HISTORY_HEADER: [&str; 7] = ["iter", "loss", "mean_d1", "mean_d2", "mean_d3", "branch", "lr"];

pub fn write_history_csv(path: &Path, history: &TrainHistory) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(HISTORY_HEADER)?;
    for l in &history.iterations {
        w.write_record([
            l.iter.to_string(),
            l.loss.to_string(),
            l.mean_d1.to_string(),
            l.mean_d2.to_string(),
            l.mean_d3.to_string(),
            l.branch.name().to_string(),
            l.lr.to_string(),
        ])?;
    }
    w.flush().at(path)
}

pub fn write_validation_csv(path: &Path, history: &TrainHistory) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["iter", "loss"])?;
    for v in &history.validations {
        w.write_record([v.iter.to_string(), v.loss.to_string()])?;
    }
    w.flush().at(path)
}

/// Drops points in the middle of horizontal or vertical runs. The step curve,
/// and anything interpolated from it, is unchanged.
pub fn roc_vertices(points: &[RocPoint]) -> Vec<RocPoint> {
    let mut out: Vec<RocPoint> = Vec::with_capacity(points.len().min(1024));
    for (i, &p) in points.iter().enumerate() {
        if let (Some(prev), Some(next)) = (out.last(), points.get(i + 1)) {
            let vertical = prev.fmr == p.fmr && p.fmr == next.fmr;
            let horizontal = prev.tpr == p.tpr && p.tpr == next.tpr;
            if vertical || horizontal {
                continue;
            }
        }
        out.push(p);
    }
    out
}

pub fn write_roc_csv(path: &Path, roc: &Roc) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["fmr", "tpr"])?;
    for p in roc_vertices(&roc.points) {
        w.write_record([p.fmr.to_string(), p.tpr.to_string()])?;
    }
    w.flush().at(path)
}

/// Pretty JSON with a trailing newline. Non-finite floats become `null`.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).at(path)
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).at(path)?;
    Ok(serde_json::from_str(&text)?)
}

/// Rates are stored as fractions; this is for terminal output only.
pub fn percent(rate: f64) -> String {
    format!("{:.4}%", 100.0 * rate)
}
