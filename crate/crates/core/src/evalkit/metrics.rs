//! Latitude-weighted verification scores and the metrics CSV.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::numcore::Tensor;

pub const METRICS_HEADER: &str = "lead_hours,variable,rmse,acc";

const ACC_FLOOR: f64 = 1e-12;

fn check_pair(a: &Tensor, b: &Tensor, weights: &Tensor) -> Result<(usize, usize)> {
    let (h, w) = a.expect_2d("field")?;
    if b.shape() != a.shape() || weights.len() != h {
        return Err(shape_err(format!(
            "fields {:?} / {:?} with {} latitude weights",
            a.shape(),
            b.shape(),
            weights.len()
        )));
    }
    Ok((h, w))
}

/// `sqrt(mean_ij w_i (pred - truth)²)` for one field.
pub fn lat_rmse(pred: &Tensor, truth: &Tensor, weights: &Tensor) -> Result<f64> {
    let (h, w) = check_pair(pred, truth, weights)?;
    let mut total = 0.0;
    for i in 0..h {
        let wi = weights.data()[i];
        for (p, t) in pred.row(i).iter().zip(truth.row(i)) {
            total += wi * (p - t) * (p - t);
        }
    }
    Ok((total / (h * w) as f64).sqrt())
}

/// Weighted anomaly correlation against `clim`; the denominator is floored.
pub fn acc(pred: &Tensor, truth: &Tensor, clim: &Tensor, weights: &Tensor) -> Result<f64> {
    let (h, _) = check_pair(pred, truth, weights)?;
    if clim.shape() != pred.shape() {
        return Err(shape_err(format!("climatology shape {:?}", clim.shape())));
    }
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for i in 0..h {
        let wi = weights.data()[i];
        for ((p, t), c) in pred.row(i).iter().zip(truth.row(i)).zip(clim.row(i)) {
            let (a, b) = (p - c, t - c);
            ab += wi * a * b;
            aa += wi * a * a;
            bb += wi * b * b;
        }
    }
    Ok(ab / (aa * bb).sqrt().max(ACC_FLOOR))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub lead_hours: u32,
    pub variable: String,
    pub rmse: f64,
    pub acc: f64,
}

pub fn metrics_csv(rows: &[MetricRow]) -> String {
    let mut s = format!("{METRICS_HEADER}\n");
    for r in rows {
        writeln!(s, "{},{},{},{}", r.lead_hours, r.variable, r.rmse, r.acc).expect("string write");
    }
    s
}

pub fn write_metrics_csv(path: impl AsRef<Path>, rows: &[MetricRow]) -> Result<()> {
    fs::write(path, metrics_csv(rows))?;
    Ok(())
}

pub fn read_metrics_csv(path: impl AsRef<Path>) -> Result<Vec<MetricRow>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err(Error::Format(format!("metrics file must start with {METRICS_HEADER}")));
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            let bad = || Error::Format(format!("bad metrics line {l:?}"));
            if f.len() != 4 {
                return Err(bad());
            }
            Ok(MetricRow {
                lead_hours: f[0].parse().map_err(|_| bad())?,
                variable: f[1].to_string(),
                rmse: f[2].parse().map_err(|_| bad())?,
                acc: f[3].parse().map_err(|_| bad())?,
            })
        })
        .collect()
}
