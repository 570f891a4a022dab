//! Point-set distances: Hausdorff and distance to closest record.

use rayon::prelude::*;

use crate::error::MetricError;
use crate::table::Table;

#[inline]
fn dist2(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    dx * dx + dy * dy
}

/// `sup_{p∈a} inf_{q∈b} ‖p−q‖₂` with the early-break scan: once a point of
/// `b` is closer than the running maximum, `p` cannot raise it.
fn directed_sq(a: &[[f64; 2]], b: &[[f64; 2]]) -> f64 {
    let mut cmax = 0.0f64;
    for p in a {
        let mut cmin = f64::INFINITY;
        for q in b {
            let d = dist2(p, q);
            if d < cmax {
                cmin = d;
                break;
            }
            if d < cmin {
                cmin = d;
            }
        }
        if cmin > cmax && cmin.is_finite() {
            cmax = cmin;
        }
    }
    cmax
}

pub fn directed_hausdorff(a: &[[f64; 2]], b: &[[f64; 2]]) -> Result<f64, MetricError> {
    if a.is_empty() || b.is_empty() {
        return Err(MetricError::Size("Hausdorff distance needs two non-empty point sets".into()));
    }
    Ok(directed_sq(a, b).sqrt())
}

/// Symmetric Hausdorff distance on raw coordinates.
pub fn hausdorff(a: &[[f64; 2]], b: &[[f64; 2]]) -> Result<f64, MetricError> {
    if a.is_empty() || b.is_empty() {
        return Err(MetricError::Size("Hausdorff distance needs two non-empty point sets".into()));
    }
    let (ab, ba) = rayon::join(|| directed_sq(a, b), || directed_sq(b, a));
    Ok(ab.max(ba).sqrt())
}

/// Two numeric columns of a table as points.
pub fn points2(t: &Table, x: &str, y: &str) -> Result<Vec<[f64; 2]>, MetricError> {
    let m = t.numeric_matrix(&[x, y]).map_err(|e| MetricError::Schema(e.to_string()))?;
    Ok(m.into_iter().map(|r| [r[0], r[1]]).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DcrSummary {
    pub mean: f64,
    pub zero_leaks: usize,
}

/// Columns used for DCR: numeric columns present in both tables, in the
/// real table's order.
pub(crate) fn shared_numeric<'a>(real: &'a Table, syn: &Table) -> Result<Vec<&'a str>, MetricError> {
    let cols: Vec<&str> = real
        .numeric_column_names()
        .into_iter()
        .filter(|c| syn.column(c).is_some_and(|s| s.is_numeric()))
        .collect();
    if cols.is_empty() {
        return Err(MetricError::Schema("tables share no numeric columns".into()));
    }
    Ok(cols)
}

/// Mean distance from each synthetic row to its nearest real row after
/// min-max scaling by the real table's ranges, plus the number of
/// synthetic rows at distance exactly zero. A column with zero real range
/// contributes nothing.
pub fn dcr(real: &Table, syn: &Table) -> Result<DcrSummary, MetricError> {
    if real.is_empty() || syn.is_empty() {
        return Err(MetricError::Size("DCR needs non-empty real and synthetic tables".into()));
    }
    let cols = shared_numeric(real, syn)?;
    let r = real.numeric_matrix(&cols).map_err(|e| MetricError::Schema(e.to_string()))?;
    let s = syn.numeric_matrix(&cols).map_err(|e| MetricError::Schema(e.to_string()))?;
    let scale: Vec<Option<(f64, f64)>> = (0..cols.len())
        .map(|j| {
            let lo = r.iter().map(|row| row[j]).fold(f64::INFINITY, f64::min);
            let hi = r.iter().map(|row| row[j]).fold(f64::NEG_INFINITY, f64::max);
            (hi > lo).then_some((lo, hi - lo))
        })
        .collect();
    let norm = |row: &[f64]| -> Vec<f64> {
        row.iter()
            .zip(&scale)
            .map(|(v, s)| s.map(|(lo, range)| (v - lo) / range).unwrap_or(0.0))
            .collect()
    };
    let rn: Vec<Vec<f64>> = r.iter().map(|row| norm(row)).collect();
    let sn: Vec<Vec<f64>> = s.iter().map(|row| norm(row)).collect();
    let nearest: Vec<f64> = sn
        .par_iter()
        .map(|p| {
            rn.iter()
                .map(|q| p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .collect();
    let zero_leaks = nearest.iter().filter(|&&d| d == 0.0).count();
    let mean = nearest.iter().sum::<f64>() / nearest.len() as f64;
    Ok(DcrSummary { mean, zero_leaks })
}
