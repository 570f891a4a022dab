//! Distributional fidelity: KDE negative log-likelihood and per-column
//! histogram KL divergence.

use rayon::prelude::*;

use super::distance::shared_numeric;
use crate::error::MetricError;
use crate::table::{sample_std, Table};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Product-kernel Gaussian KDE with per-dimension Scott bandwidths
/// `h_d = σ_d · n^(−1/(d+4))`, floored at `1e−6 · range_d` (or `1e−6` when
/// the column is constant).
#[derive(Debug, Clone)]
pub struct ProductKde {
    points: Vec<Vec<f64>>,
    bandwidths: Vec<f64>,
}

impl ProductKde {
    pub fn fit(points: Vec<Vec<f64>>) -> Result<Self, MetricError> {
        let n = points.len();
        if n < 2 {
            return Err(MetricError::Size("KDE needs at least 2 reference rows".into()));
        }
        let d = points[0].len();
        let factor = (n as f64).powf(-1.0 / (d as f64 + 4.0));
        let bandwidths = (0..d)
            .map(|j| {
                let col: Vec<f64> = points.iter().map(|p| p[j]).collect();
                let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let floor = if hi > lo { 1e-6 * (hi - lo) } else { 1e-6 };
                (sample_std(&col) * factor).max(floor)
            })
            .collect();
        Ok(Self { points, bandwidths })
    }

    pub fn bandwidths(&self) -> &[f64] {
        &self.bandwidths
    }

    /// `log p(x)`, computed with log-sum-exp over the kernels.
    pub fn log_density(&self, x: &[f64]) -> f64 {
        let log_norm: f64 = self.bandwidths.iter().map(|h| h.ln() + LN_SQRT_2PI).sum();
        let exponents: Vec<f64> = self
            .points
            .iter()
            .map(|p| {
                -0.5 * p
                    .iter()
                    .zip(x)
                    .zip(&self.bandwidths)
                    .map(|((pi, xi), h)| {
                        let z = (xi - pi) / h;
                        z * z
                    })
                    .sum::<f64>()
            })
            .collect();
        let m = exponents.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = exponents.iter().map(|e| (e - m).exp()).sum();
        m + sum.ln() - (self.points.len() as f64).ln() - log_norm
    }
}

/// Mean negative log density of the synthetic rows under a KDE fit to the
/// real rows, over the numeric columns both tables share.
pub fn nll_kde(real: &Table, syn: &Table) -> Result<f64, MetricError> {
    if syn.is_empty() {
        return Err(MetricError::Size("synthetic table is empty".into()));
    }
    let cols = shared_numeric(real, syn)?;
    let r = real.numeric_matrix(&cols).map_err(|e| MetricError::Schema(e.to_string()))?;
    let s = syn.numeric_matrix(&cols).map_err(|e| MetricError::Schema(e.to_string()))?;
    let kde = ProductKde::fit(r)?;
    let logs: Vec<f64> = s.par_iter().map(|x| kde.log_density(x)).collect();
    Ok(-logs.iter().sum::<f64>() / logs.len() as f64)
}

pub const KL_EPSILON: f64 = 1e-9;

/// Histogram of `values` on `bins` equal-width bins spanning `[lo, hi]`,
/// plus one underflow and one overflow bin, each count converted to mass and
/// smoothed by `KL_EPSILON` before renormalizing.
fn smoothed_histogram(values: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<f64> {
    let mut counts = vec![0usize; bins + 2];
    let width = (hi - lo) / bins as f64;
    for &v in values {
        let slot = if v < lo {
            0
        } else if v > hi {
            bins + 1
        } else if width > 0.0 {
            1 + (((v - lo) / width).floor() as usize).min(bins - 1)
        } else {
            1
        };
        counts[slot] += 1;
    }
    let n = values.len().max(1) as f64;
    let raw: Vec<f64> = counts.iter().map(|&c| c as f64 / n + KL_EPSILON).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|p| p / total).collect()
}

/// `KL(syn ‖ real)` for one column.
pub fn kl_column(real: &[f64], syn: &[f64], bins: usize) -> Result<f64, MetricError> {
    if bins < 2 {
        return Err(MetricError::Config("KL needs at least 2 bins".into()));
    }
    if real.is_empty() || syn.is_empty() {
        return Err(MetricError::Size("KL needs non-empty samples".into()));
    }
    let lo = real.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = real.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let p = smoothed_histogram(real, lo, hi, bins);
    let q = smoothed_histogram(syn, lo, hi, bins);
    Ok(q.iter().zip(&p).map(|(qi, pi)| qi * (qi / pi).ln()).sum::<f64>().max(0.0))
}

/// Mean over shared numeric columns of the marginal histogram KL divergence
/// of the synthetic sample from the real one.
pub fn kl_divergence(real: &Table, syn: &Table, bins: usize) -> Result<f64, MetricError> {
    if syn.is_empty() {
        return Err(MetricError::Size("synthetic table is empty".into()));
    }
    let cols = shared_numeric(real, syn)?;
    let mut total = 0.0;
    for c in &cols {
        total += kl_column(
            &real.numeric_column(c).expect("shared numeric"),
            &syn.numeric_column(c).expect("shared numeric"),
            bins,
        )?;
    }
    Ok(total / cols.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kde_single_point_density() {
        let kde = ProductKde::fit(vec![vec![0.0], vec![0.0], vec![2.0], vec![2.0]]).unwrap();
        let h = kde.bandwidths()[0];
        let phi = |z: f64| (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let expected = (0.5 * phi(0.0) / h + 0.5 * phi(2.0 / h) / h).ln();
        assert!((kde.log_density(&[0.0]) - expected).abs() < 1e-12);
    }

    #[test]
    fn kde_constant_column_uses_floor() {
        let kde = ProductKde::fit(vec![vec![1.0, 5.0], vec![2.0, 5.0], vec![3.0, 5.0]]).unwrap();
        assert_eq!(kde.bandwidths()[1], 1e-6);
        assert!(kde.log_density(&[2.0, 5.0]).is_finite());
    }

    #[test]
    fn nll_errors() {
        let t = Table::from_numeric(&["x"], vec![vec![1.0], vec![2.0]]).unwrap();
        assert!(nll_kde(&t, &t.empty_like()).is_err());
        let one = Table::from_numeric(&["x"], vec![vec![1.0]]).unwrap();
        assert!(nll_kde(&one, &t).is_err());
    }

    #[test]
    fn kl_self_is_zero() {
        let xs: Vec<f64> = (0..500).map(|i| ((i * 37) % 101) as f64).collect();
        assert!(kl_column(&xs, &xs, 20).unwrap() <= 1e-6);
        assert!(kl_column(&xs, &xs, 1).is_err());
        assert!(kl_column(&xs, &[], 10).is_err());
    }

    #[test]
    fn kl_disjoint_supports_is_large_but_finite() {
        let real: Vec<f64> = (0..100).map(|i| i as f64 / 100.0).collect();
        let syn: Vec<f64> = (0..100).map(|i| 5.0 + i as f64 / 100.0).collect();
        let kl = kl_column(&real, &syn, 20).unwrap();
        assert!(kl.is_finite() && kl > 10.0, "{kl}");
    }
}
