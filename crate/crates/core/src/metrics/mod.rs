//! Fidelity metrics for a synthetic table against real data.
//!
//! KL and NLL operate on the numeric columns shared by both tables;
//! categorical columns are ignored by every metric here.

mod density;
mod distance;
mod mlu;

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::MetricError;
use crate::symexpr::{Equation, Expr};
use crate::table::{RegionMask, Table};

pub use density::{kl_column, kl_divergence, nll_kde, ProductKde, KL_EPSILON};
pub use distance::{dcr, directed_hausdorff, hausdorff, points2, DcrSummary};
pub use mlu::{
    mape, mlu, ForestParams, LinearRegression, MluModel, RandomForest, RegressionTree, MAPE_FLOOR,
    RIDGE_FALLBACK,
};

pub const DEFAULT_KL_BINS: usize = 20;

/// Mean of `(y − f(x))²` over the rows of `syn`, optionally restricted to
/// rows whose mask column falls inside the region.
pub fn mse_symbolic(syn: &Table, f: &Expr, target: &str, region: Option<&RegionMask>) -> Result<f64, MetricError> {
    let names = syn.column_names();
    for v in f.variables().iter().map(String::as_str).chain([target]) {
        if !syn.column(v).is_some_and(|c| c.is_numeric()) {
            return Err(MetricError::Schema(format!("`{v}` is not a numeric column of the synthetic table")));
        }
    }
    let mask_col = match region {
        Some(m) => {
            m.validate().map_err(|e| MetricError::Config(e.to_string()))?;
            Some(syn.column_index(&m.column).ok_or_else(|| {
                MetricError::Schema(format!("mask column `{}` is not in the synthetic table", m.column))
            })?)
        }
        None => None,
    };
    let t = syn.column_index(target).expect("checked");
    let mut total = 0.0;
    let mut count = 0usize;
    for (i, row) in syn.rows().iter().enumerate() {
        if let (Some(m), Some(j)) = (region, mask_col) {
            if !row[j].as_f64().is_some_and(|v| m.contains(v)) {
                continue;
            }
        }
        let bindings: HashMap<&str, f64> =
            names.iter().zip(row).filter_map(|(n, v)| v.as_f64().map(|x| (*n, x))).collect();
        let pred = f.eval(&bindings).map_err(|source| MetricError::Eval { row: i, source })?;
        let y = row[t].as_f64().expect("numeric target");
        total += (y - pred) * (y - pred);
        count += 1;
    }
    if count == 0 {
        return match region {
            Some(m) => Err(MetricError::RegionEmpty { column: m.column.clone(), lo: m.lo, hi: m.hi }),
            None => Err(MetricError::Size("synthetic table is empty".into())),
        };
    }
    Ok(total / count as f64)
}

/// What `evaluate` computes beyond the always-on metrics.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub kl_bins: Option<usize>,
    /// Ground truth `target = f(...)`; enables `mse_symbolic`.
    pub equation: Option<String>,
    pub region: Option<RegionMask>,
    /// Columns for the Hausdorff shape metric. Defaults to the two numeric
    /// columns when the table has exactly two.
    pub hausdorff_columns: Option<(String, String)>,
    /// MLU target; defaults to the equation target, else the last numeric column.
    pub mlu_target: Option<String>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfigEcho {
    pub kl_bins: usize,
    pub equation: Option<String>,
    pub region: Option<RegionMask>,
    pub hausdorff_columns: Option<(String, String)>,
    pub mlu_target: String,
    pub seed: u64,
    pub n_real: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mse_symbolic: Option<f64>,
    pub hausdorff: Option<f64>,
    pub nll: f64,
    pub kl: f64,
    pub dcr_mean: f64,
    pub dcr_zero_leaks: usize,
    pub mlu_rf_mape: f64,
    pub mlu_linreg_mape: f64,
    pub n_synthetic: usize,
    pub config: EvalConfigEcho,
}

impl MetricReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// `(name, value)` pairs in a fixed order, `None` for absent metrics.
    pub fn fields(&self) -> Vec<(&'static str, Option<f64>)> {
        vec![
            ("mse_symbolic", self.mse_symbolic),
            ("hausdorff", self.hausdorff),
            ("nll", Some(self.nll)),
            ("kl", Some(self.kl)),
            ("dcr_mean", Some(self.dcr_mean)),
            ("dcr_zero_leaks", Some(self.dcr_zero_leaks as f64)),
            ("mlu_rf_mape", Some(self.mlu_rf_mape)),
            ("mlu_linreg_mape", Some(self.mlu_linreg_mape)),
            ("n_synthetic", Some(self.n_synthetic as f64)),
        ]
    }

    /// Two aligned columns, metric name and value.
    pub fn render_table(&self) -> String {
        let fields = self.fields();
        let width = fields.iter().map(|(n, _)| n.len()).max().unwrap_or(0);
        let mut out = String::new();
        for (name, value) in fields {
            let shown = match value {
                Some(v) if v.fract() == 0.0 && v.abs() < 1e15 => format!("{v:.0}"),
                Some(v) => format!("{v:.6}"),
                None => "-".into(),
            };
            let _ = writeln!(out, "{name:<width$}  {shown:>14}");
        }
        out
    }
}

/// Computes every metric for `syn` against the real reference table.
pub fn evaluate(real: &Table, syn: &Table, opts: &EvalOptions) -> Result<MetricReport, MetricError> {
    let bins = opts.kl_bins.unwrap_or(DEFAULT_KL_BINS);
    let equation = opts
        .equation
        .as_deref()
        .map(Equation::parse)
        .transpose()
        .map_err(|e| MetricError::Config(e.to_string()))?;
    let mlu_target = match (&opts.mlu_target, &equation) {
        (Some(t), _) => t.clone(),
        (None, Some(eq)) => eq.target.clone(),
        (None, None) => real
            .numeric_column_names()
            .last()
            .map(|s| s.to_string())
            .ok_or_else(|| MetricError::Schema("real table has no numeric columns".into()))?,
    };
    let mse = match &equation {
        Some(eq) => Some(mse_symbolic(syn, &eq.expr, &eq.target, opts.region.as_ref())?),
        None => None,
    };
    let hausdorff_columns = opts.hausdorff_columns.clone().or_else(|| {
        let cols = real.numeric_column_names();
        (cols.len() == 2 && cols.iter().all(|c| syn.column(c).is_some_and(|s| s.is_numeric())))
            .then(|| (cols[0].to_string(), cols[1].to_string()))
    });
    let hd = match &hausdorff_columns {
        Some((x, y)) => Some(hausdorff(&points2(real, x, y)?, &points2(syn, x, y)?)?),
        None => None,
    };
    let d = dcr(real, syn)?;
    Ok(MetricReport {
        mse_symbolic: mse,
        hausdorff: hd,
        nll: nll_kde(real, syn)?,
        kl: kl_divergence(real, syn, bins)?,
        dcr_mean: d.mean,
        dcr_zero_leaks: d.zero_leaks,
        mlu_rf_mape: mlu(syn, real, &mlu_target, MluModel::RandomForest, opts.seed)?,
        mlu_linreg_mape: mlu(syn, real, &mlu_target, MluModel::LinearRegression, opts.seed)?,
        n_synthetic: syn.len(),
        config: EvalConfigEcho {
            kl_bins: bins,
            equation: equation.map(|e| e.to_string()),
            region: opts.region.clone(),
            hausdorff_columns,
            mlu_target,
            seed: opts.seed,
            n_real: real.len(),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symexpr::parse_expr;

    fn cubic() -> Expr {
        parse_expr("x^3-3x^2+1").unwrap()
    }

    #[test]
    fn mse_examples() {
        let rows: Vec<Vec<f64>> = (0..20)
            .map(|i| {
                let x = -1.0 + 0.2 * i as f64;
                vec![x, x.powi(3) - 3.0 * x * x + 1.0]
            })
            .collect();
        let t = Table::from_numeric(&["x", "y"], rows).unwrap();
        assert!(mse_symbolic(&t, &cubic(), "y", None).unwrap() < 1e-24);
        let one = Table::from_numeric(&["x", "y"], vec![vec![0.0, 2.0]]).unwrap();
        assert_eq!(mse_symbolic(&one, &cubic(), "y", None).unwrap(), 1.0);
    }

    #[test]
    fn mse_region_and_errors() {
        let t = Table::from_numeric(&["x", "y"], vec![vec![0.0, 2.0], vec![3.0, 1.0]]).unwrap();
        let inside = RegionMask::new("x", -0.5, 0.5).unwrap();
        assert_eq!(mse_symbolic(&t, &cubic(), "y", Some(&inside)).unwrap(), 1.0);
        let away = RegionMask::new("x", 10.0, 11.0).unwrap();
        assert!(matches!(mse_symbolic(&t, &cubic(), "y", Some(&away)), Err(MetricError::RegionEmpty { .. })));
        assert!(mse_symbolic(&t, &parse_expr("z+1").unwrap(), "y", None).is_err());
        assert!(mse_symbolic(&t, &cubic(), "w", None).is_err());
    }

    #[test]
    fn self_evaluation() {
        let rows: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64, 2.0 * i as f64 + 1.0]).collect();
        let t = Table::from_numeric(&["x", "y"], rows).unwrap();
        let opts = EvalOptions { equation: Some("y = 2x+1".into()), ..Default::default() };
        let r = evaluate(&t, &t, &opts).unwrap();
        assert_eq!(r.dcr_mean, 0.0);
        assert_eq!(r.dcr_zero_leaks, 40);
        assert_eq!(r.hausdorff, Some(0.0));
        assert_eq!(r.mse_symbolic, Some(0.0));
        assert!(r.kl <= 1e-6);
        assert!(r.mlu_linreg_mape <= 1e-6);
        assert_eq!(r.config.mlu_target, "y");
        assert!(r.render_table().contains("dcr_zero_leaks"));
    }
}
