//! OOD holdout, knowledge ablation and noise-and-refix harnesses.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{AblationConfig, LoadedDataset, OodConfig, RefixConfig};
use crate::error::{ExperimentError, MetricError};
use crate::generation::{build_backend, generate_table, noise_and_refix, Backend, BackendConfig, GenerateOptions, RunReport};
use crate::knowledge::KnowledgeLevel;
use crate::metrics::{dcr, mse_symbolic};
use crate::store::derive_seed;
use crate::symexpr::Equation;
use crate::table::{apply_mask, masked_region, sample_rows, Table};

fn require_equation(data: &LoadedDataset) -> Result<&Equation, ExperimentError> {
    data.equation.as_ref().ok_or_else(|| {
        ExperimentError::Config(format!("dataset `{}` has no symbolic ground truth", data.name))
    })
}

fn make_backend(data: &LoadedDataset, cfg: &BackendConfig) -> Result<(Box<dyn Backend>, BackendConfig), ExperimentError> {
    let cfg = data.backend_for(cfg);
    let backend = build_backend(&cfg).map_err(|e| ExperimentError::Config(e.to_string()))?;
    Ok((backend, cfg))
}

fn transcripts(out_dir: Option<&Path>) -> Option<std::path::PathBuf> {
    out_dir.map(|d| d.join("transcripts"))
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| s / n as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OodSeedResult {
    pub seed: u64,
    pub n_synthetic: usize,
    pub mse_overall: Option<f64>,
    /// `None` when the generated table has no rows inside the region.
    pub mse_region: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OodLevelResult {
    pub level: KnowledgeLevel,
    pub mean_mse_overall: Option<f64>,
    pub mean_mse_region: Option<f64>,
    pub per_seed: Vec<OodSeedResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OodResult {
    pub dataset: String,
    pub equation: String,
    pub mask: crate::table::RegionMask,
    pub pool_rows: usize,
    pub region_rows: usize,
    pub levels: Vec<OodLevelResult>,
}

/// Holds out a region of the input space: the ICL pool excludes it, while
/// the statistical tier still states the full ranges of the training
/// table. Reports MSE overall and inside the held-out region.
pub fn run_ood(cfg: &OodConfig, out_dir: Option<&Path>) -> Result<OodResult, ExperimentError> {
    cfg.validate()?;
    let data = cfg.dataset.load()?;
    let eq = require_equation(&data)?.clone();
    let train = &data.table;
    let region = masked_region(train, &cfg.mask)?;
    if region.is_empty() {
        return Err(ExperimentError::Config(format!(
            "mask {} ∈ [{}, {}] contains no rows of `{}`",
            cfg.mask.column, cfg.mask.lo, cfg.mask.hi, data.name
        )));
    }
    let pool = apply_mask(train, &cfg.mask)?;
    if pool.is_empty() {
        return Err(ExperimentError::Config("mask covers every row; nothing left for the ICL pool".into()));
    }
    let (backend, backend_cfg) = make_backend(&data, &cfg.backend)?;
    let mut levels = Vec::new();
    for &level in &cfg.levels {
        let spec = data.knowledge.clone().with_level(level).resolve(train)?;
        let mut per_seed = Vec::new();
        for seed in cfg.seeds.seeds() {
            let icl = match cfg.icl_n {
                Some(n) => sample_rows(&pool, n.min(pool.len()), derive_seed(seed, &["ood-icl"]))?,
                None => pool.clone(),
            };
            let opts = GenerateOptions {
                chunk_size: cfg.chunk_size,
                rows_per_chunk: cfg.rows_per_chunk,
                precision: cfg.precision,
                seed: derive_seed(seed, &["ood", level.as_str()]),
                transcripts_dir: transcripts(out_dir),
            };
            let (syn, _) = generate_table(&icl, &spec, &opts, backend.as_ref(), &backend_cfg)?;
            let overall = mse_symbolic(&syn, &eq.expr, &eq.target, None);
            let inside = mse_symbolic(&syn, &eq.expr, &eq.target, Some(&cfg.mask));
            let error = match (&overall, &inside) {
                (Err(e), _) | (_, Err(e)) => Some(e.to_string()),
                _ => None,
            };
            per_seed.push(OodSeedResult {
                seed,
                n_synthetic: syn.len(),
                mse_overall: overall.ok(),
                mse_region: inside.ok(),
                error,
            });
        }
        levels.push(OodLevelResult {
            level,
            mean_mse_overall: mean(per_seed.iter().filter_map(|s| s.mse_overall)),
            mean_mse_region: mean(per_seed.iter().filter_map(|s| s.mse_region)),
            per_seed,
        });
    }
    Ok(OodResult {
        dataset: data.name,
        equation: eq.to_string(),
        mask: cfg.mask.clone(),
        pool_rows: pool.len(),
        region_rows: region.len(),
        levels,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trend {
    Improved,
    Regressed,
    Flat,
}

impl Trend {
    pub fn arrow(self) -> &'static str {
        match self {
            Trend::Improved => "↓",
            Trend::Regressed => "↑",
            Trend::Flat => "∼",
        }
    }
}

/// Trend of an error metric from `prev` to `cur`: within `threshold`
/// relative change is flat.
pub fn trend(prev: f64, cur: f64, threshold: f64) -> Trend {
    let scale = prev.abs();
    let delta = cur - prev;
    if delta.abs() <= threshold * scale {
        Trend::Flat
    } else if delta < 0.0 {
        Trend::Improved
    } else {
        Trend::Regressed
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub level: KnowledgeLevel,
    pub mean_mse: Option<f64>,
    pub per_seed: Vec<Option<f64>>,
    /// Relative to the previous level of the same fixture.
    pub trend: Option<Trend>,
    pub errors: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub fixture: String,
    pub equation: String,
    pub cells: Vec<AblationCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationResult {
    pub icl_n: usize,
    pub threshold: f64,
    pub seeds: Vec<u64>,
    pub levels: Vec<KnowledgeLevel>,
    pub rows: Vec<AblationRow>,
}

/// MSE against the symbolic ground truth per (fixture, level) at a fixed
/// ICL size. Within a seed every level sees the same ICL rows.
pub fn run_ablation(cfg: &AblationConfig, out_dir: Option<&Path>) -> Result<AblationResult, ExperimentError> {
    cfg.validate()?;
    let seeds = cfg.seeds.seeds();
    let mut rows = Vec::new();
    for fixture in &cfg.fixtures {
        let data = fixture.load()?;
        let eq = require_equation(&data)?.clone();
        let (train, _) = data.split(fixture.test_fraction, derive_seed(seeds[0], &["split", &data.name]))?;
        let (backend, backend_cfg) = make_backend(&data, &cfg.backend)?;
        let mut cells: Vec<AblationCell> = Vec::new();
        for &level in &cfg.levels {
            let spec = data.knowledge.clone().with_level(level).resolve(&train)?;
            let mut per_seed = Vec::new();
            let mut errors = Vec::new();
            for &seed in &seeds {
                let outcome = (|| -> Result<f64, ExperimentError> {
                    let icl = sample_rows(&train, cfg.icl_n, derive_seed(seed, &["ablation-icl", &data.name]))?;
                    let opts = GenerateOptions {
                        chunk_size: cfg.chunk_size,
                        rows_per_chunk: cfg.rows_per_chunk,
                        precision: cfg.precision,
                        seed: derive_seed(seed, &["ablation", &data.name, level.as_str()]),
                        transcripts_dir: transcripts(out_dir),
                    };
                    let (syn, _) = generate_table(&icl, &spec, &opts, backend.as_ref(), &backend_cfg)?;
                    Ok(mse_symbolic(&syn, &eq.expr, &eq.target, None)?)
                })();
                match outcome {
                    Ok(v) => per_seed.push(Some(v)),
                    Err(e) => {
                        errors.push(format!("seed {seed}: {e}"));
                        per_seed.push(None);
                    }
                }
            }
            let mean_mse = mean(per_seed.iter().flatten().copied());
            let trend = match (cells.last().and_then(|c| c.mean_mse), mean_mse) {
                (Some(prev), Some(cur)) => Some(trend(prev, cur, cfg.threshold)),
                _ => None,
            };
            cells.push(AblationCell { level, mean_mse, per_seed, trend, errors });
        }
        rows.push(AblationRow { fixture: data.name.clone(), equation: eq.to_string(), cells });
    }
    Ok(AblationResult { icl_n: cfg.icl_n, threshold: cfg.threshold, seeds, levels: cfg.levels.clone(), rows })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefixResult {
    pub dataset: String,
    pub level: KnowledgeLevel,
    pub sigma_fraction: f64,
    pub n_rows: usize,
    pub dcr_noised: f64,
    pub dcr_refixed: f64,
    pub mse_noised: Option<f64>,
    pub mse_refixed: Option<f64>,
    pub report: RunReport,
}

pub struct RefixTables {
    pub noised: Table,
    pub refixed: Table,
}

/// Noise-and-refix on the full dataset; DCR of both tables is measured
/// against the real rows.
pub fn run_refix(cfg: &RefixConfig, out_dir: Option<&Path>) -> Result<(RefixResult, RefixTables), ExperimentError> {
    cfg.validate()?;
    let data = cfg.dataset.load()?;
    let real = &data.table;
    let spec = data.knowledge.clone().with_level(cfg.level).resolve(real)?;
    let (backend, backend_cfg) = make_backend(&data, &cfg.backend)?;
    let opts = GenerateOptions {
        chunk_size: cfg.chunk_size,
        rows_per_chunk: None,
        precision: cfg.precision,
        seed: cfg.seed,
        transcripts_dir: transcripts(out_dir),
    };
    let outcome = noise_and_refix(real, &spec, cfg.sigma_fraction, &opts, backend.as_ref(), &backend_cfg)?;
    if outcome.refixed.is_empty() {
        return Err(MetricError::Size("the refix step returned no parseable rows".into()).into());
    }
    let mse = |t: &Table| -> Result<Option<f64>, ExperimentError> {
        match &data.equation {
            Some(eq) => Ok(Some(mse_symbolic(t, &eq.expr, &eq.target, None)?)),
            None => Ok(None),
        }
    };
    let result = RefixResult {
        dataset: data.name.clone(),
        level: cfg.level,
        sigma_fraction: cfg.sigma_fraction,
        n_rows: real.len(),
        dcr_noised: dcr(real, &outcome.noised)?.mean,
        dcr_refixed: dcr(real, &outcome.refixed)?.mean,
        mse_noised: mse(&outcome.noised)?,
        mse_refixed: mse(&outcome.refixed)?,
        report: outcome.report,
    };
    Ok((result, RefixTables { noised: outcome.noised, refixed: outcome.refixed }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trend_threshold() {
        assert_eq!(trend(0.75, 0.72, 0.05), Trend::Flat);
        assert_eq!(trend(0.75, 0.70, 0.05), Trend::Improved);
        assert_eq!(trend(0.14, 0.12, 0.05), Trend::Improved);
        assert_eq!(trend(0.72, 0.76, 0.05), Trend::Regressed);
        assert_eq!(trend(0.0, 0.0, 0.05), Trend::Flat);
        assert_eq!(trend(0.0, 0.1, 0.05), Trend::Regressed);
        assert_eq!(Trend::Flat.arrow(), "∼");
    }
}
