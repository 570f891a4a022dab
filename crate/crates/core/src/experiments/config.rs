//! Experiment config files (TOML). Relative paths resolve against the
//! directory of the config file.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::ExperimentError;
use crate::generation::BackendConfig;
use crate::knowledge::{load_knowledge_file, KnowledgeLevel, KnowledgeSpec};
use crate::metrics::MetricReport;
use crate::row_text::DEFAULT_PRECISION;
use crate::symexpr::Equation;
use crate::table::{load_csv, split_train_test, RegionMask, SchemaHint, Table};

fn default_test_fraction() -> f64 {
    0.2
}
fn default_trials() -> usize {
    5
}
fn default_chunk() -> usize {
    crate::generation::DEFAULT_CHUNK_SIZE
}
fn default_precision() -> usize {
    DEFAULT_PRECISION
}
fn default_all_levels() -> Vec<KnowledgeLevel> {
    KnowledgeLevel::ALL.to_vec()
}
fn default_icl_50() -> usize {
    50
}
fn default_threshold() -> f64 {
    0.05
}
fn default_sigma() -> f64 {
    0.1
}
fn default_refix_level() -> KnowledgeLevel {
    KnowledgeLevel::Symbolic
}
fn default_seed_count() -> usize {
    20
}

/// A data file plus the knowledge that describes it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    /// Display name; defaults to the data file stem.
    #[serde(default)]
    pub name: Option<String>,
    pub data: PathBuf,
    #[serde(default)]
    pub knowledge: Option<PathBuf>,
    /// Ground truth `target = f(...)`; defaults to the first symbolic
    /// equation of the knowledge file.
    #[serde(default)]
    pub equation: Option<String>,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    /// Columns to force categorical when loading.
    #[serde(default)]
    pub categorical: Vec<String>,
}

impl DatasetConfig {
    pub fn display_name(&self) -> String {
        self.name.clone().unwrap_or_else(|| {
            self.data.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "dataset".into())
        })
    }

    fn rebase(&mut self, base: &Path) {
        self.data = rebase(base, &self.data);
        self.knowledge = self.knowledge.as_ref().map(|k| rebase(base, k));
    }

    pub fn load(&self) -> Result<LoadedDataset, ExperimentError> {
        let hint = (!self.categorical.is_empty()).then(|| {
            let names: Vec<&str> = self.categorical.iter().map(String::as_str).collect();
            SchemaHint::categorical(&names)
        });
        let table = load_csv(&self.data, hint.as_ref())?;
        let knowledge = match &self.knowledge {
            Some(p) => load_knowledge_file(p)?,
            None => KnowledgeSpec::none(),
        };
        let equation = match (&self.equation, knowledge.symbolic.first()) {
            (Some(e), _) => Some(Equation::parse(e)?),
            (None, Some(e)) => Some(e.clone()),
            (None, None) => None,
        };
        if let Some(eq) = &equation {
            for v in eq.expr.variables().iter().chain([&eq.target]) {
                if !table.column(v).is_some_and(|c| c.is_numeric()) {
                    return Err(ExperimentError::Config(format!(
                        "equation `{eq}` names `{v}`, which is not a numeric column of {}",
                        self.data.display()
                    )));
                }
            }
        }
        Ok(LoadedDataset { name: self.display_name(), table, knowledge, equation })
    }
}

#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub name: String,
    pub table: Table,
    pub knowledge: KnowledgeSpec,
    pub equation: Option<Equation>,
}

impl LoadedDataset {
    pub fn split(&self, test_fraction: f64, seed: u64) -> Result<(Table, Table), ExperimentError> {
        Ok(split_train_test(&self.table, test_fraction, seed)?)
    }

    /// Backend config with the stub's ground truth defaulted to the
    /// dataset's equation.
    pub fn backend_for(&self, cfg: &BackendConfig) -> BackendConfig {
        let mut cfg = cfg.clone();
        if cfg.stub.ground_truth.is_none() {
            cfg.stub.ground_truth = self.equation.as_ref().map(|e| e.to_string());
        }
        cfg
    }
}

fn rebase(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Selects the quality metric a savings curve is computed on. Lower is
/// better for all of them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricSelector {
    MseSymbolic,
    Hausdorff,
    Nll,
    Kl,
    DcrMean,
    MluRfMape,
    MluLinregMape,
}

impl MetricSelector {
    pub fn pick(self, r: &MetricReport) -> Option<f64> {
        match self {
            MetricSelector::MseSymbolic => r.mse_symbolic,
            MetricSelector::Hausdorff => r.hausdorff,
            MetricSelector::Nll => Some(r.nll),
            MetricSelector::Kl => Some(r.kl),
            MetricSelector::DcrMean => Some(r.dcr_mean),
            MetricSelector::MluRfMape => Some(r.mlu_rf_mape),
            MetricSelector::MluLinregMape => Some(r.mlu_linreg_mape),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MetricSelector::MseSymbolic => "mse_symbolic",
            MetricSelector::Hausdorff => "hausdorff",
            MetricSelector::Nll => "nll",
            MetricSelector::Kl => "kl",
            MetricSelector::DcrMean => "dcr_mean",
            MetricSelector::MluRfMape => "mlu_rf_mape",
            MetricSelector::MluLinregMape => "mlu_linreg_mape",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceCell {
    pub level: KnowledgeLevel,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub dataset: DatasetConfig,
    pub levels: Vec<KnowledgeLevel>,
    pub icl_sizes: Vec<usize>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_chunk")]
    pub chunk_size: usize,
    #[serde(default)]
    pub rows_per_chunk: Option<usize>,
    #[serde(default = "default_precision")]
    pub precision: usize,
    #[serde(default)]
    pub seed: u64,
    /// Savings reference; defaults to level `none` at the largest size.
    #[serde(default)]
    pub reference: Option<ReferenceCell>,
    /// Savings metric; defaults to `mse_symbolic` when the dataset has an
    /// equation, else `kl`.
    #[serde(default)]
    pub metric: Option<MetricSelector>,
    #[serde(default)]
    pub kl_bins: Option<usize>,
    pub backend: BackendConfig,
}

impl SweepConfig {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.levels.is_empty() {
            return Err(ExperimentError::Config("sweep needs at least one knowledge level".into()));
        }
        if self.icl_sizes.is_empty() {
            return Err(ExperimentError::Config("icl_sizes is empty".into()));
        }
        if self.icl_sizes.windows(2).any(|w| w[0] >= w[1]) || self.icl_sizes[0] == 0 {
            return Err(ExperimentError::Config("icl_sizes must be positive and strictly increasing".into()));
        }
        if self.trials == 0 {
            return Err(ExperimentError::Config("trials must be at least 1".into()));
        }
        validate_common(self.chunk_size, self.rows_per_chunk, &self.backend)?;
        if let Some(r) = &self.reference {
            if !self.levels.contains(&r.level) || !self.icl_sizes.contains(&r.n) {
                return Err(ExperimentError::Config(format!(
                    "reference cell ({}, {}) is not part of the grid",
                    r.level, r.n
                )));
            }
        }
        Ok(())
    }

    pub fn reference_cell(&self) -> Option<ReferenceCell> {
        self.reference.or_else(|| {
            self.levels.contains(&KnowledgeLevel::None).then(|| ReferenceCell {
                level: KnowledgeLevel::None,
                n: *self.icl_sizes.last().expect("validated"),
            })
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedSet {
    #[serde(default)]
    pub base: u64,
    #[serde(default = "default_seed_count")]
    pub count: usize,
}

impl Default for SeedSet {
    fn default() -> Self {
        Self { base: 0, count: default_seed_count() }
    }
}

impl SeedSet {
    pub fn seeds(&self) -> Vec<u64> {
        (0..self.count as u64).map(|i| self.base + i).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OodConfig {
    pub dataset: DatasetConfig,
    pub mask: RegionMask,
    #[serde(default = "default_all_levels")]
    pub levels: Vec<KnowledgeLevel>,
    /// ICL rows drawn from the observed field; default: all of it.
    #[serde(default)]
    pub icl_n: Option<usize>,
    #[serde(default)]
    pub seeds: SeedSet,
    #[serde(default = "default_chunk")]
    pub chunk_size: usize,
    #[serde(default)]
    pub rows_per_chunk: Option<usize>,
    #[serde(default = "default_precision")]
    pub precision: usize,
    pub backend: BackendConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationConfig {
    pub fixtures: Vec<DatasetConfig>,
    #[serde(default = "default_all_levels")]
    pub levels: Vec<KnowledgeLevel>,
    #[serde(default = "default_icl_50")]
    pub icl_n: usize,
    #[serde(default)]
    pub seeds: SeedSet,
    #[serde(default = "default_chunk")]
    pub chunk_size: usize,
    #[serde(default)]
    pub rows_per_chunk: Option<usize>,
    #[serde(default = "default_precision")]
    pub precision: usize,
    /// Relative change below which the trend arrow is `∼`.
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    pub backend: BackendConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefixConfig {
    pub dataset: DatasetConfig,
    #[serde(default = "default_sigma")]
    pub sigma_fraction: f64,
    #[serde(default = "default_refix_level")]
    pub level: KnowledgeLevel,
    #[serde(default = "default_chunk")]
    pub chunk_size: usize,
    #[serde(default = "default_precision")]
    pub precision: usize,
    #[serde(default)]
    pub seed: u64,
    pub backend: BackendConfig,
}

fn validate_common(chunk: usize, rows_per_chunk: Option<usize>, backend: &BackendConfig) -> Result<(), ExperimentError> {
    if chunk == 0 {
        return Err(ExperimentError::Config("chunk_size must be at least 1".into()));
    }
    if rows_per_chunk == Some(0) {
        return Err(ExperimentError::Config("rows_per_chunk must be at least 1".into()));
    }
    backend.validate().map_err(|e| ExperimentError::Config(e.to_string()))
}

fn validate_levels(levels: &[KnowledgeLevel]) -> Result<(), ExperimentError> {
    if levels.is_empty() {
        return Err(ExperimentError::Config("at least one knowledge level is required".into()));
    }
    Ok(())
}

impl OodConfig {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        validate_levels(&self.levels)?;
        self.mask.validate()?;
        if self.seeds.count == 0 {
            return Err(ExperimentError::Config("seeds.count must be at least 1".into()));
        }
        validate_common(self.chunk_size, self.rows_per_chunk, &self.backend)
    }
}

impl AblationConfig {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        validate_levels(&self.levels)?;
        if self.fixtures.is_empty() {
            return Err(ExperimentError::Config("ablation needs at least one fixture".into()));
        }
        if self.seeds.count == 0 || self.icl_n == 0 {
            return Err(ExperimentError::Config("seeds.count and icl_n must be at least 1".into()));
        }
        if !(self.threshold >= 0.0) {
            return Err(ExperimentError::Config("threshold must be non-negative".into()));
        }
        validate_common(self.chunk_size, self.rows_per_chunk, &self.backend)
    }
}

impl RefixConfig {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        if !(self.sigma_fraction >= 0.0 && self.sigma_fraction.is_finite()) {
            return Err(ExperimentError::Config("sigma_fraction must be a finite non-negative number".into()));
        }
        validate_common(self.chunk_size, None, &self.backend)
    }
}

/// Config types that carry file paths to rebase.
pub trait ExperimentConfig: DeserializeOwned {
    fn rebase_paths(&mut self, base: &Path);
    fn check(&self) -> Result<(), ExperimentError>;
}

fn rebase_backend(b: &mut BackendConfig, base: &Path) {
    if let Some(d) = &b.replay_dir {
        b.replay_dir = Some(rebase(base, d));
    }
}

impl ExperimentConfig for SweepConfig {
    fn rebase_paths(&mut self, base: &Path) {
        self.dataset.rebase(base);
        rebase_backend(&mut self.backend, base);
    }
    fn check(&self) -> Result<(), ExperimentError> {
        self.validate()
    }
}

impl ExperimentConfig for OodConfig {
    fn rebase_paths(&mut self, base: &Path) {
        self.dataset.rebase(base);
        rebase_backend(&mut self.backend, base);
    }
    fn check(&self) -> Result<(), ExperimentError> {
        self.validate()
    }
}

impl ExperimentConfig for AblationConfig {
    fn rebase_paths(&mut self, base: &Path) {
        for f in &mut self.fixtures {
            f.rebase(base);
        }
        rebase_backend(&mut self.backend, base);
    }
    fn check(&self) -> Result<(), ExperimentError> {
        self.validate()
    }
}

impl ExperimentConfig for RefixConfig {
    fn rebase_paths(&mut self, base: &Path) {
        self.dataset.rebase(base);
        rebase_backend(&mut self.backend, base);
    }
    fn check(&self) -> Result<(), ExperimentError> {
        self.validate()
    }
}

/// Parses a config from TOML text; relative paths resolve against `base`.
pub fn parse_config<C: ExperimentConfig>(text: &str, base: &Path) -> Result<C, ExperimentError> {
    let mut cfg: C = toml::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))?;
    cfg.rebase_paths(base);
    cfg.check()?;
    Ok(cfg)
}

pub fn load_config<C: ExperimentConfig>(path: impl AsRef<Path>) -> Result<C, ExperimentError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| ExperimentError::Config(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_config(&text, base)
}
