//! Scaling sweep over (knowledge level × ICL size × trial) and the example
//! savings computed from it.

use std::collections::{BTreeMap, VecDeque};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::config::{LoadedDataset, MetricSelector, ReferenceCell, SweepConfig};
use crate::error::ExperimentError;
use crate::generation::{build_backend, generate_table, Backend, BackendConfig, GenerateOptions};
use crate::knowledge::KnowledgeLevel;
use crate::metrics::{evaluate, EvalOptions, MetricReport};
use crate::row_text::ParseReport;
use crate::store::{derive_seed, write_atomic};
use crate::table::{load_csv, sample_rows, to_csv_string, Table};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub level: KnowledgeLevel,
    pub icl_n: usize,
    pub trial: usize,
    pub seed: u64,
    pub status: CellStatus,
    pub error: Option<String>,
    pub parse: ParseReport,
    pub metrics: Option<MetricReport>,
}

impl CellResult {
    pub fn id(&self) -> String {
        cell_id(self.level, self.icl_n, self.trial)
    }
}

pub fn cell_id(level: KnowledgeLevel, n: usize, trial: usize) -> String {
    format!("{level}-n{n}-t{trial}")
}

/// Seed of one cell, independent of every other cell.
pub fn cell_seed(run_seed: u64, level: KnowledgeLevel, n: usize, trial: usize) -> u64 {
    derive_seed(run_seed, &[level.as_str(), &n.to_string(), &trial.to_string()])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SavingsEntry {
    pub level: KnowledgeLevel,
    /// Interpolated ICL count reaching the reference quality.
    pub n_star: Option<f64>,
    /// `1 − n*/N_ref`; `None` when the level never reaches the reference.
    pub savings: Option<f64>,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub dataset: String,
    pub metric: MetricSelector,
    pub reference: Option<ReferenceCell>,
    /// Cells ordered by (level, icl_n, trial) as configured.
    pub cells: Vec<CellResult>,
    pub savings: Vec<SavingsEntry>,
    pub failed_cells: usize,
    pub failed: bool,
}

impl SweepResult {
    /// `Err` when more than half of the cells failed.
    pub fn check(&self) -> Result<(), ExperimentError> {
        if self.failed {
            Err(ExperimentError::SweepFailed { failed: self.failed_cells, total: self.cells.len() })
        } else {
            Ok(())
        }
    }

    /// Mean metric per (level, n) over successful trials.
    pub fn curve(&self, level: KnowledgeLevel, metric: MetricSelector) -> Vec<(usize, f64)> {
        let mut acc: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
        for c in self.cells.iter().filter(|c| c.level == level) {
            if let Some(v) = c.metrics.as_ref().and_then(|m| metric.pick(m)) {
                let e = acc.entry(c.icl_n).or_insert((0.0, 0));
                e.0 += v;
                e.1 += 1;
            }
        }
        acc.into_iter().map(|(n, (s, k))| (n, s / k as f64)).collect()
    }

    pub fn levels(&self) -> Vec<KnowledgeLevel> {
        let mut v: Vec<KnowledgeLevel> = self.cells.iter().map(|c| c.level).collect();
        v.dedup();
        v
    }
}

/// First ICL count at which a piecewise-linear curve drops to `target`.
fn first_crossing(curve: &[(usize, f64)], target: f64) -> Option<f64> {
    let (n0, v0) = *curve.first()?;
    if v0 <= target {
        return Some(n0 as f64);
    }
    curve.windows(2).find_map(|w| {
        let ((na, va), (nb, vb)) = (w[0], w[1]);
        (vb <= target).then(|| {
            let t = if va == vb { 1.0 } else { (va - target) / (va - vb) };
            na as f64 + t * (nb as f64 - na as f64)
        })
    })
}

/// Fraction of ICL examples each level saves relative to the reference
/// cell. The reference level itself is 0 by definition.
pub fn compute_savings(
    result: &SweepResult,
    metric: MetricSelector,
    reference: ReferenceCell,
) -> Result<Vec<SavingsEntry>, ExperimentError> {
    let ref_curve = result.curve(reference.level, metric);
    let target = ref_curve
        .iter()
        .find(|(n, _)| *n == reference.n)
        .map(|(_, v)| *v)
        .ok_or_else(|| {
            ExperimentError::Config(format!(
                "reference cell ({}, {}) has no successful `{}` values",
                reference.level,
                reference.n,
                metric.as_str()
            ))
        })?;
    let n_ref = reference.n as f64;
    let mut out = Vec::new();
    for level in result.levels() {
        let curve = result.curve(level, metric);
        let entry = if level == reference.level {
            SavingsEntry { level, n_star: Some(n_ref), savings: Some(0.0), note: "reference".into() }
        } else if curve.len() < 2 {
            SavingsEntry { level, n_star: None, savings: None, note: "fewer than 2 ICL sizes with results".into() }
        } else {
            match first_crossing(&curve, target) {
                Some(n_star) => SavingsEntry {
                    level,
                    n_star: Some(n_star),
                    savings: Some(1.0 - n_star / n_ref),
                    note: String::new(),
                },
                None => SavingsEntry {
                    level,
                    n_star: None,
                    savings: None,
                    note: "never reaches reference quality".into(),
                },
            }
        };
        out.push(entry);
    }
    Ok(out)
}

struct CellJob {
    level: KnowledgeLevel,
    n: usize,
    trial: usize,
}

struct SweepContext<'a> {
    cfg: &'a SweepConfig,
    data: &'a LoadedDataset,
    train: &'a Table,
    test: &'a Table,
    backend: &'a dyn Backend,
    /// Per-cell view of the backend config: requests within a cell run
    /// one at a time because cells themselves run concurrently.
    cell_backend_cfg: BackendConfig,
    out_dir: &'a Path,
}

impl SweepContext<'_> {
    fn cells_dir(&self) -> PathBuf {
        self.out_dir.join("cells")
    }

    fn run_cell(&self, job: &CellJob) -> (CellResult, Option<Table>) {
        let seed = cell_seed(self.cfg.seed, job.level, job.n, job.trial);
        let mut cell = CellResult {
            level: job.level,
            icl_n: job.n,
            trial: job.trial,
            seed,
            status: CellStatus::Failed,
            error: None,
            parse: ParseReport::default(),
            metrics: None,
        };
        match self.try_cell(job, seed, &mut cell) {
            Ok(syn) => {
                cell.status = CellStatus::Ok;
                (cell, Some(syn))
            }
            Err(e) => {
                tracing::warn!(cell = %cell.id(), error = %e, "sweep cell failed");
                cell.error = Some(e.to_string());
                (cell, None)
            }
        }
    }

    fn try_cell(&self, job: &CellJob, seed: u64, cell: &mut CellResult) -> Result<Table, ExperimentError> {
        // ICL rows depend on (n, trial) only, so levels are compared on
        // the same examples.
        let icl_seed = derive_seed(self.cfg.seed, &["icl", &job.n.to_string(), &job.trial.to_string()]);
        let icl = sample_rows(self.train, job.n, icl_seed)?;
        let spec = self.data.knowledge.clone().with_level(job.level).resolve(self.train)?;
        let opts = GenerateOptions {
            chunk_size: self.cfg.chunk_size,
            rows_per_chunk: self.cfg.rows_per_chunk,
            precision: self.cfg.precision,
            seed,
            transcripts_dir: Some(self.out_dir.join("transcripts")),
        };
        let (syn, report) = generate_table(&icl, &spec, &opts, self.backend, &self.cell_backend_cfg)?;
        cell.parse = report.totals;
        let eval = EvalOptions {
            kl_bins: self.cfg.kl_bins,
            equation: self.data.equation.as_ref().map(|e| e.to_string()),
            seed,
            ..Default::default()
        };
        cell.metrics = Some(evaluate(self.test, &syn, &eval)?);
        Ok(syn)
    }

    fn persist(&self, cell: &CellResult, syn: Option<&Table>) -> Result<(), ExperimentError> {
        let dir = self.cells_dir();
        let io = |e: std::io::Error| ExperimentError::Io(format!("{}: {e}", dir.display()));
        if let Some(t) = syn {
            write_atomic(&dir.join(format!("{}.csv", cell.id())), to_csv_string(t).as_bytes()).map_err(io)?;
        }
        let json = serde_json::to_string_pretty(cell).expect("cell serializes");
        write_atomic(&dir.join(format!("{}.json", cell.id())), json.as_bytes()).map_err(io)
    }

    /// A previously completed cell, if its record is intact.
    fn resume(&self, job: &CellJob) -> Option<CellResult> {
        let path = self.cells_dir().join(format!("{}.json", cell_id(job.level, job.n, job.trial)));
        let text = std::fs::read_to_string(path).ok()?;
        let cell: CellResult = serde_json::from_str(&text).ok()?;
        let expected = cell_seed(self.cfg.seed, job.level, job.n, job.trial);
        (cell.status == CellStatus::Ok && cell.seed == expected).then_some(cell)
    }
}

/// Synthetic table saved for a finished cell, if any.
pub fn load_cell_table(out_dir: &Path, cell: &CellResult) -> Option<Table> {
    load_csv(out_dir.join("cells").join(format!("{}.csv", cell.id())), None).ok()
}

/// Runs every cell of the grid, persisting each cell as it finishes.
/// Cells already completed under `out_dir/cells` are reused, so an
/// interrupted sweep resumes where it stopped.
pub fn run_sweep(cfg: &SweepConfig, out_dir: &Path) -> Result<SweepResult, ExperimentError> {
    cfg.validate()?;
    let data = cfg.dataset.load()?;
    let (train, test) = data.split(cfg.dataset.test_fraction, derive_seed(cfg.seed, &["split"]))?;
    let backend_cfg = data.backend_for(&cfg.backend);
    let backend = build_backend(&backend_cfg).map_err(|e| ExperimentError::Config(e.to_string()))?;
    std::fs::create_dir_all(out_dir.join("cells")).map_err(|e| ExperimentError::Io(e.to_string()))?;

    let ctx = SweepContext {
        cfg,
        data: &data,
        train: &train,
        test: &test,
        backend: backend.as_ref(),
        cell_backend_cfg: BackendConfig { max_in_flight: 1, ..backend_cfg.clone() },
        out_dir,
    };
    let mut jobs = Vec::new();
    for &level in &cfg.levels {
        for &n in &cfg.icl_sizes {
            for trial in 0..cfg.trials {
                jobs.push(CellJob { level, n, trial });
            }
        }
    }
    let mut slots: Vec<Option<CellResult>> = jobs.iter().map(|j| ctx.resume(j)).collect();
    let pending: VecDeque<usize> = (0..jobs.len()).filter(|&i| slots[i].is_none()).collect();
    let queue = Mutex::new(pending);
    let done = Mutex::new(Vec::new());
    let io_error = Mutex::new(None);
    let workers = backend_cfg.max_in_flight.max(1);
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let Some(i) = queue.lock().expect("queue lock").pop_front() else { break };
                let (cell, syn) = ctx.run_cell(&jobs[i]);
                if let Err(e) = ctx.persist(&cell, syn.as_ref()) {
                    io_error.lock().expect("error lock").get_or_insert(e);
                }
                done.lock().expect("done lock").push((i, cell));
            });
        }
    });
    if let Some(e) = io_error.into_inner().expect("error lock") {
        return Err(e);
    }
    for (i, cell) in done.into_inner().expect("done lock") {
        slots[i] = Some(cell);
    }
    let cells: Vec<CellResult> = slots.into_iter().map(|c| c.expect("every cell ran")).collect();
    let failed_cells = cells.iter().filter(|c| c.status == CellStatus::Failed).count();
    let metric = cfg.metric.unwrap_or(if data.equation.is_some() {
        MetricSelector::MseSymbolic
    } else {
        MetricSelector::Kl
    });
    let mut result = SweepResult {
        dataset: data.name.clone(),
        metric,
        reference: cfg.reference_cell(),
        cells,
        savings: Vec::new(),
        failed: 2 * failed_cells > jobs.len(),
        failed_cells,
    };
    if let Some(reference) = result.reference {
        match compute_savings(&result, metric, reference) {
            Ok(s) => result.savings = s,
            Err(e) => tracing::warn!(error = %e, "savings not computed"),
        }
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic_result(curves: &[(KnowledgeLevel, &[(usize, f64)])]) -> SweepResult {
        let mut cells = Vec::new();
        for (level, curve) in curves {
            for &(n, v) in curve.iter() {
                let cfg = crate::metrics::EvalConfigEcho {
                    kl_bins: 20,
                    equation: None,
                    region: None,
                    hausdorff_columns: None,
                    mlu_target: "y".into(),
                    seed: 0,
                    n_real: 1,
                };
                cells.push(CellResult {
                    level: *level,
                    icl_n: n,
                    trial: 0,
                    seed: 0,
                    status: CellStatus::Ok,
                    error: None,
                    parse: ParseReport::default(),
                    metrics: Some(MetricReport {
                        mse_symbolic: Some(v),
                        hausdorff: None,
                        nll: 0.0,
                        kl: 0.0,
                        dcr_mean: 0.0,
                        dcr_zero_leaks: 0,
                        mlu_rf_mape: 0.0,
                        mlu_linreg_mape: 0.0,
                        n_synthetic: 1,
                        config: cfg,
                    }),
                });
            }
        }
        SweepResult {
            dataset: "t".into(),
            metric: MetricSelector::MseSymbolic,
            reference: None,
            cells,
            savings: vec![],
            failed_cells: 0,
            failed: false,
        }
    }

    const REF: ReferenceCell = ReferenceCell { level: KnowledgeLevel::None, n: 100 };

    #[test]
    fn savings_examples() {
        let none: &[(usize, f64)] = &[(20, 5.0), (60, 3.0), (100, 1.0)];
        let r = synthetic_result(&[
            (KnowledgeLevel::None, none),
            (KnowledgeLevel::Statistical, none),
            (KnowledgeLevel::Semantic, &[(20, 3.0), (60, 1.0), (100, 0.5)]),
            (KnowledgeLevel::Symbolic, &[(20, 9.0), (60, 8.0), (100, 7.0)]),
        ]);
        let s = compute_savings(&r, MetricSelector::MseSymbolic, REF).unwrap();
        assert_eq!(s[0].savings, Some(0.0));
        assert_eq!(s[1].savings, Some(0.0));
        assert!((s[2].savings.unwrap() - 0.4).abs() < 1e-12);
        assert_eq!(s[3].savings, None);
        assert!(s[3].note.contains("never"));
    }

    #[test]
    fn crossing_is_first_and_interpolated() {
        assert_eq!(first_crossing(&[(10, 4.0), (20, 2.0), (30, 3.0), (40, 1.0)], 3.0), Some(15.0));
        assert_eq!(first_crossing(&[(10, 0.5), (20, 2.0)], 1.0), Some(10.0));
        assert_eq!(first_crossing(&[(10, 5.0), (20, 4.0)], 1.0), None);
    }

    #[test]
    fn reference_against_itself_is_zero_even_when_non_monotone() {
        let r = synthetic_result(&[(KnowledgeLevel::None, &[(20, 1.0), (60, 3.0), (100, 2.0)])]);
        let s = compute_savings(&r, MetricSelector::MseSymbolic, REF).unwrap();
        assert_eq!(s[0].savings, Some(0.0));
    }

    #[test]
    fn missing_reference_is_an_error() {
        let r = synthetic_result(&[(KnowledgeLevel::Semantic, &[(20, 1.0), (100, 2.0)])]);
        assert!(compute_savings(&r, MetricSelector::MseSymbolic, REF).is_err());
    }
}
