//! Chunked knowledge-guided generation and noise-and-refix.
//!
//! The ICL pool is cut into contiguous chunks of `k` rows; each chunk becomes
//! one query (instruction, knowledge block, the chunk's rows, a request for
//! `m` rows). Queries run concurrently up to `max_in_flight`; responses are
//! parsed and merged afterwards in chunk order, so the output never depends
//! on completion order.

pub mod backend;
pub mod stub;

use std::collections::HashSet;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

pub use backend::{
    backend_generate, build_backend, Backend, BackendConfig, BackendFailure, BackendKind, Completion, ReplayStore,
    API_KEY_ENV,
};
pub use stub::{LevelNoise, StubOracle, StubParams};

use crate::error::{BackendError, GenerationError};
use crate::knowledge::{build_prompt, build_refix_prompt, KnowledgeSpec, PromptBundle, TEMPLATE_VERSION};
use crate::row_text::{parse_generated, serialize_rows, ParseReport, DEFAULT_PRECISION};
use crate::store::{content_hash, derive_seed};
use crate::table::{add_gaussian_noise, Provenance, Table};

pub const DEFAULT_CHUNK_SIZE: usize = 20;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkPlan {
    pub k: usize,
    pub c: usize,
    /// Row indices of each chunk, in table order.
    pub assignment: Vec<Vec<usize>>,
}

/// Contiguous partition of the ICL rows into `⌈n/k⌉` chunks.
pub fn plan_chunks(icl: &Table, k: usize) -> Result<ChunkPlan, GenerationError> {
    if k == 0 {
        return Err(GenerationError::Plan("chunk size must be at least 1".into()));
    }
    if icl.is_empty() {
        return Err(GenerationError::Plan("ICL table is empty".into()));
    }
    let n = icl.len();
    let assignment: Vec<Vec<usize>> = (0..n).step_by(k).map(|s| (s..(s + k).min(n)).collect()).collect();
    Ok(ChunkPlan { k, c: assignment.len(), assignment })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChunkQuery {
    pub index: usize,
    pub prompt: PromptBundle,
    /// `prompt.render()`, the exact text sent.
    pub text: String,
    pub requested_rows: usize,
    pub seed: u64,
    pub transcript: Option<String>,
}

impl ChunkQuery {
    pub fn new(index: usize, prompt: PromptBundle, requested_rows: usize, seed: u64) -> Self {
        let text = prompt.render();
        Self { index, prompt, text, requested_rows, seed, transcript: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerateOptions {
    pub chunk_size: usize,
    /// Rows requested per chunk; defaults to the chunk size.
    pub rows_per_chunk: Option<usize>,
    pub precision: usize,
    pub seed: u64,
    /// Where prompts and responses are persisted, in replay-store layout.
    pub transcripts_dir: Option<PathBuf>,
}

impl Default for GenerateOptions {
    fn default() -> Self {
        Self {
            chunk_size: DEFAULT_CHUNK_SIZE,
            rows_per_chunk: None,
            precision: DEFAULT_PRECISION,
            seed: 0,
            transcripts_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkRecord {
    pub index: usize,
    pub input_rows: usize,
    pub requested_rows: usize,
    pub prompt_hash: String,
    pub response_hash: String,
    pub attempts: u32,
    pub parse: ParseReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefixSummary {
    pub sigma_fraction: f64,
    pub aligned_chunks: usize,
    /// Real rows whose serialized form appears verbatim in some prompt.
    pub real_rows_in_prompts: usize,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub template_version: String,
    pub mode: String,
    pub knowledge_level: String,
    pub backend: serde_json::Value,
    pub chunk_size: usize,
    pub rows_per_chunk: Option<usize>,
    pub precision: usize,
    pub seed: u64,
    pub input_rows: usize,
    pub chunks: Vec<ChunkRecord>,
    pub totals: ParseReport,
    pub n_output: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refix: Option<RefixSummary>,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

/// Runs every query, at most `max_in_flight` at a time, and returns the
/// outcomes indexed like `queries`.
pub fn run_queries(
    queries: &[ChunkQuery],
    backend: &dyn Backend,
    max_in_flight: usize,
    store: Option<&ReplayStore>,
) -> Vec<Result<Completion, BackendFailure>> {
    let slots: Mutex<Vec<Option<Result<Completion, BackendFailure>>>> = Mutex::new(vec![None; queries.len()]);
    let next = AtomicUsize::new(0);
    let workers = max_in_flight.max(1).min(queries.len().max(1));
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(q) = queries.get(i) else { break };
                let mut outcome = backend.complete(q);
                if let (Ok(c), Some(store)) = (&outcome, store) {
                    if let Err(e) = store.put(&q.text, &c.text) {
                        outcome = Err(BackendFailure { attempts: c.attempts, error: e });
                    }
                }
                slots.lock().unwrap_or_else(|p| p.into_inner())[i] = Some(outcome);
            });
        }
    });
    slots
        .into_inner()
        .unwrap_or_else(|p| p.into_inner())
        .into_iter()
        .map(|o| o.expect("every query visited"))
        .collect()
}

fn open_store(opts: &GenerateOptions) -> Result<Option<ReplayStore>, GenerationError> {
    opts.transcripts_dir
        .as_ref()
        .map(ReplayStore::open)
        .transpose()
        .map_err(|e| GenerationError::Io(e.to_string()))
}

fn first_failure(outcomes: &[Result<Completion, BackendFailure>]) -> Option<GenerationError> {
    outcomes.iter().enumerate().find_map(|(i, o)| match o {
        Err(f) => Some(GenerationError::Backend { chunk: i, attempts: f.attempts, source: f.error.clone() }),
        Ok(_) => None,
    })
}

struct Assembled {
    table: Table,
    chunks: Vec<ChunkRecord>,
    totals: ParseReport,
    per_chunk: Vec<Table>,
}

fn assemble(
    template: &Table,
    queries: &[ChunkQuery],
    inputs: &[usize],
    outcomes: Vec<Result<Completion, BackendFailure>>,
) -> Result<Assembled, GenerationError> {
    let mut chunks = Vec::with_capacity(queries.len());
    let mut totals = ParseReport::default();
    let mut per_chunk = Vec::with_capacity(queries.len());
    for ((q, outcome), &input_rows) in queries.iter().zip(outcomes).zip(inputs) {
        let c = outcome.map_err(|f| GenerationError::Backend { chunk: q.index, attempts: f.attempts, source: f.error })?;
        let (rows, parse) = parse_generated(&c.text, template.schema());
        totals.absorb(&parse);
        chunks.push(ChunkRecord {
            index: q.index,
            input_rows,
            requested_rows: q.requested_rows,
            prompt_hash: content_hash(&q.text),
            response_hash: content_hash(&c.text),
            attempts: c.attempts,
            parse,
        });
        per_chunk.push(rows);
    }
    let table = template.empty_like().concat(per_chunk.iter())?.with_provenance(Provenance::Synthetic);
    Ok(Assembled { table, chunks, totals, per_chunk })
}

/// Generates a synthetic table from the ICL pool. `spec` must already carry
/// resolved statistical lines (computed on the full training table).
pub fn generate_table(
    icl: &Table,
    spec: &KnowledgeSpec,
    opts: &GenerateOptions,
    backend: &dyn Backend,
    backend_cfg: &BackendConfig,
) -> Result<(Table, RunReport), GenerationError> {
    let plan = plan_chunks(icl, opts.chunk_size)?;
    let m = opts.rows_per_chunk.unwrap_or(opts.chunk_size);
    if m == 0 {
        return Err(GenerationError::Config("rows per chunk must be at least 1".into()));
    }
    let mut queries = Vec::with_capacity(plan.c);
    let mut inputs = Vec::with_capacity(plan.c);
    for (i, idx) in plan.assignment.iter().enumerate() {
        let chunk = icl.select_rows(idx);
        let prompt = build_prompt(spec, &serialize_rows(&chunk, opts.precision), m)?;
        queries.push(ChunkQuery::new(i, prompt, m, opts.seed));
        inputs.push(idx.len());
    }
    let store = open_store(opts)?;
    let outcomes = run_queries(&queries, backend, backend_cfg.max_in_flight, store.as_ref());
    if let Some(err) = first_failure(&outcomes) {
        return Err(err);
    }
    let assembled = assemble(icl, &queries, &inputs, outcomes)?;
    let report = RunReport {
        template_version: TEMPLATE_VERSION.into(),
        mode: "generate".into(),
        knowledge_level: spec.active_level.to_string(),
        backend: backend_cfg.describe(),
        chunk_size: opts.chunk_size,
        rows_per_chunk: Some(m),
        precision: opts.precision,
        seed: opts.seed,
        input_rows: icl.len(),
        chunks: assembled.chunks,
        totals: assembled.totals,
        n_output: assembled.table.len(),
        refix: None,
    };
    Ok((assembled.table, report))
}

/// [`generate_table`] with a backend built from its config.
pub fn generate_table_with_config(
    icl: &Table,
    spec: &KnowledgeSpec,
    opts: &GenerateOptions,
    cfg: &BackendConfig,
) -> Result<(Table, RunReport), GenerationError> {
    let backend = build_backend(cfg).map_err(backend_config_error)?;
    generate_table(icl, spec, opts, backend.as_ref(), cfg)
}

fn backend_config_error(e: BackendError) -> GenerationError {
    GenerationError::Config(e.to_string())
}

#[derive(Debug, Clone)]
pub struct RefixOutcome {
    pub refixed: Table,
    pub noised: Table,
    pub report: RunReport,
}

/// Perturbs `real` with Gaussian noise, then asks the backend to correct the
/// noised rows chunk by chunk using the knowledge block. Only noised rows
/// ever reach a prompt.
pub fn noise_and_refix(
    real: &Table,
    spec: &KnowledgeSpec,
    sigma_fraction: f64,
    opts: &GenerateOptions,
    backend: &dyn Backend,
    backend_cfg: &BackendConfig,
) -> Result<RefixOutcome, GenerationError> {
    let noised = add_gaussian_noise(real, sigma_fraction, derive_seed(opts.seed, &["noise"]))?;
    let plan = plan_chunks(&noised, opts.chunk_size)?;
    let mut queries = Vec::with_capacity(plan.c);
    let mut inputs = Vec::with_capacity(plan.c);
    for (i, idx) in plan.assignment.iter().enumerate() {
        let chunk = noised.select_rows(idx);
        let prompt = build_refix_prompt(spec, &serialize_rows(&chunk, opts.precision))?;
        queries.push(ChunkQuery::new(i, prompt, idx.len(), opts.seed));
        inputs.push(idx.len());
    }
    let store = open_store(opts)?;
    let outcomes = run_queries(&queries, backend, backend_cfg.max_in_flight, store.as_ref());
    if let Some(err) = first_failure(&outcomes) {
        return Err(err);
    }
    let assembled = assemble(real, &queries, &inputs, outcomes)?;
    let aligned_chunks = assembled
        .per_chunk
        .iter()
        .zip(&inputs)
        .filter(|(t, &n)| t.len() == n)
        .count();

    let real_sentences: HashSet<String> =
        serialize_rows(real, opts.precision).into_iter().map(|s| s.0).collect();
    let mut exposed = HashSet::new();
    for q in &queries {
        for line in q.text.lines() {
            if real_sentences.contains(line) {
                exposed.insert(line.to_string());
            }
        }
    }
    let note = if exposed.is_empty() {
        "the raw real table was never placed in any prompt; only noised rows were sent".to_string()
    } else {
        format!("{} real rows appear verbatim in prompts (noise too small to perturb them)", exposed.len())
    };
    let report = RunReport {
        template_version: TEMPLATE_VERSION.into(),
        mode: "refix".into(),
        knowledge_level: spec.active_level.to_string(),
        backend: backend_cfg.describe(),
        chunk_size: opts.chunk_size,
        rows_per_chunk: None,
        precision: opts.precision,
        seed: opts.seed,
        input_rows: real.len(),
        chunks: assembled.chunks,
        totals: assembled.totals,
        n_output: assembled.table.len(),
        refix: Some(RefixSummary {
            sigma_fraction,
            aligned_chunks,
            real_rows_in_prompts: exposed.len(),
            note,
        }),
    };
    Ok(RefixOutcome { refixed: assembled.table, noised, report })
}
