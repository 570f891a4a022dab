mod common;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use common::{knowledge, load, rel_close};
use kgp_core::generation::*;
use kgp_core::knowledge::{load_knowledge_file, KnowledgeLevel, KnowledgeSpec};
use kgp_core::metrics::dcr;
use kgp_core::store::content_hash;
use kgp_core::table::{sample_rows, to_csv_string, Table};
use kgp_core::{BackendError, GenerationError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cubic(level: KnowledgeLevel) -> (Table, KnowledgeSpec) {
    let t = load("cubic");
    let spec = load_knowledge_file(knowledge("cubic")).unwrap().with_level(level).resolve(&t).unwrap();
    (t, spec)
}

fn stub_cfg() -> BackendConfig {
    BackendConfig::stub(StubParams::with_ground_truth("y = x^3-3x^2+1"))
}

fn opts(k: usize, m: usize, seed: u64) -> GenerateOptions {
    GenerateOptions { chunk_size: k, rows_per_chunk: Some(m), seed, ..GenerateOptions::default() }
}

/// Stub that sleeps a random amount before answering, so chunks complete
/// out of order.
struct Jittery {
    inner: StubOracle,
    seed: u64,
    calls: AtomicUsize,
}

impl Backend for Jittery {
    fn complete(&self, q: &ChunkQuery) -> Result<Completion, BackendFailure> {
        let call = self.calls.fetch_add(1, Ordering::SeqCst) as u64;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ (call << 8) ^ q.index as u64);
        std::thread::sleep(Duration::from_millis(rng.random_range(0..15)));
        self.inner.complete(q)
    }
}

#[test]
fn stub_generation_is_deterministic() {
    let (t, spec) = cubic(KnowledgeLevel::Symbolic);
    let icl = sample_rows(&t, 50, 11).unwrap();
    let cfg = stub_cfg();
    let run = || generate_table_with_config(&icl, &spec, &opts(25, 25, 3), &cfg).unwrap();
    let (a, ra) = run();
    let (b, rb) = run();
    assert_eq!(a.len(), 50);
    assert_eq!(ra.totals.dropped(), 0);
    assert_eq!(ra.chunks.len(), 2);
    assert_eq!(to_csv_string(&a), to_csv_string(&b));
    assert_eq!(ra.to_json(), rb.to_json());
    // Another seed gives other rows.
    let (c, _) = generate_table_with_config(&icl, &spec, &opts(25, 25, 4), &cfg).unwrap();
    assert_ne!(to_csv_string(&a), to_csv_string(&c));
}

#[test]
fn completion_order_does_not_matter() {
    let (t, spec) = cubic(KnowledgeLevel::Semantic);
    let icl = sample_rows(&t, 60, 5).unwrap();
    let params = StubParams::with_ground_truth("y = x^3-3x^2+1");
    let reference = {
        let cfg = BackendConfig { max_in_flight: 1, ..BackendConfig::stub(params.clone()) };
        let (tab, rep) = generate_table_with_config(&icl, &spec, &opts(5, 7, 9), &cfg).unwrap();
        (to_csv_string(&tab), rep.to_json())
    };
    for (trial, in_flight) in [(1u64, 3usize), (2, 8), (3, 12), (4, 8)] {
        let cfg = BackendConfig { max_in_flight: 1, ..BackendConfig::stub(params.clone()) };
        let backend = Jittery { inner: StubOracle::new(&params).unwrap(), seed: trial, calls: AtomicUsize::new(0) };
        let run_cfg = BackendConfig { max_in_flight: in_flight, ..cfg.clone() };
        let (tab, mut rep) = generate_table(&icl, &spec, &opts(5, 7, 9), &backend, &run_cfg).unwrap();
        // The report echoes the backend config; compare it against the
        // sequential run's config.
        rep.backend = cfg.describe();
        assert_eq!(to_csv_string(&tab), reference.0, "trial {trial}");
        assert_eq!(rep.to_json(), reference.1, "trial {trial}");
    }
}

#[test]
fn replay_reproduces_a_recorded_run() {
    let dir = tempfile::tempdir().unwrap();
    let (t, spec) = cubic(KnowledgeLevel::Statistical);
    let icl = sample_rows(&t, 40, 2).unwrap();
    let record = GenerateOptions { transcripts_dir: Some(dir.path().to_path_buf()), ..opts(10, 10, 1) };
    let (live, live_report) = generate_table_with_config(&icl, &spec, &record, &stub_cfg()).unwrap();
    assert!(dir.path().join("manifest.json").exists());

    let replay = BackendConfig::replay(dir.path());
    let (a, ra) = generate_table_with_config(&icl, &spec, &opts(10, 10, 1), &replay).unwrap();
    let (b, rb) = generate_table_with_config(&icl, &spec, &opts(10, 10, 1), &replay).unwrap();
    assert_eq!(to_csv_string(&a), to_csv_string(&live));
    assert_eq!(to_csv_string(&a), to_csv_string(&b));
    assert_eq!(ra.to_json(), rb.to_json());
    assert_eq!(ra.chunks, live_report.chunks);

    // A different prompt is a miss naming its hash.
    let err = generate_table_with_config(&icl, &spec, &opts(10, 11, 1), &replay).unwrap_err();
    match err {
        GenerationError::Backend { source: BackendError::ReplayMiss { hash }, .. } => assert_eq!(hash.len(), 64),
        other => panic!("expected a replay miss, got {other}"),
    }
}

#[test]
fn replay_can_record_misses_from_an_upstream() {
    let dir = tempfile::tempdir().unwrap();
    let (t, spec) = cubic(KnowledgeLevel::None);
    let icl = sample_rows(&t, 20, 2).unwrap();
    let cfg = BackendConfig { record: Some(Box::new(stub_cfg())), ..BackendConfig::replay(dir.path()) };
    let (a, _) = generate_table_with_config(&icl, &spec, &opts(10, 10, 1), &cfg).unwrap();
    let (b, _) = generate_table_with_config(&icl, &spec, &opts(10, 10, 1), &BackendConfig::replay(dir.path())).unwrap();
    assert_eq!(to_csv_string(&a), to_csv_string(&b));
}

#[test]
fn replay_store_layout() {
    let dir = tempfile::tempdir().unwrap();
    let store = ReplayStore::open(dir.path()).unwrap();
    let hash = store.put("prompt text", "response text").unwrap();
    assert_eq!(hash, content_hash("prompt text"));
    assert_eq!(store.get(&hash).unwrap().as_deref(), Some("response text"));
    assert_eq!(store.get(&content_hash("other")).unwrap(), None);
    let prompt = std::fs::read_to_string(dir.path().join("prompts").join(format!("{hash}.txt"))).unwrap();
    assert_eq!(prompt, "prompt text");
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["entries"][&hash], format!("prompts/{hash}.txt"));
}

#[test]
fn invalid_plans_fail_fast() {
    let (t, spec) = cubic(KnowledgeLevel::None);
    let cfg = stub_cfg();
    assert!(generate_table_with_config(&t.empty_like(), &spec, &opts(10, 10, 0), &cfg).is_err());
    assert!(generate_table_with_config(&t, &spec, &opts(0, 10, 0), &cfg).is_err());
    assert!(generate_table_with_config(&t, &spec, &opts(10, 0, 0), &cfg).is_err());
    // A stub without a ground truth is a configuration error.
    let bare = BackendConfig::stub(StubParams::default());
    assert!(matches!(generate_table_with_config(&t, &spec, &opts(10, 10, 0), &bare), Err(GenerationError::Config(_))));
    let plan = plan_chunks(&t.slice(0, 55), 20).unwrap();
    assert_eq!(plan.c, 3);
    assert_eq!(plan.assignment.iter().map(Vec::len).collect::<Vec<_>>(), vec![20, 20, 15]);
}

#[test]
fn refix_of_clean_data_is_identity() {
    let (t, spec) = cubic(KnowledgeLevel::None);
    let real = t.slice(0, 60);
    let stub = StubOracle::new(&StubParams::with_ground_truth("y = x^3-3x^2+1")).unwrap();
    let out = noise_and_refix(&real, &spec, 0.0, &opts(20, 20, 1), &stub, &stub_cfg()).unwrap();
    assert_eq!(out.noised.rows(), real.rows());
    assert_eq!(out.refixed.len(), real.len());
    for (a, b) in out.refixed.rows().iter().zip(real.rows()) {
        for (x, y) in a.iter().zip(b) {
            assert!(rel_close(x.as_f64().unwrap(), y.as_f64().unwrap(), 1e-5) || x == y);
        }
    }
    let refix = out.report.refix.unwrap();
    assert_eq!(refix.aligned_chunks, 3);
}

#[test]
fn refix_pulls_noised_rows_back_toward_the_data() {
    for level in [KnowledgeLevel::Statistical, KnowledgeLevel::Symbolic] {
        let (t, spec) = cubic(level);
        let stub = StubOracle::new(&StubParams::with_ground_truth("y = x^3-3x^2+1")).unwrap();
        let out = noise_and_refix(&t, &spec, 0.1, &opts(25, 25, 8), &stub, &stub_cfg()).unwrap();
        let before = dcr(&t, &out.noised).unwrap().mean;
        let after = dcr(&t, &out.refixed).unwrap().mean;
        assert!(after < before, "{level}: {after} !< {before}");
        // Only noised rows reach prompts.
        assert_eq!(out.report.refix.unwrap().real_rows_in_prompts, 0);
    }
}
