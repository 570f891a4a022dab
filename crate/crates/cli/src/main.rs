//! `kgp`: generate synthetic tables with knowledge-guided prompts, score
//! them, and run the experiment harnesses.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or config error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use kgp_core::error::{BackendError, ExperimentError, GenerationError, KnowledgeError, MetricError, TableError};
use kgp_core::experiments::{
    emit_all, load_cell_table, load_config, render_scatter, run_ablation, run_ood, run_refix, run_sweep,
    AblationConfig, CellStatus, OodConfig, RefixConfig, SweepConfig,
};
use kgp_core::generation::{
    build_backend, generate_table, BackendConfig, BackendKind, GenerateOptions, API_KEY_ENV, DEFAULT_CHUNK_SIZE,
};
use kgp_core::knowledge::{load_knowledge_file, KnowledgeLevel, KnowledgeSpec, TEMPLATE_VERSION};
use kgp_core::metrics::{evaluate, points2, EvalOptions};
use kgp_core::row_text::DEFAULT_PRECISION;
use kgp_core::store::write_atomic;
use kgp_core::table::{load_csv, sample_rows, write_csv, Table};

#[derive(Parser)]
#[command(name = "kgp", version, about = "Knowledge-guided prompting for synthetic tabular data")]
#[command(after_help = "The HTTP backend reads its API key from the KGP_API_KEY environment variable.")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic table from ICL examples and knowledge.
    Generate(GenerateArgs),
    /// Score a synthetic table against real data.
    Evaluate(EvaluateArgs),
    /// Scaling sweep over knowledge levels and ICL sizes.
    Sweep(RunArgs),
    /// Out-of-distribution holdout experiment.
    Ood(RunArgs),
    /// Knowledge-level ablation over symbolic fixtures.
    Ablation(RunArgs),
    /// Noise-and-refix experiment.
    Refix(RunArgs),
    /// Scatter plot of real vs synthetic rows as SVG.
    Plot(PlotArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Real data (CSV); the ICL pool is sampled from it.
    #[arg(long)]
    data: PathBuf,
    /// Knowledge file (TOML). Without it only level `none` is meaningful.
    #[arg(long)]
    knowledge: Option<PathBuf>,
    /// Knowledge level; defaults to the level in the knowledge file.
    #[arg(long)]
    level: Option<KnowledgeLevel>,
    /// Number of ICL examples sampled from the data.
    #[arg(long)]
    icl: usize,
    /// ICL rows per query.
    #[arg(long, default_value_t = DEFAULT_CHUNK_SIZE)]
    chunk: usize,
    /// Rows requested per query; defaults to the chunk size.
    #[arg(long)]
    rows_per_chunk: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_parser = parse_backend_kind)]
    backend: BackendKind,
    /// Full backend config (TOML); `--backend` overrides its kind.
    #[arg(long)]
    backend_config: Option<PathBuf>,
    /// Replay store directory (replay backend).
    #[arg(long)]
    replay_dir: Option<PathBuf>,
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    model: Option<String>,
    /// Stub ground truth `target = f(...)`; defaults to the knowledge file's
    /// first equation.
    #[arg(long)]
    ground_truth: Option<String>,
    /// Persist prompts and responses here (replay-store layout).
    #[arg(long)]
    transcripts: Option<PathBuf>,
    /// Run report path; defaults to `<out>.report.json`.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_PRECISION)]
    precision: usize,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    real: PathBuf,
    #[arg(long)]
    syn: PathBuf,
    /// Ground-truth expression `f(...)` or equation `target = f(...)`.
    #[arg(long)]
    expr: Option<String>,
    /// Target column: the left-hand side for `--expr` and the MLU target.
    #[arg(long)]
    target: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    bins: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct PlotArgs {
    #[arg(long)]
    real: PathBuf,
    #[arg(long)]
    syn: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Horizontal column; defaults to the first numeric column.
    #[arg(long)]
    x: Option<String>,
    /// Vertical column; defaults to the second numeric column.
    #[arg(long)]
    y: Option<String>,
}

fn parse_backend_kind(s: &str) -> Result<BackendKind, String> {
    s.parse().map_err(|e: BackendError| e.to_string())
}

/// An error with the exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }

    fn runtime(message: impl Into<String>) -> Self {
        Self { code: 1, message: message.into() }
    }
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        let code = match &e {
            ExperimentError::Config(_) | ExperimentError::Knowledge(_) | ExperimentError::Expr(_) => 2,
            ExperimentError::Table(TableError::Io(_)) => 2,
            ExperimentError::Generation(GenerationError::Config(_) | GenerationError::Knowledge(_)) => 2,
            _ => 1,
        };
        Self { code, message: e.to_string() }
    }
}

impl From<GenerationError> for Failure {
    fn from(e: GenerationError) -> Self {
        let code = match e {
            GenerationError::Config(_) | GenerationError::Knowledge(_) | GenerationError::Plan(_) => 2,
            _ => 1,
        };
        Self { code, message: e.to_string() }
    }
}

impl From<MetricError> for Failure {
    fn from(e: MetricError) -> Self {
        let code = if matches!(e, MetricError::Config(_)) { 2 } else { 1 };
        Self { code, message: e.to_string() }
    }
}

impl From<KnowledgeError> for Failure {
    fn from(e: KnowledgeError) -> Self {
        Self::usage(e.to_string())
    }
}

fn load_table(path: &Path) -> Result<Table, Failure> {
    load_csv(path, None).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
}

fn io_failure(path: &Path) -> impl Fn(std::io::Error) -> Failure + '_ {
    move |e| Failure::runtime(format!("{}: {e}", path.display()))
}

fn banner(backend: Option<&BackendConfig>) {
    println!("template_version: {TEMPLATE_VERSION}");
    match backend {
        Some(cfg) => println!("backend: {}", cfg.describe()),
        None => println!("backend: none"),
    }
}

fn backend_config(args: &GenerateArgs, knowledge: &KnowledgeSpec) -> Result<BackendConfig, Failure> {
    let mut cfg = match &args.backend_config {
        Some(p) => BackendConfig::load(p).map_err(|e| Failure::usage(e.to_string()))?,
        None => BackendConfig::new(args.backend),
    };
    cfg.kind = args.backend;
    if args.replay_dir.is_some() {
        cfg.replay_dir = args.replay_dir.clone();
    }
    if args.endpoint.is_some() {
        cfg.endpoint = args.endpoint.clone();
    }
    if args.model.is_some() {
        cfg.model = args.model.clone();
    }
    if args.ground_truth.is_some() {
        cfg.stub.ground_truth = args.ground_truth.clone();
    }
    if cfg.stub.ground_truth.is_none() {
        cfg.stub.ground_truth = knowledge.symbolic.first().map(|e| e.to_string());
    }
    cfg.validate().map_err(|e| Failure::usage(e.to_string()))?;
    Ok(cfg)
}

fn cmd_generate(args: &GenerateArgs) -> Result<(), Failure> {
    let data = load_table(&args.data)?;
    let knowledge = match &args.knowledge {
        Some(p) => load_knowledge_file(p)?,
        None => KnowledgeSpec::none(),
    };
    let level = args.level.unwrap_or(knowledge.active_level);
    let spec = knowledge.clone().with_level(level).resolve(&data)?;
    let cfg = backend_config(args, &knowledge)?;
    banner(Some(&cfg));
    if args.icl == 0 || args.icl > data.len() {
        return Err(Failure::usage(format!("--icl must be in 1..={} for this data file", data.len())));
    }
    let icl = sample_rows(&data, args.icl, args.seed).map_err(|e| Failure::usage(e.to_string()))?;
    let backend = build_backend(&cfg).map_err(|e| Failure::usage(e.to_string()))?;
    let opts = GenerateOptions {
        chunk_size: args.chunk,
        rows_per_chunk: args.rows_per_chunk,
        precision: args.precision,
        seed: args.seed,
        transcripts_dir: args.transcripts.clone(),
    };
    let (syn, report) = generate_table(&icl, &spec, &opts, backend.as_ref(), &cfg)?;
    write_csv(&syn, &args.out).map_err(|e| Failure::runtime(e.to_string()))?;
    let report_path = args.report.clone().unwrap_or_else(|| {
        let mut p = args.out.clone().into_os_string();
        p.push(".report.json");
        PathBuf::from(p)
    });
    write_atomic(&report_path, report.to_json().as_bytes()).map_err(io_failure(&report_path))?;
    println!(
        "level {level}: {} chunk(s), {} rows accepted, {} dropped -> {}",
        report.chunks.len(),
        report.totals.accepted,
        report.totals.dropped(),
        args.out.display()
    );
    Ok(())
}

fn cmd_evaluate(args: &EvaluateArgs) -> Result<(), Failure> {
    banner(None);
    let real = load_table(&args.real)?;
    let syn = load_table(&args.syn)?;
    let equation = match (&args.expr, &args.target) {
        (Some(e), _) if e.contains('=') => Some(e.clone()),
        (Some(e), Some(t)) => Some(format!("{t} = {e}")),
        (Some(_), None) => {
            return Err(Failure::usage("--expr without `=` needs --target to name the output column"));
        }
        (None, _) => None,
    };
    let opts = EvalOptions {
        kl_bins: Some(args.bins),
        equation,
        mlu_target: args.target.clone(),
        seed: args.seed,
        ..Default::default()
    };
    let report = evaluate(&real, &syn, &opts)?;
    print!("{}", report.render_table());
    if let Some(out) = &args.out {
        write_atomic(out, report.to_json().as_bytes()).map_err(io_failure(out))?;
    }
    Ok(())
}

fn prepare_out_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(io_failure(dir))
}

fn print_written(paths: &[PathBuf]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

fn cmd_sweep(args: &RunArgs) -> Result<(), Failure> {
    let cfg: SweepConfig = load_config(&args.config)?;
    banner(Some(&cfg.backend));
    prepare_out_dir(&args.out_dir)?;
    let result = run_sweep(&cfg, &args.out_dir)?;
    print_written(&emit_all(&result, &args.out_dir)?);

    // One overlay per level at the largest ICL size (first trial), for
    // two-column datasets.
    let real = load_table(&cfg.dataset.data)?;
    let cols = real.numeric_column_names();
    if cols.len() == 2 {
        let n_max = *cfg.icl_sizes.last().expect("validated");
        for cell in result.cells.iter().filter(|c| c.icl_n == n_max && c.trial == 0 && c.status == CellStatus::Ok) {
            if let Some(syn) = load_cell_table(&args.out_dir, cell) {
                let out = args.out_dir.join("plots").join(format!("{}.svg", cell.id()));
                render_scatter(&points2(&real, cols[0], cols[1])?, &points2(&syn, cols[0], cols[1])?, (cols[0], cols[1]), &out)?;
                println!("wrote {}", out.display());
            }
        }
    }
    for s in &result.savings {
        match s.savings {
            Some(v) => println!("savings {}: {:.1}%", s.level, 100.0 * v),
            None => println!("savings {}: undefined ({})", s.level, s.note),
        }
    }
    result.check()?;
    Ok(())
}

fn cmd_ood(args: &RunArgs) -> Result<(), Failure> {
    let cfg: OodConfig = load_config(&args.config)?;
    banner(Some(&cfg.backend));
    prepare_out_dir(&args.out_dir)?;
    let result = run_ood(&cfg, Some(&args.out_dir))?;
    print_written(&emit_all(&result, &args.out_dir)?);
    for l in &result.levels {
        println!(
            "{:<12} overall {:>12}  region {:>12}",
            l.level.as_str(),
            l.mean_mse_overall.map(|v| format!("{v:.6}")).unwrap_or_else(|| "-".into()),
            l.mean_mse_region.map(|v| format!("{v:.6}")).unwrap_or_else(|| "-".into())
        );
    }
    Ok(())
}

fn cmd_ablation(args: &RunArgs) -> Result<(), Failure> {
    let cfg: AblationConfig = load_config(&args.config)?;
    banner(Some(&cfg.backend));
    prepare_out_dir(&args.out_dir)?;
    let result = run_ablation(&cfg, Some(&args.out_dir))?;
    print_written(&emit_all(&result, &args.out_dir)?);
    Ok(())
}

fn cmd_refix(args: &RunArgs) -> Result<(), Failure> {
    let cfg: RefixConfig = load_config(&args.config)?;
    banner(Some(&cfg.backend));
    prepare_out_dir(&args.out_dir)?;
    let (result, tables) = run_refix(&cfg, Some(&args.out_dir))?;
    let mut written = emit_all(&result, &args.out_dir)?;
    for (name, t) in [("noised.csv", &tables.noised), ("refixed.csv", &tables.refixed)] {
        let path = args.out_dir.join(name);
        write_csv(t, &path).map_err(|e| Failure::runtime(e.to_string()))?;
        written.push(path);
    }
    let report_path = args.out_dir.join("run_report.json");
    write_atomic(&report_path, result.report.to_json().as_bytes()).map_err(io_failure(&report_path))?;
    written.push(report_path);
    let real = load_table(&cfg.dataset.data)?;
    let cols = real.numeric_column_names();
    if cols.len() == 2 {
        for (name, t) in [("noised", &tables.noised), ("refixed", &tables.refixed)] {
            let out = args.out_dir.join("plots").join(format!("{name}.svg"));
            render_scatter(&points2(&real, cols[0], cols[1])?, &points2(t, cols[0], cols[1])?, (cols[0], cols[1]), &out)?;
            written.push(out);
        }
    }
    print_written(&written);
    println!("DCR noised {:.6} -> refixed {:.6}", result.dcr_noised, result.dcr_refixed);
    Ok(())
}

fn cmd_plot(args: &PlotArgs) -> Result<(), Failure> {
    banner(None);
    let real = load_table(&args.real)?;
    let syn = load_table(&args.syn)?;
    let numeric = real.numeric_column_names();
    let x = args.x.as_deref().or(numeric.first().copied());
    let y = args.y.as_deref().or(numeric.get(1).copied());
    let (Some(x), Some(y)) = (x, y) else {
        return Err(Failure::usage("need two numeric columns; pass --x and --y"));
    };
    let real_pts = points2(&real, x, y).map_err(|e| Failure::usage(e.to_string()))?;
    let syn_pts = if syn.is_empty() { Vec::new() } else { points2(&syn, x, y).map_err(|e| Failure::usage(e.to_string()))? };
    render_scatter(&real_pts, &syn_pts, (x, y), &args.out)?;
    println!("wrote {}", args.out.display());
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt().with_writer(std::io::stderr).with_max_level(tracing_subscriber::filter::LevelFilter::WARN).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    let outcome = match &cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Ood(a) => cmd_ood(a),
        Command::Ablation(a) => cmd_ablation(a),
        Command::Refix(a) => cmd_refix(a),
        Command::Plot(a) => cmd_plot(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            if f.message.contains(API_KEY_ENV) {
                eprintln!("hint: export {API_KEY_ENV} before using the http backend");
            }
            ExitCode::from(f.code)
        }
    }
}
