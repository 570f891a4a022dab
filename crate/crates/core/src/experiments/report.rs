//! Result files: CSV, versioned JSON, markdown tables and SVG scatter plots.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::harness::{AblationResult, OodResult, RefixResult};
use super::sweep::SweepResult;
use crate::error::ExperimentError;
use crate::store::write_atomic;

pub const RESULTS_SCHEMA_VERSION: &str = "kgp-results-v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
    Markdown,
}

impl ReportFormat {
    pub const ALL: [ReportFormat; 3] = [ReportFormat::Csv, ReportFormat::Json, ReportFormat::Markdown];

    pub fn file_name(self) -> &'static str {
        match self {
            ReportFormat::Csv => "results.csv",
            ReportFormat::Json => "results.json",
            ReportFormat::Markdown => "report.md",
        }
    }
}

/// Something that can be written as a results bundle.
pub trait Report: Serialize {
    fn kind(&self) -> &'static str;
    fn csv_header(&self) -> Vec<&'static str>;
    fn csv_rows(&self) -> Vec<Vec<String>>;
    fn markdown(&self) -> String;
}

fn num(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn fixed(v: Option<f64>, digits: usize) -> String {
    v.map(|x| format!("{x:.digits$}")).unwrap_or_else(|| "–".into())
}

pub fn render_csv<R: Report>(r: &R) -> String {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(r.csv_header()).expect("in-memory write");
    for row in r.csv_rows() {
        w.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}

pub fn render_json<R: Report>(r: &R) -> String {
    #[derive(Serialize)]
    struct Envelope<'a, T: Serialize> {
        schema_version: &'static str,
        kind: &'static str,
        result: &'a T,
    }
    let env = Envelope { schema_version: RESULTS_SCHEMA_VERSION, kind: r.kind(), result: r };
    let mut s = serde_json::to_string_pretty(&env).expect("results serialize");
    s.push('\n');
    s
}

/// Writes `results` in `format` under `out_dir` and returns the path.
pub fn emit_report<R: Report>(results: &R, format: ReportFormat, out_dir: &Path) -> Result<PathBuf, ExperimentError> {
    let body = match format {
        ReportFormat::Csv => render_csv(results),
        ReportFormat::Json => render_json(results),
        ReportFormat::Markdown => results.markdown(),
    };
    let path = out_dir.join(format.file_name());
    write_atomic(&path, body.as_bytes()).map_err(|e| ExperimentError::Io(format!("{}: {e}", path.display())))?;
    Ok(path)
}

pub fn emit_all<R: Report>(results: &R, out_dir: &Path) -> Result<Vec<PathBuf>, ExperimentError> {
    ReportFormat::ALL.iter().map(|f| emit_report(results, *f, out_dir)).collect()
}

const METRIC_COLUMNS: [&str; 9] = [
    "mse_symbolic",
    "hausdorff",
    "nll",
    "kl",
    "dcr_mean",
    "dcr_zero_leaks",
    "mlu_rf_mape",
    "mlu_linreg_mape",
    "n_synthetic",
];

impl Report for SweepResult {
    fn kind(&self) -> &'static str {
        "sweep"
    }

    fn csv_header(&self) -> Vec<&'static str> {
        let mut h = vec!["level", "icl_n", "trial", "seed", "status", "accepted", "dropped"];
        h.extend(METRIC_COLUMNS);
        h.push("error");
        h
    }

    fn csv_rows(&self) -> Vec<Vec<String>> {
        self.cells
            .iter()
            .map(|c| {
                let mut row = vec![
                    c.level.to_string(),
                    c.icl_n.to_string(),
                    c.trial.to_string(),
                    c.seed.to_string(),
                    format!("{:?}", c.status).to_lowercase(),
                    c.parse.accepted.to_string(),
                    c.parse.dropped().to_string(),
                ];
                match &c.metrics {
                    Some(m) => row.extend(m.fields().into_iter().map(|(_, v)| num(v))),
                    None => row.extend(METRIC_COLUMNS.iter().map(|_| String::new())),
                }
                row.push(c.error.clone().unwrap_or_default());
                row
            })
            .collect()
    }

    fn markdown(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# Scaling sweep: {}\n", self.dataset);
        let _ = writeln!(out, "Metric: `{}` (mean over successful trials, lower is better).\n", self.metric.as_str());
        let mut sizes: Vec<usize> = self.cells.iter().map(|c| c.icl_n).collect();
        sizes.sort_unstable();
        sizes.dedup();
        let _ = write!(out, "| level |");
        for n in &sizes {
            let _ = write!(out, " n={n} |");
        }
        let _ = write!(out, "\n|---|");
        for _ in &sizes {
            let _ = write!(out, "---:|");
        }
        out.push('\n');
        for level in self.levels() {
            let curve = self.curve(level, self.metric);
            let _ = write!(out, "| {level} |");
            for n in &sizes {
                let v = curve.iter().find(|(m, _)| m == n).map(|(_, v)| *v);
                let _ = write!(out, " {} |", fixed(v, 4));
            }
            out.push('\n');
        }
        if let Some(r) = &self.reference {
            let _ = writeln!(out, "\n## Example savings vs ({}, n={})\n", r.level, r.n);
            let _ = writeln!(out, "| level | n* | savings | note |\n|---|---:|---:|---|");
            for s in &self.savings {
                let savings = s.savings.map(|v| format!("{:.0}%", 100.0 * v)).unwrap_or_else(|| "undefined".into());
                let _ = writeln!(out, "| {} | {} | {} | {} |", s.level, fixed(s.n_star, 1), savings, s.note);
            }
        }
        let _ = writeln!(
            out,
            "\n{} of {} cells failed{}.",
            self.failed_cells,
            self.cells.len(),
            if self.failed { " — sweep marked FAILED" } else { "" }
        );
        out
    }
}

impl Report for OodResult {
    fn kind(&self) -> &'static str {
        "ood"
    }

    fn csv_header(&self) -> Vec<&'static str> {
        vec!["level", "seed", "n_synthetic", "mse_overall", "mse_region", "error"]
    }

    fn csv_rows(&self) -> Vec<Vec<String>> {
        self.levels
            .iter()
            .flat_map(|l| {
                l.per_seed.iter().map(move |s| {
                    vec![
                        l.level.to_string(),
                        s.seed.to_string(),
                        s.n_synthetic.to_string(),
                        num(s.mse_overall),
                        num(s.mse_region),
                        s.error.clone().unwrap_or_default(),
                    ]
                })
            })
            .collect()
    }

    fn markdown(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# OOD generalization: {}\n", self.dataset);
        let _ = writeln!(
            out,
            "Ground truth `{}`; held-out region {} ∈ [{}, {}] ({} rows held out, {} rows in the ICL pool).\n",
            self.equation, self.mask.column, self.mask.lo, self.mask.hi, self.region_rows, self.pool_rows
        );
        let _ = writeln!(out, "| level | MSE (overall) | MSE (held-out region) |\n|---|---:|---:|");
        for l in &self.levels {
            let _ = writeln!(out, "| {} | {} | {} |", l.level, fixed(l.mean_mse_overall, 4), fixed(l.mean_mse_region, 4));
        }
        out
    }
}

impl Report for AblationResult {
    fn kind(&self) -> &'static str {
        "ablation"
    }

    fn csv_header(&self) -> Vec<&'static str> {
        vec!["fixture", "level", "mean_mse", "trend", "n_ok", "n_failed"]
    }

    fn csv_rows(&self) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .flat_map(|r| {
                r.cells.iter().map(move |c| {
                    let ok = c.per_seed.iter().flatten().count();
                    vec![
                        r.fixture.clone(),
                        c.level.to_string(),
                        num(c.mean_mse),
                        c.trend.map(|t| t.arrow().to_string()).unwrap_or_default(),
                        ok.to_string(),
                        (c.per_seed.len() - ok).to_string(),
                    ]
                })
            })
            .collect()
    }

    fn markdown(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "# Knowledge ablation at {} ICL examples\n\nMean MSE over {} seeds; arrows compare with the previous level (∼ within {}%).\n",
            self.icl_n,
            self.seeds.len(),
            100.0 * self.threshold
        );
        let _ = write!(out, "| function |");
        for l in &self.levels {
            let _ = write!(out, " {l} |");
        }
        let _ = write!(out, "\n|---|");
        for _ in &self.levels {
            let _ = write!(out, "---:|");
        }
        out.push('\n');
        for r in &self.rows {
            let _ = write!(out, "| `{}` |", r.equation);
            for c in &r.cells {
                let arrow = c.trend.map(|t| format!("({})", t.arrow())).unwrap_or_default();
                let _ = write!(out, " {arrow}{} |", fixed(c.mean_mse, 4));
            }
            out.push('\n');
        }
        out
    }
}

impl Report for RefixResult {
    fn kind(&self) -> &'static str {
        "refix"
    }

    fn csv_header(&self) -> Vec<&'static str> {
        vec!["dataset", "level", "sigma_fraction", "n_rows", "dcr_noised", "dcr_refixed", "mse_noised", "mse_refixed"]
    }

    fn csv_rows(&self) -> Vec<Vec<String>> {
        vec![vec![
            self.dataset.clone(),
            self.level.to_string(),
            self.sigma_fraction.to_string(),
            self.n_rows.to_string(),
            self.dcr_noised.to_string(),
            self.dcr_refixed.to_string(),
            num(self.mse_noised),
            num(self.mse_refixed),
        ]]
    }

    fn markdown(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# Noise and refix: {}\n", self.dataset);
        let _ = writeln!(
            out,
            "σ = {} × column std, knowledge level `{}`, {} rows.\n",
            self.sigma_fraction, self.level, self.n_rows
        );
        let _ = writeln!(out, "| table | DCR to real | MSE vs ground truth |\n|---|---:|---:|");
        let _ = writeln!(out, "| noised | {:.4} | {} |", self.dcr_noised, fixed(self.mse_noised, 4));
        let _ = writeln!(out, "| refixed | {:.4} | {} |", self.dcr_refixed, fixed(self.mse_refixed, 4));
        if let Some(r) = &self.report.refix {
            let _ = writeln!(out, "\n{}", r.note);
        }
        out
    }
}

// --- scatter plots ---------------------------------------------------------

const WIDTH: f64 = 480.0;
const HEIGHT: f64 = 360.0;
const MARGIN_LEFT: f64 = 64.0;
const MARGIN_RIGHT: f64 = 120.0;
const MARGIN_TOP: f64 = 20.0;
const MARGIN_BOTTOM: f64 = 48.0;
const REAL_FILL: &str = "#1f77b4";
const SYN_FILL: &str = "#d62728";

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Linear-interpolated quantile of sorted values.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

fn axis_ticks(values: &mut Vec<f64>) -> Vec<f64> {
    if values.is_empty() {
        return vec![0.0, 1.0];
    }
    values.sort_by(f64::total_cmp);
    let mut ticks: Vec<f64> = [0.0, 0.25, 0.5, 0.75, 1.0].iter().map(|&q| quantile(values, q)).collect();
    ticks.dedup();
    ticks
}

fn padded_range(ticks: &[f64]) -> (f64, f64) {
    let lo = ticks[0];
    let hi = *ticks.last().expect("non-empty");
    if hi > lo {
        let pad = 0.04 * (hi - lo);
        (lo - pad, hi + pad)
    } else {
        (lo - 0.5, hi + 0.5)
    }
}

fn tick_label(v: f64) -> String {
    crate::row_text::format_significant(v, 4)
}

/// Scatter of real vs synthetic points as a self-contained SVG document.
/// Ticks sit at the quartiles of all plotted points; output bytes depend
/// only on the inputs.
pub fn scatter_svg(real: &[[f64; 2]], syn: &[[f64; 2]], labels: (&str, &str)) -> String {
    let mut xs: Vec<f64> = real.iter().chain(syn).map(|p| p[0]).collect();
    let mut ys: Vec<f64> = real.iter().chain(syn).map(|p| p[1]).collect();
    let xt = axis_ticks(&mut xs);
    let yt = axis_ticks(&mut ys);
    let (x0, x1) = padded_range(&xt);
    let (y0, y1) = padded_range(&yt);
    let pw = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let ph = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let sx = |x: f64| MARGIN_LEFT + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| MARGIN_TOP + ph - (y - y0) / (y1 - y0) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r##"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="#ffffff"/>"##);
    let bottom = MARGIN_TOP + ph;
    let _ = writeln!(
        s,
        r##"<rect x="{MARGIN_LEFT}" y="{MARGIN_TOP}" width="{pw}" height="{ph}" fill="none" stroke="#444444"/>"##
    );
    for &t in &xt {
        let x = sx(t);
        let _ = writeln!(s, r##"<line x1="{x:.2}" y1="{bottom}" x2="{x:.2}" y2="{:.2}" stroke="#444444"/>"##, bottom + 5.0);
        let _ = writeln!(
            s,
            r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            bottom + 17.0,
            xml_escape(&tick_label(t))
        );
    }
    for &t in &yt {
        let y = sy(t);
        let _ = writeln!(
            s,
            r##"<line x1="{:.2}" y1="{y:.2}" x2="{MARGIN_LEFT}" y2="{y:.2}" stroke="#444444"/>"##,
            MARGIN_LEFT - 5.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            MARGIN_LEFT - 8.0,
            y + 4.0,
            xml_escape(&tick_label(t))
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        MARGIN_LEFT + pw / 2.0,
        HEIGHT - 8.0,
        xml_escape(labels.0)
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{:.2}" text-anchor="middle" transform="rotate(-90 14 {:.2})">{}</text>"#,
        MARGIN_TOP + ph / 2.0,
        MARGIN_TOP + ph / 2.0,
        xml_escape(labels.1)
    );
    for (points, fill, class) in [(real, REAL_FILL, "real"), (syn, SYN_FILL, "synthetic")] {
        let _ = writeln!(s, r#"<g class="{class}" fill="{fill}" fill-opacity="0.7">"#);
        for p in points {
            let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="2.5"/>"#, sx(p[0]), sy(p[1]));
        }
        s.push_str("</g>\n");
    }
    let lx = WIDTH - MARGIN_RIGHT + 12.0;
    for (i, (fill, label)) in [(REAL_FILL, "real"), (SYN_FILL, "synthetic")].iter().enumerate() {
        let y = MARGIN_TOP + 12.0 + 18.0 * i as f64;
        let _ = writeln!(s, r#"<circle cx="{lx:.2}" cy="{y:.2}" r="4" fill="{fill}"/>"#);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}">{label} (n={})</text>"#, lx + 9.0, y + 4.0, if i == 0 { real.len() } else { syn.len() });
    }
    s.push_str("</svg>\n");
    s
}

pub fn render_scatter(
    real: &[[f64; 2]],
    syn: &[[f64; 2]],
    labels: (&str, &str),
    out: &Path,
) -> Result<(), ExperimentError> {
    let svg = scatter_svg(real, syn, labels);
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| ExperimentError::Io(format!("{}: {e}", dir.display())))?;
    }
    write_atomic(out, svg.as_bytes()).map_err(|e| ExperimentError::Io(format!("{}: {e}", out.display())))
}
