//! Deterministic stand-in for a language model, used by tests and offline
//! harness runs.
//!
//! The stub reads only what a model would see: the prompt text. It finds the
//! example (or to-be-corrected) rows, the knowledge tiers present (by their
//! section markers) and any range statements, then answers with sentences in
//! the row format:
//!
//! * generation: features are drawn uniformly over the stated ranges when the
//!   statistical tier is present, otherwise over the bounding box of the
//!   example rows; the target is `f(x) + N(0, σ²)` with
//!   `σ = σ_level · scale · (icl_reference / n_examples)^icl_exponent`, where
//!   `scale` is `noise_scale` or the sample std of the examples' target;
//! * correction: with no knowledge the rows come back unchanged; with any
//!   knowledge tier features are clamped to the stated ranges and the target
//!   is re-projected onto `f`.

use std::collections::HashMap;
use std::sync::LazyLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use regex::Regex;
use serde::{Deserialize, Serialize};

use super::backend::{Backend, BackendFailure, Completion};
use super::ChunkQuery;
use crate::error::BackendError;
use crate::knowledge::{
    KnowledgeLevel, EXAMPLES_MARKER, REFIX_MARKER, SEMANTIC_MARKER, STATISTICAL_MARKER, SYMBOLIC_MARKER,
};
use crate::row_text::{format_significant, DEFAULT_PRECISION};
use crate::store::{content_hash, derive_seed};
use crate::symexpr::Equation;
use crate::table::sample_std;

/// Target noise as a multiple of the target scale, per knowledge level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelNoise {
    pub none: f64,
    pub statistical: f64,
    pub semantic: f64,
    pub symbolic: f64,
}

impl Default for LevelNoise {
    fn default() -> Self {
        Self { none: 0.6, statistical: 0.35, semantic: 0.2, symbolic: 0.1 }
    }
}

impl LevelNoise {
    pub fn for_level(&self, level: KnowledgeLevel) -> f64 {
        match level {
            KnowledgeLevel::None => self.none,
            KnowledgeLevel::Statistical => self.statistical,
            KnowledgeLevel::Semantic => self.semantic,
            KnowledgeLevel::Symbolic => self.symbolic,
        }
    }
}

fn default_icl_reference() -> f64 {
    20.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StubParams {
    /// `target = expression`; required for the stub backend.
    #[serde(default)]
    pub ground_truth: Option<String>,
    #[serde(default)]
    pub noise: LevelNoise,
    /// Fixed target scale; defaults to the examples' target std.
    #[serde(default)]
    pub noise_scale: Option<f64>,
    #[serde(default)]
    pub icl_exponent: f64,
    #[serde(default = "default_icl_reference")]
    pub icl_reference: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for StubParams {
    fn default() -> Self {
        Self {
            ground_truth: None,
            noise: LevelNoise::default(),
            noise_scale: None,
            icl_exponent: 0.0,
            icl_reference: default_icl_reference(),
            seed: 0,
        }
    }
}

impl StubParams {
    pub fn with_ground_truth(equation: impl Into<String>) -> Self {
        Self { ground_truth: Some(equation.into()), ..Self::default() }
    }
}

pub struct StubOracle {
    params: StubParams,
    truth: Equation,
}

/// What the stub extracted from a prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptView {
    pub level: KnowledgeLevel,
    pub refix: bool,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub ranges: HashMap<String, (f64, f64)>,
    pub requested: Option<usize>,
}

static RANGE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"([A-Za-z_][A-Za-z0-9_]*) ranges from ([-+0-9.eE]+) to ([-+0-9.eE]+?)(?:[,.]?\s|[,.]?$)")
        .expect("valid regex")
});
static REQUEST: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"Generate exactly (\d+) new rows").expect("valid regex"));

fn parse_row(line: &str) -> Option<(Vec<String>, Vec<f64>)> {
    let body = line.trim().strip_suffix('.')?;
    let mut names = Vec::new();
    let mut values = Vec::new();
    for part in body.split(", ") {
        let (n, v) = part.split_once(" is ")?;
        names.push(n.trim().to_string());
        values.push(v.trim().parse().ok()?);
    }
    Some((names, values))
}

/// Reads the parts of a prompt the stub reacts to.
pub fn read_prompt(prompt: &str) -> PromptView {
    let level = if prompt.contains(SYMBOLIC_MARKER) {
        KnowledgeLevel::Symbolic
    } else if prompt.contains(SEMANTIC_MARKER) {
        KnowledgeLevel::Semantic
    } else if prompt.contains(STATISTICAL_MARKER) {
        KnowledgeLevel::Statistical
    } else {
        KnowledgeLevel::None
    };
    let refix = prompt.contains(REFIX_MARKER);
    let marker = if refix { REFIX_MARKER } else { EXAMPLES_MARKER };

    let mut columns = Vec::new();
    let mut rows = Vec::new();
    if let Some(start) = prompt.find(marker) {
        for line in prompt[start + marker.len()..].lines().skip(1) {
            if line.trim().is_empty() {
                break;
            }
            if let Some((names, values)) = parse_row(line) {
                if columns.is_empty() {
                    columns = names;
                }
                if values.len() == columns.len() {
                    rows.push(values);
                }
            }
        }
    }

    let mut ranges = HashMap::new();
    if let Some(start) = prompt.find(STATISTICAL_MARKER) {
        let section = prompt[start..].lines().nth(1).unwrap_or("");
        for cap in RANGE.captures_iter(section) {
            if let (Ok(lo), Ok(hi)) = (cap[2].parse::<f64>(), cap[3].parse::<f64>()) {
                ranges.insert(cap[1].to_string(), (lo.min(hi), lo.max(hi)));
            }
        }
    }
    let requested = REQUEST.captures(prompt).and_then(|c| c[1].parse().ok());
    PromptView { level, refix, columns, rows, ranges, requested }
}

impl StubOracle {
    pub fn new(params: &StubParams) -> Result<Self, BackendError> {
        let src = params
            .ground_truth
            .as_deref()
            .ok_or_else(|| BackendError::Config("stub backend needs a ground-truth equation".into()))?;
        let truth = Equation::parse(src).map_err(|e| BackendError::Config(e.to_string()))?;
        Ok(Self { params: params.clone(), truth })
    }

    fn render(columns: &[String], row: &[f64]) -> String {
        let body = columns
            .iter()
            .zip(row)
            .map(|(c, v)| format!("{c} is {}", format_significant(*v, DEFAULT_PRECISION)))
            .collect::<Vec<_>>()
            .join(", ");
        format!("{body}.")
    }

    fn eval_row(&self, columns: &[String], row: &[f64]) -> Result<f64, crate::error::EvalError> {
        let bindings: HashMap<&str, f64> = columns.iter().map(String::as_str).zip(row.iter().copied()).collect();
        self.truth.eval(&bindings)
    }

    pub fn respond(&self, prompt: &str, seed: u64) -> Result<String, BackendError> {
        let view = read_prompt(prompt);
        if view.rows.is_empty() {
            return Err(BackendError::Stub("prompt contains no readable rows".into()));
        }
        let target = view
            .columns
            .iter()
            .position(|c| *c == self.truth.target)
            .ok_or_else(|| BackendError::Stub(format!("rows lack target column `{}`", self.truth.target)))?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.params.seed ^ seed, &[&content_hash(prompt)]));
        let lines = if view.refix { self.correct(&view, target) } else { self.generate(&view, target, &mut rng) }?;
        Ok(lines.join("\n"))
    }

    fn generate(&self, view: &PromptView, target: usize, rng: &mut ChaCha8Rng) -> Result<Vec<String>, BackendError> {
        let m = view.requested.unwrap_or(view.rows.len());
        let bounds: Vec<(f64, f64)> = view
            .columns
            .iter()
            .enumerate()
            .map(|(j, c)| match view.ranges.get(c) {
                Some(r) if view.level >= KnowledgeLevel::Statistical => *r,
                _ => view.rows.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
                    (lo.min(r[j]), hi.max(r[j]))
                }),
            })
            .collect();
        let targets: Vec<f64> = view.rows.iter().map(|r| r[target]).collect();
        let scale = self.params.noise_scale.unwrap_or_else(|| sample_std(&targets));
        let size_factor = (self.params.icl_reference / view.rows.len() as f64).powf(self.params.icl_exponent);
        let sigma = self.params.noise.for_level(view.level) * scale * size_factor;
        let noise = Normal::new(0.0, sigma.max(0.0)).map_err(|e| BackendError::Stub(e.to_string()))?;

        let mut out = Vec::with_capacity(m);
        let mut tries = 0;
        while out.len() < m && tries < m * 100 + 100 {
            tries += 1;
            let mut row: Vec<f64> = bounds
                .iter()
                .map(|&(lo, hi)| if hi > lo { rng.random_range(lo..=hi) } else { lo })
                .collect();
            let Ok(y) = self.eval_row(&view.columns, &row) else { continue };
            row[target] = y + noise.sample(rng);
            out.push(Self::render(&view.columns, &row));
        }
        Ok(out)
    }

    fn correct(&self, view: &PromptView, target: usize) -> Result<Vec<String>, BackendError> {
        view.rows
            .iter()
            .map(|row| {
                if view.level == KnowledgeLevel::None {
                    return Ok(Self::render(&view.columns, row));
                }
                let mut fixed: Vec<f64> = row
                    .iter()
                    .zip(&view.columns)
                    .map(|(v, c)| match view.ranges.get(c) {
                        Some(&(lo, hi)) => v.clamp(lo, hi),
                        None => *v,
                    })
                    .collect();
                match self.eval_row(&view.columns, &fixed) {
                    Ok(y) => fixed[target] = y,
                    Err(_) => fixed[target] = row[target],
                }
                Ok(Self::render(&view.columns, &fixed))
            })
            .collect()
    }
}

impl Backend for StubOracle {
    fn complete(&self, query: &ChunkQuery) -> Result<Completion, BackendFailure> {
        let text = self.respond(&query.text, query.seed)?;
        Ok(Completion { text, attempts: 1 })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::knowledge::{build_prompt, KnowledgeSpec, StatisticalSource};
    use crate::row_text::RowSentence;

    fn rows() -> Vec<RowSentence> {
        vec![
            RowSentence("x is 0, y is 1.".into()),
            RowSentence("x is 1, y is -1.".into()),
            RowSentence("x is 2, y is -3.".into()),
        ]
    }

    fn spec(level: KnowledgeLevel) -> KnowledgeSpec {
        KnowledgeSpec {
            statistical: StatisticalSource::Lines(vec!["x ranges from -1 to 3".into(), "y ranges from -3 to 1".into()]),
            semantic_text: "A cubic curve.".into(),
            symbolic: vec![Equation::parse("y = x^3-3x^2+1").unwrap()],
            active_level: level,
        }
    }

    #[test]
    fn reads_prompt_parts() {
        let text = build_prompt(&spec(KnowledgeLevel::Semantic), &rows(), 7).unwrap().render();
        let v = read_prompt(&text);
        assert_eq!(v.level, KnowledgeLevel::Semantic);
        assert!(!v.refix);
        assert_eq!(v.columns, vec!["x", "y"]);
        assert_eq!(v.rows.len(), 3);
        assert_eq!(v.ranges["x"], (-1.0, 3.0));
        assert_eq!(v.ranges["y"], (-3.0, 1.0));
        assert_eq!(v.requested, Some(7));
        let none = read_prompt(&build_prompt(&spec(KnowledgeLevel::None), &rows(), 2).unwrap().render());
        assert_eq!(none.level, KnowledgeLevel::None);
        assert!(none.ranges.is_empty());
    }

    #[test]
    fn deterministic_and_on_range() {
        let stub = StubOracle::new(&StubParams::with_ground_truth("y = x^3-3x^2+1")).unwrap();
        let text = build_prompt(&spec(KnowledgeLevel::Statistical), &rows(), 50).unwrap().render();
        let a = stub.respond(&text, 3).unwrap();
        assert_eq!(a, stub.respond(&text, 3).unwrap());
        assert_ne!(a, stub.respond(&text, 4).unwrap());
        let v = read_prompt(&format!("{EXAMPLES_MARKER}\n{a}"));
        assert_eq!(v.rows.len(), 50);
        // Statistical tier present: x spans the stated range, wider than the examples' [0, 2].
        assert!(v.rows.iter().any(|r| r[0] < 0.0 || r[0] > 2.0));
        assert!(v.rows.iter().all(|r| (-1.0..=3.0).contains(&r[0])));
    }

    #[test]
    fn requires_ground_truth() {
        assert!(StubOracle::new(&StubParams::default()).is_err());
    }
}
