//! Knowledge tiers, statistical-knowledge inference and prompt assembly.
//!
//! Levels nest: `statistical` emits the range statements, `semantic` adds
//! the prose description, `symbolic` adds the governing equations. Each
//! tier opens with a fixed section marker so downstream tooling (the stub
//! oracle in particular) can tell which tiers a prompt carries.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::KnowledgeError;
use crate::row_text::{format_significant, RowSentence, DEFAULT_PRECISION};
use crate::symexpr::Equation;
use crate::table::{ColumnKind, Table};

/// Identifies the fixed prompt wording; recorded in every report.
pub const TEMPLATE_VERSION: &str = "kgp-prompt-v1";

pub const STATISTICAL_MARKER: &str = "### Statistical knowledge";
pub const SEMANTIC_MARKER: &str = "### Semantic knowledge";
pub const SYMBOLIC_MARKER: &str = "### Symbolic knowledge";
pub const EXAMPLES_MARKER: &str = "### Example rows";
pub const REFIX_MARKER: &str = "### Rows to correct";

const STATISTICAL_LEAD: &str = "The variables are defined over the following domains: ";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KnowledgeLevel {
    None,
    Statistical,
    Semantic,
    Symbolic,
}

impl KnowledgeLevel {
    pub const ALL: [KnowledgeLevel; 4] = [
        KnowledgeLevel::None,
        KnowledgeLevel::Statistical,
        KnowledgeLevel::Semantic,
        KnowledgeLevel::Symbolic,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            KnowledgeLevel::None => "none",
            KnowledgeLevel::Statistical => "statistical",
            KnowledgeLevel::Semantic => "semantic",
            KnowledgeLevel::Symbolic => "symbolic",
        }
    }
}

impl fmt::Display for KnowledgeLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for KnowledgeLevel {
    type Err = KnowledgeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.trim().to_ascii_lowercase().as_str() {
            "none" => KnowledgeLevel::None,
            "statistical" => KnowledgeLevel::Statistical,
            "semantic" => KnowledgeLevel::Semantic,
            "symbolic" => KnowledgeLevel::Symbolic,
            other => return Err(KnowledgeError::Spec(format!("unknown knowledge level `{other}`"))),
        })
    }
}

/// Where the statistical tier comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum StatisticalSource {
    /// Inferred from the full training table at run time.
    Auto,
    Lines(Vec<String>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeSpec {
    pub statistical: StatisticalSource,
    pub semantic_text: String,
    pub symbolic: Vec<Equation>,
    pub active_level: KnowledgeLevel,
}

impl KnowledgeSpec {
    pub fn none() -> Self {
        Self {
            statistical: StatisticalSource::Auto,
            semantic_text: String::new(),
            symbolic: Vec::new(),
            active_level: KnowledgeLevel::None,
        }
    }

    pub fn with_level(mut self, level: KnowledgeLevel) -> Self {
        self.active_level = level;
        self
    }

    /// Replaces `auto` statistics with lines inferred from `train` and
    /// checks that explicit lines only mention columns of `train`.
    pub fn resolve(&self, train: &Table) -> Result<KnowledgeSpec, KnowledgeError> {
        let mut out = self.clone();
        match &self.statistical {
            StatisticalSource::Auto => {
                out.statistical = StatisticalSource::Lines(infer_statistical(train)?);
            }
            StatisticalSource::Lines(lines) => {
                for line in lines {
                    let column = statement_column(line).ok_or_else(|| {
                        KnowledgeError::Spec(format!(
                            "statistical line `{line}` must read `<column> ranges from <a> to <b>` or `<column> takes values in {{...}}`"
                        ))
                    })?;
                    if train.column_index(column).is_none() {
                        return Err(KnowledgeError::Spec(format!(
                            "statistical line mentions unknown column `{column}`"
                        )));
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn statistical_lines(&self) -> Option<&[String]> {
        match &self.statistical {
            StatisticalSource::Lines(l) => Some(l),
            StatisticalSource::Auto => None,
        }
    }

    pub fn validate(&self) -> Result<(), KnowledgeError> {
        let level = self.active_level;
        if level >= KnowledgeLevel::Semantic && self.semantic_text.trim().is_empty() {
            return Err(KnowledgeError::Spec(format!("level `{level}` requires semantic text")));
        }
        if level >= KnowledgeLevel::Symbolic && self.symbolic.is_empty() {
            return Err(KnowledgeError::Spec("level `symbolic` requires at least one equation".into()));
        }
        Ok(())
    }
}

fn statement_column(line: &str) -> Option<&str> {
    line.split_once(" ranges from ")
        .or_else(|| line.split_once(" takes values in "))
        .map(|(c, _)| c.trim())
}

/// One statement per column using the observed range of the whole table.
pub fn infer_statistical(t: &Table) -> Result<Vec<String>, KnowledgeError> {
    if t.is_empty() {
        return Err(KnowledgeError::Inference("table has no rows".into()));
    }
    Ok(t
        .schema()
        .iter()
        .map(|c| match c.kind {
            ColumnKind::Numeric => format!(
                "{} ranges from {} to {}",
                c.name,
                format_significant(c.observed_min, DEFAULT_PRECISION),
                format_significant(c.observed_max, DEFAULT_PRECISION)
            ),
            ColumnKind::Categorical => {
                let present: Vec<&str> = c
                    .categories
                    .iter()
                    .filter(|cat| {
                        let j = t.column_index(&c.name).expect("own column");
                        t.rows().iter().any(|r| matches!(&r[j], crate::table::Value::Cat(s) if s == *cat))
                    })
                    .map(String::as_str)
                    .collect();
                format!("{} takes values in {{{}}}", c.name, present.join(", "))
            }
        })
        .collect())
}

/// The knowledge section of a prompt for the active level.
pub fn compose_knowledge_block(spec: &KnowledgeSpec) -> Result<String, KnowledgeError> {
    spec.validate()?;
    let level = spec.active_level;
    if level == KnowledgeLevel::None {
        return Ok(String::new());
    }
    let lines = spec.statistical_lines().ok_or_else(|| {
        KnowledgeError::Spec("statistical knowledge is `auto` and has not been resolved against a table".into())
    })?;
    if lines.is_empty() {
        return Err(KnowledgeError::Spec("statistical knowledge is empty".into()));
    }
    let mut out = format!("{STATISTICAL_MARKER}\n{STATISTICAL_LEAD}{}.", lines.join(", "));
    if level >= KnowledgeLevel::Semantic {
        out.push_str(&format!("\n{SEMANTIC_MARKER}\n{}", spec.semantic_text.trim()));
    }
    if level >= KnowledgeLevel::Symbolic {
        out.push_str(&format!("\n{SYMBOLIC_MARKER}"));
        for eq in &spec.symbolic {
            out.push_str(&format!(
                "\nConsider the equation: {}. The column {} equals this expression.",
                eq.source, eq.target
            ));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system_instruction: String,
    pub knowledge_block: String,
    pub icl_block: String,
    pub request_line: String,
}

impl PromptBundle {
    /// Full prompt text: instruction, knowledge, examples, request.
    pub fn render(&self) -> String {
        [&self.system_instruction, &self.knowledge_block, &self.icl_block, &self.request_line]
            .into_iter()
            .filter(|s| !s.is_empty())
            .map(String::as_str)
            .collect::<Vec<_>>()
            .join("\n\n")
    }
}

const FORMAT_RULE: &str = "Write every row as one sentence of the form \"<column> is <value>, <column> is <value>.\" \
using exactly the columns of the rows below, in the same order, one row per line.";

/// Prompt asking for `m` new rows conditioned on one chunk of examples.
pub fn build_prompt(
    spec: &KnowledgeSpec,
    chunk: &[RowSentence],
    m: usize,
) -> Result<PromptBundle, KnowledgeError> {
    if m == 0 {
        return Err(KnowledgeError::Spec("requested row count must be at least 1".into()));
    }
    let knowledge_block = compose_knowledge_block(spec)?;
    let guidance = if knowledge_block.is_empty() {
        ""
    } else {
        " The generated rows must be consistent with the domain knowledge provided."
    };
    Ok(PromptBundle {
        system_instruction: format!(
            "You are a synthetic tabular data generator. Generate NEW rows that follow the same joint \
distribution as the example rows; do not copy the original data.{guidance} {FORMAT_RULE}"
        ),
        knowledge_block,
        icl_block: sentence_block(EXAMPLES_MARKER, chunk),
        request_line: format!("Generate exactly {m} new rows. Output only the rows."),
    })
}

/// Prompt asking the model to correct noisy rows using the knowledge block.
pub fn build_refix_prompt(spec: &KnowledgeSpec, noisy: &[RowSentence]) -> Result<PromptBundle, KnowledgeError> {
    if noisy.is_empty() {
        return Err(KnowledgeError::Spec("nothing to correct".into()));
    }
    let knowledge_block = compose_knowledge_block(spec)?;
    Ok(PromptBundle {
        system_instruction: format!(
            "You are a data-cleaning assistant. The rows below are noisy measurements. Correct each row so that it is \
a valid record of the underlying data, using the domain knowledge provided; do not copy the original data. {FORMAT_RULE}"
        ),
        knowledge_block,
        icl_block: sentence_block(REFIX_MARKER, noisy),
        request_line: format!(
            "Return exactly {} corrected rows in the same order. Output only the rows.",
            noisy.len()
        ),
    })
}

fn sentence_block(marker: &str, rows: &[RowSentence]) -> String {
    let mut s = String::from(marker);
    for r in rows {
        s.push('\n');
        s.push_str(r.as_str());
    }
    s
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct KnowledgeFile {
    level: String,
    #[serde(default)]
    statistical: Option<StatisticalField>,
    #[serde(default)]
    semantic: Option<String>,
    #[serde(default)]
    symbolic: Vec<String>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum StatisticalField {
    Keyword(String),
    Lines(Vec<String>),
}

/// Parses a knowledge spec from TOML text.
pub fn parse_knowledge(text: &str) -> Result<KnowledgeSpec, KnowledgeError> {
    let file: KnowledgeFile = toml::from_str(text).map_err(|e| KnowledgeError::Spec(e.to_string()))?;
    let statistical = match file.statistical {
        None => StatisticalSource::Auto,
        Some(StatisticalField::Keyword(k)) if k.trim() == "auto" => StatisticalSource::Auto,
        Some(StatisticalField::Keyword(k)) => {
            return Err(KnowledgeError::Spec(format!("`statistical` must be \"auto\" or a list, got `{k}`")))
        }
        Some(StatisticalField::Lines(lines)) => StatisticalSource::Lines(lines),
    };
    let symbolic = file
        .symbolic
        .iter()
        .map(|l| Equation::parse(l))
        .collect::<Result<Vec<_>, _>>()?;
    let spec = KnowledgeSpec {
        statistical,
        semantic_text: file.semantic.unwrap_or_default().trim().to_string(),
        symbolic,
        active_level: file.level.parse()?,
    };
    spec.validate()?;
    Ok(spec)
}

pub fn load_knowledge_file(path: impl AsRef<Path>) -> Result<KnowledgeSpec, KnowledgeError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| KnowledgeError::File {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_knowledge(&text).map_err(|e| KnowledgeError::File {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::table::parse_csv;

    fn cubic_spec(level: KnowledgeLevel) -> KnowledgeSpec {
        KnowledgeSpec {
            statistical: StatisticalSource::Lines(vec!["x ranges from -4 to 4".into()]),
            semantic_text: "The function f is decreasing if x<=-2, increasing if -2<=x<=0.".into(),
            symbolic: vec![Equation::parse("y = 3x^4+4x^3-12x^2+2").unwrap()],
            active_level: level,
        }
    }

    #[test]
    fn level_order() {
        assert!(KnowledgeLevel::None < KnowledgeLevel::Statistical);
        assert!(KnowledgeLevel::Statistical < KnowledgeLevel::Semantic);
        assert!(KnowledgeLevel::Semantic < KnowledgeLevel::Symbolic);
        assert_eq!("Semantic".parse::<KnowledgeLevel>().unwrap(), KnowledgeLevel::Semantic);
        assert!("strong".parse::<KnowledgeLevel>().is_err());
    }

    #[test]
    fn infers_ranges() {
        let t = parse_csv("x\n5\n", None).unwrap();
        assert_eq!(infer_statistical(&t).unwrap(), vec!["x ranges from 5 to 5"]);
        let t = parse_csv("protocol,b\nTCP,1\nUDP,2\nTCP,3\n", None).unwrap();
        let lines = infer_statistical(&t).unwrap();
        assert_eq!(lines[0], "protocol takes values in {TCP, UDP}");
        assert_eq!(lines[1], "b ranges from 1 to 3");
        assert!(infer_statistical(&t.empty_like()).is_err());
    }

    #[test]
    fn concentric_composition() {
        assert_eq!(compose_knowledge_block(&cubic_spec(KnowledgeLevel::None)).unwrap(), "");
        let stat = compose_knowledge_block(&cubic_spec(KnowledgeLevel::Statistical)).unwrap();
        let sem = compose_knowledge_block(&cubic_spec(KnowledgeLevel::Semantic)).unwrap();
        let sym = compose_knowledge_block(&cubic_spec(KnowledgeLevel::Symbolic)).unwrap();
        assert!(stat.contains("x ranges from -4 to 4"));
        assert!(sem.starts_with(&stat));
        assert!(sem.contains("decreasing if x<=-2"));
        assert!(sym.starts_with(&sem));
        assert!(sym.contains("Consider the equation: 3x^4+4x^3-12x^2+2."));
        assert!(sym.ends_with("The column y equals this expression."));
        assert!(!stat.contains(SEMANTIC_MARKER));
        assert!(!sem.contains(SYMBOLIC_MARKER));
    }

    #[test]
    fn missing_tier_content_is_an_error() {
        let mut s = cubic_spec(KnowledgeLevel::Semantic);
        s.semantic_text.clear();
        assert!(compose_knowledge_block(&s).is_err());
        let mut s = cubic_spec(KnowledgeLevel::Symbolic);
        s.symbolic.clear();
        assert!(compose_knowledge_block(&s).is_err());
        let mut s = cubic_spec(KnowledgeLevel::Statistical);
        s.statistical = StatisticalSource::Auto;
        assert!(compose_knowledge_block(&s).is_err());
    }

    #[test]
    fn prompt_structure() {
        let rows = vec![RowSentence("x is 1, y is 2.".into()), RowSentence("x is 3, y is 4.".into())];
        let b = build_prompt(&cubic_spec(KnowledgeLevel::None), &rows, 5).unwrap();
        assert!(b.knowledge_block.is_empty());
        assert!(b.request_line.contains("exactly 5 new rows"));
        assert!(b.system_instruction.contains("do not copy the original data"));
        let text = b.render();
        assert!(text.contains("x is 1, y is 2.\nx is 3, y is 4."));
        assert_eq!(text, build_prompt(&cubic_spec(KnowledgeLevel::None), &rows, 5).unwrap().render());
        assert!(build_prompt(&cubic_spec(KnowledgeLevel::None), &rows, 0).is_err());

        let b = build_prompt(&cubic_spec(KnowledgeLevel::Symbolic), &rows, 5).unwrap();
        let text = b.render();
        let k = text.find(STATISTICAL_MARKER).unwrap();
        let e = text.find(EXAMPLES_MARKER).unwrap();
        assert!(text.find("You are").unwrap() < k && k < e && e < text.find("Generate exactly").unwrap());
    }

    #[test]
    fn resolve_checks_columns() {
        let t = parse_csv("x,y\n1,2\n3,5\n", None).unwrap();
        let auto = KnowledgeSpec::none().with_level(KnowledgeLevel::Statistical).resolve(&t).unwrap();
        assert_eq!(auto.statistical_lines().unwrap(), ["x ranges from 1 to 3", "y ranges from 2 to 5"]);
        let mut bad = cubic_spec(KnowledgeLevel::Statistical);
        bad.statistical = StatisticalSource::Lines(vec!["z ranges from 0 to 1".into()]);
        assert!(bad.resolve(&t).is_err());
        bad.statistical = StatisticalSource::Lines(vec!["x is small".into()]);
        assert!(bad.resolve(&t).is_err());
    }

    #[test]
    fn knowledge_file_grammar() {
        let spec = parse_knowledge(
            r#"
level = "symbolic"
statistical = "auto"
semantic = """
The function is smooth.
"""
symbolic = ["y = x^3-3x^2+1"]
"#,
        )
        .unwrap();
        assert_eq!(spec.active_level, KnowledgeLevel::Symbolic);
        assert_eq!(spec.statistical, StatisticalSource::Auto);
        assert_eq!(spec.semantic_text, "The function is smooth.");
        assert_eq!(spec.symbolic[0].target, "y");

        let spec = parse_knowledge("level = \"statistical\"\nstatistical = [\"x ranges from 0 to 1\"]\n").unwrap();
        assert_eq!(spec.statistical_lines().unwrap(), ["x ranges from 0 to 1"]);

        assert!(parse_knowledge("level = \"semantic\"\n").is_err());
        assert!(parse_knowledge("level = \"symbolic\"\nsemantic = \"s\"\nsymbolic = [\"y = x+\"]\n").is_err());
        assert!(parse_knowledge("level = \"none\"\nbogus = 1\n").is_err());
        assert!(parse_knowledge("level = \"none\"\nstatistical = \"manual\"\n").is_err());
    }
}
