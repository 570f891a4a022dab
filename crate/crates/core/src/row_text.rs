//! Row ⇄ sentence conversion in the `"<col> is <value>, <col> is <value>."`
//! form used for in-context examples and expected back from the model.

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::table::{ColumnKind, ColumnSpec, Provenance, Table, Value};

pub const DEFAULT_PRECISION: usize = 6;

/// One serialized row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowSentence(pub String);

impl RowSentence {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseReport {
    pub accepted: usize,
    pub dropped_missing_column: usize,
    pub dropped_unparseable: usize,
    pub dropped_out_of_schema: usize,
    pub dropped_duplicate_column: usize,
}

impl ParseReport {
    pub fn dropped(&self) -> usize {
        self.dropped_missing_column
            + self.dropped_unparseable
            + self.dropped_out_of_schema
            + self.dropped_duplicate_column
    }

    pub fn candidates(&self) -> usize {
        self.accepted + self.dropped()
    }

    pub fn absorb(&mut self, other: &ParseReport) {
        self.accepted += other.accepted;
        self.dropped_missing_column += other.dropped_missing_column;
        self.dropped_unparseable += other.dropped_unparseable;
        self.dropped_out_of_schema += other.dropped_out_of_schema;
        self.dropped_duplicate_column += other.dropped_duplicate_column;
    }
}

/// Formats `v` with at most `digits` significant digits, trailing zeros
/// trimmed, in plain decimal notation unless the magnitude is extreme.
pub fn format_significant(v: f64, digits: usize) -> String {
    let digits = digits.max(1);
    if v == 0.0 || !v.is_finite() {
        return if v.is_finite() { "0".into() } else { v.to_string() };
    }
    let sci = format!("{:.*e}", digits - 1, v);
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("integer exponent");
    let negative = mantissa.starts_with('-');
    let mantissa_digits: String = mantissa.chars().filter(|c| c.is_ascii_digit()).collect();
    let body = if !(-7..=15).contains(&exp) {
        let mut m = mantissa.trim_start_matches('-').to_string();
        if m.contains('.') {
            m = m.trim_end_matches('0').trim_end_matches('.').to_string();
        }
        format!("{m}e{exp}")
    } else if exp < 0 {
        let zeros = "0".repeat((-exp - 1) as usize);
        let frac = format!("{zeros}{mantissa_digits}");
        format!("0.{}", frac.trim_end_matches('0'))
    } else {
        let int_len = exp as usize + 1;
        let mut d = mantissa_digits;
        if d.len() < int_len {
            d.push_str(&"0".repeat(int_len - d.len()));
        }
        let (int_part, frac_part) = d.split_at(int_len);
        let frac_part = frac_part.trim_end_matches('0');
        if frac_part.is_empty() {
            int_part.to_string()
        } else {
            format!("{int_part}.{frac_part}")
        }
    };
    if negative {
        format!("-{body}")
    } else {
        body
    }
}

pub fn format_value(v: &Value, precision: usize) -> String {
    match v {
        Value::Num(x) => format_significant(*x, precision),
        Value::Cat(s) => s.clone(),
    }
}

pub fn serialize_row(names: &[&str], row: &[Value], precision: usize) -> RowSentence {
    let body = names
        .iter()
        .zip(row)
        .map(|(n, v)| format!("{n} is {}", format_value(v, precision)))
        .collect::<Vec<_>>()
        .join(", ");
    RowSentence(format!("{body}."))
}

pub fn serialize_rows(t: &Table, precision: usize) -> Vec<RowSentence> {
    let names = t.column_names();
    t.rows().iter().map(|r| serialize_row(&names, r, precision)).collect()
}

static NUMBER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?$").expect("valid regex"));
static PAIR: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"([A-Za-z_][A-Za-z0-9_]*)\s+is\s+").expect("valid regex"));

/// Splits text into candidate segments at newlines and at sentence-ending
/// periods (a '.' not followed by a digit).
fn segments(text: &str) -> Vec<&str> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut start = 0;
    for (i, &b) in bytes.iter().enumerate() {
        let ends = match b {
            b'\n' | b'\r' => true,
            b'.' => !bytes.get(i + 1).is_some_and(u8::is_ascii_digit),
            _ => false,
        };
        if ends {
            out.push(&text[start..i]);
            start = i + 1;
        }
    }
    out.push(&text[start..]);
    out
}

/// `name is value` pairs of one segment. Each comma-separated part yields
/// at most one pair, taken from the last `<name> is` occurrence so that
/// narrative lead-ins ("here is row 3: x is 1") resolve to the data pair.
fn pairs(segment: &str) -> Vec<(&str, &str)> {
    segment
        .split(',')
        .filter_map(|part| {
            let m = PAIR.captures_iter(part).last()?;
            let name = m.get(1)?.as_str();
            let value = part[m.get(0)?.end()..].trim();
            Some((name, value))
        })
        .collect()
}

enum CellFault {
    Unparseable,
    /// A categorical value outside the known categories.
    OutOfSchema,
}

fn parse_cell(col: &ColumnSpec, raw: &str) -> Result<Value, CellFault> {
    match col.kind {
        ColumnKind::Numeric => {
            if !NUMBER.is_match(raw) {
                return Err(CellFault::Unparseable);
            }
            raw.parse::<f64>().ok().filter(|v| v.is_finite()).map(Value::Num).ok_or(CellFault::Unparseable)
        }
        ColumnKind::Categorical => match col.categories.iter().any(|c| c == raw) {
            true => Ok(Value::Cat(raw.to_string())),
            false => Err(CellFault::OutOfSchema),
        },
    }
}

/// Extracts schema-conformant rows from raw model output. Never fails:
/// every segment that mentions at least one schema column is a candidate
/// and is either accepted or tallied under exactly one drop reason.
pub fn parse_generated(text: &str, schema: &[ColumnSpec]) -> (Table, ParseReport) {
    let mut report = ParseReport::default();
    let mut rows = Vec::new();
    for seg in segments(text) {
        let found = pairs(seg);
        if !found.iter().any(|(n, _)| schema.iter().any(|c| c.name == *n)) {
            continue;
        }
        if found.iter().any(|(n, _)| !schema.iter().any(|c| c.name == *n)) {
            report.dropped_out_of_schema += 1;
            continue;
        }
        let mut slots: Vec<Option<&str>> = vec![None; schema.len()];
        let mut duplicate = false;
        for (name, value) in &found {
            let j = schema.iter().position(|c| c.name == *name).expect("checked above");
            if slots[j].replace(value).is_some() {
                duplicate = true;
            }
        }
        if duplicate {
            report.dropped_duplicate_column += 1;
            continue;
        }
        if slots.iter().any(Option::is_none) {
            report.dropped_missing_column += 1;
            continue;
        }
        let row: Result<Vec<Value>, CellFault> = schema
            .iter()
            .zip(&slots)
            .map(|(col, raw)| parse_cell(col, raw.expect("all present")))
            .collect();
        match row {
            Ok(row) => {
                report.accepted += 1;
                rows.push(row);
            }
            Err(CellFault::Unparseable) => report.dropped_unparseable += 1,
            Err(CellFault::OutOfSchema) => report.dropped_out_of_schema += 1,
        }
    }
    let table = Table::new(schema.to_vec(), rows, Provenance::Synthetic)
        .expect("parsed rows satisfy the schema");
    (table, report)
}
