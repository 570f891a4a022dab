//! Columnar-ish tabular data model: schema inference, CSV I/O, seeded
//! sampling and splitting, Gaussian noise injection and region masking.
//!
//! Every derived table keeps the column order and categorical domains of its
//! parent. Numeric `observed_min`/`observed_max` always describe the rows of
//! the table they belong to (an empty table keeps the parent's ranges).

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::TableError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Numeric,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
    /// Numeric columns only.
    pub observed_min: f64,
    /// Numeric columns only.
    pub observed_max: f64,
    /// Categorical columns only, in first-appearance order.
    pub categories: Vec<String>,
}

impl ColumnSpec {
    pub fn numeric(name: impl Into<String>, min: f64, max: f64) -> Self {
        Self {
            name: name.into(),
            kind: ColumnKind::Numeric,
            observed_min: min,
            observed_max: max,
            categories: Vec::new(),
        }
    }

    pub fn categorical(name: impl Into<String>, categories: Vec<String>) -> Self {
        Self {
            name: name.into(),
            kind: ColumnKind::Categorical,
            observed_min: 0.0,
            observed_max: 0.0,
            categories,
        }
    }

    pub fn is_numeric(&self) -> bool {
        self.kind == ColumnKind::Numeric
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Num(f64),
    Cat(String),
}

impl Value {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Num(v) => Some(*v),
            Value::Cat(_) => None,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            // `{}` on f64 is the shortest representation that round-trips.
            Value::Num(v) => write!(f, "{v}"),
            Value::Cat(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Real,
    Synthetic,
    Noised,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    schema: Vec<ColumnSpec>,
    rows: Vec<Vec<Value>>,
    provenance: Provenance,
}

impl Table {
    /// Builds a table, validating every row against `schema` and refreshing
    /// the numeric observed ranges from the rows.
    pub fn new(
        schema: Vec<ColumnSpec>,
        rows: Vec<Vec<Value>>,
        provenance: Provenance,
    ) -> Result<Self, TableError> {
        let mut seen = HashSet::new();
        for col in &schema {
            if !seen.insert(col.name.as_str()) {
                return Err(TableError::Schema(format!("duplicate column `{}`", col.name)));
            }
            if col.kind == ColumnKind::Categorical && col.categories.is_empty() {
                return Err(TableError::Schema(format!(
                    "categorical column `{}` has no categories",
                    col.name
                )));
            }
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != schema.len() {
                return Err(TableError::Row {
                    line: i + 1,
                    message: format!("expected {} values, found {}", schema.len(), row.len()),
                });
            }
            for (col, value) in schema.iter().zip(row) {
                match (col.kind, value) {
                    (ColumnKind::Numeric, Value::Num(v)) if v.is_finite() => {}
                    (ColumnKind::Numeric, Value::Num(v)) => {
                        return Err(TableError::Value {
                            line: i + 1,
                            column: col.name.clone(),
                            message: format!("non-finite value {v}"),
                        })
                    }
                    (ColumnKind::Categorical, Value::Cat(s)) if col.categories.contains(s) => {}
                    _ => {
                        return Err(TableError::Value {
                            line: i + 1,
                            column: col.name.clone(),
                            message: format!("`{value}` does not match the column kind or domain"),
                        })
                    }
                }
            }
        }
        let mut table = Self { schema, rows, provenance };
        table.refresh_ranges();
        Ok(table)
    }

    /// Numeric-only table from column names and row-major values.
    pub fn from_numeric(names: &[&str], rows: Vec<Vec<f64>>) -> Result<Self, TableError> {
        let schema = names.iter().map(|n| ColumnSpec::numeric(*n, 0.0, 0.0)).collect();
        let rows = rows.into_iter().map(|r| r.into_iter().map(Value::Num).collect()).collect();
        Self::new(schema, rows, Provenance::Real)
    }

    fn refresh_ranges(&mut self) {
        if self.rows.is_empty() {
            return;
        }
        for (j, col) in self.schema.iter_mut().enumerate() {
            if col.kind != ColumnKind::Numeric {
                continue;
            }
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for row in &self.rows {
                if let Value::Num(v) = row[j] {
                    lo = lo.min(v);
                    hi = hi.max(v);
                }
            }
            col.observed_min = lo;
            col.observed_max = hi;
        }
    }

    /// Same schema, different rows. Rows are assumed valid for the schema.
    fn derive(&self, rows: Vec<Vec<Value>>, provenance: Provenance) -> Self {
        let mut t = Self { schema: self.schema.clone(), rows, provenance };
        t.refresh_ranges();
        t
    }

    pub fn schema(&self) -> &[ColumnSpec] {
        &self.schema
    }

    pub fn rows(&self) -> &[Vec<Value>] {
        &self.rows
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = provenance;
        self
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column_names(&self) -> Vec<&str> {
        self.schema.iter().map(|c| c.name.as_str()).collect()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.schema.iter().position(|c| c.name == name)
    }

    pub fn column(&self, name: &str) -> Option<&ColumnSpec> {
        self.schema.iter().find(|c| c.name == name)
    }

    /// Values of a numeric column, or `None` if absent or categorical.
    pub fn numeric_column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.column_index(name)?;
        if !self.schema[j].is_numeric() {
            return None;
        }
        Some(self.rows.iter().filter_map(|r| r[j].as_f64()).collect())
    }

    pub fn numeric_column_names(&self) -> Vec<&str> {
        self.schema
            .iter()
            .filter(|c| c.is_numeric())
            .map(|c| c.name.as_str())
            .collect()
    }

    /// Row-major matrix over the named numeric columns.
    pub fn numeric_matrix(&self, columns: &[&str]) -> Result<Vec<Vec<f64>>, TableError> {
        let idx = columns
            .iter()
            .map(|name| match self.column_index(name) {
                Some(j) if self.schema[j].is_numeric() => Ok(j),
                Some(_) => Err(TableError::Schema(format!("column `{name}` is not numeric"))),
                None => Err(TableError::Schema(format!("unknown column `{name}`"))),
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(self
            .rows
            .iter()
            .map(|r| idx.iter().map(|&j| r[j].as_f64().unwrap_or(f64::NAN)).collect())
            .collect())
    }

    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let rows = indices.iter().map(|&i| self.rows[i].clone()).collect();
        self.derive(rows, self.provenance)
    }

    pub fn slice(&self, start: usize, end: usize) -> Self {
        self.derive(self.rows[start..end].to_vec(), self.provenance)
    }

    /// Concatenates tables that share this table's column names.
    pub fn concat<'a>(
        &self,
        others: impl IntoIterator<Item = &'a Table>,
    ) -> Result<Self, TableError> {
        let mut rows = self.rows.clone();
        for other in others {
            if other.column_names() != self.column_names() {
                return Err(TableError::Schema("cannot concatenate tables with different columns".into()));
            }
            rows.extend(other.rows.iter().cloned());
        }
        Ok(self.derive(rows, self.provenance))
    }

    /// Empty table with the same schema (ranges preserved).
    pub fn empty_like(&self) -> Self {
        Self { schema: self.schema.clone(), rows: Vec::new(), provenance: self.provenance }
    }
}

/// Per-column kind overrides for [`load_csv`].
#[derive(Debug, Clone, Default)]
pub struct SchemaHint {
    pub kinds: BTreeMap<String, ColumnKind>,
}

impl SchemaHint {
    pub fn categorical(names: &[&str]) -> Self {
        Self {
            kinds: names.iter().map(|n| (n.to_string(), ColumnKind::Categorical)).collect(),
        }
    }
}

fn parse_decimal(cell: &str) -> Option<f64> {
    let s = cell.trim();
    let bytes = s.as_bytes();
    if bytes.is_empty() {
        return None;
    }
    // Accept only plain decimal syntax; `f64::from_str` would also take "inf"/"nan".
    let ok = bytes
        .iter()
        .all(|b| b.is_ascii_digit() || matches!(b, b'+' | b'-' | b'.' | b'e' | b'E'))
        && bytes.iter().any(|b| b.is_ascii_digit());
    if !ok {
        return None;
    }
    s.parse::<f64>().ok()
}

fn looks_non_finite(cell: &str) -> bool {
    let s = cell.trim().trim_start_matches(['+', '-']).to_ascii_lowercase();
    matches!(s.as_str(), "inf" | "infinity" | "nan")
}

/// Loads a comma-separated, header-first CSV file.
///
/// A column is numeric when every non-empty cell parses as a decimal number;
/// otherwise it is categorical. Rows containing an empty cell are dropped.
pub fn load_csv(path: impl AsRef<Path>, hint: Option<&SchemaHint>) -> Result<Table, TableError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| TableError::Io(format!("{}: {e}", path.display())))?;
    parse_csv(&text, hint)
}

pub fn parse_csv(text: &str, hint: Option<&SchemaHint>) -> Result<Table, TableError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut records = reader.records();
    let header = match records.next() {
        Some(Ok(h)) if h.iter().any(|c| !c.trim().is_empty()) => h,
        Some(Err(e)) => return Err(TableError::Schema(format!("unreadable header: {e}"))),
        _ => return Err(TableError::Schema("missing header line".into())),
    };
    let names: Vec<String> = header.iter().map(|c| c.trim().to_string()).collect();
    let mut seen = HashSet::new();
    for n in &names {
        if n.is_empty() {
            return Err(TableError::Schema("empty column name in header".into()));
        }
        if !seen.insert(n.as_str()) {
            return Err(TableError::Schema(format!("duplicate column `{n}` in header")));
        }
    }

    let mut raw: Vec<(usize, Vec<String>)> = Vec::new();
    for record in records {
        let record = record.map_err(|e| TableError::Row {
            line: e.position().map(|p| p.line() as usize).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        if record.len() == 1 && record[0].trim().is_empty() {
            continue;
        }
        if record.len() != names.len() {
            return Err(TableError::Row {
                line,
                message: format!("expected {} fields, found {}", names.len(), record.len()),
            });
        }
        let cells: Vec<String> = record.iter().map(|c| c.trim().to_string()).collect();
        if cells.iter().any(|c| c.is_empty()) {
            continue;
        }
        raw.push((line, cells));
    }

    let mut kinds = Vec::with_capacity(names.len());
    for (j, name) in names.iter().enumerate() {
        let kind = match hint.and_then(|h| h.kinds.get(name)) {
            Some(k) => *k,
            None => {
                let mut numeric = true;
                for (line, cells) in &raw {
                    if parse_decimal(&cells[j]).is_some() {
                        continue;
                    }
                    if looks_non_finite(&cells[j]) {
                        return Err(TableError::Value {
                            line: *line,
                            column: name.clone(),
                            message: format!("non-finite numeric value `{}`", cells[j]),
                        });
                    }
                    numeric = false;
                    break;
                }
                if numeric {
                    ColumnKind::Numeric
                } else {
                    ColumnKind::Categorical
                }
            }
        };
        kinds.push(kind);
    }

    let mut schema: Vec<ColumnSpec> = names
        .iter()
        .zip(&kinds)
        .map(|(n, k)| match k {
            ColumnKind::Numeric => ColumnSpec::numeric(n.clone(), 0.0, 0.0),
            ColumnKind::Categorical => ColumnSpec::categorical(n.clone(), Vec::new()),
        })
        .collect();
    let mut rows = Vec::with_capacity(raw.len());
    for (line, cells) in raw {
        let mut row = Vec::with_capacity(cells.len());
        for (j, cell) in cells.into_iter().enumerate() {
            match kinds[j] {
                ColumnKind::Numeric => {
                    let v = parse_decimal(&cell).ok_or_else(|| TableError::Value {
                        line,
                        column: names[j].clone(),
                        message: format!("`{cell}` is not a decimal number"),
                    })?;
                    if !v.is_finite() {
                        return Err(TableError::Value {
                            line,
                            column: names[j].clone(),
                            message: format!("non-finite numeric value `{cell}`"),
                        });
                    }
                    row.push(Value::Num(v));
                }
                ColumnKind::Categorical => {
                    let cats = &mut schema[j].categories;
                    if !cats.contains(&cell) {
                        cats.push(cell.clone());
                    }
                    row.push(Value::Cat(cell));
                }
            }
        }
        rows.push(row);
    }
    // A categorical column with no surviving rows still needs a domain.
    for col in &mut schema {
        if col.kind == ColumnKind::Categorical && col.categories.is_empty() {
            col.kind = ColumnKind::Numeric;
        }
    }
    Table::new(schema, rows, Provenance::Real)
}

pub fn to_csv_string(t: &Table) -> String {
    let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
    w.write_record(t.column_names()).expect("in-memory write");
    for row in t.rows() {
        w.write_record(row.iter().map(|v| v.to_string())).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 input")
}

pub fn write_csv(t: &Table, path: impl AsRef<Path>) -> Result<(), TableError> {
    let path = path.as_ref();
    crate::store::write_atomic(path, to_csv_string(t).as_bytes())
        .map_err(|e| TableError::Io(format!("{}: {e}", path.display())))
}

/// Number of rows routed to the test side: `max(1, ⌊n·f⌋)`.
pub fn test_split_size(n: usize, test_fraction: f64) -> usize {
    (((n as f64) * test_fraction + 1e-9).floor() as usize).clamp(1, n.saturating_sub(1).max(1))
}

/// Seeded disjoint train/test partition; both sides keep the input row order.
pub fn split_train_test(t: &Table, test_fraction: f64, seed: u64) -> Result<(Table, Table), TableError> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(TableError::Config(format!(
            "test fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    if t.len() < 2 {
        return Err(TableError::Size(format!("cannot split a table with {} rows", t.len())));
    }
    let n = t.len();
    let n_test = test_split_size(n, test_fraction);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut test: Vec<usize> = idx[..n_test].to_vec();
    let mut train: Vec<usize> = idx[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    Ok((t.select_rows(&train), t.select_rows(&test)))
}

/// Uniform sample of `n` rows without replacement; survivors keep table order.
pub fn sample_rows(t: &Table, n: usize, seed: u64) -> Result<Table, TableError> {
    if n > t.len() {
        return Err(TableError::Size(format!(
            "cannot sample {n} rows from a table with {} rows",
            t.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, t.len(), n).into_vec();
    idx.sort_unstable();
    Ok(t.select_rows(&idx))
}

pub(crate) fn sample_std(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (ss / (n - 1.0)).sqrt()
}

/// Adds `N(0, (sigma_fraction · std_col)²)` to every numeric cell, where
/// `std_col` is the column's sample standard deviation. Categorical and
/// constant columns are left untouched.
pub fn add_gaussian_noise(t: &Table, sigma_fraction: f64, seed: u64) -> Result<Table, TableError> {
    if !(sigma_fraction >= 0.0 && sigma_fraction.is_finite()) {
        return Err(TableError::Config(format!(
            "noise fraction must be finite and non-negative, got {sigma_fraction}"
        )));
    }
    let scales: Vec<Option<f64>> = t
        .schema()
        .iter()
        .map(|c| {
            if !c.is_numeric() {
                return None;
            }
            let std = sample_std(&t.numeric_column(&c.name).unwrap_or_default());
            let scale = sigma_fraction * std;
            (scale > 0.0).then_some(scale)
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let rows = t
        .rows()
        .iter()
        .map(|row| {
            row.iter()
                .zip(&scales)
                .map(|(v, s)| match (v, s) {
                    (Value::Num(x), Some(scale)) => Value::Num(x + scale * unit.sample(&mut rng)),
                    _ => v.clone(),
                })
                .collect()
        })
        .collect();
    Ok(t.derive(rows, Provenance::Noised))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    #[default]
    ExcludeFromTrain,
}

/// A closed interval `[lo, hi]` on one numeric column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionMask {
    pub column: String,
    pub lo: f64,
    pub hi: f64,
    #[serde(default)]
    pub mode: MaskMode,
}

impl RegionMask {
    pub fn new(column: impl Into<String>, lo: f64, hi: f64) -> Result<Self, TableError> {
        let m = Self { column: column.into(), lo, hi, mode: MaskMode::ExcludeFromTrain };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), TableError> {
        if !(self.lo < self.hi) {
            return Err(TableError::Config(format!(
                "mask interval requires lo < hi, got [{}, {}]",
                self.lo, self.hi
            )));
        }
        Ok(())
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && v <= self.hi
    }

    fn column_index(&self, t: &Table) -> Result<usize, TableError> {
        self.validate()?;
        match t.column_index(&self.column) {
            Some(j) if t.schema()[j].is_numeric() => Ok(j),
            Some(_) => Err(TableError::Schema(format!("mask column `{}` is not numeric", self.column))),
            None => Err(TableError::Schema(format!("unknown mask column `{}`", self.column))),
        }
    }
}

/// Rows outside the mask interval: the observed field used as the ICL pool.
pub fn apply_mask(t: &Table, mask: &RegionMask) -> Result<Table, TableError> {
    let j = mask.column_index(t)?;
    let idx: Vec<usize> = (0..t.len())
        .filter(|&i| !t.rows()[i][j].as_f64().is_some_and(|v| mask.contains(v)))
        .collect();
    Ok(t.select_rows(&idx))
}

/// Rows inside the mask interval: the held-out region.
pub fn masked_region(t: &Table, mask: &RegionMask) -> Result<Table, TableError> {
    let j = mask.column_index(t)?;
    let idx: Vec<usize> = (0..t.len())
        .filter(|&i| t.rows()[i][j].as_f64().is_some_and(|v| mask.contains(v)))
        .collect();
    Ok(t.select_rows(&idx))
}
