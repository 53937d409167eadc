//! Typed in-memory tables.
//!
//! A [`Table`] is an ordered list of uniquely named columns over rows of
//! [`Value`] cells. Cell types are inferred once, at parse time: anything that
//! reads as a plain decimal number (optional sign, thousands separators,
//! decimal point, surrounding spaces) becomes a [`Value::Number`], the empty
//! string becomes [`Value::Empty`], everything else is [`Value::Text`].
//!
//! Numbers keep the exact source string so serialization is lossless.

use std::fmt;
use std::str::FromStr;

use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Upper bound (exclusive) of the small-table bucket, in estimated tokens.
pub const SMALL_TABLE_TOKENS: usize = 2000;
/// Upper bound (inclusive) of the medium-table bucket, in estimated tokens.
pub const MEDIUM_TABLE_TOKENS: usize = 4000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TableError {
    #[error("empty source")]
    EmptySource,
    #[error("row {row} has {found} cells, expected {expected}")]
    RaggedRow {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("duplicate column `{0}`")]
    DuplicateColumn(String),
    #[error("column {0} has an empty name")]
    EmptyColumnName(usize),
    #[error("table has no columns")]
    NoColumns,
    #[error("malformed {format} source: {message}")]
    Malformed {
        format: &'static str,
        message: String,
    },
}

/// A numeric cell: the source text plus its parsed magnitude.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Number {
    raw: String,
    magnitude: Decimal,
}

impl Number {
    pub fn parse(raw: &str) -> Option<Number> {
        parse_decimal(raw).map(|magnitude| Number {
            raw: raw.to_string(),
            magnitude,
        })
    }

    /// A computed number, rendered in canonical form.
    pub fn from_decimal(magnitude: Decimal) -> Number {
        let magnitude = magnitude.normalize();
        Number {
            raw: canonical_decimal(magnitude),
            magnitude,
        }
    }

    pub fn raw(&self) -> &str {
        &self.raw
    }

    pub fn magnitude(&self) -> Decimal {
        self.magnitude
    }
}

/// One table cell.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Value {
    Text(String),
    Number(Number),
    Empty,
}

impl Value {
    /// Classifies a raw cell string.
    pub fn infer(raw: &str) -> Value {
        if raw.is_empty() {
            Value::Empty
        } else if let Some(n) = Number::parse(raw) {
            Value::Number(n)
        } else {
            Value::Text(raw.to_string())
        }
    }

    pub fn number(magnitude: Decimal) -> Value {
        Value::Number(Number::from_decimal(magnitude))
    }

    pub fn as_number(&self) -> Option<Decimal> {
        match self {
            Value::Number(n) => Some(n.magnitude),
            _ => None,
        }
    }

    pub fn is_empty(&self) -> bool {
        matches!(self, Value::Empty)
    }

    /// Cell text as it appears in serialized tables.
    pub fn as_str(&self) -> &str {
        match self {
            Value::Text(s) => s,
            Value::Number(n) => &n.raw,
            Value::Empty => "",
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Parses a plain decimal number: surrounding spaces, optional sign,
/// digits with optional well-formed thousands separators, optional fraction.
pub fn parse_decimal(raw: &str) -> Option<Decimal> {
    let s = raw.trim_matches(' ');
    let (negative, body) = match s.as_bytes().first()? {
        b'-' => (true, &s[1..]),
        b'+' => (false, &s[1..]),
        _ => (false, s),
    };
    let (int_part, frac_part) = match body.split_once('.') {
        Some((i, f)) => (i, Some(f)),
        None => (body, None),
    };
    if let Some(f) = frac_part {
        if !f.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
    }
    let int_digits: String = if int_part.contains(',') {
        let mut groups = int_part.split(',');
        let first = groups.next()?;
        if first.is_empty() || first.len() > 3 || !first.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        let mut digits = first.to_string();
        for g in groups {
            if g.len() != 3 || !g.bytes().all(|b| b.is_ascii_digit()) {
                return None;
            }
            digits.push_str(g);
        }
        digits
    } else {
        if !int_part.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        int_part.to_string()
    };
    let frac = frac_part.unwrap_or("");
    if int_digits.is_empty() && frac.is_empty() {
        return None;
    }
    let mut text = String::with_capacity(int_digits.len() + frac.len() + 3);
    if negative {
        text.push('-');
    }
    text.push_str(if int_digits.is_empty() { "0" } else { &int_digits });
    if !frac.is_empty() {
        text.push('.');
        text.push_str(frac);
    }
    Decimal::from_str_exact(&text).ok()
}

/// Shortest exact decimal rendering: no trailing zeros, no negative zero.
pub fn canonical_decimal(d: Decimal) -> String {
    let d = d.normalize();
    if d.is_zero() {
        "0".to_string()
    } else {
        d.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SizeBucket {
    Small,
    Medium,
    Large,
}

impl SizeBucket {
    pub fn name(self) -> &'static str {
        match self {
            SizeBucket::Small => "small",
            SizeBucket::Medium => "medium",
            SizeBucket::Large => "large",
        }
    }
}

pub fn size_bucket(tokens: usize) -> SizeBucket {
    if tokens < SMALL_TABLE_TOKENS {
        SizeBucket::Small
    } else if tokens <= MEDIUM_TABLE_TOKENS {
        SizeBucket::Medium
    } else {
        SizeBucket::Large
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceFormat {
    Tsv,
    Csv,
    JsonlFixture,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SerializeStyle {
    Pipe,
    Tsv,
}

/// Normalized form used for column-name matching.
pub fn column_key(name: &str) -> String {
    name.trim().to_lowercase()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Table {
    columns: Vec<String>,
    rows: Vec<Vec<Value>>,
    provenance: Option<String>,
}

impl Table {
    pub fn new(columns: Vec<String>, rows: Vec<Vec<Value>>) -> Result<Table, TableError> {
        if columns.is_empty() {
            return Err(TableError::NoColumns);
        }
        let mut seen = std::collections::HashSet::new();
        for (i, c) in columns.iter().enumerate() {
            let key = column_key(c);
            if key.is_empty() {
                return Err(TableError::EmptyColumnName(i));
            }
            if !seen.insert(key) {
                return Err(TableError::DuplicateColumn(c.clone()));
            }
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != columns.len() {
                return Err(TableError::RaggedRow {
                    row: i + 1,
                    expected: columns.len(),
                    found: row.len(),
                });
            }
        }
        Ok(Table {
            columns,
            rows,
            provenance: None,
        })
    }

    /// Builds a table from raw cell strings, inferring cell types.
    pub fn from_strings<S: AsRef<str>>(columns: &[S], rows: &[Vec<S>]) -> Result<Table, TableError> {
        Table::new(
            columns.iter().map(|c| c.as_ref().to_string()).collect(),
            rows.iter()
                .map(|r| r.iter().map(|c| Value::infer(c.as_ref())).collect())
                .collect(),
        )
    }

    pub fn with_provenance(mut self, source: impl Into<String>) -> Table {
        self.provenance = Some(source.into());
        self
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn rows(&self) -> &[Vec<Value>] {
        &self.rows
    }

    pub fn provenance(&self) -> Option<&str> {
        self.provenance.as_deref()
    }

    pub fn row_count(&self) -> usize {
        self.rows.len()
    }

    pub fn column_count(&self) -> usize {
        self.columns.len()
    }

    /// Case-insensitive, whitespace-trimmed column lookup.
    pub fn column_index(&self, name: &str) -> Option<usize> {
        let key = column_key(name);
        self.columns.iter().position(|c| column_key(c) == key)
    }

    pub fn column_values(&self, index: usize) -> impl Iterator<Item = &Value> + '_ {
        self.rows.iter().map(move |r| &r[index])
    }

    pub(crate) fn from_parts_unchecked(
        columns: Vec<String>,
        rows: Vec<Vec<Value>>,
        provenance: Option<String>,
    ) -> Table {
        debug_assert!(rows.iter().all(|r| r.len() == columns.len()));
        Table {
            columns,
            rows,
            provenance,
        }
    }

    pub fn serialize(&self, style: SerializeStyle) -> String {
        serialize_table(self, style)
    }
}

pub fn parse_table(source: &str, format: SourceFormat) -> Result<Table, TableError> {
    match format {
        SourceFormat::Tsv => parse_tsv(source),
        SourceFormat::Csv => parse_csv(source),
        SourceFormat::JsonlFixture => parse_fixture_table(source),
    }
}

fn build(records: Vec<Vec<String>>) -> Result<Table, TableError> {
    let mut records = records.into_iter();
    let header = records.next().ok_or(TableError::EmptySource)?;
    let width = header.len();
    let mut rows = Vec::new();
    for (i, rec) in records.enumerate() {
        if rec.len() != width {
            return Err(TableError::RaggedRow {
                row: i + 1,
                expected: width,
                found: rec.len(),
            });
        }
        rows.push(rec.iter().map(|c| Value::infer(c)).collect());
    }
    Table::new(header, rows)
}

fn parse_tsv(source: &str) -> Result<Table, TableError> {
    if source.is_empty() {
        return Err(TableError::EmptySource);
    }
    let body = source.strip_suffix('\n').unwrap_or(source);
    let records = body
        .split('\n')
        .map(|line| {
            let line = line.strip_suffix('\r').unwrap_or(line);
            line.split('\t').map(unescape_tsv).collect()
        })
        .collect();
    build(records)
}

fn parse_csv(source: &str) -> Result<Table, TableError> {
    if source.is_empty() {
        return Err(TableError::EmptySource);
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(source.as_bytes());
    let mut records = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| TableError::Malformed {
            format: "csv",
            message: e.to_string(),
        })?;
        records.push(rec.iter().map(str::to_string).collect());
    }
    build(records)
}

#[derive(Deserialize)]
struct FixtureTable {
    columns: Vec<String>,
    rows: Vec<Vec<serde_json::Value>>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum FixtureSource {
    Record { table: FixtureTable },
    Bare(FixtureTable),
}

pub(crate) fn fixture_cell(v: &serde_json::Value) -> Value {
    match v {
        serde_json::Value::Null => Value::Empty,
        serde_json::Value::String(s) => Value::infer(s),
        other => Value::infer(&other.to_string()),
    }
}

fn parse_fixture_table(source: &str) -> Result<Table, TableError> {
    let trimmed = source.trim();
    if trimmed.is_empty() {
        return Err(TableError::EmptySource);
    }
    let parsed: FixtureSource = serde_json::from_str(trimmed).map_err(|e| TableError::Malformed {
        format: "jsonl-fixture",
        message: e.to_string(),
    })?;
    let t = match parsed {
        FixtureSource::Record { table } | FixtureSource::Bare(table) => table,
    };
    fixture_table_to_table(t.columns, &t.rows)
}

pub(crate) fn fixture_table_to_table(
    columns: Vec<String>,
    rows: &[Vec<serde_json::Value>],
) -> Result<Table, TableError> {
    for (i, r) in rows.iter().enumerate() {
        if r.len() != columns.len() {
            return Err(TableError::RaggedRow {
                row: i + 1,
                expected: columns.len(),
                found: r.len(),
            });
        }
    }
    Table::new(
        columns,
        rows.iter().map(|r| r.iter().map(fixture_cell).collect()).collect(),
    )
}

pub(crate) fn unescape_tsv(field: &str) -> String {
    if !field.contains('\\') {
        return field.to_string();
    }
    let mut out = String::with_capacity(field.len());
    let mut chars = field.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('n') => out.push('\n'),
            Some('t') => out.push('\t'),
            Some('r') => out.push('\r'),
            Some('p') => out.push('|'),
            Some('\\') => out.push('\\'),
            Some(other) => {
                out.push('\\');
                out.push(other);
            }
            None => out.push('\\'),
        }
    }
    out
}

fn escape_tsv(field: &str, out: &mut String) {
    for c in field.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
}

fn pipe_cell(s: &str) -> String {
    s.replace(['\n', '\r'], " ")
}

/// Renders a table.
///
/// The pipe style is the prompt form: header, a `---` separator per column,
/// then data rows, all cells joined by `" | "` and lines by `\n`, with no
/// trailing newline. A table without rows renders as its header line only.
/// The TSV style is the lossless interchange form read back by
/// [`parse_table`].
pub fn serialize_table(table: &Table, style: SerializeStyle) -> String {
    match style {
        SerializeStyle::Pipe => {
            let mut lines = Vec::with_capacity(table.rows.len() + 2);
            lines.push(
                table
                    .columns
                    .iter()
                    .map(|c| pipe_cell(c))
                    .collect::<Vec<_>>()
                    .join(" | "),
            );
            if !table.rows.is_empty() {
                lines.push(vec!["---"; table.columns.len()].join(" | "));
                for row in &table.rows {
                    lines.push(
                        row.iter()
                            .map(|v| pipe_cell(v.as_str()))
                            .collect::<Vec<_>>()
                            .join(" | "),
                    );
                }
            }
            lines.join("\n")
        }
        SerializeStyle::Tsv => {
            let mut out = String::new();
            let mut line = |cells: &mut dyn Iterator<Item = &str>| {
                for (i, c) in cells.enumerate() {
                    if i > 0 {
                        out.push('\t');
                    }
                    escape_tsv(c, &mut out);
                }
                out.push('\n');
            };
            line(&mut table.columns.iter().map(String::as_str));
            for row in &table.rows {
                line(&mut row.iter().map(Value::as_str));
            }
            out
        }
    }
}

/// Counts tokens in the pipe serialization: each maximal run of word
/// characters (alphanumeric or `_`) is one token, and each other
/// non-whitespace character is one token.
pub fn estimate_tokens(table: &Table) -> usize {
    count_tokens(&serialize_table(table, SerializeStyle::Pipe))
}

pub fn count_tokens(text: &str) -> usize {
    let mut count = 0;
    let mut in_word = false;
    for c in text.chars() {
        if c.is_alphanumeric() || c == '_' {
            if !in_word {
                count += 1;
                in_word = true;
            }
        } else {
            in_word = false;
            if !c.is_whitespace() {
                count += 1;
            }
        }
    }
    count
}

impl FromStr for SourceFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tsv" => Ok(SourceFormat::Tsv),
            "csv" => Ok(SourceFormat::Csv),
            "jsonl-fixture" => Ok(SourceFormat::JsonlFixture),
            other => Err(format!("unknown table format `{other}`")),
        }
    }
}
