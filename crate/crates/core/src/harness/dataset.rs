use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::answer::TaskKind;
use crate::table::{fixture_table_to_table, unescape_tsv, Table, TableError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetTag {
    Wikitq,
    Tabfact,
    Fixture,
}

impl DatasetTag {
    pub fn name(self) -> &'static str {
        match self {
            DatasetTag::Wikitq => "wikitq",
            DatasetTag::Tabfact => "tabfact",
            DatasetTag::Fixture => "fixture",
        }
    }
}

impl FromStr for DatasetTag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "wikitq" => Ok(DatasetTag::Wikitq),
            "tabfact" => Ok(DatasetTag::Tabfact),
            "fixture" | "jsonl-fixture" => Ok(DatasetTag::Fixture),
            other => Err(format!("unknown dataset tag `{other}` (expected wikitq, tabfact or fixture)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Task {
    pub id: String,
    /// The question, or the statement for fact verification.
    pub question: String,
    pub table: Table,
    pub gold: Vec<String>,
    pub dataset: DatasetTag,
    pub kind: TaskKind,
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("record {record}: {message}")]
    SchemaError { record: usize, message: String },
    #[error("table file not found: {0}")]
    MissingTableFile(PathBuf),
    #[error("table {path}: {source}")]
    Table { path: String, source: TableError },
}

fn read(path: &Path) -> Result<String, DatasetError> {
    std::fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Loads tasks sorted by id.
///
/// * `fixture`: jsonl records `{id, question, table: {columns, rows}, gold, task?}`.
/// * `wikitq`: a split file from the official release (`data/*.tsv` with
///   `id`, `utterance`, `context`, `targetValue`); tables are resolved
///   relative to the release root.
/// * `tabfact`: a statement file from the official release
///   (`{table_id: [statements, labels, caption]}`) with tables in `all_csv/`.
pub fn load_dataset(path: &Path, tag: DatasetTag) -> Result<Vec<Task>, DatasetError> {
    let mut tasks = match tag {
        DatasetTag::Fixture => parse_fixture_tasks(&read(path)?)?,
        DatasetTag::Wikitq => load_wikitq(path)?,
        DatasetTag::Tabfact => load_tabfact(path)?,
    };
    tasks.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(tasks)
}

#[derive(Deserialize)]
struct FixtureTable {
    columns: Vec<String>,
    rows: Vec<Vec<serde_json::Value>>,
}

#[derive(Deserialize)]
struct FixtureRecord {
    id: String,
    question: String,
    table: FixtureTable,
    gold: serde_json::Value,
    #[serde(default)]
    task: Option<TaskKind>,
}

fn gold_values(gold: &serde_json::Value) -> Option<(Vec<String>, bool)> {
    match gold {
        serde_json::Value::Bool(b) => Some((vec![b.to_string()], true)),
        serde_json::Value::String(s) => {
            let verdict = matches!(s.trim().to_ascii_lowercase().as_str(), "true" | "false");
            Some((vec![s.clone()], verdict))
        }
        serde_json::Value::Number(n) => Some((vec![n.to_string()], false)),
        serde_json::Value::Array(items) => {
            let values = items
                .iter()
                .map(|v| match v {
                    serde_json::Value::String(s) => Some(s.clone()),
                    serde_json::Value::Number(n) => Some(n.to_string()),
                    _ => None,
                })
                .collect::<Option<Vec<_>>>()?;
            Some((values, false))
        }
        _ => None,
    }
}

/// Parses jsonl fixture tasks; `record` numbers in errors are 1-based over
/// non-blank lines.
pub fn parse_fixture_tasks(text: &str) -> Result<Vec<Task>, DatasetError> {
    let mut tasks = Vec::new();
    for (i, line) in text.lines().filter(|l| !l.trim().is_empty()).enumerate() {
        let record = i + 1;
        let schema = |message: String| DatasetError::SchemaError { record, message };
        let r: FixtureRecord = serde_json::from_str(line).map_err(|e| schema(e.to_string()))?;
        let (gold, verdict) = gold_values(&r.gold).ok_or_else(|| schema("gold must be a string, number, boolean or list of values".into()))?;
        if gold.is_empty() {
            return Err(schema("gold is empty".into()));
        }
        let kind = r.task.unwrap_or(if verdict { TaskKind::FactVerification } else { TaskKind::Qa });
        let table = fixture_table_to_table(r.table.columns, &r.table.rows).map_err(|e| schema(format!("table: {e}")))?;
        tasks.push(Task {
            id: r.id,
            question: r.question,
            table: table.with_provenance(format!("fixture:{record}")),
            gold,
            dataset: DatasetTag::Fixture,
            kind,
        });
    }
    Ok(tasks)
}

/// Builds a table from raw records, renaming blank and duplicate headers
/// (`Column_3`, `Year_2`) as released benchmark tables contain both.
pub fn table_from_records(mut records: Vec<Vec<String>>) -> Result<Table, TableError> {
    if records.is_empty() {
        return Err(TableError::EmptySource);
    }
    let header = records.remove(0);
    let mut seen: Vec<String> = Vec::with_capacity(header.len());
    for (i, name) in header.iter().enumerate() {
        let base = if name.trim().is_empty() {
            format!("Column_{}", i + 1)
        } else {
            name.trim().to_string()
        };
        let mut candidate = base.clone();
        let mut n = 2;
        while seen.iter().any(|s| crate::table::column_key(s) == crate::table::column_key(&candidate)) {
            candidate = format!("{base}_{n}");
            n += 1;
        }
        seen.push(candidate);
    }
    Table::from_strings(&seen, &records)
}

fn first_existing(candidates: &[PathBuf]) -> Option<PathBuf> {
    candidates.iter().find(|p| p.is_file()).cloned()
}

fn load_wikitq(path: &Path) -> Result<Vec<Task>, DatasetError> {
    let text = read(path)?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<&str> = lines
        .next()
        .ok_or(DatasetError::SchemaError {
            record: 0,
            message: "empty split file".into(),
        })?
        .split('\t')
        .collect();
    let col = |name: &str| {
        header.iter().position(|h| *h == name).ok_or_else(|| DatasetError::SchemaError {
            record: 0,
            message: format!("missing column `{name}`"),
        })
    };
    let (id_c, q_c, ctx_c, gold_c) = (col("id")?, col("utterance")?, col("context")?, col("targetValue")?);
    let split_dir = path.parent().unwrap_or(Path::new("."));
    let roots: Vec<PathBuf> = vec![
        split_dir.to_path_buf(),
        split_dir.parent().unwrap_or(split_dir).to_path_buf(),
    ];
    let mut tables: BTreeMap<String, Table> = BTreeMap::new();
    let mut tasks = Vec::new();
    for (i, line) in lines.enumerate() {
        let record = i + 1;
        let fields: Vec<&str> = line.split('\t').collect();
        let field = |c: usize| {
            fields.get(c).copied().ok_or_else(|| DatasetError::SchemaError {
                record,
                message: format!("expected {} fields, found {}", header.len(), fields.len()),
            })
        };
        let context = unescape_tsv(field(ctx_c)?);
        let gold: Vec<String> = field(gold_c)?.split('|').map(unescape_tsv).collect();
        if !tables.contains_key(&context) {
            tables.insert(context.clone(), load_wikitq_table(&roots, &context)?);
        }
        tasks.push(Task {
            id: unescape_tsv(field(id_c)?),
            question: unescape_tsv(field(q_c)?),
            table: tables[&context].clone(),
            gold,
            dataset: DatasetTag::Wikitq,
            kind: TaskKind::Qa,
        });
    }
    Ok(tasks)
}

/// Prefers the escaped `.tsv` rendering of a table and falls back to the `.csv`.
fn load_wikitq_table(roots: &[PathBuf], context: &str) -> Result<Table, DatasetError> {
    let csv_rel = PathBuf::from(context);
    let tsv_rel = csv_rel.with_extension("tsv");
    let candidates: Vec<PathBuf> = roots
        .iter()
        .flat_map(|r| [r.join(&tsv_rel), r.join(&csv_rel)])
        .collect();
    let path = first_existing(&candidates).ok_or_else(|| DatasetError::MissingTableFile(csv_rel.clone()))?;
    let text = read(&path)?;
    let records: Vec<Vec<String>> = if path.extension().is_some_and(|e| e == "tsv") {
        text.lines()
            .map(|l| l.strip_suffix('\r').unwrap_or(l).split('\t').map(unescape_tsv).collect())
            .collect()
    } else {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .from_reader(text.as_bytes());
        reader
            .records()
            .map(|r| r.map(|r| r.iter().map(str::to_string).collect()))
            .collect::<Result<_, _>>()
            .map_err(|e| DatasetError::Table {
                path: context.to_string(),
                source: TableError::Malformed {
                    format: "csv",
                    message: e.to_string(),
                },
            })?
    };
    table_from_records(records)
        .map(|t| t.with_provenance(context))
        .map_err(|source| DatasetError::Table {
            path: context.to_string(),
            source,
        })
}

fn load_tabfact(path: &Path) -> Result<Vec<Task>, DatasetError> {
    let text = read(path)?;
    let data: BTreeMap<String, serde_json::Value> =
        serde_json::from_str(&text).map_err(|e| DatasetError::SchemaError {
            record: 0,
            message: e.to_string(),
        })?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let table_dirs = [
        dir.join("all_csv"),
        dir.join("data").join("all_csv"),
        dir.parent().unwrap_or(dir).join("data").join("all_csv"),
        dir.parent().unwrap_or(dir).join("all_csv"),
    ];
    let mut tasks = Vec::new();
    for (i, (table_id, entry)) in data.iter().enumerate() {
        let record = i + 1;
        let schema = |message: &str| DatasetError::SchemaError {
            record,
            message: format!("{table_id}: {message}"),
        };
        let arr = entry.as_array().ok_or_else(|| schema("expected [statements, labels, caption]"))?;
        let statements = arr.first().and_then(|v| v.as_array()).ok_or_else(|| schema("missing statements"))?;
        let labels = arr.get(1).and_then(|v| v.as_array()).ok_or_else(|| schema("missing labels"))?;
        if statements.len() != labels.len() {
            return Err(schema("statement and label counts differ"));
        }
        let candidates: Vec<PathBuf> = table_dirs.iter().map(|d| d.join(table_id)).collect();
        let table_path = first_existing(&candidates).ok_or_else(|| DatasetError::MissingTableFile(PathBuf::from(table_id)))?;
        let raw = read(&table_path)?;
        let records: Vec<Vec<String>> = raw
            .lines()
            .filter(|l| !l.is_empty())
            .map(|l| l.split('#').map(str::to_string).collect())
            .collect();
        let table = table_from_records(records)
            .map(|t| t.with_provenance(table_id.as_str()))
            .map_err(|source| DatasetError::Table {
                path: table_id.clone(),
                source,
            })?;
        for (j, (s, l)) in statements.iter().zip(labels).enumerate() {
            let statement = s.as_str().ok_or_else(|| schema("statement is not a string"))?;
            let label = match l.as_i64() {
                Some(1) => "true",
                Some(0) => "false",
                _ => return Err(schema("label must be 0 or 1")),
            };
            tasks.push(Task {
                id: format!("{table_id}#{j}"),
                question: statement.to_string(),
                table: table.clone(),
                gold: vec![label.to_string()],
                dataset: DatasetTag::Tabfact,
                kind: TaskKind::FactVerification,
            });
        }
    }
    Ok(tasks)
}
