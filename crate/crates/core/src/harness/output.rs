use std::io::Write;
use std::path::Path;

use thiserror::Error;

use super::report::{aggregate, render_report, AblationReport, Report, ReportError};
use super::EvalRecord;
use crate::gateway::{prompt_hash, TraceRecord};
use crate::knowledge::{render_chart, ChartKind, ChartSpec};
use crate::table::Table;

#[derive(Debug, Error)]
pub enum OutputError {
    #[error("writing output: {0}")]
    Io(#[from] std::io::Error),
    #[error("record line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Report(#[from] ReportError),
}

pub const RECORDS_FILE: &str = "records.jsonl";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TXT: &str = "report.txt";
pub const CHAIN_SVG: &str = "chain_length.svg";
pub const TRACES_DIR: &str = "traces";

/// File name for a task's trace. Unsafe characters become `_`; when that
/// changes the id, a short hash of the original keeps names distinct.
pub fn trace_file_name(task_id: &str) -> String {
    let safe: String = task_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '.' | '-' | '_') { c } else { '_' })
        .collect();
    if safe == task_id && !safe.is_empty() {
        format!("{safe}.jsonl")
    } else {
        format!("{safe}-{}.jsonl", &prompt_hash(task_id)[..8])
    }
}

fn jsonl<T: serde::Serialize>(items: &[T]) -> String {
    items
        .iter()
        .map(|i| serde_json::to_string(i).expect("serializable") + "\n")
        .collect()
}

/// Writes records, per-question traces, the report (JSON and text) and the
/// chain-length chart. Records are written in the given order.
pub fn write_run(out: &Path, results: &[(EvalRecord, Vec<TraceRecord>)]) -> Result<Report, OutputError> {
    std::fs::create_dir_all(out.join(TRACES_DIR))?;
    let records: Vec<EvalRecord> = results.iter().map(|(r, _)| r.clone()).collect();
    std::fs::write(out.join(RECORDS_FILE), jsonl(&records))?;
    for (record, trace) in results {
        let mut f = std::fs::File::create(out.join(&record.trace))?;
        f.write_all(jsonl(trace).as_bytes())?;
    }
    let report = aggregate(&records)?;
    write_report(out, &report)?;
    Ok(report)
}

pub fn write_report(out: &Path, report: &Report) -> Result<(), OutputError> {
    std::fs::create_dir_all(out)?;
    let json = serde_json::to_string_pretty(report).expect("report serializes") + "\n";
    std::fs::write(out.join(REPORT_JSON), json)?;
    std::fs::write(out.join(REPORT_TXT), render_report(report))?;
    if let Some(svg) = chain_length_chart(report) {
        std::fs::write(out.join(CHAIN_SVG), svg)?;
    }
    Ok(())
}

/// Accuracy by chain length, drawn with the chart renderer.
pub fn chain_length_chart(report: &Report) -> Option<String> {
    let rows: Vec<Vec<String>> = report
        .by_chain_length
        .iter()
        .map(|(len, g)| vec![len.to_string(), format!("{:.2}", g.accuracy * 100.0)])
        .collect();
    let table = Table::from_strings(&["Chain length".to_string(), "Accuracy (%)".to_string()], &rows).ok()?;
    let spec = ChartSpec {
        kind: ChartKind::Bar,
        x_column: "Chain length".into(),
        y_columns: vec!["Accuracy (%)".into()],
        title: "Accuracy by operation chain length".into(),
    };
    render_chart(&table, &spec).ok().map(|c| c.svg)
}

pub const ABLATION_JSON: &str = "ablation.json";
pub const ABLATION_TXT: &str = "ablation.txt";

pub fn write_ablation(out: &Path, ablation: &AblationReport) -> Result<(), OutputError> {
    std::fs::create_dir_all(out)?;
    let json = serde_json::to_string_pretty(ablation).expect("ablation serializes") + "\n";
    std::fs::write(out.join(ABLATION_JSON), json)?;
    std::fs::write(out.join(ABLATION_TXT), ablation.render())?;
    Ok(())
}

/// Reads a trace file written by [`write_run`].
pub fn read_trace(path: &Path) -> Result<Vec<TraceRecord>, OutputError> {
    parse_jsonl(&std::fs::read_to_string(path)?)
}

pub fn read_records(path: &Path) -> Result<Vec<EvalRecord>, OutputError> {
    parse_jsonl(&std::fs::read_to_string(path)?)
}

fn parse_jsonl<T: serde::de::DeserializeOwned>(text: &str) -> Result<Vec<T>, OutputError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| OutputError::Parse {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}
