//! Coarse stage: turns the original table into three short texts (visual,
//! semantic and statistical perspectives) for the planner and final answer.
//!
//! In the default mode the stage issues at most four queries: chart spec,
//! chart description, semantic knowledge and statistical summary. Every
//! perspective has a deterministic fallback, so a failing or absent provider
//! degrades a field instead of failing the tuple.

mod chart;
mod stats;

use serde::{Deserialize, Serialize};

use crate::gateway::{ChatMessage, ChatRequest, ModelRole, Session};
use crate::table::{serialize_table, SerializeStyle, Table};
use crate::templates::{self, TemplateSet};

pub use chart::{
    category_x, fallback_chart_spec, numeric_columns, parse_chart_spec, render_chart,
    validate_chart_spec, value_axis, Axis, ChartError, ChartKind, ChartSpec, RenderedChart,
    PLOTTABLE_SHARE,
};
pub use stats::{compute_statistics, is_numeric_column, ColumnStats, StatBlock, NUMERIC_SHARE};

/// Placeholder for a perspective that was switched off.
pub const NOT_AVAILABLE: &str = "(not available)";
/// Maximum entities listed by the semantic fallback.
pub const MAX_ENTITIES: usize = 10;
const SVG_MIME: &str = "image/svg+xml";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KnowledgeMode {
    /// Query the bound providers, falling back per perspective.
    #[default]
    Default,
    /// Never query; every field comes from its fallback.
    Offline,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Perspectives {
    pub visual: bool,
    pub semantic: bool,
    pub summary: bool,
}

impl Default for Perspectives {
    fn default() -> Self {
        Perspectives {
            visual: true,
            semantic: true,
            summary: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KnowledgeTuple {
    pub r_visual: String,
    pub r_semantic: String,
    pub r_summary: String,
    pub chart: Option<RenderedChart>,
    pub query_count: usize,
    /// Why a field came from a fallback, one entry per fallback taken.
    pub notes: Vec<String>,
}

impl KnowledgeTuple {
    /// The tuple used when the coarse stage is skipped entirely.
    pub fn unavailable() -> KnowledgeTuple {
        KnowledgeTuple {
            r_visual: NOT_AVAILABLE.to_string(),
            r_semantic: NOT_AVAILABLE.to_string(),
            r_summary: NOT_AVAILABLE.to_string(),
            chart: None,
            query_count: 0,
            notes: Vec::new(),
        }
    }
}

/// Outcome of one perspective: its text, the chart when one was rendered,
/// and the reason when the text is a fallback.
struct Perspective {
    text: String,
    chart: Option<RenderedChart>,
    note: Option<String>,
}

impl Perspective {
    fn answered(text: String) -> Self {
        Perspective {
            text,
            chart: None,
            note: None,
        }
    }

    fn fallback(text: String, why: impl Into<String>) -> Self {
        Perspective {
            text,
            chart: None,
            note: Some(why.into()),
        }
    }
}

/// Sends a single-message prompt; `Err` carries the reason no usable text
/// came back.
fn ask_text(session: &Session<'_>, role: ModelRole, request: ChatRequest) -> Result<String, String> {
    let (result, _) = session.ask(role, request);
    match result {
        Ok(r) if !r.text.trim().is_empty() => Ok(r.text.trim().to_string()),
        Ok(_) => Err("empty reply".to_string()),
        Err(e) => Err(e.to_string()),
    }
}

fn pipe(table: &Table) -> String {
    serialize_table(table, SerializeStyle::Pipe)
}

/// Chooses the chart. Asks the chart role when a session is given and falls
/// back to [`fallback_chart_spec`] on any failure or invalid reply.
pub fn propose_chart_spec(
    table: &Table,
    session: Option<&Session<'_>>,
    templates: &TemplateSet,
) -> Result<(ChartSpec, Option<String>), ChartError> {
    let numeric = numeric_columns(table);
    if numeric.is_empty() {
        return Err(ChartError::NoNumericColumns);
    }
    let fallback = |why: String| fallback_chart_spec(table).map(|s| (s, Some(why)));
    let Some(session) = session else {
        return fallback("chart: offline".to_string());
    };
    let prompt = templates.render(
        templates::CHART,
        &[("TABLE", &pipe(table)), ("NUMERIC_COLUMNS", &numeric.join(", "))],
    );
    match ask_text(session, ModelRole::ChartSpec, ChatRequest::new(vec![ChatMessage::user(prompt)])) {
        Ok(reply) => match parse_chart_spec(&reply).and_then(|s| validate_chart_spec(table, &s)) {
            Ok(spec) => Ok((spec, None)),
            Err(e) => fallback(format!("chart: {e}")),
        },
        Err(why) => fallback(format!("chart: {why}")),
    }
}

/// Deterministic description: `Bar chart of Price by Company; max at X, min at Y.`
/// The extremes are those of the first y column; ties go to the first row.
pub fn fallback_description(table: &Table, spec: &ChartSpec) -> String {
    let kind = spec.kind.name();
    let mut kind_cap = kind.to_string();
    kind_cap[..1].make_ascii_uppercase();
    let head = format!("{kind_cap} chart of {} by {}", spec.y_columns.join(", "), spec.x_column);
    let (Some(xi), Some(yi)) = (
        table.column_index(&spec.x_column),
        spec.y_columns.first().and_then(|y| table.column_index(y)),
    ) else {
        return format!("{head}.");
    };
    let mut max: Option<(rust_decimal::Decimal, usize)> = None;
    let mut min: Option<(rust_decimal::Decimal, usize)> = None;
    for (i, row) in table.rows().iter().enumerate() {
        if let Some(v) = row[yi].as_number() {
            if max.is_none_or(|(m, _)| v > m) {
                max = Some((v, i));
            }
            if min.is_none_or(|(m, _)| v < m) {
                min = Some((v, i));
            }
        }
    }
    match (max, min) {
        (Some((_, hi)), Some((_, lo))) => format!(
            "{head}; max at {}, min at {}.",
            table.rows()[hi][xi].as_str(),
            table.rows()[lo][xi].as_str()
        ),
        _ => format!("{head}."),
    }
}

/// Describes a rendered chart through the vision role. Without a session, a
/// vision-capable binding, or a usable reply, returns the fallback text.
pub fn describe_chart(
    table: &Table,
    chart: &RenderedChart,
    session: Option<&Session<'_>>,
    templates: &TemplateSet,
) -> (String, Option<String>) {
    let fallback = |why: String| (fallback_description(table, &chart.spec), Some(why));
    let Some(session) = session else {
        return fallback("visual: offline".to_string());
    };
    if !session.gateway().is_bound(ModelRole::VisionDescribe) {
        return fallback("visual: role unbound".to_string());
    }
    if !session.gateway().supports_vision(ModelRole::VisionDescribe) {
        return fallback("visual: provider does not accept image input".to_string());
    }
    let prompt = templates.render(
        templates::VISUAL,
        &[("CHART_KIND", chart.spec.kind.name()), ("CHART_TITLE", &chart.spec.title)],
    );
    let message = ChatMessage::user(prompt).with_image(SVG_MIME, chart.svg.clone().into_bytes());
    match ask_text(session, ModelRole::VisionDescribe, ChatRequest::new(vec![message])) {
        Ok(text) => (text, None),
        Err(why) => fallback(format!("visual: {why}")),
    }
}

/// `Entities: a, b` over the distinct non-empty first-column values, at most
/// [`MAX_ENTITIES`], or `Entities: (none)`.
pub fn fallback_semantic(table: &Table) -> String {
    let mut seen: Vec<&str> = Vec::new();
    if table.column_count() > 0 {
        for v in table.column_values(0) {
            if seen.len() == MAX_ENTITIES {
                break;
            }
            let s = v.as_str().trim();
            if !v.is_empty() && !s.is_empty() && !seen.iter().any(|e| e.eq_ignore_ascii_case(s)) {
                seen.push(s);
            }
        }
    }
    if seen.is_empty() {
        "Entities: (none)".to_string()
    } else {
        format!("Entities: {}", seen.join(", "))
    }
}

pub fn generate_semantic(
    table: &Table,
    session: Option<&Session<'_>>,
    templates: &TemplateSet,
) -> (String, Option<String>) {
    let Some(session) = session else {
        return (fallback_semantic(table), Some("semantic: offline".to_string()));
    };
    let prompt = templates.render(templates::SEMANTIC, &[("TABLE", &pipe(table))]);
    match ask_text(session, ModelRole::Knowledge, ChatRequest::new(vec![ChatMessage::user(prompt)])) {
        Ok(text) => (text, None),
        Err(why) => (fallback_semantic(table), Some(format!("semantic: {why}"))),
    }
}

/// The reply is stored verbatim; the fallback is [`StatBlock::render`].
pub fn generate_summary(
    table: &Table,
    stats: &StatBlock,
    session: Option<&Session<'_>>,
    templates: &TemplateSet,
) -> (String, Option<String>) {
    let Some(session) = session else {
        return (stats.render(), Some("summary: offline".to_string()));
    };
    let prompt = templates.render(
        templates::SUMMARY,
        &[("TABLE", &pipe(table)), ("STATS", &stats.render())],
    );
    match ask_text(session, ModelRole::Summary, ChatRequest::new(vec![ChatMessage::user(prompt)])) {
        Ok(text) => (text, None),
        Err(why) => (stats.render(), Some(format!("summary: {why}"))),
    }
}

fn visual_perspective(
    table: &Table,
    session: Option<&Session<'_>>,
    templates: &TemplateSet,
) -> Perspective {
    let (spec, chart_note) = match propose_chart_spec(table, session, templates) {
        Ok(v) => v,
        Err(e) => return Perspective::fallback("No numeric columns to chart.".to_string(), format!("visual: {e}")),
    };
    let chart = match render_chart(table, &spec) {
        Ok(c) => c,
        Err(e) => {
            return Perspective::fallback(fallback_description(table, &spec), format!("visual: {e}"));
        }
    };
    let (text, note) = describe_chart(table, &chart, session, templates);
    Perspective {
        text,
        chart: Some(chart),
        note: match (chart_note, note) {
            (Some(a), Some(b)) => Some(format!("{a}; {b}")),
            (a, b) => a.or(b),
        },
    }
}

/// Builds the knowledge tuple. The three perspectives run concurrently and
/// share only the session; `query_count` is the number of coarse queries
/// that reached a provider.
pub fn synthesize_knowledge(
    table: &Table,
    session: &Session<'_>,
    templates: &TemplateSet,
    mode: KnowledgeMode,
    perspectives: Perspectives,
) -> KnowledgeTuple {
    let online = (mode == KnowledgeMode::Default).then_some(session);
    let before = session.budget().used(crate::gateway::Stage::Coarse);
    let off = || Perspective::answered(NOT_AVAILABLE.to_string());

    let (visual, semantic, summary) = std::thread::scope(|s| {
        let visual = s.spawn(|| {
            if perspectives.visual {
                visual_perspective(table, online, templates)
            } else {
                off()
            }
        });
        let semantic = s.spawn(|| {
            if perspectives.semantic {
                let (text, note) = generate_semantic(table, online, templates);
                Perspective { text, chart: None, note }
            } else {
                off()
            }
        });
        let summary = if perspectives.summary {
            let stats = compute_statistics(table);
            let (text, note) = generate_summary(table, &stats, online, templates);
            Perspective { text, chart: None, note }
        } else {
            off()
        };
        (
            visual.join().expect("visual perspective panicked"),
            semantic.join().expect("semantic perspective panicked"),
            summary,
        )
    });

    let notes = [&visual, &semantic, &summary]
        .iter()
        .filter_map(|p| p.note.clone())
        .collect();
    KnowledgeTuple {
        r_visual: visual.text,
        r_semantic: semantic.text,
        r_summary: summary.text,
        chart: visual.chart,
        query_count: (session.budget().used(crate::gateway::Stage::Coarse) - before) as usize,
        notes,
    }
}
