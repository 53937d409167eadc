use std::fmt::Write as _;

use rust_decimal::prelude::ToPrimitive;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::table::{Table, Value};

/// Share of rows whose y cell must be numeric for a column to be plotted.
pub const PLOTTABLE_SHARE: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChartKind {
    Bar,
    Line,
    Scatter,
}

impl ChartKind {
    pub const ALL: [ChartKind; 3] = [ChartKind::Bar, ChartKind::Line, ChartKind::Scatter];

    pub fn name(self) -> &'static str {
        match self {
            ChartKind::Bar => "bar",
            ChartKind::Line => "line",
            ChartKind::Scatter => "scatter",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChartSpec {
    pub kind: ChartKind,
    pub x_column: String,
    pub y_columns: Vec<String>,
    pub title: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChartError {
    #[error("table has no numeric column to chart")]
    NoNumericColumns,
    #[error("chart has no plottable points")]
    EmptySeries,
    #[error("unknown chart column `{0}`")]
    UnknownColumn(String),
    #[error("column `{0}` is not numeric enough to plot")]
    NotNumeric(String),
    #[error("chart needs at least one y column")]
    NoSeries,
    #[error("could not read a chart spec from the reply")]
    Unparseable,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedChart {
    pub svg: String,
    pub spec: ChartSpec,
}

impl RenderedChart {
    pub fn bytes(&self) -> &[u8] {
        self.svg.as_bytes()
    }
}

/// Columns whose cells are numbers in at least [`PLOTTABLE_SHARE`] of rows.
pub fn numeric_columns(table: &Table) -> Vec<String> {
    (0..table.column_count())
        .filter(|&i| plottable(table, i))
        .map(|i| table.columns()[i].clone())
        .collect()
}

fn plottable(table: &Table, index: usize) -> bool {
    let rows = table.row_count();
    let numbers = table
        .column_values(index)
        .filter(|v| matches!(v, Value::Number(_)))
        .count();
    rows > 0 && numbers as f64 >= PLOTTABLE_SHARE * rows as f64
}

/// Bar chart of the first numeric column against the first text column
/// (or the first column when no text column exists).
pub fn fallback_chart_spec(table: &Table) -> Result<ChartSpec, ChartError> {
    let y = numeric_columns(table)
        .into_iter()
        .next()
        .ok_or(ChartError::NoNumericColumns)?;
    let x_index = (0..table.column_count())
        .find(|&i| {
            let mut cells = table.column_values(i).filter(|v| !v.is_empty()).peekable();
            cells.peek().is_some() && cells.all(|v| matches!(v, Value::Text(_)))
        })
        .unwrap_or(0);
    let x = table.columns()[x_index].clone();
    Ok(ChartSpec {
        kind: ChartKind::Bar,
        title: format!("{y} by {x}"),
        x_column: x,
        y_columns: vec![y],
    })
}

/// Checks the spec against the table and rewrites column names to the
/// table's spelling.
pub fn validate_chart_spec(table: &Table, spec: &ChartSpec) -> Result<ChartSpec, ChartError> {
    let resolve = |name: &str| {
        table
            .column_index(name)
            .ok_or_else(|| ChartError::UnknownColumn(name.to_string()))
    };
    if spec.y_columns.is_empty() {
        return Err(ChartError::NoSeries);
    }
    let x = resolve(&spec.x_column)?;
    let mut ys = Vec::with_capacity(spec.y_columns.len());
    for y in &spec.y_columns {
        let i = resolve(y)?;
        if !plottable(table, i) {
            return Err(ChartError::NotNumeric(table.columns()[i].clone()));
        }
        ys.push(table.columns()[i].clone());
    }
    let title = if spec.title.trim().is_empty() {
        format!("{} by {}", ys.join(", "), table.columns()[x])
    } else {
        spec.title.trim().to_string()
    };
    Ok(ChartSpec {
        kind: spec.kind,
        x_column: table.columns()[x].clone(),
        y_columns: ys,
        title,
    })
}

/// Reads a chart spec from a model reply. Accepts a JSON object with
/// `kind`/`x`/`y`/`title` keys or the line form
/// `line, x=Quarter, y=[Revenue], title="..."`.
pub fn parse_chart_spec(reply: &str) -> Result<ChartSpec, ChartError> {
    if let Some(spec) = parse_json_spec(reply) {
        return Ok(spec);
    }
    reply
        .lines()
        .find_map(parse_line_spec)
        .ok_or(ChartError::Unparseable)
}

fn kind_from(word: &str) -> Option<ChartKind> {
    let w = word.trim().to_ascii_lowercase();
    ChartKind::ALL
        .into_iter()
        .find(|k| w == k.name() || w == format!("{} chart", k.name()))
}

fn parse_json_spec(reply: &str) -> Option<ChartSpec> {
    let start = reply.find('{')?;
    let end = reply.rfind('}')?;
    let v: serde_json::Value = serde_json::from_str(reply.get(start..=end)?).ok()?;
    let get = |keys: &[&str]| keys.iter().find_map(|k| v.get(*k));
    let kind = kind_from(get(&["kind", "type", "chart"])?.as_str()?)?;
    let x_column = get(&["x", "x_column"])?.as_str()?.to_string();
    let y_columns = match get(&["y", "y_columns"])? {
        serde_json::Value::String(s) => vec![s.clone()],
        serde_json::Value::Array(a) => a
            .iter()
            .map(|e| e.as_str().map(str::to_string))
            .collect::<Option<Vec<_>>>()?,
        _ => return None,
    };
    let title = get(&["title"])
        .and_then(|t| t.as_str())
        .unwrap_or("")
        .to_string();
    Some(ChartSpec {
        kind,
        x_column,
        y_columns,
        title,
    })
}

fn parse_line_spec(line: &str) -> Option<ChartSpec> {
    let line = line.trim().trim_start_matches("Reply:").trim();
    let lower = line.to_ascii_lowercase();
    let (x_key, x_at) = find_key(&lower, "x")?;
    let kind = kind_from(line[..x_key].trim().trim_end_matches(',').trim())?;

    let after_x = &line[x_at..];
    let x_end = after_x.find(',').unwrap_or(after_x.len());
    let x_column = unquote(&after_x[..x_end]).to_string();

    let (_, y_at) = find_key(&lower, "y")?;
    let after_y = line[y_at..].trim_start();
    let (y_raw, _) = if let Some(rest) = after_y.strip_prefix('[') {
        let close = rest.find(']')?;
        (&rest[..close], &rest[close + 1..])
    } else {
        let end = after_y.find(',').unwrap_or(after_y.len());
        (&after_y[..end], &after_y[end..])
    };
    let y_columns: Vec<String> = y_raw
        .split(',')
        .map(|s| unquote(s).to_string())
        .filter(|s| !s.is_empty())
        .collect();

    let title = find_key(&lower, "title")
        .map(|(_, at)| unquote(&line[at..]).to_string())
        .unwrap_or_default();
    (!x_column.is_empty()).then_some(ChartSpec {
        kind,
        x_column,
        y_columns,
        title,
    })
}

/// Byte offsets of `key` and of the value after `key=` (or `key:`), where
/// `key` starts a word.
fn find_key(lower: &str, key: &str) -> Option<(usize, usize)> {
    let bytes = lower.as_bytes();
    let mut from = 0;
    while let Some(rel) = lower[from..].find(key) {
        let at = from + rel;
        let before_ok = at == 0 || !bytes[at - 1].is_ascii_alphanumeric() && bytes[at - 1] != b'_';
        let rest = &lower[at + key.len()..];
        let trimmed = rest.trim_start();
        if before_ok && (trimmed.starts_with('=') || trimmed.starts_with(':')) {
            return Some((at, lower.len() - trimmed.len() + 1));
        }
        from = at + key.len();
    }
    None
}

fn unquote(s: &str) -> &str {
    let s = s.trim();
    for q in ['"', '\'', '`'] {
        if let Some(inner) = s.strip_prefix(q) {
            return inner.split(q).next().unwrap_or(inner).trim();
        }
    }
    s
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const PLOT_W: f64 = WIDTH - LEFT - RIGHT;
const PLOT_H: f64 = HEIGHT - TOP - BOTTOM;
const PALETTE: [&str; 6] = ["#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948"];
const MAX_TICK_LABELS: usize = 24;

/// Linear map from data space to pixel space along one axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub px_lo: f64,
    pub px_hi: f64,
}

impl Axis {
    pub fn new(mut lo: f64, mut hi: f64, px_lo: f64, px_hi: f64) -> Axis {
        if lo == hi {
            lo -= 1.0;
            hi += 1.0;
        }
        Axis { lo, hi, px_lo, px_hi }
    }

    pub fn map(&self, v: f64) -> f64 {
        self.px_lo + (v - self.lo) / (self.hi - self.lo) * (self.px_hi - self.px_lo)
    }
}

/// Value axis used by [`render_chart`] for the given data extremes.
pub fn value_axis(kind: ChartKind, min: f64, max: f64) -> Axis {
    let (lo, hi) = match kind {
        ChartKind::Bar => (min.min(0.0), max.max(0.0)),
        _ => (min, max),
    };
    Axis::new(lo, hi, TOP + PLOT_H, TOP)
}

/// Pixel x of the centre of category slot `i` out of `n`.
pub fn category_x(i: usize, n: usize) -> f64 {
    LEFT + (i as f64 + 0.5) * PLOT_W / n as f64
}

fn esc(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c if (c as u32) < 0x20 && c != '\t' && c != '\n' && c != '\r' => out.push(' '),
            c => out.push(c),
        }
    }
    out
}

fn num(v: f64) -> String {
    let s = format!("{v:.2}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".to_string() } else { s.to_string() }
}

/// Renders the chart as a standalone SVG 1.1 document. Output depends only
/// on the table and spec.
pub fn render_chart(table: &Table, spec: &ChartSpec) -> Result<RenderedChart, ChartError> {
    if table.row_count() == 0 {
        return Err(ChartError::EmptySeries);
    }
    let spec = validate_chart_spec(table, spec)?;
    let x_index = table.column_index(&spec.x_column).expect("validated");
    let y_indices: Vec<usize> = spec
        .y_columns
        .iter()
        .map(|y| table.column_index(y).expect("validated"))
        .collect();

    let mut skipped = 0usize;
    let series: Vec<Vec<Option<f64>>> = y_indices
        .iter()
        .map(|&yi| {
            table
                .column_values(yi)
                .map(|v| match v.as_number().and_then(|d| d.to_f64()) {
                    Some(f) => Some(f),
                    None => {
                        skipped += 1;
                        None
                    }
                })
                .collect()
        })
        .collect();
    let values = || series.iter().flatten().flatten().copied();
    let (min, max) = values().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    });
    if !min.is_finite() {
        return Err(ChartError::EmptySeries);
    }

    let labels: Vec<&str> = table.column_values(x_index).map(Value::as_str).collect();
    let n = table.row_count();
    let y_axis = value_axis(spec.kind, min, max);
    let numeric_x: Option<Vec<f64>> = (spec.kind == ChartKind::Scatter)
        .then(|| {
            table
                .column_values(x_index)
                .map(|v| v.as_number().and_then(|d| d.to_f64()))
                .collect::<Option<Vec<f64>>>()
        })
        .flatten();
    let x_axis = numeric_x.as_ref().map(|xs| {
        let (lo, hi) = xs
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        Axis::new(lo, hi, LEFT + 10.0, LEFT + PLOT_W - 10.0)
    });
    let px_x = |i: usize| match (&x_axis, &numeric_x) {
        (Some(a), Some(xs)) => a.map(xs[i]),
        _ => category_x(i, n),
    };

    let mut svg = String::new();
    let _ = writeln!(svg, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#,
        w = WIDTH,
        h = HEIGHT
    );
    let _ = writeln!(svg, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text class="title" x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
        num(WIDTH / 2.0),
        esc(&spec.title)
    );
    let base = TOP + PLOT_H;
    let _ = writeln!(
        svg,
        r#"<line class="axis" x1="{LEFT}" y1="{base}" x2="{}" y2="{base}" stroke="black"/>"#,
        LEFT + PLOT_W
    );
    let _ = writeln!(
        svg,
        r#"<line class="axis" x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{base}" stroke="black"/>"#
    );
    for v in [y_axis.lo, y_axis.hi] {
        let _ = writeln!(
            svg,
            r#"<text class="tick" x="{}" y="{}" text-anchor="end">{}</text>"#,
            LEFT - 6.0,
            num(y_axis.map(v) + 4.0),
            num(v)
        );
    }
    if x_axis.is_none() && n <= MAX_TICK_LABELS {
        for (i, label) in labels.iter().enumerate() {
            let _ = writeln!(
                svg,
                r#"<text class="tick" x="{}" y="{}" text-anchor="middle">{}</text>"#,
                num(category_x(i, n)),
                num(base + 16.0),
                esc(label)
            );
        }
    }
    let _ = writeln!(
        svg,
        r#"<text class="x-label" x="{}" y="{}" text-anchor="middle">{}</text>"#,
        num(LEFT + PLOT_W / 2.0),
        num(HEIGHT - 22.0),
        esc(&spec.x_column)
    );
    let _ = writeln!(
        svg,
        r#"<text class="y-label" x="16" y="{y}" text-anchor="middle" transform="rotate(-90 16 {y})">{}</text>"#,
        esc(&spec.y_columns.join(", ")),
        y = num(TOP + PLOT_H / 2.0)
    );

    let k = series.len();
    for (j, points) in series.iter().enumerate() {
        let color = PALETTE[j % PALETTE.len()];
        match spec.kind {
            ChartKind::Bar => {
                let slot = PLOT_W / n as f64;
                let width = slot * 0.8 / k as f64;
                let zero = y_axis.map(0.0);
                for (i, v) in points.iter().enumerate() {
                    let Some(v) = v else { continue };
                    let y = y_axis.map(*v);
                    let _ = writeln!(
                        svg,
                        r#"<rect class="bar" x="{}" y="{}" width="{}" height="{}" fill="{color}"><title>{}: {}</title></rect>"#,
                        num(LEFT + i as f64 * slot + slot * 0.1 + j as f64 * width),
                        num(y.min(zero)),
                        num(width),
                        num((y - zero).abs()),
                        esc(labels[i]),
                        num(*v)
                    );
                }
            }
            ChartKind::Line => {
                let coords: Vec<String> = points
                    .iter()
                    .enumerate()
                    .filter_map(|(i, v)| v.map(|v| format!("{},{}", num(px_x(i)), num(y_axis.map(v)))))
                    .collect();
                let _ = writeln!(
                    svg,
                    r#"<polyline class="series" points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
                    coords.join(" ")
                );
            }
            ChartKind::Scatter => {
                for (i, v) in points.iter().enumerate() {
                    let Some(v) = v else { continue };
                    let _ = writeln!(
                        svg,
                        r#"<circle class="point" cx="{}" cy="{}" r="4" fill="{color}"/>"#,
                        num(px_x(i)),
                        num(y_axis.map(*v))
                    );
                }
            }
        }
        if k > 1 {
            let _ = writeln!(
                svg,
                r#"<text class="legend" x="{}" y="{}" fill="{color}" text-anchor="end">{}</text>"#,
                num(WIDTH - RIGHT),
                num(TOP + 14.0 * j as f64),
                esc(&spec.y_columns[j])
            );
        }
    }
    if skipped > 0 {
        let _ = writeln!(
            svg,
            r#"<text class="footnote" x="{LEFT}" y="{}" font-size="10">{skipped} non-numeric value{} skipped</text>"#,
            num(HEIGHT - 6.0),
            if skipped == 1 { "" } else { "s" }
        );
    }
    svg.push_str("</svg>\n");
    Ok(RenderedChart { svg, spec })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(cols: &[&str], rows: &[&[&str]]) -> Table {
        Table::from_strings(cols, &rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn spec(kind: ChartKind, x: &str, ys: &[&str]) -> ChartSpec {
        ChartSpec {
            kind,
            x_column: x.into(),
            y_columns: ys.iter().map(|s| s.to_string()).collect(),
            title: String::new(),
        }
    }

    #[test]
    fn fallback_picks_first_numeric_against_first_text() {
        let t = table(&["Company", "Price"], &[&["Acme", "10"], &["Beta", "12"]]);
        let s = fallback_chart_spec(&t).unwrap();
        assert_eq!((s.kind, s.x_column.as_str()), (ChartKind::Bar, "Company"));
        assert_eq!(s.y_columns, vec!["Price"]);
        let t = table(&["Id", "Year", "Name"], &[&["1", "2001", "a"], &["2", "2002", "b"]]);
        let s = fallback_chart_spec(&t).unwrap();
        assert_eq!((s.x_column.as_str(), s.y_columns[0].as_str()), ("Name", "Id"));
    }

    #[test]
    fn all_text_has_no_numeric_columns() {
        let t = table(&["A", "B"], &[&["x", "y"]]);
        assert_eq!(fallback_chart_spec(&t).unwrap_err(), ChartError::NoNumericColumns);
        let empty = table(&["A"], &[]);
        assert_eq!(fallback_chart_spec(&empty).unwrap_err(), ChartError::NoNumericColumns);
    }

    #[test]
    fn parses_line_form() {
        let s = parse_chart_spec("line, x=Quarter, y=[Revenue]").unwrap();
        assert_eq!(s, spec(ChartKind::Line, "Quarter", &["Revenue"]));
        let s = parse_chart_spec("Sure!\nReply: bar, x=\"Team Name\", y=[Wins, 'Losses'], title=\"W/L\"").unwrap();
        assert_eq!(s.x_column, "Team Name");
        assert_eq!(s.y_columns, vec!["Wins", "Losses"]);
        assert_eq!(s.title, "W/L");
        let s = parse_chart_spec("scatter, x: Age, y: Income").unwrap();
        assert_eq!(s, spec(ChartKind::Scatter, "Age", &["Income"]));
    }

    #[test]
    fn parses_json_form() {
        let s = parse_chart_spec(r#"```json
{"kind": "bar", "x": "Company", "y": "Price", "title": "Prices"}
```"#)
        .unwrap();
        assert_eq!(s.y_columns, vec!["Price"]);
        assert_eq!(s.title, "Prices");
        assert!(parse_chart_spec("pie, x=A, y=[B]").is_err());
        assert!(parse_chart_spec("no idea").is_err());
    }

    #[test]
    fn validation_resolves_and_rejects() {
        let t = table(
            &["Quarter", "Revenue", "Note"],
            &[&["Q1", "1", "a"], &["Q2", "2", "b"], &["Q3", "3", "c"]],
        );
        let v = validate_chart_spec(&t, &spec(ChartKind::Line, "quarter", &["REVENUE"])).unwrap();
        assert_eq!(v.x_column, "Quarter");
        assert_eq!(v.y_columns, vec!["Revenue"]);
        assert_eq!(v.title, "Revenue by Quarter");
        assert_eq!(
            validate_chart_spec(&t, &spec(ChartKind::Line, "Quarter", &["Note"])).unwrap_err(),
            ChartError::NotNumeric("Note".into())
        );
        assert_eq!(
            validate_chart_spec(&t, &spec(ChartKind::Line, "Year", &["Revenue"])).unwrap_err(),
            ChartError::UnknownColumn("Year".into())
        );
        assert_eq!(
            validate_chart_spec(&t, &spec(ChartKind::Line, "Quarter", &[])).unwrap_err(),
            ChartError::NoSeries
        );
    }

    #[test]
    fn one_row_bar_chart_has_one_bar_and_is_deterministic() {
        let t = table(&["Company", "Price"], &[&["Acme", "10"]]);
        let s = spec(ChartKind::Bar, "Company", &["Price"]);
        let a = render_chart(&t, &s).unwrap();
        let b = render_chart(&t, &s).unwrap();
        assert_eq!(a.bytes(), b.bytes());
        assert_eq!(a.svg.matches(r#"class="bar""#).count(), 1);
        assert!(a.svg.contains(">Company</text>"));
        assert!(a.svg.contains(">Price</text>"));
        assert!(!a.svg.contains("footnote"));
    }

    #[test]
    fn line_vertices_are_affine_in_data() {
        let t = table(&["Q", "R"], &[&["Q1", "10"], &["Q2", "30"], &["Q3", "20"]]);
        let svg = render_chart(&t, &spec(ChartKind::Line, "Q", &["R"])).unwrap().svg;
        let attr = svg.split("points=\"").nth(1).unwrap().split('"').next().unwrap();
        let ys: Vec<f64> = attr
            .split(' ')
            .map(|p| p.split(',').nth(1).unwrap().parse().unwrap())
            .collect();
        assert_eq!(ys.len(), 3);
        // Extremes land on the plot edges and the midpoint halfway between.
        assert_eq!(ys[1], TOP);
        assert_eq!(ys[0], TOP + PLOT_H);
        assert!((ys[2] - (TOP + PLOT_H / 2.0)).abs() < 0.01);
    }

    #[test]
    fn non_numeric_cells_get_a_footnote() {
        let t = table(
            &["K", "V"],
            &[&["a", "1"], &["b", "2"], &["c", "3"], &["d", "4"], &["e", "n/a"]],
        );
        let svg = render_chart(&t, &spec(ChartKind::Bar, "K", &["V"])).unwrap().svg;
        assert_eq!(svg.matches(r#"class="bar""#).count(), 4);
        assert!(svg.contains("1 non-numeric value skipped"));
    }

    #[test]
    fn markup_in_cells_is_escaped() {
        let t = table(&["<K>", "V"], &[&["a&b", "1"]]);
        let svg = render_chart(&t, &spec(ChartKind::Scatter, "<K>", &["V"])).unwrap().svg;
        assert!(svg.contains("&lt;K&gt;"));
        assert!(svg.contains("a&amp;b"));
        assert!(!svg.contains("<K>"));
    }

    #[test]
    fn zero_rows_is_an_empty_series() {
        let t = table(&["K", "V"], &[]);
        assert_eq!(
            render_chart(&t, &spec(ChartKind::Bar, "K", &["V"])).unwrap_err(),
            ChartError::EmptySeries
        );
    }
}
