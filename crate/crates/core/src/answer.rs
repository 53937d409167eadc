//! Final answer generation and scoring.

use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{ChatMessage, ChatRequest, GatewayError, ModelRole, QueryId, Session};
use crate::knowledge::KnowledgeTuple;
use crate::table::{canonical_decimal, estimate_tokens, parse_decimal, serialize_table, SerializeStyle, Table};
use crate::templates::{self, TemplateSet};

/// Relative tolerance for numeric denotation equality.
pub const NUMERIC_TOLERANCE: Decimal = Decimal::from_parts(1, 0, 0, false, 6);
const MARKER: &str = "answer:";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TaskKind {
    #[serde(rename = "qa")]
    Qa,
    #[serde(rename = "fact-verification")]
    FactVerification,
}

impl TaskKind {
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Qa => "qa",
            TaskKind::FactVerification => "fact-verification",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FinalContext {
    pub table: Table,
    pub question: String,
    pub r_visual: String,
    pub r_semantic: String,
    pub r_summary: String,
    /// Token estimate of the serialized final table.
    pub table_tokens: usize,
}

pub fn build_final_context(t_final: &Table, question: &str, knowledge: &KnowledgeTuple) -> FinalContext {
    FinalContext {
        table: t_final.clone(),
        question: question.to_string(),
        r_visual: knowledge.r_visual.clone(),
        r_semantic: knowledge.r_semantic.clone(),
        r_summary: knowledge.r_summary.clone(),
        table_tokens: estimate_tokens(t_final),
    }
}

impl FinalContext {
    /// The final prompt: question, then the knowledge fields, then the table.
    pub fn render(&self, templates: &TemplateSet, task: TaskKind) -> String {
        let name = match task {
            TaskKind::Qa => templates::FINAL,
            TaskKind::FactVerification => templates::FINAL_FACT,
        };
        templates.render(
            name,
            &[
                ("QUESTION", &self.question),
                ("R_VISUAL", &self.r_visual),
                ("R_SEMANTIC", &self.r_semantic),
                ("R_SUMMARY", &self.r_summary),
                ("TABLE", &serialize_table(&self.table, SerializeStyle::Pipe)),
            ],
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Answer {
    pub raw: String,
    /// Normalized values; `["true"]` or `["false"]` for fact verification.
    pub denotations: Vec<String>,
    pub task: TaskKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AnswerError {
    #[error("verdict `{raw}` is neither true nor false")]
    UnmappableVerdict { raw: String },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// The answer text: what follows the last `Answer:` marker, or the last
/// non-empty line when there is no marker.
pub fn extract_answer_text(raw: &str) -> String {
    let lines: Vec<&str> = raw.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
    for (i, line) in lines.iter().enumerate().rev() {
        if let Some(at) = line.to_ascii_lowercase().rfind(MARKER) {
            let rest = line[at + MARKER.len()..].trim();
            if !rest.is_empty() {
                return rest.to_string();
            }
            if let Some(next) = lines.get(i + 1) {
                return next.to_string();
            }
        }
    }
    lines.last().map(|l| l.to_string()).unwrap_or_default()
}

/// Splits a QA answer on `|` and drops a sentence-final period.
pub fn split_denotations(text: &str) -> Vec<String> {
    text.split('|')
        .map(|part| {
            let p = part.trim();
            let p = match p.strip_suffix('.') {
                Some(stripped) if !stripped.is_empty() && parse_decimal(p).is_none() => stripped,
                _ => p,
            };
            normalize_denotation(p)
        })
        .filter(|p| !p.is_empty())
        .collect()
}

const TRUE_WORDS: [&str; 6] = ["yes", "true", "entailed", "entails", "supported", "correct"];
const FALSE_WORDS: [&str; 6] = ["no", "false", "refuted", "refutes", "unsupported", "incorrect"];

/// Maps a verdict to `true`/`false` when its words name exactly one class.
pub fn map_verdict(text: &str) -> Option<bool> {
    let lower = text.to_lowercase();
    let words: Vec<&str> = lower
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .collect();
    let t = words.iter().any(|w| TRUE_WORDS.contains(w));
    let f = words.iter().any(|w| FALSE_WORDS.contains(w));
    let negated = words.contains(&"not");
    match (t, f, negated) {
        (true, false, false) => Some(true),
        // "not true", "not entailed"
        (true, false, true) => Some(false),
        (false, true, _) => Some(false),
        _ => None,
    }
}

/// Parses a raw model reply into an answer.
pub fn parse_answer(raw: &str, task: TaskKind) -> Result<Answer, AnswerError> {
    let text = extract_answer_text(raw);
    let denotations = match task {
        TaskKind::Qa => split_denotations(&text),
        TaskKind::FactVerification => {
            let verdict = map_verdict(&text)
                .or_else(|| map_verdict(raw))
                .ok_or_else(|| AnswerError::UnmappableVerdict { raw: raw.to_string() })?;
            vec![verdict.to_string()]
        }
    };
    Ok(Answer {
        raw: raw.to_string(),
        denotations,
        task,
    })
}

/// Issues the final query (exactly one) and parses the reply.
pub fn generate_answer(
    context: &FinalContext,
    session: &Session<'_>,
    templates: &TemplateSet,
    task: TaskKind,
) -> (Result<Answer, AnswerError>, QueryId) {
    let prompt = context.render(templates, task);
    let (result, id) = session.ask(
        ModelRole::FinalAnswer,
        ChatRequest::new(vec![ChatMessage::user(prompt)]),
    );
    let answer = result
        .map_err(AnswerError::from)
        .and_then(|r| parse_answer(&r.text, task));
    (answer, id)
}

fn strip_quotes(s: &str) -> Option<&str> {
    const PAIRS: [(char, char); 5] = [('"', '"'), ('\'', '\''), ('`', '`'), ('\u{201c}', '\u{201d}'), ('\u{2018}', '\u{2019}')];
    PAIRS.iter().find_map(|&(open, close)| {
        let inner = s.strip_prefix(open)?.strip_suffix(close)?;
        Some(inner)
    })
}

/// Canonical form for answer comparison: trimmed, unquoted, case-folded,
/// whitespace collapsed, and numbers in canonical decimal form.
pub fn normalize_denotation(text: &str) -> String {
    let mut s = text.trim();
    while let Some(inner) = strip_quotes(s) {
        s = inner.trim();
    }
    let collapsed = s
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase();
    match parse_decimal(&collapsed) {
        Some(d) => canonical_decimal(d),
        None => collapsed,
    }
}

fn denotations_equal(a: &str, b: &str) -> bool {
    if a == b {
        return true;
    }
    match (parse_decimal(a), parse_decimal(b)) {
        (Some(x), Some(y)) => {
            let scale = x.abs().max(y.abs());
            match (scale.checked_mul(NUMERIC_TOLERANCE), x.checked_sub(y)) {
                (Some(tol), Some(diff)) => diff.abs() <= tol,
                _ => false,
            }
        }
        _ => false,
    }
}

/// Multiset equality of normalized denotations, numbers within
/// [`NUMERIC_TOLERANCE`] relative error.
pub fn denotation_match(predicted: &[String], gold: &[String]) -> bool {
    if predicted.len() != gold.len() {
        return false;
    }
    let p: Vec<String> = predicted.iter().map(|s| normalize_denotation(s)).collect();
    let g: Vec<String> = gold.iter().map(|s| normalize_denotation(s)).collect();
    // Perfect bipartite matching (Kuhn); tolerance makes equality non-transitive.
    let mut owner: Vec<Option<usize>> = vec![None; g.len()];
    fn augment(i: usize, p: &[String], g: &[String], seen: &mut [bool], owner: &mut [Option<usize>]) -> bool {
        for j in 0..g.len() {
            if !seen[j] && denotations_equal(&p[i], &g[j]) {
                seen[j] = true;
                if owner[j].is_none_or(|k| augment(k, p, g, seen, owner)) {
                    owner[j] = Some(i);
                    return true;
                }
            }
        }
        false
    }
    (0..p.len()).all(|i| augment(i, &p, &g, &mut vec![false; g.len()], &mut owner))
}

/// Scores an answer against gold values.
pub fn is_correct(answer: &Answer, gold: &[String]) -> bool {
    denotation_match(&answer.denotations, gold)
}
