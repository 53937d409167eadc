//! Fine stage: the plan/execute loop that transforms the table one operation
//! at a time, guided by the knowledge tuple.

use serde::{Deserialize, Serialize};

use crate::gateway::{ChatMessage, ChatRequest, GatewayError, ModelRole, QueryId, Session, Stage};
use crate::knowledge::KnowledgeTuple;
use crate::ops::{
    apply, format_operation_call, parse_operation_call_with, OpKind, OpSet, OperationCall,
    OperationHistory,
};
use crate::table::{serialize_table, SerializeStyle, Table};
use crate::templates::{self, TemplateSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoopLimits {
    pub max_steps: usize,
    /// Attempts per step, the first included.
    pub max_parse_retries: usize,
    /// How many of the latest history entries a new call is compared with.
    pub loop_guard_window: usize,
}

impl Default for LoopLimits {
    fn default() -> Self {
        LoopLimits {
            max_steps: 10,
            max_parse_retries: 2,
            loop_guard_window: 2,
        }
    }
}

impl LoopLimits {
    /// Clamps to at least one step and one attempt.
    pub fn sanitized(self) -> LoopLimits {
        LoopLimits {
            max_steps: self.max_steps.max(1),
            max_parse_retries: self.max_parse_retries.max(1),
            loop_guard_window: self.loop_guard_window,
        }
    }
}

/// Why the loop ended early or a decision was rewritten.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FineFlag {
    ParseExhausted,
    LoopGuard,
    MaxSteps,
    OperationError,
    EmptyTable,
    BudgetExhausted,
    ProviderError,
}

impl FineFlag {
    pub fn name(self) -> &'static str {
        match self {
            FineFlag::ParseExhausted => "parse_exhausted",
            FineFlag::LoopGuard => "loop_guard",
            FineFlag::MaxSteps => "max_steps",
            FineFlag::OperationError => "operation_error",
            FineFlag::EmptyTable => "empty_table",
            FineFlag::BudgetExhausted => "budget_exhausted",
            FineFlag::ProviderError => "provider_error",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReasoningState {
    pub table: Table,
    pub history: OperationHistory,
}

impl ReasoningState {
    pub fn new(table: Table) -> Self {
        ReasoningState {
            table,
            history: OperationHistory::new(),
        }
    }

    pub fn step(&self) -> usize {
        self.history.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlannerDecision {
    pub call: OperationCall,
    pub raw_response: String,
    pub attempt: usize,
    pub flag: Option<FineFlag>,
    /// Trace entry of the query that produced the decision.
    pub query: Option<QueryId>,
}

/// Everything the planner needs besides the state.
#[derive(Clone, Copy)]
pub struct PlannerContext<'a> {
    pub question: &'a str,
    pub knowledge: &'a KnowledgeTuple,
    pub templates: &'a TemplateSet,
    pub allowed: OpSet,
}

fn operation_help(kind: OpKind) -> &'static str {
    match kind {
        OpKind::AddColumn => {
            "f_add_column(<new column>, <arithmetic over columns>) or f_add_column(<new column>, [v1, v2, ...]) adds a column"
        }
        OpKind::SelectColumn => "f_select_column([<column>, ...]) keeps only the listed columns",
        OpKind::SelectRow => {
            "f_select_row([<row number>, ...]) or f_select_row(<column> <op> <value> [AND|OR ...]) keeps matching rows; rows are numbered from 1"
        }
        OpKind::GroupBy => "f_group_by(<column>) counts rows per distinct value",
        OpKind::SortBy => "f_sort_by(<column>, asc|desc) sorts rows",
    }
}

/// The grammar instruction: one line per allowed operation, then `<END>`.
pub fn operations_instruction(allowed: OpSet) -> String {
    let mut out = String::from("Available operations:\n");
    for kind in allowed.iter() {
        out.push_str("- ");
        out.push_str(operation_help(kind));
        out.push('\n');
    }
    out.push_str("- <END> when the current table is enough to answer the question");
    out
}

pub fn build_planner_prompt(state: &ReasoningState, ctx: &PlannerContext<'_>) -> String {
    ctx.templates.render(
        templates::PLANNER,
        &[
            ("QUESTION", ctx.question),
            ("R_VISUAL", &ctx.knowledge.r_visual),
            ("R_SEMANTIC", &ctx.knowledge.r_semantic),
            ("R_SUMMARY", &ctx.knowledge.r_summary),
            ("HISTORY", &state.history.render()),
            ("TABLE", &serialize_table(&state.table, SerializeStyle::Pipe)),
            ("OPERATIONS", &operations_instruction(ctx.allowed)),
        ],
    )
}

fn retry_prompt(prompt: &str, raw: &str, error: &str) -> String {
    format!(
        "{prompt}\n\nYour previous reply was:\n{raw}\nIt could not be parsed ({error}). Reply with exactly one operation call from the list above."
    )
}

/// True when `call` repeats one of the last `window` executed calls.
pub fn is_repeat(history: &OperationHistory, call: &OperationCall, window: usize) -> bool {
    history.steps().iter().rev().take(window).any(|c| c == call)
}

/// Asks the planner for the next call. Unparseable replies are retried with
/// the parse error appended, up to `max_parse_retries` attempts in total;
/// exhaustion and loop-guard repeats both become `<END>` with a flag.
pub fn plan_next(
    state: &ReasoningState,
    ctx: &PlannerContext<'_>,
    session: &Session<'_>,
    limits: LoopLimits,
) -> Result<PlannerDecision, GatewayError> {
    let limits = limits.sanitized();
    let step = state.step() + 1;
    let prompt = build_planner_prompt(state, ctx);
    let mut text = prompt.clone();
    let mut last_raw = String::new();
    let mut last_query = None;
    for attempt in 1..=limits.max_parse_retries {
        let (result, id) = session.ask(
            ModelRole::Planner,
            ChatRequest::new(vec![ChatMessage::user(text.clone())]),
        );
        session.annotate(id, |r| {
            r.step = Some(step);
            r.attempt = Some(attempt);
        });
        let raw = result?.text;
        match parse_operation_call_with(&raw, ctx.allowed) {
            Ok(call) => {
                let (call, flag) = if !call.is_end() && is_repeat(&state.history, &call, limits.loop_guard_window) {
                    (OperationCall::End, Some(FineFlag::LoopGuard))
                } else {
                    (call, None)
                };
                session.annotate(id, |r| {
                    r.parsed_call = Some(format_operation_call(&call));
                    if let Some(f) = flag {
                        r.flags.push(f.name().to_string());
                    }
                });
                return Ok(PlannerDecision {
                    call,
                    raw_response: raw,
                    attempt,
                    flag,
                    query: Some(id),
                });
            }
            Err(e) => {
                text = retry_prompt(&prompt, &raw, &e.to_string());
                last_raw = raw;
                last_query = Some(id);
            }
        }
    }
    if let Some(id) = last_query {
        session.annotate(id, |r| r.flags.push(FineFlag::ParseExhausted.name().to_string()));
    }
    Ok(PlannerDecision {
        call: OperationCall::End,
        raw_response: last_raw,
        attempt: limits.max_parse_retries,
        flag: Some(FineFlag::ParseExhausted),
        query: last_query,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FineOutcome {
    pub table: Table,
    pub history: OperationHistory,
    /// Fine-stage queries that reached a provider.
    pub query_count: usize,
    pub flags: Vec<FineFlag>,
    /// The failing call and its error, when the loop stopped on one.
    pub operation_error: Option<String>,
}

/// Runs the loop until `<END>`, `max_steps`, an operation error (the table
/// stays at the last good state), an empty table, or provider failure.
pub fn run_fine_stage(
    t0: &Table,
    ctx: &PlannerContext<'_>,
    session: &Session<'_>,
    limits: LoopLimits,
) -> FineOutcome {
    let limits = limits.sanitized();
    let before = session.budget().used(Stage::Fine);
    let mut state = ReasoningState::new(t0.clone());
    let mut flags = Vec::new();
    let mut operation_error = None;

    loop {
        if state.step() >= limits.max_steps {
            flags.push(FineFlag::MaxSteps);
            break;
        }
        if state.table.row_count() == 0 {
            flags.push(FineFlag::EmptyTable);
            break;
        }
        let decision = match plan_next(&state, ctx, session, limits) {
            Ok(d) => d,
            Err(GatewayError::BudgetExceeded { .. }) => {
                flags.push(FineFlag::BudgetExhausted);
                break;
            }
            Err(e) => {
                tracing::warn!(error = %e, "planner query failed");
                flags.push(FineFlag::ProviderError);
                break;
            }
        };
        flags.extend(decision.flag);
        if decision.call.is_end() {
            break;
        }
        match apply(&state.table, &decision.call) {
            Ok(next) => {
                if let Some(id) = decision.query {
                    session.annotate(id, |r| {
                        r.rows = Some(next.row_count());
                        r.columns = Some(next.column_count());
                    });
                }
                state.table = next;
                state
                    .history
                    .push(decision.call)
                    .expect("End never reaches the history");
            }
            Err(e) => {
                if let Some(id) = decision.query {
                    session.annotate(id, |r| r.flags.push(FineFlag::OperationError.name().to_string()));
                }
                operation_error = Some(format!("{}: {e}", format_operation_call(&decision.call)));
                flags.push(FineFlag::OperationError);
                break;
            }
        }
    }
    FineOutcome {
        table: state.table,
        history: state.history,
        query_count: (session.budget().used(Stage::Fine) - before) as usize,
        flags,
        operation_error,
    }
}
