//! The symbolic operation pool: call syntax, the expression and predicate
//! mini-language, and the table transformations themselves.

mod ast;
mod exec;
mod parser;

pub use ast::{
    eval_expression, eval_predicate, format_operation_call, ArithOp, CmpOp, ColumnBody, EvalError,
    Expr, Literal, OpKind, OpSet, OperationCall, Predicate, RowContext, RowSelector, SortOrder,
    TableRow,
};
pub use exec::{
    apply, exec_add_column, exec_group_by, exec_select_column, exec_select_row, exec_sort_by,
    sort_key_cmp, OpError, COUNT_COLUMN,
};
pub use parser::{parse_operation_call, parse_operation_call_with, ParseFailure};

/// Executed operations, in order. Never contains `<END>`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct OperationHistory {
    steps: Vec<OperationCall>,
}

impl OperationHistory {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends an executed step. `<END>` is rejected.
    pub fn push(&mut self, call: OperationCall) -> Result<(), OpError> {
        if call.is_end() {
            return Err(OpError::EndNotExecutable);
        }
        self.steps.push(call);
        Ok(())
    }

    pub fn steps(&self) -> &[OperationCall] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Canonical rendering, one numbered step per line, or `(none)`.
    pub fn render(&self) -> String {
        if self.steps.is_empty() {
            return "(none)".to_string();
        }
        self.steps
            .iter()
            .enumerate()
            .map(|(i, c)| format!("{}. {}", i + 1, format_operation_call(c)))
            .collect::<Vec<_>>()
            .join("\n")
    }

    /// Replays the history from `initial`.
    pub fn replay(&self, initial: &crate::table::Table) -> Result<crate::table::Table, OpError> {
        self.steps
            .iter()
            .try_fold(initial.clone(), |t, c| apply(&t, c))
    }
}
