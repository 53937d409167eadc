use std::collections::HashMap;
use std::fmt;

use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};

use crate::table::{column_key, parse_decimal, Table, Value};

/// The five table-transforming operations of the pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    AddColumn,
    SelectColumn,
    SelectRow,
    GroupBy,
    SortBy,
}

impl OpKind {
    pub const ALL: [OpKind; 5] = [
        OpKind::AddColumn,
        OpKind::SelectColumn,
        OpKind::SelectRow,
        OpKind::GroupBy,
        OpKind::SortBy,
    ];

    /// Function name as it appears in operation calls.
    pub fn function_name(self) -> &'static str {
        match self {
            OpKind::AddColumn => "f_add_column",
            OpKind::SelectColumn => "f_select_column",
            OpKind::SelectRow => "f_select_row",
            OpKind::GroupBy => "f_group_by",
            OpKind::SortBy => "f_sort_by",
        }
    }

    pub fn from_name(name: &str) -> Option<OpKind> {
        let n = name.trim().to_ascii_lowercase();
        let n = n.strip_prefix("f_").unwrap_or(&n);
        OpKind::ALL
            .into_iter()
            .find(|k| &k.function_name()[2..] == n)
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.function_name())
    }
}

/// A set of enabled operations. `<END>` is always available.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct OpSet(u8);

impl OpSet {
    pub fn all() -> OpSet {
        OpSet(0b11111)
    }

    pub fn without(self, kind: OpKind) -> OpSet {
        OpSet(self.0 & !(1 << kind as u8))
    }

    pub fn contains(self, kind: OpKind) -> bool {
        self.0 & (1 << kind as u8) != 0
    }

    pub fn iter(self) -> impl Iterator<Item = OpKind> {
        OpKind::ALL.into_iter().filter(move |k| self.contains(*k))
    }
}

impl Default for OpSet {
    fn default() -> Self {
        OpSet::all()
    }
}

impl FromIterator<OpKind> for OpSet {
    fn from_iter<I: IntoIterator<Item = OpKind>>(iter: I) -> Self {
        OpSet(iter.into_iter().fold(0, |acc, k| acc | (1 << k as u8)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SortOrder {
    Asc,
    Desc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ArithOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl ArithOp {
    fn symbol(self) -> &'static str {
        match self {
            ArithOp::Add => "+",
            ArithOp::Sub => "-",
            ArithOp::Mul => "*",
            ArithOp::Div => "/",
        }
    }

    fn precedence(self) -> u8 {
        match self {
            ArithOp::Add | ArithOp::Sub => 1,
            ArithOp::Mul | ArithOp::Div => 2,
        }
    }
}

/// Arithmetic over column references and numeric literals.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Expr {
    Column(String),
    Literal(Decimal),
    Neg(Box<Expr>),
    Binary {
        op: ArithOp,
        lhs: Box<Expr>,
        rhs: Box<Expr>,
    },
}

impl Expr {
    pub fn binary(op: ArithOp, lhs: Expr, rhs: Expr) -> Expr {
        Expr::Binary {
            op,
            lhs: Box::new(lhs),
            rhs: Box::new(rhs),
        }
    }

    /// Column names referenced anywhere in the expression, in order of appearance.
    pub fn columns(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.collect_columns(&mut out);
        out
    }

    fn collect_columns<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            Expr::Column(c) => out.push(c),
            Expr::Literal(_) => {}
            Expr::Neg(e) => e.collect_columns(out),
            Expr::Binary { lhs, rhs, .. } => {
                lhs.collect_columns(out);
                rhs.collect_columns(out);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    fn symbol(self) -> &'static str {
        match self {
            CmpOp::Eq => "==",
            CmpOp::Ne => "!=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }

    pub fn is_ordering(self) -> bool {
        !matches!(self, CmpOp::Eq | CmpOp::Ne)
    }

    fn holds(self, ord: std::cmp::Ordering) -> bool {
        use std::cmp::Ordering::*;
        match self {
            CmpOp::Eq => ord == Equal,
            CmpOp::Ne => ord != Equal,
            CmpOp::Lt => ord == Less,
            CmpOp::Le => ord != Greater,
            CmpOp::Gt => ord == Greater,
            CmpOp::Ge => ord != Less,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Literal {
    Number(Decimal),
    Text(String),
}

/// Row filter: comparisons of a column against a literal, joined by AND/OR.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Predicate {
    Compare {
        column: String,
        op: CmpOp,
        literal: Literal,
    },
    And(Box<Predicate>, Box<Predicate>),
    Or(Box<Predicate>, Box<Predicate>),
}

impl Predicate {
    pub fn compare(column: impl Into<String>, op: CmpOp, literal: Literal) -> Predicate {
        Predicate::Compare {
            column: column.into(),
            op,
            literal,
        }
    }

    pub fn columns(&self) -> Vec<&str> {
        match self {
            Predicate::Compare { column, .. } => vec![column.as_str()],
            Predicate::And(a, b) | Predicate::Or(a, b) => {
                let mut v = a.columns();
                v.extend(b.columns());
                v
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum ColumnBody {
    Expr(Expr),
    /// Raw cell strings; types are inferred when the column is added.
    Values(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum RowSelector {
    /// 1-based row positions.
    Indices(Vec<usize>),
    Predicate(Predicate),
}

/// One planner-emitted step.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum OperationCall {
    AddColumn { name: String, body: ColumnBody },
    SelectColumn { columns: Vec<String> },
    SelectRow(RowSelector),
    GroupBy { column: String },
    SortBy { column: String, order: SortOrder },
    End,
}

impl OperationCall {
    pub fn kind(&self) -> Option<OpKind> {
        Some(match self {
            OperationCall::AddColumn { .. } => OpKind::AddColumn,
            OperationCall::SelectColumn { .. } => OpKind::SelectColumn,
            OperationCall::SelectRow(_) => OpKind::SelectRow,
            OperationCall::GroupBy { .. } => OpKind::GroupBy,
            OperationCall::SortBy { .. } => OpKind::SortBy,
            OperationCall::End => return None,
        })
    }

    pub fn is_end(&self) -> bool {
        matches!(self, OperationCall::End)
    }
}

// ---------------------------------------------------------------------------
// Canonical formatting

const KEYWORDS: [&str; 4] = ["and", "or", "asc", "desc"];

pub(crate) fn is_word_start(c: char) -> bool {
    c.is_alphabetic() || c == '_'
}

pub(crate) fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || matches!(c, '_' | '&' | '%' | '#' | '.' | '\'' | '?' | '$' | '@')
}

/// True when a name can be written without backticks.
fn is_bare_name(name: &str) -> bool {
    let mut chars = name.chars();
    matches!(chars.next(), Some(c) if is_word_start(c))
        && chars.all(is_word_char)
        && !KEYWORDS.iter().any(|k| name.eq_ignore_ascii_case(k))
}

fn write_name(out: &mut String, name: &str) {
    if is_bare_name(name) {
        out.push_str(name);
    } else {
        out.push('`');
        out.push_str(&name.replace('`', "``"));
        out.push('`');
    }
}

fn write_string(out: &mut String, s: &str) {
    out.push('"');
    for c in s.chars() {
        if c == '"' || c == '\\' {
            out.push('\\');
        }
        out.push(c);
    }
    out.push('"');
}

fn write_expr(out: &mut String, e: &Expr) {
    match e {
        Expr::Column(c) => write_name(out, c),
        Expr::Literal(d) => out.push_str(&d.to_string()),
        Expr::Neg(inner) => {
            out.push('-');
            match inner.as_ref() {
                Expr::Column(_) | Expr::Neg(_) => write_expr(out, inner),
                _ => {
                    out.push('(');
                    write_expr(out, inner);
                    out.push(')');
                }
            }
        }
        Expr::Binary { op, lhs, rhs } => {
            let wrap_l = matches!(lhs.as_ref(), Expr::Binary { op: l, .. } if l.precedence() < op.precedence());
            let wrap_r = matches!(rhs.as_ref(), Expr::Binary { op: r, .. } if r.precedence() <= op.precedence());
            write_wrapped(out, lhs, wrap_l);
            out.push(' ');
            out.push_str(op.symbol());
            out.push(' ');
            write_wrapped(out, rhs, wrap_r);
        }
    }
}

fn write_wrapped(out: &mut String, e: &Expr, wrap: bool) {
    if wrap {
        out.push('(');
    }
    write_expr(out, e);
    if wrap {
        out.push(')');
    }
}

fn write_predicate(out: &mut String, p: &Predicate) {
    match p {
        Predicate::Compare {
            column,
            op,
            literal,
        } => {
            write_name(out, column);
            out.push(' ');
            out.push_str(op.symbol());
            out.push(' ');
            match literal {
                Literal::Number(d) => out.push_str(&d.to_string()),
                Literal::Text(s) => write_string(out, s),
            }
        }
        Predicate::And(a, b) => {
            write_pred_wrapped(out, a, matches!(a.as_ref(), Predicate::Or(..)));
            out.push_str(" AND ");
            write_pred_wrapped(out, b, !matches!(b.as_ref(), Predicate::Compare { .. }));
        }
        Predicate::Or(a, b) => {
            write_predicate(out, a);
            out.push_str(" OR ");
            write_pred_wrapped(out, b, matches!(b.as_ref(), Predicate::Or(..)));
        }
    }
}

fn write_pred_wrapped(out: &mut String, p: &Predicate, wrap: bool) {
    if wrap {
        out.push('(');
    }
    write_predicate(out, p);
    if wrap {
        out.push(')');
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = String::new();
        write_expr(&mut s, self);
        f.write_str(&s)
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = String::new();
        write_predicate(&mut s, self);
        f.write_str(&s)
    }
}

/// Canonical single-line rendering; the inverse of
/// [`parse_operation_call`](super::parse_operation_call).
pub fn format_operation_call(call: &OperationCall) -> String {
    let mut out = String::new();
    let Some(kind) = call.kind() else {
        return "<END>".to_string();
    };
    out.push_str(kind.function_name());
    out.push('(');
    match call {
        OperationCall::AddColumn { name, body } => {
            write_name(&mut out, name);
            out.push_str(", ");
            match body {
                ColumnBody::Expr(e) => write_expr(&mut out, e),
                ColumnBody::Values(vs) => {
                    out.push('[');
                    for (i, v) in vs.iter().enumerate() {
                        if i > 0 {
                            out.push_str(", ");
                        }
                        write_string(&mut out, v);
                    }
                    out.push(']');
                }
            }
        }
        OperationCall::SelectColumn { columns } => {
            out.push('[');
            for (i, c) in columns.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                write_name(&mut out, c);
            }
            out.push(']');
        }
        OperationCall::SelectRow(RowSelector::Indices(ix)) => {
            out.push('[');
            out.push_str(
                &ix.iter()
                    .map(usize::to_string)
                    .collect::<Vec<_>>()
                    .join(", "),
            );
            out.push(']');
        }
        OperationCall::SelectRow(RowSelector::Predicate(p)) => write_predicate(&mut out, p),
        OperationCall::GroupBy { column } => write_name(&mut out, column),
        OperationCall::SortBy { column, order } => {
            write_name(&mut out, column);
            out.push_str(match order {
                SortOrder::Asc => ", asc",
                SortOrder::Desc => ", desc",
            });
        }
        OperationCall::End => unreachable!(),
    }
    out.push(')');
    out
}

impl fmt::Display for OperationCall {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&format_operation_call(self))
    }
}

// ---------------------------------------------------------------------------
// Evaluation

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EvalError {
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("{0}")]
    TypeError(String),
    #[error("division by zero")]
    DivideByZero,
    #[error("arithmetic overflow")]
    Overflow,
}

/// Name-to-cell lookup for expression and predicate evaluation.
pub trait RowContext {
    fn lookup(&self, column: &str) -> Option<&Value>;
}

/// One row of a table viewed as a [`RowContext`].
pub struct TableRow<'a> {
    pub table: &'a Table,
    pub index: usize,
}

impl RowContext for TableRow<'_> {
    fn lookup(&self, column: &str) -> Option<&Value> {
        self.table
            .column_index(column)
            .map(|c| &self.table.rows()[self.index][c])
    }
}

impl RowContext for HashMap<String, Value> {
    fn lookup(&self, column: &str) -> Option<&Value> {
        let key = column_key(column);
        self.iter()
            .find(|(k, _)| column_key(k) == key)
            .map(|(_, v)| v)
    }
}

/// Evaluates arithmetic on cell magnitudes. Any Empty operand makes the
/// result Empty; Text operands are a type error.
pub fn eval_expression(expr: &Expr, row: &dyn RowContext) -> Result<Value, EvalError> {
    Ok(match eval_magnitude(expr, row)? {
        Some(d) => Value::number(d),
        None => Value::Empty,
    })
}

fn eval_magnitude(expr: &Expr, row: &dyn RowContext) -> Result<Option<Decimal>, EvalError> {
    match expr {
        Expr::Literal(d) => Ok(Some(*d)),
        Expr::Column(name) => match row.lookup(name) {
            None => Err(EvalError::UnknownColumn(name.clone())),
            Some(Value::Empty) => Ok(None),
            Some(Value::Number(n)) => Ok(Some(n.magnitude())),
            Some(Value::Text(t)) => Err(EvalError::TypeError(format!(
                "column `{name}` holds non-numeric value `{t}`"
            ))),
        },
        Expr::Neg(e) => Ok(eval_magnitude(e, row)?.map(|d| -d)),
        Expr::Binary { op, lhs, rhs } => {
            let l = eval_magnitude(lhs, row)?;
            let r = eval_magnitude(rhs, row)?;
            let (Some(l), Some(r)) = (l, r) else {
                return Ok(None);
            };
            let out = match op {
                ArithOp::Add => l.checked_add(r),
                ArithOp::Sub => l.checked_sub(r),
                ArithOp::Mul => l.checked_mul(r),
                ArithOp::Div => {
                    if r.is_zero() {
                        return Err(EvalError::DivideByZero);
                    }
                    l.checked_div(r)
                }
            };
            out.map(Some).ok_or(EvalError::Overflow)
        }
    }
}

/// Evaluates a predicate against one row. Both sides of AND/OR are always
/// evaluated, so a type error anywhere in the predicate surfaces.
pub fn eval_predicate(pred: &Predicate, row: &dyn RowContext) -> Result<bool, EvalError> {
    match pred {
        Predicate::And(a, b) => {
            let l = eval_predicate(a, row)?;
            let r = eval_predicate(b, row)?;
            Ok(l && r)
        }
        Predicate::Or(a, b) => {
            let l = eval_predicate(a, row)?;
            let r = eval_predicate(b, row)?;
            Ok(l || r)
        }
        Predicate::Compare {
            column,
            op,
            literal,
        } => {
            let cell = row
                .lookup(column)
                .ok_or_else(|| EvalError::UnknownColumn(column.clone()))?;
            compare_cell(cell, *op, literal)
        }
    }
}

fn compare_cell(cell: &Value, op: CmpOp, literal: &Literal) -> Result<bool, EvalError> {
    let literal_number = match literal {
        Literal::Number(d) => Some(*d),
        Literal::Text(s) => parse_decimal(s),
    };
    match cell {
        Value::Empty => Ok(match (op, literal) {
            (CmpOp::Eq, Literal::Text(s)) => s.is_empty(),
            (CmpOp::Ne, Literal::Text(s)) => !s.is_empty(),
            (CmpOp::Ne, Literal::Number(_)) => true,
            _ => false,
        }),
        Value::Number(n) => match literal_number {
            Some(d) => Ok(op.holds(n.magnitude().cmp(&d))),
            None if op.is_ordering() => Err(EvalError::TypeError(format!(
                "ordered comparison of number {} with text",
                n.raw()
            ))),
            None => Ok(op == CmpOp::Ne),
        },
        Value::Text(t) => {
            if op.is_ordering() {
                return Err(EvalError::TypeError(format!(
                    "ordered comparison on text value `{t}`"
                )));
            }
            let rhs = match literal {
                Literal::Text(s) => s.to_lowercase(),
                Literal::Number(d) => crate::table::canonical_decimal(*d),
            };
            let equal = t.to_lowercase() == rhs;
            Ok(if op == CmpOp::Eq { equal } else { !equal })
        }
    }
}
