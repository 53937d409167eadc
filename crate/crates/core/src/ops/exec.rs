use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};

use rust_decimal::Decimal;
use thiserror::Error;

use super::ast::*;
use crate::table::{column_key, Table, Value};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OpError {
    #[error("column `{0}` already exists")]
    DuplicateColumn(String),
    #[error("invalid column name `{0}`")]
    InvalidColumnName(String),
    #[error("value list has {found} entries, table has {expected} rows")]
    LengthMismatch { expected: usize, found: usize },
    #[error("unknown column `{name}`; available: {}", candidates.join(", "))]
    UnknownColumn {
        name: String,
        candidates: Vec<String>,
    },
    #[error("type error in row {row}: {message}")]
    TypeError { row: usize, message: String },
    #[error("division by zero in row {row}")]
    DivideByZero { row: usize },
    #[error("arithmetic overflow in row {row}")]
    Overflow { row: usize },
    #[error("row index {index} out of range 1..={rows}")]
    IndexOutOfRange { index: usize, rows: usize },
    #[error("row index {0} selected twice")]
    DuplicateIndex(usize),
    #[error("<END> is a terminator, not an operation")]
    EndNotExecutable,
}

fn unknown(table: &Table, name: &str) -> OpError {
    OpError::UnknownColumn {
        name: name.to_string(),
        candidates: table.columns().to_vec(),
    }
}

fn require_column(table: &Table, name: &str) -> Result<usize, OpError> {
    table.column_index(name).ok_or_else(|| unknown(table, name))
}

fn row_error(row: usize, e: EvalError, table: &Table) -> OpError {
    match e {
        EvalError::UnknownColumn(c) => unknown(table, &c),
        EvalError::TypeError(message) => OpError::TypeError { row, message },
        EvalError::DivideByZero => OpError::DivideByZero { row },
        EvalError::Overflow => OpError::Overflow { row },
    }
}

/// Appends a column computed from `body` on the right.
pub fn exec_add_column(table: &Table, name: &str, body: &ColumnBody) -> Result<Table, OpError> {
    if column_key(name).is_empty() {
        return Err(OpError::InvalidColumnName(name.to_string()));
    }
    if table.column_index(name).is_some() {
        return Err(OpError::DuplicateColumn(name.to_string()));
    }
    let new_cells: Vec<Value> = match body {
        ColumnBody::Values(values) => {
            if values.len() != table.row_count() {
                return Err(OpError::LengthMismatch {
                    expected: table.row_count(),
                    found: values.len(),
                });
            }
            values.iter().map(|v| Value::infer(v)).collect()
        }
        ColumnBody::Expr(expr) => {
            for c in expr.columns() {
                require_column(table, c)?;
            }
            (0..table.row_count())
                .map(|i| {
                    eval_expression(expr, &TableRow { table, index: i })
                        .map_err(|e| row_error(i + 1, e, table))
                })
                .collect::<Result<_, _>>()?
        }
    };
    let mut columns = table.columns().to_vec();
    columns.push(name.to_string());
    let rows = table
        .rows()
        .iter()
        .zip(new_cells)
        .map(|(r, v)| {
            let mut r = r.clone();
            r.push(v);
            r
        })
        .collect();
    Ok(Table::from_parts_unchecked(
        columns,
        rows,
        table.provenance().map(str::to_string),
    ))
}

/// Projects onto `names`, in the requested order.
pub fn exec_select_column(table: &Table, names: &[String]) -> Result<Table, OpError> {
    let mut indices = Vec::with_capacity(names.len());
    let mut seen = HashSet::new();
    for n in names {
        let i = require_column(table, n)?;
        if !seen.insert(i) {
            return Err(OpError::DuplicateColumn(table.columns()[i].clone()));
        }
        indices.push(i);
    }
    if indices.is_empty() {
        return Err(OpError::InvalidColumnName(String::new()));
    }
    let columns = indices.iter().map(|&i| table.columns()[i].clone()).collect();
    let rows = table
        .rows()
        .iter()
        .map(|r| indices.iter().map(|&i| r[i].clone()).collect())
        .collect();
    Ok(Table::from_parts_unchecked(
        columns,
        rows,
        table.provenance().map(str::to_string),
    ))
}

/// Keeps the selected rows in their original relative order.
pub fn exec_select_row(table: &Table, selector: &RowSelector) -> Result<Table, OpError> {
    let keep: Vec<bool> = match selector {
        RowSelector::Indices(ix) => {
            let n = table.row_count();
            let mut keep = vec![false; n];
            for &i in ix {
                if i == 0 || i > n {
                    return Err(OpError::IndexOutOfRange { index: i, rows: n });
                }
                if keep[i - 1] {
                    return Err(OpError::DuplicateIndex(i));
                }
                keep[i - 1] = true;
            }
            keep
        }
        RowSelector::Predicate(p) => {
            for c in p.columns() {
                require_column(table, c)?;
            }
            (0..table.row_count())
                .map(|i| {
                    eval_predicate(p, &TableRow { table, index: i })
                        .map_err(|e| row_error(i + 1, e, table))
                })
                .collect::<Result<_, _>>()?
        }
    };
    let rows = table
        .rows()
        .iter()
        .zip(keep)
        .filter(|&(_r, k)| k).map(|(r, _k)| r.clone())
        .collect();
    Ok(Table::from_parts_unchecked(
        table.columns().to_vec(),
        rows,
        table.provenance().map(str::to_string),
    ))
}

#[derive(PartialEq, Eq, Hash)]
enum GroupKey {
    Empty,
    Number(Decimal),
    Text(String),
}

fn group_key(v: &Value) -> GroupKey {
    match v {
        Value::Empty => GroupKey::Empty,
        Value::Number(n) => GroupKey::Number(n.magnitude().normalize()),
        Value::Text(t) => GroupKey::Text(t.to_lowercase()),
    }
}

/// Name of the count column produced by [`exec_group_by`].
pub const COUNT_COLUMN: &str = "Count";
const COUNT_COLUMN_FALLBACK: &str = "Group_Count";

/// Counts rows per distinct value of `column`, in order of first appearance.
pub fn exec_group_by(table: &Table, column: &str) -> Result<Table, OpError> {
    let c = require_column(table, column)?;
    let mut order: Vec<(Value, u64)> = Vec::new();
    let mut slot: HashMap<GroupKey, usize> = HashMap::new();
    for v in table.column_values(c) {
        let key = group_key(v);
        match slot.get(&key) {
            Some(&i) => order[i].1 += 1,
            None => {
                slot.insert(key, order.len());
                order.push((v.clone(), 1));
            }
        }
    }
    let name = table.columns()[c].clone();
    let count_name = if column_key(&name) == column_key(COUNT_COLUMN) {
        COUNT_COLUMN_FALLBACK
    } else {
        COUNT_COLUMN
    };
    let rows = order
        .into_iter()
        .map(|(v, n)| vec![v, Value::number(Decimal::from(n))])
        .collect();
    Ok(Table::from_parts_unchecked(
        vec![name, count_name.to_string()],
        rows,
        table.provenance().map(str::to_string),
    ))
}

/// Total order used by sorting: Empty < numbers by magnitude < text,
/// case-insensitively.
pub fn sort_key_cmp(a: &Value, b: &Value) -> Ordering {
    fn rank(v: &Value) -> u8 {
        match v {
            Value::Empty => 0,
            Value::Number(_) => 1,
            Value::Text(_) => 2,
        }
    }
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => x.magnitude().cmp(&y.magnitude()),
        (Value::Text(x), Value::Text(y)) => x.to_lowercase().cmp(&y.to_lowercase()),
        _ => rank(a).cmp(&rank(b)),
    }
}

/// Stable sort on one column; ties keep their input order in both directions.
pub fn exec_sort_by(table: &Table, column: &str, order: SortOrder) -> Result<Table, OpError> {
    let c = require_column(table, column)?;
    let mut rows = table.rows().to_vec();
    match order {
        SortOrder::Asc => rows.sort_by(|a, b| sort_key_cmp(&a[c], &b[c])),
        SortOrder::Desc => rows.sort_by(|a, b| sort_key_cmp(&b[c], &a[c])),
    }
    Ok(Table::from_parts_unchecked(
        table.columns().to_vec(),
        rows,
        table.provenance().map(str::to_string),
    ))
}

/// Executes one call, producing the next table state.
pub fn apply(table: &Table, call: &OperationCall) -> Result<Table, OpError> {
    match call {
        OperationCall::AddColumn { name, body } => exec_add_column(table, name, body),
        OperationCall::SelectColumn { columns } => exec_select_column(table, columns),
        OperationCall::SelectRow(sel) => exec_select_row(table, sel),
        OperationCall::GroupBy { column } => exec_group_by(table, column),
        OperationCall::SortBy { column, order } => exec_sort_by(table, column, *order),
        OperationCall::End => Err(OpError::EndNotExecutable),
    }
}
