//! Shared test support: a naive reference implementation of the five table
//! operations, random generators for tables and calls, and scripted
//! pipelines.
#![allow(dead_code)]

use std::cmp::Ordering;
use std::sync::Arc;

use cfms::gateway::{Gateway, ScriptRecord, ScriptedProvider};
use cfms::harness::{BudgetConfig, Pipeline, RunMode};
use cfms::ops::{
    ArithOp, CmpOp, ColumnBody, Expr, Literal, OpError, OpSet, OperationCall, Predicate, RowSelector, SortOrder,
};
use cfms::planner::LoopLimits;
use cfms::table::{Table, Value};
use cfms::templates::TemplateSet;
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::Rng;
use rust_decimal::Decimal;

// ---------------------------------------------------------------------------
// Reference engine

/// Cell alphabet with hand-assigned meaning: `Some(number)` for numeric
/// cells, `None` for text, and the empty string as the empty cell.
pub const NUMERIC_CELLS: &[(&str, &str)] = &[
    ("0", "0"),
    ("1", "1"),
    ("2", "2"),
    ("10", "10"),
    ("-3", "-3"),
    ("1.5", "1.5"),
    ("1.50", "1.5"),
    ("1,000", "1000"),
];
pub const TEXT_CELLS: &[&str] = &["a", "A", "b", "x y", "Q2"];

#[derive(Debug, Clone, PartialEq)]
pub enum RefCell {
    Empty,
    Num { raw: String, value: Decimal },
    Text(String),
}

impl RefCell {
    /// Classifies an alphabet string by table lookup.
    pub fn classify(raw: &str) -> RefCell {
        if raw.is_empty() {
            return RefCell::Empty;
        }
        match NUMERIC_CELLS.iter().find(|(r, _)| *r == raw) {
            Some((_, v)) => RefCell::Num {
                raw: raw.to_string(),
                value: v.parse().unwrap(),
            },
            None => {
                assert!(TEXT_CELLS.contains(&raw), "`{raw}` is outside the test alphabet");
                RefCell::Text(raw.to_string())
            }
        }
    }

    pub fn computed(d: Decimal) -> RefCell {
        let d = d.normalize();
        let raw = if d.is_zero() { "0".to_string() } else { d.to_string() };
        RefCell::Num { raw, value: d }
    }

    pub fn render(&self) -> (char, String) {
        match self {
            RefCell::Empty => ('E', String::new()),
            RefCell::Num { raw, .. } => ('N', raw.clone()),
            RefCell::Text(t) => ('T', t.clone()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefErr {
    InvalidName,
    Duplicate,
    Length,
    Unknown,
    Type,
    DivZero,
    Overflow,
    Range,
    DupIndex,
    End,
}

pub fn categorize(e: &OpError) -> RefErr {
    match e {
        OpError::DuplicateColumn(_) => RefErr::Duplicate,
        OpError::InvalidColumnName(_) => RefErr::InvalidName,
        OpError::LengthMismatch { .. } => RefErr::Length,
        OpError::UnknownColumn { .. } => RefErr::Unknown,
        OpError::TypeError { .. } => RefErr::Type,
        OpError::DivideByZero { .. } => RefErr::DivZero,
        OpError::Overflow { .. } => RefErr::Overflow,
        OpError::IndexOutOfRange { .. } => RefErr::Range,
        OpError::DuplicateIndex(_) => RefErr::DupIndex,
        OpError::EndNotExecutable => RefErr::End,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<RefCell>>,
}

/// Column headers plus `(kind, text)` for every cell.
pub type Rendered = (Vec<String>, Vec<Vec<(char, String)>>);

fn norm(name: &str) -> String {
    name.trim().to_lowercase()
}

impl RefTable {
    pub fn from_strings(columns: &[String], rows: &[Vec<String>]) -> RefTable {
        RefTable {
            columns: columns.to_vec(),
            rows: rows
                .iter()
                .map(|r| r.iter().map(|c| RefCell::classify(c)).collect())
                .collect(),
        }
    }

    pub fn render(&self) -> Rendered {
        (
            self.columns.clone(),
            self.rows
                .iter()
                .map(|r| r.iter().map(RefCell::render).collect())
                .collect(),
        )
    }

    fn find(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| norm(c) == norm(name))
    }

    pub fn apply(&self, call: &OperationCall) -> Result<RefTable, RefErr> {
        match call {
            OperationCall::AddColumn { name, body } => self.add_column(name, body),
            OperationCall::SelectColumn { columns } => self.select_column(columns),
            OperationCall::SelectRow(sel) => self.select_row(sel),
            OperationCall::GroupBy { column } => self.group_by(column),
            OperationCall::SortBy { column, order } => self.sort_by(column, *order),
            OperationCall::End => Err(RefErr::End),
        }
    }

    fn add_column(&self, name: &str, body: &ColumnBody) -> Result<RefTable, RefErr> {
        if norm(name).is_empty() {
            return Err(RefErr::InvalidName);
        }
        if self.find(name).is_some() {
            return Err(RefErr::Duplicate);
        }
        let cells: Vec<RefCell> = match body {
            ColumnBody::Values(vs) => {
                if vs.len() != self.rows.len() {
                    return Err(RefErr::Length);
                }
                vs.iter().map(|v| RefCell::classify(v)).collect()
            }
            ColumnBody::Expr(e) => {
                let mut refs = Vec::new();
                expr_columns(e, &mut refs);
                if refs.iter().any(|c| self.find(c).is_none()) {
                    return Err(RefErr::Unknown);
                }
                let mut out = Vec::new();
                for row in &self.rows {
                    out.push(match self.eval(e, row)? {
                        Some(d) => RefCell::computed(d),
                        None => RefCell::Empty,
                    });
                }
                out
            }
        };
        let mut t = self.clone();
        t.columns.push(name.to_string());
        for (r, c) in t.rows.iter_mut().zip(cells) {
            r.push(c);
        }
        Ok(t)
    }

    fn eval(&self, e: &Expr, row: &[RefCell]) -> Result<Option<Decimal>, RefErr> {
        match e {
            Expr::Literal(d) => Ok(Some(*d)),
            Expr::Column(c) => match &row[self.find(c).ok_or(RefErr::Unknown)?] {
                RefCell::Empty => Ok(None),
                RefCell::Num { value, .. } => Ok(Some(*value)),
                RefCell::Text(_) => Err(RefErr::Type),
            },
            Expr::Neg(inner) => Ok(self.eval(inner, row)?.map(|d| -d)),
            Expr::Binary { op, lhs, rhs } => {
                let l = self.eval(lhs, row)?;
                let r = self.eval(rhs, row)?;
                let (Some(l), Some(r)) = (l, r) else { return Ok(None) };
                let v = match op {
                    ArithOp::Add => l.checked_add(r),
                    ArithOp::Sub => l.checked_sub(r),
                    ArithOp::Mul => l.checked_mul(r),
                    ArithOp::Div if r.is_zero() => return Err(RefErr::DivZero),
                    ArithOp::Div => l.checked_div(r),
                };
                v.map(Some).ok_or(RefErr::Overflow)
            }
        }
    }

    fn select_column(&self, names: &[String]) -> Result<RefTable, RefErr> {
        if names.is_empty() {
            return Err(RefErr::InvalidName);
        }
        let mut idx: Vec<usize> = Vec::new();
        for n in names {
            let i = self.find(n).ok_or(RefErr::Unknown)?;
            if idx.contains(&i) {
                return Err(RefErr::Duplicate);
            }
            idx.push(i);
        }
        Ok(RefTable {
            columns: idx.iter().map(|&i| self.columns[i].clone()).collect(),
            rows: self
                .rows
                .iter()
                .map(|r| idx.iter().map(|&i| r[i].clone()).collect())
                .collect(),
        })
    }

    fn select_row(&self, sel: &RowSelector) -> Result<RefTable, RefErr> {
        let n = self.rows.len();
        let mut keep = vec![false; n];
        match sel {
            RowSelector::Indices(ix) => {
                for &i in ix {
                    if i < 1 || i > n {
                        return Err(RefErr::Range);
                    }
                    if keep[i - 1] {
                        return Err(RefErr::DupIndex);
                    }
                    keep[i - 1] = true;
                }
            }
            RowSelector::Predicate(p) => {
                let mut refs = Vec::new();
                pred_columns(p, &mut refs);
                if refs.iter().any(|c| self.find(c).is_none()) {
                    return Err(RefErr::Unknown);
                }
                for (k, row) in keep.iter_mut().zip(&self.rows) {
                    *k = self.test(p, row)?;
                }
            }
        }
        let mut t = self.clone();
        t.rows = self
            .rows
            .iter()
            .zip(&keep)
            .filter(|(_, k)| **k)
            .map(|(r, _)| r.clone())
            .collect();
        Ok(t)
    }

    fn test(&self, p: &Predicate, row: &[RefCell]) -> Result<bool, RefErr> {
        match p {
            Predicate::And(a, b) => {
                let x = self.test(a, row)?;
                let y = self.test(b, row)?;
                Ok(x && y)
            }
            Predicate::Or(a, b) => {
                let x = self.test(a, row)?;
                let y = self.test(b, row)?;
                Ok(x || y)
            }
            Predicate::Compare { column, op, literal } => {
                let cell = &row[self.find(column).ok_or(RefErr::Unknown)?];
                let ordering = !matches!(op, CmpOp::Eq | CmpOp::Ne);
                let lit_num = match literal {
                    Literal::Number(d) => Some(*d),
                    Literal::Text(s) => match RefCell::classify(s) {
                        RefCell::Num { value, .. } => Some(value),
                        _ => None,
                    },
                };
                match cell {
                    RefCell::Empty => Ok(match (op, literal) {
                        (CmpOp::Eq, Literal::Text(s)) => s.is_empty(),
                        (CmpOp::Ne, Literal::Text(s)) => !s.is_empty(),
                        (CmpOp::Ne, Literal::Number(_)) => true,
                        _ => false,
                    }),
                    RefCell::Num { value, .. } => match lit_num {
                        Some(d) => Ok(match op {
                            CmpOp::Eq => *value == d,
                            CmpOp::Ne => *value != d,
                            CmpOp::Lt => *value < d,
                            CmpOp::Le => *value <= d,
                            CmpOp::Gt => *value > d,
                            CmpOp::Ge => *value >= d,
                        }),
                        None if ordering => Err(RefErr::Type),
                        None => Ok(*op == CmpOp::Ne),
                    },
                    RefCell::Text(t) => {
                        if ordering {
                            return Err(RefErr::Type);
                        }
                        let equal = match literal {
                            Literal::Text(s) => t.to_lowercase() == s.to_lowercase(),
                            // Text cells are never numeric, so never equal a number.
                            Literal::Number(_) => false,
                        };
                        Ok(equal == (*op == CmpOp::Eq))
                    }
                }
            }
        }
    }

    fn group_by(&self, column: &str) -> Result<RefTable, RefErr> {
        let c = self.find(column).ok_or(RefErr::Unknown)?;
        let key = |cell: &RefCell| match cell {
            RefCell::Empty => "E".to_string(),
            RefCell::Num { value, .. } => format!("N{}", value.normalize()),
            RefCell::Text(t) => format!("T{}", t.to_lowercase()),
        };
        let mut groups: Vec<(String, RefCell, u64)> = Vec::new();
        for row in &self.rows {
            let k = key(&row[c]);
            match groups.iter_mut().find(|g| g.0 == k) {
                Some(g) => g.2 += 1,
                None => groups.push((k, row[c].clone(), 1)),
            }
        }
        let count = if norm(&self.columns[c]) == "count" { "Group_Count" } else { "Count" };
        Ok(RefTable {
            columns: vec![self.columns[c].clone(), count.to_string()],
            rows: groups
                .into_iter()
                .map(|(_, v, n)| vec![v, RefCell::computed(Decimal::from(n))])
                .collect(),
        })
    }

    fn sort_by(&self, column: &str, order: SortOrder) -> Result<RefTable, RefErr> {
        let c = self.find(column).ok_or(RefErr::Unknown)?;
        fn cmp(a: &RefCell, b: &RefCell) -> Ordering {
            match (a, b) {
                (RefCell::Empty, RefCell::Empty) => Ordering::Equal,
                (RefCell::Empty, _) => Ordering::Less,
                (_, RefCell::Empty) => Ordering::Greater,
                (RefCell::Num { value: x, .. }, RefCell::Num { value: y, .. }) => x.cmp(y),
                (RefCell::Num { .. }, RefCell::Text(_)) => Ordering::Less,
                (RefCell::Text(_), RefCell::Num { .. }) => Ordering::Greater,
                (RefCell::Text(x), RefCell::Text(y)) => x.to_lowercase().cmp(&y.to_lowercase()),
            }
        }
        // Insertion sort: stable by construction.
        let mut rows: Vec<Vec<RefCell>> = Vec::new();
        for row in &self.rows {
            let pos = rows
                .iter()
                .position(|r| {
                    let o = cmp(&row[c], &r[c]);
                    match order {
                        SortOrder::Asc => o == Ordering::Less,
                        SortOrder::Desc => o == Ordering::Greater,
                    }
                })
                .unwrap_or(rows.len());
            rows.insert(pos, row.clone());
        }
        Ok(RefTable {
            columns: self.columns.clone(),
            rows,
        })
    }
}

fn expr_columns(e: &Expr, out: &mut Vec<String>) {
    match e {
        Expr::Column(c) => out.push(c.clone()),
        Expr::Literal(_) => {}
        Expr::Neg(i) => expr_columns(i, out),
        Expr::Binary { lhs, rhs, .. } => {
            expr_columns(lhs, out);
            expr_columns(rhs, out);
        }
    }
}

fn pred_columns(p: &Predicate, out: &mut Vec<String>) {
    match p {
        Predicate::Compare { column, .. } => out.push(column.clone()),
        Predicate::And(a, b) | Predicate::Or(a, b) => {
            pred_columns(a, out);
            pred_columns(b, out);
        }
    }
}

pub fn render_engine(t: &Table) -> Rendered {
    (
        t.columns().to_vec(),
        t.rows()
            .iter()
            .map(|r| {
                r.iter()
                    .map(|v| {
                        let kind = match v {
                            Value::Empty => 'E',
                            Value::Number(_) => 'N',
                            Value::Text(_) => 'T',
                        };
                        (kind, v.as_str().to_string())
                    })
                    .collect()
            })
            .collect(),
    )
}

// ---------------------------------------------------------------------------
// Generators over the test alphabet

pub const COLUMN_POOL: &[&str] = &["Alpha", "Beta", "Count", "Delta"];

pub fn random_cell(rng: &mut StdRng, numeric_bias: f64) -> String {
    if rng.gen_bool(0.08) {
        String::new()
    } else if rng.gen_bool(numeric_bias) {
        NUMERIC_CELLS.choose(rng).unwrap().0.to_string()
    } else {
        TEXT_CELLS.choose(rng).unwrap().to_string()
    }
}

/// Up to 5 rows by 4 columns. Each column leans numeric, textual or mixed.
pub fn random_grid(rng: &mut StdRng) -> (Vec<String>, Vec<Vec<String>>) {
    let ncols = rng.gen_range(1..=4);
    let nrows = rng.gen_range(0..=5);
    let mut names: Vec<String> = COLUMN_POOL.iter().map(|s| s.to_string()).collect();
    names.shuffle(rng);
    names.truncate(ncols);
    let bias: Vec<f64> = (0..ncols).map(|_| *[0.97, 0.5, 0.05].choose(rng).unwrap()).collect();
    let rows = (0..nrows)
        .map(|_| bias.iter().map(|&b| random_cell(rng, b)).collect())
        .collect();
    (names, rows)
}

/// A reference to a column of `columns` in random letter case, or an
/// unknown name.
pub fn column_ref(rng: &mut StdRng, columns: &[String]) -> String {
    if rng.gen_bool(0.06) {
        return "Zeta".to_string();
    }
    let c = columns.choose(rng).unwrap();
    match rng.gen_range(0..3) {
        0 => c.clone(),
        1 => c.to_lowercase(),
        _ => c.to_uppercase(),
    }
}

const LITERALS: &[&str] = &["0", "1", "2", "-1", "0.5", "3", "1.5", "10"];

fn random_decimal(rng: &mut StdRng) -> Decimal {
    LITERALS.choose(rng).unwrap().parse().unwrap()
}

pub fn random_expr(rng: &mut StdRng, columns: &[String], depth: u32) -> Expr {
    if depth == 0 || rng.gen_bool(0.4) {
        return if rng.gen_bool(0.7) {
            Expr::Column(column_ref(rng, columns))
        } else {
            Expr::Literal(random_decimal(rng))
        };
    }
    if rng.gen_bool(0.15) {
        return Expr::Neg(Box::new(random_expr(rng, columns, depth - 1)));
    }
    let op = *[ArithOp::Add, ArithOp::Sub, ArithOp::Mul, ArithOp::Div].choose(rng).unwrap();
    Expr::binary(op, random_expr(rng, columns, depth - 1), random_expr(rng, columns, depth - 1))
}

pub fn random_predicate(rng: &mut StdRng, columns: &[String], depth: u32) -> Predicate {
    if depth == 0 || rng.gen_bool(0.6) {
        let op = *[CmpOp::Eq, CmpOp::Ne, CmpOp::Lt, CmpOp::Le, CmpOp::Gt, CmpOp::Ge]
            .choose(rng)
            .unwrap();
        let literal = if rng.gen_bool(0.5) {
            Literal::Number(random_decimal(rng))
        } else {
            Literal::Text(random_cell(rng, 0.4))
        };
        return Predicate::compare(column_ref(rng, columns), op, literal);
    }
    let a = Box::new(random_predicate(rng, columns, depth - 1));
    let b = Box::new(random_predicate(rng, columns, depth - 1));
    if rng.gen_bool(0.5) {
        Predicate::And(a, b)
    } else {
        Predicate::Or(a, b)
    }
}

/// Any operation (never `<END>`) against a table with `columns` and `rows`.
pub fn random_call(rng: &mut StdRng, columns: &[String], rows: usize) -> OperationCall {
    match rng.gen_range(0..5) {
        0 => {
            let name = match rng.gen_range(0..10) {
                0 => column_ref(rng, columns),
                1 => "  ".to_string(),
                _ => format!("New{}", rng.gen_range(0..3)),
            };
            let body = if rng.gen_bool(0.35) {
                let len = if rng.gen_bool(0.85) { rows } else { rng.gen_range(0..=6) };
                ColumnBody::Values((0..len).map(|_| random_cell(rng, 0.5)).collect())
            } else {
                ColumnBody::Expr(random_expr(rng, columns, 2))
            };
            OperationCall::AddColumn { name, body }
        }
        1 => {
            let n = rng.gen_range(0..=columns.len().min(3) + 1);
            OperationCall::SelectColumn {
                columns: (0..n).map(|_| column_ref(rng, columns)).collect(),
            }
        }
        2 => {
            if rng.gen_bool(0.35) {
                let n = rng.gen_range(0..=4);
                OperationCall::SelectRow(RowSelector::Indices(
                    (0..n).map(|_| rng.gen_range(0..=rows + 1)).collect(),
                ))
            } else {
                OperationCall::SelectRow(RowSelector::Predicate(random_predicate(rng, columns, 1)))
            }
        }
        3 => OperationCall::GroupBy {
            column: column_ref(rng, columns),
        },
        _ => OperationCall::SortBy {
            column: column_ref(rng, columns),
            order: if rng.gen_bool(0.5) { SortOrder::Asc } else { SortOrder::Desc },
        },
    }
}

/// A call that succeeds on `table` when one exists among a few attempts.
pub fn valid_call(rng: &mut StdRng, table: &Table) -> Option<OperationCall> {
    for _ in 0..40 {
        let call = random_call(rng, table.columns(), table.row_count());
        if cfms::ops::apply(table, &call).is_ok() {
            return Some(call);
        }
    }
    None
}

// ---------------------------------------------------------------------------
// Scripted pipelines

pub fn scripted_pipeline(records: Vec<ScriptRecord>, mode: RunMode, allowed: OpSet) -> Pipeline {
    let provider = Arc::new(ScriptedProvider::new(records, false));
    Pipeline {
        gateway: Gateway::uniform(provider, "replay"),
        templates: TemplateSet::builtin(),
        mode,
        allowed,
        limits: LoopLimits::default(),
        budget: BudgetConfig::default(),
        workers: 2,
        split: None,
    }
}

// ---------------------------------------------------------------------------
// Oracle comparison

/// Calls compared in one case, and how many of them succeeded.
#[derive(Debug, Default, Clone, Copy)]
pub struct OracleTally {
    pub compared: usize,
    pub succeeded: usize,
}

/// One randomized case: a table and a chain of up to three calls, each
/// checked against the reference.
pub fn oracle_case(seed: u64) -> Result<OracleTally, String> {
    use rand::SeedableRng;
    let mut rng = StdRng::seed_from_u64(seed);
    let (cols, rows) = random_grid(&mut rng);
    let mut engine = Table::from_strings(&cols, &rows).map_err(|e| format!("seed {seed}: {e}"))?;
    let mut reference = RefTable::from_strings(&cols, &rows);
    if render_engine(&engine) != reference.render() {
        return Err(format!("seed {seed}: initial tables differ"));
    }
    let steps = rng.gen_range(1..=3);
    let mut tally = OracleTally::default();
    for step in 0..steps {
        tally.compared += 1;
        let call = random_call(&mut rng, engine.columns(), engine.row_count());
        let got = cfms::ops::apply(&engine, &call);
        let want = reference.apply(&call);
        match (got, want) {
            (Ok(g), Ok(w)) => {
                if render_engine(&g) != w.render() {
                    return Err(format!(
                        "seed {seed} step {step}: {call}\nengine:    {:?}\nreference: {:?}",
                        render_engine(&g),
                        w.render()
                    ));
                }
                engine = g;
                reference = w;
                tally.succeeded += 1;
            }
            (Err(g), Err(w)) if categorize(&g) == w => return Ok(tally),
            (g, w) => {
                return Err(format!(
                    "seed {seed} step {step}: {call}\nengine:    {:?}\nreference: {:?}",
                    g.map(|t| render_engine(&t)),
                    w.map(|t| t.render())
                ))
            }
        }
    }
    Ok(tally)
}

// ---------------------------------------------------------------------------
// Arbitrary ASTs for parser laws

const NAME_POOL: &[&str] = &[
    "Revenue",
    "R&D",
    "Total Sales",
    "Efficiency_Ratio",
    "and",
    "Desc",
    "x1",
    "_y",
    "año",
    "Q2 (m)",
    "2019",
    "a`b",
    "rate %",
    "Count",
    "it's",
];

const STRING_POOL: &[&str] = &["Q2", "", "a \"quoted\" word", "back\\slash", "naïve", "x, y", "(", "AND", "1,000", " "];

fn arb_name(rng: &mut StdRng) -> String {
    NAME_POOL.choose(rng).unwrap().to_string()
}

fn arb_string(rng: &mut StdRng) -> String {
    STRING_POOL.choose(rng).unwrap().to_string()
}

fn arb_decimal(rng: &mut StdRng) -> Decimal {
    let mantissa: i64 = rng.gen_range(-1_000_000..=1_000_000);
    Decimal::new(mantissa, rng.gen_range(0..=4))
}

fn arb_expr(rng: &mut StdRng, depth: u32) -> Expr {
    if depth == 0 || rng.gen_bool(0.35) {
        return if rng.gen_bool(0.6) {
            Expr::Column(arb_name(rng))
        } else {
            Expr::Literal(arb_decimal(rng))
        };
    }
    if rng.gen_bool(0.15) {
        return Expr::Neg(Box::new(arb_expr(rng, depth - 1)));
    }
    let op = *[ArithOp::Add, ArithOp::Sub, ArithOp::Mul, ArithOp::Div].choose(rng).unwrap();
    Expr::binary(op, arb_expr(rng, depth - 1), arb_expr(rng, depth - 1))
}

fn arb_predicate(rng: &mut StdRng, depth: u32) -> Predicate {
    if depth == 0 || rng.gen_bool(0.4) {
        let op = *[CmpOp::Eq, CmpOp::Ne, CmpOp::Lt, CmpOp::Le, CmpOp::Gt, CmpOp::Ge]
            .choose(rng)
            .unwrap();
        let literal = if rng.gen_bool(0.5) {
            Literal::Number(arb_decimal(rng))
        } else {
            Literal::Text(arb_string(rng))
        };
        return Predicate::compare(arb_name(rng), op, literal);
    }
    let a = Box::new(arb_predicate(rng, depth - 1));
    let b = Box::new(arb_predicate(rng, depth - 1));
    if rng.gen_bool(0.5) {
        Predicate::And(a, b)
    } else {
        Predicate::Or(a, b)
    }
}

/// A random well-formed call, `<END>` included.
pub fn arb_call(rng: &mut StdRng) -> OperationCall {
    match rng.gen_range(0..6) {
        0 => OperationCall::AddColumn {
            name: arb_name(rng),
            body: if rng.gen_bool(0.3) {
                ColumnBody::Values((0..rng.gen_range(1..=4)).map(|_| arb_string(rng)).collect())
            } else {
                ColumnBody::Expr(arb_expr(rng, 3))
            },
        },
        1 => OperationCall::SelectColumn {
            columns: (0..rng.gen_range(1..=4)).map(|_| arb_name(rng)).collect(),
        },
        2 => OperationCall::SelectRow(if rng.gen_bool(0.3) {
            RowSelector::Indices((0..rng.gen_range(1..=5)).map(|_| rng.gen_range(1..=60)).collect())
        } else {
            RowSelector::Predicate(arb_predicate(rng, 3))
        }),
        3 => OperationCall::GroupBy { column: arb_name(rng) },
        4 => OperationCall::SortBy {
            column: arb_name(rng),
            order: if rng.gen_bool(0.5) { SortOrder::Asc } else { SortOrder::Desc },
        },
        _ => OperationCall::End,
    }
}

/// Random input for the totality law: raw bytes (lossily decoded), or a
/// well-formed call with a few bytes flipped, cut or spliced.
pub fn arb_parser_input(rng: &mut StdRng) -> String {
    if rng.gen_bool(0.5) {
        let n = rng.gen_range(0..80);
        let bytes: Vec<u8> = (0..n).map(|_| rng.gen()).collect();
        return String::from_utf8_lossy(&bytes).into_owned();
    }
    let mut bytes = cfms::ops::format_operation_call(&arb_call(rng)).into_bytes();
    for _ in 0..rng.gen_range(1..=4) {
        if bytes.is_empty() {
            break;
        }
        let i = rng.gen_range(0..bytes.len());
        match rng.gen_range(0..3) {
            0 => bytes[i] = *b"()[],\"`-<>=!&|".choose(rng).unwrap(),
            1 => bytes.truncate(i),
            _ => {
                let extra = *b"(((((((((".choose(rng).unwrap();
                bytes.splice(i..i, std::iter::repeat_n(extra, rng.gen_range(1..200)));
            }
        }
    }
    String::from_utf8_lossy(&bytes).into_owned()
}

// ---------------------------------------------------------------------------
// State-fold runs

/// A fine-stage run over a random table with a scripted planner that plays
/// a chain of valid calls, sprinkled with unparseable replies, then `<END>`.
/// Checks that the final table equals the left fold of `apply` over the
/// recorded history, compared as serialized TSV. Returns the history length.
pub fn fold_case(seed: u64) -> Result<usize, String> {
    use cfms::gateway::{BudgetCounts, ModelRole, QueryBudget, Session};
    use cfms::knowledge::KnowledgeTuple;
    use cfms::planner::{run_fine_stage, PlannerContext};
    use cfms::table::{serialize_table, SerializeStyle};
    use rand::SeedableRng;

    let mut rng = StdRng::seed_from_u64(seed);
    let (cols, rows) = loop {
        let (c, r) = random_grid(&mut rng);
        if !r.is_empty() {
            break (c, r);
        }
    };
    let t0 = Table::from_strings(&cols, &rows).unwrap();
    let mut replies = Vec::new();
    let mut t = t0.clone();
    for _ in 0..rng.gen_range(2..=6) {
        if rng.gen_bool(0.2) {
            replies.push("I would like to look at the table first.".to_string());
        }
        let Some(call) = valid_call(&mut rng, &t) else { break };
        t = cfms::ops::apply(&t, &call).unwrap();
        replies.push(cfms::ops::format_operation_call(&call));
        if t.row_count() == 0 {
            break;
        }
    }
    replies.push("<END>".to_string());
    let records = replies
        .iter()
        .enumerate()
        .map(|(i, r)| ScriptRecord::ordinal(ModelRole::Planner, i + 1, r.clone()))
        .collect();
    let gateway = Gateway::uniform(Arc::new(ScriptedProvider::new(records, false)), "replay");
    let budget = QueryBudget::new(BudgetCounts { coarse: 4, fine: 10, final_: 1 }, true);
    let session = Session::new(&gateway, &budget);
    let knowledge = KnowledgeTuple::unavailable();
    let templates = TemplateSet::builtin();
    let ctx = PlannerContext {
        question: "What is in the table?",
        knowledge: &knowledge,
        templates: &templates,
        allowed: OpSet::all(),
    };
    let outcome = run_fine_stage(&t0, &ctx, &session, LoopLimits::default());
    let folded = outcome
        .history
        .steps()
        .iter()
        .try_fold(t0.clone(), |acc, call| cfms::ops::apply(&acc, call))
        .map_err(|e| format!("seed {seed}: replaying history failed: {e}"))?;
    let (a, b) = (
        serialize_table(&folded, SerializeStyle::Tsv),
        serialize_table(&outcome.table, SerializeStyle::Tsv),
    );
    if a != b {
        return Err(format!("seed {seed}: fold differs from final state\n{a}\n---\n{b}"));
    }
    Ok(outcome.history.len())
}
