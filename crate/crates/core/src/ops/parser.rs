//! Recursive-descent parser for operation calls.
//!
//! ```text
//! call      := "<END>"
//!            | "f_add_column"    "(" name "," ( values | expr ) ")"
//!            | "f_select_column" "(" "[" name ("," name)* "]" ")"
//!            | "f_select_row"    "(" ( "[" int ("," int)* "]" | pred ) ")"
//!            | "f_group_by"      "(" name ")"
//!            | "f_sort_by"       "(" name "," ("asc" | "desc") ")"
//! expr      := term (("+" | "-") term)*
//! term      := unary (("*" | "/") unary)*
//! unary     := "-" unary | number | colref | "(" expr ")"
//! pred      := conj ("OR" conj)*
//! conj      := atom ("AND" atom)*
//! atom      := "(" pred ")" | colref cmp literal
//! ```
//!
//! Names are bare words, `` `backticked` `` or double-quoted. Whitespace is
//! insignificant between tokens. Surrounding prose is skipped: the first
//! complete call in the text wins.

use std::collections::BTreeSet;
use std::fmt;

use rust_decimal::Decimal;

use super::ast::*;
use crate::table::parse_decimal;

const MAX_DEPTH: usize = 64;

/// Where parsing stopped and what would have been accepted there.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseFailure {
    pub position: usize,
    pub expected: BTreeSet<String>,
}

impl fmt::Display for ParseFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let expected: Vec<&str> = self.expected.iter().map(String::as_str).collect();
        write!(
            f,
            "no valid operation call at byte {}; expected one of: {}",
            self.position,
            expected.join(", ")
        )
    }
}

impl std::error::Error for ParseFailure {}

pub fn parse_operation_call(text: &str) -> Result<OperationCall, ParseFailure> {
    parse_operation_call_with(text, OpSet::all())
}

/// Parses the first complete call to an operation in `allowed` (or `<END>`).
/// Calls to operations outside `allowed` are not part of the grammar.
pub fn parse_operation_call_with(text: &str, allowed: OpSet) -> Result<OperationCall, ParseFailure> {
    let mut first_failure: Option<ParseFailure> = None;
    for (start, kind) in candidates(text, allowed) {
        let mut p = Parser::new(text, start);
        let result = match kind {
            None => {
                p.pos += "<END>".len();
                Ok(OperationCall::End)
            }
            Some(kind) => p.call_body(kind),
        };
        match result {
            Ok(call) => return Ok(call),
            Err(()) => {
                if first_failure.is_none() {
                    first_failure = Some(p.failure());
                }
            }
        }
    }
    Err(first_failure.unwrap_or_else(|| ParseFailure {
        position: 0,
        expected: allowed
            .iter()
            .map(|k| k.function_name().to_string())
            .chain(std::iter::once("<END>".to_string()))
            .collect(),
    }))
}

/// Byte offsets where a call could start: `<END>` or an allowed function name.
fn candidates(text: &str, allowed: OpSet) -> Vec<(usize, Option<OpKind>)> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    for (i, _) in text.char_indices() {
        let rest = &bytes[i..];
        if rest.len() >= 5 && rest[..5].eq_ignore_ascii_case(b"<END>") {
            out.push((i, None));
            continue;
        }
        if !(rest.len() > 2 && rest[..2].eq_ignore_ascii_case(b"f_")) {
            continue;
        }
        let prev_is_word = text[..i]
            .chars()
            .next_back()
            .is_some_and(|c| c.is_alphanumeric() || c == '_');
        if prev_is_word {
            continue;
        }
        for kind in allowed.iter() {
            let name = kind.function_name().as_bytes();
            if rest.len() >= name.len()
                && rest[..name.len()].eq_ignore_ascii_case(name)
                && !rest
                    .get(name.len())
                    .is_some_and(|b| b.is_ascii_alphanumeric() || *b == b'_')
            {
                out.push((i, Some(kind)));
                break;
            }
        }
    }
    out
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
    depth: usize,
    fail_pos: usize,
    fail_expected: BTreeSet<String>,
}

type PResult<T> = Result<T, ()>;

impl<'a> Parser<'a> {
    fn new(src: &'a str, pos: usize) -> Self {
        Parser {
            src,
            pos,
            depth: 0,
            fail_pos: pos,
            fail_expected: BTreeSet::new(),
        }
    }

    fn failure(&self) -> ParseFailure {
        ParseFailure {
            position: self.fail_pos,
            expected: self.fail_expected.clone(),
        }
    }

    fn expected<T>(&mut self, what: &str) -> PResult<T> {
        self.note(what);
        Err(())
    }

    fn note(&mut self, what: &str) {
        if self.pos > self.fail_pos {
            self.fail_pos = self.pos;
            self.fail_expected.clear();
        }
        if self.pos == self.fail_pos {
            self.fail_expected.insert(what.to_string());
        }
    }

    fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    fn peek(&self) -> Option<char> {
        self.rest().chars().next()
    }

    fn skip_ws(&mut self) {
        let trimmed = self.rest().trim_start();
        self.pos = self.src.len() - trimmed.len();
    }

    /// Consumes `tok` after optional whitespace.
    fn eat(&mut self, tok: &str) -> bool {
        self.skip_ws();
        if self.rest().starts_with(tok) {
            self.pos += tok.len();
            true
        } else {
            self.note(tok);
            false
        }
    }

    fn expect(&mut self, tok: &str) -> PResult<()> {
        if self.eat(tok) {
            Ok(())
        } else {
            Err(())
        }
    }

    fn enter(&mut self) -> PResult<()> {
        self.depth += 1;
        if self.depth > MAX_DEPTH {
            return self.expected("shallower nesting");
        }
        Ok(())
    }

    fn leave(&mut self) {
        self.depth -= 1;
    }

    fn call_body(&mut self, kind: OpKind) -> PResult<OperationCall> {
        self.pos += kind.function_name().len();
        self.expect("(")?;
        let call = match kind {
            OpKind::AddColumn => {
                let name = self.call_name()?;
                self.expect(",")?;
                self.skip_ws();
                let body = if self.peek() == Some('[') {
                    ColumnBody::Values(self.value_list()?)
                } else {
                    ColumnBody::Expr(self.expr()?)
                };
                OperationCall::AddColumn { name, body }
            }
            OpKind::SelectColumn => {
                self.expect("[")?;
                let mut columns = vec![self.call_name()?];
                while self.eat(",") {
                    columns.push(self.call_name()?);
                }
                self.expect("]")?;
                OperationCall::SelectColumn { columns }
            }
            OpKind::SelectRow => {
                self.skip_ws();
                if self.peek() == Some('[') {
                    self.pos += 1;
                    let mut ix = vec![self.index()?];
                    while self.eat(",") {
                        ix.push(self.index()?);
                    }
                    self.expect("]")?;
                    OperationCall::SelectRow(RowSelector::Indices(ix))
                } else {
                    OperationCall::SelectRow(RowSelector::Predicate(self.predicate()?))
                }
            }
            OpKind::GroupBy => OperationCall::GroupBy {
                column: self.call_name()?,
            },
            OpKind::SortBy => {
                let column = self.call_name()?;
                self.expect(",")?;
                self.skip_ws();
                let word: String = self
                    .rest()
                    .chars()
                    .take_while(|c| c.is_ascii_alphabetic())
                    .collect();
                let order = match word.to_ascii_lowercase().as_str() {
                    "asc" => SortOrder::Asc,
                    "desc" => SortOrder::Desc,
                    _ => {
                        self.note("asc");
                        return self.expected("desc");
                    }
                };
                self.pos += word.len();
                OperationCall::SortBy { column, order }
            }
        };
        self.expect(")")?;
        Ok(call)
    }

    fn index(&mut self) -> PResult<usize> {
        self.skip_ws();
        let digits: &str = {
            let r = self.rest();
            &r[..r.find(|c: char| !c.is_ascii_digit()).unwrap_or(r.len())]
        };
        match digits.parse::<usize>() {
            Ok(n) if !digits.is_empty() => {
                self.pos += digits.len();
                Ok(n)
            }
            _ => self.expected("row index"),
        }
    }

    /// A quoted string in `"..."`, `'...'` or backticks, if one starts here.
    fn quoted(&mut self) -> PResult<Option<String>> {
        self.skip_ws();
        let Some(open) = self.peek() else {
            return Ok(None);
        };
        if !matches!(open, '"' | '\'' | '`') {
            return Ok(None);
        }
        let start = self.pos;
        let mut out = String::new();
        let mut chars = self.rest().char_indices().skip(1).peekable();
        while let Some((i, c)) = chars.next() {
            if open == '`' {
                if c == '`' {
                    if chars.peek().map(|(_, n)| *n) == Some('`') {
                        chars.next();
                        out.push('`');
                        continue;
                    }
                    self.pos = start + i + 1;
                    return Ok(Some(out));
                }
                out.push(c);
                continue;
            }
            match c {
                '\\' => match chars.next() {
                    Some((_, e)) if e == open || e == '\\' => out.push(e),
                    Some((_, e)) => {
                        out.push('\\');
                        out.push(e);
                    }
                    None => break,
                },
                c if c == open => {
                    self.pos = start + i + 1;
                    return Ok(Some(out));
                }
                c => out.push(c),
            }
        }
        self.pos = self.src.len();
        self.expected(&format!("closing {open}"))
    }

    /// Column name in argument position: quoted, or the raw text up to the
    /// next delimiter.
    fn call_name(&mut self) -> PResult<String> {
        if let Some(q) = self.quoted()? {
            return Ok(q);
        }
        let r = self.rest();
        let end = r
            .find([',', '(', ')', '[', ']', '\n', '\r'])
            .unwrap_or(r.len());
        let name = r[..end].trim_end();
        if name.is_empty() {
            return self.expected("column name");
        }
        self.pos += name.len();
        Ok(name.to_string())
    }

    fn value_list(&mut self) -> PResult<Vec<String>> {
        self.expect("[")?;
        let mut values = Vec::new();
        if self.eat("]") {
            return Ok(values);
        }
        loop {
            match self.quoted()? {
                Some(q) => values.push(q),
                None => {
                    let r = self.rest();
                    let end = r
                        .find([',', ']', '\n', '\r'])
                        .unwrap_or(r.len());
                    values.push(r[..end].trim_end().to_string());
                    self.pos += end;
                }
            }
            if self.eat(",") {
                continue;
            }
            self.expect("]")?;
            return Ok(values);
        }
    }

    /// Words joined by whitespace, taken as the exact source span.
    fn bare_words(&mut self, allow_digits: bool, stop_at_keywords: bool) -> Option<String> {
        self.skip_ws();
        let start = self.pos;
        let mut end = start;
                loop {
            let save = self.pos;
            self.skip_ws();
            let r = self.rest();
            let Some(c) = r.chars().next() else { break };
            let starts = is_word_start(c) || (allow_digits && c.is_ascii_digit());
            if !starts {
                self.pos = save;
                break;
            }
            let len = r.find(|c: char| !is_word_char(c)).unwrap_or(r.len());
            let word = &r[..len];
            if stop_at_keywords
                && (word.eq_ignore_ascii_case("and") || word.eq_ignore_ascii_case("or"))
            {
                self.pos = save;
                break;
            }
            self.pos += len;
            end = self.pos;
        }
        self.pos = end.max(start);
        if end > start {
            Some(self.src[start..end].to_string())
        } else {
            None
        }
    }

    fn colref(&mut self, stop_at_keywords: bool) -> PResult<String> {
        self.skip_ws();
        if matches!(self.peek(), Some('`' | '"')) {
            return Ok(self.quoted()?.expect("quote checked"));
        }
        match self.bare_words(false, stop_at_keywords) {
            Some(w) => Ok(w),
            None => self.expected("column name"),
        }
    }

    fn number(&mut self, allow_sign: bool) -> Option<Decimal> {
        self.skip_ws();
        let r = self.rest();
        let b = r.as_bytes();
        let mut i = 0;
        if allow_sign && i < b.len() && b[i] == b'-' {
            i += 1;
            while i < b.len() && b[i] == b' ' {
                i += 1;
            }
        }
        let digits_start = i;
        while i < b.len() && (b[i].is_ascii_digit() || b[i] == b'.') {
            i += 1;
        }
        if i == digits_start {
            return None;
        }
        let text: String = r[..i].chars().filter(|c| *c != ' ').collect();
        let d = parse_decimal(&text)?;
        self.pos += i;
        Some(d)
    }

    fn expr(&mut self) -> PResult<Expr> {
        self.enter()?;
        let mut lhs = self.term()?;
        loop {
            let op = if self.eat("+") {
                ArithOp::Add
            } else if self.eat("-") {
                ArithOp::Sub
            } else {
                break;
            };
            let rhs = self.term()?;
            lhs = Expr::binary(op, lhs, rhs);
        }
        self.leave();
        Ok(lhs)
    }

    fn term(&mut self) -> PResult<Expr> {
        let mut lhs = self.unary()?;
        loop {
            let op = if self.eat("*") || self.eat("×") {
                ArithOp::Mul
            } else if self.eat("/") || self.eat("÷") {
                ArithOp::Div
            } else {
                break;
            };
            let rhs = self.unary()?;
            lhs = Expr::binary(op, lhs, rhs);
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> PResult<Expr> {
        self.enter()?;
        self.skip_ws();
        let out = if self.rest().starts_with('-') {
            if let Some(d) = self.number(true) {
                Expr::Literal(d)
            } else {
                self.pos += 1;
                Expr::Neg(Box::new(self.unary()?))
            }
        } else if let Some(d) = self.number(false) {
            Expr::Literal(d)
        } else if self.eat("(") {
            let e = self.expr()?;
            self.expect(")")?;
            e
        } else {
            self.note("number");
            self.note("(");
            Expr::Column(self.colref(false)?)
        };
        self.leave();
        Ok(out)
    }

    fn keyword(&mut self, word: &str, symbol: &str) -> bool {
        self.skip_ws();
        let r = self.rest();
        if r.len() >= word.len()
            && r[..word.len()].eq_ignore_ascii_case(word)
            && !r[word.len()..].chars().next().is_some_and(is_word_char)
        {
            self.pos += word.len();
            return true;
        }
        if self.eat(symbol) {
            return true;
        }
        self.note(&word.to_ascii_uppercase());
        false
    }

    fn predicate(&mut self) -> PResult<Predicate> {
        self.enter()?;
        let mut lhs = self.conjunction()?;
        while self.keyword("or", "||") {
            let rhs = self.conjunction()?;
            lhs = Predicate::Or(Box::new(lhs), Box::new(rhs));
        }
        self.leave();
        Ok(lhs)
    }

    fn conjunction(&mut self) -> PResult<Predicate> {
        let mut lhs = self.atom()?;
        while self.keyword("and", "&&") {
            let rhs = self.atom()?;
            lhs = Predicate::And(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn atom(&mut self) -> PResult<Predicate> {
        if self.eat("(") {
            let p = self.predicate()?;
            self.expect(")")?;
            return Ok(p);
        }
        let column = self.colref(true)?;
        let op = self.cmp_op()?;
        let literal = self.literal()?;
        Ok(Predicate::Compare {
            column,
            op,
            literal,
        })
    }

    fn cmp_op(&mut self) -> PResult<CmpOp> {
        const OPS: [(&str, CmpOp); 8] = [
            ("==", CmpOp::Eq),
            ("!=", CmpOp::Ne),
            ("<>", CmpOp::Ne),
            ("<=", CmpOp::Le),
            (">=", CmpOp::Ge),
            ("<", CmpOp::Lt),
            (">", CmpOp::Gt),
            ("=", CmpOp::Eq),
        ];
        self.skip_ws();
        for (tok, op) in OPS {
            if self.rest().starts_with(tok) {
                self.pos += tok.len();
                return Ok(op);
            }
        }
        self.note("comparison operator");
        Err(())
    }

    fn literal(&mut self) -> PResult<Literal> {
        self.skip_ws();
        if matches!(self.peek(), Some('"' | '\'')) {
            return Ok(Literal::Text(self.quoted()?.expect("quote checked")));
        }
        let save = self.pos;
        if let Some(d) = self.number(true) {
            // A number followed by more words is text, e.g. `66 West`.
            let after = self.pos;
            self.skip_ws();
            if !self.peek().is_some_and(is_word_start) || self.at_keyword() {
                self.pos = after;
                return Ok(Literal::Number(d));
            }
            self.pos = save;
        }
        match self.bare_words(true, true) {
            Some(w) => Ok(Literal::Text(w)),
            None => self.expected("literal"),
        }
    }

    fn at_keyword(&self) -> bool {
        let r = self.rest();
        ["and", "or"].iter().any(|k| {
            r.len() >= k.len()
                && r[..k.len()].eq_ignore_ascii_case(k)
                && !r[k.len()..].chars().next().is_some_and(is_word_char)
        })
    }
}
