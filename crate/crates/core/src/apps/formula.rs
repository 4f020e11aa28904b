//! Spreadsheet formula language.
//!
//! Grammar (left-associative, comparisons loosest, `* /` tighter than `+ -`):
//!
//! ```text
//! formula    := '=' comparison EOF
//! comparison := additive (('=' | '<' | '>' | '<=' | '>=') additive)*
//! additive   := term (('+' | '-') term)*
//! term       := primary (('*' | '/') primary)*
//! primary    := NUMBER | STRING | TRUE | FALSE | ref
//!             | IF '(' comparison ',' comparison ',' comparison ')'
//!             | (SUM | AVERAGE) '(' range ')'
//!             | '(' comparison ')'
//! ref        := [sheet '!'] ADDR
//! range      := ref [':' ADDR]
//! sheet      := IDENT | "'" quoted "'"
//! ```
//!
//! Evaluation rules: an empty cell reads as `0` next to numbers and `""`
//! next to text; `IF` only evaluates the chosen branch; `SUM`/`AVERAGE`
//! skip text and boolean cells; arithmetic results are canonicalized to 12
//! significant digits and comparisons act on canonical values.

use std::collections::{HashMap, HashSet};
use std::fmt;

use thiserror::Error;

use super::scalar::{canonical_number, Scalar};
use super::workbook::{CellAddr, CellContent, WorkbookState};

/// Maximum number of cells a single range may cover.
pub const MAX_RANGE_CELLS: u64 = 100_000;

#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Number(f64),
    Text(String),
    Bool(bool),
    Ref(CellRef),
    If(Box<Expr>, Box<Expr>, Box<Expr>),
    Sum(RangeRef),
    Average(RangeRef),
    Binary(BinOp, Box<Expr>, Box<Expr>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Gt,
    Lt,
    Ge,
    Le,
    Eq,
}

impl BinOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Gt => ">",
            BinOp::Lt => "<",
            BinOp::Ge => ">=",
            BinOp::Le => "<=",
            BinOp::Eq => "=",
        }
    }

    pub fn is_comparison(self) -> bool {
        matches!(
            self,
            BinOp::Gt | BinOp::Lt | BinOp::Ge | BinOp::Le | BinOp::Eq
        )
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct CellRef {
    pub sheet: Option<String>,
    pub addr: CellAddr,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RangeRef {
    pub sheet: Option<String>,
    pub start: CellAddr,
    pub end: CellAddr,
}

impl CellRef {
    /// `C2` or `Sales!C2`.
    pub fn label(&self) -> String {
        match &self.sheet {
            Some(s) => format!("{s}!{}", self.addr),
            None => self.addr.to_string(),
        }
    }
}

impl RangeRef {
    /// Parses an unqualified `A1:B3` range.
    pub fn parse_plain(raw: &str) -> Option<RangeRef> {
        let (a, b) = raw.split_once(':')?;
        let start = CellAddr::parse(a.trim())?;
        let end = CellAddr::parse(b.trim())?;
        let range = RangeRef {
            sheet: None,
            start,
            end,
        };
        (range.cell_count() <= MAX_RANGE_CELLS).then_some(range)
    }

    /// `B2:B21` or `Sales!B2:B21`.
    pub fn label(&self) -> String {
        match &self.sheet {
            Some(s) => format!("{s}!{}:{}", self.start, self.end),
            None => format!("{}:{}", self.start, self.end),
        }
    }

    /// Corner-normalized bounds: (min_col, min_row, max_col, max_row).
    pub fn bounds(&self) -> (u32, u32, u32, u32) {
        (
            self.start.col.min(self.end.col),
            self.start.row.min(self.end.row),
            self.start.col.max(self.end.col),
            self.start.row.max(self.end.row),
        )
    }

    pub fn contains(&self, addr: &CellAddr) -> bool {
        let (c0, r0, c1, r1) = self.bounds();
        (c0..=c1).contains(&addr.col) && (r0..=r1).contains(&addr.row)
    }

    pub fn cell_count(&self) -> u64 {
        let (c0, r0, c1, r1) = self.bounds();
        u64::from(c1 - c0 + 1) * u64::from(r1 - r0 + 1)
    }

    /// Cells in row-major order.
    pub fn cells(&self) -> impl Iterator<Item = CellAddr> {
        let (c0, r0, c1, r1) = self.bounds();
        (r0..=r1).flat_map(move |row| (c0..=c1).map(move |col| CellAddr { col, row }))
    }
}

/// Distinguished error classes; two evaluators agree when classes match.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ErrorClass {
    Parse,
    Type,
    DivZero,
    Reference,
    Numeric,
    Cycle,
}

#[derive(Clone, Debug, PartialEq, Error)]
pub enum FormulaError {
    #[error("parse error at {pos}: {message}")]
    Parse { pos: usize, message: String },
    #[error("type mismatch: {0}")]
    TypeMismatch(String),
    #[error("division by zero")]
    DivByZero,
    #[error("bad reference: {0}")]
    BadReference(String),
    #[error("numeric overflow")]
    Numeric,
    #[error("cycle through {0}")]
    Cycle(String),
}

impl FormulaError {
    pub fn class(&self) -> ErrorClass {
        match self {
            FormulaError::Parse { .. } => ErrorClass::Parse,
            FormulaError::TypeMismatch(_) => ErrorClass::Type,
            FormulaError::DivByZero => ErrorClass::DivZero,
            FormulaError::BadReference(_) => ErrorClass::Reference,
            FormulaError::Numeric => ErrorClass::Numeric,
            FormulaError::Cycle(_) => ErrorClass::Cycle,
        }
    }

    /// Spreadsheet-style error literal.
    pub fn code(&self) -> &'static str {
        match self.class() {
            ErrorClass::Parse => "#PARSE!",
            ErrorClass::Type => "#VALUE!",
            ErrorClass::DivZero => "#DIV/0!",
            ErrorClass::Reference => "#REF!",
            ErrorClass::Numeric => "#NUM!",
            ErrorClass::Cycle => "#CYCLE!",
        }
    }
}

// ---------------------------------------------------------------------------
// Lexer

#[derive(Clone, Debug, PartialEq)]
enum Token {
    Number(f64),
    Str(String),
    Ident(String),
    Quoted(String),
    Bang,
    Colon,
    Comma,
    LParen,
    RParen,
    Op(BinOp),
}

fn lex(src: &str) -> Result<Vec<(usize, Token)>, FormulaError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    let err = |pos: usize, message: &str| FormulaError::Parse {
        pos,
        message: message.to_string(),
    };
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        match c {
            b' ' | b'\t' => {
                i += 1;
                continue;
            }
            b'0'..=b'9' | b'.' => {
                while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                    i += 1;
                }
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        while j < bytes.len() && bytes[j].is_ascii_digit() {
                            j += 1;
                        }
                        i = j;
                    }
                }
                let text = &src[start..i];
                let n: f64 = text
                    .parse()
                    .map_err(|_| err(start, &format!("bad number `{text}`")))?;
                out.push((start, Token::Number(n)));
                continue;
            }
            b'"' => {
                let mut s = String::new();
                i += 1;
                loop {
                    if i >= bytes.len() {
                        return Err(err(start, "unterminated string"));
                    }
                    if bytes[i] == b'"' {
                        if i + 1 < bytes.len() && bytes[i + 1] == b'"' {
                            s.push('"');
                            i += 2;
                            continue;
                        }
                        i += 1;
                        break;
                    }
                    let ch = src[i..].chars().next().expect("in bounds");
                    s.push(ch);
                    i += ch.len_utf8();
                }
                out.push((start, Token::Str(s)));
                continue;
            }
            b'\'' => {
                i += 1;
                let from = i;
                while i < bytes.len() && bytes[i] != b'\'' {
                    i += 1;
                }
                if i >= bytes.len() {
                    return Err(err(start, "unterminated sheet name"));
                }
                out.push((start, Token::Quoted(src[from..i].to_string())));
                i += 1;
                continue;
            }
            b'!' => out.push((start, Token::Bang)),
            b':' => out.push((start, Token::Colon)),
            b',' => out.push((start, Token::Comma)),
            b'(' => out.push((start, Token::LParen)),
            b')' => out.push((start, Token::RParen)),
            b'+' => out.push((start, Token::Op(BinOp::Add))),
            b'-' => out.push((start, Token::Op(BinOp::Sub))),
            b'*' => out.push((start, Token::Op(BinOp::Mul))),
            b'/' => out.push((start, Token::Op(BinOp::Div))),
            b'=' => out.push((start, Token::Op(BinOp::Eq))),
            b'>' | b'<' => {
                let ge = i + 1 < bytes.len() && bytes[i + 1] == b'=';
                let op = match (c, ge) {
                    (b'>', true) => BinOp::Ge,
                    (b'>', false) => BinOp::Gt,
                    (_, true) => BinOp::Le,
                    (_, false) => BinOp::Lt,
                };
                if ge {
                    i += 1;
                }
                out.push((start, Token::Op(op)));
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                out.push((start, Token::Ident(src[start..i].to_string())));
                continue;
            }
            _ => return Err(err(start, &format!("unexpected character `{}`", c as char))),
        }
        i += 1;
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Parser

struct Parser {
    tokens: Vec<(usize, Token)>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos).map(|(_, t)| t)
    }

    fn offset(&self) -> usize {
        self.tokens
            .get(self.pos)
            .map(|(p, _)| *p)
            .unwrap_or(self.end)
    }

    fn next(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).map(|(_, t)| t.clone());
        self.pos += 1;
        t
    }

    fn error(&self, message: impl Into<String>) -> FormulaError {
        FormulaError::Parse {
            pos: self.offset(),
            message: message.into(),
        }
    }

    fn expect(&mut self, want: Token, what: &str) -> Result<(), FormulaError> {
        if self.peek() == Some(&want) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.error(format!("expected {what}")))
        }
    }

    fn comparison(&mut self) -> Result<Expr, FormulaError> {
        let mut lhs = self.additive()?;
        while let Some(Token::Op(op)) = self.peek() {
            let op = *op;
            if !op.is_comparison() {
                break;
            }
            self.pos += 1;
            let rhs = self.additive()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn additive(&mut self) -> Result<Expr, FormulaError> {
        let mut lhs = self.term()?;
        while let Some(Token::Op(op @ (BinOp::Add | BinOp::Sub))) = self.peek() {
            let op = *op;
            self.pos += 1;
            let rhs = self.term()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr, FormulaError> {
        let mut lhs = self.primary()?;
        while let Some(Token::Op(op @ (BinOp::Mul | BinOp::Div))) = self.peek() {
            let op = *op;
            self.pos += 1;
            let rhs = self.primary()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn primary(&mut self) -> Result<Expr, FormulaError> {
        match self.next() {
            Some(Token::Number(n)) => Ok(Expr::Number(canonical_number(n))),
            Some(Token::Str(s)) => Ok(Expr::Text(s)),
            Some(Token::LParen) => {
                let inner = self.comparison()?;
                self.expect(Token::RParen, "`)`")?;
                Ok(inner)
            }
            Some(Token::Quoted(sheet)) => {
                self.expect(Token::Bang, "`!` after sheet name")?;
                Ok(Expr::Ref(self.address(Some(sheet))?))
            }
            Some(Token::Ident(id)) => {
                let upper = id.to_ascii_uppercase();
                if self.peek() == Some(&Token::LParen) {
                    self.pos += 1;
                    return match upper.as_str() {
                        "IF" => {
                            let cond = self.comparison()?;
                            self.expect(Token::Comma, "`,`")?;
                            let then = self.comparison()?;
                            self.expect(Token::Comma, "`,`")?;
                            let other = self.comparison()?;
                            self.expect(Token::RParen, "`)`")?;
                            Ok(Expr::If(Box::new(cond), Box::new(then), Box::new(other)))
                        }
                        "SUM" | "AVERAGE" => {
                            let range = self.range()?;
                            self.expect(Token::RParen, "`)`")?;
                            Ok(if upper == "SUM" {
                                Expr::Sum(range)
                            } else {
                                Expr::Average(range)
                            })
                        }
                        _ => Err(self.error(format!("unknown function `{id}`"))),
                    };
                }
                match upper.as_str() {
                    "TRUE" => return Ok(Expr::Bool(true)),
                    "FALSE" => return Ok(Expr::Bool(false)),
                    _ => {}
                }
                if self.peek() == Some(&Token::Bang) {
                    self.pos += 1;
                    return Ok(Expr::Ref(self.address(Some(id))?));
                }
                self.pos -= 1;
                Ok(Expr::Ref(self.address(None)?))
            }
            Some(_) => {
                self.pos -= 1;
                Err(self.error("expected a value"))
            }
            None => Err(self.error("unexpected end of formula")),
        }
    }

    fn address(&mut self, sheet: Option<String>) -> Result<CellRef, FormulaError> {
        match self.next() {
            Some(Token::Ident(id)) => match CellAddr::parse(&id) {
                Some(addr) => Ok(CellRef { sheet, addr }),
                None => {
                    self.pos -= 1;
                    Err(self.error(format!("`{id}` is not a cell address")))
                }
            },
            _ => {
                self.pos -= 1;
                Err(self.error("expected a cell address"))
            }
        }
    }

    fn range(&mut self) -> Result<RangeRef, FormulaError> {
        let start = match self.next() {
            Some(Token::Quoted(sheet)) => {
                self.expect(Token::Bang, "`!` after sheet name")?;
                self.address(Some(sheet))?
            }
            Some(Token::Ident(id)) if self.peek() == Some(&Token::Bang) => {
                self.pos += 1;
                self.address(Some(id))?
            }
            Some(_) => {
                self.pos -= 1;
                self.address(None)?
            }
            None => return Err(self.error("expected a range")),
        };
        let end = if self.peek() == Some(&Token::Colon) {
            self.pos += 1;
            self.address(None)?.addr
        } else {
            start.addr
        };
        let range = RangeRef {
            sheet: start.sheet,
            start: start.addr,
            end,
        };
        if range.cell_count() > MAX_RANGE_CELLS {
            return Err(self.error("range too large"));
        }
        Ok(range)
    }
}

/// Parses a formula source, which must begin with `=`.
pub fn parse_formula(src: &str) -> Result<Expr, FormulaError> {
    let Some(body) = src.strip_prefix('=') else {
        return Err(FormulaError::Parse {
            pos: 0,
            message: "formula must start with `=`".into(),
        });
    };
    let tokens = lex(body)?.into_iter().map(|(p, t)| (p + 1, t)).collect();
    let mut parser = Parser {
        tokens,
        pos: 0,
        end: src.len(),
    };
    let expr = parser.comparison()?;
    if parser.pos < parser.tokens.len() {
        return Err(parser.error("unexpected trailing input"));
    }
    Ok(expr)
}

/// Every cell the expression can read, including both `IF` branches.
pub fn references(expr: &Expr) -> (Vec<CellRef>, Vec<RangeRef>) {
    fn walk(e: &Expr, refs: &mut Vec<CellRef>, ranges: &mut Vec<RangeRef>) {
        match e {
            Expr::Number(_) | Expr::Text(_) | Expr::Bool(_) => {}
            Expr::Ref(r) => refs.push(r.clone()),
            Expr::Sum(r) | Expr::Average(r) => ranges.push(r.clone()),
            Expr::If(a, b, c) => {
                walk(a, refs, ranges);
                walk(b, refs, ranges);
                walk(c, refs, ranges);
            }
            Expr::Binary(_, a, b) => {
                walk(a, refs, ranges);
                walk(b, refs, ranges);
            }
        }
    }
    let mut refs = Vec::new();
    let mut ranges = Vec::new();
    walk(expr, &mut refs, &mut ranges);
    (refs, ranges)
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn sheet_prefix(sheet: &Option<String>) -> String {
            match sheet {
                None => String::new(),
                Some(s) if s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') => {
                    format!("{s}!")
                }
                Some(s) => format!("'{s}'!"),
            }
        }
        match self {
            Expr::Number(n) => write!(f, "{}", Scalar::Number(*n)),
            Expr::Text(s) => write!(f, "\"{}\"", s.replace('"', "\"\"")),
            Expr::Bool(b) => f.write_str(if *b { "TRUE" } else { "FALSE" }),
            Expr::Ref(r) => write!(f, "{}{}", sheet_prefix(&r.sheet), r.addr),
            Expr::If(a, b, c) => write!(f, "IF({a}, {b}, {c})"),
            Expr::Sum(r) | Expr::Average(r) => {
                let name = if matches!(self, Expr::Sum(_)) {
                    "SUM"
                } else {
                    "AVERAGE"
                };
                write!(f, "{name}({}{}:{})", sheet_prefix(&r.sheet), r.start, r.end)
            }
            Expr::Binary(op, a, b) => write!(f, "({a} {} {b})", op.symbol()),
        }
    }
}

// ---------------------------------------------------------------------------
// Evaluator

#[derive(Clone, Debug, PartialEq)]
enum Value {
    Number(f64),
    Text(String),
    Bool(bool),
    Empty,
}

impl Value {
    fn into_scalar(self) -> Scalar {
        match self {
            Value::Number(n) => Scalar::Number(n),
            Value::Text(s) => Scalar::Text(s),
            Value::Bool(b) => Scalar::Bool(b),
            Value::Empty => Scalar::Number(0.0),
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            Value::Number(_) => "number",
            Value::Text(_) => "text",
            Value::Bool(_) => "boolean",
            Value::Empty => "empty",
        }
    }
}

type Key = (String, CellAddr);

struct Evaluator<'a> {
    wb: &'a WorkbookState,
    parsed: HashMap<Key, Expr>,
    memo: HashMap<Key, Result<Value, FormulaError>>,
    active: HashSet<Key>,
}

impl<'a> Evaluator<'a> {
    fn new(wb: &'a WorkbookState) -> Self {
        Evaluator {
            wb,
            parsed: HashMap::new(),
            memo: HashMap::new(),
            active: HashSet::new(),
        }
    }

    fn cell(&mut self, sheet: &str, addr: CellAddr) -> Result<Value, FormulaError> {
        let Some(sh) = self.wb.sheet(sheet) else {
            return Err(FormulaError::BadReference(format!("no sheet `{sheet}`")));
        };
        let Some(cell) = sh.cells.get(&addr) else {
            return Ok(Value::Empty);
        };
        match &cell.content {
            CellContent::Value(Scalar::Number(n)) => Ok(Value::Number(canonical_number(*n))),
            CellContent::Value(Scalar::Text(s)) => Ok(Value::Text(s.clone())),
            CellContent::Value(Scalar::Bool(b)) => Ok(Value::Bool(*b)),
            CellContent::Formula(src) => {
                let key = (sheet.to_string(), addr);
                if let Some(done) = self.memo.get(&key) {
                    return done.clone();
                }
                if !self.active.insert(key.clone()) {
                    return Err(FormulaError::Cycle(format!("{sheet}!{addr}")));
                }
                let expr = match self.parsed.get(&key) {
                    Some(e) => Ok(e.clone()),
                    None => parse_formula(src),
                };
                let result = expr
                    .and_then(|e| {
                        self.parsed.insert(key.clone(), e.clone());
                        self.eval(&e, sheet)
                    })
                    .map(|v| match v {
                        Value::Empty => Value::Number(0.0),
                        other => other,
                    });
                self.active.remove(&key);
                self.memo.insert(key, result.clone());
                result
            }
        }
    }

    fn eval(&mut self, expr: &Expr, sheet: &str) -> Result<Value, FormulaError> {
        match expr {
            Expr::Number(n) => Ok(Value::Number(canonical_number(*n))),
            Expr::Text(s) => Ok(Value::Text(s.clone())),
            Expr::Bool(b) => Ok(Value::Bool(*b)),
            Expr::Ref(r) => {
                let target = r.sheet.as_deref().unwrap_or(sheet).to_string();
                self.cell(&target, r.addr)
            }
            Expr::If(cond, then, other) => {
                let truthy = match self.eval(cond, sheet)? {
                    Value::Bool(b) => b,
                    Value::Number(n) => n != 0.0,
                    Value::Empty => false,
                    Value::Text(_) => {
                        return Err(FormulaError::TypeMismatch("IF condition is text".into()))
                    }
                };
                if truthy {
                    self.eval(then, sheet)
                } else {
                    self.eval(other, sheet)
                }
            }
            Expr::Sum(range) | Expr::Average(range) => {
                let target = range.sheet.as_deref().unwrap_or(sheet).to_string();
                if self.wb.sheet(&target).is_none() {
                    return Err(FormulaError::BadReference(format!("no sheet `{target}`")));
                }
                let mut total = 0.0;
                let mut count = 0usize;
                for addr in range.cells() {
                    if let Value::Number(n) = self.cell(&target, addr)? {
                        total += n;
                        count += 1;
                    }
                }
                if !total.is_finite() {
                    return Err(FormulaError::Numeric);
                }
                if matches!(expr, Expr::Sum(_)) {
                    Ok(Value::Number(canonical_number(total)))
                } else if count == 0 {
                    Err(FormulaError::DivByZero)
                } else {
                    finite(total / count as f64)
                }
            }
            Expr::Binary(op, lhs, rhs) => {
                let a = self.eval(lhs, sheet)?;
                let b = self.eval(rhs, sheet)?;
                if op.is_comparison() {
                    compare(*op, a, b)
                } else {
                    let x = numeric(a, *op)?;
                    let y = numeric(b, *op)?;
                    match op {
                        BinOp::Add => finite(x + y),
                        BinOp::Sub => finite(x - y),
                        BinOp::Mul => finite(x * y),
                        BinOp::Div if y == 0.0 => Err(FormulaError::DivByZero),
                        BinOp::Div => finite(x / y),
                        _ => unreachable!("comparison handled above"),
                    }
                }
            }
        }
    }
}

fn finite(x: f64) -> Result<Value, FormulaError> {
    if x.is_finite() {
        Ok(Value::Number(canonical_number(x)))
    } else {
        Err(FormulaError::Numeric)
    }
}

fn numeric(v: Value, op: BinOp) -> Result<f64, FormulaError> {
    match v {
        Value::Number(n) => Ok(n),
        Value::Empty => Ok(0.0),
        other => Err(FormulaError::TypeMismatch(format!(
            "`{}` applied to {}",
            op.symbol(),
            other.kind()
        ))),
    }
}

fn compare(op: BinOp, a: Value, b: Value) -> Result<Value, FormulaError> {
    let (a, b) = match (a, b) {
        (Value::Empty, Value::Empty) => (Value::Number(0.0), Value::Number(0.0)),
        (Value::Empty, Value::Text(t)) => (Value::Text(String::new()), Value::Text(t)),
        (Value::Text(t), Value::Empty) => (Value::Text(t), Value::Text(String::new())),
        (Value::Empty, other) => (Value::Number(0.0), other),
        (other, Value::Empty) => (other, Value::Number(0.0)),
        pair => pair,
    };
    let ord = match (&a, &b) {
        (Value::Number(x), Value::Number(y)) => canonical_number(*x)
            .partial_cmp(&canonical_number(*y))
            .expect("finite numbers"),
        (Value::Text(x), Value::Text(y)) => x.cmp(y),
        (Value::Bool(x), Value::Bool(y)) => x.cmp(y),
        _ => {
            return Err(FormulaError::TypeMismatch(format!(
                "cannot compare {} with {}",
                a.kind(),
                b.kind()
            )))
        }
    };
    use std::cmp::Ordering::*;
    let result = match op {
        BinOp::Gt => ord == Greater,
        BinOp::Lt => ord == Less,
        BinOp::Ge => ord != Less,
        BinOp::Le => ord != Greater,
        BinOp::Eq => ord == Equal,
        _ => unreachable!("arithmetic handled by caller"),
    };
    Ok(Value::Bool(result))
}

/// Evaluates the cell at `sheet!addr`. Literal cells return their value and
/// empty cells read as `0`.
pub fn eval_formula(
    wb: &WorkbookState,
    sheet: &str,
    addr: CellAddr,
) -> Result<Scalar, FormulaError> {
    Evaluator::new(wb).cell(sheet, addr).map(Value::into_scalar)
}

/// Evaluates a free-standing expression in the context of `sheet`.
pub fn eval_expr(wb: &WorkbookState, sheet: &str, expr: &Expr) -> Result<Scalar, FormulaError> {
    Evaluator::new(wb).eval(expr, sheet).map(Value::into_scalar)
}
