//! Brute-force reference interpreter for the workbook formula language.
//!
//! Formulas are generated as trees, rendered to source, and evaluated here
//! directly from the tree; the engine sees only the rendered text.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use softworld::apps::formula::{eval_expr, parse_formula, ErrorClass};
use softworld::apps::scalar::{canonical_number, Scalar};
use softworld::apps::workbook::{Cell, CellAddr, CellContent, Sheet, WorkbookState};

pub const CONTEXT_SHEET: &str = "Sheet1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Op {
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

const OPS: [Op; 9] = [
    Op::Add,
    Op::Sub,
    Op::Mul,
    Op::Div,
    Op::Gt,
    Op::Lt,
    Op::Ge,
    Op::Le,
    Op::Eq,
];

impl Op {
    fn text(self) -> &'static str {
        match self {
            Op::Add => "+",
            Op::Sub => "-",
            Op::Mul => "*",
            Op::Div => "/",
            Op::Gt => ">",
            Op::Lt => "<",
            Op::Ge => ">=",
            Op::Le => "<=",
            Op::Eq => "=",
        }
    }

    fn level(self) -> u8 {
        match self {
            Op::Mul | Op::Div => 3,
            Op::Add | Op::Sub => 2,
            _ => 1,
        }
    }
}

#[derive(Clone, Debug)]
pub enum Node {
    Num(f64),
    Text(String),
    Bool(bool),
    Ref(Option<String>, (u32, u32)),
    If(Box<Node>, Box<Node>, Box<Node>),
    Sum(Option<String>, (u32, u32), (u32, u32)),
    Avg(Option<String>, (u32, u32), (u32, u32)),
    Bin(Op, Box<Node>, Box<Node>),
    Group(Box<Node>),
}

impl Node {
    pub fn depth(&self) -> usize {
        match self {
            Node::If(a, b, c) => 1 + a.depth().max(b.depth()).max(c.depth()),
            Node::Bin(_, a, b) => 1 + a.depth().max(b.depth()),
            Node::Group(a) => 1 + a.depth(),
            _ => 1,
        }
    }

    /// Production names used anywhere in the tree.
    pub fn productions(&self, out: &mut BTreeSet<String>) {
        let name = match self {
            Node::Num(_) => "number".to_string(),
            Node::Text(_) => "text".into(),
            Node::Bool(_) => "bool".into(),
            Node::Ref(Some(s), _) if s.contains(' ') => "ref_quoted".into(),
            Node::Ref(Some(_), _) => "ref_sheet".into(),
            Node::Ref(None, _) => "ref".into(),
            Node::If(..) => "if".into(),
            Node::Sum(..) => "sum".into(),
            Node::Avg(..) => "average".into(),
            Node::Bin(op, ..) => format!("op{}", op.text()),
            Node::Group(_) => "group".into(),
        };
        out.insert(name);
        match self {
            Node::If(a, b, c) => {
                a.productions(out);
                b.productions(out);
                c.productions(out);
            }
            Node::Bin(_, a, b) => {
                a.productions(out);
                b.productions(out);
            }
            Node::Group(a) => a.productions(out),
            _ => {}
        }
    }

    fn level(&self) -> u8 {
        match self {
            Node::Bin(op, ..) => op.level(),
            _ => 4,
        }
    }
}

fn letters(col: u32) -> String {
    ((b'A' + (col - 1) as u8) as char).to_string()
}

fn addr_text((col, row): (u32, u32)) -> String {
    format!("{}{row}", letters(col))
}

fn sheet_prefix(sheet: &Option<String>) -> String {
    match sheet {
        Some(s) if s.contains(' ') => format!("'{s}'!"),
        Some(s) => format!("{s}!"),
        None => String::new(),
    }
}

fn render_number(n: f64) -> String {
    if n >= 1e21 {
        format!("{n:e}")
    } else {
        format!("{n}")
    }
}

/// Source text with the minimum parentheses the grammar needs; `Group`
/// adds explicit ones.
pub fn render(node: &Node) -> String {
    match node {
        Node::Num(n) => render_number(*n),
        Node::Text(s) => format!("\"{}\"", s.replace('"', "\"\"")),
        Node::Bool(true) => "TRUE".into(),
        Node::Bool(false) => "false".into(),
        Node::Ref(sheet, a) => format!("{}{}", sheet_prefix(sheet), addr_text(*a)),
        Node::If(c, t, e) => format!("IF({}, {}, {})", render(c), render(t), render(e)),
        Node::Sum(sheet, a, b) => format!(
            "SUM({}{}:{})",
            sheet_prefix(sheet),
            addr_text(*a),
            addr_text(*b)
        ),
        Node::Avg(sheet, a, b) if a == b => {
            format!("average({}{})", sheet_prefix(sheet), addr_text(*a))
        }
        Node::Avg(sheet, a, b) => format!(
            "AVERAGE({}{}:{})",
            sheet_prefix(sheet),
            addr_text(*a),
            addr_text(*b)
        ),
        Node::Bin(op, l, r) => {
            let left = if l.level() < op.level() {
                format!("({})", render(l))
            } else {
                render(l)
            };
            let right = if r.level() <= op.level() {
                format!("({})", render(r))
            } else {
                render(r)
            };
            match op.level() {
                2 => format!("{left} {} {right}", op.text()),
                _ => format!("{left}{}{right}", op.text()),
            }
        }
        Node::Group(inner) => format!("({})", render(inner)),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Val {
    Num(f64),
    Text(String),
    Bool(bool),
    Empty,
}

#[derive(Clone, Debug)]
pub enum Content {
    Lit(Val),
    Formula(Node),
}

/// The workbook every generated formula is evaluated against.
pub struct Book {
    pub sheets: BTreeMap<String, BTreeMap<(u32, u32), Content>>,
}

fn at(addr: &str) -> (u32, u32) {
    let (l, r) = addr.split_at(1);
    (u32::from(l.as_bytes()[0] - b'A' + 1), r.parse().unwrap())
}

fn parse_fixture_formula(src: &str) -> Node {
    // Fixture formulas are tiny; build them by hand.
    match src {
        "=A1*2" => Node::Bin(
            Op::Mul,
            Box::new(Node::Ref(None, at("A1"))),
            Box::new(Node::Num(2.0)),
        ),
        "=C3+1" => Node::Bin(
            Op::Add,
            Box::new(Node::Ref(None, at("C3"))),
            Box::new(Node::Num(1.0)),
        ),
        "=C2" => Node::Ref(None, at("C2")),
        "=1/B1" => Node::Bin(
            Op::Div,
            Box::new(Node::Num(1.0)),
            Box::new(Node::Ref(None, at("B1"))),
        ),
        "=Sheet1!A1+A1" => Node::Bin(
            Op::Add,
            Box::new(Node::Ref(Some("Sheet1".into()), at("A1"))),
            Box::new(Node::Ref(None, at("A1"))),
        ),
        "=D1" => Node::Ref(None, at("D1")),
        other => panic!("no fixture formula {other}"),
    }
}

impl Book {
    pub fn fixture() -> Book {
        let mut sheets: BTreeMap<String, BTreeMap<(u32, u32), Content>> = BTreeMap::new();
        let lit = |v: Val| Content::Lit(v);
        let f = |src: &str| Content::Formula(parse_fixture_formula(src));
        sheets.insert(
            CONTEXT_SHEET.into(),
            [
                ("A1", lit(Val::Num(3.0))),
                ("A2", lit(Val::Num(4.5))),
                ("A3", lit(Val::Text("abc".into()))),
                ("A4", lit(Val::Bool(true))),
                ("B1", lit(Val::Num(0.0))),
                ("B2", lit(Val::Text(String::new()))),
                ("B3", lit(Val::Num(-2.0))),
                ("C1", f("=A1*2")),
                ("C2", f("=C3+1")),
                ("C3", f("=C2")),
                ("C4", f("=1/B1")),
                ("E1", lit(Val::Text("10".into()))),
                ("E2", lit(Val::Num(1e308))),
                ("E4", lit(Val::Num(1e308))),
                ("E3", f("=D1")),
                ("F1", lit(Val::Num(0.1))),
                ("F2", lit(Val::Num(0.2))),
            ]
            .into_iter()
            .map(|(a, c)| (at(a), c))
            .collect(),
        );
        sheets.insert(
            "Data".into(),
            [
                ("A1", lit(Val::Num(1.0))),
                ("A2", lit(Val::Num(2.0))),
                ("B1", lit(Val::Text("x".into()))),
                ("B2", lit(Val::Bool(false))),
            ]
            .into_iter()
            .map(|(a, c)| (at(a), c))
            .collect(),
        );
        sheets.insert(
            "Q 1".into(),
            [("A1", lit(Val::Num(7.0))), ("B1", f("=Sheet1!A1+A1"))]
                .into_iter()
                .map(|(a, c)| (at(a), c))
                .collect(),
        );
        Book { sheets }
    }

    /// The same cells as engine state.
    pub fn to_workbook(&self) -> WorkbookState {
        let sheets = self
            .sheets
            .iter()
            .map(|(name, cells)| {
                let mut sheet = Sheet::new(name);
                for (&(col, row), content) in cells {
                    let content = match content {
                        Content::Lit(Val::Num(n)) => CellContent::Value(Scalar::Number(*n)),
                        Content::Lit(Val::Text(s)) => CellContent::Value(Scalar::Text(s.clone())),
                        Content::Lit(Val::Bool(b)) => CellContent::Value(Scalar::Bool(*b)),
                        Content::Lit(Val::Empty) => continue,
                        Content::Formula(node) => {
                            CellContent::Formula(format!("={}", render(node)))
                        }
                    };
                    sheet.cells.insert(
                        CellAddr::new(col, row),
                        Cell {
                            content,
                            bold: false,
                        },
                    );
                }
                sheet
            })
            .collect();
        WorkbookState { sheets }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Class {
    Parse,
    Type,
    DivZero,
    Reference,
    Numeric,
    Cycle,
}

pub type Outcome = Result<Val, Class>;

struct Interp<'a> {
    book: &'a Book,
    visiting: Vec<(String, (u32, u32))>,
}

fn finite(x: f64) -> Outcome {
    if x.is_finite() {
        Ok(Val::Num(canonical_number(x)))
    } else {
        Err(Class::Numeric)
    }
}

impl Interp<'_> {
    fn cell(&mut self, sheet: &str, addr: (u32, u32)) -> Outcome {
        let Some(cells) = self.book.sheets.get(sheet) else {
            return Err(Class::Reference);
        };
        match cells.get(&addr) {
            None | Some(Content::Lit(Val::Empty)) => Ok(Val::Empty),
            Some(Content::Lit(Val::Num(n))) => Ok(Val::Num(canonical_number(*n))),
            Some(Content::Lit(v)) => Ok(v.clone()),
            Some(Content::Formula(node)) => {
                let key = (sheet.to_string(), addr);
                if self.visiting.contains(&key) {
                    return Err(Class::Cycle);
                }
                self.visiting.push(key);
                let out = self.eval(node, sheet);
                self.visiting.pop();
                match out? {
                    Val::Empty => Ok(Val::Num(0.0)),
                    v => Ok(v),
                }
            }
        }
    }

    fn eval(&mut self, node: &Node, ctx: &str) -> Outcome {
        match node {
            Node::Num(n) => Ok(Val::Num(canonical_number(*n))),
            Node::Text(s) => Ok(Val::Text(s.clone())),
            Node::Bool(b) => Ok(Val::Bool(*b)),
            Node::Group(inner) => self.eval(inner, ctx),
            Node::Ref(sheet, addr) => self.cell(sheet.as_deref().unwrap_or(ctx), *addr),
            Node::If(c, t, e) => {
                let take_then = match self.eval(c, ctx)? {
                    Val::Bool(b) => b,
                    Val::Num(n) => n != 0.0,
                    Val::Empty => false,
                    Val::Text(_) => return Err(Class::Type),
                };
                self.eval(if take_then { t } else { e }, ctx)
            }
            Node::Sum(sheet, a, b) | Node::Avg(sheet, a, b) => {
                let target = sheet.as_deref().unwrap_or(ctx);
                if !self.book.sheets.contains_key(target) {
                    return Err(Class::Reference);
                }
                let mut numbers = Vec::new();
                for row in a.1.min(b.1)..=a.1.max(b.1) {
                    for col in a.0.min(b.0)..=a.0.max(b.0) {
                        if let Val::Num(n) = self.cell(target, (col, row))? {
                            numbers.push(n);
                        }
                    }
                }
                let total: f64 = numbers.iter().sum();
                if !total.is_finite() {
                    return Err(Class::Numeric);
                }
                match node {
                    Node::Sum(..) => Ok(Val::Num(canonical_number(total))),
                    _ if numbers.is_empty() => Err(Class::DivZero),
                    _ => finite(total / numbers.len() as f64),
                }
            }
            Node::Bin(op, l, r) => {
                let a = self.eval(l, ctx)?;
                let b = self.eval(r, ctx)?;
                if op.level() == 1 {
                    return compare(*op, a, b);
                }
                let num = |v: Val| match v {
                    Val::Num(n) => Ok(n),
                    Val::Empty => Ok(0.0),
                    _ => Err(Class::Type),
                };
                let (x, y) = (num(a)?, num(b)?);
                match op {
                    Op::Add => finite(x + y),
                    Op::Sub => finite(x - y),
                    Op::Mul => finite(x * y),
                    Op::Div if y == 0.0 => Err(Class::DivZero),
                    _ => finite(x / y),
                }
            }
        }
    }
}

fn compare(op: Op, a: Val, b: Val) -> Outcome {
    let fill = |v: Val, other: &Val| match (v, other) {
        (Val::Empty, Val::Text(_)) => Val::Text(String::new()),
        (Val::Empty, _) => Val::Num(0.0),
        (v, _) => v,
    };
    let (a2, b2) = (fill(a.clone(), &b), fill(b, &a));
    let ord = match (&a2, &b2) {
        (Val::Num(x), Val::Num(y)) => canonical_number(*x)
            .partial_cmp(&canonical_number(*y))
            .unwrap(),
        (Val::Text(x), Val::Text(y)) => x.cmp(y),
        (Val::Bool(x), Val::Bool(y)) => x.cmp(y),
        _ => return Err(Class::Type),
    };
    use std::cmp::Ordering::*;
    Ok(Val::Bool(match op {
        Op::Gt => ord == Greater,
        Op::Lt => ord == Less,
        Op::Ge => ord != Less,
        Op::Le => ord != Greater,
        _ => ord == Equal,
    }))
}

/// Evaluates `node` in the context sheet; empty results read as 0.
pub fn oracle(book: &Book, node: &Node) -> Outcome {
    let mut interp = Interp {
        book,
        visiting: Vec::new(),
    };
    match interp.eval(node, CONTEXT_SHEET)? {
        Val::Empty => Ok(Val::Num(0.0)),
        v => Ok(v),
    }
}

/// Runs the engine on source text and maps its answer into oracle terms.
pub fn engine(wb: &WorkbookState, src: &str) -> Outcome {
    let class = |c: ErrorClass| match c {
        ErrorClass::Parse => Class::Parse,
        ErrorClass::Type => Class::Type,
        ErrorClass::DivZero => Class::DivZero,
        ErrorClass::Reference => Class::Reference,
        ErrorClass::Numeric => Class::Numeric,
        ErrorClass::Cycle => Class::Cycle,
    };
    let expr = parse_formula(src).map_err(|e| class(e.class()))?;
    match eval_expr(wb, CONTEXT_SHEET, &expr) {
        Ok(Scalar::Number(n)) => Ok(Val::Num(n)),
        Ok(Scalar::Text(s)) => Ok(Val::Text(s)),
        Ok(Scalar::Bool(b)) => Ok(Val::Bool(b)),
        Err(e) => Err(class(e.class())),
    }
}

const NUMBERS: [f64; 10] = [0.0, 1.0, 2.0, 3.0, 0.5, 2.25, 10.0, 100.0, 0.1, 1e300];
const TEXTS: [&str; 5] = ["", "a", "abc", "10", "say \"hi\""];

fn pick_sheet(rng: &mut ChaCha8Rng) -> (Option<String>, (u32, u32)) {
    match rng.gen_range(0..10) {
        0..=5 => (None, (rng.gen_range(1..=6), rng.gen_range(1..=4))),
        6 | 7 => (
            Some("Data".into()),
            (rng.gen_range(1..=2), rng.gen_range(1..=3)),
        ),
        8 => (Some("Q 1".into()), (rng.gen_range(1..=2), 1)),
        _ => (Some("Missing".into()), (1, 1)),
    }
}

fn leaf(rng: &mut ChaCha8Rng) -> Node {
    match rng.gen_range(0..7) {
        0 => Node::Num(NUMBERS[rng.gen_range(0..NUMBERS.len())]),
        6 => Node::Num(1e300),
        1 => Node::Text(TEXTS[rng.gen_range(0..TEXTS.len())].into()),
        2 => Node::Bool(rng.gen()),
        3 => {
            let (sheet, a) = pick_sheet(rng);
            Node::Ref(sheet, a)
        }
        k => {
            let (sheet, a) = pick_sheet(rng);
            let b = (a.0 + rng.gen_range(0..2), a.1 + rng.gen_range(0..3));
            if k == 4 {
                Node::Sum(sheet, a, b)
            } else {
                Node::Avg(sheet, a, b)
            }
        }
    }
}

/// A random tree of at most `depth` levels.
pub fn random_formula(rng: &mut ChaCha8Rng, depth: usize) -> Node {
    if depth <= 1 || rng.gen_bool(0.25) {
        return leaf(rng);
    }
    match rng.gen_range(0..10) {
        0 | 1 => Node::If(
            Box::new(random_formula(rng, depth - 1)),
            Box::new(random_formula(rng, depth - 1)),
            Box::new(random_formula(rng, depth - 1)),
        ),
        2 => Node::Group(Box::new(random_formula(rng, depth - 1))),
        _ => Node::Bin(
            OPS[rng.gen_range(0..OPS.len())],
            Box::new(random_formula(rng, depth - 1)),
            Box::new(random_formula(rng, depth - 1)),
        ),
    }
}

/// Breaks well-formed source so it cannot parse.
pub fn corrupt(rng: &mut ChaCha8Rng, src: &str) -> String {
    let body = &src[1..];
    match rng.gen_range(0..6) {
        0 => body.to_string(),
        1 => format!("{src})"),
        2 => format!("{src} +"),
        3 => format!("=({body}"),
        4 => format!("={body} # 1"),
        _ => format!("=NOPE({body})"),
    }
}

pub struct OracleRun {
    pub cases: usize,
    pub mismatches: Vec<String>,
    pub productions: BTreeSet<String>,
    pub classes: BTreeSet<Class>,
    pub values: usize,
    pub max_depth: usize,
}

/// Compares engine and oracle on `cases` formulas of depth at most 4, a
/// tenth of them deliberately malformed.
pub fn compare_engine_with_oracle(seed: u64, cases: usize) -> OracleRun {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let book = Book::fixture();
    let wb = book.to_workbook();
    let mut run = OracleRun {
        cases,
        mismatches: Vec::new(),
        productions: BTreeSet::new(),
        classes: BTreeSet::new(),
        values: 0,
        max_depth: 0,
    };
    for i in 0..cases {
        let node = random_formula(&mut rng, 4);
        run.max_depth = run.max_depth.max(node.depth());
        node.productions(&mut run.productions);
        let mut src = format!("={}", render(&node));
        let expected = if i % 10 == 9 {
            src = corrupt(&mut rng, &src);
            Err(Class::Parse)
        } else {
            oracle(&book, &node)
        };
        let got = engine(&wb, &src);
        match &expected {
            Ok(_) => run.values += 1,
            Err(c) => {
                run.classes.insert(*c);
            }
        }
        if got != expected {
            run.mismatches
                .push(format!("{src}: engine {got:?}, oracle {expected:?}"));
        }
    }
    run
}
