//! Spreadsheet workbook: ordered sheets of A1-addressed cells holding either
//! a literal or a formula, plus a bold style flag.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;

use serde::de::{self, Deserializer};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};

use super::formula::{self, parse_formula, FormulaError};
use super::{write_file, ActionError, AppAction, AppId, Scalar, StateError};

pub const FILE: &str = "workbook.json";

pub const VERBS: &[&str] = &["create_sheet", "set_cell", "delete_cell"];

const MAX_COL: u32 = 18_278; // ZZZ
const MAX_ROW: u32 = 1_048_576;

/// An A1-style cell address. Ordered row-major.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CellAddr {
    pub row: u32,
    pub col: u32,
}

impl CellAddr {
    pub fn new(col: u32, row: u32) -> Self {
        CellAddr { row, col }
    }

    /// Parses `[A-Z]+[1-9][0-9]*`.
    pub fn parse(s: &str) -> Option<CellAddr> {
        let split = s.find(|c: char| !c.is_ascii_uppercase())?;
        let (letters, digits) = s.split_at(split);
        if letters.is_empty() || letters.len() > 3 || digits.is_empty() || digits.starts_with('0') {
            return None;
        }
        if !digits.bytes().all(|b| b.is_ascii_digit()) || digits.len() > 7 {
            return None;
        }
        let col = letters
            .bytes()
            .fold(0u32, |acc, b| acc * 26 + u32::from(b - b'A' + 1));
        let row: u32 = digits.parse().ok()?;
        if col > MAX_COL || row > MAX_ROW {
            return None;
        }
        Some(CellAddr { row, col })
    }

    pub fn column_letters(&self) -> String {
        let mut n = self.col;
        let mut out = Vec::new();
        while n > 0 {
            let rem = (n - 1) % 26;
            out.push(b'A' + rem as u8);
            n = (n - 1) / 26;
        }
        out.reverse();
        String::from_utf8(out).expect("ascii")
    }
}

impl fmt::Display for CellAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.column_letters(), self.row)
    }
}

impl Serialize for CellAddr {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for CellAddr {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        CellAddr::parse(&s).ok_or_else(|| de::Error::custom(format!("invalid cell address `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum CellContent {
    Value(Scalar),
    Formula(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    pub content: CellContent,
    pub bold: bool,
}

/// On-disk cell shape: `{"v": scalar}` or `{"f": "=..."}`, plus optional style.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DiskCell {
    #[serde(skip_serializing_if = "Option::is_none")]
    v: Option<Scalar>,
    #[serde(skip_serializing_if = "Option::is_none")]
    f: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    style: Option<DiskStyle>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DiskStyle {
    #[serde(default)]
    bold: bool,
}

impl Serialize for Cell {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let (v, f) = match &self.content {
            CellContent::Value(s) => (Some(s.clone()), None),
            CellContent::Formula(src) => (None, Some(src.clone())),
        };
        DiskCell {
            v,
            f,
            style: self.bold.then_some(DiskStyle { bold: true }),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Cell {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let disk = DiskCell::deserialize(deserializer)?;
        let content = match (disk.v, disk.f) {
            (Some(v), None) => CellContent::Value(v.canonical()),
            (None, Some(f)) => CellContent::Formula(f),
            _ => {
                return Err(de::Error::custom(
                    "a cell holds exactly one of `v` (value) or `f` (formula)",
                ))
            }
        };
        Ok(Cell {
            content,
            bold: disk.style.map(|s| s.bold).unwrap_or(false),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sheet {
    pub name: String,
    #[serde(default)]
    pub cells: BTreeMap<CellAddr, Cell>,
}

impl Sheet {
    pub fn new(name: &str) -> Self {
        Sheet {
            name: name.to_string(),
            cells: BTreeMap::new(),
        }
    }

    /// Highest used (row, column), or (0, 0) for an empty sheet.
    pub fn dimensions(&self) -> (u32, u32) {
        self.cells
            .keys()
            .fold((0, 0), |(r, c), a| (r.max(a.row), c.max(a.col)))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkbookState {
    pub sheets: Vec<Sheet>,
}

fn check_sheet_name(name: &str) -> Result<(), ActionError> {
    if name.trim().is_empty() || name.trim() != name || name.contains(['!', '\'', '\n', '/']) {
        return Err(ActionError::InvalidParams(format!(
            "invalid sheet name `{name}`"
        )));
    }
    Ok(())
}

impl WorkbookState {
    pub fn sheet(&self, name: &str) -> Option<&Sheet> {
        self.sheets.iter().find(|s| s.name == name)
    }

    fn sheet_mut(&mut self, name: &str) -> Result<&mut Sheet, ActionError> {
        self.sheets
            .iter_mut()
            .find(|s| s.name == name)
            .ok_or_else(|| ActionError::DomainViolation(format!("no sheet `{name}`")))
    }

    pub fn cell(&self, sheet: &str, addr: CellAddr) -> Option<&Cell> {
        self.sheet(sheet).and_then(|s| s.cells.get(&addr))
    }

    /// Evaluated value of a cell; see [`formula::eval_formula`].
    pub fn value(&self, sheet: &str, addr: CellAddr) -> Result<Scalar, FormulaError> {
        formula::eval_formula(self, sheet, addr)
    }

    pub fn apply(&self, action: &AppAction) -> Result<WorkbookState, ActionError> {
        let mut next = self.clone();
        match action.verb.as_str() {
            "create_sheet" => {
                action.only(&["name"])?;
                let name = action.text("name")?;
                check_sheet_name(name)?;
                if next.sheet(name).is_some() {
                    return Err(ActionError::DomainViolation(format!(
                        "sheet `{name}` already exists"
                    )));
                }
                next.sheets.push(Sheet::new(name));
            }
            "set_cell" => {
                action.only(&["sheet", "addr", "value", "formula", "bold"])?;
                let sheet_name = action.text("sheet")?;
                let addr = parse_addr(action.text("addr")?)?;
                let value = action.params.get("value").cloned();
                let formula_src = action.opt_text("formula")?;
                let bold = action.opt_bool("bold")?;
                let content = match (value, formula_src) {
                    (Some(_), Some(_)) => {
                        return Err(ActionError::InvalidParams(
                            "set_cell takes `value` or `formula`, not both".into(),
                        ))
                    }
                    (Some(v), None) => Some(CellContent::Value(v.canonical())),
                    (None, Some(src)) => {
                        parse_formula(src).map_err(|e| {
                            ActionError::InvalidParams(format!("formula `{src}`: {e}"))
                        })?;
                        Some(CellContent::Formula(src.to_string()))
                    }
                    (None, None) if bold.is_some() => None,
                    (None, None) => {
                        return Err(ActionError::InvalidParams(
                            "set_cell needs `value`, `formula` or `bold`".into(),
                        ))
                    }
                };
                let sheet = next.sheet_mut(sheet_name)?;
                let cell = sheet.cells.entry(addr).or_insert(Cell {
                    content: CellContent::Value(Scalar::Text(String::new())),
                    bold: false,
                });
                if let Some(content) = content {
                    cell.content = content;
                }
                if let Some(b) = bold {
                    cell.bold = b;
                }
                if let Some(cycle) = next.find_cycle() {
                    return Err(ActionError::DomainViolation(format!(
                        "formula creates a cycle through {cycle}"
                    )));
                }
            }
            "delete_cell" => {
                action.only(&["sheet", "addr"])?;
                let sheet_name = action.text("sheet")?;
                let addr = parse_addr(action.text("addr")?)?;
                next.sheet_mut(sheet_name)?.cells.remove(&addr);
            }
            other => {
                return Err(ActionError::UnknownVerb {
                    app: AppId::Workbook,
                    verb: other.to_string(),
                })
            }
        }
        Ok(next)
    }

    /// First formula cell found on a dependency cycle, as `Sheet!A1`.
    pub fn find_cycle(&self) -> Option<String> {
        type Node = (usize, CellAddr);
        // Edges from each formula cell to the formula cells it can read.
        let mut edges: HashMap<Node, Vec<Node>> = HashMap::new();
        let sheet_index: HashMap<&str, usize> = self
            .sheets
            .iter()
            .enumerate()
            .map(|(i, s)| (s.name.as_str(), i))
            .collect();
        for (si, sheet) in self.sheets.iter().enumerate() {
            for (addr, cell) in &sheet.cells {
                let CellContent::Formula(src) = &cell.content else {
                    continue;
                };
                let Ok(expr) = parse_formula(src) else {
                    continue;
                };
                let (refs, ranges) = formula::references(&expr);
                let mut out = Vec::new();
                for r in refs {
                    let target = r
                        .sheet
                        .as_deref()
                        .map(|s| sheet_index.get(s).copied())
                        .unwrap_or(Some(si));
                    if let Some(ti) = target {
                        if matches!(
                            self.sheets[ti].cells.get(&r.addr).map(|c| &c.content),
                            Some(CellContent::Formula(_))
                        ) {
                            out.push((ti, r.addr));
                        }
                    }
                }
                for r in ranges {
                    let target = r
                        .sheet
                        .as_deref()
                        .map(|s| sheet_index.get(s).copied())
                        .unwrap_or(Some(si));
                    if let Some(ti) = target {
                        for (a, c) in &self.sheets[ti].cells {
                            if matches!(c.content, CellContent::Formula(_)) && r.contains(a) {
                                out.push((ti, *a));
                            }
                        }
                    }
                }
                edges.insert((si, *addr), out);
            }
        }
        // Iterative three-colour DFS.
        let mut colour: HashMap<Node, u8> = HashMap::new();
        let mut nodes: Vec<Node> = edges.keys().copied().collect();
        nodes.sort();
        for start in nodes {
            if colour.get(&start).copied().unwrap_or(0) != 0 {
                continue;
            }
            let mut stack: Vec<(Node, usize)> = vec![(start, 0)];
            colour.insert(start, 1);
            while let Some((node, idx)) = stack.pop() {
                let succ = edges.get(&node).map(Vec::as_slice).unwrap_or(&[]);
                if idx < succ.len() {
                    stack.push((node, idx + 1));
                    let next = succ[idx];
                    match colour.get(&next).copied().unwrap_or(0) {
                        0 => {
                            colour.insert(next, 1);
                            stack.push((next, 0));
                        }
                        1 => return Some(format!("{}!{}", self.sheets[next.0].name, next.1)),
                        _ => {}
                    }
                } else {
                    colour.insert(node, 2);
                }
            }
        }
        None
    }

    /// Structural checks applied on load.
    pub fn validate(&self) -> Result<(), String> {
        let mut seen = std::collections::HashSet::new();
        for sheet in &self.sheets {
            if !seen.insert(sheet.name.as_str()) {
                return Err(format!("duplicate sheet `{}`", sheet.name));
            }
            for (addr, cell) in &sheet.cells {
                if let CellContent::Formula(src) = &cell.content {
                    parse_formula(src).map_err(|e| format!("{}!{addr}: {e}", sheet.name))?;
                }
            }
        }
        if let Some(cycle) = self.find_cycle() {
            return Err(format!("formula cycle through {cycle}"));
        }
        Ok(())
    }

    pub fn to_canonical_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("workbook serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str, file: &str) -> Result<WorkbookState, StateError> {
        let wb: WorkbookState =
            serde_json::from_str(text).map_err(|e| StateError::from_json(file, text, &e))?;
        wb.validate()
            .map_err(|message| StateError::MalformedState {
                file: file.to_string(),
                offset: 0,
                message,
            })?;
        Ok(wb)
    }

    pub fn persist(&self, sandbox_root: &Path) -> Result<Vec<String>, StateError> {
        write_file(sandbox_root, FILE, self.to_canonical_json().as_bytes())?;
        Ok(vec![FILE.to_string()])
    }

    pub fn load(sandbox_root: &Path) -> Result<WorkbookState, StateError> {
        Self::load_file(&sandbox_root.join(FILE), FILE)
    }

    pub fn load_file(path: &Path, label: &str) -> Result<WorkbookState, StateError> {
        if !path.is_file() {
            return Err(StateError::MissingState {
                app: AppId::Workbook,
                path: label.to_string(),
            });
        }
        let bytes = std::fs::read(path).map_err(|e| StateError::io(path, e))?;
        let text = String::from_utf8(bytes).map_err(|e| StateError::MalformedState {
            file: label.to_string(),
            offset: e.utf8_error().valid_up_to(),
            message: "workbook is not valid UTF-8".into(),
        })?;
        Self::from_json(&text, label)
    }
}

fn parse_addr(raw: &str) -> Result<CellAddr, ActionError> {
    CellAddr::parse(raw)
        .ok_or_else(|| ActionError::InvalidParams(format!("invalid cell address `{raw}`")))
}
