use std::collections::BTreeSet;
use std::path::Path;

use serde_json::{json, Value};

use super::{
    check_binding_path, compare, field, nullable, offset_count, req, Args, EndpointSpec,
    ExecFailure, FieldType as F, Outcome, ParamType as P, Surface, VerifierConfig,
};
use crate::apps::formula::{self, parse_formula, RangeRef};
use crate::apps::workbook::{Cell, CellAddr, CellContent, Sheet, WorkbookState};
use crate::apps::Scalar;

const READS: &[&str] = &[
    "file:workbook",
    "column:cell.value",
    "column:cell.formula",
    "column:cell.style",
];

pub(crate) const ENDPOINTS: &[EndpointSpec] = &[
    EndpointSpec {
        name: "check-sheet-exists",
        params: &[req("sheet", P::Text)],
        doc: "Passes when the workbook has a sheet with the name.",
        reads: READS,
        evidence: &[field("sheet", F::Text), field("found", F::Bool)],
        surface: Surface::Structure,
        logic: &[],
    },
    EndpointSpec {
        name: "check-cell-value",
        params: &[
            req("sheet", P::Text),
            req("addr", P::Text),
            req("value", P::Text),
        ],
        doc:
            "Passes when the cell's evaluated value equals `value` (numbers compared canonically).",
        reads: READS,
        evidence: &[
            field("sheet", F::Text),
            field("addr", F::Text),
            field("found", F::Bool),
            nullable("value", F::Scalar),
            field("expected", F::Scalar),
            nullable("error", F::Text),
        ],
        surface: Surface::Content,
        logic: &["logic:comparison"],
    },
    EndpointSpec {
        name: "check-cell-formula",
        params: &[
            req("sheet", P::Text),
            req("addr", P::Text),
            req("contains", P::Text),
        ],
        doc: "Passes when the cell holds a formula containing the text (case and spacing ignored).",
        reads: READS,
        evidence: &[
            field("sheet", F::Text),
            field("addr", F::Text),
            nullable("formula", F::Text),
        ],
        surface: Surface::Formula,
        logic: &[],
    },
    EndpointSpec {
        name: "check-cell-bold",
        params: &[req("sheet", P::Text), req("addr", P::Text)],
        doc: "Passes when the cell exists and is formatted bold.",
        reads: READS,
        evidence: &[
            field("sheet", F::Text),
            field("addr", F::Text),
            field("found", F::Bool),
            field("bold", F::Bool),
        ],
        surface: Surface::Formatting,
        logic: &[],
    },
    EndpointSpec {
        name: "check-cell-references",
        params: &[
            req("sheet", P::Text),
            req("addr", P::Text),
            req("ref", P::Text),
        ],
        doc: "Passes when the cell's formula references the cell or range `ref`.",
        reads: READS,
        evidence: &[
            field("sheet", F::Text),
            field("addr", F::Text),
            field("references", F::TextList),
        ],
        surface: Surface::Formula,
        logic: &[],
    },
    EndpointSpec {
        name: "check-sheet-count",
        params: &[req("count", P::Integer)],
        doc: "Passes when the workbook has exactly `count` sheets.",
        reads: READS,
        evidence: &[field("count", F::Integer), field("expected", F::Integer)],
        surface: Surface::Structure,
        logic: &["logic:count_offset"],
    },
    EndpointSpec {
        name: "check-cell-empty",
        params: &[req("sheet", P::Text), req("addr", P::Text)],
        doc: "Passes when the sheet exists and the cell is unset.",
        reads: READS,
        evidence: &[
            field("sheet", F::Text),
            field("addr", F::Text),
            field("found", F::Bool),
            field("empty", F::Bool),
        ],
        surface: Surface::Content,
        logic: &[],
    },
    EndpointSpec {
        name: "check-range-formulas",
        params: &[req("sheet", P::Text), req("range", P::Text)],
        doc: "Passes when every cell of the range holds a formula.",
        reads: READS,
        evidence: &[
            field("sheet", F::Text),
            field("range", F::Text),
            field("cells", F::Integer),
            field("formulas", F::Integer),
        ],
        surface: Surface::Formula,
        logic: &[],
    },
    EndpointSpec {
        name: "get-cell",
        params: &[req("sheet", P::Text), req("addr", P::Text)],
        doc: "Evaluated value, formula source and style of one cell.",
        reads: READS,
        evidence: &[
            field("sheet", F::Text),
            field("addr", F::Text),
            field("empty", F::Bool),
            nullable("value", F::Scalar),
            nullable("formula", F::Text),
            field("bold", F::Bool),
            nullable("error", F::Text),
        ],
        surface: Surface::Content,
        logic: &[],
    },
    EndpointSpec {
        name: "get-sheets",
        params: &[],
        doc: "Sheet names in workbook order.",
        reads: READS,
        evidence: &[field("sheets", F::TextList), field("count", F::Integer)],
        surface: Surface::Structure,
        logic: &[],
    },
    EndpointSpec {
        name: "get-range-values",
        params: &[req("sheet", P::Text), req("range", P::Text)],
        doc: "Evaluated values of a range in row-major order, with count and numeric sum.",
        reads: READS,
        evidence: &[
            field("sheet", F::Text),
            field("range", F::Text),
            field("values", F::ScalarList),
            field("count", F::Integer),
            field("sum", F::Number),
            field("errors", F::Integer),
        ],
        surface: Surface::Content,
        logic: &[],
    },
    EndpointSpec {
        name: "get-sheet-dimensions",
        params: &[req("sheet", P::Text)],
        doc: "Highest used row and column of a sheet.",
        reads: READS,
        evidence: &[
            field("sheet", F::Text),
            field("rows", F::Integer),
            field("cols", F::Integer),
        ],
        surface: Surface::Structure,
        logic: &[],
    },
];

fn load(cfg: &VerifierConfig, root: &Path) -> Result<WorkbookState, ExecFailure> {
    let resource = READS[0];
    let rel = cfg.binding(resource)?;
    check_binding_path(resource, rel)?;
    let path = root.join(rel);
    if !path.is_file() {
        return Err(ExecFailure::MissingFile {
            resource: resource.into(),
            path: rel.into(),
        });
    }
    let malformed = |message: String| ExecFailure::Malformed {
        resource: resource.into(),
        file: rel.into(),
        message,
    };
    let text = std::fs::read_to_string(&path).map_err(|e| malformed(e.to_string()))?;
    let doc: Value = serde_json::from_str(&text).map_err(|e| malformed(e.to_string()))?;
    let vkey = cfg.binding("column:cell.value")?;
    let fkey = cfg.binding("column:cell.formula")?;
    let skey = cfg.binding("column:cell.style")?;

    let sheets = doc
        .get("sheets")
        .and_then(Value::as_array)
        .ok_or_else(|| malformed("no `sheets` array".into()))?;
    let mut wb = WorkbookState::default();
    for s in sheets {
        let name = s
            .get("name")
            .and_then(Value::as_str)
            .ok_or_else(|| malformed("sheet without a name".into()))?;
        let mut sheet = Sheet::new(name);
        let cells = s.get("cells").and_then(Value::as_object);
        for (addr, raw) in cells.into_iter().flatten() {
            let addr =
                CellAddr::parse(addr).ok_or_else(|| malformed(format!("bad address `{addr}`")))?;
            let obj = raw
                .as_object()
                .ok_or_else(|| malformed(format!("{name}!{addr} is not an object")))?;
            if let Some(k) = obj
                .keys()
                .find(|k| ![vkey, fkey, skey].contains(&k.as_str()))
            {
                let unknown = &obj[k];
                let resource = match unknown {
                    Value::String(s) if s.starts_with('=') => "column:cell.formula",
                    Value::Object(_) => "column:cell.style",
                    _ => "column:cell.value",
                };
                return Err(ExecFailure::MissingColumn {
                    resource: resource.into(),
                    table: "cell".into(),
                    column: cfg.binding(resource)?.into(),
                    found: obj.keys().cloned().collect(),
                });
            }
            let content = match (obj.get(vkey), obj.get(fkey)) {
                (Some(v), None) => CellContent::Value(
                    Scalar::from_json(v)
                        .ok_or_else(|| malformed(format!("{name}!{addr} value is not a scalar")))?
                        .canonical(),
                ),
                (None, Some(Value::String(f))) => CellContent::Formula(f.clone()),
                _ => {
                    return Err(malformed(format!(
                        "{name}!{addr} must hold exactly one of `{vkey}` or `{fkey}`"
                    )))
                }
            };
            let bold = obj
                .get(skey)
                .and_then(|s| s.get("bold"))
                .and_then(Value::as_bool)
                .unwrap_or(false);
            sheet.cells.insert(addr, Cell { content, bold });
        }
        wb.sheets.push(sheet);
    }
    wb.validate().map_err(malformed)?;
    Ok(wb)
}

fn normalize(s: &str) -> String {
    s.chars()
        .filter(|c| !c.is_whitespace())
        .flat_map(char::to_uppercase)
        .collect()
}

/// Value of a cell as evidence: `(value, error_code)`; empty cells yield nulls.
fn evaluate(wb: &WorkbookState, sheet: &str, addr: CellAddr) -> (Value, Value) {
    if wb.cell(sheet, addr).is_none() {
        return (Value::Null, Value::Null);
    }
    match formula::eval_formula(wb, sheet, addr) {
        Ok(v) => (v.to_json(), Value::Null),
        Err(e) => (Value::Null, json!(e.code())),
    }
}

fn sheet_or_missing<'a>(wb: &'a WorkbookState, sheet: &str) -> Result<&'a Sheet, ExecFailure> {
    wb.sheet(sheet).ok_or_else(|| ExecFailure::NotFound {
        entity: "sheet".into(),
        key: sheet.into(),
    })
}

fn range_or_missing(raw: &str) -> Result<RangeRef, ExecFailure> {
    RangeRef::parse_plain(raw).ok_or_else(|| ExecFailure::NotFound {
        entity: "range".into(),
        key: raw.into(),
    })
}

pub(crate) fn execute(
    endpoint: &str,
    cfg: &VerifierConfig,
    args: &Args<'_>,
    root: &Path,
) -> Result<Outcome, ExecFailure> {
    let wb = load(cfg, root)?;
    let sheet = args.text("sheet");
    let found = wb.sheet(sheet).is_some();
    let raw_addr = args.text("addr");
    let addr = CellAddr::parse(raw_addr);
    let cell = addr.and_then(|a| wb.cell(sheet, a));
    let formula_src = match cell.map(|c| &c.content) {
        Some(CellContent::Formula(f)) => Some(f.as_str()),
        _ => None,
    };
    match endpoint {
        "check-sheet-exists" => Ok(Outcome::check(
            found,
            json!({"sheet": sheet, "found": found}),
        )),
        "check-cell-value" => {
            let expected = args.scalar("value");
            let (value, error) = match addr {
                Some(a) if found => evaluate(&wb, sheet, a),
                _ => (Value::Null, Value::Null),
            };
            let equal = Scalar::from_json(&value).is_some_and(|v| v.canonical_eq(&expected));
            Ok(Outcome::check(
                found && compare(cfg, equal),
                json!({"sheet": sheet, "addr": raw_addr, "found": found, "value": value,
                       "expected": expected, "error": error}),
            ))
        }
        "check-cell-formula" => {
            let needle = normalize(args.text("contains"));
            let passed = formula_src.is_some_and(|f| normalize(f).contains(&needle));
            Ok(Outcome::check(
                passed,
                json!({"sheet": sheet, "addr": raw_addr, "formula": formula_src}),
            ))
        }
        "check-cell-bold" => {
            let bold = cell.is_some_and(|c| c.bold);
            Ok(Outcome::check(
                bold,
                json!({"sheet": sheet, "addr": raw_addr, "found": cell.is_some(), "bold": bold}),
            ))
        }
        "check-cell-references" => {
            let want = normalize(args.text("ref"));
            let refs: BTreeSet<String> = match formula_src.map(parse_formula) {
                Some(Ok(expr)) => {
                    let (cells, ranges) = formula::references(&expr);
                    cells
                        .iter()
                        .map(|c| c.label())
                        .chain(ranges.iter().map(|r| r.label()))
                        .collect()
                }
                _ => BTreeSet::new(),
            };
            let passed = refs.iter().any(|r| normalize(r) == want);
            Ok(Outcome::check(
                passed,
                json!({"sheet": sheet, "addr": raw_addr, "references": refs}),
            ))
        }
        "check-sheet-count" => {
            let expected = args.int("count");
            let count = offset_count(cfg, wb.sheets.len() as i64);
            Ok(Outcome::check(
                count == expected,
                json!({"count": count, "expected": expected}),
            ))
        }
        "check-cell-empty" => {
            let empty = cell.is_none();
            Ok(Outcome::check(
                found && addr.is_some() && empty,
                json!({"sheet": sheet, "addr": raw_addr, "found": found, "empty": empty}),
            ))
        }
        "check-range-formulas" => {
            let raw = args.text("range");
            let range = range_or_missing(raw)?;
            let cells = range.cell_count() as i64;
            let formulas = match wb.sheet(sheet) {
                Some(s) => range
                    .cells()
                    .filter(|a| {
                        matches!(
                            s.cells.get(a).map(|c| &c.content),
                            Some(CellContent::Formula(_))
                        )
                    })
                    .count() as i64,
                None => 0,
            };
            Ok(Outcome::check(
                found && formulas == cells,
                json!({"sheet": sheet, "range": raw, "cells": cells, "formulas": formulas}),
            ))
        }
        "get-cell" => {
            sheet_or_missing(&wb, sheet)?;
            let a = addr.ok_or_else(|| ExecFailure::NotFound {
                entity: "cell".into(),
                key: raw_addr.into(),
            })?;
            let (value, error) = evaluate(&wb, sheet, a);
            Ok(Outcome::query(json!({
                "sheet": sheet,
                "addr": raw_addr,
                "empty": cell.is_none(),
                "value": value,
                "formula": formula_src,
                "bold": cell.is_some_and(|c| c.bold),
                "error": error,
            })))
        }
        "get-sheets" => {
            let names: Vec<&str> = wb.sheets.iter().map(|s| s.name.as_str()).collect();
            Ok(Outcome::query(
                json!({"sheets": names, "count": names.len()}),
            ))
        }
        "get-range-values" => {
            let s = sheet_or_missing(&wb, sheet)?;
            let raw = args.text("range");
            let range = range_or_missing(raw)?;
            let mut values = Vec::new();
            let (mut count, mut sum, mut errors) = (0i64, 0.0f64, 0i64);
            for a in range.cells() {
                if !s.cells.contains_key(&a) {
                    values.push(Value::Null);
                    continue;
                }
                count += 1;
                match formula::eval_formula(&wb, sheet, a) {
                    Ok(v) => {
                        if let Some(x) = v.as_f64() {
                            sum += x;
                        }
                        values.push(v.to_json());
                    }
                    Err(_) => {
                        errors += 1;
                        values.push(Value::Null);
                    }
                }
            }
            let sum = crate::apps::scalar::canonical_number(sum);
            Ok(Outcome::query(json!({
                "sheet": sheet, "range": raw, "values": values,
                "count": count, "sum": sum, "errors": errors,
            })))
        }
        "get-sheet-dimensions" => {
            let s = sheet_or_missing(&wb, sheet)?;
            let (rows, cols) = s.dimensions();
            Ok(Outcome::query(
                json!({"sheet": sheet, "rows": rows, "cols": cols}),
            ))
        }
        other => unreachable!("endpoint {other} is registered but not implemented"),
    }
}

/// Keys seen on cell objects in any top-level JSON file shaped like a workbook.
pub(crate) fn observe_columns(resource: &str, root: &Path) -> Vec<String> {
    if !resource.starts_with("column:cell.") {
        return Vec::new();
    }
    let mut keys = BTreeSet::new();
    let Ok(entries) = std::fs::read_dir(root) else {
        return Vec::new();
    };
    let mut files: Vec<_> = entries.filter_map(Result::ok).map(|e| e.path()).collect();
    files.sort();
    for path in files.into_iter().filter(|p| p.is_file()) {
        let Ok(text) = std::fs::read_to_string(&path) else {
            continue;
        };
        let Ok(doc) = serde_json::from_str::<Value>(&text) else {
            continue;
        };
        for sheet in doc
            .get("sheets")
            .and_then(Value::as_array)
            .into_iter()
            .flatten()
        {
            for cell in sheet
                .get("cells")
                .and_then(Value::as_object)
                .into_iter()
                .flat_map(|m| m.values())
            {
                for k in cell.as_object().into_iter().flat_map(|o| o.keys()) {
                    keys.insert(k.clone());
                }
            }
        }
    }
    keys.into_iter().collect()
}
