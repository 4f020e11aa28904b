//! Ground-truth inspector: judges criteria straight from typed app state.
//! It never reads a verifier configuration.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::apps::formula::{self, parse_formula, RangeRef};
use crate::apps::media::MediaLibraryState;
use crate::apps::scalar::canonical_number;
use crate::apps::vault::{note_stem, VaultState};
use crate::apps::workbook::{CellAddr, CellContent, WorkbookState};
use crate::apps::{load_or_empty, AppState, Scalar, StateError};
use crate::task::{CheckSpec, TaskInstance};

/// The reference judgment for one criterion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceVerdict {
    pub criterion_id: String,
    pub passed: bool,
    pub basis: Value,
}

/// Anything that can produce reference verdicts from a frozen final state.
pub trait ReferenceJudge {
    fn judge_id(&self) -> &str;
    fn evaluate(
        &self,
        task: &TaskInstance,
        final_state: &Path,
    ) -> Result<Vec<ReferenceVerdict>, StateError>;
}

#[derive(Clone, Copy, Debug, Default)]
pub struct GroundTruthInspector;

impl ReferenceJudge for GroundTruthInspector {
    fn judge_id(&self) -> &str {
        "ground_truth_inspector"
    }

    fn evaluate(
        &self,
        task: &TaskInstance,
        final_state: &Path,
    ) -> Result<Vec<ReferenceVerdict>, StateError> {
        let state = load_or_empty(task.app_id, final_state)?;
        Ok(inspect_state(task, &state))
    }
}

pub fn reference_evaluate(
    task: &TaskInstance,
    final_state: &Path,
) -> Result<Vec<ReferenceVerdict>, StateError> {
    GroundTruthInspector.evaluate(task, final_state)
}

/// One reference verdict per criterion over an in-memory state.
pub fn inspect_state(task: &TaskInstance, state: &AppState) -> Vec<ReferenceVerdict> {
    task.criteria
        .iter()
        .map(|c| {
            let (passed, basis) = judge(state, c);
            ReferenceVerdict {
                criterion_id: c.criterion_id.clone(),
                passed,
                basis,
            }
        })
        .collect()
}

enum Finding {
    Check(bool, Value),
    Query(Value),
    Absent(String),
}

fn judge(state: &AppState, c: &CheckSpec) -> (bool, Value) {
    let a = A(&c.args);
    let finding = match state {
        AppState::Media(m) => media(m, &c.endpoint, &a),
        AppState::Vault(v) => vault(v, &c.endpoint, &a),
        AppState::Workbook(w) => workbook(w, &c.endpoint, &a),
    };
    match finding {
        Finding::Check(passed, basis) => (passed, basis),
        Finding::Query(basis) => match &c.expect {
            Some(e) => (e.evaluate(&basis).unwrap_or(false), basis),
            None => (false, basis),
        },
        Finding::Absent(why) => (false, json!({"absent": why})),
    }
}

struct A<'a>(&'a BTreeMap<String, String>);

impl A<'_> {
    fn s(&self, k: &str) -> &str {
        self.0.get(k).map(String::as_str).unwrap_or_default()
    }

    fn n(&self, k: &str) -> i64 {
        self.0
            .get(k)
            .and_then(|v| v.trim().parse().ok())
            .unwrap_or_default()
    }

    fn has(&self, k: &str) -> bool {
        self.0.contains_key(k)
    }
}

fn media(m: &MediaLibraryState, endpoint: &str, a: &A) -> Finding {
    let filename = a.s("filename");
    let image = m.image(filename);
    let tags = m.tags_of(filename);
    let tagged_with = |tag: &str| -> Vec<String> {
        let mut v: Vec<String> = m
            .images()
            .into_iter()
            .filter(|i| m.tags_of(&i.filename).contains(tag))
            .map(|i| i.filename)
            .collect();
        v.sort();
        v
    };
    match endpoint {
        "check-image-exists" => Finding::Check(image.is_some(), json!({"image": filename})),
        "check-image-count" => {
            let n = m.images().len() as i64;
            Finding::Check(n == a.n("count"), json!({"images": n}))
        }
        "check-tag-exists" => {
            Finding::Check(m.tag(a.s("name")).is_some(), json!({"tags": names(m)}))
        }
        "check-image-has-tag" => Finding::Check(tags.contains(a.s("tag")), json!({"tags": tags})),
        "check-image-rating" => {
            let r = image.map(|i| i.rating);
            Finding::Check(r == Some(a.n("rating")), json!({"rating": r}))
        }
        "check-tag-usage-count" => {
            let n = tagged_with(a.s("tag")).len() as i64;
            Finding::Check(n == a.n("count"), json!({"uses": n}))
        }
        "check-rating-at-least" => {
            let r = image.map(|i| i.rating);
            Finding::Check(r.is_some_and(|r| r >= a.n("min")), json!({"rating": r}))
        }
        "check-image-untagged" => {
            Finding::Check(image.is_some() && tags.is_empty(), json!({"tags": tags}))
        }
        "get-image-info" => match image {
            Some(i) => Finding::Query(json!({
                "filename": filename, "id": i.id, "rating": i.rating, "tags": tags,
            })),
            None => Finding::Absent(format!("image {filename}")),
        },
        "get-tags" => {
            let mut t = names(m);
            t.sort();
            Finding::Query(json!({"count": t.len(), "tags": t}))
        }
        "get-images" => {
            let min = a.has("min_rating").then(|| a.n("min_rating"));
            let mut v: Vec<String> = m
                .images()
                .into_iter()
                .filter(|i| min.is_none_or(|x| i.rating >= x))
                .map(|i| i.filename)
                .collect();
            v.sort();
            Finding::Query(json!({"count": v.len(), "images": v}))
        }
        "get-tag-images" => {
            let tag = a.s("tag");
            if m.tag(tag).is_none() {
                return Finding::Absent(format!("tag {tag}"));
            }
            let v = tagged_with(tag);
            Finding::Query(json!({"tag": tag, "count": v.len(), "images": v}))
        }
        other => Finding::Absent(format!("endpoint {other}")),
    }
}

fn names(m: &MediaLibraryState) -> Vec<String> {
    m.tags().into_iter().map(|t| t.name).collect()
}

fn vault(v: &VaultState, endpoint: &str, a: &A) -> Finding {
    let path = a.s("path");
    let note = v.notes.get(path);
    match endpoint {
        "check-folder-exists" => {
            Finding::Check(v.folders.contains(path), json!({"folders": v.folders}))
        }
        "check-note-exists" => Finding::Check(note.is_some(), json!({"note": path})),
        "check-note-count" => Finding::Check(
            v.notes.len() as i64 == a.n("count"),
            json!({"notes": v.notes.len()}),
        ),
        "check-note-links-to" => {
            let links = note.map(|n| n.links().clone()).unwrap_or_default();
            Finding::Check(links.contains(a.s("target")), json!({"links": links}))
        }
        "check-note-has-tag" => {
            let tags = note.map(|n| n.tags().clone()).unwrap_or_default();
            Finding::Check(
                tags.contains(a.s("tag").trim_start_matches('#')),
                json!({"tags": tags}),
            )
        }
        "check-frontmatter-field" => {
            let value = note.and_then(|n| n.frontmatter().get(a.s("key")));
            Finding::Check(
                value.is_some_and(|x| x == a.s("value")),
                json!({"value": value}),
            )
        }
        "check-note-contains" => Finding::Check(
            note.is_some_and(|n| n.body().contains(a.s("text"))),
            json!({"note": path}),
        ),
        "check-folder-note-count" => {
            let n = v
                .notes
                .keys()
                .filter(|p| p.rsplit_once('/').map_or("", |(dir, _)| dir) == path)
                .count() as i64;
            Finding::Check(
                v.folders.contains(path) && n == a.n("count"),
                json!({"direct_notes": n}),
            )
        }
        "get-note" => match note {
            Some(n) => Finding::Query(json!({
                "path": path, "frontmatter": n.frontmatter(), "tags": n.tags(),
                "links": n.links(), "body": n.body(),
            })),
            None => Finding::Absent(format!("note {path}")),
        },
        "get-folders" => Finding::Query(json!({"folders": v.folders, "count": v.folders.len()})),
        "get-notes" => {
            let notes: Vec<&String> = if a.has("folder") {
                let folder = a.s("folder");
                if !v.folders.contains(folder) {
                    return Finding::Absent(format!("folder {folder}"));
                }
                v.notes
                    .keys()
                    .filter(|p| p.starts_with(&format!("{folder}/")))
                    .collect()
            } else {
                v.notes.keys().collect()
            };
            Finding::Query(json!({"notes": notes, "count": notes.len()}))
        }
        "get-backlinks" => {
            let name = a.s("name");
            let sources: Vec<&String> = v
                .notes
                .iter()
                .filter(|(p, n)| note_stem(p) != name && n.links().contains(name))
                .map(|(p, _)| p)
                .collect();
            Finding::Query(json!({"name": name, "sources": sources, "count": sources.len()}))
        }
        other => Finding::Absent(format!("endpoint {other}")),
    }
}

fn squash(s: &str) -> String {
    s.chars()
        .filter(|c| !c.is_whitespace())
        .flat_map(char::to_uppercase)
        .collect()
}

fn workbook(w: &WorkbookState, endpoint: &str, a: &A) -> Finding {
    let sheet_name = a.s("sheet");
    let sheet = w.sheet(sheet_name);
    let addr = CellAddr::parse(a.s("addr"));
    let cell = match (sheet, addr) {
        (Some(s), Some(ad)) => s.cells.get(&ad),
        _ => None,
    };
    let formula_src = cell.and_then(|c| match &c.content {
        CellContent::Formula(f) => Some(f.as_str()),
        CellContent::Value(_) => None,
    });
    let value = || -> (Value, Value) {
        match (cell, addr) {
            (Some(_), Some(ad)) => match formula::eval_formula(w, sheet_name, ad) {
                Ok(v) => (v.to_json(), Value::Null),
                Err(e) => (Value::Null, json!(e.code())),
            },
            _ => (Value::Null, Value::Null),
        }
    };
    match endpoint {
        "check-sheet-exists" => Finding::Check(sheet.is_some(), json!({"sheet": sheet_name})),
        "check-cell-value" => {
            let want = Scalar::parse_loose(a.s("value"));
            let (v, _) = value();
            let eq = Scalar::from_json(&v).is_some_and(|x| x.canonical_eq(&want));
            Finding::Check(sheet.is_some() && eq, json!({"value": v}))
        }
        "check-cell-formula" => {
            let needle = squash(a.s("contains"));
            Finding::Check(
                formula_src.is_some_and(|f| squash(f).contains(&needle)),
                json!({"formula": formula_src}),
            )
        }
        "check-cell-bold" => Finding::Check(
            cell.is_some_and(|c| c.bold),
            json!({"cell": cell.is_some()}),
        ),
        "check-cell-references" => {
            let refs: BTreeSet<String> = match formula_src.map(parse_formula) {
                Some(Ok(e)) => {
                    let (cells, ranges) = formula::references(&e);
                    cells
                        .iter()
                        .map(|c| c.label())
                        .chain(ranges.iter().map(|r| r.label()))
                        .collect()
                }
                _ => BTreeSet::new(),
            };
            let want = squash(a.s("ref"));
            Finding::Check(
                refs.iter().any(|r| squash(r) == want),
                json!({"references": refs}),
            )
        }
        "check-sheet-count" => Finding::Check(
            w.sheets.len() as i64 == a.n("count"),
            json!({"sheets": w.sheets.len()}),
        ),
        "check-cell-empty" => Finding::Check(
            sheet.is_some() && addr.is_some() && cell.is_none(),
            json!({"cell": cell.is_some()}),
        ),
        "check-range-formulas" => {
            let Some(range) = RangeRef::parse_plain(a.s("range")) else {
                return Finding::Absent(format!("range {}", a.s("range")));
            };
            let all = sheet.is_some_and(|s| {
                range.cells().all(|ad| {
                    matches!(
                        s.cells.get(&ad).map(|c| &c.content),
                        Some(CellContent::Formula(_))
                    )
                })
            });
            Finding::Check(all, json!({"range": range.label()}))
        }
        "get-cell" => {
            let (Some(_), Some(_)) = (sheet, addr) else {
                return Finding::Absent(format!("cell {sheet_name}!{}", a.s("addr")));
            };
            let (v, err) = value();
            Finding::Query(json!({
                "sheet": sheet_name, "addr": a.s("addr"), "empty": cell.is_none(), "value": v,
                "formula": formula_src, "bold": cell.is_some_and(|c| c.bold), "error": err,
            }))
        }
        "get-sheets" => {
            let names: Vec<&str> = w.sheets.iter().map(|s| s.name.as_str()).collect();
            Finding::Query(json!({"sheets": names, "count": names.len()}))
        }
        "get-range-values" => {
            let (Some(s), Some(range)) = (sheet, RangeRef::parse_plain(a.s("range"))) else {
                return Finding::Absent(format!("range {sheet_name}!{}", a.s("range")));
            };
            let mut values = Vec::new();
            let (mut count, mut sum, mut errors) = (0i64, 0.0f64, 0i64);
            for ad in range.cells() {
                if !s.cells.contains_key(&ad) {
                    values.push(Value::Null);
                    continue;
                }
                count += 1;
                match formula::eval_formula(w, sheet_name, ad) {
                    Ok(v) => {
                        sum += v.as_f64().unwrap_or(0.0);
                        values.push(v.to_json());
                    }
                    Err(_) => {
                        errors += 1;
                        values.push(Value::Null);
                    }
                }
            }
            Finding::Query(json!({
                "sheet": sheet_name, "range": a.s("range"), "values": values,
                "count": count, "sum": canonical_number(sum), "errors": errors,
            }))
        }
        "get-sheet-dimensions" => match sheet {
            Some(s) => {
                let (rows, cols) = s.dimensions();
                Finding::Query(json!({"sheet": sheet_name, "rows": rows, "cols": cols}))
            }
            None => Finding::Absent(format!("sheet {sheet_name}")),
        },
        other => Finding::Absent(format!("endpoint {other}")),
    }
}
