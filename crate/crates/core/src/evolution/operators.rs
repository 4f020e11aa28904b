//! The closed registry of binding repair operators and candidate selection.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::lessons::BindingDelta;
use super::{Attribution, DisagreementRecord};
use crate::apps::store::StoreName;
use crate::verifier::{
    file_role_is_dir, observe_physical_columns, JoinSpec, VerdictRecord, VerifierConfig,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepairOperator {
    StoreRebinding,
    JoinPath,
    PathTemplate,
    ColumnMapping,
}

pub const REGISTRY: [RepairOperator; 4] = [
    RepairOperator::StoreRebinding,
    RepairOperator::JoinPath,
    RepairOperator::PathTemplate,
    RepairOperator::ColumnMapping,
];

impl RepairOperator {
    pub fn as_str(self) -> &'static str {
        match self {
            RepairOperator::StoreRebinding => "store_rebinding",
            RepairOperator::JoinPath => "join_path",
            RepairOperator::PathTemplate => "path_template",
            RepairOperator::ColumnMapping => "column_mapping",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Candidate {
    pub operator: RepairOperator,
    pub deltas: Vec<BindingDelta>,
    /// Proposed from failure evidence rather than by enumeration.
    pub guided: bool,
    pub rationale: String,
}

fn delta(cfg: &VerifierConfig, resource: &str, new: String) -> BindingDelta {
    BindingDelta {
        resource: resource.to_string(),
        old: cfg.bindings.get(resource).cloned(),
        new: Some(new),
    }
}

/// Moves `table` to the other store, carrying every join side that names it.
fn rebind_store(cfg: &VerifierConfig, resource: &str) -> Option<(Vec<BindingDelta>, String)> {
    let table = resource.strip_prefix("table:")?;
    let current: StoreName = cfg.bindings.get(resource)?.parse().ok()?;
    let target = current.other();
    let mut deltas = vec![delta(cfg, resource, target.to_string())];
    for (k, raw) in cfg.bindings.range("join:".to_string()..) {
        if !k.starts_with("join:") {
            break;
        }
        let Ok(mut j) = raw.parse::<JoinSpec>() else {
            continue;
        };
        let mut touched = false;
        for side in [&mut j.left, &mut j.right] {
            if side.table == table && side.store == current {
                side.store = target;
                touched = true;
            }
        }
        if touched {
            deltas.push(delta(cfg, k, j.to_string()));
        }
    }
    Some((
        deltas,
        format!("table `{table}` lives in the {target} store, not {current}"),
    ))
}

/// Flips the store of the join side naming `table` (either side when `None`).
fn rebind_join(
    cfg: &VerifierConfig,
    resource: &str,
    table: Option<&str>,
) -> Vec<(Vec<BindingDelta>, String)> {
    let Some(Ok(j)) = cfg.bindings.get(resource).map(|r| r.parse::<JoinSpec>()) else {
        return Vec::new();
    };
    let mut out = Vec::new();
    for right in [false, true] {
        let mut next = j.clone();
        let side = if right {
            &mut next.right
        } else {
            &mut next.left
        };
        if table.is_some_and(|t| t != side.table) {
            continue;
        }
        side.store = side.store.other();
        let why = format!(
            "join side `{}` resolves in the {} store",
            side.table, side.store
        );
        out.push((vec![delta(cfg, resource, next.to_string())], why));
    }
    out
}

/// Top-level sandbox entries of the right kind that no other file role claims.
fn rebind_path(
    cfg: &VerifierConfig,
    resource: &str,
    root: &Path,
) -> Vec<(Vec<BindingDelta>, String)> {
    let want_dir = file_role_is_dir(resource);
    let claimed: BTreeSet<&String> = cfg
        .bindings
        .iter()
        .filter(|(k, _)| k.starts_with("file:"))
        .map(|(_, v)| v)
        .collect();
    let Ok(entries) = std::fs::read_dir(root) else {
        return Vec::new();
    };
    let mut names: Vec<String> = entries
        .filter_map(Result::ok)
        .filter(|e| e.path().is_dir() == want_dir)
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| !n.starts_with('.'))
        .collect();
    names.sort();
    names
        .into_iter()
        .filter(|n| !claimed.contains(n))
        .map(|n| {
            let why = format!("`{resource}` is stored at `{n}`");
            (vec![delta(cfg, resource, n)], why)
        })
        .collect()
}

/// Physical columns observed for the resource's table that no sibling
/// column binding already claims.
fn rebind_column(
    cfg: &VerifierConfig,
    resource: &str,
    root: &Path,
) -> Vec<(Vec<BindingDelta>, String)> {
    let Some((table, _)) = resource
        .strip_prefix("column:")
        .and_then(|r| r.split_once('.'))
    else {
        return Vec::new();
    };
    let prefix = format!("column:{table}.");
    let claimed: BTreeSet<&String> = cfg
        .bindings
        .iter()
        .filter(|(k, _)| k.starts_with(&prefix) && k.as_str() != resource)
        .map(|(_, v)| v)
        .collect();
    let current = cfg.bindings.get(resource);
    observe_physical_columns(cfg.app_id, resource, root)
        .into_iter()
        .filter(|c| !claimed.contains(c) && Some(c) != current)
        .map(|c| {
            let why = format!("`{resource}` is physically named `{c}`");
            (vec![delta(cfg, resource, c)], why)
        })
        .collect()
}

fn guided(cfg: &VerifierConfig, failure: &Value, root: &Path) -> Vec<Candidate> {
    let kind = failure
        .get("kind")
        .and_then(Value::as_str)
        .unwrap_or_default();
    let Some(resource) = failure.get("resource").and_then(Value::as_str) else {
        return Vec::new();
    };
    let mk = |operator, items: Vec<(Vec<BindingDelta>, String)>| -> Vec<Candidate> {
        items
            .into_iter()
            .map(|(deltas, rationale)| Candidate {
                operator,
                deltas,
                guided: true,
                rationale,
            })
            .collect()
    };
    match (kind, resource.split_once(':').map(|(k, _)| k)) {
        ("missing_table", Some("table")) => mk(
            RepairOperator::StoreRebinding,
            rebind_store(cfg, resource).into_iter().collect(),
        ),
        ("missing_table", Some("join")) => {
            let table = failure.get("table").and_then(Value::as_str);
            mk(RepairOperator::JoinPath, rebind_join(cfg, resource, table))
        }
        ("missing_file" | "malformed", Some("file")) => mk(
            RepairOperator::PathTemplate,
            rebind_path(cfg, resource, root),
        ),
        ("missing_column", Some("column")) => mk(
            RepairOperator::ColumnMapping,
            rebind_column(cfg, resource, root),
        ),
        _ => Vec::new(),
    }
}

fn exhaustive(cfg: &VerifierConfig, root: &Path) -> Vec<Candidate> {
    let mut out = Vec::new();
    for op in REGISTRY {
        for resource in cfg.bindings.keys() {
            let items = match op {
                RepairOperator::StoreRebinding if resource.starts_with("table:") => {
                    rebind_store(cfg, resource).into_iter().collect()
                }
                RepairOperator::JoinPath if resource.starts_with("join:") => {
                    rebind_join(cfg, resource, None)
                }
                RepairOperator::PathTemplate if resource.starts_with("file:") => {
                    rebind_path(cfg, resource, root)
                }
                RepairOperator::ColumnMapping if resource.starts_with("column:") => {
                    rebind_column(cfg, resource, root)
                }
                _ => Vec::new(),
            };
            out.extend(items.into_iter().map(|(deltas, rationale)| Candidate {
                operator: op,
                deltas,
                guided: false,
                rationale,
            }));
        }
    }
    out
}

/// Repair candidates in trial order: evidence-guided ones for the
/// verifier-side disagreements first, then the whole registry enumerated.
pub fn propose_candidates(
    cfg: &VerifierConfig,
    disagreements: &[DisagreementRecord],
    verdicts: &[VerdictRecord],
    root: &Path,
) -> Vec<Candidate> {
    let mut out: Vec<Candidate> = Vec::new();
    for d in disagreements
        .iter()
        .filter(|d| d.classification == Attribution::VerifierWrong)
    {
        let verdict = verdicts
            .iter()
            .find(|v| v.criterion_id.as_deref() == Some(d.criterion_id.as_str()));
        if let Some(failure) = verdict.and_then(VerdictRecord::failure) {
            out.extend(guided(cfg, failure, root));
        }
    }
    out.extend(exhaustive(cfg, root));
    let mut seen = BTreeSet::new();
    out.retain(|c| seen.insert(c.deltas.clone()));
    out
}
