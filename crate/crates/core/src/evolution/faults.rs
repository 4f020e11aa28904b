//! Catalog of verifier faults for calibration and injection.

use serde::Serialize;

use crate::apps::AppId;
use crate::task::TaskInstance;
use crate::verifier::{endpoint, VerifierConfig};

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Fault {
    pub id: String,
    pub app_id: AppId,
    /// Binding rewrites that make up the fault.
    pub changes: Vec<(String, String)>,
    /// Whether a registered repair operator can undo it.
    pub covered: bool,
}

impl Fault {
    fn new(app: AppId, id: &str, changes: &[(&str, &str)], covered: bool) -> Self {
        Fault {
            id: id.to_string(),
            app_id: app,
            changes: changes
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
            covered,
        }
    }

    /// `cfg` with the fault's bindings written over it; revision unchanged.
    pub fn inject(&self, cfg: &VerifierConfig) -> VerifierConfig {
        let mut out = cfg.clone();
        for (k, v) in &self.changes {
            out.bindings.insert(k.clone(), v.clone());
        }
        out
    }

    /// Whether some criterion of `task` reads a resource the fault touches.
    pub fn applies_to(&self, task: &TaskInstance) -> bool {
        task.app_id == self.app_id
            && task.criteria.iter().any(|c| {
                endpoint(task.app_id, &c.endpoint).is_some_and(|spec| {
                    self.changes.iter().any(|(r, _)| {
                        spec.reads.contains(&r.as_str()) || spec.logic.contains(&r.as_str())
                    })
                })
            })
    }
}

/// Faults for `app`: binding faults a repair operator covers, followed by
/// the two logic faults no operator covers.
pub fn fault_catalog(app: AppId) -> Vec<Fault> {
    let f = |id, changes: &[(&str, &str)]| Fault::new(app, id, changes, true);
    let mut out = match app {
        AppId::Media => vec![
            f(
                "store:tags",
                &[
                    ("table:tags", "library"),
                    (
                        "join:image_tags",
                        "tagged_images@library.tagid=tags@library.id",
                    ),
                ],
            ),
            f("store:images", &[("table:images", "data")]),
            f(
                "join:image_tags",
                &[(
                    "join:image_tags",
                    "tagged_images@library.tagid=tags@library.id",
                )],
            ),
            f("path:data_store", &[("file:data_store", "data.db")]),
            f(
                "path:library_store",
                &[("file:library_store", "library.db")],
            ),
            f("column:tags.name", &[("column:tags.name", "label")]),
            f("column:images.rating", &[("column:images.rating", "stars")]),
        ],
        AppId::Vault => vec![f("path:vault_root", &[("file:vault_root", "notes")])],
        AppId::Workbook => vec![
            f("path:workbook", &[("file:workbook", "book.json")]),
            f("column:cell.formula", &[("column:cell.formula", "formula")]),
            f("column:cell.value", &[("column:cell.value", "value")]),
            f("column:cell.style", &[("column:cell.style", "format")]),
        ],
    };
    out.push(Fault::new(
        app,
        "logic:inverted_comparison",
        &[("logic:comparison", "ne")],
        false,
    ));
    out.push(Fault::new(
        app,
        "logic:count_off_by_one",
        &[("logic:count_offset", "1")],
        false,
    ));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn media_store_fault_is_the_single_store_layout() {
        let fault = &fault_catalog(AppId::Media)[0];
        assert_eq!(
            fault.inject(&VerifierConfig::shipped(AppId::Media)),
            VerifierConfig::media_v1()
        );
    }

    #[test]
    fn every_app_has_covered_and_uncovered_faults() {
        for app in AppId::ALL {
            let cat = fault_catalog(app);
            assert!(cat.iter().any(|f| f.covered));
            assert_eq!(cat.iter().filter(|f| !f.covered).count(), 2);
            let shipped = VerifierConfig::shipped(app);
            for fault in cat.iter().filter(|f| f.covered) {
                for (k, _) in &fault.changes {
                    assert!(
                        shipped.bindings.contains_key(k),
                        "{} rewrites unbound {k}",
                        fault.id
                    );
                }
            }
        }
    }
}
