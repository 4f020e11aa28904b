//! Fixture-driven self-test that gates a verifier configuration.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::schema::validate_verdict;
use super::{endpoint, list_endpoints, run_endpoint, EndpointKind, ProtocolError, VerifierConfig};
use crate::apps::{self, directory_digest, AppAction, AppId, AppState};

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Expected {
    Verdict { ok: bool, passed: Option<bool> },
    MissingArgument,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FixtureCategory {
    Positive,
    Negative,
    MissingArgument,
    NonexistentPath,
}

#[derive(Clone, Debug, Serialize)]
pub struct Fixture {
    pub name: String,
    /// Actions applied to the empty app state; `None` is a sandbox with no app files.
    pub seed: Option<Vec<AppAction>>,
    pub endpoint: String,
    pub args: BTreeMap<String, String>,
    pub expected: Expected,
}

impl Fixture {
    pub fn category(&self) -> FixtureCategory {
        match (&self.expected, &self.seed) {
            (Expected::MissingArgument, _) => FixtureCategory::MissingArgument,
            (_, None) => FixtureCategory::NonexistentPath,
            (Expected::Verdict { ok: true, passed }, _) if *passed != Some(false) => {
                FixtureCategory::Positive
            }
            _ => FixtureCategory::Negative,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct FixturePlan {
    pub app_id: AppId,
    pub fixtures: Vec<Fixture>,
}

impl FixturePlan {
    /// Endpoints lacking a positive or a negative fixture, plus plan-level gaps.
    pub fn coverage_gaps(&self) -> Vec<String> {
        let mut gaps = Vec::new();
        for e in list_endpoints(self.app_id) {
            let cats: BTreeSet<FixtureCategory> = self
                .fixtures
                .iter()
                .filter(|f| f.endpoint == e.name)
                .map(Fixture::category)
                .collect();
            if !cats.contains(&FixtureCategory::Positive) {
                gaps.push(format!("{}: no positive fixture", e.name));
            }
            if !cats.contains(&FixtureCategory::Negative)
                && !cats.contains(&FixtureCategory::NonexistentPath)
            {
                gaps.push(format!("{}: no negative fixture", e.name));
            }
        }
        let all: BTreeSet<FixtureCategory> = self.fixtures.iter().map(Fixture::category).collect();
        if !all.contains(&FixtureCategory::MissingArgument) {
            gaps.push("plan: no missing-argument fixture".into());
        }
        if !all.contains(&FixtureCategory::NonexistentPath) {
            gaps.push("plan: no nonexistent-path fixture".into());
        }
        gaps
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct FixtureOutcome {
    pub name: String,
    pub endpoint: String,
    pub category: FixtureCategory,
    pub matched: bool,
    pub schema_valid: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SelftestReport {
    pub app_id: AppId,
    pub revision: u64,
    pub coverage_gaps: Vec<String>,
    pub fixtures_total: usize,
    pub fixtures_matched: usize,
    pub verdicts_schema_valid: bool,
    pub read_only: bool,
    pub gated: bool,
    pub outcomes: Vec<FixtureOutcome>,
}

/// Runs every fixture. The verifier is gated only when the plan has no
/// coverage gaps, every fixture matches, every verdict is schema-valid and
/// no sandbox byte changed.
pub fn run_verifier_selftest(cfg: &VerifierConfig, plan: &FixturePlan) -> SelftestReport {
    let coverage_gaps = plan.coverage_gaps();
    let mut sandboxes: Vec<(Option<Vec<AppAction>>, tempfile::TempDir, Option<String>)> =
        Vec::new();
    let mut outcomes = Vec::new();
    for f in &plan.fixtures {
        let idx = match sandboxes.iter().position(|(seed, ..)| *seed == f.seed) {
            Some(i) => i,
            None => match materialize(plan.app_id, f.seed.as_deref()) {
                Ok(dir) => {
                    let digest = directory_digest(dir.path()).ok();
                    sandboxes.push((f.seed.clone(), dir, digest));
                    sandboxes.len() - 1
                }
                Err(msg) => {
                    outcomes.push(FixtureOutcome {
                        name: f.name.clone(),
                        endpoint: f.endpoint.clone(),
                        category: f.category(),
                        matched: false,
                        schema_valid: true,
                        detail: Some(format!("fixture seed failed to materialize: {msg}")),
                    });
                    continue;
                }
            },
        };
        let root = sandboxes[idx].1.path();
        outcomes.push(run_fixture(cfg, f, root));
    }
    let read_only = sandboxes
        .iter()
        .all(|(_, dir, before)| before.is_some() && directory_digest(dir.path()).ok() == *before);
    let fixtures_matched = outcomes.iter().filter(|o| o.matched).count();
    let verdicts_schema_valid = outcomes.iter().all(|o| o.schema_valid);
    SelftestReport {
        app_id: plan.app_id,
        revision: cfg.revision,
        gated: coverage_gaps.is_empty()
            && fixtures_matched == outcomes.len()
            && verdicts_schema_valid
            && read_only
            && cfg.app_id == plan.app_id,
        coverage_gaps,
        fixtures_total: outcomes.len(),
        fixtures_matched,
        verdicts_schema_valid,
        read_only,
        outcomes,
    }
}

fn materialize(app: AppId, seed: Option<&[AppAction]>) -> Result<tempfile::TempDir, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    if let Some(actions) = seed {
        let mut state = AppState::empty(app);
        for a in actions {
            state = apps::apply_action(&state, a).map_err(|e| e.to_string())?;
        }
        apps::persist_app_state(&state, dir.path()).map_err(|e| e.to_string())?;
    }
    Ok(dir)
}

fn run_fixture(cfg: &VerifierConfig, f: &Fixture, root: &std::path::Path) -> FixtureOutcome {
    let spec = endpoint(cfg.app_id, &f.endpoint);
    let result = run_endpoint(cfg, &f.endpoint, &f.args, root);
    let (matched, schema_valid, detail) = match (&f.expected, result) {
        (Expected::MissingArgument, Err(ProtocolError::MissingArgument { .. })) => {
            (true, true, None)
        }
        (Expected::MissingArgument, other) => (
            false,
            true,
            Some(format!("expected missing-argument, got {other:?}")),
        ),
        (Expected::Verdict { ok, passed }, Ok(v)) => {
            let problems =
                validate_verdict(&serde_json::to_value(&v).expect("verdict serializes"), spec);
            let passed_matches = match (spec.map(|s| s.kind()), passed) {
                (Some(EndpointKind::Query), None) => true,
                _ => v.passed == *passed,
            };
            let matched = v.ok == *ok && passed_matches;
            let detail = (!matched || !problems.is_empty()).then(|| {
                format!(
                    "got ok={} passed={:?} error={:?}; schema problems: {problems:?}",
                    v.ok, v.passed, v.error
                )
            });
            (matched, problems.is_empty(), detail)
        }
        (Expected::Verdict { .. }, Err(e)) => (false, true, Some(format!("protocol error: {e}"))),
    };
    FixtureOutcome {
        name: f.name.clone(),
        endpoint: f.endpoint.clone(),
        category: f.category(),
        matched,
        schema_valid,
        detail,
    }
}

fn act(app: AppId, verb: &str, params: &[(&str, apps::Scalar)]) -> AppAction {
    let mut a = AppAction::new(app, verb);
    for (k, v) in params {
        a.params.insert(k.to_string(), v.clone());
    }
    a
}

fn standard_seed(app: AppId) -> Vec<AppAction> {
    use apps::Scalar as S;
    let t = |s: &str| S::from(s);
    match app {
        AppId::Media => {
            let m = |verb, p: &[(&str, S)]| act(AppId::Media, verb, p);
            vec![
                m("import_image", &[("filename", t("img_001.png"))]),
                m("import_image", &[("filename", t("img_002.png"))]),
                m("import_image", &[("filename", t("img_003.png"))]),
                m("create_tag", &[("name", t("batch_processed"))]),
                m("create_tag", &[("name", t("archive"))]),
                m(
                    "attach_tag",
                    &[
                        ("filename", t("img_001.png")),
                        ("tag", t("batch_processed")),
                    ],
                ),
                m(
                    "attach_tag",
                    &[
                        ("filename", t("img_002.png")),
                        ("tag", t("batch_processed")),
                    ],
                ),
                m(
                    "set_rating",
                    &[("filename", t("img_001.png")), ("rating", S::from(3))],
                ),
                m(
                    "set_rating",
                    &[("filename", t("img_002.png")), ("rating", S::from(5))],
                ),
            ]
        }
        AppId::Vault => {
            let v = |verb, p: &[(&str, S)]| act(AppId::Vault, verb, p);
            vec![
                v("create_folder", &[("path", t("Italian"))]),
                v("create_folder", &[("path", t("Asian"))]),
                v(
                    "create_note",
                    &[
                        ("path", t("Italian/Carbonara.md")),
                        (
                            "body",
                            t("Classic Roman pasta. #pasta #italian\nSee [[Cacio e Pepe]].\n"),
                        ),
                    ],
                ),
                v(
                    "create_note",
                    &[
                        ("path", t("Italian/Cacio e Pepe.md")),
                        ("body", t("#pasta\n")),
                    ],
                ),
                v(
                    "set_frontmatter",
                    &[
                        ("path", t("Italian/Carbonara.md")),
                        ("key", t("cuisine")),
                        ("value", t("Italian")),
                    ],
                ),
                v(
                    "create_note",
                    &[("path", t("Index.md")), ("body", t("- [[Carbonara]]\n"))],
                ),
            ]
        }
        AppId::Workbook => {
            let w = |verb, p: &[(&str, S)]| act(AppId::Workbook, verb, p);
            let tiers = "=IF(C2>20000, 0.10, IF(C2>=10000, 0.08, 0.05))";
            vec![
                w("create_sheet", &[("name", t("Sales"))]),
                w(
                    "set_cell",
                    &[
                        ("sheet", t("Sales")),
                        ("addr", t("A1")),
                        ("value", t("Rep")),
                        ("bold", S::Bool(true)),
                    ],
                ),
                w(
                    "set_cell",
                    &[
                        ("sheet", t("Sales")),
                        ("addr", t("C2")),
                        ("value", S::from(25000)),
                    ],
                ),
                w(
                    "set_cell",
                    &[
                        ("sheet", t("Sales")),
                        ("addr", t("C3")),
                        ("value", S::from(10000)),
                    ],
                ),
                w(
                    "set_cell",
                    &[
                        ("sheet", t("Sales")),
                        ("addr", t("D2")),
                        ("formula", t(tiers)),
                    ],
                ),
                w(
                    "set_cell",
                    &[
                        ("sheet", t("Sales")),
                        ("addr", t("D3")),
                        ("formula", t(&tiers.replace("C2", "C3"))),
                    ],
                ),
                w("create_sheet", &[("name", t("Summary"))]),
                w(
                    "set_cell",
                    &[
                        ("sheet", t("Summary")),
                        ("addr", t("A1")),
                        ("formula", t("=SUM(Sales!C2:C3)")),
                    ],
                ),
            ]
        }
    }
}

type Case = (&'static str, &'static [(&'static str, &'static str)]);

/// (endpoint, positive args, negative args); `None` negative means the
/// nonexistent-path fixture is the endpoint's only negative.
fn cases(app: AppId) -> Vec<(&'static str, Case, Option<Case>)> {
    let c = |args: &'static [(&'static str, &'static str)]| ("", args);
    match app {
        AppId::Media => vec![
            (
                "check-image-exists",
                c(&[("filename", "img_001.png")]),
                Some(c(&[("filename", "nope.png")])),
            ),
            (
                "check-image-count",
                c(&[("count", "3")]),
                Some(c(&[("count", "2")])),
            ),
            (
                "check-tag-exists",
                c(&[("name", "batch_processed")]),
                Some(c(&[("name", "nonexistent")])),
            ),
            (
                "check-image-has-tag",
                c(&[("filename", "img_001.png"), ("tag", "batch_processed")]),
                Some(c(&[
                    ("filename", "img_003.png"),
                    ("tag", "batch_processed"),
                ])),
            ),
            (
                "check-image-rating",
                c(&[("filename", "img_002.png"), ("rating", "5")]),
                Some(c(&[("filename", "img_002.png"), ("rating", "4")])),
            ),
            (
                "check-tag-usage-count",
                c(&[("tag", "batch_processed"), ("count", "2")]),
                Some(c(&[("tag", "archive"), ("count", "1")])),
            ),
            (
                "check-rating-at-least",
                c(&[("filename", "img_002.png"), ("min", "4")]),
                Some(c(&[("filename", "img_001.png"), ("min", "4")])),
            ),
            (
                "check-image-untagged",
                c(&[("filename", "img_003.png")]),
                Some(c(&[("filename", "img_001.png")])),
            ),
            (
                "get-image-info",
                c(&[("filename", "img_001.png")]),
                Some(c(&[("filename", "nope.png")])),
            ),
            ("get-tags", c(&[]), None),
            ("get-images", c(&[("min_rating", "1")]), None),
            (
                "get-tag-images",
                c(&[("tag", "batch_processed")]),
                Some(c(&[("tag", "nonexistent")])),
            ),
        ],
        AppId::Vault => vec![
            (
                "check-folder-exists",
                c(&[("path", "Italian")]),
                Some(c(&[("path", "Desserts")])),
            ),
            (
                "check-note-exists",
                c(&[("path", "Italian/Carbonara.md")]),
                Some(c(&[("path", "Desserts/Tiramisu.md")])),
            ),
            (
                "check-note-count",
                c(&[("count", "3")]),
                Some(c(&[("count", "5")])),
            ),
            (
                "check-note-links-to",
                c(&[("path", "Italian/Carbonara.md"), ("target", "Cacio e Pepe")]),
                Some(c(&[("path", "Index.md"), ("target", "Cacio e Pepe")])),
            ),
            (
                "check-note-has-tag",
                c(&[("path", "Italian/Carbonara.md"), ("tag", "#pasta")]),
                Some(c(&[("path", "Italian/Carbonara.md"), ("tag", "dessert")])),
            ),
            (
                "check-frontmatter-field",
                c(&[
                    ("path", "Italian/Carbonara.md"),
                    ("key", "cuisine"),
                    ("value", "Italian"),
                ]),
                Some(c(&[
                    ("path", "Italian/Carbonara.md"),
                    ("key", "cuisine"),
                    ("value", "Asian"),
                ])),
            ),
            (
                "check-note-contains",
                c(&[("path", "Italian/Carbonara.md"), ("text", "Roman")]),
                Some(c(&[("path", "Italian/Carbonara.md"), ("text", "Tokyo")])),
            ),
            (
                "check-folder-note-count",
                c(&[("path", "Italian"), ("count", "2")]),
                Some(c(&[("path", "Asian"), ("count", "1")])),
            ),
            (
                "get-note",
                c(&[("path", "Index.md")]),
                Some(c(&[("path", "Missing.md")])),
            ),
            ("get-folders", c(&[]), None),
            (
                "get-notes",
                c(&[("folder", "Italian")]),
                Some(c(&[("folder", "Nope")])),
            ),
            ("get-backlinks", c(&[("name", "Carbonara")]), None),
        ],
        AppId::Workbook => vec![
            (
                "check-sheet-exists",
                c(&[("sheet", "Sales")]),
                Some(c(&[("sheet", "Missing")])),
            ),
            (
                "check-cell-value",
                c(&[("sheet", "Sales"), ("addr", "D2"), ("value", "0.1")]),
                Some(c(&[("sheet", "Sales"), ("addr", "D3"), ("value", "0.05")])),
            ),
            (
                "check-cell-formula",
                c(&[("sheet", "Sales"), ("addr", "D2"), ("contains", "if(")]),
                Some(c(&[
                    ("sheet", "Sales"),
                    ("addr", "C2"),
                    ("contains", "IF("),
                ])),
            ),
            (
                "check-cell-bold",
                c(&[("sheet", "Sales"), ("addr", "A1")]),
                Some(c(&[("sheet", "Sales"), ("addr", "C2")])),
            ),
            (
                "check-cell-references",
                c(&[("sheet", "Sales"), ("addr", "D2"), ("ref", "C2")]),
                Some(c(&[("sheet", "Sales"), ("addr", "D2"), ("ref", "C3")])),
            ),
            (
                "check-sheet-count",
                c(&[("count", "2")]),
                Some(c(&[("count", "3")])),
            ),
            (
                "check-cell-empty",
                c(&[("sheet", "Sales"), ("addr", "Z9")]),
                Some(c(&[("sheet", "Sales"), ("addr", "A1")])),
            ),
            (
                "check-range-formulas",
                c(&[("sheet", "Sales"), ("range", "D2:D3")]),
                Some(c(&[("sheet", "Sales"), ("range", "C2:D3")])),
            ),
            (
                "get-cell",
                c(&[("sheet", "Sales"), ("addr", "D2")]),
                Some(c(&[("sheet", "Missing"), ("addr", "A1")])),
            ),
            ("get-sheets", c(&[]), None),
            (
                "get-range-values",
                c(&[("sheet", "Summary"), ("range", "A1:A1")]),
                Some(c(&[("sheet", "Missing"), ("range", "A1:A2")])),
            ),
            (
                "get-sheet-dimensions",
                c(&[("sheet", "Sales")]),
                Some(c(&[("sheet", "Missing")])),
            ),
        ],
    }
}

fn to_args(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
    pairs
        .iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

/// The shipped plan: for every endpoint a positive, a negative, a
/// nonexistent-path and (when it has required params) a missing-argument fixture.
pub fn shipped_fixture_plan(app: AppId) -> FixturePlan {
    let seed = Some(standard_seed(app));
    let mut fixtures = Vec::new();
    for (name, (_, pos), neg) in cases(app) {
        let spec = endpoint(app, name).expect("fixture names a registered endpoint");
        let query = spec.kind() == EndpointKind::Query;
        fixtures.push(Fixture {
            name: format!("{name}/positive"),
            seed: seed.clone(),
            endpoint: name.into(),
            args: to_args(pos),
            expected: Expected::Verdict {
                ok: true,
                passed: if query { None } else { Some(true) },
            },
        });
        if let Some((_, neg)) = neg {
            fixtures.push(Fixture {
                name: format!("{name}/negative"),
                seed: seed.clone(),
                endpoint: name.into(),
                args: to_args(neg),
                expected: if query {
                    Expected::Verdict {
                        ok: false,
                        passed: Some(false),
                    }
                } else {
                    Expected::Verdict {
                        ok: true,
                        passed: Some(false),
                    }
                },
            });
        }
        fixtures.push(Fixture {
            name: format!("{name}/nonexistent-path"),
            seed: None,
            endpoint: name.into(),
            args: to_args(pos),
            expected: Expected::Verdict {
                ok: false,
                passed: Some(false),
            },
        });
        if let Some(first) = spec.params.iter().find(|p| p.required) {
            let mut args = to_args(pos);
            args.remove(first.name);
            fixtures.push(Fixture {
                name: format!("{name}/missing-argument"),
                seed: seed.clone(),
                endpoint: name.into(),
                args,
                expected: Expected::MissingArgument,
            });
        }
    }
    FixturePlan {
        app_id: app,
        fixtures,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_plans_gate_shipped_configs() {
        for app in AppId::ALL {
            let plan = shipped_fixture_plan(app);
            let report = run_verifier_selftest(&VerifierConfig::shipped(app), &plan);
            let failures: Vec<_> = report
                .outcomes
                .iter()
                .filter(|o| !o.matched || !o.schema_valid)
                .collect();
            assert!(
                report.gated,
                "{app}: gaps {:?} failures {failures:#?}",
                report.coverage_gaps
            );
        }
    }

    #[test]
    fn swapped_store_binding_is_not_gated() {
        let plan = shipped_fixture_plan(AppId::Media);
        let report = run_verifier_selftest(&VerifierConfig::media_v1(), &plan);
        assert!(!report.gated);
        let failed: BTreeSet<&str> = report
            .outcomes
            .iter()
            .filter(|o| !o.matched)
            .map(|o| o.endpoint.as_str())
            .collect();
        assert!(failed.contains("check-tag-exists"));
        assert!(!failed.contains("check-image-rating"));
    }

    #[test]
    fn missing_negative_is_a_coverage_gap() {
        let mut plan = shipped_fixture_plan(AppId::Media);
        plan.fixtures.retain(|f| {
            !(f.endpoint == "check-tag-exists"
                && matches!(
                    f.category(),
                    FixtureCategory::Negative | FixtureCategory::NonexistentPath
                ))
        });
        let gaps = plan.coverage_gaps();
        assert_eq!(
            gaps,
            vec!["check-tag-exists: no negative fixture".to_string()]
        );
        assert!(!run_verifier_selftest(&VerifierConfig::shipped(AppId::Media), &plan).gated);
    }
}
