//! Task instances: instruction, environment recipe and machine-checkable
//! criteria, plus partial-credit reward computation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use base64::Engine;
use num_rational::Ratio;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::apps::{self, media, vault, AppAction, AppId, Scalar, WorkbookState};
use crate::verifier::{EndpointKind, EndpointSpec, VerdictRecord};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedKind {
    VaultNote,
    WorkbookFile,
    StoreFile,
    PlainFile,
}

/// A file written into the sandbox before the agent starts.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedArtifact {
    pub rel_path: String,
    pub kind: SeedKind,
    #[serde(rename = "content_b64", with = "b64")]
    pub content: Vec<u8>,
}

mod b64 {
    use super::*;

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&base64::engine::general_purpose::STANDARD.encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let text = String::deserialize(d)?;
        base64::engine::general_purpose::STANDARD
            .decode(text.as_bytes())
            .map_err(|e| serde::de::Error::custom(format!("invalid base64: {e}")))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvInitRecipe {
    #[serde(default)]
    pub seed_artifacts: Vec<SeedArtifact>,
    #[serde(default)]
    pub init_actions: Vec<AppAction>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpectOp {
    Equals,
    Contains,
    CountEq,
    CountGe,
    WithinAbs,
}

/// Comparison applied to one field of a verdict's evidence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpectPredicate {
    pub op: ExpectOp,
    pub target_field: String,
    pub operand: Scalar,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
}

impl ExpectPredicate {
    pub fn new(op: ExpectOp, target_field: &str, operand: impl Into<Scalar>) -> Self {
        ExpectPredicate {
            op,
            target_field: target_field.to_string(),
            operand: operand.into(),
            tolerance: None,
        }
    }

    pub fn within(target_field: &str, operand: f64, tolerance: f64) -> Self {
        ExpectPredicate {
            op: ExpectOp::WithinAbs,
            target_field: target_field.to_string(),
            operand: Scalar::number(operand),
            tolerance: Some(tolerance),
        }
    }

    fn check_shape(&self) -> Result<(), String> {
        match (self.op, self.tolerance) {
            (ExpectOp::WithinAbs, Some(t)) if t > 0.0 && t.is_finite() => {}
            (ExpectOp::WithinAbs, _) => return Err("within_abs requires tolerance > 0".into()),
            (_, Some(_)) => return Err("tolerance is only allowed with within_abs".into()),
            _ => {}
        }
        match self.op {
            ExpectOp::CountEq | ExpectOp::CountGe => match self.operand.as_i64() {
                Some(n) if n >= 0 => {}
                _ => return Err("count operands must be non-negative integers".into()),
            },
            ExpectOp::WithinAbs if self.operand.as_f64().is_none() => {
                return Err("within_abs operand must be a number".into())
            }
            _ => {}
        }
        if self.target_field.is_empty() {
            return Err("empty target_field".into());
        }
        Ok(())
    }

    /// Evaluates against an evidence object. `Err` means the field did not
    /// resolve to a comparable value.
    pub fn evaluate(&self, evidence: &serde_json::Value) -> Result<bool, String> {
        let field = lookup(evidence, &self.target_field)
            .ok_or_else(|| format!("target field `{}` not in evidence", self.target_field))?;
        match self.op {
            ExpectOp::Equals => {
                let value = Scalar::from_json(field)
                    .ok_or_else(|| format!("`{}` is not a scalar", self.target_field))?;
                Ok(value.canonical_eq(&self.operand))
            }
            ExpectOp::Contains => match field {
                serde_json::Value::Array(items) => Ok(items
                    .iter()
                    .filter_map(Scalar::from_json)
                    .any(|s| s.canonical_eq(&self.operand))),
                serde_json::Value::String(s) => match &self.operand {
                    Scalar::Text(needle) => Ok(s.contains(needle.as_str())),
                    other => Ok(s.contains(&other.to_string())),
                },
                _ => Err(format!(
                    "`{}` is neither a list nor text",
                    self.target_field
                )),
            },
            ExpectOp::CountEq | ExpectOp::CountGe => {
                let n = count_of(field)
                    .ok_or_else(|| format!("`{}` is not countable", self.target_field))?;
                let want = self.operand.as_i64().unwrap_or(-1);
                Ok(if self.op == ExpectOp::CountEq {
                    n == want
                } else {
                    n >= want
                })
            }
            ExpectOp::WithinAbs => {
                let x = field
                    .as_f64()
                    .ok_or_else(|| format!("`{}` is not a number", self.target_field))?;
                let want = self.operand.as_f64().unwrap_or(f64::NAN);
                Ok((x - want).abs() <= self.tolerance.unwrap_or(0.0) + 1e-12)
            }
        }
    }
}

fn count_of(v: &serde_json::Value) -> Option<i64> {
    match v {
        serde_json::Value::Array(items) => Some(items.len() as i64),
        serde_json::Value::Object(map) => Some(map.len() as i64),
        serde_json::Value::Number(n) => n.as_i64(),
        _ => None,
    }
}

/// Resolves a dotted path (`images.0`, `frontmatter.cuisine`) into a JSON value.
pub fn lookup<'a>(root: &'a serde_json::Value, path: &str) -> Option<&'a serde_json::Value> {
    path.split('.').try_fold(root, |cur, part| match cur {
        serde_json::Value::Object(map) => map.get(part),
        serde_json::Value::Array(items) => part.parse::<usize>().ok().and_then(|i| items.get(i)),
        _ => None,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckSpec {
    pub criterion_id: String,
    pub endpoint: String,
    #[serde(default)]
    pub args: BTreeMap<String, String>,
    /// Required for query endpoints; optional refinement for check endpoints.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expect: Option<ExpectPredicate>,
}

impl CheckSpec {
    pub fn new(criterion_id: &str, endpoint: &str) -> Self {
        CheckSpec {
            criterion_id: criterion_id.to_string(),
            endpoint: endpoint.to_string(),
            args: BTreeMap::new(),
            expect: None,
        }
    }

    pub fn arg(mut self, key: &str, value: impl ToString) -> Self {
        self.args.insert(key.to_string(), value.to_string());
        self
    }

    pub fn expect(mut self, predicate: ExpectPredicate) -> Self {
        self.expect = Some(predicate);
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskInstance {
    pub task_id: String,
    pub app_id: AppId,
    pub instruction: String,
    pub difficulty: u8,
    #[serde(default)]
    pub env_init: EnvInitRecipe,
    pub criteria: Vec<CheckSpec>,
    #[serde(default)]
    pub metadata: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Error)]
pub enum TaskError {
    #[error("malformed task document at byte {offset}: {message}")]
    MalformedDocument { offset: usize, message: String },
    #[error("schema violation at `{path}`: {message}")]
    SchemaViolation { path: String, message: String },
}

pub fn parse_task_instance(raw: &[u8]) -> Result<TaskInstance, TaskError> {
    let text = std::str::from_utf8(raw).map_err(|e| TaskError::MalformedDocument {
        offset: e.valid_up_to(),
        message: "document is not valid UTF-8".into(),
    })?;
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| TaskError::MalformedDocument {
            offset: apps::byte_offset(text, e.line(), e.column()),
            message: e.to_string(),
        })?;
    serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        TaskError::SchemaViolation {
            path,
            message: e.into_inner().to_string(),
        }
    })
}

impl TaskInstance {
    /// Canonical task.json bytes (pretty, trailing newline).
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("task serializes");
        s.push('\n');
        s
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Finding {
    /// JSON-ish path to the offending element.
    pub path: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub criterion_id: Option<String>,
    pub message: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.findings.is_empty()
    }

    fn push(&mut self, path: String, criterion_id: Option<&str>, message: impl Into<String>) {
        self.findings.push(Finding {
            path,
            criterion_id: criterion_id.map(str::to_string),
            message: message.into(),
        });
    }
}

/// Checks every task invariant against an app's endpoint registry.
pub fn validate_task_instance(t: &TaskInstance, registry: &[EndpointSpec]) -> ValidationReport {
    let mut report = ValidationReport::default();
    if t.task_id.trim().is_empty() {
        report.push("task_id".into(), None, "task_id is empty");
    }
    if !(1..=5).contains(&t.difficulty) {
        report.push(
            "difficulty".into(),
            None,
            format!("difficulty {} outside 1-5", t.difficulty),
        );
    }
    if t.criteria.is_empty() {
        report.push("criteria".into(), None, "criteria list is empty");
    }

    let mut seen_paths = BTreeSet::new();
    for (i, seed) in t.env_init.seed_artifacts.iter().enumerate() {
        let path = format!("env_init.seed_artifacts[{i}]");
        if let Err(msg) = apps::check_rel_path(&seed.rel_path) {
            report.push(
                format!("{path}.rel_path"),
                None,
                format!("path safety: {msg}"),
            );
        }
        if !seen_paths.insert(seed.rel_path.as_str()) {
            report.push(
                format!("{path}.rel_path"),
                None,
                format!("duplicate rel_path `{}`", seed.rel_path),
            );
        }
        if let Err(msg) = check_seed_content(t.app_id, seed) {
            report.push(format!("{path}.content_b64"), None, msg);
        }
    }
    for (i, action) in t.env_init.init_actions.iter().enumerate() {
        let path = format!("env_init.init_actions[{i}]");
        if action.app_id != t.app_id {
            report.push(
                path.clone(),
                None,
                format!("action targets app {}", action.app_id),
            );
        }
        if !action.app_id.verbs().contains(&action.verb.as_str()) {
            report.push(path, None, format!("unknown verb `{}`", action.verb));
        }
    }

    let mut ids = BTreeSet::new();
    for (i, c) in t.criteria.iter().enumerate() {
        let path = format!("criteria[{i}]");
        let cid = Some(c.criterion_id.as_str());
        if c.criterion_id.is_empty() {
            report.push(format!("{path}.criterion_id"), cid, "empty criterion_id");
        }
        if !ids.insert(c.criterion_id.as_str()) {
            report.push(
                format!("{path}.criterion_id"),
                cid,
                format!("duplicate criterion_id `{}`", c.criterion_id),
            );
        }
        let Some(spec) = registry.iter().find(|e| e.name == c.endpoint) else {
            report.push(
                format!("{path}.endpoint"),
                cid,
                format!(
                    "endpoint `{}` is not registered for {}",
                    c.endpoint, t.app_id
                ),
            );
            continue;
        };
        for problem in spec.check_args(&c.args) {
            report.push(format!("{path}.args"), cid, problem);
        }
        match (&c.expect, spec.kind()) {
            (None, EndpointKind::Query) => report.push(
                format!("{path}.expect"),
                cid,
                "query endpoints need an expect predicate",
            ),
            (Some(e), _) => {
                if let Err(msg) = e.check_shape() {
                    report.push(format!("{path}.expect"), cid, msg);
                } else if !spec.has_evidence_path(&e.target_field) {
                    report.push(
                        format!("{path}.expect.target_field"),
                        cid,
                        format!(
                            "`{}` is not an evidence field of {}",
                            e.target_field, spec.name
                        ),
                    );
                }
            }
            (None, EndpointKind::Check) => {}
        }
    }
    report
}

fn check_seed_content(app: AppId, seed: &SeedArtifact) -> Result<(), String> {
    let text =
        || std::str::from_utf8(&seed.content).map_err(|_| "content is not UTF-8".to_string());
    match seed.kind {
        SeedKind::PlainFile => Ok(()),
        SeedKind::VaultNote => {
            if app != AppId::Vault {
                return Err(format!("vault_note seed in a {app} task"));
            }
            if !seed.rel_path.starts_with(&format!("{}/", vault::ROOT_DIR))
                || !seed.rel_path.ends_with(".md")
            {
                return Err(format!(
                    "vault notes live under `{}/` and end in .md",
                    vault::ROOT_DIR
                ));
            }
            vault::parse_note(text()?)
                .map(|_| ())
                .map_err(|e| e.message)
        }
        SeedKind::WorkbookFile => {
            if app != AppId::Workbook {
                return Err(format!("workbook_file seed in a {app} task"));
            }
            WorkbookState::from_json(text()?, &seed.rel_path)
                .map(|_| ())
                .map_err(|e| e.to_string())
        }
        SeedKind::StoreFile => {
            if app != AppId::Media {
                return Err(format!("store_file seed in a {app} task"));
            }
            let expected = match seed.rel_path.as_str() {
                media::LIBRARY_FILE => apps::store::StoreName::Library,
                media::DATA_FILE => apps::store::StoreName::Data,
                other => return Err(format!("unknown store file `{other}`")),
            };
            media::parse_store(text()?, &seed.rel_path, expected)
                .map(|_| ())
                .map_err(|e| e.to_string())
        }
    }
}

/// Outcome of one criterion inside a reward report.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CriterionOutcome {
    pub criterion_id: String,
    pub passed: bool,
    pub evidence_digest: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewardReport {
    pub n_pass: u64,
    pub n_total: u64,
    /// Exact reward as `numerator/denominator` in lowest terms.
    #[serde(with = "ratio_text")]
    pub reward: Ratio<u64>,
    /// Reward rounded half-up to four decimals.
    pub reward_decimal: String,
    pub per_criterion: Vec<CriterionOutcome>,
}

mod ratio_text {
    use super::*;

    pub fn serialize<S: Serializer>(r: &Ratio<u64>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format!("{}/{}", r.numer(), r.denom()))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Ratio<u64>, D::Error> {
        let text = String::deserialize(d)?;
        let (n, den) = text
            .split_once('/')
            .ok_or_else(|| serde::de::Error::custom("expected `n/d`"))?;
        let n: u64 = n.parse().map_err(serde::de::Error::custom)?;
        let den: u64 = den.parse().map_err(serde::de::Error::custom)?;
        if den == 0 {
            return Err(serde::de::Error::custom("zero denominator"));
        }
        Ok(Ratio::new(n, den))
    }
}

impl RewardReport {
    pub fn as_f64(&self) -> f64 {
        *self.reward.numer() as f64 / *self.reward.denom() as f64
    }

    pub fn is_full(&self) -> bool {
        self.n_pass == self.n_total
    }
}

impl fmt::Display for RewardReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} ({}/{} passed)",
            self.reward_decimal, self.n_pass, self.n_total
        )
    }
}

/// Renders `r` in [0,1] with four decimals, rounding half up.
pub fn render_decimal(r: Ratio<u64>) -> String {
    let scaled = (*r.numer() as u128 * 10_000 * 2 + *r.denom() as u128) / (2 * *r.denom() as u128);
    format!("{}.{:04}", scaled / 10_000, scaled % 10_000)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("cannot compute a reward from an empty verdict list")]
pub struct EmptyVerdicts;

pub fn compute_reward(verdicts: &[VerdictRecord]) -> Result<RewardReport, EmptyVerdicts> {
    if verdicts.is_empty() {
        return Err(EmptyVerdicts);
    }
    let per_criterion: Vec<CriterionOutcome> = verdicts
        .iter()
        .enumerate()
        .map(|(i, v)| CriterionOutcome {
            criterion_id: v.criterion_id.clone().unwrap_or_else(|| format!("#{i}")),
            passed: v.counts_as_pass(),
            evidence_digest: evidence_digest(&v.evidence),
        })
        .collect();
    let n_pass = per_criterion.iter().filter(|c| c.passed).count() as u64;
    let n_total = per_criterion.len() as u64;
    let reward = Ratio::new(n_pass, n_total);
    Ok(RewardReport {
        n_pass,
        n_total,
        reward,
        reward_decimal: render_decimal(reward),
        per_criterion,
    })
}

pub fn evidence_digest(evidence: &serde_json::Value) -> String {
    let bytes = serde_json::to_vec(evidence).expect("evidence serializes");
    hex::encode(Sha256::digest(&bytes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn minimal() -> serde_json::Value {
        json!({
            "task_id": "t1",
            "app_id": "media",
            "instruction": "Create the tag.",
            "difficulty": 1,
            "env_init": {"seed_artifacts": [], "init_actions": []},
            "criteria": [{"criterion_id": "c0", "endpoint": "check-tag-exists", "args": {"name": "x"}}],
            "metadata": {"goal": "g", "extra": {"nested": [1, 2]}}
        })
    }

    #[test]
    fn minimal_document_parses() {
        let t = parse_task_instance(minimal().to_string().as_bytes()).unwrap();
        assert_eq!(t.criteria.len(), 1);
        assert!(t.env_init.seed_artifacts.is_empty());
        assert_eq!(t.metadata["extra"]["nested"][1], 2);
    }

    #[test]
    fn unknown_top_level_field_rejected_with_path() {
        let mut doc = minimal();
        doc["colour"] = json!("red");
        let err = parse_task_instance(doc.to_string().as_bytes()).unwrap_err();
        assert!(matches!(err, TaskError::SchemaViolation { .. }), "{err}");
    }

    #[test]
    fn wrong_type_names_path() {
        let mut doc = minimal();
        doc["criteria"][0]["args"]["name"] = json!(3);
        match parse_task_instance(doc.to_string().as_bytes()).unwrap_err() {
            TaskError::SchemaViolation { path, .. } => assert_eq!(path, "criteria[0].args.name"),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn syntax_error_reports_offset() {
        match parse_task_instance(b"{\"task_id\": }").unwrap_err() {
            TaskError::MalformedDocument { offset, .. } => assert_eq!(offset, 12),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn decimals_round_half_up() {
        assert_eq!(render_decimal(Ratio::new(6, 10)), "0.6000");
        assert_eq!(render_decimal(Ratio::new(1, 1)), "1.0000");
        assert_eq!(render_decimal(Ratio::new(2, 3)), "0.6667");
        assert_eq!(render_decimal(Ratio::new(1, 8)), "0.1250");
        assert_eq!(render_decimal(Ratio::new(0, 5)), "0.0000");
    }

    #[test]
    fn predicate_ops() {
        let ev = json!({"rating": 3, "tags": ["a", "b"], "sum": 10.004, "body": "hello"});
        assert!(ExpectPredicate::new(ExpectOp::Equals, "rating", 3)
            .evaluate(&ev)
            .unwrap());
        assert!(ExpectPredicate::new(ExpectOp::Contains, "tags", "b")
            .evaluate(&ev)
            .unwrap());
        assert!(ExpectPredicate::new(ExpectOp::Contains, "body", "ell")
            .evaluate(&ev)
            .unwrap());
        assert!(ExpectPredicate::new(ExpectOp::CountEq, "tags", 2)
            .evaluate(&ev)
            .unwrap());
        assert!(!ExpectPredicate::new(ExpectOp::CountGe, "tags", 3)
            .evaluate(&ev)
            .unwrap());
        assert!(ExpectPredicate::within("sum", 10.0, 0.01)
            .evaluate(&ev)
            .unwrap());
        assert!(ExpectPredicate::new(ExpectOp::Equals, "missing", 1)
            .evaluate(&ev)
            .is_err());
        assert!(ExpectPredicate::new(ExpectOp::WithinAbs, "sum", 1)
            .check_shape()
            .is_err());
    }
}
