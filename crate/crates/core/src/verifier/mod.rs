//! App verifiers: `check-*` and `get-*` endpoints over persisted state.
//!
//! Endpoints never read state through hard-coded locations. Every file,
//! table, join and column they touch is resolved through a
//! [`VerifierConfig`], which is plain data that the evolution loop may
//! rewrite. Execution failures (missing table, missing file, malformed
//! bytes) become `ok=false` verdicts; only unknown endpoints and bad
//! arguments are protocol errors.

mod media;
pub mod schema;
pub mod selftest;
mod vault;
mod workbook;

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::apps::store::StoreName;
use crate::apps::{AppId, Scalar};
use crate::task::TaskInstance;

pub use selftest::{run_verifier_selftest, shipped_fixture_plan, FixturePlan, SelftestReport};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamType {
    Text,
    Integer,
    Number,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct ParamSpec {
    pub name: &'static str,
    #[serde(rename = "type")]
    pub ty: ParamType,
    pub required: bool,
}

const fn req(name: &'static str, ty: ParamType) -> ParamSpec {
    ParamSpec {
        name,
        ty,
        required: true,
    }
}

const fn opt(name: &'static str, ty: ParamType) -> ParamSpec {
    ParamSpec {
        name,
        ty,
        required: false,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldType {
    Bool,
    Integer,
    Number,
    Text,
    /// Any scalar (number, text or bool).
    Scalar,
    TextList,
    ScalarList,
    Object,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct EvidenceField {
    pub name: &'static str,
    #[serde(rename = "type")]
    pub ty: FieldType,
    pub nullable: bool,
}

const fn field(name: &'static str, ty: FieldType) -> EvidenceField {
    EvidenceField {
        name,
        ty,
        nullable: false,
    }
}

const fn nullable(name: &'static str, ty: FieldType) -> EvidenceField {
    EvidenceField {
        name,
        ty,
        nullable: true,
    }
}

/// Which kind of state an endpoint inspects.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Surface {
    Content,
    Metadata,
    Structure,
    Formatting,
    Formula,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EndpointKind {
    Check,
    Query,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct EndpointSpec {
    pub name: &'static str,
    pub params: &'static [ParamSpec],
    pub doc: &'static str,
    /// Binding resources the endpoint resolves.
    pub reads: &'static [&'static str],
    pub evidence: &'static [EvidenceField],
    pub surface: Surface,
    /// Logic knobs (`logic:*`) the endpoint honors when present in a config.
    #[serde(skip_serializing_if = "<[_]>::is_empty")]
    pub logic: &'static [&'static str],
}

impl EndpointSpec {
    pub fn kind(&self) -> EndpointKind {
        if self.name.starts_with("check-") {
            EndpointKind::Check
        } else {
            EndpointKind::Query
        }
    }

    /// Machine-readable description, including the implicit `passed` output.
    pub fn describe(&self) -> Value {
        let mut v = serde_json::to_value(self).expect("spec serializes");
        v["kind"] = json!(self.kind());
        if self.kind() == EndpointKind::Check {
            v["outputs"] = json!({"passed": "bool"});
        }
        v
    }

    /// Problems with an argument map; empty when the args fit the spec.
    pub fn check_args(&self, args: &BTreeMap<String, String>) -> Vec<String> {
        let mut problems = Vec::new();
        for key in args.keys() {
            if !self.params.iter().any(|p| p.name == key) {
                problems.push(format!("unexpected argument `{key}` for {}", self.name));
            }
        }
        for p in self.params {
            match args.get(p.name) {
                None if p.required => problems.push(format!(
                    "missing required argument `{}` for {}",
                    p.name, self.name
                )),
                None => {}
                Some(raw) => {
                    if let Err(e) = parse_param(p, raw) {
                        problems.push(e);
                    }
                }
            }
        }
        problems
    }

    /// True when `path`'s first segment names a declared evidence field.
    pub fn has_evidence_path(&self, path: &str) -> bool {
        let mut parts = path.split('.');
        let head = parts.next().unwrap_or_default();
        let rest: Vec<&str> = parts.collect();
        let Some(f) = self.evidence.iter().find(|f| f.name == head) else {
            return false;
        };
        match (f.ty, rest.as_slice()) {
            (_, []) => true,
            (FieldType::TextList | FieldType::ScalarList, [idx]) => idx.parse::<usize>().is_ok(),
            (FieldType::Object, _) => true,
            _ => false,
        }
    }
}

fn parse_param(p: &ParamSpec, raw: &str) -> Result<(), String> {
    match p.ty {
        ParamType::Text => Ok(()),
        ParamType::Integer => raw
            .trim()
            .parse::<i64>()
            .map(|_| ())
            .map_err(|_| format!("argument `{}` must be an integer, got `{raw}`", p.name)),
        ParamType::Number => match raw.trim().parse::<f64>() {
            Ok(x) if x.is_finite() => Ok(()),
            _ => Err(format!(
                "argument `{}` must be a number, got `{raw}`",
                p.name
            )),
        },
    }
}

/// The endpoint registry of `app`, in stable order.
pub fn list_endpoints(app: AppId) -> &'static [EndpointSpec] {
    match app {
        AppId::Vault => vault::ENDPOINTS,
        AppId::Workbook => workbook::ENDPOINTS,
        AppId::Media => media::ENDPOINTS,
    }
}

pub fn endpoint(app: AppId, name: &str) -> Option<&'static EndpointSpec> {
    list_endpoints(app).iter().find(|e| e.name == name)
}

/// Mutable binding layer between logical resources and physical locations.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifierConfig {
    pub app_id: AppId,
    pub revision: u64,
    pub bindings: BTreeMap<String, String>,
}

fn bindings(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
    pairs
        .iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

impl VerifierConfig {
    /// The shipped, schema-matched configuration for `app`.
    pub fn shipped(app: AppId) -> Self {
        let bindings = match app {
            AppId::Vault => bindings(&[("file:vault_root", "vault")]),
            AppId::Workbook => bindings(&[
                ("file:workbook", "workbook.json"),
                ("column:cell.value", "v"),
                ("column:cell.formula", "f"),
                ("column:cell.style", "style"),
            ]),
            AppId::Media => media::bindings_for_schema(2),
        };
        VerifierConfig {
            app_id: app,
            revision: 0,
            bindings,
        }
    }

    /// Media configuration written against the single-store (v1) layout.
    pub fn media_v1() -> Self {
        VerifierConfig {
            app_id: AppId::Media,
            revision: 0,
            bindings: media::bindings_for_schema(1),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, String> {
        serde_json::from_str(text).map_err(|e| format!("invalid verifier config: {e}"))
    }

    pub fn binding(&self, resource: &str) -> Result<&str, ExecFailure> {
        self.bindings
            .get(resource)
            .map(String::as_str)
            .ok_or_else(|| ExecFailure::Unbound {
                resource: resource.to_string(),
            })
    }

    /// Logic knob value, absent when the config is fault-free.
    pub fn logic(&self, knob: &str) -> Option<&str> {
        self.bindings.get(knob).map(String::as_str)
    }

    /// Checks that every endpoint's `reads` resolves through the bindings.
    pub fn check_coverage(&self) -> Vec<String> {
        let mut missing = Vec::new();
        for e in list_endpoints(self.app_id) {
            for r in e.reads {
                if !self.bindings.contains_key(*r) {
                    missing.push(format!("{}: `{r}` is unbound", e.name));
                }
            }
        }
        missing
    }
}

/// `left_table@store.key=right_table@store.key`, keys named logically.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct JoinSpec {
    pub left: JoinSide,
    pub right: JoinSide,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct JoinSide {
    pub table: String,
    pub store: StoreName,
    pub key: String,
}

impl FromStr for JoinSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let side = |raw: &str| -> Result<JoinSide, String> {
            let (table, rest) = raw
                .split_once('@')
                .ok_or_else(|| format!("join side `{raw}` lacks `@store`"))?;
            let (store, key) = rest
                .split_once('.')
                .ok_or_else(|| format!("join side `{raw}` lacks `.key`"))?;
            Ok(JoinSide {
                table: table.to_string(),
                store: store.parse()?,
                key: key.to_string(),
            })
        };
        let (l, r) = s
            .split_once('=')
            .ok_or_else(|| format!("join `{s}` lacks `=`"))?;
        Ok(JoinSpec {
            left: side(l)?,
            right: side(r)?,
        })
    }
}

impl std::fmt::Display for JoinSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}@{}.{}={}@{}.{}",
            self.left.table,
            self.left.store,
            self.left.key,
            self.right.table,
            self.right.store,
            self.right.key
        )
    }
}

/// Why an endpoint could not produce an answer from the state on disk.
#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum ExecFailure {
    #[error("no such table: {table} (in {store} store)")]
    MissingTable {
        resource: String,
        table: String,
        store: StoreName,
    },
    #[error("missing file: {path}")]
    MissingFile { resource: String, path: String },
    #[error("missing column `{column}` in {table} (found {found:?})")]
    MissingColumn {
        resource: String,
        table: String,
        column: String,
        found: Vec<String>,
    },
    #[error("malformed {file}: {message}")]
    Malformed {
        resource: String,
        file: String,
        message: String,
    },
    #[error("not found: {entity} `{key}`")]
    NotFound { entity: String, key: String },
    #[error("resource `{resource}` is not bound")]
    Unbound { resource: String },
    #[error("binding `{resource}` = `{value}` is invalid: {message}")]
    BadBinding {
        resource: String,
        value: String,
        message: String,
    },
}

impl ExecFailure {
    pub fn kind(&self) -> &'static str {
        match self {
            ExecFailure::MissingTable { .. } => "missing_table",
            ExecFailure::MissingFile { .. } => "missing_file",
            ExecFailure::MissingColumn { .. } => "missing_column",
            ExecFailure::Malformed { .. } => "malformed",
            ExecFailure::NotFound { .. } => "not_found",
            ExecFailure::Unbound { .. } => "unbound",
            ExecFailure::BadBinding { .. } => "bad_binding",
        }
    }

    /// The binding resource implicated, when there is one.
    pub fn resource(&self) -> Option<&str> {
        match self {
            ExecFailure::MissingTable { resource, .. }
            | ExecFailure::MissingFile { resource, .. }
            | ExecFailure::MissingColumn { resource, .. }
            | ExecFailure::Malformed { resource, .. }
            | ExecFailure::Unbound { resource }
            | ExecFailure::BadBinding { resource, .. } => Some(resource),
            ExecFailure::NotFound { .. } => None,
        }
    }

    fn to_evidence(&self) -> Value {
        let mut obj = Map::new();
        obj.insert("kind".into(), json!(self.kind()));
        obj.insert("message".into(), json!(self.to_string()));
        if let Some(r) = self.resource() {
            obj.insert("resource".into(), json!(r));
        }
        match self {
            ExecFailure::MissingTable { table, store, .. } => {
                obj.insert("table".into(), json!(table));
                obj.insert("store".into(), json!(store));
            }
            ExecFailure::MissingFile { path, .. } => {
                obj.insert("path".into(), json!(path));
            }
            ExecFailure::MissingColumn {
                table,
                column,
                found,
                ..
            } => {
                obj.insert("table".into(), json!(table));
                obj.insert("column".into(), json!(column));
                obj.insert("found".into(), json!(found));
            }
            ExecFailure::NotFound { entity, key } => {
                obj.insert("entity".into(), json!(entity));
                obj.insert("key".into(), json!(key));
            }
            _ => {}
        }
        Value::Object(obj)
    }
}

/// Errors in the invocation itself, reported before any state is read.
#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum ProtocolError {
    #[error("unknown endpoint `{endpoint}` for app {app}")]
    UnknownEndpoint { app: AppId, endpoint: String },
    #[error("missing required argument `{arg}` for {endpoint}")]
    MissingArgument { endpoint: String, arg: String },
    #[error("invalid argument for {endpoint}: {message}")]
    InvalidArgument { endpoint: String, message: String },
}

/// One endpoint invocation's structured outcome.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerdictRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub criterion_id: Option<String>,
    pub endpoint: String,
    pub ok: bool,
    pub passed: Option<bool>,
    pub evidence: Value,
    pub error: Option<String>,
    /// The resolved bindings the endpoint read through.
    pub bindings: BTreeMap<String, String>,
    pub revision: u64,
}

impl VerdictRecord {
    pub fn counts_as_pass(&self) -> bool {
        self.ok && self.passed == Some(true)
    }

    /// The failure object of an `ok=false` verdict.
    pub fn failure(&self) -> Option<&Value> {
        if self.ok {
            None
        } else {
            self.evidence.get("failure")
        }
    }

    /// Verdict for an invocation rejected at the protocol layer.
    pub fn protocol_error(cfg: &VerifierConfig, endpoint: &str, err: &ProtocolError) -> Self {
        let kind = match err {
            ProtocolError::UnknownEndpoint { .. } => "unknown_endpoint",
            ProtocolError::MissingArgument { .. } => "missing_argument",
            ProtocolError::InvalidArgument { .. } => "invalid_argument",
        };
        VerdictRecord {
            criterion_id: None,
            endpoint: endpoint.to_string(),
            ok: false,
            passed: Some(false),
            evidence: json!({"failure": {"kind": kind, "message": err.to_string()}}),
            error: Some(err.to_string()),
            bindings: BTreeMap::new(),
            revision: cfg.revision,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("verdict serializes")
    }
}

/// Typed access to validated endpoint arguments.
pub(crate) struct Args<'a>(&'a BTreeMap<String, String>);

impl Args<'_> {
    pub(crate) fn text(&self, key: &str) -> &str {
        self.0.get(key).map(String::as_str).unwrap_or_default()
    }

    pub(crate) fn opt_text(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    pub(crate) fn int(&self, key: &str) -> i64 {
        self.0
            .get(key)
            .and_then(|v| v.trim().parse().ok())
            .unwrap_or_default()
    }

    pub(crate) fn scalar(&self, key: &str) -> Scalar {
        Scalar::parse_loose(self.text(key))
    }
}

/// What an endpoint implementation returns on success.
pub(crate) struct Outcome {
    pub passed: Option<bool>,
    pub evidence: Map<String, Value>,
}

impl Outcome {
    pub(crate) fn check(passed: bool, evidence: Value) -> Self {
        Outcome {
            passed: Some(passed),
            evidence: into_map(evidence),
        }
    }

    pub(crate) fn query(evidence: Value) -> Self {
        Outcome {
            passed: None,
            evidence: into_map(evidence),
        }
    }
}

fn into_map(v: Value) -> Map<String, Value> {
    match v {
        Value::Object(m) => m,
        other => {
            let mut m = Map::new();
            m.insert("value".into(), other);
            m
        }
    }
}

/// Applies an inverted-comparison knob when configured.
pub(crate) fn compare(cfg: &VerifierConfig, equal: bool) -> bool {
    match cfg.logic("logic:comparison") {
        Some("ne") => !equal,
        _ => equal,
    }
}

/// Applies a count-offset knob when configured.
pub(crate) fn offset_count(cfg: &VerifierConfig, n: i64) -> i64 {
    n + cfg
        .logic("logic:count_offset")
        .and_then(|v| v.parse::<i64>().ok())
        .unwrap_or(0)
}

fn validate_invocation(
    app: AppId,
    endpoint: &str,
    args: &BTreeMap<String, String>,
) -> Result<&'static EndpointSpec, ProtocolError> {
    let spec = self::endpoint(app, endpoint).ok_or_else(|| ProtocolError::UnknownEndpoint {
        app,
        endpoint: endpoint.to_string(),
    })?;
    if let Some(p) = spec
        .params
        .iter()
        .find(|p| p.required && !args.contains_key(p.name))
    {
        return Err(ProtocolError::MissingArgument {
            endpoint: endpoint.to_string(),
            arg: p.name.to_string(),
        });
    }
    if let Some(problem) = spec.check_args(args).into_iter().next() {
        return Err(ProtocolError::InvalidArgument {
            endpoint: endpoint.to_string(),
            message: problem,
        });
    }
    Ok(spec)
}

/// Runs any endpoint. The verdict is a pure function of config, arguments
/// and the bytes under `sandbox_root`; nothing on disk is modified.
pub fn run_endpoint(
    cfg: &VerifierConfig,
    endpoint: &str,
    args: &BTreeMap<String, String>,
    sandbox_root: &Path,
) -> Result<VerdictRecord, ProtocolError> {
    let spec = validate_invocation(cfg.app_id, endpoint, args)?;
    let mut used = BTreeMap::new();
    for r in spec.reads.iter().chain(spec.logic) {
        if let Some(v) = cfg.bindings.get(*r) {
            used.insert(r.to_string(), v.clone());
        }
    }
    let unbound = spec
        .reads
        .iter()
        .find(|r| !cfg.bindings.contains_key(**r))
        .map(|r| ExecFailure::Unbound {
            resource: r.to_string(),
        });
    let args = Args(args);
    let result = match unbound {
        Some(f) => Err(f),
        None => match cfg.app_id {
            AppId::Vault => vault::execute(spec.name, cfg, &args, sandbox_root),
            AppId::Workbook => workbook::execute(spec.name, cfg, &args, sandbox_root),
            AppId::Media => media::execute(spec.name, cfg, &args, sandbox_root),
        },
    };
    Ok(match result {
        Ok(outcome) => VerdictRecord {
            criterion_id: None,
            endpoint: spec.name.to_string(),
            ok: true,
            passed: match spec.kind() {
                EndpointKind::Check => Some(outcome.passed.unwrap_or(false)),
                EndpointKind::Query => None,
            },
            evidence: Value::Object(outcome.evidence),
            error: None,
            bindings: used,
            revision: cfg.revision,
        },
        Err(failure) => VerdictRecord {
            criterion_id: None,
            endpoint: spec.name.to_string(),
            ok: false,
            passed: Some(false),
            evidence: json!({ "failure": failure.to_evidence() }),
            error: Some(failure.to_string()),
            bindings: used,
            revision: cfg.revision,
        },
    })
}

/// Runs a `check-*` endpoint.
pub fn run_check(
    cfg: &VerifierConfig,
    endpoint: &str,
    args: &BTreeMap<String, String>,
    sandbox_root: &Path,
) -> Result<VerdictRecord, ProtocolError> {
    run_endpoint(cfg, endpoint, args, sandbox_root)
}

/// Runs a `get-*` endpoint; `passed` stays unset and evidence carries the answer.
pub fn run_query(
    cfg: &VerifierConfig,
    endpoint: &str,
    args: &BTreeMap<String, String>,
    sandbox_root: &Path,
) -> Result<VerdictRecord, ProtocolError> {
    run_endpoint(cfg, endpoint, args, sandbox_root)
}

/// One verdict per criterion, in order. Query criteria are resolved by
/// applying their expect predicate; the suite never stops early.
pub fn run_check_suite(
    cfg: &VerifierConfig,
    task: &TaskInstance,
    sandbox_root: &Path,
) -> Vec<VerdictRecord> {
    task.criteria
        .iter()
        .map(|c| {
            let mut verdict = match run_endpoint(cfg, &c.endpoint, &c.args, sandbox_root) {
                Ok(v) => v,
                Err(e) => VerdictRecord::protocol_error(cfg, &c.endpoint, &e),
            };
            verdict.criterion_id = Some(c.criterion_id.clone());
            if let (true, Some(expect)) = (verdict.ok, &c.expect) {
                match expect.evaluate(&verdict.evidence) {
                    Ok(p) => verdict.passed = Some(p),
                    Err(msg) => {
                        verdict.passed = Some(false);
                        verdict.error = Some(format!("expect: {msg}"));
                    }
                }
            }
            verdict
        })
        .collect()
}

/// Physical column names observed in the state for a `column:*` resource,
/// independent of the current bindings.
pub fn observe_physical_columns(app: AppId, resource: &str, sandbox_root: &Path) -> Vec<String> {
    match app {
        AppId::Media => media::observe_columns(resource, sandbox_root),
        AppId::Workbook => workbook::observe_columns(resource, sandbox_root),
        AppId::Vault => Vec::new(),
    }
}

/// Whether a `file:*` resource names a directory rather than a file.
pub fn file_role_is_dir(resource: &str) -> bool {
    resource == "file:vault_root"
}

pub(crate) fn check_binding_path(resource: &str, rel: &str) -> Result<(), ExecFailure> {
    crate::apps::check_rel_path(rel).map_err(|message| ExecFailure::BadBinding {
        resource: resource.to_string(),
        value: rel.to_string(),
        message,
    })
}
