//! Template-driven task generation: propose, filter, match against the
//! verifier registry, materialize, emit.

mod templates;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub use templates::{shipped_templates, template_sources};

use crate::apps::formula::{eval_expr, parse_formula};
use crate::apps::{self, persist_app_state, AppAction, AppId, AppState, WorkbookState};
use crate::evolution::{open_resources, Lesson};
use crate::harness::{execute_agent, finalize_run, init_sandbox, SandboxSpec, ScriptedAgent};
use crate::task::{
    validate_task_instance, CheckSpec, EnvInitRecipe, SeedArtifact, SeedKind, TaskInstance,
};
use crate::verifier::{endpoint, list_endpoints, run_check_suite, VerifierConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SlotKind {
    /// One of `values`; slots sharing a `distinct` group never repeat a value.
    Choice {
        values: Vec<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        distinct: Option<String>,
    },
    Int {
        min: i64,
        max: i64,
    },
    /// A constant.
    Fixed {
        value: Value,
    },
    /// A value computed from earlier slots by evaluating a formula.
    Formula {
        expr: String,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlotDomain {
    pub name: String,
    #[serde(flatten)]
    pub kind: SlotKind,
}

/// A drafted criterion. `inspectable: false` marks outcomes that cannot be
/// read back from persisted state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriterionPattern {
    pub endpoint: String,
    #[serde(default)]
    pub args: BTreeMap<String, Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expect: Option<Value>,
    #[serde(default = "yes", skip_serializing_if = "is_true")]
    pub inspectable: bool,
}

fn yes() -> bool {
    true
}

fn is_true(b: &bool) -> bool {
    *b
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoalTemplate {
    pub template_id: String,
    pub app_id: AppId,
    pub feature_area: String,
    pub base_difficulty: u8,
    pub instruction: String,
    #[serde(default)]
    pub slots: Vec<SlotDomain>,
    /// Actions whose resulting state becomes the seed artifacts.
    #[serde(default)]
    pub seed: Vec<Value>,
    /// The matched agent's script.
    pub solution: Vec<Value>,
    pub criteria: Vec<CriterionPattern>,
}

#[derive(Debug, Error)]
pub enum SynthesisError {
    #[error("no templates for the requested apps")]
    NoTemplates,
    #[error("count must be at least 1")]
    ZeroCount,
    #[error("template `{template}`: {message}")]
    BadTemplate { template: String, message: String },
    #[error("verifier for {0} is not gated: {1}")]
    NotGated(AppId, String),
    #[error("materialization failed: {0}")]
    MaterializationFailure(String),
    #[error("only {emitted} of {requested} {app} tasks emitted after {considered} proposals")]
    Exhausted {
        app: AppId,
        requested: usize,
        emitted: usize,
        considered: usize,
    },
}

fn placeholders(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(start) = rest.find('{') {
        let Some(len) = rest[start..].find('}') else {
            break;
        };
        out.push(&rest[start + 1..start + len]);
        rest = &rest[start + len + 1..];
    }
    out
}

fn walk_strings<'a>(v: &'a Value, out: &mut Vec<&'a str>) {
    match v {
        Value::String(s) => out.push(s),
        Value::Array(items) => items.iter().for_each(|i| walk_strings(i, out)),
        Value::Object(map) => map.values().for_each(|i| walk_strings(i, out)),
        _ => {}
    }
}

impl GoalTemplate {
    pub fn from_json(text: &str) -> Result<Self, String> {
        let mut de = serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(&mut de)
            .map_err(|e| format!("{}: {}", e.path(), e.inner()))
    }

    /// Every placeholder must name a declared slot, and formula slots may
    /// only use slots declared before them.
    pub fn check(&self) -> Result<(), SynthesisError> {
        let bad = |message: String| SynthesisError::BadTemplate {
            template: self.template_id.clone(),
            message,
        };
        let mut declared = BTreeSet::new();
        for slot in &self.slots {
            match &slot.kind {
                SlotKind::Choice { values, .. } if values.is_empty() => {
                    return Err(bad(format!("slot `{}` has no values", slot.name)))
                }
                SlotKind::Int { min, max } if min > max => {
                    return Err(bad(format!("slot `{}` has min > max", slot.name)))
                }
                SlotKind::Formula { expr } => {
                    for p in placeholders(expr) {
                        if !declared.contains(p) {
                            return Err(bad(format!(
                                "formula slot `{}` uses `{p}` before it is drawn",
                                slot.name
                            )));
                        }
                    }
                }
                _ => {}
            }
            if !declared.insert(slot.name.as_str()) {
                return Err(bad(format!("slot `{}` declared twice", slot.name)));
            }
        }
        let mut texts = vec![self.instruction.as_str()];
        for v in self.seed.iter().chain(&self.solution) {
            walk_strings(v, &mut texts);
        }
        for c in &self.criteria {
            c.args.values().for_each(|v| walk_strings(v, &mut texts));
            if let Some(e) = &c.expect {
                walk_strings(e, &mut texts);
            }
        }
        for t in texts {
            for p in placeholders(t) {
                if !declared.contains(p) {
                    return Err(bad(format!("placeholder `{{{p}}}` has no slot")));
                }
            }
        }
        if self.criteria.is_empty() {
            return Err(bad("no criteria".into()));
        }
        if !(1..=5).contains(&self.base_difficulty) {
            return Err(bad("base_difficulty outside 1-5".into()));
        }
        Ok(())
    }
}

fn slot_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn fill_str(s: &str, slots: &BTreeMap<String, Value>) -> Value {
    if let Some(name) = s.strip_prefix('{').and_then(|r| r.strip_suffix('}')) {
        if let Some(v) = slots.get(name) {
            return v.clone();
        }
    }
    let mut out = s.to_string();
    for (k, v) in slots {
        out = out.replace(&format!("{{{k}}}"), &slot_text(v));
    }
    Value::String(out)
}

fn fill(v: &Value, slots: &BTreeMap<String, Value>) -> Value {
    match v {
        Value::String(s) => fill_str(s, slots),
        Value::Array(items) => Value::Array(items.iter().map(|i| fill(i, slots)).collect()),
        Value::Object(map) => Value::Object(
            map.iter()
                .map(|(k, i)| (k.clone(), fill(i, slots)))
                .collect(),
        ),
        other => other.clone(),
    }
}

fn eval_slot_formula(expr: &str, slots: &BTreeMap<String, Value>) -> Result<Value, String> {
    let src = slot_text(&fill_str(expr, slots));
    let parsed = parse_formula(&src).map_err(|e| format!("`{src}`: {e}"))?;
    let value =
        eval_expr(&WorkbookState::default(), "", &parsed).map_err(|e| format!("`{src}`: {e}"))?;
    Ok(match value.as_f64() {
        Some(n) if n.fract() == 0.0 && n.abs() < 9.0e15 => Value::from(n as i64),
        _ => value.to_json(),
    })
}

/// Draws a value for every slot in declaration order.
fn draw_slots(
    template: &GoalTemplate,
    rng: &mut ChaCha8Rng,
) -> Result<BTreeMap<String, Value>, String> {
    let mut out = BTreeMap::new();
    let mut used: BTreeMap<&str, BTreeSet<String>> = BTreeMap::new();
    for slot in &template.slots {
        let value = match &slot.kind {
            SlotKind::Choice { values, distinct } => {
                let taken = distinct.as_deref().map(|g| used.entry(g).or_default());
                let pool: Vec<&String> = values
                    .iter()
                    .filter(|v| taken.as_ref().is_none_or(|t| !t.contains(*v)))
                    .collect();
                let pick = (*pool
                    .choose(rng)
                    .ok_or_else(|| format!("slot `{}` ran out of distinct values", slot.name))?)
                .clone();
                if let Some(t) = taken {
                    t.insert(pick.clone());
                }
                Value::String(pick)
            }
            SlotKind::Int { min, max } => Value::from(rng.gen_range(*min..=*max)),
            SlotKind::Fixed { value } => value.clone(),
            SlotKind::Formula { expr } => eval_slot_formula(expr, &out)?,
        };
        out.insert(slot.name.clone(), value);
    }
    Ok(out)
}

fn to_actions(
    app: AppId,
    patterns: &[Value],
    slots: &BTreeMap<String, Value>,
) -> Result<Vec<AppAction>, String> {
    patterns
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut filled = fill(p, slots);
            if let Value::Object(map) = &mut filled {
                map.insert("app_id".into(), Value::String(app.as_str().into()));
            }
            serde_json::from_value(filled).map_err(|e| format!("action {i}: {e}"))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DraftCriterion {
    pub check: CheckSpec,
    pub inspectable: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Generatability {
    Unchecked,
    Ok,
    NoCoherentArtifacts(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "decision", rename_all = "snake_case")]
pub enum VerifierMatch {
    Unmatched,
    Retain,
    /// A new endpoint is needed; the sketch goes to the verifier backlog.
    Extend {
        endpoint_sketch: String,
        criterion_id: String,
    },
    Reject {
        reason: String,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TaskProposal {
    pub template_id: String,
    pub app_id: AppId,
    pub feature_area: String,
    pub slot_values: BTreeMap<String, Value>,
    pub instruction: String,
    pub criteria: Vec<DraftCriterion>,
    pub seed_actions: Vec<AppAction>,
    pub solution: Vec<AppAction>,
    pub difficulty_score: u8,
    pub generatability: Generatability,
    pub verifier_match: VerifierMatch,
    /// Drafting problems (unparseable action or criterion patterns).
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub draft_errors: Vec<String>,
}

fn draft(template: &GoalTemplate, slots: BTreeMap<String, Value>) -> TaskProposal {
    let mut errors = Vec::new();
    let app = template.app_id;
    let seed_actions = to_actions(app, &template.seed, &slots).unwrap_or_else(|e| {
        errors.push(format!("seed {e}"));
        Vec::new()
    });
    let solution = to_actions(app, &template.solution, &slots).unwrap_or_else(|e| {
        errors.push(format!("solution {e}"));
        Vec::new()
    });
    let mut criteria = Vec::new();
    for (i, c) in template.criteria.iter().enumerate() {
        let mut check = CheckSpec::new(&format!("c{i}"), &c.endpoint);
        for (k, v) in &c.args {
            check = check.arg(k, slot_text(&fill(v, &slots)));
        }
        if let Some(e) = &c.expect {
            match serde_json::from_value(fill(e, &slots)) {
                Ok(p) => check = check.expect(p),
                Err(err) => errors.push(format!("criterion c{i} expect: {err}")),
            }
        }
        criteria.push(DraftCriterion {
            check,
            inspectable: c.inspectable,
        });
    }
    let instruction = slot_text(&fill_str(&template.instruction, &slots));
    TaskProposal {
        template_id: template.template_id.clone(),
        app_id: app,
        feature_area: template.feature_area.clone(),
        slot_values: slots,
        instruction,
        criteria,
        seed_actions,
        solution,
        difficulty_score: 0,
        generatability: Generatability::Unchecked,
        verifier_match: VerifierMatch::Unmatched,
        draft_errors: errors,
    }
}

/// Endless proposal stream: templates in round-robin order, slots drawn
/// from one seeded generator.
pub struct ProposalStream<'a> {
    templates: &'a [GoalTemplate],
    rng: ChaCha8Rng,
    next: usize,
}

impl<'a> ProposalStream<'a> {
    pub fn new(templates: &'a [GoalTemplate], seed: u64) -> Result<Self, SynthesisError> {
        if templates.is_empty() {
            return Err(SynthesisError::NoTemplates);
        }
        for t in templates {
            t.check()?;
        }
        Ok(ProposalStream {
            templates,
            rng: ChaCha8Rng::seed_from_u64(seed),
            next: 0,
        })
    }
}

impl Iterator for ProposalStream<'_> {
    type Item = TaskProposal;

    fn next(&mut self) -> Option<TaskProposal> {
        let template = &self.templates[self.next % self.templates.len()];
        self.next += 1;
        let slots = draw_slots(template, &mut self.rng);
        Some(match slots {
            Ok(s) => draft(template, s),
            Err(e) => {
                let mut p = draft(template, BTreeMap::new());
                p.draft_errors.push(e);
                p
            }
        })
    }
}

/// `count` proposals drafted without looking at the verifier registry.
pub fn propose_goals(
    templates: &[GoalTemplate],
    count: usize,
    seed: u64,
) -> Result<Vec<TaskProposal>, SynthesisError> {
    if count == 0 {
        return Err(SynthesisError::ZeroCount);
    }
    Ok(ProposalStream::new(templates, seed)?.take(count).collect())
}

/// Difficulty rubric: distinct action verbs in the solution, plus one when
/// criteria span more than one inspection surface, plus one for six or more
/// criteria; clamped to 1..=5.
pub fn difficulty_score(p: &TaskProposal) -> u8 {
    let verbs: BTreeSet<&str> = p.solution.iter().map(|a| a.verb.as_str()).collect();
    let surfaces: BTreeSet<_> = p
        .criteria
        .iter()
        .filter_map(|c| endpoint(p.app_id, &c.check.endpoint).map(|e| e.surface))
        .collect();
    let score = verbs.len() + usize::from(surfaces.len() > 1) + usize::from(p.criteria.len() >= 6);
    score.clamp(1, 5) as u8
}

/// Builds the seed state by applying the seed actions to an empty app in a
/// scratch directory and reading the persisted files back.
fn seed_artifacts(app: AppId, actions: &[AppAction]) -> Result<Vec<SeedArtifact>, String> {
    if actions.is_empty() {
        return Ok(Vec::new());
    }
    let mut state = AppState::empty(app);
    for (i, a) in actions.iter().enumerate() {
        state = apps::apply_action(&state, a)
            .map_err(|e| format!("seed action {i} ({}): {e}", a.verb))?;
    }
    let scratch = tempfile::tempdir().map_err(|e| e.to_string())?;
    let written = persist_app_state(&state, scratch.path()).map_err(|e| e.to_string())?;
    let mut out = Vec::new();
    for rel in written.iter().filter(|r| !r.ends_with('/')) {
        let content = std::fs::read(scratch.path().join(rel)).map_err(|e| format!("{rel}: {e}"))?;
        let kind = match app {
            AppId::Vault if rel.ends_with(".md") => SeedKind::VaultNote,
            AppId::Vault => SeedKind::PlainFile,
            AppId::Workbook => SeedKind::WorkbookFile,
            AppId::Media => SeedKind::StoreFile,
        };
        out.push(SeedArtifact {
            rel_path: rel.clone(),
            kind,
            content,
        });
    }
    out.sort_by(|a, b| a.rel_path.cmp(&b.rel_path));
    Ok(out)
}

/// Scores difficulty and decides generatability by materializing the seed
/// state and replaying the solution over it in a scratch area.
pub fn filter_proposal(mut p: TaskProposal) -> TaskProposal {
    p.difficulty_score = difficulty_score(&p);
    p.generatability = if let Some(e) = p.draft_errors.first() {
        Generatability::NoCoherentArtifacts(e.clone())
    } else {
        let seeded = seed_artifacts(p.app_id, &p.seed_actions).and_then(|_| {
            let mut state = AppState::empty(p.app_id);
            for a in p.seed_actions.iter().chain(&p.solution) {
                state = apps::apply_action(&state, a).map_err(|e| format!("{}: {e}", a.verb))?;
            }
            Ok(())
        });
        match seeded {
            Ok(()) => Generatability::Ok,
            Err(e) => Generatability::NoCoherentArtifacts(e),
        }
    };
    p
}

/// Retain when every criterion maps to a registered endpoint with valid
/// args; extend when an inspectable outcome lacks an endpoint; reject when
/// an outcome is not inspectable or reads a resource with an open lesson.
pub fn match_verifier(mut p: TaskProposal, lessons: &[Lesson]) -> TaskProposal {
    let open = open_resources(lessons);
    let mut decision = VerifierMatch::Retain;
    for c in &p.criteria {
        let id = &c.check.criterion_id;
        if !c.inspectable {
            decision = VerifierMatch::Reject {
                reason: format!(
                    "{id}: presentation-level outcome, not inspectable from persisted state"
                ),
            };
            break;
        }
        let Some(spec) = endpoint(p.app_id, &c.check.endpoint) else {
            if decision == VerifierMatch::Retain {
                decision = VerifierMatch::Extend {
                    endpoint_sketch: c.check.endpoint.clone(),
                    criterion_id: id.clone(),
                };
            }
            continue;
        };
        let problems = spec.check_args(&c.check.args);
        if !problems.is_empty() {
            decision = VerifierMatch::Reject {
                reason: format!("{id}: {}", problems.join("; ")),
            };
            break;
        }
        if let Some(r) = spec.reads.iter().find(|r| open.contains(**r)) {
            decision = VerifierMatch::Reject {
                reason: format!("{id}: `{r}` has an unresolved lesson"),
            };
            break;
        }
    }
    p.verifier_match = decision;
    p
}

/// Task id derived from the template, the generation seed and the position.
fn task_id(p: &TaskProposal, seed: u64, ordinal: usize) -> String {
    format!("{}-s{seed}-{ordinal:03}", p.template_id)
}

fn as_task(p: &TaskProposal, seed: u64, ordinal: usize, env_init: EnvInitRecipe) -> TaskInstance {
    let mut metadata = BTreeMap::new();
    metadata.insert("template_id".into(), Value::String(p.template_id.clone()));
    metadata.insert("feature_area".into(), Value::String(p.feature_area.clone()));
    metadata.insert("generation_seed".into(), Value::from(seed));
    metadata.insert(
        "slots".into(),
        Value::Object(
            p.slot_values
                .iter()
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        ),
    );
    TaskInstance {
        task_id: task_id(p, seed, ordinal),
        app_id: p.app_id,
        instruction: p.instruction.clone(),
        difficulty: p.difficulty_score,
        env_init,
        criteria: p.criteria.iter().map(|c| c.check.clone()).collect(),
        metadata,
    }
}

/// Seed artifacts for a retained proposal.
pub fn materialize_environment(p: &TaskProposal) -> Result<EnvInitRecipe, SynthesisError> {
    Ok(EnvInitRecipe {
        seed_artifacts: seed_artifacts(p.app_id, &p.seed_actions)
            .map_err(SynthesisError::MaterializationFailure)?,
        init_actions: Vec::new(),
    })
}

/// Emission checks on a materialized task: zero validation findings, two
/// initializations agree, at least one criterion fails at init, and the
/// matched agent satisfies every criterion under the shipped verifier.
pub fn audit_emission(task: &TaskInstance, agent: &ScriptedAgent) -> Result<(), String> {
    let report = validate_task_instance(task, list_endpoints(task.app_id));
    if let Some(f) = report.findings.first() {
        return Err(format!("validation: {}: {}", f.path, f.message));
    }
    let cfg = VerifierConfig::shipped(task.app_id);
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let sa =
        init_sandbox(task, SandboxSpec::new(a.path(), task.app_id)).map_err(|e| e.to_string())?;
    let sb =
        init_sandbox(task, SandboxSpec::new(b.path(), task.app_id)).map_err(|e| e.to_string())?;
    if sa.initial_digest() != sb.initial_digest() {
        return Err("two initializations disagree".into());
    }
    drop(sb);
    if run_check_suite(&cfg, task, a.path())
        .iter()
        .all(|v| v.counts_as_pass())
    {
        return Err("every criterion already passes at init".into());
    }
    let mut sandbox = sa;
    let trajectory =
        execute_agent(&mut sandbox, agent, &task.task_id).map_err(|e| e.to_string())?;
    if let Some(step) = trajectory.steps().iter().find(|s| s.error.is_some()) {
        return Err(format!(
            "solution step {} fails: {}",
            step.index,
            step.error.as_deref().unwrap_or_default()
        ));
    }
    finalize_run(&sandbox).map_err(|e| e.to_string())?;
    let failing: Vec<String> = run_check_suite(&cfg, task, a.path())
        .iter()
        .filter(|v| !v.counts_as_pass())
        .filter_map(|v| v.criterion_id.clone())
        .collect();
    if !failing.is_empty() {
        return Err(format!("solution leaves {} failing", failing.join(", ")));
    }
    Ok(())
}

/// Which difficulty band a generation run admits.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    /// Easy-to-medium tasks (1..=3) for verifier calibration.
    Calibration,
    /// Upper half of the scale (3..=5) for scoring agents.
    Benchmark,
}

impl Policy {
    pub fn admits(self, difficulty: u8) -> bool {
        match self {
            Policy::Calibration => (1..=3).contains(&difficulty),
            Policy::Benchmark => (3..=5).contains(&difficulty),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct EmittedTask {
    pub task: TaskInstance,
    pub agent: ScriptedAgent,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Rejection {
    pub template_id: String,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ManifestEntry {
    pub task_id: String,
    pub app_id: AppId,
    pub template_id: String,
    pub feature_area: String,
    pub difficulty: u8,
    pub criteria: usize,
    pub seed_artifacts: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Manifest {
    pub policy: Policy,
    pub seed: u64,
    pub apps: Vec<AppId>,
    pub count_per_app: usize,
    pub task_count: usize,
    pub proposals_considered: usize,
    pub rejected: usize,
    pub mean_criteria_per_task: f64,
    pub mean_seed_artifacts_per_task: f64,
    pub difficulty_histogram: BTreeMap<u8, usize>,
    pub tasks: Vec<ManifestEntry>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Generation {
    pub tasks: Vec<EmittedTask>,
    pub rejections: Vec<Rejection>,
    pub extension_requests: Vec<Rejection>,
    pub manifest: Manifest,
}

fn mean(total: usize, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        (total as f64 / n as f64 * 100.0).round() / 100.0
    }
}

fn app_stream_seed(seed: u64, app: AppId) -> u64 {
    let ordinal = AppId::ALL.iter().position(|a| *a == app).unwrap_or(0) as u64;
    seed.wrapping_mul(1_000_003).wrapping_add(ordinal)
}

/// Full pipeline per app: draw proposals until `count_per_app` pass the
/// rubric, generatability, verifier matching and the emission audit.
pub fn generate(
    templates: &[GoalTemplate],
    apps: &[AppId],
    count_per_app: usize,
    seed: u64,
    policy: Policy,
    lessons: &[Lesson],
) -> Result<Generation, SynthesisError> {
    if count_per_app == 0 {
        return Err(SynthesisError::ZeroCount);
    }
    let mut tasks = Vec::new();
    let mut rejections = Vec::new();
    let mut extension_requests = Vec::new();
    let mut considered = 0;
    for &app in apps {
        let selftest = crate::verifier::selftest::run_verifier_selftest(
            &VerifierConfig::shipped(app),
            &crate::verifier::selftest::shipped_fixture_plan(app),
        );
        if !selftest.gated {
            return Err(SynthesisError::NotGated(
                app,
                format!("{:?}", selftest.coverage_gaps),
            ));
        }
        let pool: Vec<GoalTemplate> = templates
            .iter()
            .filter(|t| t.app_id == app)
            .cloned()
            .collect();
        let stream = ProposalStream::new(&pool, app_stream_seed(seed, app))?;
        let mut seen = BTreeSet::new();
        let mut emitted = 0;
        let limit = count_per_app * 40;
        let mut app_considered = 0;
        for proposal in stream.take(limit) {
            if emitted == count_per_app {
                break;
            }
            app_considered += 1;
            let key = (
                proposal.template_id.clone(),
                serde_json::to_string(&proposal.slot_values).unwrap_or_default(),
            );
            if !seen.insert(key) {
                continue;
            }
            let p = match_verifier(filter_proposal(proposal), lessons);
            let reject = |reason: String| Rejection {
                template_id: p.template_id.clone(),
                reason,
            };
            if !policy.admits(p.difficulty_score) {
                rejections.push(reject(format!(
                    "difficulty {} outside the {policy:?} band",
                    p.difficulty_score
                )));
                continue;
            }
            if let Generatability::NoCoherentArtifacts(e) = &p.generatability {
                rejections.push(reject(format!("no coherent artifacts: {e}")));
                continue;
            }
            match &p.verifier_match {
                VerifierMatch::Retain => {}
                VerifierMatch::Extend {
                    endpoint_sketch,
                    criterion_id,
                } => {
                    extension_requests
                        .push(reject(format!("{criterion_id} needs `{endpoint_sketch}`")));
                    continue;
                }
                VerifierMatch::Reject { reason } => {
                    rejections.push(reject(reason.clone()));
                    continue;
                }
                VerifierMatch::Unmatched => unreachable!("match_verifier always decides"),
            }
            let env_init = materialize_environment(&p)?;
            let task = as_task(&p, seed, emitted, env_init);
            let agent =
                ScriptedAgent::new(&format!("scripted:{}", task.task_id), p.solution.clone());
            if let Err(e) = audit_emission(&task, &agent) {
                rejections.push(reject(format!("emission audit: {e}")));
                continue;
            }
            tasks.push(EmittedTask { task, agent });
            emitted += 1;
        }
        considered += app_considered;
        if emitted < count_per_app {
            return Err(SynthesisError::Exhausted {
                app,
                requested: count_per_app,
                emitted,
                considered: app_considered,
            });
        }
    }
    let entries: Vec<ManifestEntry> = tasks
        .iter()
        .map(|t| ManifestEntry {
            task_id: t.task.task_id.clone(),
            app_id: t.task.app_id,
            template_id: t.task.metadata["template_id"]
                .as_str()
                .unwrap_or_default()
                .to_string(),
            feature_area: t.task.metadata["feature_area"]
                .as_str()
                .unwrap_or_default()
                .to_string(),
            difficulty: t.task.difficulty,
            criteria: t.task.criteria.len(),
            seed_artifacts: t.task.env_init.seed_artifacts.len(),
        })
        .collect();
    let mut histogram = BTreeMap::new();
    for e in &entries {
        *histogram.entry(e.difficulty).or_insert(0) += 1;
    }
    let manifest = Manifest {
        policy,
        seed,
        apps: apps.to_vec(),
        count_per_app,
        task_count: entries.len(),
        proposals_considered: considered,
        rejected: rejections.len() + extension_requests.len(),
        mean_criteria_per_task: mean(entries.iter().map(|e| e.criteria).sum(), entries.len()),
        mean_seed_artifacts_per_task: mean(
            entries.iter().map(|e| e.seed_artifacts).sum(),
            entries.len(),
        ),
        difficulty_histogram: histogram,
        tasks: entries,
    };
    Ok(Generation {
        tasks,
        rejections,
        extension_requests,
        manifest,
    })
}

fn pretty<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("generation output serializes");
    s.push('\n');
    s
}

/// Writes `<out>/<task_id>/task.json`, `<out>/<task_id>/agent.json` and
/// `<out>/manifest.json`.
pub fn write_generation(out: &Path, generation: &Generation) -> std::io::Result<()> {
    std::fs::create_dir_all(out)?;
    for t in &generation.tasks {
        let dir = out.join(&t.task.task_id);
        std::fs::create_dir_all(&dir)?;
        std::fs::write(dir.join("task.json"), t.task.to_json())?;
        std::fs::write(dir.join("agent.json"), t.agent.to_json())?;
    }
    std::fs::write(out.join("manifest.json"), pretty(&generation.manifest))
}

/// Calibration pairs for `app`: easy-to-medium tasks with matched agents.
pub fn calibration_set(
    app: AppId,
    size: usize,
    seed: u64,
) -> Result<Vec<EmittedTask>, SynthesisError> {
    generate(
        &shipped_templates(),
        &[app],
        size,
        seed,
        Policy::Calibration,
        &[],
    )
    .map(|g| g.tasks)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CoverageGap {
    pub app_id: AppId,
    pub feature_area: String,
    pub existing_task_count: usize,
    pub has_reliable_verification_path: bool,
    /// 1 is the most urgent.
    pub priority: usize,
}

/// Feature areas with fewer than `min_per_area` tasks. Areas with a
/// verification path free of open lessons rank first, then emptier areas.
pub fn review_coverage(
    tasks: &[TaskInstance],
    templates: &[GoalTemplate],
    lessons: &[Lesson],
    min_per_area: usize,
) -> Vec<CoverageGap> {
    let open = open_resources(lessons);
    let mut areas: BTreeMap<(AppId, String), (usize, bool)> = BTreeMap::new();
    for t in templates {
        let reliable = t.criteria.iter().all(|c| {
            endpoint(t.app_id, &c.endpoint)
                .is_some_and(|e| e.reads.iter().all(|r| !open.contains(*r)))
        });
        let entry = areas
            .entry((t.app_id, t.feature_area.clone()))
            .or_insert((0, false));
        entry.1 |= reliable;
    }
    for task in tasks {
        if let Some(area) = task.metadata.get("feature_area").and_then(Value::as_str) {
            if let Some(entry) = areas.get_mut(&(task.app_id, area.to_string())) {
                entry.0 += 1;
            }
        }
    }
    let mut gaps: Vec<CoverageGap> = areas
        .into_iter()
        .filter(|(_, (count, _))| *count < min_per_area)
        .map(|((app, area), (count, reliable))| CoverageGap {
            app_id: app,
            feature_area: area,
            existing_task_count: count,
            has_reliable_verification_path: reliable,
            priority: 0,
        })
        .collect();
    gaps.sort_by(|a, b| {
        (
            !a.has_reliable_verification_path,
            a.existing_task_count,
            a.app_id,
            &a.feature_area,
        )
            .cmp(&(
                !b.has_reliable_verification_path,
                b.existing_task_count,
                b.app_id,
                &b.feature_area,
            ))
    });
    for (i, g) in gaps.iter_mut().enumerate() {
        g.priority = i + 1;
    }
    gaps
}
