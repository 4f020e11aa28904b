//! Execution-grounded verifier repair over frozen runs.

pub mod agreement;
pub mod faults;
mod inspector;
pub mod lessons;
pub mod operators;
pub mod study;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub use agreement::{agreement_report, AgreementInput, AgreementMeasures, AgreementSummary};
pub use inspector::{
    inspect_state, reference_evaluate, GroundTruthInspector, ReferenceJudge, ReferenceVerdict,
};
pub use lessons::{
    append_lessons, apply_deltas, load_lessons, open_resources, BindingDelta, Lesson,
};
pub use operators::{propose_candidates, Candidate, RepairOperator};

use crate::apps::{directory_digest, AppId, StateError};
use crate::harness::{sha256_hex, RunArtifact};
use crate::task::TaskInstance;
use crate::verifier::{endpoint, run_check_suite, VerdictRecord, VerifierConfig};

pub const DEFAULT_EVOLUTION_BUDGET: usize = 3;

#[derive(Debug, Error)]
pub enum EvolutionError {
    #[error(
        "criterion sets differ: missing from reference {missing:?}, extra in reference {extra:?}"
    )]
    CriterionMismatch {
        missing: Vec<String>,
        extra: Vec<String>,
    },
    #[error("frozen state violation: {what} digest changed (recorded {expected}, found {found})")]
    FrozenStateViolation {
        what: String,
        expected: String,
        found: String,
    },
    #[error("cannot read final state: {0}")]
    State(#[from] StateError),
    #[error("config is for app {config} but the run is for {run}")]
    AppMismatch { config: AppId, run: AppId },
    #[error("no runs supplied")]
    EmptyInput,
}

/// A criterion on which the verifier and the reference disagree.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Divergence {
    pub criterion_id: String,
    pub verifier_passed: bool,
    pub reference_passed: bool,
}

/// Criterion-by-criterion join on ids; order follows the verifier list.
pub fn align_verdicts(
    verifier: &[VerdictRecord],
    reference: &[ReferenceVerdict],
) -> Result<Vec<Divergence>, EvolutionError> {
    let by_id: BTreeMap<&str, bool> = reference
        .iter()
        .map(|r| (r.criterion_id.as_str(), r.passed))
        .collect();
    let ids: BTreeSet<&str> = verifier
        .iter()
        .filter_map(|v| v.criterion_id.as_deref())
        .collect();
    let missing: Vec<String> = ids
        .iter()
        .filter(|i| !by_id.contains_key(*i))
        .map(|s| s.to_string())
        .collect();
    let extra: Vec<String> = by_id
        .keys()
        .filter(|i| !ids.contains(*i))
        .map(|s| s.to_string())
        .collect();
    if !missing.is_empty() || !extra.is_empty() || ids.len() != verifier.len() {
        return Err(EvolutionError::CriterionMismatch { missing, extra });
    }
    Ok(verifier
        .iter()
        .filter_map(|v| {
            let id = v.criterion_id.as_deref()?;
            let reference_passed = by_id[id];
            (v.counts_as_pass() != reference_passed).then(|| Divergence {
                criterion_id: id.to_string(),
                verifier_passed: v.counts_as_pass(),
                reference_passed,
            })
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attribution {
    VerifierWrong,
    AgentFailure,
    ReferenceWrong,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DisagreementRecord {
    pub criterion_id: String,
    pub verifier_passed: bool,
    pub reference_passed: bool,
    pub ground_truth_passed: bool,
    pub classification: Attribution,
    pub rationale: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<Value>,
}

/// Attributes a divergence using the ground-truth inspector's verdict.
/// The verifier is wrong when it contradicts ground truth. Otherwise the
/// reference is the odd one out: if the criterion is genuinely unmet the
/// run failed (agent failure), else the reference misjudged a met criterion.
pub fn classify_disagreement(
    d: &Divergence,
    ground_truth: &ReferenceVerdict,
    verdict: &VerdictRecord,
) -> DisagreementRecord {
    let (classification, rationale) = if d.verifier_passed != ground_truth.passed {
        let how = match verdict.failure() {
            Some(f) => format!(
                "checker errored ({}) on a criterion the state {}",
                f.get("kind").and_then(Value::as_str).unwrap_or("unknown"),
                if ground_truth.passed {
                    "satisfies"
                } else {
                    "does not satisfy"
                }
            ),
            None if ground_truth.passed => {
                "checker failed a criterion the state satisfies".to_string()
            }
            None => "checker passed a criterion the state does not satisfy".to_string(),
        };
        (Attribution::VerifierWrong, how)
    } else if !ground_truth.passed {
        (
            Attribution::AgentFailure,
            "criterion genuinely unmet in the final state; the reference was lenient".to_string(),
        )
    } else {
        (
            Attribution::ReferenceWrong,
            "criterion met and verified; the reference judgment is wrong".to_string(),
        )
    };
    DisagreementRecord {
        criterion_id: d.criterion_id.clone(),
        verifier_passed: d.verifier_passed,
        reference_passed: d.reference_passed,
        ground_truth_passed: ground_truth.passed,
        classification,
        rationale,
        failure: verdict.failure().cloned(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvolutionOutcome {
    Fixed,
    NotFixedWithinBudget,
    NoDisagreement,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct IntegrityDigests {
    pub task: String,
    pub trajectory: String,
    pub final_state: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct RoundRecord {
    pub round: usize,
    pub operator: RepairOperator,
    pub deltas: Vec<BindingDelta>,
    pub guided: bool,
    pub rationale: String,
    pub verifier_wrong: usize,
    pub divergences: usize,
    pub kept: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct EvolutionReport {
    pub task_id: String,
    pub app_id: AppId,
    pub reference: String,
    pub budget: usize,
    pub rounds_used: usize,
    pub divergences_before: usize,
    pub divergences_after: usize,
    pub verifier_wrong_before: usize,
    pub verifier_wrong_after: usize,
    pub outcome: EvolutionOutcome,
    pub no_applicable_operator: bool,
    pub revision_from: u64,
    pub revision_to: u64,
    pub disagreements_before: Vec<DisagreementRecord>,
    pub disagreements_after: Vec<DisagreementRecord>,
    pub rounds: Vec<RoundRecord>,
    pub repairs: Vec<Lesson>,
    pub unresolved: Vec<Lesson>,
    pub integrity_pre: IntegrityDigests,
    pub integrity_post: IntegrityDigests,
}

impl EvolutionReport {
    /// Every lesson this report wants appended to the ledger.
    pub fn lessons(&self) -> Vec<Lesson> {
        self.repairs
            .iter()
            .chain(&self.unresolved)
            .cloned()
            .collect()
    }
}

fn read_digest(path: &Path) -> Result<String, EvolutionError> {
    std::fs::read(path).map(|b| sha256_hex(&b)).map_err(|e| {
        EvolutionError::State(StateError::Io {
            path: path.display().to_string(),
            source: e,
        })
    })
}

fn integrity(run: &RunArtifact) -> Result<IntegrityDigests, EvolutionError> {
    Ok(IntegrityDigests {
        task: read_digest(&run.run_dir.join("task.json"))?,
        trajectory: read_digest(&run.run_dir.join("trajectory.json"))?,
        final_state: directory_digest(&run.final_state())?,
    })
}

fn ensure(what: &str, expected: &str, found: &str) -> Result<(), EvolutionError> {
    if expected == found {
        Ok(())
    } else {
        Err(EvolutionError::FrozenStateViolation {
            what: what.into(),
            expected: expected.into(),
            found: found.into(),
        })
    }
}

fn ensure_final_state(run: &RunArtifact) -> Result<(), EvolutionError> {
    let found = directory_digest(&run.final_state())?;
    ensure("final_state", &run.meta.final_state_files_digest, &found)
}

struct Diagnosis {
    verdicts: Vec<VerdictRecord>,
    records: Vec<DisagreementRecord>,
}

impl Diagnosis {
    fn verifier_wrong(&self) -> usize {
        self.records
            .iter()
            .filter(|r| r.classification == Attribution::VerifierWrong)
            .count()
    }
}

fn diagnose(
    cfg: &VerifierConfig,
    task: &TaskInstance,
    root: &Path,
    reference: &[ReferenceVerdict],
    truth: &[ReferenceVerdict],
) -> Result<Diagnosis, EvolutionError> {
    let verdicts = run_check_suite(cfg, task, root);
    let truth_by_id: BTreeMap<&str, &ReferenceVerdict> =
        truth.iter().map(|t| (t.criterion_id.as_str(), t)).collect();
    let records = align_verdicts(&verdicts, reference)?
        .iter()
        .map(|d| {
            let verdict = verdicts
                .iter()
                .find(|v| v.criterion_id.as_deref() == Some(d.criterion_id.as_str()))
                .expect("aligned ids come from the verdict list");
            classify_disagreement(d, truth_by_id[d.criterion_id.as_str()], verdict)
        })
        .collect();
    Ok(Diagnosis { verdicts, records })
}

/// Resources implicated by the verifier-side disagreements that remain.
fn implicated(
    cfg: &VerifierConfig,
    task: &TaskInstance,
    records: &[DisagreementRecord],
) -> Vec<String> {
    let mut out = BTreeSet::new();
    for r in records
        .iter()
        .filter(|r| r.classification == Attribution::VerifierWrong)
    {
        if let Some(res) = r
            .failure
            .as_ref()
            .and_then(|f| f.get("resource"))
            .and_then(Value::as_str)
        {
            out.insert(res.to_string());
            continue;
        }
        let Some(c) = task
            .criteria
            .iter()
            .find(|c| c.criterion_id == r.criterion_id)
        else {
            continue;
        };
        if let Some(spec) = endpoint(task.app_id, &c.endpoint) {
            out.extend(spec.reads.iter().map(|s| s.to_string()));
            out.extend(
                spec.logic
                    .iter()
                    .filter(|k| cfg.logic(k).is_some())
                    .map(|s| s.to_string()),
            );
        }
    }
    out.into_iter().collect()
}

/// Bounded repair loop over a frozen run. Each round tries one candidate on
/// the cached final state and keeps it only when verifier-side
/// disagreements strictly drop without raising the total.
pub fn evolve_verifier(
    run: &RunArtifact,
    cfg: &VerifierConfig,
    budget: usize,
    judge: &dyn ReferenceJudge,
) -> Result<(VerifierConfig, EvolutionReport), EvolutionError> {
    let task = &run.task;
    if cfg.app_id != task.app_id {
        return Err(EvolutionError::AppMismatch {
            config: cfg.app_id,
            run: task.app_id,
        });
    }
    let pre = integrity(run)?;
    ensure("task", &run.meta.task_digest, &pre.task)?;
    ensure("trajectory", &run.meta.trajectory_hash, &pre.trajectory)?;
    ensure(
        "final_state",
        &run.meta.final_state_files_digest,
        &pre.final_state,
    )?;
    let root = run.final_state();

    let truth = GroundTruthInspector.evaluate(task, &root)?;
    let reference = judge.evaluate(task, &root)?;
    let mut current = cfg.clone();
    let mut diag = diagnose(&current, task, &root, &reference, &truth)?;
    let before = diag.records.clone();
    let wrong_before = diag.verifier_wrong();

    let mut rounds = Vec::new();
    let mut repairs = Vec::new();
    let mut tried: BTreeSet<Vec<BindingDelta>> = BTreeSet::new();
    let mut no_applicable_operator = false;
    while diag.verifier_wrong() > 0 && rounds.len() < budget {
        let candidate = propose_candidates(&current, &diag.records, &diag.verdicts, &root)
            .into_iter()
            .find(|c| !tried.contains(&c.deltas));
        let Some(candidate) = candidate else {
            no_applicable_operator = true;
            break;
        };
        tried.insert(candidate.deltas.clone());
        let trial_cfg = apply_deltas(&current, &candidate.deltas)
            .expect("candidates are derived from the current bindings");
        ensure_final_state(run)?;
        let trial = diagnose(&trial_cfg, task, &root, &reference, &truth)?;
        let kept = trial.verifier_wrong() < diag.verifier_wrong()
            && trial.records.len() <= diag.records.len();
        rounds.push(RoundRecord {
            round: rounds.len() + 1,
            operator: candidate.operator,
            deltas: candidate.deltas.clone(),
            guided: candidate.guided,
            rationale: candidate.rationale.clone(),
            verifier_wrong: trial.verifier_wrong(),
            divergences: trial.records.len(),
            kept,
        });
        if kept {
            repairs.push(Lesson {
                app_id: task.app_id,
                source_task_id: task.task_id.clone(),
                failed_assumption: candidate.rationale,
                operator: Some(candidate.operator.as_str().to_string()),
                resources: candidate
                    .deltas
                    .iter()
                    .map(|d| d.resource.clone())
                    .collect(),
                corrective_action: candidate.deltas,
                revision_from: current.revision,
                revision_to: trial_cfg.revision,
                resolved: trial.verifier_wrong() == 0,
            });
            current = trial_cfg;
            diag = trial;
        }
    }

    let wrong_after = diag.verifier_wrong();
    let outcome = match (wrong_before, wrong_after) {
        (0, _) => EvolutionOutcome::NoDisagreement,
        (_, 0) => EvolutionOutcome::Fixed,
        _ => EvolutionOutcome::NotFixedWithinBudget,
    };
    let unresolved = if wrong_after > 0 {
        let ids: Vec<&str> = diag
            .records
            .iter()
            .filter(|r| r.classification == Attribution::VerifierWrong)
            .map(|r| r.criterion_id.as_str())
            .collect();
        vec![Lesson {
            app_id: task.app_id,
            source_task_id: task.task_id.clone(),
            failed_assumption: format!(
                "no binding repair reconciles criteria {} with the inspected state",
                ids.join(", ")
            ),
            operator: None,
            corrective_action: Vec::new(),
            resources: implicated(&current, task, &diag.records),
            revision_from: current.revision,
            revision_to: current.revision,
            resolved: false,
        }]
    } else {
        Vec::new()
    };

    let post = integrity(run)?;
    ensure("task", &pre.task, &post.task)?;
    ensure("trajectory", &pre.trajectory, &post.trajectory)?;
    ensure("final_state", &pre.final_state, &post.final_state)?;
    let report = EvolutionReport {
        task_id: task.task_id.clone(),
        app_id: task.app_id,
        reference: judge.judge_id().to_string(),
        budget,
        rounds_used: rounds.len(),
        divergences_before: before.len(),
        divergences_after: diag.records.len(),
        verifier_wrong_before: wrong_before,
        verifier_wrong_after: wrong_after,
        outcome,
        no_applicable_operator,
        revision_from: cfg.revision,
        revision_to: current.revision,
        disagreements_before: before,
        disagreements_after: diag.records,
        rounds,
        repairs,
        unresolved,
        integrity_pre: pre,
        integrity_post: post,
    };
    Ok((current, report))
}
