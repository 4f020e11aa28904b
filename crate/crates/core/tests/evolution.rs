use std::path::Path;

use softworld::apps::{AppId, StateError};
use softworld::bundles::{media_batch_rate_and_tag, shipped_bundles, MEDIA_TRAJECTORY_STEPS};
use softworld::evolution::faults::fault_catalog;
use softworld::evolution::{
    align_verdicts, append_lessons, evolve_verifier, load_lessons, reference_evaluate, Attribution,
    EvolutionError, EvolutionOutcome, GroundTruthInspector, ReferenceJudge, ReferenceVerdict,
    RepairOperator, DEFAULT_EVOLUTION_BUDGET,
};
use softworld::harness::{run_task, RunArtifact, RunOptions};
use softworld::task::TaskInstance;
use softworld::verifier::{run_check_suite, VerifierConfig};

fn media_run(cfg: &VerifierConfig, runs: &Path) -> RunArtifact {
    let b = media_batch_rate_and_tag();
    run_task(&b.task, b.agent(), cfg, &RunOptions::new(runs)).unwrap()
}

#[test]
fn stale_store_binding_is_repaired_in_one_round() {
    let runs = tempfile::tempdir().unwrap();
    let v1 = VerifierConfig::media_v1();
    let run = media_run(&v1, runs.path());
    assert_eq!(run.trajectory.steps().len(), MEDIA_TRAJECTORY_STEPS);
    assert_eq!((run.reward.n_pass, run.reward.n_total), (6, 10));

    let reference = reference_evaluate(&run.task, &run.final_state()).unwrap();
    assert!(reference.iter().all(|r| r.passed));
    let divergences = align_verdicts(&run.verdicts, &reference).unwrap();
    let ids: Vec<&str> = divergences
        .iter()
        .map(|d| d.criterion_id.as_str())
        .collect();
    assert_eq!(ids, ["c3", "c4", "c5", "c6"]);

    let (fixed, report) =
        evolve_verifier(&run, &v1, DEFAULT_EVOLUTION_BUDGET, &GroundTruthInspector).unwrap();
    assert_eq!(report.outcome, EvolutionOutcome::Fixed);
    assert_eq!(
        (
            report.rounds_used,
            report.divergences_before,
            report.divergences_after
        ),
        (1, 4, 0)
    );
    assert!(report
        .disagreements_before
        .iter()
        .all(|d| d.classification == Attribution::VerifierWrong));
    assert_eq!(report.integrity_pre, report.integrity_post);
    assert_eq!(report.repairs.len(), 1);
    let lesson = &report.repairs[0];
    assert_eq!(
        lesson.operator.as_deref(),
        Some(RepairOperator::StoreRebinding.as_str())
    );
    assert!(lesson
        .corrective_action
        .iter()
        .any(|d| d.resource == "table:tags"
            && d.old.as_deref() == Some("library")
            && d.new.as_deref() == Some("data")));
    assert_eq!(lesson.replay(&v1).unwrap().to_json(), fixed.to_json());
    assert_eq!(fixed.revision, v1.revision + 1);

    let rerun = media_run(&fixed, runs.path());
    assert_eq!((rerun.reward.n_pass, rerun.reward.n_total), (10, 10));
}

#[test]
fn fault_free_config_reports_no_disagreement() {
    let runs = tempfile::tempdir().unwrap();
    let cfg = VerifierConfig::shipped(AppId::Media);
    let run = media_run(&cfg, runs.path());
    let (out, report) = evolve_verifier(&run, &cfg, 3, &GroundTruthInspector).unwrap();
    assert_eq!(report.outcome, EvolutionOutcome::NoDisagreement);
    assert_eq!(report.rounds_used, 0);
    assert_eq!(out, cfg);
}

#[test]
fn inverted_comparison_is_not_fixed_within_budget() {
    let runs = tempfile::tempdir().unwrap();
    let fault = fault_catalog(AppId::Media)
        .into_iter()
        .find(|f| f.id == "logic:inverted_comparison")
        .unwrap();
    let cfg = fault.inject(&VerifierConfig::shipped(AppId::Media));
    let run = media_run(&cfg, runs.path());
    let (out, report) = evolve_verifier(&run, &cfg, 3, &GroundTruthInspector).unwrap();
    assert_eq!(report.outcome, EvolutionOutcome::NotFixedWithinBudget);
    assert_eq!(report.rounds_used, 3);
    assert!(report.rounds.iter().all(|r| !r.kept));
    assert_eq!(out, cfg);
    assert_eq!(report.divergences_after, report.divergences_before);
    let unresolved = &report.unresolved[0];
    assert!(!unresolved.resolved);
    assert!(unresolved.resources.iter().any(|r| r == "logic:comparison"));
}

#[test]
fn uncovered_fault_without_candidates_stops_early() {
    let runs = tempfile::tempdir().unwrap();
    let b = shipped_bundles()
        .into_iter()
        .find(|b| b.task.app_id == AppId::Workbook)
        .unwrap();
    let fault = fault_catalog(AppId::Workbook)
        .into_iter()
        .find(|f| f.id == "logic:inverted_comparison")
        .unwrap();
    let cfg = fault.inject(&VerifierConfig::shipped(AppId::Workbook));
    let run = run_task(&b.task, b.agent(), &cfg, &RunOptions::new(runs.path())).unwrap();
    let (_, report) = evolve_verifier(&run, &cfg, 3, &GroundTruthInspector).unwrap();
    assert_eq!(report.outcome, EvolutionOutcome::NotFixedWithinBudget);
    assert!(report.no_applicable_operator);
    assert_eq!(report.rounds_used, 0);
}

#[test]
fn every_covered_single_fault_is_fixed_in_one_round() {
    let runs = tempfile::tempdir().unwrap();
    for b in shipped_bundles() {
        for fault in fault_catalog(b.task.app_id)
            .into_iter()
            .filter(|f| f.covered)
        {
            let cfg = fault.inject(&VerifierConfig::shipped(b.task.app_id));
            let run = run_task(&b.task, b.agent(), &cfg, &RunOptions::new(runs.path())).unwrap();
            let (fixed, report) = evolve_verifier(&run, &cfg, 3, &GroundTruthInspector).unwrap();
            if report.outcome == EvolutionOutcome::NoDisagreement {
                assert!(!fault.applies_to(&b.task) || report.divergences_before == 0);
                continue;
            }
            assert_eq!(
                report.outcome,
                EvolutionOutcome::Fixed,
                "{} on {}",
                fault.id,
                b.name
            );
            assert_eq!(report.rounds_used, 1, "{} on {}", fault.id, b.name);
            let mut replayed = cfg.clone();
            for lesson in &report.repairs {
                replayed = lesson.replay(&replayed).unwrap();
            }
            assert_eq!(replayed.to_json(), fixed.to_json());
        }
    }
}

/// Passes everything, whatever the state holds.
struct Lenient;

impl ReferenceJudge for Lenient {
    fn judge_id(&self) -> &str {
        "lenient-stub"
    }

    fn evaluate(&self, task: &TaskInstance, _: &Path) -> Result<Vec<ReferenceVerdict>, StateError> {
        Ok(task
            .criteria
            .iter()
            .map(|c| ReferenceVerdict {
                criterion_id: c.criterion_id.clone(),
                passed: true,
                basis: serde_json::Value::Null,
            })
            .collect())
    }
}

#[test]
fn genuine_agent_failures_are_not_repaired() {
    let runs = tempfile::tempdir().unwrap();
    let b = media_batch_rate_and_tag();
    let careless = &b.agents[1].1;
    let cfg = VerifierConfig::shipped(AppId::Media);
    let run = run_task(&b.task, careless, &cfg, &RunOptions::new(runs.path())).unwrap();
    assert_eq!(run.reward.n_pass, 7);
    let (out, report) = evolve_verifier(&run, &cfg, 3, &Lenient).unwrap();
    assert_eq!(report.divergences_before, 3);
    assert!(report
        .disagreements_before
        .iter()
        .all(|d| d.classification == Attribution::AgentFailure));
    assert_eq!(report.outcome, EvolutionOutcome::NoDisagreement);
    assert_eq!(report.rounds_used, 0);
    assert_eq!(out, cfg);
}

#[test]
fn tampered_final_state_aborts() {
    let runs = tempfile::tempdir().unwrap();
    let v1 = VerifierConfig::media_v1();
    let run = media_run(&v1, runs.path());
    std::fs::write(run.final_state().join("library.store"), b"{}").unwrap();
    let err = evolve_verifier(&run, &v1, 3, &GroundTruthInspector).unwrap_err();
    assert!(
        matches!(err, EvolutionError::FrozenStateViolation { .. }),
        "{err}"
    );
}

#[test]
fn reference_verdicts_ignore_the_config() {
    let runs = tempfile::tempdir().unwrap();
    let run = media_run(&VerifierConfig::media_v1(), runs.path());
    let a = reference_evaluate(&run.task, &run.final_state()).unwrap();
    let b = GroundTruthInspector
        .evaluate(&run.task, &run.final_state())
        .unwrap();
    assert_eq!(a, b);
    let shipped = run_check_suite(
        &VerifierConfig::shipped(AppId::Media),
        &run.task,
        &run.final_state(),
    );
    assert!(align_verdicts(&shipped, &a).unwrap().is_empty());
}

#[test]
fn lessons_persist_and_replay() {
    let runs = tempfile::tempdir().unwrap();
    let ws = tempfile::tempdir().unwrap();
    let v1 = VerifierConfig::media_v1();
    let run = media_run(&v1, runs.path());
    let (fixed, report) = evolve_verifier(&run, &v1, 3, &GroundTruthInspector).unwrap();
    append_lessons(ws.path(), &report.lessons()).unwrap();
    let loaded = load_lessons(ws.path(), AppId::Media).unwrap();
    assert_eq!(loaded, report.lessons());
    assert_eq!(loaded[0].replay(&v1).unwrap(), fixed);
    assert!(loaded[0].replay(&fixed).is_err());
}
