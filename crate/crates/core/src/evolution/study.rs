//! Fault-injection study over a set of calibration tasks.

use std::path::Path;

use serde::Serialize;

use super::faults::{fault_catalog, Fault};
use super::{
    agreement_report, evolve_verifier, reference_evaluate, AgreementInput, AgreementSummary,
    EvolutionOutcome, EvolutionReport, GroundTruthInspector,
};
use crate::harness::{run_task, RunOptions, ScriptedAgent};
use crate::task::TaskInstance;
use crate::verifier::{run_check_suite, VerifierConfig};

/// Calibration positions that receive an injected fault: two in every five.
pub fn is_injected(index: usize) -> bool {
    matches!(index % 5, 0 | 2)
}

#[derive(Clone, Debug, Serialize)]
pub struct StudyCase {
    pub index: usize,
    pub task_id: String,
    pub fault: Option<Fault>,
    pub outcome: EvolutionOutcome,
    pub rounds_used: usize,
    pub divergences_before: usize,
    pub divergences_after: usize,
    pub integrity_ok: bool,
    /// Replaying the recorded repairs from the starting config reproduces
    /// the evolved config.
    pub replay_ok: bool,
    pub report: EvolutionReport,
}

#[derive(Clone, Debug, Serialize)]
pub struct FaultTally {
    pub covered_total: usize,
    pub covered_fixed: usize,
    pub uncovered_total: usize,
    pub uncovered_not_fixed: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct StudyReport {
    pub cases: Vec<StudyCase>,
    pub injected: AgreementSummary,
    pub clean: AgreementSummary,
    pub tally: FaultTally,
}

/// Whether `fault` makes the verifier disagree with the inspector on the
/// final state under `root`.
fn manifests(fault: &Fault, task: &TaskInstance, root: &Path) -> bool {
    let cfg = fault.inject(&VerifierConfig::shipped(task.app_id));
    let Ok(truth) = reference_evaluate(task, root) else {
        return false;
    };
    run_check_suite(&cfg, task, root)
        .iter()
        .zip(&truth)
        .any(|(v, t)| v.counts_as_pass() != t.passed)
}

/// Runs every pair with the shipped verifier or, at injected positions, with
/// a catalog fault, then evolves each run against the inspector. Faults are
/// picked by rotating through the app's catalog and taking the first that
/// applies to the task and manifests on its final state.
pub fn run_fault_study(
    pairs: &[(TaskInstance, ScriptedAgent)],
    runs_root: &Path,
    budget: usize,
) -> Result<StudyReport, String> {
    let opts = RunOptions::new(runs_root);
    let mut cases = Vec::new();
    let (mut injected_inputs, mut clean_inputs) = (Vec::new(), Vec::new());
    let mut tally = FaultTally {
        covered_total: 0,
        covered_fixed: 0,
        uncovered_total: 0,
        uncovered_not_fixed: 0,
    };
    let mut ordinal = 0usize;
    for (index, (task, agent)) in pairs.iter().enumerate() {
        let shipped = VerifierConfig::shipped(task.app_id);
        let probe =
            run_task(task, agent, &shipped, &opts).map_err(|e| format!("{}: {e}", task.task_id))?;
        let mut fault = None;
        if is_injected(index) {
            let catalog = fault_catalog(task.app_id);
            let start = ordinal % catalog.len();
            ordinal += 1;
            fault = (0..catalog.len())
                .map(|k| &catalog[(start + k) % catalog.len()])
                .find(|f| f.applies_to(task) && manifests(f, task, &probe.final_state()))
                .cloned();
        }
        let (cfg, run) = match &fault {
            Some(f) => {
                let cfg = f.inject(&shipped);
                let run = run_task(task, agent, &cfg, &opts)
                    .map_err(|e| format!("{}: {e}", task.task_id))?;
                (cfg, run)
            }
            None => (shipped, probe),
        };
        let (evolved, report) = evolve_verifier(&run, &cfg, budget, &GroundTruthInspector)
            .map_err(|e| format!("{}: {e}", task.task_id))?;
        let mut replayed = cfg.clone();
        let mut replay_ok = true;
        for lesson in &report.repairs {
            match lesson.replay(&replayed) {
                Ok(next) => replayed = next,
                Err(_) => replay_ok = false,
            }
        }
        replay_ok &= replayed.to_json() == evolved.to_json();

        let reference = reference_evaluate(task, &run.final_state())
            .map_err(|e| format!("{}: {e}", task.task_id))?;
        let input = AgreementInput {
            task_id: task.task_id.clone(),
            before: run_check_suite(&cfg, task, &run.final_state()),
            after: Some(run_check_suite(&evolved, task, &run.final_state())),
            reference,
        };
        if let Some(f) = &fault {
            if f.covered {
                tally.covered_total += 1;
                tally.covered_fixed += usize::from(report.outcome == EvolutionOutcome::Fixed);
            } else {
                tally.uncovered_total += 1;
                tally.uncovered_not_fixed +=
                    usize::from(report.outcome == EvolutionOutcome::NotFixedWithinBudget);
            }
        }
        if is_injected(index) {
            injected_inputs.push(input);
        } else {
            clean_inputs.push(input);
        }
        cases.push(StudyCase {
            index,
            task_id: task.task_id.clone(),
            fault,
            outcome: report.outcome,
            rounds_used: report.rounds_used,
            divergences_before: report.divergences_before,
            divergences_after: report.divergences_after,
            integrity_ok: report.integrity_pre == report.integrity_post,
            replay_ok,
            report,
        });
    }
    let injected = agreement_report(&injected_inputs).map_err(|e| e.to_string())?;
    let clean = agreement_report(&clean_inputs).map_err(|e| e.to_string())?;
    Ok(StudyReport {
        cases,
        injected,
        clean,
        tally,
    })
}
