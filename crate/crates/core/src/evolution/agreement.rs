//! Task-level and checklist agreement between verifier and reference.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use num_rational::Ratio;
use serde::Serialize;

use super::{EvolutionError, ReferenceVerdict};
use crate::verifier::VerdictRecord;

/// One run's verifier verdicts (before and optionally after evolution)
/// and its matched reference verdicts.
#[derive(Clone, Debug)]
pub struct AgreementInput {
    pub task_id: String,
    pub before: Vec<VerdictRecord>,
    pub after: Option<Vec<VerdictRecord>>,
    pub reference: Vec<ReferenceVerdict>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AgreementMeasures {
    pub tasks: u64,
    pub task_matches: u64,
    /// Percentage with two decimals.
    pub task_level: String,
    pub criteria: u64,
    pub criterion_matches: u64,
    pub checklist: String,
}

impl AgreementMeasures {
    pub fn task_ratio(&self) -> Ratio<u64> {
        Ratio::new(self.task_matches, self.tasks.max(1))
    }

    pub fn checklist_ratio(&self) -> Ratio<u64> {
        Ratio::new(self.criterion_matches, self.criteria.max(1))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AgreementSummary {
    pub before: AgreementMeasures,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub after: Option<AgreementMeasures>,
}

/// Percentage with two decimals, rounded half up.
fn percent(r: Ratio<u64>) -> String {
    let (n, d) = (*r.numer() as u128, *r.denom() as u128);
    let hundredths = (n * 10_000 * 2 + d) / (2 * d);
    format!("{}.{:02}", hundredths / 100, hundredths % 100)
}

fn measure<'a>(
    runs: impl Iterator<Item = (&'a [VerdictRecord], &'a [ReferenceVerdict])>,
) -> AgreementMeasures {
    let (mut tasks, mut task_matches, mut criteria, mut criterion_matches) =
        (0u64, 0u64, 0u64, 0u64);
    for (verdicts, reference) in runs {
        let by_id: BTreeMap<&str, bool> = reference
            .iter()
            .map(|r| (r.criterion_id.as_str(), r.passed))
            .collect();
        tasks += 1;
        let verifier_all = verdicts.iter().all(VerdictRecord::counts_as_pass);
        let reference_all = reference.iter().all(|r| r.passed);
        task_matches += u64::from(verifier_all == reference_all);
        for v in verdicts {
            criteria += 1;
            let reference_passed = v
                .criterion_id
                .as_deref()
                .and_then(|id| by_id.get(id))
                .copied();
            criterion_matches += u64::from(reference_passed == Some(v.counts_as_pass()));
        }
    }
    let task_level = percent(Ratio::new(task_matches, tasks.max(1)));
    let checklist = percent(Ratio::new(criterion_matches, criteria.max(1)));
    AgreementMeasures {
        tasks,
        task_matches,
        task_level,
        criteria,
        criterion_matches,
        checklist,
    }
}

/// Task-level agreement compares all-pass aggregates; checklist agreement
/// compares individual criterion flags.
pub fn agreement_report(inputs: &[AgreementInput]) -> Result<AgreementSummary, EvolutionError> {
    if inputs.is_empty() {
        return Err(EvolutionError::EmptyInput);
    }
    let before = measure(
        inputs
            .iter()
            .map(|i| (i.before.as_slice(), i.reference.as_slice())),
    );
    let after = inputs.iter().any(|i| i.after.is_some()).then(|| {
        measure(inputs.iter().map(|i| {
            let v = i.after.as_deref().unwrap_or(&i.before);
            (v, i.reference.as_slice())
        }))
    });
    Ok(AgreementSummary { before, after })
}

impl AgreementSummary {
    /// Fixed-width table with before/after rows.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<10} {:>7} {:>18} {:>18}",
            "stage", "tasks", "task-level %", "checklist %"
        );
        let _ = writeln!(out, "{}", "-".repeat(56));
        let mut row = |label: &str, m: &AgreementMeasures| {
            let _ = writeln!(
                out,
                "{:<10} {:>7} {:>8} ({:>3}/{:<3}) {:>8} ({:>3}/{:<3})",
                label,
                m.tasks,
                m.task_level,
                m.task_matches,
                m.tasks,
                m.checklist,
                m.criterion_matches,
                m.criteria
            );
        };
        row("before", &self.before);
        if let Some(after) = &self.after {
            row("after", after);
        }
        out
    }
}
