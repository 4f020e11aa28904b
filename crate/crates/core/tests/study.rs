use softworld::apps::AppId;
use softworld::evolution::study::{is_injected, run_fault_study};
use softworld::evolution::EvolutionOutcome;
use softworld::synthesis::calibration_set;

#[test]
fn fault_study_over_calibration_tasks() {
    let mut pairs = Vec::new();
    for app in AppId::ALL {
        let set = calibration_set(app, 15, 0).unwrap();
        assert_eq!(set.len(), 15);
        assert!(set.iter().all(|t| (1..=3).contains(&t.task.difficulty)));
        pairs.extend(set.into_iter().map(|t| (t.task, t.agent)));
    }
    let runs = tempfile::tempdir().unwrap();
    let report = run_fault_study(&pairs, runs.path(), 3).unwrap();
    for c in &report.cases {
        eprintln!(
            "{:>2} {:<40} {:<28} {:?} rounds={} div {}->{}",
            c.index,
            c.task_id,
            c.fault.as_ref().map(|f| f.id.as_str()).unwrap_or("-"),
            c.outcome,
            c.rounds_used,
            c.divergences_before,
            c.divergences_after
        );
    }
    eprintln!("{}", report.injected.render_table());
    eprintln!("{}", report.clean.render_table());
    eprintln!("{:?}", report.tally);
    assert_eq!(
        report.cases.iter().filter(|c| is_injected(c.index)).count(),
        18
    );
    assert!(report
        .cases
        .iter()
        .filter(|c| is_injected(c.index))
        .all(|c| c.fault.is_some()));
    assert!(report.tally.covered_total > 0 && report.tally.uncovered_total > 0);
    assert_eq!(report.tally.covered_fixed, report.tally.covered_total);
    assert_eq!(
        report.tally.uncovered_not_fixed,
        report.tally.uncovered_total
    );
    let after = report.injected.after.as_ref().unwrap();
    assert!(after.checklist_ratio() > report.injected.before.checklist_ratio());
    assert_eq!(
        report.clean.before.criterion_matches,
        report.clean.before.criteria
    );
    assert!(report
        .cases
        .iter()
        .filter(|c| !is_injected(c.index))
        .all(|c| c.outcome == EvolutionOutcome::NoDisagreement));
    assert!(report.cases.iter().all(|c| c.integrity_ok && c.replay_ok));
}
