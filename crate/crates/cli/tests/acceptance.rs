//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any failure.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use num_rational::Ratio;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use serde_json::Value;
use softworld::apps::{directory_digest, AppId};
use softworld::bundles::shipped_bundles;
use softworld::evolution::study::{is_injected, run_fault_study, StudyReport};
use softworld::evolution::{align_verdicts, reference_evaluate, EvolutionOutcome, Lesson};
use softworld::harness::{
    init_sandbox, replay_trajectory, run_task, sha256_hex, RunOptions, SandboxSpec,
};
use softworld::synthesis::calibration_set;
use softworld::task::{compute_reward, parse_task_instance, validate_task_instance};
use softworld::verifier::{list_endpoints, run_check_suite, VerdictRecord, VerifierConfig};

#[path = "../../core/tests/support/formula_oracle.rs"]
mod formula_oracle;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn bundle_dir(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../bundles")
        .join(name)
}

fn softworld(ws: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_softworld"))
        .env("WORLD_WORKSPACE", ws)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout_json(out: &Output) -> Result<Value, String> {
    serde_json::from_slice(&out.stdout)
        .map_err(|e| format!("bad stdout ({e}): {}", String::from_utf8_lossy(&out.stderr)))
}

fn only_run_dir(root: &Path) -> Result<PathBuf, String> {
    let mut found = Vec::new();
    for task in std::fs::read_dir(root).map_err(|e| e.to_string())? {
        for run in
            std::fs::read_dir(task.map_err(|e| e.to_string())?.path()).map_err(|e| e.to_string())?
        {
            found.push(run.map_err(|e| e.to_string())?.path());
        }
    }
    ensure(
        found.len() == 1,
        format!("expected one run under {}", root.display()),
    )?;
    Ok(found.remove(0))
}

/// Digests of the files an evolution pass must not touch.
fn frozen_digests(run_dir: &Path) -> Result<[String; 3], String> {
    let read = |name: &str| {
        std::fs::read(run_dir.join(name))
            .map(|b| sha256_hex(&b))
            .map_err(|e| e.to_string())
    };
    Ok([
        read("task.json")?,
        read("trajectory.json")?,
        directory_digest(&run_dir.join("final_state")).map_err(|e| e.to_string())?,
    ])
}

/// Evidence gathered while checking criteria 1 and 2 for criterion 8.
#[derive(Default)]
struct EvolutionAudit {
    invocations: usize,
    integrity_failures: Vec<String>,
    replay_failures: Vec<String>,
}

fn media_replication(audit: &mut EvolutionAudit) -> Outcome {
    let started = Instant::now();
    let ws = tempfile::tempdir().map_err(|e| e.to_string())?;
    let media = bundle_dir("media_batch_rate_and_tag");
    let v1 = media.join("verifier_v1.json");
    let runs = ws.path().join("runs");
    let (media_s, v1_s, runs_s) = (
        media.to_str().unwrap(),
        v1.to_str().unwrap(),
        runs.to_str().unwrap(),
    );

    let task = parse_task_instance(&std::fs::read(media.join("task.json")).unwrap())
        .map_err(|e| e.to_string())?;
    let kinds: Vec<&str> = task.criteria.iter().map(|c| c.endpoint.as_str()).collect();
    let count = |e: &str| kinds.iter().filter(|k| **k == e).count();
    ensure(task.criteria.len() == 10, "task must have 10 criteria")?;
    ensure(
        count("check-image-exists") == 3
            && count("check-tag-exists") == 1
            && count("check-image-has-tag") == 3
            && count("check-image-rating") == 3,
        format!("criterion mix {kinds:?}"),
    )?;

    let out = softworld(
        ws.path(),
        &["run", media_s, "--config", v1_s, "--out", runs_s],
    );
    let first = stdout_json(&out)?;
    ensure(out.status.code() == Some(1), "v1 run must exit 1")?;
    ensure(
        first["n_pass"] == 6 && first["n_total"] == 10 && first["reward"] == 0.6,
        format!("v1 run {first}"),
    )?;

    let run_dir = only_run_dir(&runs)?;
    let stored: Vec<VerdictRecord> =
        serde_json::from_slice(&std::fs::read(run_dir.join("verdicts.json")).unwrap())
            .map_err(|e| e.to_string())?;
    let reference =
        reference_evaluate(&task, &run_dir.join("final_state")).map_err(|e| e.to_string())?;
    let divergences = align_verdicts(&stored, &reference).map_err(|e| e.to_string())?;
    let ids: Vec<&str> = divergences
        .iter()
        .map(|d| d.criterion_id.as_str())
        .collect();
    let tag_ids: Vec<&str> = task
        .criteria
        .iter()
        .filter(|c| c.endpoint.contains("tag"))
        .map(|c| c.criterion_id.as_str())
        .collect();
    ensure(
        ids == tag_ids && ids.len() == 4,
        format!("divergences {ids:?}, tag criteria {tag_ids:?}"),
    )?;

    let before = frozen_digests(&run_dir)?;
    let out = softworld(
        ws.path(),
        &[
            "evolve",
            run_dir.to_str().unwrap(),
            "--config",
            v1_s,
            "--budget",
            "3",
        ],
    );
    let evo = stdout_json(&out)?;
    audit.invocations += 1;
    if frozen_digests(&run_dir)? != before || evo["integrity_preserved"] != true {
        audit.integrity_failures.push("media replication".into());
    }
    let ledger = std::fs::read_to_string(ws.path().join("lessons/media/lessons.jsonl"))
        .map_err(|e| e.to_string())?;
    let mut replayed = VerifierConfig::from_json(&std::fs::read_to_string(&v1).unwrap())?;
    for line in ledger.lines() {
        let lesson: Lesson = serde_json::from_str(line).map_err(|e| e.to_string())?;
        replayed = lesson.replay(&replayed)?;
    }
    let evolved_path = run_dir.join("evolved_config.json");
    if replayed.to_json().as_bytes() != std::fs::read(&evolved_path).unwrap().as_slice() {
        audit.replay_failures.push("media replication".into());
    }
    ensure(
        out.status.code() == Some(0)
            && evo["outcome"] == "fixed"
            && evo["rounds_used"] == 1
            && evo["divergences_before"] == 4
            && evo["divergences_after"] == 0,
        format!("evolve {evo}"),
    )?;

    let out = softworld(
        ws.path(),
        &[
            "run",
            media_s,
            "--config",
            evolved_path.to_str().unwrap(),
            "--out",
            runs_s,
        ],
    );
    let second = stdout_json(&out)?;
    ensure(
        out.status.code() == Some(0) && second["n_pass"] == 10 && second["reward"] == 1.0,
        format!("re-run {second}"),
    )?;
    let elapsed = started.elapsed();
    ensure(
        elapsed < Duration::from_secs(5),
        format!("took {elapsed:?}"),
    )?;
    Ok(format!(
        "6/10 (0.6) -> 4 tag divergences -> fixed in 1 round (4->0) -> 10/10 (1.0) in {:.2}s",
        elapsed.as_secs_f64()
    ))
}

fn fault_injection_study(audit: &mut EvolutionAudit, keep: &mut Option<StudyReport>) -> Outcome {
    let started = Instant::now();
    let mut pairs = Vec::new();
    for app in AppId::ALL {
        let set = calibration_set(app, 15, 0).map_err(|e| e.to_string())?;
        ensure(
            set.len() == 15,
            format!("{app}: {} calibration tasks", set.len()),
        )?;
        pairs.extend(set.into_iter().map(|t| (t.task, t.agent)));
    }
    let runs = tempfile::tempdir().map_err(|e| e.to_string())?;
    let report = run_fault_study(&pairs, runs.path(), 3)?;
    let injected = report.cases.iter().filter(|c| is_injected(c.index)).count();
    ensure(
        injected == 18 && report.cases.len() == 45,
        format!("{injected} of {} injected", report.cases.len()),
    )?;
    for c in &report.cases {
        audit.invocations += 1;
        if !c.integrity_ok {
            audit.integrity_failures.push(c.task_id.clone());
        }
        if !c.replay_ok {
            audit.replay_failures.push(c.task_id.clone());
        }
    }
    let t = &report.tally;
    ensure(
        t.covered_fixed == t.covered_total && t.covered_total > 0,
        format!("covered {}/{}", t.covered_fixed, t.covered_total),
    )?;
    ensure(
        t.uncovered_not_fixed == t.uncovered_total,
        format!(
            "uncovered not fixed {}/{}",
            t.uncovered_not_fixed, t.uncovered_total
        ),
    )?;
    ensure(
        report
            .cases
            .iter()
            .filter_map(|c| c.fault.as_ref().map(|f| (f, c)))
            .all(|(f, c)| {
                c.rounds_used <= 3 && (!f.covered || c.outcome == EvolutionOutcome::Fixed)
            }),
        "a covered fault was not fixed within budget 3",
    )?;
    let after = report
        .injected
        .after
        .as_ref()
        .ok_or("no post-evolution measure")?;
    ensure(
        after.checklist_ratio() > report.injected.before.checklist_ratio(),
        "injected checklist agreement did not increase",
    )?;
    ensure(
        report.clean.before.checklist_ratio() == Ratio::from_integer(1),
        "clean checklist below 100%",
    )?;
    let elapsed = started.elapsed();
    ensure(
        elapsed < Duration::from_secs(60),
        format!("took {elapsed:?}"),
    )?;
    let line = format!(
        "45 tasks, 18 injected; covered fixed {}/{}, uncovered not_fixed {}/{}; injected checklist {}% -> {}%, clean {}% in {:.2}s",
        t.covered_fixed,
        t.covered_total,
        t.uncovered_not_fixed,
        t.uncovered_total,
        report.injected.before.checklist,
        after.checklist,
        report.clean.before.checklist,
        elapsed.as_secs_f64()
    );
    *keep = Some(report);
    Ok(line)
}

fn verdict(i: usize, passed: bool) -> VerdictRecord {
    VerdictRecord {
        criterion_id: Some(format!("c{i}")),
        endpoint: "check-folder-exists".into(),
        ok: true,
        passed: Some(passed),
        evidence: Value::Null,
        error: None,
        bindings: Default::default(),
        revision: 0,
    }
}

fn reward_arithmetic() -> Outcome {
    let mut checked = 0;
    for n in 1..=12usize {
        for k in 0..=n {
            let v: Vec<_> = (0..n).map(|i| verdict(i, i < k)).collect();
            let r = compute_reward(&v).map_err(|e| e.to_string())?;
            ensure(
                r.reward == Ratio::new(k as u64, n as u64),
                format!("{k}/{n} gave {}", r.reward),
            )?;
            checked += 1;
        }
    }
    ensure(
        compute_reward(&[]).is_err(),
        "empty verdict list must be rejected",
    )?;
    let cases = 1000;
    let mut runner = TestRunner::new(Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    });
    let strategy = (
        prop::collection::vec(any::<bool>(), 1..=12),
        any::<prop::sample::Index>(),
    );
    runner
        .run(&strategy, |(flags, pick)| {
            let i = pick.index(flags.len());
            let score = |f: &[bool]| {
                let v: Vec<_> = f.iter().enumerate().map(|(j, p)| verdict(j, *p)).collect();
                compute_reward(&v).unwrap().reward
            };
            let mut flipped = flags.clone();
            flipped[i] = !flipped[i];
            let (before, after) = (score(&flags), score(&flipped));
            let moved = if flags[i] {
                after < before
            } else {
                after > before
            };
            prop_assert!(moved, "flip of {} did not move the reward", i);
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok(format!(
        "{checked} exact k/n cases, {cases} single-flip monotonicity cases"
    ))
}

fn determinism() -> Outcome {
    let runs = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut pairs = 0;
    for b in shipped_bundles() {
        for (stem, agent) in &b.agents {
            let mut seen = Vec::new();
            for _ in 0..3 {
                let run = run_task(
                    &b.task,
                    agent,
                    &b.configs[0].1,
                    &RunOptions::new(runs.path()),
                )
                .map_err(|e| e.to_string())?;
                let verdicts =
                    std::fs::read(run.run_dir.join("verdicts.json")).map_err(|e| e.to_string())?;
                let replay =
                    replay_trajectory(&b.task, &run.trajectory).map_err(|e| e.to_string())?;
                ensure(
                    replay.reproduced,
                    format!("{}/{stem}: replay diverged", b.name),
                )?;
                seen.push((run.trajectory.final_digest().clone(), verdicts));
            }
            ensure(
                seen.windows(2).all(|w| w[0] == w[1]),
                format!("{}/{stem}: runs differ", b.name),
            )?;
            pairs += 1;
        }
    }
    Ok(format!(
        "{pairs} task+agent pairs x3 runs identical, replay reproduces final digest"
    ))
}

fn formula_oracle_check() -> Outcome {
    let run = formula_oracle::compare_engine_with_oracle(0x5eed, 2000);
    ensure(
        run.mismatches.is_empty(),
        format!(
            "{} mismatches, first: {:?}",
            run.mismatches.len(),
            run.mismatches.first()
        ),
    )?;
    ensure(run.max_depth <= 4, format!("depth {}", run.max_depth))?;
    ensure(
        run.productions.len() >= 19,
        format!("productions {:?}", run.productions),
    )?;
    ensure(
        run.classes.len() == 6,
        format!("error classes {:?}", run.classes),
    )?;
    Ok(format!(
        "{} formulas (depth <= 4, {} productions, {} error classes) agree",
        run.cases,
        run.productions.len(),
        run.classes.len()
    ))
}

fn generation_envelope() -> Outcome {
    let started = Instant::now();
    let ws = tempfile::tempdir().map_err(|e| e.to_string())?;
    let out_dir = ws.path().join("tasks");
    let out = softworld(ws.path(), &["generate", "--out", out_dir.to_str().unwrap()]);
    let manifest = stdout_json(&out)?;
    ensure(
        out.status.code() == Some(0),
        format!("generate exited {:?}", out.status.code()),
    )?;
    let n = manifest["task_count"].as_u64().unwrap_or(0);
    let criteria = manifest["mean_criteria_per_task"].as_f64().unwrap_or(0.0);
    let seeds = manifest["mean_seed_artifacts_per_task"]
        .as_f64()
        .unwrap_or(0.0);
    ensure(n >= 30, format!("{n} tasks"))?;
    ensure(
        (4.0..=10.0).contains(&criteria),
        format!("mean criteria {criteria}"),
    )?;
    ensure((0.5..=3.0).contains(&seeds), format!("mean seeds {seeds}"))?;
    let mut seen = 0;
    for entry in std::fs::read_dir(&out_dir).map_err(|e| e.to_string())? {
        let dir = entry.map_err(|e| e.to_string())?.path();
        if !dir.is_dir() {
            continue;
        }
        let task = parse_task_instance(&std::fs::read(dir.join("task.json")).unwrap())
            .map_err(|e| e.to_string())?;
        let report = validate_task_instance(&task, list_endpoints(task.app_id));
        ensure(
            report.findings.is_empty(),
            format!("{}: {:?}", task.task_id, report.findings),
        )?;
        let sandbox = tempfile::tempdir().map_err(|e| e.to_string())?;
        let sb = init_sandbox(
            &task,
            SandboxSpec::new(sandbox.path().join("s"), task.app_id),
        )
        .map_err(|e| e.to_string())?;
        let verdicts = run_check_suite(&VerifierConfig::shipped(task.app_id), &task, sb.root());
        ensure(
            verdicts.iter().any(|v| !v.counts_as_pass()),
            format!("{} passes at init", task.task_id),
        )?;
        seen += 1;
    }
    ensure(seen as u64 == n, format!("{seen} task dirs for {n} tasks"))?;
    let elapsed = started.elapsed();
    ensure(
        elapsed < Duration::from_secs(30),
        format!("took {elapsed:?}"),
    )?;
    Ok(format!(
        "{n} tasks, mean criteria {criteria}, mean seeds {seeds}, all valid and failing at init, {:.2}s",
        elapsed.as_secs_f64()
    ))
}

fn clean_agreement_and_report(study: Option<&StudyReport>) -> Outcome {
    let ws = tempfile::tempdir().map_err(|e| e.to_string())?;
    let out = softworld(ws.path(), &["selftest", "--app", "all"]);
    let reports = stdout_json(&out)?;
    ensure(
        out.status.code() == Some(0)
            && reports
                .as_array()
                .is_some_and(|a| a.iter().all(|r| r["gated"] == true)),
        "selftest gating failed",
    )?;
    let study = study.ok_or("fault study did not complete")?;
    let clean = &study.clean.before;
    ensure(
        clean.criterion_matches == clean.criteria && clean.criteria > 0,
        format!(
            "clean agreement {}/{}",
            clean.criterion_matches, clean.criteria
        ),
    )?;

    let tasks = ws.path().join("tasks");
    let runs = ws.path().join("runs");
    let out = softworld(
        ws.path(),
        &[
            "generate",
            "--policy",
            "calibration",
            "--count",
            "15",
            "--out",
            tasks.to_str().unwrap(),
        ],
    );
    ensure(out.status.success(), "calibration generation failed")?;
    for seed in ["0", "1", "2"] {
        let out = softworld(
            ws.path(),
            &[
                "run",
                tasks.to_str().unwrap(),
                "--jobs",
                "4",
                "--seed",
                seed,
                "--out",
                runs.to_str().unwrap(),
            ],
        );
        ensure(
            out.status.code() == Some(0),
            format!("batch run seed {seed} exited {:?}", out.status.code()),
        )?;
    }
    let out = softworld(ws.path(), &["report", runs.to_str().unwrap()]);
    let report = stdout_json(&out)?;
    let n = report["runs"].as_u64().unwrap_or(0);
    ensure(n >= 100, format!("{n} runs"))?;
    for key in ["task_level", "checklist"] {
        ensure(
            report["agreement"]["before"][key].is_string(),
            format!("missing {key}"),
        )?;
    }
    let out = softworld(ws.path(), &["report", runs.to_str().unwrap(), "--pretty"]);
    let table = String::from_utf8_lossy(&out.stdout);
    ensure(
        table.contains("task-level %") && table.contains("checklist %"),
        "pretty table lacks the two measures",
    )?;
    Ok(format!(
        "selftest gated for 3 apps; clean agreement {}/{} criteria; report over {n} runs: task-level {}%, checklist {}%",
        clean.criterion_matches,
        clean.criteria,
        report["agreement"]["before"]["task_level"].as_str().unwrap_or("?"),
        report["agreement"]["before"]["checklist"].as_str().unwrap_or("?"),
    ))
}

fn evolution_safety(audit: &EvolutionAudit) -> Outcome {
    ensure(
        audit.invocations >= 46,
        format!("only {} evolution invocations audited", audit.invocations),
    )?;
    ensure(
        audit.integrity_failures.is_empty(),
        format!("digests changed: {:?}", audit.integrity_failures),
    )?;
    ensure(
        audit.replay_failures.is_empty(),
        format!("lesson replay differs: {:?}", audit.replay_failures),
    )?;
    Ok(format!(
        "{} evolution invocations: frozen digests unchanged, every lesson replays byte-equal",
        audit.invocations
    ))
}

fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into()))
    })
}

fn main() {
    let mut audit = EvolutionAudit::default();
    let mut study = None;
    let results = vec![
        (
            "1 media replication",
            guarded(|| media_replication(&mut audit)),
        ),
        (
            "2 fault-injection study",
            guarded(|| fault_injection_study(&mut audit, &mut study)),
        ),
        ("3 reward arithmetic", guarded(reward_arithmetic)),
        ("4 determinism", guarded(determinism)),
        ("5 formula oracle", guarded(formula_oracle_check)),
        ("6 generation envelope", guarded(generation_envelope)),
        (
            "7 clean agreement and report",
            guarded(|| clean_agreement_and_report(study.as_ref())),
        ),
        ("8 evolution safety", guarded(|| evolution_safety(&audit))),
    ];
    let mut failed = 0;
    for (name, result) in &results {
        match result {
            Ok(detail) => println!("PASS criterion {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {name}: {why}");
            }
        }
    }
    println!(
        "{} of {} criteria pass",
        results.len() - failed,
        results.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
