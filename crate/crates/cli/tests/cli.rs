use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bundle(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../bundles")
        .join(name)
}

fn softworld(ws: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_softworld"))
        .env("WORLD_WORKSPACE", ws)
        .args(args)
        .output()
        .unwrap()
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout)
        .unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stdout)))
}

fn run_dirs(root: &Path) -> Vec<PathBuf> {
    let mut dirs = Vec::new();
    for task in std::fs::read_dir(root).unwrap() {
        for run in std::fs::read_dir(task.unwrap().path()).unwrap() {
            dirs.push(run.unwrap().path());
        }
    }
    dirs.sort();
    dirs
}

#[test]
fn replication_through_the_binary() {
    let ws = tempfile::tempdir().unwrap();
    let media = bundle("media_batch_rate_and_tag");
    let v1 = media.join("verifier_v1.json");
    let runs = ws.path().join("runs");
    let out = softworld(
        ws.path(),
        &[
            "run",
            media.to_str().unwrap(),
            "--config",
            v1.to_str().unwrap(),
            "--out",
            runs.to_str().unwrap(),
        ],
    );
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(json(&out)["reward"], 0.6);

    let run_dir = run_dirs(&runs).remove(0);
    let out = softworld(
        ws.path(),
        &[
            "evolve",
            run_dir.to_str().unwrap(),
            "--config",
            v1.to_str().unwrap(),
            "--budget",
            "3",
        ],
    );
    assert_eq!(out.status.code(), Some(0));
    let summary = json(&out);
    assert_eq!(summary["outcome"], "fixed");
    assert_eq!(summary["rounds_used"], 1);
    assert_eq!(
        (
            summary["divergences_before"].as_u64(),
            summary["divergences_after"].as_u64()
        ),
        (Some(4), Some(0))
    );
    assert!(run_dir.join("evolution_report.json").is_file());
    let ledger = std::fs::read_to_string(ws.path().join("lessons/media/lessons.jsonl")).unwrap();
    assert_eq!(ledger.lines().count(), 1);

    let evolved = run_dir.join("evolved_config.json");
    let out = softworld(
        ws.path(),
        &[
            "run",
            media.to_str().unwrap(),
            "--config",
            evolved.to_str().unwrap(),
            "--out",
            runs.to_str().unwrap(),
        ],
    );
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(json(&out)["reward"], 1.0);
}

#[test]
fn evolving_a_clean_run_reports_no_disagreement() {
    let ws = tempfile::tempdir().unwrap();
    let runs = ws.path().join("runs");
    let vault = bundle("vault_recipe_organizer");
    assert!(softworld(
        ws.path(),
        &[
            "run",
            vault.to_str().unwrap(),
            "--out",
            runs.to_str().unwrap()
        ]
    )
    .status
    .success());
    let run_dir = run_dirs(&runs).remove(0);
    let out = softworld(ws.path(), &["evolve", run_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(json(&out)["outcome"], "no_disagreement");
}

#[test]
fn tampered_final_state_exits_3() {
    let ws = tempfile::tempdir().unwrap();
    let runs = ws.path().join("runs");
    let media = bundle("media_batch_rate_and_tag");
    softworld(
        ws.path(),
        &[
            "run",
            media.to_str().unwrap(),
            "--out",
            runs.to_str().unwrap(),
        ],
    );
    let run_dir = run_dirs(&runs).remove(0);
    std::fs::write(run_dir.join("final_state/data.store"), b"{}").unwrap();
    let out = softworld(ws.path(), &["evolve", run_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert!(out.stdout.is_empty());
    assert!(String::from_utf8_lossy(&out.stderr).contains("FrozenStateViolation"));
}

#[test]
fn usage_errors_exit_2() {
    let ws = tempfile::tempdir().unwrap();
    let out = softworld(ws.path(), &["generate", "--app", "unknown"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(
        err.contains("vault") && err.contains("workbook") && err.contains("media"),
        "{err}"
    );

    let media = bundle("media_batch_rate_and_tag");
    let missing = ws.path().join("missing.json");
    let out = softworld(
        ws.path(),
        &[
            "run",
            media.to_str().unwrap(),
            "--agent",
            missing.to_str().unwrap(),
        ],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(out.stdout.is_empty());

    let empty = ws.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    assert_eq!(
        softworld(ws.path(), &["report", empty.to_str().unwrap()])
            .status
            .code(),
        Some(2)
    );

    std::fs::write(
        ws.path().join("softworld.config.json"),
        r#"{"evolution_budget": 0}"#,
    )
    .unwrap();
    assert_eq!(
        softworld(ws.path(), &["selftest", "--app", "vault"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn generate_is_byte_identical_on_rerun() {
    let ws = tempfile::tempdir().unwrap();
    let a = ws.path().join("a");
    let b = ws.path().join("b");
    for out in [&a, &b] {
        let o = softworld(
            ws.path(),
            &[
                "generate",
                "--app",
                "media",
                "--count",
                "15",
                "--seed",
                "7",
                "--out",
                out.to_str().unwrap(),
            ],
        );
        assert_eq!(
            o.status.code(),
            Some(0),
            "{}",
            String::from_utf8_lossy(&o.stderr)
        );
        let manifest = json(&o);
        assert_eq!(manifest["task_count"], 15);
        let mean = manifest["mean_criteria_per_task"].as_f64().unwrap();
        assert!((4.0..=10.0).contains(&mean));
    }
    let files = |root: &Path| -> Vec<(PathBuf, Vec<u8>)> {
        let mut out = Vec::new();
        let mut stack = vec![root.to_path_buf()];
        while let Some(dir) = stack.pop() {
            for e in std::fs::read_dir(dir).unwrap() {
                let p = e.unwrap().path();
                if p.is_dir() {
                    stack.push(p);
                } else {
                    out.push((
                        p.strip_prefix(root).unwrap().to_path_buf(),
                        std::fs::read(&p).unwrap(),
                    ));
                }
            }
        }
        out.sort();
        out
    };
    assert_eq!(files(&a), files(&b));
    assert_eq!(files(&a).len(), 31);
}

#[test]
fn batch_run_with_jobs_and_report() {
    let ws = tempfile::tempdir().unwrap();
    let tasks = ws.path().join("tasks");
    let runs = ws.path().join("runs");
    softworld(
        ws.path(),
        &["generate", "--count", "4", "--out", tasks.to_str().unwrap()],
    );
    let out = softworld(
        ws.path(),
        &[
            "run",
            tasks.to_str().unwrap(),
            "--jobs",
            "4",
            "--out",
            runs.to_str().unwrap(),
        ],
    );
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let summaries = json(&out);
    assert_eq!(summaries.as_array().unwrap().len(), 12);

    let out = softworld(ws.path(), &["report", runs.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let report = json(&out);
    assert_eq!(report["runs"], 12);
    assert_eq!(report["agreement"]["before"]["checklist"], "100.00");
    assert_eq!(report["reward"]["mean"], "1.0000");

    let out = softworld(ws.path(), &["report", runs.to_str().unwrap(), "--pretty"]);
    let table = String::from_utf8(out.stdout).unwrap();
    assert!(table.contains("task-level %") && table.contains("checklist %"));
}

#[test]
fn qc_sampling_evolves_every_run_at_rate_one() {
    let ws = tempfile::tempdir().unwrap();
    std::fs::write(
        ws.path().join("softworld.config.json"),
        r#"{"qc_sample_rate": 1.0}"#,
    )
    .unwrap();
    let media = bundle("media_batch_rate_and_tag");
    let v1 = media.join("verifier_v1.json");
    let runs = ws.path().join("runs");
    let out = softworld(
        ws.path(),
        &[
            "run",
            media.to_str().unwrap(),
            "--config",
            v1.to_str().unwrap(),
            "--out",
            runs.to_str().unwrap(),
        ],
    );
    assert_eq!(json(&out)["qc"], "fixed");
    assert!(run_dirs(&runs)[0].join("evolution_report.json").is_file());
}

#[test]
fn selftest_gates_shipped_and_rejects_swapped_binding() {
    let ws = tempfile::tempdir().unwrap();
    let out = softworld(ws.path(), &["selftest", "--app", "media"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(json(&out)["gated"], true);

    let mut cfg: Value = serde_json::from_slice(
        &std::fs::read(bundle("media_batch_rate_and_tag").join("verifier.json")).unwrap(),
    )
    .unwrap();
    let bindings = cfg["bindings"].as_object_mut().unwrap();
    let (a, b) = (
        bindings["file:data_store"].clone(),
        bindings["file:library_store"].clone(),
    );
    bindings.insert("file:data_store".into(), b);
    bindings.insert("file:library_store".into(), a);
    let path = ws.path().join("swapped.json");
    std::fs::write(&path, cfg.to_string()).unwrap();
    let out = softworld(
        ws.path(),
        &[
            "selftest",
            "--app",
            "media",
            "--config",
            path.to_str().unwrap(),
        ],
    );
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(json(&out)["gated"], false);
}

#[test]
fn verifier_protocol() {
    let ws = tempfile::tempdir().unwrap();
    let runs = ws.path().join("runs");
    softworld(
        ws.path(),
        &[
            "run",
            bundle("vault_recipe_organizer").to_str().unwrap(),
            "--out",
            runs.to_str().unwrap(),
        ],
    );
    let state = run_dirs(&runs)[0].join("final_state");
    let state = state.to_str().unwrap();

    let out = softworld(
        ws.path(),
        &[
            "verifier",
            "vault",
            "check-folder-exists",
            "--state",
            state,
            "--path",
            "Italian",
        ],
    );
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    assert_eq!(
        (v["ok"].as_bool(), v["passed"].as_bool()),
        (Some(true), Some(true))
    );
    for key in [
        "endpoint", "ok", "passed", "evidence", "error", "bindings", "revision",
    ] {
        assert!(v.get(key).is_some(), "{key}");
    }

    let out = softworld(
        ws.path(),
        &[
            "verifier",
            "vault",
            "check-folder-exists",
            "--state",
            state,
            "--path",
            "Greek",
        ],
    );
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(json(&out)["passed"], false);

    let out = softworld(
        ws.path(),
        &["verifier", "vault", "check-folder-exists", "--state", state],
    );
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(
        json(&out)["evidence"]["failure"]["kind"],
        "missing_argument"
    );

    let out = softworld(
        ws.path(),
        &[
            "verifier",
            "spreadsheet",
            "check-cell-value",
            "--state",
            state,
        ],
    );
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(json(&out)["ok"], false);

    let out = softworld(ws.path(), &["endpoints", "media"]);
    assert!(json(&out).as_array().unwrap().len() >= 10);
}

#[test]
fn bundles_export_matches_checked_in_copies() {
    let ws = tempfile::tempdir().unwrap();
    let out = ws.path().join("b");
    assert!(
        softworld(ws.path(), &["bundles", "--out", out.to_str().unwrap()])
            .status
            .success()
    );
    for name in [
        "media_batch_rate_and_tag",
        "vault_recipe_organizer",
        "workbook_commissions",
    ] {
        for e in std::fs::read_dir(out.join(name)).unwrap() {
            let p = e.unwrap().path();
            assert_eq!(
                std::fs::read(&p).unwrap(),
                std::fs::read(bundle(name).join(p.file_name().unwrap())).unwrap()
            );
        }
    }
}
