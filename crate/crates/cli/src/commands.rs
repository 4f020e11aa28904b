use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};
use softworld::apps::AppId;
use softworld::bundles::shipped_bundles;
use softworld::evolution::{
    agreement_report, append_lessons, evolve_verifier, load_lessons, reference_evaluate,
    AgreementInput, AgreementSummary, EvolutionOutcome, EvolutionReport, GroundTruthInspector,
};
use softworld::harness::{
    find_run_dirs, load_run_dir, run_task, sha256_hex, HarnessError, RunArtifact, RunOptions,
    ScriptedAgent,
};
use softworld::synthesis::{generate, shipped_templates, write_generation, Policy, SynthesisError};
use softworld::task::{parse_task_instance, TaskInstance};
use softworld::verifier::selftest::{run_verifier_selftest, shipped_fixture_plan};
use softworld::verifier::{
    list_endpoints, run_check_suite, run_endpoint, VerdictRecord, VerifierConfig,
};

use crate::config::CliConfig;
use crate::{emit, Failure};

pub const EVOLUTION_REPORT: &str = "evolution_report.json";
pub const EVOLVED_CONFIG: &str = "evolved_config.json";

fn read(path: &Path) -> Result<Vec<u8>, Failure> {
    std::fs::read(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn load_config(path: Option<&Path>, app: AppId) -> Result<VerifierConfig, Failure> {
    let Some(path) = path else {
        return Ok(VerifierConfig::shipped(app));
    };
    let text = String::from_utf8(read(path)?)
        .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    let cfg = VerifierConfig::from_json(&text)
        .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    if cfg.app_id != app {
        return Err(Failure::Usage(format!(
            "{} is a {} config but the task targets {app}",
            path.display(),
            cfg.app_id
        )));
    }
    Ok(cfg)
}

fn internal(e: impl std::fmt::Display) -> Failure {
    Failure::Internal(e.to_string())
}

pub fn cmd_generate(
    cfg: &CliConfig,
    apps: Vec<AppId>,
    count: usize,
    seed: Option<u64>,
    out: Option<PathBuf>,
    policy: Policy,
) -> Result<(), Failure> {
    for app in &apps {
        cfg.enabled(*app)?;
    }
    let seed = seed.unwrap_or(cfg.default_seed);
    let out = out.unwrap_or_else(|| cfg.workspace_root.join("tasks"));
    let mut lessons = Vec::new();
    for app in &apps {
        lessons.extend(load_lessons(&cfg.workspace_root, *app).map_err(Failure::Usage)?);
    }
    let generation = generate(&shipped_templates(), &apps, count, seed, policy, &lessons).map_err(
        |e| match e {
            SynthesisError::ZeroCount | SynthesisError::NoTemplates => {
                Failure::Usage(e.to_string())
            }
            other => internal(other),
        },
    )?;
    write_generation(&out, &generation).map_err(|e| internal(format!("{}: {e}", out.display())))?;
    let mut summary = serde_json::to_value(&generation.manifest).map_err(internal)?;
    if let Value::Object(map) = &mut summary {
        map.remove("tasks");
        map.insert("out".into(), json!(out.display().to_string()));
        map.insert(
            "extension_requests".into(),
            json!(generation.extension_requests.len()),
        );
    }
    emit(&summary);
    Ok(())
}

struct Job {
    task: TaskInstance,
    agent: ScriptedAgent,
    config: VerifierConfig,
}

fn load_job(
    task_path: &Path,
    agent_path: Option<&Path>,
    cfg_path: Option<&Path>,
) -> Result<Job, Failure> {
    let (task_file, dir) = if task_path.is_dir() {
        (task_path.join("task.json"), task_path.to_path_buf())
    } else {
        (
            task_path.to_path_buf(),
            task_path.parent().unwrap_or(Path::new(".")).to_path_buf(),
        )
    };
    let task = parse_task_instance(&read(&task_file)?)
        .map_err(|e| Failure::Usage(format!("{}: {e}", task_file.display())))?;
    let agent_file = agent_path.map_or_else(|| dir.join("agent.json"), Path::to_path_buf);
    let agent = ScriptedAgent::from_json(&read(&agent_file)?)
        .map_err(|e| Failure::Usage(format!("{}: {e}", agent_file.display())))?;
    let sibling = dir.join("verifier.json");
    let cfg_file = cfg_path
        .map(Path::to_path_buf)
        .or_else(|| sibling.is_file().then_some(sibling));
    let config = load_config(cfg_file.as_deref(), task.app_id)?;
    Ok(Job {
        task,
        agent,
        config,
    })
}

/// A directory holding `task.json` is one job; any other directory is a
/// batch of such subdirectories.
fn collect_jobs(
    task_path: &Path,
    agent: Option<&Path>,
    config: Option<&Path>,
) -> Result<Vec<Job>, Failure> {
    if !task_path.exists() {
        return Err(Failure::Usage(format!(
            "{}: no such file or directory",
            task_path.display()
        )));
    }
    if task_path.is_file() || task_path.join("task.json").is_file() {
        return Ok(vec![load_job(task_path, agent, config)?]);
    }
    if agent.is_some() {
        return Err(Failure::Usage(
            "--agent applies to a single task, not a batch directory".into(),
        ));
    }
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(task_path)
        .map_err(|e| Failure::Usage(format!("{}: {e}", task_path.display())))?
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| p.join("task.json").is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Failure::Usage(format!(
            "{}: no task.json found",
            task_path.display()
        )));
    }
    dirs.iter().map(|d| load_job(d, None, config)).collect()
}

/// Deterministic draw in [0,1) for quality-control sampling.
fn qc_draw(seed: u64, task_id: &str) -> f64 {
    let digest = sha256_hex(format!("{seed}:{task_id}").as_bytes());
    u32::from_str_radix(&digest[..8], 16).unwrap_or(0) as f64 / 4_294_967_296.0
}

#[derive(Serialize)]
struct RunSummary {
    task_id: String,
    agent_id: String,
    reward: f64,
    reward_exact: String,
    n_pass: u64,
    n_total: u64,
    run_dir: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    qc: Option<EvolutionOutcome>,
}

fn write_evolution(
    run: &RunArtifact,
    evolved: &VerifierConfig,
    report: &EvolutionReport,
) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(report).map_err(internal)? + "\n";
    std::fs::write(run.run_dir.join(EVOLUTION_REPORT), text).map_err(internal)?;
    std::fs::write(run.run_dir.join(EVOLVED_CONFIG), evolved.to_json()).map_err(internal)
}

pub struct RunArgs {
    pub task: PathBuf,
    pub agent: Option<PathBuf>,
    pub config: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub jobs: usize,
    pub seed: Option<u64>,
    pub budget: Option<usize>,
}

pub fn cmd_run(cfg: &CliConfig, args: RunArgs) -> Result<(), Failure> {
    let jobs = collect_jobs(&args.task, args.agent.as_deref(), args.config.as_deref())?;
    for j in &jobs {
        cfg.enabled(j.task.app_id)?;
    }
    let mut opts = RunOptions::new(args.out.unwrap_or_else(|| cfg.workspace_root.join("runs")));
    opts.seed = args.seed.unwrap_or(cfg.default_seed);
    opts.budget = args.budget.unwrap_or(cfg.default_budget);
    if opts.budget == 0 {
        return Err(Failure::Usage("--budget must be at least 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs.max(1))
        .build()
        .map_err(internal)?;
    let results: Vec<Result<(RunSummary, Vec<_>), Failure>> = pool.install(|| {
        jobs.par_iter()
            .map(|job| {
                let run = run_task(&job.task, &job.agent, &job.config, &opts).map_err(internal)?;
                let mut qc = None;
                let mut lessons = Vec::new();
                if cfg.qc_sample_rate > 0.0
                    && qc_draw(opts.seed, &job.task.task_id) < cfg.qc_sample_rate
                {
                    let (evolved, report) = evolve_verifier(
                        &run,
                        &job.config,
                        cfg.evolution_budget,
                        &GroundTruthInspector,
                    )
                    .map_err(internal)?;
                    write_evolution(&run, &evolved, &report)?;
                    qc = Some(report.outcome);
                    lessons = report.lessons();
                }
                let summary = RunSummary {
                    task_id: run.task.task_id.clone(),
                    agent_id: run.meta.agent_id.clone(),
                    reward: run.reward.as_f64(),
                    reward_exact: format!("{}/{}", run.reward.n_pass, run.reward.n_total),
                    n_pass: run.reward.n_pass,
                    n_total: run.reward.n_total,
                    run_dir: run.run_dir.display().to_string(),
                    qc,
                };
                Ok((summary, lessons))
            })
            .collect()
    });
    let mut summaries = Vec::new();
    for r in results {
        let (summary, lessons) = r?;
        append_lessons(&cfg.workspace_root, &lessons).map_err(internal)?;
        summaries.push(summary);
    }
    let all_full = summaries.iter().all(|s| s.n_pass == s.n_total);
    if summaries.len() == 1 {
        emit(&summaries[0]);
    } else {
        emit(&summaries);
    }
    if all_full {
        Ok(())
    } else {
        Err(Failure::TaskFailure)
    }
}

pub fn cmd_evolve(
    cfg: &CliConfig,
    run_dir: &Path,
    config: Option<&Path>,
    budget: Option<usize>,
) -> Result<(), Failure> {
    if !run_dir.join("meta.json").is_file() {
        return Err(Failure::Usage(format!(
            "{} is not a run directory",
            run_dir.display()
        )));
    }
    let budget = budget.unwrap_or(cfg.evolution_budget);
    if budget == 0 {
        return Err(Failure::Usage("--budget must be at least 1".into()));
    }
    let run = load_run_dir(run_dir).map_err(|e| match e {
        HarnessError::FrozenStateViolation { .. } => {
            Failure::Internal(format!("FrozenStateViolation: {e}"))
        }
        other => internal(other),
    })?;
    let verifier = load_config(config, run.task.app_id)?;
    let (evolved, report) =
        evolve_verifier(&run, &verifier, budget, &GroundTruthInspector).map_err(internal)?;
    write_evolution(&run, &evolved, &report)?;
    let lessons = report.lessons();
    append_lessons(&cfg.workspace_root, &lessons).map_err(internal)?;
    emit(&json!({
        "task_id": report.task_id,
        "outcome": report.outcome,
        "rounds_used": report.rounds_used,
        "budget": report.budget,
        "divergences_before": report.divergences_before,
        "divergences_after": report.divergences_after,
        "no_applicable_operator": report.no_applicable_operator,
        "revision_from": report.revision_from,
        "revision_to": report.revision_to,
        "lessons_written": lessons.len(),
        "integrity_preserved": report.integrity_pre == report.integrity_post,
        "report": run.run_dir.join(EVOLUTION_REPORT).display().to_string(),
        "evolved_config": run.run_dir.join(EVOLVED_CONFIG).display().to_string(),
    }));
    match report.outcome {
        EvolutionOutcome::NotFixedWithinBudget => Err(Failure::TaskFailure),
        _ => Ok(()),
    }
}

#[derive(Serialize)]
pub struct RewardStats {
    pub mean: String,
    pub min: String,
    pub max: String,
    pub full_reward_runs: usize,
}

#[derive(Serialize)]
pub struct Report {
    pub runs: usize,
    pub agreement: AgreementSummary,
    pub reward: RewardStats,
    pub evolution: BTreeMap<String, usize>,
}

impl Report {
    pub fn render(&self) -> String {
        let mut out = format!("runs {}\n\n{}\n", self.runs, self.agreement.render_table());
        out += &format!(
            "reward     mean {}  min {}  max {}  full {}/{}\n",
            self.reward.mean,
            self.reward.min,
            self.reward.max,
            self.reward.full_reward_runs,
            self.runs
        );
        if !self.evolution.is_empty() {
            let parts: Vec<String> = self
                .evolution
                .iter()
                .map(|(k, v)| format!("{k} {v}"))
                .collect();
            out += &format!("evolution  {}\n", parts.join("  "));
        }
        out
    }
}

pub fn cmd_report(runs_dir: &Path, pretty: bool) -> Result<(), Failure> {
    if !runs_dir.is_dir() {
        return Err(Failure::Usage(format!(
            "{} is not a directory",
            runs_dir.display()
        )));
    }
    let dirs = find_run_dirs(runs_dir);
    if dirs.is_empty() {
        return Err(Failure::Usage(format!(
            "no runs under {}",
            runs_dir.display()
        )));
    }
    let mut inputs = Vec::new();
    let mut rewards = Vec::new();
    let mut evolution = BTreeMap::new();
    for dir in &dirs {
        let run = load_run_dir(dir).map_err(|e| internal(format!("{}: {e}", dir.display())))?;
        let reference = reference_evaluate(&run.task, &run.final_state())
            .map_err(|e| internal(format!("{}: {e}", dir.display())))?;
        let evolved = dir.join(EVOLVED_CONFIG);
        let after = if evolved.is_file() {
            let cfg = load_config(Some(&evolved), run.task.app_id)?;
            Some(run_check_suite(&cfg, &run.task, &run.final_state()))
        } else {
            None
        };
        if let Ok(bytes) = std::fs::read(dir.join(EVOLUTION_REPORT)) {
            let v: Value = serde_json::from_slice(&bytes)
                .map_err(|e| internal(format!("{}: {e}", dir.display())))?;
            let outcome = v["outcome"].as_str().unwrap_or("unknown").to_string();
            *evolution.entry(outcome).or_insert(0) += 1;
        }
        rewards.push(run.reward.clone());
        inputs.push(AgreementInput {
            task_id: run.task.task_id.clone(),
            before: run.verdicts,
            after,
            reference,
        });
    }
    let agreement = agreement_report(&inputs).map_err(internal)?;
    let values: Vec<f64> = rewards.iter().map(|r| r.as_f64()).collect();
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let report = Report {
        runs: dirs.len(),
        agreement,
        reward: RewardStats {
            mean: format!("{mean:.4}"),
            min: format!(
                "{:.4}",
                values.iter().cloned().fold(f64::INFINITY, f64::min)
            ),
            max: format!(
                "{:.4}",
                values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            ),
            full_reward_runs: rewards.iter().filter(|r| r.is_full()).count(),
        },
        evolution,
    };
    if pretty {
        print!("{}", report.render());
    } else {
        emit(&report);
    }
    Ok(())
}

pub fn cmd_selftest(
    cfg: &CliConfig,
    apps: Vec<AppId>,
    config: Option<&Path>,
) -> Result<(), Failure> {
    if config.is_some() && apps.len() != 1 {
        return Err(Failure::Usage("--config needs a single --app".into()));
    }
    let mut reports = Vec::new();
    for app in apps {
        cfg.enabled(app)?;
        let verifier = load_config(config, app)?;
        reports.push(run_verifier_selftest(&verifier, &shipped_fixture_plan(app)));
    }
    let gated = reports.iter().all(|r| r.gated);
    if reports.len() == 1 {
        emit(&reports[0]);
    } else {
        emit(&reports);
    }
    if gated {
        Ok(())
    } else {
        Err(Failure::TaskFailure)
    }
}

pub fn cmd_endpoints(app: AppId) -> Result<(), Failure> {
    let all: Vec<Value> = list_endpoints(app).iter().map(|e| e.describe()).collect();
    emit(&all);
    Ok(())
}

fn protocol_failure(endpoint: &str, kind: &str, message: String) -> Failure {
    let verdict = json!({
        "endpoint": endpoint,
        "ok": false,
        "passed": false,
        "evidence": {"failure": {"kind": kind, "message": message}},
        "error": message,
        "bindings": {},
        "revision": 0,
    });
    println!("{verdict}");
    Failure::Usage(message)
}

/// `verifier <app> <endpoint> --state <root> [--config <cfg>] [--<param> <value>...]`
pub fn cmd_verifier(app: &str, endpoint: &str, rest: &[String]) -> Result<(), Failure> {
    let app: AppId = match app.parse() {
        Ok(a) => a,
        Err(e) => return Err(protocol_failure(endpoint, "unknown_app", format!("{e}"))),
    };
    let mut state = None;
    let mut config = None;
    let mut args = BTreeMap::new();
    let mut it = rest.iter();
    while let Some(flag) = it.next() {
        let Some(name) = flag.strip_prefix("--") else {
            return Err(protocol_failure(
                endpoint,
                "invalid_argument",
                format!("unexpected argument `{flag}`"),
            ));
        };
        let Some(value) = it.next() else {
            return Err(protocol_failure(
                endpoint,
                "invalid_argument",
                format!("flag --{name} needs a value"),
            ));
        };
        match name {
            "state" => state = Some(PathBuf::from(value)),
            "config" => config = Some(PathBuf::from(value)),
            _ => {
                args.insert(name.to_string(), value.clone());
            }
        }
    }
    let Some(state) = state else {
        return Err(protocol_failure(
            endpoint,
            "missing_argument",
            "missing required argument `--state`".into(),
        ));
    };
    let cfg = load_config(config.as_deref(), app)?;
    match run_endpoint(&cfg, endpoint, &args, &state) {
        Ok(verdict) => {
            println!("{}", verdict.to_json());
            Ok(())
        }
        Err(e) => {
            let verdict = VerdictRecord::protocol_error(&cfg, endpoint, &e);
            println!("{}", verdict.to_json());
            Err(Failure::Usage(e.to_string()))
        }
    }
}

pub fn cmd_bundles(cfg: &CliConfig, out: Option<PathBuf>) -> Result<(), Failure> {
    let out = out.unwrap_or_else(|| cfg.workspace_root.join("bundles"));
    let mut written = Vec::new();
    for b in shipped_bundles() {
        let dir = out.join(b.name);
        b.write(&dir)
            .map_err(|e| internal(format!("{}: {e}", dir.display())))?;
        written.push(dir.display().to_string());
    }
    emit(&written);
    Ok(())
}
