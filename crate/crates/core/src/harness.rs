//! Sandboxes, scripted agents, frozen trajectories and run directories.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::apps::{
    self, apply_action, check_rel_path, digest_state, directory_digest, load_or_empty,
    persist_app_state, AppAction, AppId, AppState, Scalar, StateDigest, StateError,
};
use crate::task::{
    compute_reward, parse_task_instance, validate_task_instance, RewardReport, TaskInstance,
};
use crate::verifier::{list_endpoints, run_check_suite, VerdictRecord, VerifierConfig};

pub const DEFAULT_STEP_BUDGET: usize = 80;
pub const FINAL_STATE_DIR: &str = "final_state";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("sandbox {root} is not empty")]
    DirtySandbox { root: String },
    #[error("step budget must be at least 1")]
    InvalidBudget,
    #[error("task targets app {task} but the sandbox is for {sandbox}")]
    AppMismatch { task: AppId, sandbox: AppId },
    #[error("task failed validation: {0}")]
    InvalidTask(String),
    #[error("cannot write seed artifact {path}: {message}")]
    SeedWriteFailure { path: String, message: String },
    #[error("init action {index} failed: {message}")]
    InitActionFailure { index: usize, message: String },
    #[error(transparent)]
    State(#[from] StateError),
    #[error("trajectory is frozen and cannot be modified")]
    FrozenTrajectory,
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("run directory file {file} is invalid: {message}")]
    RunDir { file: String, message: String },
    #[error("frozen state violation: {what} digest changed (recorded {expected}, found {found})")]
    FrozenStateViolation {
        what: String,
        expected: String,
        found: String,
    },
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Clone, Debug)]
pub struct SandboxSpec {
    pub root: PathBuf,
    pub app_id: AppId,
    pub step_budget: usize,
    pub run_seed: u64,
}

impl SandboxSpec {
    pub fn new(root: impl Into<PathBuf>, app_id: AppId) -> Self {
        SandboxSpec {
            root: root.into(),
            app_id,
            step_budget: DEFAULT_STEP_BUDGET,
            run_seed: 0,
        }
    }

    pub fn budget(mut self, step_budget: usize) -> Self {
        self.step_budget = step_budget;
        self
    }

    pub fn seed(mut self, run_seed: u64) -> Self {
        self.run_seed = run_seed;
        self
    }
}

/// What a policy sees before choosing its next action.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Observation {
    pub digest: StateDigest,
    pub summary: String,
}

/// A live sandbox: the directory plus the app's in-memory state.
#[derive(Debug)]
pub struct Sandbox {
    spec: SandboxSpec,
    state: AppState,
    initial_digest: StateDigest,
}

impl Sandbox {
    pub fn root(&self) -> &Path {
        &self.spec.root
    }

    pub fn spec(&self) -> &SandboxSpec {
        &self.spec
    }

    pub fn state(&self) -> &AppState {
        &self.state
    }

    pub fn initial_digest(&self) -> &StateDigest {
        &self.initial_digest
    }

    pub fn observe(&self) -> Observation {
        Observation {
            digest: digest_state(&self.state),
            summary: self.state.summary(),
        }
    }
}

/// Writes the seeds, applies the init actions and persists the result.
pub fn init_sandbox(task: &TaskInstance, spec: SandboxSpec) -> Result<Sandbox, HarnessError> {
    if spec.step_budget == 0 {
        return Err(HarnessError::InvalidBudget);
    }
    if task.app_id != spec.app_id {
        return Err(HarnessError::AppMismatch {
            task: task.app_id,
            sandbox: spec.app_id,
        });
    }
    let root = &spec.root;
    fs::create_dir_all(root).map_err(|e| io_err(root, e))?;
    if fs::read_dir(root)
        .map_err(|e| io_err(root, e))?
        .next()
        .is_some()
    {
        return Err(HarnessError::DirtySandbox {
            root: root.display().to_string(),
        });
    }
    for seed in &task.env_init.seed_artifacts {
        let fail = |message: String| HarnessError::SeedWriteFailure {
            path: seed.rel_path.clone(),
            message,
        };
        check_rel_path(&seed.rel_path).map_err(fail)?;
        let path = root.join(&seed.rel_path);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| fail(e.to_string()))?;
        }
        fs::write(&path, &seed.content).map_err(|e| fail(e.to_string()))?;
    }
    let mut state = load_or_empty(spec.app_id, root)?;
    for (index, action) in task.env_init.init_actions.iter().enumerate() {
        state = apply_action(&state, action).map_err(|e| HarnessError::InitActionFailure {
            index,
            message: e.to_string(),
        })?;
    }
    persist_app_state(&state, root)?;
    Ok(Sandbox {
        initial_digest: digest_state(&state),
        spec,
        state,
    })
}

/// Persists the in-memory state; idempotent.
pub fn finalize_run(sandbox: &Sandbox) -> Result<Vec<String>, HarnessError> {
    Ok(persist_app_state(&sandbox.state, sandbox.root())?)
}

/// Deterministic perturbations of a script, used to produce genuine agent failures.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Mutation {
    DropStep {
        index: usize,
    },
    DropVerb {
        verb: String,
    },
    DuplicateStep {
        index: usize,
    },
    CorruptParam {
        index: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        param: Option<String>,
    },
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultProfile {
    pub mutations: Vec<Mutation>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedAgent {
    pub agent_id: String,
    pub script: Vec<AppAction>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fault_profile: Option<FaultProfile>,
}

fn corrupt(value: &Scalar, rng: &mut ChaCha8Rng) -> Scalar {
    match value {
        Scalar::Bool(b) => Scalar::Bool(!b),
        Scalar::Number(n) => Scalar::number(n + f64::from(rng.gen_range(1..=3u8))),
        Scalar::Text(s) => Scalar::Text(format!("{s}~{:04x}", rng.gen::<u16>())),
    }
}

impl ScriptedAgent {
    pub fn new(agent_id: &str, script: Vec<AppAction>) -> Self {
        ScriptedAgent {
            agent_id: agent_id.to_string(),
            script,
            fault_profile: None,
        }
    }

    pub fn with_faults(mut self, mutations: Vec<Mutation>) -> Self {
        self.fault_profile = Some(FaultProfile { mutations });
        self
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, String> {
        let de = &mut serde_json::Deserializer::from_slice(bytes);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            format!("invalid agent document at `{path}`: {}", e.into_inner())
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("agent serializes");
        s.push('\n');
        s
    }

    /// The script after applying the fault profile. Mutations apply in
    /// order, each indexing the script produced by the previous one.
    pub fn effective_script(&self, run_seed: u64) -> Vec<AppAction> {
        let mut script = self.script.clone();
        let Some(profile) = &self.fault_profile else {
            return script;
        };
        for (n, m) in profile.mutations.iter().enumerate() {
            match m {
                Mutation::DropStep { index } if *index < script.len() => {
                    script.remove(*index);
                }
                Mutation::DropVerb { verb } => script.retain(|a| &a.verb != verb),
                Mutation::DuplicateStep { index } if *index < script.len() => {
                    let step = script[*index].clone();
                    script.insert(*index + 1, step);
                }
                Mutation::CorruptParam { index, param } if *index < script.len() => {
                    let mut rng =
                        ChaCha8Rng::seed_from_u64(run_seed ^ ((n as u64) << 32) ^ *index as u64);
                    let action = &mut script[*index];
                    let key = match param {
                        Some(p) => Some(p.clone()),
                        None if action.params.is_empty() => None,
                        None => {
                            let i = rng.gen_range(0..action.params.len());
                            action.params.keys().nth(i).cloned()
                        }
                    };
                    if let Some(key) = key {
                        let old = action
                            .params
                            .get(&key)
                            .cloned()
                            .unwrap_or_else(|| Scalar::from(""));
                        action.params.insert(key, corrupt(&old, &mut rng));
                    }
                }
                _ => {}
            }
        }
        script
    }
}

/// Anything that can drive a sandbox one action at a time.
pub trait Policy {
    fn agent_id(&self) -> &str;
    fn next_action(&mut self, observation: &Observation) -> Option<AppAction>;
}

struct ScriptPolicy<'a> {
    agent_id: &'a str,
    steps: std::vec::IntoIter<AppAction>,
}

impl Policy for ScriptPolicy<'_> {
    fn agent_id(&self) -> &str {
        self.agent_id
    }

    fn next_action(&mut self, _: &Observation) -> Option<AppAction> {
        self.steps.next()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryStep {
    pub index: usize,
    pub action: AppAction,
    pub post_action_digest: StateDigest,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Ordered record of an agent run; immutable once frozen.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryRecord {
    task_id: String,
    agent_id: String,
    initial_digest: StateDigest,
    steps: Vec<TrajectoryStep>,
    final_digest: StateDigest,
    truncated: bool,
    frozen: bool,
}

impl TrajectoryRecord {
    pub fn open(task_id: &str, agent_id: &str, initial_digest: StateDigest) -> Self {
        TrajectoryRecord {
            task_id: task_id.to_string(),
            agent_id: agent_id.to_string(),
            final_digest: initial_digest.clone(),
            initial_digest,
            steps: Vec::new(),
            truncated: false,
            frozen: false,
        }
    }

    pub fn push(&mut self, step: TrajectoryStep) -> Result<(), HarnessError> {
        if self.frozen {
            return Err(HarnessError::FrozenTrajectory);
        }
        self.final_digest = step.post_action_digest.clone();
        self.steps.push(step);
        Ok(())
    }

    pub fn freeze(&mut self, truncated: bool) -> Result<(), HarnessError> {
        if self.frozen {
            return Err(HarnessError::FrozenTrajectory);
        }
        self.truncated = truncated;
        self.frozen = true;
        Ok(())
    }

    pub fn task_id(&self) -> &str {
        &self.task_id
    }

    pub fn agent_id(&self) -> &str {
        &self.agent_id
    }

    pub fn initial_digest(&self) -> &StateDigest {
        &self.initial_digest
    }

    pub fn steps(&self) -> &[TrajectoryStep] {
        &self.steps
    }

    pub fn final_digest(&self) -> &StateDigest {
        &self.final_digest
    }

    pub fn truncated(&self) -> bool {
        self.truncated
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("trajectory serializes");
        s.push('\n');
        s
    }

    /// Content address of the record.
    pub fn content_hash(&self) -> String {
        sha256_hex(self.to_json().as_bytes())
    }
}

/// Runs a policy until it stops or the budget is spent. Rejected actions are
/// recorded as no-op steps carrying the error.
pub fn execute_policy(
    sandbox: &mut Sandbox,
    policy: &mut dyn Policy,
    task_id: &str,
) -> Result<TrajectoryRecord, HarnessError> {
    let mut record = TrajectoryRecord::open(task_id, policy.agent_id(), sandbox.observe().digest);
    let mut truncated = false;
    loop {
        let observation = sandbox.observe();
        let Some(action) = policy.next_action(&observation) else {
            break;
        };
        if record.steps.len() >= sandbox.spec.step_budget {
            truncated = true;
            break;
        }
        let error = match apply_action(&sandbox.state, &action) {
            Ok(next) => {
                sandbox.state = next;
                None
            }
            Err(e) => Some(e.to_string()),
        };
        record.push(TrajectoryStep {
            index: record.steps.len(),
            action,
            post_action_digest: digest_state(&sandbox.state),
            error,
        })?;
    }
    record.freeze(truncated)?;
    Ok(record)
}

pub fn execute_agent(
    sandbox: &mut Sandbox,
    agent: &ScriptedAgent,
    task_id: &str,
) -> Result<TrajectoryRecord, HarnessError> {
    let mut policy = ScriptPolicy {
        agent_id: &agent.agent_id,
        steps: agent.effective_script(sandbox.spec.run_seed).into_iter(),
    };
    execute_policy(sandbox, &mut policy, task_id)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReplayReport {
    pub final_digest: StateDigest,
    pub reproduced: bool,
    pub first_divergence: Option<usize>,
}

/// Re-initializes a scratch sandbox and re-applies the recorded actions.
pub fn replay_trajectory(
    task: &TaskInstance,
    trajectory: &TrajectoryRecord,
) -> Result<ReplayReport, HarnessError> {
    let scratch = tempfile::tempdir().map_err(|e| io_err(Path::new("<tempdir>"), e))?;
    let sandbox = init_sandbox(task, SandboxSpec::new(scratch.path(), task.app_id))?;
    let mut state = sandbox.state;
    let mut first_divergence = (sandbox.initial_digest != trajectory.initial_digest).then_some(0);
    for step in &trajectory.steps {
        if let Ok(next) = apply_action(&state, &step.action) {
            state = next;
        }
        if first_divergence.is_none() && digest_state(&state) != step.post_action_digest {
            first_divergence = Some(step.index);
        }
    }
    let final_digest = digest_state(&state);
    Ok(ReplayReport {
        reproduced: first_divergence.is_none() && final_digest == trajectory.final_digest,
        final_digest,
        first_divergence,
    })
}

#[derive(Clone, Debug)]
pub struct RunOptions {
    pub runs_root: PathBuf,
    pub budget: usize,
    pub seed: u64,
}

impl RunOptions {
    pub fn new(runs_root: impl Into<PathBuf>) -> Self {
        RunOptions {
            runs_root: runs_root.into(),
            budget: DEFAULT_STEP_BUDGET,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunMeta {
    pub task_id: String,
    pub app_id: AppId,
    pub agent_id: String,
    pub verifier_revision: u64,
    pub budget: usize,
    pub seed: u64,
    pub started_at_ms: u64,
    pub steps: usize,
    pub truncated: bool,
    pub task_digest: String,
    pub trajectory_hash: String,
    pub final_state_digest: StateDigest,
    pub final_state_files_digest: String,
}

/// A completed run as persisted in its run directory.
#[derive(Clone, Debug)]
pub struct RunArtifact {
    pub task: TaskInstance,
    pub trajectory: TrajectoryRecord,
    pub verdicts: Vec<VerdictRecord>,
    pub reward: RewardReport,
    pub verifier_revision: u64,
    pub meta: RunMeta,
    pub run_dir: PathBuf,
}

impl RunArtifact {
    pub fn final_state(&self) -> PathBuf {
        self.run_dir.join(FINAL_STATE_DIR)
    }

    /// Checks the persisted task, trajectory and final state against the
    /// digests recorded at run time.
    pub fn verify_frozen(&self) -> Result<(), HarnessError> {
        let check = |what: &str, expected: &str, found: String| {
            if expected == found {
                Ok(())
            } else {
                Err(HarnessError::FrozenStateViolation {
                    what: what.into(),
                    expected: expected.into(),
                    found,
                })
            }
        };
        let task_path = self.run_dir.join("task.json");
        let task_bytes = fs::read(&task_path).map_err(|e| io_err(&task_path, e))?;
        check("task", &self.meta.task_digest, sha256_hex(&task_bytes))?;
        let traj_path = self.run_dir.join("trajectory.json");
        let traj_bytes = fs::read(&traj_path).map_err(|e| io_err(&traj_path, e))?;
        check(
            "trajectory",
            &self.meta.trajectory_hash,
            sha256_hex(&traj_bytes),
        )?;
        check(
            "final_state",
            &self.meta.final_state_files_digest,
            directory_digest(&self.final_state())?,
        )
    }
}

/// A staged failure of `run_task`.
#[derive(Debug, Error)]
#[error("{stage}: {source}")]
pub struct RunError {
    pub stage: &'static str,
    #[source]
    pub source: HarnessError,
}

fn stage<T>(name: &'static str, r: Result<T, HarnessError>) -> Result<T, RunError> {
    r.map_err(|source| RunError {
        stage: name,
        source,
    })
}

fn write_json(dir: &Path, name: &str, text: &str) -> Result<(), HarnessError> {
    let path = dir.join(name);
    fs::write(&path, text).map_err(|e| io_err(&path, e))
}

fn pretty<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("run record serializes");
    s.push('\n');
    s
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

fn fresh_run_dir(
    runs_root: &Path,
    task_id: &str,
    seed: u64,
) -> Result<(PathBuf, u64), HarnessError> {
    let parent = runs_root.join(task_id);
    fs::create_dir_all(&parent).map_err(|e| io_err(&parent, e))?;
    let mut ms = now_ms();
    loop {
        let dir = parent.join(format!("{ms}-{seed}"));
        match fs::create_dir(&dir) {
            Ok(()) => return Ok((dir, ms)),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => ms += 1,
            Err(e) => return Err(io_err(&dir, e)),
        }
    }
}

/// init → execute → finalize → check suite → reward, persisted under
/// `<runs_root>/<task_id>/<epoch_ms>-<seed>/`.
pub fn run_task(
    task: &TaskInstance,
    agent: &ScriptedAgent,
    cfg: &VerifierConfig,
    opts: &RunOptions,
) -> Result<RunArtifact, RunError> {
    let report = validate_task_instance(task, list_endpoints(task.app_id));
    if !report.is_clean() {
        let text: Vec<String> = report
            .findings
            .iter()
            .map(|f| format!("{}: {}", f.path, f.message))
            .collect();
        return Err(RunError {
            stage: "validate",
            source: HarnessError::InvalidTask(text.join("; ")),
        });
    }
    if cfg.app_id != task.app_id {
        return Err(RunError {
            stage: "validate",
            source: HarnessError::AppMismatch {
                task: task.app_id,
                sandbox: cfg.app_id,
            },
        });
    }
    let (run_dir, started_at_ms) = stage(
        "sandbox",
        fresh_run_dir(&opts.runs_root, &task.task_id, opts.seed),
    )?;
    let task_json = task.to_json();
    stage("sandbox", write_json(&run_dir, "task.json", &task_json))?;
    let spec = SandboxSpec::new(run_dir.join(FINAL_STATE_DIR), task.app_id)
        .budget(opts.budget)
        .seed(opts.seed);
    let mut sandbox = stage("init", init_sandbox(task, spec))?;
    let trajectory = stage("execute", execute_agent(&mut sandbox, agent, &task.task_id))?;
    stage("finalize", finalize_run(&sandbox))?;
    let files_digest = stage(
        "finalize",
        directory_digest(sandbox.root()).map_err(HarnessError::from),
    )?;
    let verdicts = run_check_suite(cfg, task, sandbox.root());
    let reward = compute_reward(&verdicts).map_err(|e| RunError {
        stage: "reward",
        source: HarnessError::InvalidTask(e.to_string()),
    })?;
    let trajectory_json = trajectory.to_json();
    let meta = RunMeta {
        task_id: task.task_id.clone(),
        app_id: task.app_id,
        agent_id: agent.agent_id.clone(),
        verifier_revision: cfg.revision,
        budget: opts.budget,
        seed: opts.seed,
        started_at_ms,
        steps: trajectory.steps().len(),
        truncated: trajectory.truncated(),
        task_digest: sha256_hex(task_json.as_bytes()),
        trajectory_hash: sha256_hex(trajectory_json.as_bytes()),
        final_state_digest: trajectory.final_digest().clone(),
        final_state_files_digest: files_digest,
    };
    stage(
        "persist",
        write_json(&run_dir, "trajectory.json", &trajectory_json),
    )?;
    stage(
        "persist",
        write_json(&run_dir, "verdicts.json", &pretty(&verdicts)),
    )?;
    stage(
        "persist",
        write_json(&run_dir, "reward.json", &pretty(&reward)),
    )?;
    stage("persist", write_json(&run_dir, "meta.json", &pretty(&meta)))?;
    Ok(RunArtifact {
        task: task.clone(),
        trajectory,
        verdicts,
        reward,
        verifier_revision: cfg.revision,
        meta,
        run_dir,
    })
}

fn read_json<T: serde::de::DeserializeOwned>(dir: &Path, name: &str) -> Result<T, HarnessError> {
    let path = dir.join(name);
    let bytes = fs::read(&path).map_err(|e| io_err(&path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| HarnessError::RunDir {
        file: name.into(),
        message: e.to_string(),
    })
}

/// Loads a run directory and checks its internal consistency: the
/// trajectory is frozen, the reward recomputes from the verdicts and the
/// final state matches its recorded digest.
pub fn load_run_dir(dir: &Path) -> Result<RunArtifact, HarnessError> {
    let task_path = dir.join("task.json");
    let task_bytes = fs::read(&task_path).map_err(|e| io_err(&task_path, e))?;
    let task = parse_task_instance(&task_bytes).map_err(|e| HarnessError::RunDir {
        file: "task.json".into(),
        message: e.to_string(),
    })?;
    let trajectory: TrajectoryRecord = read_json(dir, "trajectory.json")?;
    if !trajectory.is_frozen() {
        return Err(HarnessError::RunDir {
            file: "trajectory.json".into(),
            message: "trajectory is not frozen".into(),
        });
    }
    let verdicts: Vec<VerdictRecord> = read_json(dir, "verdicts.json")?;
    let reward: RewardReport = read_json(dir, "reward.json")?;
    let meta: RunMeta = read_json(dir, "meta.json")?;
    match compute_reward(&verdicts) {
        Ok(r) if r == reward => {}
        _ => {
            return Err(HarnessError::RunDir {
                file: "reward.json".into(),
                message: "reward does not recompute from verdicts.json".into(),
            })
        }
    }
    let artifact = RunArtifact {
        task,
        trajectory,
        verdicts,
        reward,
        verifier_revision: meta.verifier_revision,
        meta,
        run_dir: dir.to_path_buf(),
    };
    artifact.verify_frozen()?;
    Ok(artifact)
}

/// Every run directory (one holding `meta.json`) below `root`, sorted.
pub fn find_run_dirs(root: &Path) -> Vec<PathBuf> {
    let mut dirs: Vec<PathBuf> = walkdir::WalkDir::new(root)
        .sort_by_file_name()
        .into_iter()
        .filter_map(Result::ok)
        .filter(|e| e.file_type().is_file() && e.file_name() == "meta.json")
        .filter_map(|e| e.path().parent().map(Path::to_path_buf))
        .filter(|d| !d.components().any(|c| c.as_os_str() == FINAL_STATE_DIR))
        .collect();
    dirs.sort();
    dirs
}

/// Loads the app state of a persisted run's final state.
pub fn load_final_state(run: &RunArtifact) -> Result<AppState, HarnessError> {
    Ok(apps::load_app_state(run.task.app_id, &run.final_state())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::task::{CheckSpec, EnvInitRecipe};
    use std::collections::BTreeMap;

    fn vault_task() -> TaskInstance {
        TaskInstance {
            task_id: "vault_smoke".into(),
            app_id: AppId::Vault,
            instruction: "Create the Italian folder.".into(),
            difficulty: 1,
            env_init: EnvInitRecipe::default(),
            criteria: vec![CheckSpec::new("c0", "check-folder-exists").arg("path", "Italian")],
            metadata: BTreeMap::new(),
        }
    }

    fn folder(path: &str) -> AppAction {
        AppAction::new(AppId::Vault, "create_folder").with("path", path)
    }

    #[test]
    fn dirty_sandbox_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("stray"), b"x").unwrap();
        let err =
            init_sandbox(&vault_task(), SandboxSpec::new(dir.path(), AppId::Vault)).unwrap_err();
        assert!(matches!(err, HarnessError::DirtySandbox { .. }));
    }

    #[test]
    fn empty_script_keeps_initial_digest() {
        let dir = tempfile::tempdir().unwrap();
        let mut sb =
            init_sandbox(&vault_task(), SandboxSpec::new(dir.path(), AppId::Vault)).unwrap();
        let t = execute_agent(&mut sb, &ScriptedAgent::new("noop", vec![]), "vault_smoke").unwrap();
        assert!(t.steps().is_empty());
        assert_eq!(t.final_digest(), sb.initial_digest());
    }

    #[test]
    fn rejected_action_is_a_noop_step() {
        let dir = tempfile::tempdir().unwrap();
        let mut sb =
            init_sandbox(&vault_task(), SandboxSpec::new(dir.path(), AppId::Vault)).unwrap();
        let agent = ScriptedAgent::new(
            "a",
            vec![AppAction::new(AppId::Vault, "fly"), folder("Italian")],
        );
        let t = execute_agent(&mut sb, &agent, "vault_smoke").unwrap();
        assert_eq!(t.steps().len(), 2);
        assert!(t.steps()[0].error.is_some());
        assert_eq!(&t.steps()[0].post_action_digest, sb.initial_digest());
        assert!(replay_trajectory(&vault_task(), &t).unwrap().reproduced);
    }

    #[test]
    fn budget_truncates() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SandboxSpec::new(dir.path(), AppId::Vault).budget(2);
        let mut sb = init_sandbox(&vault_task(), spec).unwrap();
        let agent = ScriptedAgent::new("a", vec![folder("A"), folder("B"), folder("C")]);
        let t = execute_agent(&mut sb, &agent, "vault_smoke").unwrap();
        assert_eq!(t.steps().len(), 2);
        assert!(t.truncated());
    }

    #[test]
    fn frozen_record_rejects_pushes() {
        let mut t = TrajectoryRecord::open("t", "a", StateDigest("0".into()));
        t.freeze(false).unwrap();
        let step = TrajectoryStep {
            index: 0,
            action: folder("A"),
            post_action_digest: StateDigest("1".into()),
            error: None,
        };
        assert!(matches!(t.push(step), Err(HarnessError::FrozenTrajectory)));
    }

    #[test]
    fn mutations_are_seed_deterministic() {
        let agent = ScriptedAgent::new("a", vec![folder("A"), folder("B")]).with_faults(vec![
            Mutation::CorruptParam {
                index: 0,
                param: None,
            },
            Mutation::DuplicateStep { index: 1 },
        ]);
        let s1 = agent.effective_script(7);
        assert_eq!(s1, agent.effective_script(7));
        assert_eq!(s1.len(), 3);
        assert_ne!(s1[0], folder("A"));
        let dropped = ScriptedAgent::new("a", vec![folder("A"), folder("B")]).with_faults(vec![
            Mutation::DropVerb {
                verb: "create_folder".into(),
            },
        ]);
        assert!(dropped.effective_script(0).is_empty());
    }

    #[test]
    fn run_directory_round_trips_and_detects_tampering() {
        let runs = tempfile::tempdir().unwrap();
        let agent = ScriptedAgent::new("a", vec![folder("Italian")]);
        let cfg = VerifierConfig::shipped(AppId::Vault);
        let run = run_task(&vault_task(), &agent, &cfg, &RunOptions::new(runs.path())).unwrap();
        assert!(run.reward.is_full());
        let loaded = load_run_dir(&run.run_dir).unwrap();
        assert_eq!(loaded.verdicts, run.verdicts);
        assert_eq!(find_run_dirs(runs.path()), vec![run.run_dir.clone()]);
        fs::write(run.final_state().join("vault/Italian/x.md"), "x").unwrap();
        assert!(matches!(
            load_run_dir(&run.run_dir),
            Err(HarnessError::FrozenStateViolation { .. })
        ));
    }
}
