use std::path::{Path, PathBuf};

use serde::Deserialize;
use softworld::apps::AppId;
use softworld::evolution::DEFAULT_EVOLUTION_BUDGET;
use softworld::harness::DEFAULT_STEP_BUDGET;

use crate::Failure;

pub const CONFIG_FILE: &str = "softworld.config.json";
pub const WORKSPACE_ENV: &str = "WORLD_WORKSPACE";

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    #[serde(skip)]
    pub workspace_root: PathBuf,
    pub default_budget: usize,
    pub default_seed: u64,
    pub apps_enabled: Vec<AppId>,
    pub evolution_budget: usize,
    /// Fraction of runs that get an evolution pass against the inspector.
    pub qc_sample_rate: f64,
}

impl Default for CliConfig {
    fn default() -> Self {
        CliConfig {
            workspace_root: PathBuf::from("."),
            default_budget: DEFAULT_STEP_BUDGET,
            default_seed: 0,
            apps_enabled: AppId::ALL.to_vec(),
            evolution_budget: DEFAULT_EVOLUTION_BUDGET,
            qc_sample_rate: 0.0,
        }
    }
}

impl CliConfig {
    /// Workspace from `WORLD_WORKSPACE`, else the flag, else the current
    /// directory; the config file there is optional.
    pub fn discover(flag: Option<&Path>) -> Result<Self, Failure> {
        let root = std::env::var_os(WORKSPACE_ENV)
            .map(PathBuf::from)
            .or_else(|| flag.map(Path::to_path_buf))
            .unwrap_or_else(|| PathBuf::from("."));
        let path = root.join(CONFIG_FILE);
        let mut cfg = match std::fs::read(&path) {
            Ok(bytes) => serde_json::from_slice::<CliConfig>(&bytes)
                .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => CliConfig::default(),
            Err(e) => return Err(Failure::Usage(format!("{}: {e}", path.display()))),
        };
        cfg.workspace_root = root;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn check(&self) -> Result<(), Failure> {
        if self.evolution_budget < 1 {
            return Err(Failure::Usage("evolution_budget must be at least 1".into()));
        }
        if self.default_budget < 1 {
            return Err(Failure::Usage("default_budget must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.qc_sample_rate) {
            return Err(Failure::Usage("qc_sample_rate must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn enabled(&self, app: AppId) -> Result<AppId, Failure> {
        if self.apps_enabled.contains(&app) {
            Ok(app)
        } else {
            Err(Failure::Usage(format!(
                "app {app} is not enabled in {CONFIG_FILE}"
            )))
        }
    }
}
