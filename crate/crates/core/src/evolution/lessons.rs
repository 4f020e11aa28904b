//! Binding deltas, lessons and the append-only per-app lesson ledger.

use std::collections::BTreeSet;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::apps::AppId;
use crate::verifier::VerifierConfig;

/// One binding rewrite. `None` means the resource is absent on that side.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BindingDelta {
    pub resource: String,
    pub old: Option<String>,
    pub new: Option<String>,
}

/// Applies `deltas` to `cfg` and bumps the revision. Fails when a delta's
/// `old` side does not match the current binding.
pub fn apply_deltas(
    cfg: &VerifierConfig,
    deltas: &[BindingDelta],
) -> Result<VerifierConfig, String> {
    let mut next = cfg.clone();
    for d in deltas {
        let current = next.bindings.get(&d.resource);
        if current != d.old.as_ref() {
            return Err(format!(
                "binding `{}` is {:?}, delta expects {:?}",
                d.resource, current, d.old
            ));
        }
        match &d.new {
            Some(v) => next.bindings.insert(d.resource.clone(), v.clone()),
            None => next.bindings.remove(&d.resource),
        };
    }
    next.revision = cfg.revision + 1;
    Ok(next)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lesson {
    pub app_id: AppId,
    pub source_task_id: String,
    pub failed_assumption: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub operator: Option<String>,
    pub corrective_action: Vec<BindingDelta>,
    /// Binding resources the lesson is about.
    pub resources: Vec<String>,
    pub revision_from: u64,
    pub revision_to: u64,
    pub resolved: bool,
}

impl Lesson {
    /// Re-applies the corrective action to the `revision_from` config.
    pub fn replay(&self, from: &VerifierConfig) -> Result<VerifierConfig, String> {
        if from.revision != self.revision_from || from.app_id != self.app_id {
            return Err(format!(
                "lesson applies to {} revision {}, got {} revision {}",
                self.app_id, self.revision_from, from.app_id, from.revision
            ));
        }
        let next = apply_deltas(from, &self.corrective_action)?;
        if next.revision != self.revision_to {
            return Err(format!(
                "replay yields revision {}, lesson says {}",
                next.revision, self.revision_to
            ));
        }
        Ok(next)
    }
}

pub fn lessons_path(workspace: &Path, app: AppId) -> PathBuf {
    workspace
        .join("lessons")
        .join(app.as_str())
        .join("lessons.jsonl")
}

pub fn append_lessons(workspace: &Path, lessons: &[Lesson]) -> std::io::Result<()> {
    for lesson in lessons {
        let path = lessons_path(workspace, lesson.app_id);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let mut f = OpenOptions::new().create(true).append(true).open(&path)?;
        let line = serde_json::to_string(lesson).expect("lesson serializes");
        writeln!(f, "{line}")?;
    }
    Ok(())
}

/// Lessons recorded for `app`; a missing ledger is empty.
pub fn load_lessons(workspace: &Path, app: AppId) -> Result<Vec<Lesson>, String> {
    let path = lessons_path(workspace, app);
    let text = match fs::read_to_string(&path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(format!("{}: {e}", path.display())),
    };
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| format!("{}:{}: {e}", path.display(), i + 1))
        })
        .collect()
}

/// Resources named by lessons that were never resolved.
pub fn open_resources(lessons: &[Lesson]) -> BTreeSet<String> {
    lessons
        .iter()
        .filter(|l| !l.resolved)
        .flat_map(|l| l.resources.iter().cloned())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn delta_with_stale_old_value_is_rejected() {
        let cfg = VerifierConfig::shipped(AppId::Vault);
        let bad = BindingDelta {
            resource: "file:vault_root".into(),
            old: Some("notes".into()),
            new: Some("vault".into()),
        };
        assert!(apply_deltas(&cfg, &[bad]).is_err());
    }

    #[test]
    fn ledger_appends() {
        let ws = tempfile::tempdir().unwrap();
        let lesson = Lesson {
            app_id: AppId::Vault,
            source_task_id: "t".into(),
            failed_assumption: "x".into(),
            operator: None,
            corrective_action: vec![],
            resources: vec!["file:vault_root".into()],
            revision_from: 0,
            revision_to: 0,
            resolved: false,
        };
        append_lessons(ws.path(), std::slice::from_ref(&lesson)).unwrap();
        append_lessons(ws.path(), std::slice::from_ref(&lesson)).unwrap();
        let loaded = load_lessons(ws.path(), AppId::Vault).unwrap();
        assert_eq!(loaded, vec![lesson.clone(), lesson]);
        assert!(open_resources(&loaded).contains("file:vault_root"));
        assert!(load_lessons(ws.path(), AppId::Media).unwrap().is_empty());
    }
}
