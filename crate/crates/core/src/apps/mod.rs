//! Miniature applications with fully inspectable persisted state.
//!
//! Each app is a pure state machine: [`apply_action`] returns a successor
//! state and never mutates its input. Persistence writes a canonical on-disk
//! layout under a sandbox root, and [`digest_state`] hashes the canonical
//! serialization so equal states always produce equal digests.

pub mod formula;
pub mod media;
pub mod scalar;
pub mod store;
pub mod vault;
pub mod workbook;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use media::MediaLibraryState;
pub use scalar::Scalar;
pub use store::TableStore;
pub use vault::VaultState;
pub use workbook::WorkbookState;

/// Registered application identifiers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AppId {
    Vault,
    Workbook,
    Media,
}

impl AppId {
    pub const ALL: [AppId; 3] = [AppId::Vault, AppId::Workbook, AppId::Media];

    pub fn as_str(self) -> &'static str {
        match self {
            AppId::Vault => "vault",
            AppId::Workbook => "workbook",
            AppId::Media => "media",
        }
    }

    /// The complete published action vocabulary of the app.
    pub fn verbs(self) -> &'static [&'static str] {
        match self {
            AppId::Vault => vault::VERBS,
            AppId::Workbook => workbook::VERBS,
            AppId::Media => media::VERBS,
        }
    }
}

impl fmt::Display for AppId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AppId {
    type Err = UnknownApp;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "vault" => Ok(AppId::Vault),
            "workbook" => Ok(AppId::Workbook),
            "media" => Ok(AppId::Media),
            other => Err(UnknownApp(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown app `{0}` (valid apps: vault, workbook, media)")]
pub struct UnknownApp(pub String);

/// One mutation request against an app, the unit of agent interaction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppAction {
    pub app_id: AppId,
    pub verb: String,
    #[serde(default)]
    pub params: BTreeMap<String, Scalar>,
}

impl AppAction {
    pub fn new(app_id: AppId, verb: &str) -> Self {
        AppAction {
            app_id,
            verb: verb.to_string(),
            params: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl Into<Scalar>) -> Self {
        self.params.insert(key.to_string(), value.into());
        self
    }

    pub(crate) fn text(&self, key: &str) -> Result<&str, ActionError> {
        match self.params.get(key) {
            Some(Scalar::Text(s)) => Ok(s),
            Some(other) => Err(ActionError::InvalidParams(format!(
                "`{}`: param `{key}` must be a string, got {other}",
                self.verb
            ))),
            None => Err(ActionError::InvalidParams(format!(
                "`{}`: missing param `{key}`",
                self.verb
            ))),
        }
    }

    pub(crate) fn opt_text(&self, key: &str) -> Result<Option<&str>, ActionError> {
        match self.params.get(key) {
            None => Ok(None),
            Some(_) => self.text(key).map(Some),
        }
    }

    pub(crate) fn integer(&self, key: &str) -> Result<i64, ActionError> {
        match self.params.get(key) {
            Some(Scalar::Number(n)) if n.fract() == 0.0 && n.abs() < 9.0e15 => Ok(*n as i64),
            Some(other) => Err(ActionError::InvalidParams(format!(
                "`{}`: param `{key}` must be an integer, got {other}",
                self.verb
            ))),
            None => Err(ActionError::InvalidParams(format!(
                "`{}`: missing param `{key}`",
                self.verb
            ))),
        }
    }

    pub(crate) fn opt_bool(&self, key: &str) -> Result<Option<bool>, ActionError> {
        match self.params.get(key) {
            None => Ok(None),
            Some(Scalar::Bool(b)) => Ok(Some(*b)),
            Some(other) => Err(ActionError::InvalidParams(format!(
                "`{}`: param `{key}` must be a boolean, got {other}",
                self.verb
            ))),
        }
    }

    /// Rejects params outside `allowed`.
    pub(crate) fn only(&self, allowed: &[&str]) -> Result<(), ActionError> {
        match self.params.keys().find(|k| !allowed.contains(&k.as_str())) {
            Some(k) => Err(ActionError::InvalidParams(format!(
                "`{}`: unexpected param `{k}`",
                self.verb
            ))),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ActionError {
    #[error("unknown verb `{verb}` for app {app}")]
    UnknownVerb { app: AppId, verb: String },
    #[error("invalid params: {0}")]
    InvalidParams(String),
    #[error("domain violation: {0}")]
    DomainViolation(String),
}

#[derive(Debug, Error)]
pub enum StateError {
    #[error("malformed state in {file} at byte {offset}: {message}")]
    MalformedState {
        file: String,
        offset: usize,
        message: String,
    },
    #[error("missing state for {app}: {path} not found")]
    MissingState { app: AppId, path: String },
    #[error("i/o failure on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl StateError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        StateError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub(crate) fn from_json(file: &str, text: &str, err: &serde_json::Error) -> Self {
        StateError::MalformedState {
            file: file.to_string(),
            offset: byte_offset(text, err.line(), err.column()),
            message: err.to_string(),
        }
    }
}

/// Converts a 1-based line/column pair into a byte offset within `text`.
pub(crate) fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let mut offset = 0;
    for (i, l) in text.split_inclusive('\n').enumerate() {
        if i + 1 == line {
            return (offset + column.saturating_sub(1)).min(text.len());
        }
        offset += l.len();
    }
    text.len()
}

/// Hex SHA-256 over an app's canonical state serialization.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StateDigest(pub String);

impl fmt::Display for StateDigest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// The full state of one app instance.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "app", content = "state", rename_all = "lowercase")]
pub enum AppState {
    Vault(VaultState),
    Workbook(WorkbookState),
    Media(MediaLibraryState),
}

impl AppState {
    /// The app's state before anything has been created or seeded.
    pub fn empty(app: AppId) -> Self {
        match app {
            AppId::Vault => AppState::Vault(VaultState::default()),
            AppId::Workbook => AppState::Workbook(WorkbookState::default()),
            AppId::Media => AppState::Media(MediaLibraryState::empty(media::CURRENT_SCHEMA)),
        }
    }

    pub fn app_id(&self) -> AppId {
        match self {
            AppState::Vault(_) => AppId::Vault,
            AppState::Workbook(_) => AppId::Workbook,
            AppState::Media(_) => AppId::Media,
        }
    }

    /// Short human-readable description, the textual half of an agent observation.
    pub fn summary(&self) -> String {
        match self {
            AppState::Vault(v) => format!(
                "vault: {} folders, {} notes",
                v.folders.len(),
                v.notes.len()
            ),
            AppState::Workbook(w) => {
                let sheets: Vec<String> = w
                    .sheets
                    .iter()
                    .map(|s| format!("{} ({} cells)", s.name, s.cells.len()))
                    .collect();
                format!("workbook: {}", sheets.join(", "))
            }
            AppState::Media(m) => format!(
                "media library v{}: {} images, {} tags",
                m.schema_version,
                m.image_rows().len(),
                m.tag_rows().len()
            ),
        }
    }
}

/// Applies one action, returning the successor state.
pub fn apply_action(state: &AppState, action: &AppAction) -> Result<AppState, ActionError> {
    if action.app_id != state.app_id() {
        return Err(ActionError::InvalidParams(format!(
            "action targets app {} but state belongs to {}",
            action.app_id,
            state.app_id()
        )));
    }
    match state {
        AppState::Vault(v) => v.apply(action).map(AppState::Vault),
        AppState::Workbook(w) => w.apply(action).map(AppState::Workbook),
        AppState::Media(m) => m.apply(action).map(AppState::Media),
    }
}

/// Writes the canonical on-disk form of `state` under `sandbox_root`.
pub fn persist_app_state(state: &AppState, sandbox_root: &Path) -> Result<Vec<String>, StateError> {
    match state {
        AppState::Vault(v) => v.persist(sandbox_root),
        AppState::Workbook(w) => w.persist(sandbox_root),
        AppState::Media(m) => m.persist(sandbox_root),
    }
}

/// Parses every state surface of `app` under `sandbox_root`.
pub fn load_app_state(app: AppId, sandbox_root: &Path) -> Result<AppState, StateError> {
    match app {
        AppId::Vault => VaultState::load(sandbox_root).map(AppState::Vault),
        AppId::Workbook => WorkbookState::load(sandbox_root).map(AppState::Workbook),
        AppId::Media => MediaLibraryState::load(sandbox_root).map(AppState::Media),
    }
}

/// Like [`load_app_state`] but yields the empty state when nothing is on disk yet.
pub fn load_or_empty(app: AppId, sandbox_root: &Path) -> Result<AppState, StateError> {
    match load_app_state(app, sandbox_root) {
        Err(StateError::MissingState { .. }) if !app_files_present(app, sandbox_root) => {
            Ok(AppState::empty(app))
        }
        other => other,
    }
}

/// Canonical relative locations of an app's state files.
pub fn canonical_paths(app: AppId) -> &'static [&'static str] {
    match app {
        AppId::Vault => &[vault::ROOT_DIR],
        AppId::Workbook => &[workbook::FILE],
        AppId::Media => &[media::LIBRARY_FILE, media::DATA_FILE],
    }
}

fn app_files_present(app: AppId, root: &Path) -> bool {
    canonical_paths(app).iter().any(|p| root.join(p).exists())
}

pub fn digest_state(state: &AppState) -> StateDigest {
    let mut hasher = Sha256::new();
    hasher.update(state.app_id().as_str().as_bytes());
    hasher.update(b"\n");
    // Serialization of BTreeMap-backed state is key-ordered, so this is canonical.
    let bytes = serde_json::to_vec(state).expect("app state always serializes");
    hasher.update(&bytes);
    StateDigest(hex::encode(hasher.finalize()))
}

/// Digest over every file under `dir` (relative path + bytes), independent
/// of timestamps and directory iteration order.
pub fn directory_digest(dir: &Path) -> Result<String, StateError> {
    let mut entries: Vec<(String, PathBuf)> = Vec::new();
    for entry in walkdir::WalkDir::new(dir).sort_by_file_name() {
        let entry = entry.map_err(|e| StateError::Io {
            path: dir.display().to_string(),
            source: e.into(),
        })?;
        if entry.file_type().is_dir() && entry.path() != dir {
            let rel = rel_string(dir, entry.path());
            entries.push((format!("{rel}/"), PathBuf::new()));
        } else if entry.file_type().is_file() {
            entries.push((rel_string(dir, entry.path()), entry.path().to_path_buf()));
        }
    }
    let mut hasher = Sha256::new();
    for (rel, path) in entries {
        hasher.update(rel.as_bytes());
        hasher.update([0u8]);
        if !path.as_os_str().is_empty() {
            let bytes = std::fs::read(&path).map_err(|e| StateError::io(&path, e))?;
            hasher.update((bytes.len() as u64).to_le_bytes());
            hasher.update(&bytes);
        }
    }
    Ok(hex::encode(hasher.finalize()))
}

pub(crate) fn rel_string(base: &Path, path: &Path) -> String {
    path.strip_prefix(base)
        .unwrap_or(path)
        .components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

/// Validates a sandbox-relative path: no absolute paths, no parent traversal,
/// no empty components.
pub fn check_rel_path(path: &str) -> Result<(), String> {
    if path.is_empty() {
        return Err("empty path".into());
    }
    let bytes = path.as_bytes();
    let drive = bytes.len() >= 2 && bytes[0].is_ascii_alphabetic() && bytes[1] == b':';
    if path.starts_with('/') || path.starts_with('\\') || drive {
        return Err(format!("`{path}` is absolute"));
    }
    if path.contains('\\') {
        return Err(format!("`{path}` contains a backslash"));
    }
    for part in path.split('/') {
        match part {
            "" => return Err(format!("`{path}` has an empty component")),
            "." | ".." => return Err(format!("`{path}` contains `{part}` traversal")),
            _ => {}
        }
    }
    Ok(())
}

pub(crate) fn write_file(root: &Path, rel: &str, bytes: &[u8]) -> Result<(), StateError> {
    let path = root.join(rel);
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| StateError::io(parent, e))?;
    }
    std::fs::write(&path, bytes).map_err(|e| StateError::io(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn app_ids_round_trip_through_strings() {
        for app in AppId::ALL {
            assert_eq!(app.as_str().parse::<AppId>().unwrap(), app);
        }
        assert!("darkroom".parse::<AppId>().is_err());
    }

    #[test]
    fn rel_path_safety() {
        assert!(check_rel_path("vault/Index.md").is_ok());
        assert!(check_rel_path("/etc/x").is_err());
        assert!(check_rel_path("a/../b").is_err());
        assert!(check_rel_path("a//b").is_err());
        assert!(check_rel_path("C:/x").is_err());
        assert!(check_rel_path("").is_err());
    }

    #[test]
    fn byte_offset_maps_lines() {
        let text = "ab\ncd\nef";
        assert_eq!(byte_offset(text, 1, 1), 0);
        assert_eq!(byte_offset(text, 2, 2), 4);
        assert_eq!(byte_offset(text, 3, 1), 6);
    }

    #[test]
    fn action_param_mismatch_is_rejected() {
        let state = AppState::empty(AppId::Vault);
        let action = AppAction::new(AppId::Media, "set_rating");
        assert!(matches!(
            apply_action(&state, &action),
            Err(ActionError::InvalidParams(_))
        ));
    }
}
