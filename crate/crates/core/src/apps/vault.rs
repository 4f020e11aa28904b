//! Markdown note vault: folders, notes with optional frontmatter, and
//! tags/wiki-links derived from note bodies.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::Serialize;

use super::{check_rel_path, rel_string, write_file, ActionError, AppAction, AppId, StateError};

pub const ROOT_DIR: &str = "vault";
pub const MARKER: &str = ".vault";

pub const VERBS: &[&str] = &[
    "create_folder",
    "create_note",
    "set_frontmatter",
    "append_body",
    "delete_note",
];

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct VaultState {
    /// Folder paths relative to the vault root, `/`-separated.
    pub folders: BTreeSet<String>,
    /// Notes keyed by vault-relative path ending in `.md`.
    pub notes: BTreeMap<String, Note>,
}

/// A note. Tags and links are derived from the body and cannot be set directly.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Note {
    frontmatter: BTreeMap<String, String>,
    body: String,
    tags: BTreeSet<String>,
    links: BTreeSet<String>,
}

impl Note {
    pub fn new(frontmatter: BTreeMap<String, String>, body: String) -> Self {
        let tags = extract_tags(&body);
        let links = extract_links(&body);
        Note {
            frontmatter,
            body,
            tags,
            links,
        }
    }

    pub fn frontmatter(&self) -> &BTreeMap<String, String> {
        &self.frontmatter
    }

    pub fn body(&self) -> &str {
        &self.body
    }

    pub fn tags(&self) -> &BTreeSet<String> {
        &self.tags
    }

    pub fn links(&self) -> &BTreeSet<String> {
        &self.links
    }

    /// Serialized file contents.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let body_looks_fenced = self.body == "---" || self.body.starts_with("---\n");
        if !self.frontmatter.is_empty() || body_looks_fenced {
            out.push_str("---\n");
            for (k, v) in &self.frontmatter {
                out.push_str(k);
                out.push_str(": ");
                out.push_str(v);
                out.push('\n');
            }
            out.push_str("---\n");
        }
        out.push_str(&self.body);
        out
    }
}

fn is_tag_char(c: char) -> bool {
    c.is_alphanumeric() || matches!(c, '_' | '-' | '/')
}

/// Whitespace-delimited `#token` occurrences. A bare `#` (markdown heading)
/// and purely numeric tokens are not tags.
pub fn extract_tags(body: &str) -> BTreeSet<String> {
    body.split_whitespace()
        .filter_map(|word| word.strip_prefix('#'))
        .filter_map(|rest| {
            let end = rest
                .char_indices()
                .find(|(_, c)| !is_tag_char(*c))
                .map(|(i, _)| i)
                .unwrap_or(rest.len());
            let tag = &rest[..end];
            if tag.is_empty() || tag.chars().all(|c| c.is_ascii_digit()) {
                None
            } else {
                Some(tag.to_string())
            }
        })
        .collect()
}

/// Targets of `[[Target]]`, `[[Target|alias]]` and `[[Target#Heading]]`.
pub fn extract_links(body: &str) -> BTreeSet<String> {
    let mut links = BTreeSet::new();
    let mut rest = body;
    while let Some(start) = rest.find("[[") {
        let after = &rest[start + 2..];
        let Some(end) = after.find("]]") else { break };
        let inner = &after[..end];
        let target = inner.split(['|', '#']).next().unwrap_or_default().trim();
        if !target.is_empty() && !target.contains('\n') {
            links.insert(target.to_string());
        }
        rest = &after[end + 2..];
    }
    links
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoteParseError {
    pub offset: usize,
    pub message: String,
}

/// Splits a note file into frontmatter entries and body.
pub fn parse_note(text: &str) -> Result<(BTreeMap<String, String>, String), NoteParseError> {
    let mut frontmatter = BTreeMap::new();
    let Some(after_open) = text.strip_prefix("---\n") else {
        return Ok((frontmatter, text.to_string()));
    };
    let mut offset = 4;
    let mut rest = after_open;
    loop {
        if rest.is_empty() {
            return Err(NoteParseError {
                offset,
                message: "frontmatter block is not closed by `---`".into(),
            });
        }
        let (line, next) = match rest.find('\n') {
            Some(i) => (&rest[..i], &rest[i + 1..]),
            None => (rest, ""),
        };
        if line == "---" {
            return Ok((frontmatter, next.to_string()));
        }
        if !line.trim().is_empty() {
            let Some((key, value)) = line.split_once(':') else {
                return Err(NoteParseError {
                    offset,
                    message: format!("frontmatter line `{line}` is not `key: value`"),
                });
            };
            let key = key.trim();
            if key.is_empty() {
                return Err(NoteParseError {
                    offset,
                    message: "empty frontmatter key".into(),
                });
            }
            if frontmatter
                .insert(key.to_string(), value.trim().to_string())
                .is_some()
            {
                return Err(NoteParseError {
                    offset,
                    message: format!("duplicate frontmatter key `{key}`"),
                });
            }
        }
        offset += line.len() + 1;
        rest = next;
    }
}

fn check_folder_path(path: &str) -> Result<(), ActionError> {
    check_rel_path(path).map_err(ActionError::InvalidParams)?;
    if path.ends_with(".md") {
        return Err(ActionError::InvalidParams(format!(
            "folder `{path}` must not end in .md"
        )));
    }
    if path.split('/').any(|p| p.starts_with('.')) {
        return Err(ActionError::InvalidParams(format!(
            "folder `{path}` has a hidden component"
        )));
    }
    Ok(())
}

fn check_note_path(path: &str) -> Result<(), ActionError> {
    check_rel_path(path).map_err(ActionError::InvalidParams)?;
    if !path.ends_with(".md") || path.len() <= 3 || path.ends_with("/.md") {
        return Err(ActionError::InvalidParams(format!(
            "note path `{path}` must name a .md file"
        )));
    }
    if path.split('/').any(|p| p.starts_with('.')) {
        return Err(ActionError::InvalidParams(format!(
            "note `{path}` has a hidden component"
        )));
    }
    Ok(())
}

fn parent_folder(path: &str) -> Option<&str> {
    path.rsplit_once('/').map(|(parent, _)| parent)
}

impl VaultState {
    pub fn note(&self, path: &str) -> Option<&Note> {
        self.notes.get(path)
    }

    /// Notes whose file stem equals `name`, in path order.
    pub fn notes_named<'a>(
        &'a self,
        name: &'a str,
    ) -> impl Iterator<Item = (&'a String, &'a Note)> {
        self.notes
            .iter()
            .filter(move |(path, _)| note_stem(path) == name)
    }

    pub fn apply(&self, action: &AppAction) -> Result<VaultState, ActionError> {
        let mut next = self.clone();
        match action.verb.as_str() {
            "create_folder" => {
                action.only(&["path"])?;
                let path = action.text("path")?;
                check_folder_path(path)?;
                if next.folders.contains(path) {
                    return Err(ActionError::DomainViolation(format!(
                        "folder `{path}` already exists"
                    )));
                }
                // Parents are created implicitly, like `mkdir -p`.
                let mut prefix = String::new();
                for part in path.split('/') {
                    if !prefix.is_empty() {
                        prefix.push('/');
                    }
                    prefix.push_str(part);
                    next.folders.insert(prefix.clone());
                }
            }
            "create_note" => {
                action.only(&["path", "body"])?;
                let path = action.text("path")?;
                check_note_path(path)?;
                if let Some(parent) = parent_folder(path) {
                    if !next.folders.contains(parent) {
                        return Err(ActionError::DomainViolation(format!(
                            "folder `{parent}` does not exist"
                        )));
                    }
                }
                if next.notes.contains_key(path) {
                    return Err(ActionError::DomainViolation(format!(
                        "note `{path}` already exists"
                    )));
                }
                let body = action.opt_text("body")?.unwrap_or_default().to_string();
                next.notes
                    .insert(path.to_string(), Note::new(BTreeMap::new(), body));
            }
            "set_frontmatter" => {
                action.only(&["path", "key", "value"])?;
                let path = action.text("path")?;
                let key = action.text("key")?.trim();
                let value = action.text("value")?;
                if key.is_empty() || key.contains(':') || key.contains('\n') || key == "---" {
                    return Err(ActionError::InvalidParams(format!(
                        "invalid frontmatter key `{key}`"
                    )));
                }
                if value.contains('\n') {
                    return Err(ActionError::InvalidParams(
                        "frontmatter values must be single-line".into(),
                    ));
                }
                let note = next.notes.get_mut(path).ok_or_else(|| {
                    ActionError::DomainViolation(format!("note `{path}` does not exist"))
                })?;
                let mut fm = note.frontmatter.clone();
                fm.insert(key.to_string(), value.trim().to_string());
                *note = Note::new(fm, note.body.clone());
            }
            "append_body" => {
                action.only(&["path", "text"])?;
                let path = action.text("path")?;
                let text = action.text("text")?;
                let note = next.notes.get_mut(path).ok_or_else(|| {
                    ActionError::DomainViolation(format!("note `{path}` does not exist"))
                })?;
                let body = format!("{}{}", note.body, text);
                *note = Note::new(note.frontmatter.clone(), body);
            }
            "delete_note" => {
                action.only(&["path"])?;
                let path = action.text("path")?;
                if next.notes.remove(path).is_none() {
                    return Err(ActionError::DomainViolation(format!(
                        "note `{path}` does not exist"
                    )));
                }
            }
            other => {
                return Err(ActionError::UnknownVerb {
                    app: AppId::Vault,
                    verb: other.to_string(),
                })
            }
        }
        Ok(next)
    }

    pub fn persist(&self, sandbox_root: &Path) -> Result<Vec<String>, StateError> {
        let root = sandbox_root.join(ROOT_DIR);
        if root.exists() {
            std::fs::remove_dir_all(&root).map_err(|e| StateError::io(&root, e))?;
        }
        std::fs::create_dir_all(&root).map_err(|e| StateError::io(&root, e))?;
        let mut written = Vec::new();
        let marker = format!("{ROOT_DIR}/{MARKER}");
        write_file(sandbox_root, &marker, b"")?;
        written.push(marker);
        for folder in &self.folders {
            let dir = root.join(folder);
            std::fs::create_dir_all(&dir).map_err(|e| StateError::io(&dir, e))?;
            written.push(format!("{ROOT_DIR}/{folder}/"));
        }
        for (path, note) in &self.notes {
            let rel = format!("{ROOT_DIR}/{path}");
            write_file(sandbox_root, &rel, note.render().as_bytes())?;
            written.push(rel);
        }
        Ok(written)
    }

    pub fn load(sandbox_root: &Path) -> Result<VaultState, StateError> {
        let root = sandbox_root.join(ROOT_DIR);
        Self::load_dir(&root, ROOT_DIR)
    }

    /// Loads a vault rooted at `root`; `label` prefixes file names in errors.
    pub fn load_dir(root: &Path, label: &str) -> Result<VaultState, StateError> {
        if !root.is_dir() {
            return Err(StateError::MissingState {
                app: AppId::Vault,
                path: label.to_string(),
            });
        }
        let mut state = VaultState::default();
        let walker = walkdir::WalkDir::new(root)
            .min_depth(1)
            .sort_by_file_name()
            .into_iter()
            .filter_entry(|e| !e.file_name().to_string_lossy().starts_with('.'));
        for entry in walker {
            let entry = entry.map_err(|e| StateError::Io {
                path: root.display().to_string(),
                source: e.into(),
            })?;
            let rel = rel_string(root, entry.path());
            if entry.file_type().is_dir() {
                state.folders.insert(rel);
            } else if entry.file_type().is_file() && rel.ends_with(".md") {
                let bytes =
                    std::fs::read(entry.path()).map_err(|e| StateError::io(entry.path(), e))?;
                let file = format!("{label}/{rel}");
                let text = String::from_utf8(bytes).map_err(|e| StateError::MalformedState {
                    file: file.clone(),
                    offset: e.utf8_error().valid_up_to(),
                    message: "note is not valid UTF-8".into(),
                })?;
                let (fm, body) = parse_note(&text).map_err(|e| StateError::MalformedState {
                    file,
                    offset: e.offset,
                    message: e.message,
                })?;
                state.notes.insert(rel, Note::new(fm, body));
            }
        }
        Ok(state)
    }
}

/// File stem of a note path: `Italian/Carbonara.md` → `Carbonara`.
pub fn note_stem(path: &str) -> &str {
    let file = path.rsplit('/').next().unwrap_or(path);
    file.strip_suffix(".md").unwrap_or(file)
}
