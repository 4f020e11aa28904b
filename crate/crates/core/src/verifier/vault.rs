use std::path::Path;

use serde_json::json;

use super::{
    check_binding_path, compare, field, nullable, offset_count, opt, req, Args, EndpointSpec,
    ExecFailure, FieldType as F, Outcome, ParamType as P, Surface, VerifierConfig,
};
use crate::apps::vault::{note_stem, Note, VaultState};
use crate::apps::StateError;

const ROOT: &[&str] = &["file:vault_root"];

pub(crate) const ENDPOINTS: &[EndpointSpec] = &[
    EndpointSpec {
        name: "check-folder-exists",
        params: &[req("path", P::Text)],
        doc: "Passes when the folder exists in the vault.",
        reads: ROOT,
        evidence: &[field("path", F::Text), field("found", F::Bool)],
        surface: Surface::Structure,
        logic: &[],
    },
    EndpointSpec {
        name: "check-note-exists",
        params: &[req("path", P::Text)],
        doc: "Passes when the note (vault-relative path ending in .md) exists.",
        reads: ROOT,
        evidence: &[field("path", F::Text), field("found", F::Bool)],
        surface: Surface::Structure,
        logic: &[],
    },
    EndpointSpec {
        name: "check-note-count",
        params: &[req("count", P::Integer)],
        doc: "Passes when the vault contains exactly `count` notes.",
        reads: ROOT,
        evidence: &[field("count", F::Integer), field("expected", F::Integer)],
        surface: Surface::Structure,
        logic: &["logic:count_offset"],
    },
    EndpointSpec {
        name: "check-note-links-to",
        params: &[req("path", P::Text), req("target", P::Text)],
        doc: "Passes when the note contains a wiki-link to `target`.",
        reads: ROOT,
        evidence: &[
            field("path", F::Text),
            field("found", F::Bool),
            field("links", F::TextList),
        ],
        surface: Surface::Content,
        logic: &[],
    },
    EndpointSpec {
        name: "check-note-has-tag",
        params: &[req("path", P::Text), req("tag", P::Text)],
        doc: "Passes when the note body carries the tag (leading # optional).",
        reads: ROOT,
        evidence: &[
            field("path", F::Text),
            field("found", F::Bool),
            field("tags", F::TextList),
        ],
        surface: Surface::Metadata,
        logic: &[],
    },
    EndpointSpec {
        name: "check-frontmatter-field",
        params: &[
            req("path", P::Text),
            req("key", P::Text),
            req("value", P::Text),
        ],
        doc: "Passes when the note's frontmatter maps `key` to `value`.",
        reads: ROOT,
        evidence: &[
            field("path", F::Text),
            field("found", F::Bool),
            field("key", F::Text),
            nullable("value", F::Text),
            field("expected", F::Text),
        ],
        surface: Surface::Metadata,
        logic: &["logic:comparison"],
    },
    EndpointSpec {
        name: "check-note-contains",
        params: &[req("path", P::Text), req("text", P::Text)],
        doc: "Passes when the note body contains the text.",
        reads: ROOT,
        evidence: &[
            field("path", F::Text),
            field("found", F::Bool),
            field("contains", F::Bool),
        ],
        surface: Surface::Content,
        logic: &[],
    },
    EndpointSpec {
        name: "check-folder-note-count",
        params: &[req("path", P::Text), req("count", P::Integer)],
        doc: "Passes when the folder directly contains exactly `count` notes.",
        reads: ROOT,
        evidence: &[
            field("path", F::Text),
            field("found", F::Bool),
            field("count", F::Integer),
            field("expected", F::Integer),
        ],
        surface: Surface::Structure,
        logic: &["logic:count_offset"],
    },
    EndpointSpec {
        name: "get-note",
        params: &[req("path", P::Text)],
        doc: "Frontmatter, tags, links and body of one note.",
        reads: ROOT,
        evidence: &[
            field("path", F::Text),
            field("frontmatter", F::Object),
            field("tags", F::TextList),
            field("links", F::TextList),
            field("body", F::Text),
        ],
        surface: Surface::Content,
        logic: &[],
    },
    EndpointSpec {
        name: "get-folders",
        params: &[],
        doc: "All folder paths, sorted.",
        reads: ROOT,
        evidence: &[field("folders", F::TextList), field("count", F::Integer)],
        surface: Surface::Structure,
        logic: &[],
    },
    EndpointSpec {
        name: "get-notes",
        params: &[opt("folder", P::Text)],
        doc: "Note paths, optionally limited to those under `folder`.",
        reads: ROOT,
        evidence: &[field("notes", F::TextList), field("count", F::Integer)],
        surface: Surface::Structure,
        logic: &[],
    },
    EndpointSpec {
        name: "get-backlinks",
        params: &[req("name", P::Text)],
        doc: "Paths of notes that link to the note named `name`.",
        reads: ROOT,
        evidence: &[
            field("name", F::Text),
            field("sources", F::TextList),
            field("count", F::Integer),
        ],
        surface: Surface::Content,
        logic: &[],
    },
];

fn load(cfg: &VerifierConfig, root: &Path) -> Result<VaultState, ExecFailure> {
    let resource = ROOT[0];
    let rel = cfg.binding(resource)?;
    check_binding_path(resource, rel)?;
    VaultState::load_dir(&root.join(rel), rel).map_err(|e| match e {
        StateError::MissingState { .. } => ExecFailure::MissingFile {
            resource: resource.into(),
            path: rel.into(),
        },
        StateError::MalformedState { file, message, .. } => ExecFailure::Malformed {
            resource: resource.into(),
            file,
            message,
        },
        StateError::Io { path, source } => ExecFailure::Malformed {
            resource: resource.into(),
            file: path,
            message: source.to_string(),
        },
    })
}

fn direct_children<'a>(v: &'a VaultState, folder: &'a str) -> impl Iterator<Item = &'a String> {
    v.notes.keys().filter(move |p| match p.rsplit_once('/') {
        Some((parent, _)) => parent == folder,
        None => folder.is_empty(),
    })
}

pub(crate) fn execute(
    endpoint: &str,
    cfg: &VerifierConfig,
    args: &Args<'_>,
    root: &Path,
) -> Result<Outcome, ExecFailure> {
    let v = load(cfg, root)?;
    let path = args.text("path");
    let note: Option<&Note> = v.note(path);
    let found = note.is_some();
    match endpoint {
        "check-folder-exists" => {
            let found = v.folders.contains(path);
            Ok(Outcome::check(found, json!({"path": path, "found": found})))
        }
        "check-note-exists" => Ok(Outcome::check(found, json!({"path": path, "found": found}))),
        "check-note-count" => {
            let expected = args.int("count");
            let count = offset_count(cfg, v.notes.len() as i64);
            Ok(Outcome::check(
                count == expected,
                json!({"count": count, "expected": expected}),
            ))
        }
        "check-note-links-to" => {
            let target = args.text("target");
            let links: Vec<&String> = note.map(|n| n.links().iter().collect()).unwrap_or_default();
            Ok(Outcome::check(
                links.iter().any(|l| *l == target),
                json!({"path": path, "found": found, "links": links}),
            ))
        }
        "check-note-has-tag" => {
            let tag = args.text("tag").trim_start_matches('#');
            let tags: Vec<&String> = note.map(|n| n.tags().iter().collect()).unwrap_or_default();
            Ok(Outcome::check(
                tags.iter().any(|t| *t == tag),
                json!({"path": path, "found": found, "tags": tags}),
            ))
        }
        "check-frontmatter-field" => {
            let (key, expected) = (args.text("key"), args.text("value"));
            let value = note.and_then(|n| n.frontmatter().get(key));
            let passed = found && compare(cfg, value.map(String::as_str) == Some(expected));
            Ok(Outcome::check(
                passed,
                json!({"path": path, "found": found, "key": key, "value": value, "expected": expected}),
            ))
        }
        "check-note-contains" => {
            let text = args.text("text");
            let contains = note.is_some_and(|n| n.body().contains(text));
            Ok(Outcome::check(
                contains,
                json!({"path": path, "found": found, "contains": contains}),
            ))
        }
        "check-folder-note-count" => {
            let expected = args.int("count");
            let found = v.folders.contains(path);
            let count = offset_count(cfg, direct_children(&v, path).count() as i64);
            Ok(Outcome::check(
                found && count == expected,
                json!({"path": path, "found": found, "count": count, "expected": expected}),
            ))
        }
        "get-note" => {
            let n = note.ok_or_else(|| ExecFailure::NotFound {
                entity: "note".into(),
                key: path.into(),
            })?;
            Ok(Outcome::query(json!({
                "path": path,
                "frontmatter": n.frontmatter(),
                "tags": n.tags(),
                "links": n.links(),
                "body": n.body(),
            })))
        }
        "get-folders" => Ok(Outcome::query(
            json!({"folders": v.folders, "count": v.folders.len()}),
        )),
        "get-notes" => {
            let notes: Vec<&String> = match args.opt_text("folder") {
                Some(folder) => {
                    if !v.folders.contains(folder) {
                        return Err(ExecFailure::NotFound {
                            entity: "folder".into(),
                            key: folder.into(),
                        });
                    }
                    let prefix = format!("{folder}/");
                    v.notes.keys().filter(|p| p.starts_with(&prefix)).collect()
                }
                None => v.notes.keys().collect(),
            };
            Ok(Outcome::query(
                json!({"count": notes.len(), "notes": notes}),
            ))
        }
        "get-backlinks" => {
            let name = args.text("name");
            let sources: Vec<&String> = v
                .notes
                .iter()
                .filter(|(p, n)| n.links().contains(name) && note_stem(p) != name)
                .map(|(p, _)| p)
                .collect();
            Ok(Outcome::query(
                json!({"name": name, "count": sources.len(), "sources": sources}),
            ))
        }
        other => unreachable!("endpoint {other} is registered but not implemented"),
    }
}
