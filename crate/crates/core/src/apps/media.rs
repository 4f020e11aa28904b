//! Photo library split across two table stores.
//!
//! Schema v1 keeps every table in the library store. Schema v2 moves tag
//! definitions (`tags`) into the data store while image-tag associations
//! (`tagged_images`) stay in the library store.

use std::collections::BTreeSet;
use std::path::Path;

use serde::Serialize;

use super::store::{Row, StoreName, TableStore};
use super::{write_file, ActionError, AppAction, AppId, Scalar, StateError};

pub const LIBRARY_FILE: &str = "library.store";
pub const DATA_FILE: &str = "data.store";
pub const CURRENT_SCHEMA: u32 = 2;

pub const IMAGES: &str = "images";
pub const TAGS: &str = "tags";
pub const TAGGED_IMAGES: &str = "tagged_images";

pub const VERBS: &[&str] = &[
    "import_image",
    "create_tag",
    "attach_tag",
    "detach_tag",
    "set_rating",
];

/// Physical columns of each table.
pub const COLUMNS: &[(&str, &[&str])] = &[
    (IMAGES, &["filename", "id", "rating"]),
    (TAGS, &["id", "name"]),
    (TAGGED_IMAGES, &["imgid", "tagid"]),
];

/// Which store holds `table` under `schema_version`.
pub fn store_for(schema_version: u32, table: &str) -> StoreName {
    match (schema_version, table) {
        (v, TAGS) if v >= 2 => StoreName::Data,
        _ => StoreName::Library,
    }
}

pub fn store_file(store: StoreName) -> &'static str {
    match store {
        StoreName::Library => LIBRARY_FILE,
        StoreName::Data => DATA_FILE,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MediaLibraryState {
    pub schema_version: u32,
    pub library: TableStore,
    pub data: TableStore,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image {
    pub id: i64,
    pub filename: String,
    pub rating: i64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Tag {
    pub id: i64,
    pub name: String,
}

fn int(row: &Row, key: &str) -> i64 {
    row.get(key).and_then(Scalar::as_i64).unwrap_or_default()
}

fn text(row: &Row, key: &str) -> String {
    row.get(key)
        .and_then(Scalar::as_str)
        .unwrap_or_default()
        .to_string()
}

impl MediaLibraryState {
    pub fn empty(schema_version: u32) -> Self {
        let mut library = TableStore::new(StoreName::Library, schema_version);
        let mut data = TableStore::new(StoreName::Data, schema_version);
        for (table, _) in COLUMNS {
            let store = match store_for(schema_version, table) {
                StoreName::Library => &mut library,
                StoreName::Data => &mut data,
            };
            store.tables.insert(table.to_string(), Vec::new());
        }
        MediaLibraryState {
            schema_version,
            library,
            data,
        }
    }

    pub fn store(&self, name: StoreName) -> &TableStore {
        match name {
            StoreName::Library => &self.library,
            StoreName::Data => &self.data,
        }
    }

    fn store_mut(&mut self, name: StoreName) -> &mut TableStore {
        match name {
            StoreName::Library => &mut self.library,
            StoreName::Data => &mut self.data,
        }
    }

    fn rows(&self, table: &str) -> &[Row] {
        self.store(store_for(self.schema_version, table))
            .table(table)
            .unwrap_or_default()
    }

    fn rows_mut(&mut self, table: &str) -> &mut Vec<Row> {
        let store = store_for(self.schema_version, table);
        self.store_mut(store)
            .tables
            .entry(table.to_string())
            .or_default()
    }

    pub fn image_rows(&self) -> &[Row] {
        self.rows(IMAGES)
    }

    pub fn tag_rows(&self) -> &[Row] {
        self.rows(TAGS)
    }

    pub fn tagged_rows(&self) -> &[Row] {
        self.rows(TAGGED_IMAGES)
    }

    pub fn images(&self) -> Vec<Image> {
        self.image_rows()
            .iter()
            .map(|r| Image {
                id: int(r, "id"),
                filename: text(r, "filename"),
                rating: int(r, "rating"),
            })
            .collect()
    }

    pub fn tags(&self) -> Vec<Tag> {
        self.tag_rows()
            .iter()
            .map(|r| Tag {
                id: int(r, "id"),
                name: text(r, "name"),
            })
            .collect()
    }

    pub fn image(&self, filename: &str) -> Option<Image> {
        self.images().into_iter().find(|i| i.filename == filename)
    }

    pub fn tag(&self, name: &str) -> Option<Tag> {
        self.tags().into_iter().find(|t| t.name == name)
    }

    /// Tag names attached to the image, sorted.
    pub fn tags_of(&self, filename: &str) -> BTreeSet<String> {
        let Some(img) = self.image(filename) else {
            return BTreeSet::new();
        };
        let tags = self.tags();
        self.tagged_rows()
            .iter()
            .filter(|r| int(r, "imgid") == img.id)
            .filter_map(|r| {
                let tagid = int(r, "tagid");
                tags.iter().find(|t| t.id == tagid).map(|t| t.name.clone())
            })
            .collect()
    }

    fn next_id(rows: &[Row]) -> i64 {
        rows.iter().map(|r| int(r, "id")).max().unwrap_or(0) + 1
    }

    fn require_image(&self, filename: &str) -> Result<Image, ActionError> {
        self.image(filename)
            .ok_or_else(|| ActionError::DomainViolation(format!("no image `{filename}`")))
    }

    fn require_tag(&self, name: &str) -> Result<Tag, ActionError> {
        self.tag(name)
            .ok_or_else(|| ActionError::DomainViolation(format!("no tag `{name}`")))
    }

    pub fn apply(&self, action: &AppAction) -> Result<MediaLibraryState, ActionError> {
        let mut next = self.clone();
        match action.verb.as_str() {
            "import_image" => {
                action.only(&["filename"])?;
                let filename = action.text("filename")?;
                if filename.trim().is_empty() || filename.contains('/') {
                    return Err(ActionError::InvalidParams(format!(
                        "invalid filename `{filename}`"
                    )));
                }
                if next.image(filename).is_some() {
                    return Err(ActionError::DomainViolation(format!(
                        "image `{filename}` already imported"
                    )));
                }
                let id = Self::next_id(next.image_rows());
                let mut row = Row::new();
                row.insert("id".into(), Scalar::from(id));
                row.insert("filename".into(), Scalar::from(filename));
                row.insert("rating".into(), Scalar::from(0));
                next.rows_mut(IMAGES).push(row);
            }
            "create_tag" => {
                action.only(&["name"])?;
                let name = action.text("name")?;
                if name.trim().is_empty() {
                    return Err(ActionError::InvalidParams("empty tag name".into()));
                }
                if next.tag(name).is_some() {
                    return Err(ActionError::DomainViolation(format!(
                        "tag `{name}` already exists"
                    )));
                }
                let id = Self::next_id(next.tag_rows());
                let mut row = Row::new();
                row.insert("id".into(), Scalar::from(id));
                row.insert("name".into(), Scalar::from(name));
                next.rows_mut(TAGS).push(row);
            }
            "attach_tag" => {
                action.only(&["filename", "tag"])?;
                let img = next.require_image(action.text("filename")?)?;
                let tag = next.require_tag(action.text("tag")?)?;
                let already = next
                    .tagged_rows()
                    .iter()
                    .any(|r| int(r, "imgid") == img.id && int(r, "tagid") == tag.id);
                if !already {
                    let mut row = Row::new();
                    row.insert("imgid".into(), Scalar::from(img.id));
                    row.insert("tagid".into(), Scalar::from(tag.id));
                    next.rows_mut(TAGGED_IMAGES).push(row);
                }
            }
            "detach_tag" => {
                action.only(&["filename", "tag"])?;
                let img = next.require_image(action.text("filename")?)?;
                let tag = next.require_tag(action.text("tag")?)?;
                let rows = next.rows_mut(TAGGED_IMAGES);
                let before = rows.len();
                rows.retain(|r| !(int(r, "imgid") == img.id && int(r, "tagid") == tag.id));
                if rows.len() == before {
                    return Err(ActionError::DomainViolation(format!(
                        "image `{}` does not carry tag `{}`",
                        img.filename, tag.name
                    )));
                }
            }
            "set_rating" => {
                action.only(&["filename", "rating"])?;
                let filename = action.text("filename")?;
                let rating = action.integer("rating")?;
                if !(0..=5).contains(&rating) {
                    return Err(ActionError::DomainViolation(format!(
                        "rating {rating} outside 0-5"
                    )));
                }
                next.require_image(filename)?;
                for row in next.rows_mut(IMAGES) {
                    if row.get("filename").and_then(Scalar::as_str) == Some(filename) {
                        row.insert("rating".into(), Scalar::from(rating));
                    }
                }
            }
            other => {
                return Err(ActionError::UnknownVerb {
                    app: AppId::Media,
                    verb: other.to_string(),
                })
            }
        }
        Ok(next)
    }

    /// Checks every schema invariant; the message names the violation.
    pub fn validate(&self) -> Result<(), String> {
        if !(1..=2).contains(&self.schema_version) {
            return Err(format!(
                "unsupported schema_version {}",
                self.schema_version
            ));
        }
        for store in [&self.library, &self.data] {
            if store.schema_version != self.schema_version {
                return Err(format!(
                    "{} store declares schema_version {} but the library is v{}",
                    store.store, store.schema_version, self.schema_version
                ));
            }
            store.check_uniform_rows()?;
        }
        for (table, columns) in COLUMNS {
            let home = store_for(self.schema_version, table);
            if !self.store(home).has_table(table) {
                return Err(format!("table `{table}` missing from {home} store"));
            }
            if self.store(home.other()).has_table(table) {
                return Err(format!(
                    "table `{table}` must not exist in {} store under schema v{}",
                    home.other(),
                    self.schema_version
                ));
            }
            for row in self.rows(table) {
                let keys: Vec<&str> = row.keys().map(String::as_str).collect();
                if keys != *columns {
                    return Err(format!(
                        "table `{table}` has columns {keys:?}, expected {columns:?}"
                    ));
                }
            }
        }
        let mut ids = BTreeSet::new();
        let mut names = BTreeSet::new();
        for r in self.image_rows() {
            let (Some(id), Some(name), Some(rating)) = (
                r["id"].as_i64(),
                r["filename"].as_str(),
                r["rating"].as_i64(),
            ) else {
                return Err("images row has mistyped columns".into());
            };
            if !(0..=5).contains(&rating) {
                return Err(format!("image `{name}` has rating {rating} outside 0-5"));
            }
            if !ids.insert(id) || !names.insert(name.to_string()) {
                return Err(format!("duplicate image id {id} or filename `{name}`"));
            }
        }
        let image_ids = ids;
        let mut ids = BTreeSet::new();
        let mut names = BTreeSet::new();
        for r in self.tag_rows() {
            let (Some(id), Some(name)) = (r["id"].as_i64(), r["name"].as_str()) else {
                return Err("tags row has mistyped columns".into());
            };
            if !ids.insert(id) || !names.insert(name.to_string()) {
                return Err(format!("duplicate tag id {id} or name `{name}`"));
            }
        }
        let mut pairs = BTreeSet::new();
        for r in self.tagged_rows() {
            let (Some(imgid), Some(tagid)) = (r["imgid"].as_i64(), r["tagid"].as_i64()) else {
                return Err("tagged_images row has mistyped columns".into());
            };
            if !image_ids.contains(&imgid) || !ids.contains(&tagid) {
                return Err(format!("tagged_images row ({imgid}, {tagid}) is dangling"));
            }
            if !pairs.insert((imgid, tagid)) {
                return Err(format!("duplicate tagged_images row ({imgid}, {tagid})"));
            }
        }
        Ok(())
    }

    pub fn persist(&self, sandbox_root: &Path) -> Result<Vec<String>, StateError> {
        write_file(
            sandbox_root,
            LIBRARY_FILE,
            self.library.to_canonical_json().as_bytes(),
        )?;
        write_file(
            sandbox_root,
            DATA_FILE,
            self.data.to_canonical_json().as_bytes(),
        )?;
        Ok(vec![LIBRARY_FILE.to_string(), DATA_FILE.to_string()])
    }

    pub fn load(sandbox_root: &Path) -> Result<MediaLibraryState, StateError> {
        let library = read_store(sandbox_root, LIBRARY_FILE, StoreName::Library)?;
        let data = read_store(sandbox_root, DATA_FILE, StoreName::Data)?;
        let state = MediaLibraryState {
            schema_version: library.schema_version,
            library,
            data,
        };
        state
            .validate()
            .map_err(|message| StateError::MalformedState {
                file: format!("{LIBRARY_FILE}+{DATA_FILE}"),
                offset: 0,
                message,
            })?;
        Ok(state)
    }
}

/// Parses a store file and checks its header names the expected store.
pub fn parse_store(text: &str, file: &str, expected: StoreName) -> Result<TableStore, StateError> {
    let store: TableStore =
        serde_json::from_str(text).map_err(|e| StateError::from_json(file, text, &e))?;
    if store.store != expected {
        return Err(StateError::MalformedState {
            file: file.to_string(),
            offset: 0,
            message: format!(
                "header names store `{}`, expected `{expected}`",
                store.store
            ),
        });
    }
    Ok(store)
}

fn read_store(root: &Path, file: &str, expected: StoreName) -> Result<TableStore, StateError> {
    let path = root.join(file);
    if !path.is_file() {
        return Err(StateError::MissingState {
            app: AppId::Media,
            path: file.to_string(),
        });
    }
    let bytes = std::fs::read(&path).map_err(|e| StateError::io(&path, e))?;
    let text = String::from_utf8(bytes).map_err(|e| StateError::MalformedState {
        file: file.to_string(),
        offset: e.utf8_error().valid_up_to(),
        message: "store is not valid UTF-8".into(),
    })?;
    parse_store(&text, file, expected)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn act(verb: &str) -> AppAction {
        AppAction::new(AppId::Media, verb)
    }

    fn with_image(version: u32) -> MediaLibraryState {
        MediaLibraryState::empty(version)
            .apply(&act("import_image").with("filename", "img_003.png"))
            .unwrap()
    }

    #[test]
    fn set_rating_updates_row() {
        let m = with_image(2)
            .apply(
                &act("set_rating")
                    .with("filename", "img_003.png")
                    .with("rating", 5),
            )
            .unwrap();
        assert_eq!(m.image("img_003.png").unwrap().rating, 5);
    }

    #[test]
    fn rating_out_of_range_is_domain_violation() {
        let err = with_image(2)
            .apply(
                &act("set_rating")
                    .with("filename", "img_003.png")
                    .with("rating", 6),
            )
            .unwrap_err();
        assert!(matches!(err, ActionError::DomainViolation(_)));
    }

    #[test]
    fn tags_land_in_version_specific_store() {
        for (version, home) in [(1, StoreName::Library), (2, StoreName::Data)] {
            let m = with_image(version)
                .apply(&act("create_tag").with("name", "batch_processed"))
                .unwrap()
                .apply(
                    &act("attach_tag")
                        .with("filename", "img_003.png")
                        .with("tag", "batch_processed"),
                )
                .unwrap();
            assert_eq!(m.store(home).table(TAGS).unwrap().len(), 1);
            assert!(!m.store(home.other()).has_table(TAGS));
            assert_eq!(m.library.table(TAGGED_IMAGES).unwrap().len(), 1);
            assert!(m.tags_of("img_003.png").contains("batch_processed"));
            assert!(m.validate().is_ok());
        }
    }

    #[test]
    fn v2_persists_tags_only_in_data_store() {
        let dir = tempfile::tempdir().unwrap();
        let m = with_image(2)
            .apply(&act("create_tag").with("name", "batch_processed"))
            .unwrap();
        let written = m.persist(dir.path()).unwrap();
        assert_eq!(written, vec![LIBRARY_FILE, DATA_FILE]);
        let lib: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join(LIBRARY_FILE)).unwrap())
                .unwrap();
        let data: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join(DATA_FILE)).unwrap())
                .unwrap();
        assert!(lib["tables"].get(TAGS).is_none());
        assert_eq!(data["tables"][TAGS][0]["name"], "batch_processed");
        assert_eq!(MediaLibraryState::load(dir.path()).unwrap(), m);
    }

    #[test]
    fn v1_load_reports_version_and_location() {
        let dir = tempfile::tempdir().unwrap();
        MediaLibraryState::empty(1).persist(dir.path()).unwrap();
        let m = MediaLibraryState::load(dir.path()).unwrap();
        assert_eq!(m.schema_version, 1);
        assert!(m.library.has_table(TAGS));
    }

    #[test]
    fn detach_missing_association_fails() {
        let m = with_image(2)
            .apply(&act("create_tag").with("name", "x"))
            .unwrap();
        let err = m
            .apply(
                &act("detach_tag")
                    .with("filename", "img_003.png")
                    .with("tag", "x"),
            )
            .unwrap_err();
        assert!(matches!(err, ActionError::DomainViolation(_)));
    }

    #[test]
    fn misplaced_table_fails_validation() {
        let mut m = MediaLibraryState::empty(2);
        m.library.tables.insert(TAGS.into(), Vec::new());
        assert!(m.validate().unwrap_err().contains("must not exist"));
    }
}
