use std::cell::OnceCell;
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde_json::json;

use super::{
    check_binding_path, compare, field, nullable, offset_count, opt, req, Args, EndpointSpec,
    ExecFailure, FieldType as F, JoinSpec, Outcome, ParamType as P, Surface, VerifierConfig,
};
use crate::apps::store::{Row, StoreName, TableStore};
use crate::apps::Scalar;

const FILES: [&str; 2] = ["file:library_store", "file:data_store"];

/// Bindings matching the given schema layout.
pub(crate) fn bindings_for_schema(version: u32) -> BTreeMap<String, String> {
    let tags_store = if version >= 2 { "data" } else { "library" };
    let mut b = BTreeMap::new();
    let mut put = |k: &str, v: &str| {
        b.insert(k.to_string(), v.to_string());
    };
    put("file:library_store", "library.store");
    put("file:data_store", "data.store");
    put("table:images", "library");
    put("table:tags", tags_store);
    put("table:tagged_images", "library");
    put(
        "join:image_tags",
        &format!("tagged_images@library.tagid=tags@{tags_store}.id"),
    );
    for (table, cols) in crate::apps::media::COLUMNS {
        for c in *cols {
            put(&format!("column:{table}.{c}"), c);
        }
    }
    b
}

macro_rules! reads {
    ($($r:expr),* $(,)?) => { &[FILES[0], FILES[1], $($r),*] };
}

const IMAGE_READS: &[&str] = reads!(
    "table:images",
    "column:images.id",
    "column:images.filename",
    "column:images.rating"
);
const TAG_READS: &[&str] = reads!("table:tags", "column:tags.name");
const JOIN_READS: &[&str] = reads!(
    "table:images",
    "column:images.id",
    "column:images.filename",
    "column:images.rating",
    "join:image_tags",
    "column:tagged_images.imgid",
    "column:tagged_images.tagid",
    "column:tags.id",
    "column:tags.name",
);

pub(crate) const ENDPOINTS: &[EndpointSpec] = &[
    EndpointSpec {
        name: "check-image-exists",
        params: &[req("filename", P::Text)],
        doc: "Passes when an image with the filename has been imported.",
        reads: IMAGE_READS,
        evidence: &[field("filename", F::Text), field("found", F::Bool)],
        surface: Surface::Content,
        logic: &[],
    },
    EndpointSpec {
        name: "check-image-count",
        params: &[req("count", P::Integer)],
        doc: "Passes when the library holds exactly `count` images.",
        reads: reads!("table:images"),
        evidence: &[field("count", F::Integer), field("expected", F::Integer)],
        surface: Surface::Content,
        logic: &["logic:count_offset"],
    },
    EndpointSpec {
        name: "check-tag-exists",
        params: &[req("name", P::Text)],
        doc: "Passes when a tag definition with the name exists.",
        reads: TAG_READS,
        evidence: &[field("name", F::Text), field("found", F::Bool)],
        surface: Surface::Metadata,
        logic: &[],
    },
    EndpointSpec {
        name: "check-image-has-tag",
        params: &[req("filename", P::Text), req("tag", P::Text)],
        doc: "Passes when the image is associated with the tag.",
        reads: JOIN_READS,
        evidence: &[
            field("filename", F::Text),
            field("tag", F::Text),
            field("image_found", F::Bool),
            field("tags", F::TextList),
        ],
        surface: Surface::Metadata,
        logic: &[],
    },
    EndpointSpec {
        name: "check-image-rating",
        params: &[req("filename", P::Text), req("rating", P::Integer)],
        doc: "Passes when the image's star rating equals `rating`.",
        reads: IMAGE_READS,
        evidence: &[
            field("filename", F::Text),
            field("image_found", F::Bool),
            nullable("rating", F::Integer),
            field("expected", F::Integer),
        ],
        surface: Surface::Metadata,
        logic: &["logic:comparison"],
    },
    EndpointSpec {
        name: "check-tag-usage-count",
        params: &[req("tag", P::Text), req("count", P::Integer)],
        doc: "Passes when exactly `count` images carry the tag.",
        reads: JOIN_READS,
        evidence: &[
            field("tag", F::Text),
            field("tag_found", F::Bool),
            field("count", F::Integer),
            field("expected", F::Integer),
        ],
        surface: Surface::Metadata,
        logic: &["logic:count_offset"],
    },
    EndpointSpec {
        name: "check-rating-at-least",
        params: &[req("filename", P::Text), req("min", P::Integer)],
        doc: "Passes when the image's rating is at least `min`.",
        reads: IMAGE_READS,
        evidence: &[
            field("filename", F::Text),
            field("image_found", F::Bool),
            nullable("rating", F::Integer),
            field("min", F::Integer),
        ],
        surface: Surface::Metadata,
        logic: &[],
    },
    EndpointSpec {
        name: "check-image-untagged",
        params: &[req("filename", P::Text)],
        doc: "Passes when the image exists and carries no tags.",
        reads: JOIN_READS,
        evidence: &[
            field("filename", F::Text),
            field("image_found", F::Bool),
            field("tags", F::TextList),
        ],
        surface: Surface::Metadata,
        logic: &[],
    },
    EndpointSpec {
        name: "get-image-info",
        params: &[req("filename", P::Text)],
        doc: "Id, rating and tag names of one image.",
        reads: JOIN_READS,
        evidence: &[
            field("filename", F::Text),
            field("id", F::Integer),
            field("rating", F::Integer),
            field("tags", F::TextList),
        ],
        surface: Surface::Metadata,
        logic: &[],
    },
    EndpointSpec {
        name: "get-tags",
        params: &[],
        doc: "All tag names, sorted.",
        reads: TAG_READS,
        evidence: &[field("tags", F::TextList), field("count", F::Integer)],
        surface: Surface::Metadata,
        logic: &[],
    },
    EndpointSpec {
        name: "get-images",
        params: &[opt("min_rating", P::Integer)],
        doc: "Filenames of all images, optionally only those rated at least `min_rating`.",
        reads: IMAGE_READS,
        evidence: &[field("images", F::TextList), field("count", F::Integer)],
        surface: Surface::Content,
        logic: &[],
    },
    EndpointSpec {
        name: "get-tag-images",
        params: &[req("tag", P::Text)],
        doc: "Filenames of the images carrying a tag.",
        reads: JOIN_READS,
        evidence: &[
            field("tag", F::Text),
            field("images", F::TextList),
            field("count", F::Integer),
        ],
        surface: Surface::Metadata,
        logic: &[],
    },
];

struct Image {
    id: Scalar,
    filename: String,
    rating: Option<i64>,
}

struct Reader<'a> {
    cfg: &'a VerifierConfig,
    root: &'a Path,
    library: OnceCell<Result<TableStore, ExecFailure>>,
    data: OnceCell<Result<TableStore, ExecFailure>>,
}

impl<'a> Reader<'a> {
    fn new(cfg: &'a VerifierConfig, root: &'a Path) -> Self {
        Reader {
            cfg,
            root,
            library: OnceCell::new(),
            data: OnceCell::new(),
        }
    }

    fn store(&self, name: StoreName) -> Result<&TableStore, ExecFailure> {
        let cell = match name {
            StoreName::Library => &self.library,
            StoreName::Data => &self.data,
        };
        cell.get_or_init(|| self.load(name))
            .as_ref()
            .map_err(Clone::clone)
    }

    fn load(&self, name: StoreName) -> Result<TableStore, ExecFailure> {
        let resource = match name {
            StoreName::Library => FILES[0],
            StoreName::Data => FILES[1],
        };
        let rel = self.cfg.binding(resource)?;
        check_binding_path(resource, rel)?;
        let path = self.root.join(rel);
        if !path.is_file() {
            return Err(ExecFailure::MissingFile {
                resource: resource.into(),
                path: rel.into(),
            });
        }
        let malformed = |message: String| ExecFailure::Malformed {
            resource: resource.into(),
            file: rel.into(),
            message,
        };
        let text = std::fs::read_to_string(&path).map_err(|e| malformed(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| malformed(e.to_string()))
    }

    fn store_binding(&self, resource: &str) -> Result<StoreName, ExecFailure> {
        let raw = self.cfg.binding(resource)?;
        raw.parse().map_err(|message| ExecFailure::BadBinding {
            resource: resource.into(),
            value: raw.into(),
            message,
        })
    }

    fn table_at(
        &self,
        table: &str,
        store: StoreName,
        resource: &str,
    ) -> Result<&[Row], ExecFailure> {
        self.store(store)?
            .tables
            .get(table)
            .map(Vec::as_slice)
            .ok_or_else(|| ExecFailure::MissingTable {
                resource: resource.into(),
                table: table.into(),
                store,
            })
    }

    fn table(&self, table: &str) -> Result<&[Row], ExecFailure> {
        let resource = format!("table:{table}");
        let store = self.store_binding(&resource)?;
        self.table_at(table, store, &resource)
    }

    fn get<'r>(&self, row: &'r Row, table: &str, logical: &str) -> Result<&'r Scalar, ExecFailure> {
        let resource = format!("column:{table}.{logical}");
        let physical = self.cfg.binding(&resource)?;
        row.get(physical).ok_or_else(|| ExecFailure::MissingColumn {
            resource,
            table: table.into(),
            column: physical.into(),
            found: row.keys().cloned().collect(),
        })
    }

    fn join(&self) -> Result<JoinSpec, ExecFailure> {
        let raw = self.cfg.binding("join:image_tags")?;
        raw.parse().map_err(|message| ExecFailure::BadBinding {
            resource: "join:image_tags".into(),
            value: raw.into(),
            message,
        })
    }

    fn images(&self) -> Result<Vec<Image>, ExecFailure> {
        self.table("images")?
            .iter()
            .map(|row| {
                Ok(Image {
                    id: self.get(row, "images", "id")?.clone(),
                    filename: self
                        .get(row, "images", "filename")?
                        .as_str()
                        .unwrap_or_default()
                        .to_string(),
                    rating: self.get(row, "images", "rating")?.as_i64(),
                })
            })
            .collect()
    }

    fn image(&self, filename: &str) -> Result<Option<Image>, ExecFailure> {
        Ok(self.images()?.into_iter().find(|i| i.filename == filename))
    }

    fn tag_names(&self) -> Result<Vec<String>, ExecFailure> {
        self.table("tags")?
            .iter()
            .map(|row| {
                Ok(self
                    .get(row, "tags", "name")?
                    .as_str()
                    .unwrap_or_default()
                    .to_string())
            })
            .collect()
    }

    /// (image id, tag name) pairs through the configured join path.
    fn associations(&self) -> Result<Vec<(Scalar, String)>, ExecFailure> {
        let join = self.join()?;
        let left = self.table_at(&join.left.table, join.left.store, "join:image_tags")?;
        let right = self.table_at(&join.right.table, join.right.store, "join:image_tags")?;
        let mut out = Vec::new();
        for l in left {
            let key = self.get(l, &join.left.table, &join.left.key)?;
            let img = self.get(l, &join.left.table, "imgid")?;
            for r in right {
                if self
                    .get(r, &join.right.table, &join.right.key)?
                    .canonical_eq(key)
                {
                    let name = self.get(r, &join.right.table, "name")?;
                    out.push((img.clone(), name.as_str().unwrap_or_default().to_string()));
                }
            }
        }
        Ok(out)
    }

    fn tags_of(&self, image: &Image) -> Result<BTreeSet<String>, ExecFailure> {
        Ok(self
            .associations()?
            .into_iter()
            .filter(|(id, _)| id.canonical_eq(&image.id))
            .map(|(_, name)| name)
            .collect())
    }
}

pub(crate) fn execute(
    endpoint: &str,
    cfg: &VerifierConfig,
    args: &Args<'_>,
    root: &Path,
) -> Result<Outcome, ExecFailure> {
    let r = Reader::new(cfg, root);
    match endpoint {
        "check-image-exists" => {
            let filename = args.text("filename");
            let found = r.image(filename)?.is_some();
            Ok(Outcome::check(
                found,
                json!({"filename": filename, "found": found}),
            ))
        }
        "check-image-count" => {
            let expected = args.int("count");
            let count = offset_count(cfg, r.table("images")?.len() as i64);
            Ok(Outcome::check(
                count == expected,
                json!({"count": count, "expected": expected}),
            ))
        }
        "check-tag-exists" => {
            let name = args.text("name");
            let found = r.tag_names()?.iter().any(|n| n == name);
            Ok(Outcome::check(found, json!({"name": name, "found": found})))
        }
        "check-image-has-tag" => {
            let (filename, tag) = (args.text("filename"), args.text("tag"));
            let image = r.image(filename)?;
            let tags = match &image {
                Some(img) => r.tags_of(img)?,
                None => BTreeSet::new(),
            };
            Ok(Outcome::check(
                tags.contains(tag),
                json!({"filename": filename, "tag": tag, "image_found": image.is_some(), "tags": tags}),
            ))
        }
        "check-image-rating" => {
            let filename = args.text("filename");
            let expected = args.int("rating");
            let image = r.image(filename)?;
            let rating = image.as_ref().and_then(|i| i.rating);
            let passed = image.is_some() && compare(cfg, rating == Some(expected));
            Ok(Outcome::check(
                passed,
                json!({"filename": filename, "image_found": image.is_some(), "rating": rating, "expected": expected}),
            ))
        }
        "check-tag-usage-count" => {
            let tag = args.text("tag");
            let expected = args.int("count");
            let tag_found = r.tag_names()?.iter().any(|n| n == tag);
            let used: BTreeSet<String> = r
                .associations()?
                .into_iter()
                .filter(|(_, name)| name == tag)
                .map(|(id, _)| id.to_string())
                .collect();
            let count = offset_count(cfg, used.len() as i64);
            Ok(Outcome::check(
                count == expected,
                json!({"tag": tag, "tag_found": tag_found, "count": count, "expected": expected}),
            ))
        }
        "check-rating-at-least" => {
            let filename = args.text("filename");
            let min = args.int("min");
            let image = r.image(filename)?;
            let rating = image.as_ref().and_then(|i| i.rating);
            Ok(Outcome::check(
                rating.is_some_and(|x| x >= min),
                json!({"filename": filename, "image_found": image.is_some(), "rating": rating, "min": min}),
            ))
        }
        "check-image-untagged" => {
            let filename = args.text("filename");
            let image = r.image(filename)?;
            let tags = match &image {
                Some(img) => r.tags_of(img)?,
                None => BTreeSet::new(),
            };
            Ok(Outcome::check(
                image.is_some() && tags.is_empty(),
                json!({"filename": filename, "image_found": image.is_some(), "tags": tags}),
            ))
        }
        "get-image-info" => {
            let filename = args.text("filename");
            let image = r.image(filename)?.ok_or_else(|| ExecFailure::NotFound {
                entity: "image".into(),
                key: filename.into(),
            })?;
            let tags = r.tags_of(&image)?;
            Ok(Outcome::query(json!({
                "filename": filename,
                "id": image.id.as_i64(),
                "rating": image.rating,
                "tags": tags,
            })))
        }
        "get-tags" => {
            let mut tags = r.tag_names()?;
            tags.sort();
            Ok(Outcome::query(json!({"count": tags.len(), "tags": tags})))
        }
        "get-images" => {
            let min = args.opt_text("min_rating").map(|_| args.int("min_rating"));
            let mut images: Vec<String> = r
                .images()?
                .into_iter()
                .filter(|i| min.is_none_or(|m| i.rating.unwrap_or(0) >= m))
                .map(|i| i.filename)
                .collect();
            images.sort();
            Ok(Outcome::query(
                json!({"count": images.len(), "images": images}),
            ))
        }
        "get-tag-images" => {
            let tag = args.text("tag");
            if !r.tag_names()?.iter().any(|n| n == tag) {
                return Err(ExecFailure::NotFound {
                    entity: "tag".into(),
                    key: tag.into(),
                });
            }
            let ids: Vec<Scalar> = r
                .associations()?
                .into_iter()
                .filter(|(_, name)| name == tag)
                .map(|(id, _)| id)
                .collect();
            let mut images: Vec<String> = r
                .images()?
                .into_iter()
                .filter(|i| ids.iter().any(|id| id.canonical_eq(&i.id)))
                .map(|i| i.filename)
                .collect();
            images.sort();
            Ok(Outcome::query(
                json!({"tag": tag, "count": images.len(), "images": images}),
            ))
        }
        other => unreachable!("endpoint {other} is registered but not implemented"),
    }
}

/// Row keys seen for `column:<table>.<col>`'s table in any store file.
pub(crate) fn observe_columns(resource: &str, root: &Path) -> Vec<String> {
    let Some(table) = resource
        .strip_prefix("column:")
        .and_then(|r| r.split_once('.'))
        .map(|(t, _)| t)
    else {
        return Vec::new();
    };
    let mut keys = BTreeSet::new();
    let Ok(entries) = std::fs::read_dir(root) else {
        return Vec::new();
    };
    let mut files: Vec<_> = entries.filter_map(Result::ok).map(|e| e.path()).collect();
    files.sort();
    for path in files.into_iter().filter(|p| p.is_file()) {
        let Ok(text) = std::fs::read_to_string(&path) else {
            continue;
        };
        let Ok(store) = serde_json::from_str::<TableStore>(&text) else {
            continue;
        };
        for row in store.tables.get(table).into_iter().flatten() {
            keys.extend(row.keys().cloned());
        }
    }
    keys.into_iter().collect()
}
