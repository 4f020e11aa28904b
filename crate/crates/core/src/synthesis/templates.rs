//! Shipped goal templates, one JSON document per template.

use super::GoalTemplate;

macro_rules! sources {
    ($($app:literal / $name:literal),* $(,)?) => {
        &[$((concat!($app, "/", $name), include_str!(concat!("../../templates/", $app, "/", $name, ".json")))),*]
    };
}

const SOURCES: &[(&str, &str)] = sources![
    "media" / "import_batch",
    "media" / "rate_imported",
    "media" / "tag_pair",
    "media" / "tag_and_rate",
    "media" / "batch_rate_and_tag",
    "media" / "retag_collection",
    "vault" / "create_folders",
    "vault" / "recipe_note",
    "vault" / "index_links",
    "vault" / "tag_notes",
    "vault" / "recipe_collection",
    "vault" / "archive_note",
    "workbook" / "enter_values",
    "workbook" / "total_formula",
    "workbook" / "bold_header",
    "workbook" / "summary_sheet",
    "workbook" / "commissions",
    "workbook" / "quarterly_report",
];

/// `(app/name, json)` for every shipped template.
pub fn template_sources() -> &'static [(&'static str, &'static str)] {
    SOURCES
}

pub fn shipped_templates() -> Vec<GoalTemplate> {
    SOURCES
        .iter()
        .map(|(name, text)| {
            GoalTemplate::from_json(text).unwrap_or_else(|e| panic!("template {name}: {e}"))
        })
        .collect()
}
