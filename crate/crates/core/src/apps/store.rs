//! Plain-text table store: named tables of flat rows persisted as JSON.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::Scalar;

pub type Row = BTreeMap<String, Scalar>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StoreName {
    Library,
    Data,
}

impl StoreName {
    pub const ALL: [StoreName; 2] = [StoreName::Library, StoreName::Data];

    pub fn as_str(self) -> &'static str {
        match self {
            StoreName::Library => "library",
            StoreName::Data => "data",
        }
    }

    pub fn other(self) -> StoreName {
        match self {
            StoreName::Library => StoreName::Data,
            StoreName::Data => StoreName::Library,
        }
    }
}

impl fmt::Display for StoreName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StoreName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "library" => Ok(StoreName::Library),
            "data" => Ok(StoreName::Data),
            other => Err(format!("unknown store `{other}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableStore {
    pub store: StoreName,
    pub schema_version: u32,
    pub tables: BTreeMap<String, Vec<Row>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MissingTable {
    pub store: StoreName,
    pub table: String,
}

impl fmt::Display for MissingTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "no such table: {} (in {} store)", self.table, self.store)
    }
}

impl TableStore {
    pub fn new(store: StoreName, schema_version: u32) -> Self {
        TableStore {
            store,
            schema_version,
            tables: BTreeMap::new(),
        }
    }

    /// Rows of `table`; an absent table is an error, never an empty result.
    pub fn table(&self, table: &str) -> Result<&[Row], MissingTable> {
        self.tables
            .get(table)
            .map(Vec::as_slice)
            .ok_or_else(|| MissingTable {
                store: self.store,
                table: table.to_string(),
            })
    }

    pub fn table_mut(&mut self, table: &str) -> Result<&mut Vec<Row>, MissingTable> {
        let store = self.store;
        self.tables.get_mut(table).ok_or_else(|| MissingTable {
            store,
            table: table.to_string(),
        })
    }

    pub fn has_table(&self, table: &str) -> bool {
        self.tables.contains_key(table)
    }

    /// Checks that rows within each table share one key set.
    pub fn check_uniform_rows(&self) -> Result<(), String> {
        for (name, rows) in &self.tables {
            let Some(first) = rows.first() else { continue };
            let keys: BTreeSet<&String> = first.keys().collect();
            for (i, row) in rows.iter().enumerate().skip(1) {
                if row.keys().collect::<BTreeSet<_>>() != keys {
                    return Err(format!("table `{name}` row {i} has a different key set"));
                }
            }
        }
        Ok(())
    }

    pub fn to_canonical_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("store serializes");
        s.push('\n');
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_table_is_an_error() {
        let store = TableStore::new(StoreName::Library, 2);
        let err = store.table("tags").unwrap_err();
        assert_eq!(err.to_string(), "no such table: tags (in library store)");
    }

    #[test]
    fn uneven_rows_detected() {
        let mut store = TableStore::new(StoreName::Data, 2);
        let mut a = Row::new();
        a.insert("id".into(), Scalar::from(1));
        let mut b = a.clone();
        b.insert("name".into(), Scalar::from("x"));
        store.tables.insert("tags".into(), vec![a, b]);
        assert!(store.check_uniform_rows().is_err());
    }
}
