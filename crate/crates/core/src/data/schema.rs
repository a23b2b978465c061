use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Numeric,
    Categorical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnRole {
    PrimaryKey,
    ForeignKey,
    #[default]
    Attribute,
    Outcome,
    /// Present in the data but excluded from fitted models.
    Omitted,
}

/// One non-key column of a table.
///
/// Key columns are declared on the [`TableSpec`] itself, so `role` is
/// either `attribute` or `outcome` here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
    #[serde(default)]
    pub role: ColumnRole,
    /// Known categories. Resolved at load time for categorical columns.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub categories: Option<Vec<String>>,
}

impl ColumnSpec {
    pub fn numeric(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: ColumnKind::Numeric,
            role: ColumnRole::Attribute,
            categories: None,
        }
    }

    pub fn categorical(name: impl Into<String>, categories: Vec<String>) -> Self {
        Self {
            name: name.into(),
            kind: ColumnKind::Categorical,
            role: ColumnRole::Attribute,
            categories: Some(categories),
        }
    }

    pub fn with_role(mut self, role: ColumnRole) -> Self {
        self.role = role;
        self
    }

    pub fn is_numeric(&self) -> bool {
        self.kind == ColumnKind::Numeric
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableSpec {
    pub name: String,
    pub primary_key: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub foreign_key: Option<String>,
    pub columns: Vec<ColumnSpec>,
}

impl TableSpec {
    pub fn column(&self, name: &str) -> Option<&ColumnSpec> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    fn validate(&self, is_child: bool) -> Result<()> {
        if self.name.is_empty() {
            return Err(Error::Schema("table name is empty".into()));
        }
        match (&self.foreign_key, is_child) {
            (None, true) => {
                return Err(Error::Schema(format!(
                    "child table `{}` needs a foreign_key",
                    self.name
                )))
            }
            (Some(_), false) => {
                return Err(Error::Schema(format!(
                    "parent table `{}` cannot declare a foreign_key",
                    self.name
                )))
            }
            _ => {}
        }
        let mut seen = BTreeSet::new();
        seen.insert(self.primary_key.as_str());
        if let Some(fk) = &self.foreign_key {
            if fk == &self.primary_key {
                return Err(Error::Schema(format!(
                    "table `{}`: foreign key equals primary key",
                    self.name
                )));
            }
            seen.insert(fk.as_str());
        }
        for col in &self.columns {
            if matches!(col.role, ColumnRole::PrimaryKey | ColumnRole::ForeignKey) {
                return Err(Error::Schema(format!(
                    "table `{}`: keys are declared via primary_key/foreign_key, not as column `{}`",
                    self.name, col.name
                )));
            }
            if !seen.insert(col.name.as_str()) {
                return Err(Error::Schema(format!(
                    "table `{}`: duplicate column `{}`",
                    self.name, col.name
                )));
            }
            if let Some(cats) = &col.categories {
                if col.kind == ColumnKind::Numeric {
                    return Err(Error::Schema(format!(
                        "numeric column `{}` cannot list categories",
                        col.name
                    )));
                }
                let distinct: BTreeSet<_> = cats.iter().collect();
                if distinct.len() != cats.len() {
                    return Err(Error::Schema(format!(
                        "column `{}` lists a category twice",
                        col.name
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Two-level parent/child schema linked by `child.foreign_key -> parent.primary_key`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultilevelSchema {
    pub parent: TableSpec,
    pub child: TableSpec,
}

impl MultilevelSchema {
    pub fn new(parent: TableSpec, child: TableSpec) -> Result<Self> {
        let schema = Self { parent, child };
        schema.validate()?;
        Ok(schema)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let schema: Self = serde_json::from_str(text)?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("schema serializes")
    }

    pub fn foreign_key(&self) -> &str {
        self.child
            .foreign_key
            .as_deref()
            .expect("validated child table has a foreign key")
    }

    pub fn validate(&self) -> Result<()> {
        self.parent.validate(false)?;
        self.child.validate(true)?;
        // Names must stay unique once parent attributes are joined onto children.
        let mut names = BTreeSet::new();
        names.insert(self.child.primary_key.as_str());
        names.insert(self.foreign_key());
        for col in self.child.columns.iter().chain(&self.parent.columns) {
            if !names.insert(col.name.as_str()) {
                return Err(Error::Schema(format!(
                    "column `{}` collides after joining `{}` onto `{}`",
                    col.name, self.parent.name, self.child.name
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SCHEMA: &str = r#"{
        "parent": {"name": "school", "primary_key": "SCH_ID",
                   "columns": [{"name": "SCH_LOCALE", "kind": "categorical"},
                               {"name": "SCH_CLIMATE", "kind": "numeric"}]},
        "child": {"name": "student", "primary_key": "STU_ID", "foreign_key": "SCH_ID",
                  "columns": [{"name": "STU_SES", "kind": "numeric"},
                              {"name": "STU_GPA", "kind": "numeric", "role": "outcome"}]}
    }"#;

    #[test]
    fn parses_schema_document() {
        let schema = MultilevelSchema::from_json(SCHEMA).unwrap();
        assert_eq!(schema.foreign_key(), "SCH_ID");
        assert_eq!(schema.child.columns[1].role, ColumnRole::Outcome);
        assert_eq!(schema.parent.columns[0].kind, ColumnKind::Categorical);
        let again = MultilevelSchema::from_json(&schema.to_json()).unwrap();
        assert_eq!(again, schema);
    }

    #[test]
    fn rejects_collision_after_join() {
        let text = SCHEMA.replace("STU_SES", "SCH_CLIMATE");
        assert!(matches!(
            MultilevelSchema::from_json(&text),
            Err(Error::Schema(_))
        ));
    }

    #[test]
    fn child_requires_foreign_key() {
        let text = SCHEMA.replace(r#", "foreign_key": "SCH_ID""#, "");
        assert!(MultilevelSchema::from_json(&text).is_err());
    }
}
