use std::collections::HashSet;
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const SCHEMA_FORMAT_VERSION: u32 = 1;

/// How the values of a concept group should be read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConceptKind {
    /// Hard 0/1 values.
    Binary,
    /// Real-valued scores from an upstream concept predictor.
    Logit,
    Continuous,
}

/// A named concept spanning `dims` consecutive input columns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptGroup {
    pub name: String,
    pub dims: usize,
    pub kind: ConceptKind,
}

impl ConceptGroup {
    pub fn new(name: impl Into<String>, dims: usize, kind: ConceptKind) -> Self {
        Self {
            name: name.into(),
            dims,
            kind,
        }
    }
}

/// Ordered concept groups plus the label space.
///
/// The mask length is the number of groups; the concept vector length is the
/// sum of group dimensions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptSchema {
    pub format_version: u32,
    pub groups: Vec<ConceptGroup>,
    pub num_classes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_names: Option<Vec<String>>,
}

impl ConceptSchema {
    pub fn new(
        groups: Vec<ConceptGroup>,
        num_classes: usize,
        class_names: Option<Vec<String>>,
    ) -> Result<Self> {
        let schema = Self {
            format_version: SCHEMA_FORMAT_VERSION,
            groups,
            num_classes,
            class_names,
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != SCHEMA_FORMAT_VERSION {
            return Err(Error::Schema(format!(
                "unsupported format_version {} (expected {SCHEMA_FORMAT_VERSION})",
                self.format_version
            )));
        }
        if self.groups.is_empty() {
            return Err(Error::Schema("no concept groups".into()));
        }
        let mut seen = HashSet::new();
        for g in &self.groups {
            if g.name.is_empty() {
                return Err(Error::Schema("empty group name".into()));
            }
            if g.name.contains(';') {
                return Err(Error::Schema(format!(
                    "group name `{}` may not contain `;`",
                    g.name
                )));
            }
            if !seen.insert(g.name.as_str()) {
                return Err(Error::Schema(format!("duplicate group name `{}`", g.name)));
            }
            if g.dims == 0 {
                return Err(Error::Schema(format!("group `{}` has zero dims", g.name)));
            }
        }
        if self.num_classes < 2 {
            return Err(Error::Schema(format!(
                "num_classes must be at least 2, got {}",
                self.num_classes
            )));
        }
        if let Some(names) = &self.class_names {
            if names.len() != self.num_classes {
                return Err(Error::Schema(format!(
                    "{} class names for {} classes",
                    names.len(),
                    self.num_classes
                )));
            }
        }
        Ok(())
    }

    /// Number of groups, which is also the mask length.
    #[inline]
    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }

    /// Total concept dimensionality.
    pub fn total_dims(&self) -> usize {
        self.groups.iter().map(|g| g.dims).sum()
    }

    /// Width of the augmented model input: concept dims followed by the mask.
    pub fn augmented_dims(&self) -> usize {
        self.total_dims() + self.num_groups()
    }

    /// Column range of group `g` inside a concept vector.
    pub fn group_range(&self, g: usize) -> Range<usize> {
        let start: usize = self.groups[..g].iter().map(|g| g.dims).sum();
        start..start + self.groups[g].dims
    }

    /// Ranges for all groups, in order.
    pub fn group_ranges(&self) -> Vec<Range<usize>> {
        let mut start = 0;
        self.groups
            .iter()
            .map(|g| {
                let r = start..start + g.dims;
                start += g.dims;
                r
            })
            .collect()
    }

    /// Group owning each concept dimension.
    pub fn dim_groups(&self) -> Vec<usize> {
        self.groups
            .iter()
            .enumerate()
            .flat_map(|(i, g)| std::iter::repeat_n(i, g.dims))
            .collect()
    }

    pub fn group_index(&self, name: &str) -> Option<usize> {
        self.groups.iter().position(|g| g.name == name)
    }

    /// Data-file column names for the concept dimensions, `<group>.<j>`.
    pub fn concept_columns(&self) -> Vec<String> {
        self.groups
            .iter()
            .flat_map(|g| (0..g.dims).map(move |j| format!("{}.{j}", g.name)))
            .collect()
    }

    pub fn class_name(&self, class: usize) -> String {
        self.class_names
            .as_ref()
            .and_then(|n| n.get(class).cloned())
            .unwrap_or_else(|| class.to_string())
    }

    /// Hex SHA-256 of the compact JSON encoding.
    pub fn fingerprint(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("schema serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let schema: Self = serde_json::from_str(s)?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}
