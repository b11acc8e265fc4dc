//! Ground-truth concept tables used for interventions.
//!
//! Values are in ground-truth space (0/1 for binary concepts, means in
//! `[0, 1]` for the soft oracle); mapping into model input space happens in
//! [`crate::intervention`].

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::dataset::ConceptDataset;
use crate::error::{Error, Result};

/// One true concept vector per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassOracle {
    /// Indexed by class; `None` for classes with no rows in the dataset.
    rows: Vec<Option<Vec<f64>>>,
}

impl ClassOracle {
    pub fn num_classes(&self) -> usize {
        self.rows.len()
    }

    pub fn get(&self, class: usize) -> Option<&[f64]> {
        self.rows.get(class).and_then(|r| r.as_deref())
    }
}

/// Per-identity mean of the true concepts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftOracle {
    table: BTreeMap<String, Vec<f64>>,
}

impl SoftOracle {
    pub fn get(&self, identity: &str) -> Option<&[f64]> {
        self.table.get(identity).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }
}

/// Builds the class-level table. Every row of a class must carry the same
/// true concept vector.
pub fn class_level_oracle(dataset: &ConceptDataset) -> Result<ClassOracle> {
    let truth = dataset
        .true_concepts()
        .ok_or_else(|| Error::Oracle("dataset has no true concept columns".into()))?;
    let mut rows: Vec<Option<Vec<f64>>> = vec![None; dataset.schema().num_classes];
    let mut offending = Vec::new();
    for (r, &y) in dataset.labels().iter().enumerate() {
        let values = truth.row(r);
        match &rows[y] {
            None => rows[y] = Some(values.to_vec()),
            Some(existing) if existing.as_slice() != values => {
                if !offending.contains(&y) {
                    offending.push(y);
                }
            }
            Some(_) => {}
        }
    }
    if !offending.is_empty() {
        offending.sort_unstable();
        let list: Vec<String> = offending.iter().map(ToString::to_string).collect();
        return Err(Error::Oracle(format!(
            "true concepts differ within class {}",
            list.join(", ")
        )));
    }
    Ok(ClassOracle { rows })
}

/// Builds the soft table: arithmetic mean of the true concepts per identity.
pub fn soft_oracle(dataset: &ConceptDataset) -> Result<SoftOracle> {
    let identity = dataset
        .identity()
        .ok_or_else(|| Error::Oracle("dataset has no identity column".into()))?;
    let truth = dataset
        .true_concepts()
        .ok_or_else(|| Error::Oracle("dataset has no true concept columns".into()))?;
    let mut sums: BTreeMap<String, (Vec<f64>, usize)> = BTreeMap::new();
    for (r, id) in identity.iter().enumerate() {
        let entry = sums
            .entry(id.clone())
            .or_insert_with(|| (vec![0.0; truth.cols()], 0));
        for (s, v) in entry.0.iter_mut().zip(truth.row(r)) {
            *s += v;
        }
        entry.1 += 1;
    }
    let table = sums
        .into_iter()
        .map(|(id, (sum, count))| {
            let mean = sum.into_iter().map(|s| s / count as f64).collect();
            (id, mean)
        })
        .collect();
    Ok(SoftOracle { table })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleKind {
    ClassLevel,
    Soft,
}

impl OracleKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OracleKind::ClassLevel => "class_level",
            OracleKind::Soft => "soft",
        }
    }
}

impl std::fmt::Display for OracleKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for OracleKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "class_level" | "class-level" | "class" => Ok(OracleKind::ClassLevel),
            "soft" => Ok(OracleKind::Soft),
            other => Err(format!("unknown oracle `{other}`")),
        }
    }
}

/// Either oracle, looked up by dataset row.
#[derive(Debug, Clone, PartialEq)]
pub enum Oracle {
    ClassLevel(ClassOracle),
    Soft(SoftOracle),
}

impl Oracle {
    pub fn build(kind: OracleKind, dataset: &ConceptDataset) -> Result<Self> {
        Ok(match kind {
            OracleKind::ClassLevel => Oracle::ClassLevel(class_level_oracle(dataset)?),
            OracleKind::Soft => Oracle::Soft(soft_oracle(dataset)?),
        })
    }

    pub fn kind(&self) -> OracleKind {
        match self {
            Oracle::ClassLevel(_) => OracleKind::ClassLevel,
            Oracle::Soft(_) => OracleKind::Soft,
        }
    }

    /// Ground-truth values for `row`: keyed by its label (class-level) or its
    /// identity (soft).
    pub fn values_for_row<'a>(&'a self, dataset: &ConceptDataset, row: usize) -> Result<&'a [f64]> {
        match self {
            Oracle::ClassLevel(o) => {
                let y = dataset.labels()[row];
                o.get(y)
                    .ok_or_else(|| Error::Oracle(format!("no oracle row for class {y}")))
            }
            Oracle::Soft(o) => {
                let id = dataset
                    .identity()
                    .ok_or_else(|| Error::Oracle("dataset has no identity column".into()))?;
                o.get(&id[row])
                    .ok_or_else(|| Error::Oracle(format!("no oracle row for identity `{}`", id[row])))
            }
        }
    }
}
