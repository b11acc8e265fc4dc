use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::schema::{ConceptKind, ConceptSchema};
use crate::error::{Error, Result};
use crate::nn::Matrix;

pub const LABEL_COLUMN: &str = "label";
pub const IDENTITY_COLUMN: &str = "identity";
pub const SPLIT_COLUMN: &str = "split";
pub const INSTANCE_ID_COLUMN: &str = "instance_id";
pub const TRUE_PREFIX: &str = "true.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "val" | "valid" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}`")),
        }
    }
}

/// Deterministic 60/20/20 train/val/test assignment from a seeded shuffle.
pub fn assign_splits(n: usize, seed: u64) -> Vec<Split> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = n * 3 / 5;
    let n_val = n / 5;
    let mut split = vec![Split::Test; n];
    for (pos, &row) in order.iter().enumerate() {
        split[row] = if pos < n_train {
            Split::Train
        } else if pos < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }
    split
}

/// Concept values, labels and the optional columns backing the oracles.
///
/// Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptDataset {
    schema: ConceptSchema,
    concepts: Matrix,
    labels: Vec<usize>,
    true_concepts: Option<Matrix>,
    identity: Option<Vec<String>>,
    split: Vec<Split>,
    instance_ids: Option<Vec<String>>,
}

/// Builder-style inputs for [`ConceptDataset::new`].
#[derive(Debug, Clone)]
pub struct DatasetParts {
    pub schema: ConceptSchema,
    pub concepts: Matrix,
    pub labels: Vec<usize>,
    pub true_concepts: Option<Matrix>,
    pub identity: Option<Vec<String>>,
    /// `None` assigns a seeded 60/20/20 split.
    pub split: Option<Vec<Split>>,
    pub instance_ids: Option<Vec<String>>,
}

impl DatasetParts {
    pub fn new(schema: ConceptSchema, concepts: Matrix, labels: Vec<usize>) -> Self {
        Self {
            schema,
            concepts,
            labels,
            true_concepts: None,
            identity: None,
            split: None,
            instance_ids: None,
        }
    }
}

impl ConceptDataset {
    /// Validates and assembles a dataset. `split_seed` is used only when
    /// `parts.split` is `None`.
    pub fn new(parts: DatasetParts, split_seed: u64) -> Result<Self> {
        let DatasetParts {
            schema,
            concepts,
            labels,
            true_concepts,
            identity,
            split,
            instance_ids,
        } = parts;
        schema.validate()?;
        let n = concepts.rows();
        let d = schema.total_dims();
        if concepts.cols() != d {
            return Err(Error::Shape(format!(
                "concept matrix has {} columns, schema needs {d}",
                concepts.cols()
            )));
        }
        if labels.len() != n {
            return Err(Error::Shape(format!("{} labels for {n} rows", labels.len())));
        }
        if let Some(row) = labels.iter().position(|&y| y >= schema.num_classes) {
            return Err(Error::InvalidInput(format!(
                "row {row}: label {} out of range for {} classes",
                labels[row], schema.num_classes
            )));
        }
        if let Some(t) = &true_concepts {
            if t.rows() != n || t.cols() != d {
                return Err(Error::Shape(format!(
                    "true concepts are {}x{}, expected {n}x{d}",
                    t.rows(),
                    t.cols()
                )));
            }
            let dim_kind: Vec<ConceptKind> = schema
                .groups
                .iter()
                .flat_map(|g| std::iter::repeat_n(g.kind, g.dims))
                .collect();
            for r in 0..n {
                for (c, &kind) in dim_kind.iter().enumerate() {
                    let v = t.get(r, c);
                    if kind == ConceptKind::Binary && v != 0.0 && v != 1.0 {
                        return Err(Error::InvalidInput(format!(
                            "row {r}: true concept column {c} is binary but holds {v}"
                        )));
                    }
                }
            }
        }
        if let Some(id) = &identity {
            if id.len() != n {
                return Err(Error::Shape(format!("{} identities for {n} rows", id.len())));
            }
        }
        if let Some(ids) = &instance_ids {
            if ids.len() != n {
                return Err(Error::Shape(format!("{} instance ids for {n} rows", ids.len())));
            }
            let mut seen = HashMap::new();
            for (r, id) in ids.iter().enumerate() {
                if let Some(prev) = seen.insert(id.as_str(), r) {
                    return Err(Error::InvalidInput(format!(
                        "instance id `{id}` used by rows {prev} and {r}"
                    )));
                }
            }
        }
        let split = match split {
            Some(s) if s.len() != n => {
                return Err(Error::Shape(format!("{} split entries for {n} rows", s.len())))
            }
            Some(s) => s,
            None => assign_splits(n, split_seed),
        };
        Ok(Self {
            schema,
            concepts,
            labels,
            true_concepts,
            identity,
            split,
            instance_ids,
        })
    }

    pub fn schema(&self) -> &ConceptSchema {
        &self.schema
    }

    pub fn concepts(&self) -> &Matrix {
        &self.concepts
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn true_concepts(&self) -> Option<&Matrix> {
        self.true_concepts.as_ref()
    }

    pub fn identity(&self) -> Option<&[String]> {
        self.identity.as_deref()
    }

    pub fn splits(&self) -> &[Split] {
        &self.split
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        self.concepts.row(r)
    }

    /// Row indices in `split`, ascending.
    pub fn rows_in(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&r| self.split[r] == split).collect()
    }

    /// Row indices in `split`, or all rows for `None`.
    pub fn rows_filtered(&self, split: Option<Split>) -> Vec<usize> {
        match split {
            Some(s) => self.rows_in(s),
            None => (0..self.len()).collect(),
        }
    }

    /// External identifier of a row: the `instance_id` column when present,
    /// else the 0-based row index.
    pub fn instance_id(&self, r: usize) -> String {
        match &self.instance_ids {
            Some(ids) => ids[r].clone(),
            None => r.to_string(),
        }
    }

    pub fn has_instance_ids(&self) -> bool {
        self.instance_ids.is_some()
    }

    /// Resolves an external identifier back to a row.
    pub fn resolve_instance(&self, id: &str) -> Option<usize> {
        match &self.instance_ids {
            Some(ids) => ids.iter().position(|x| x == id),
            None => id.parse::<usize>().ok().filter(|&r| r < self.len()),
        }
    }

    /// Copy with the concept matrix replaced; everything else is kept.
    pub fn with_concepts(&self, concepts: Matrix) -> Result<Self> {
        if concepts.rows() != self.len() || concepts.cols() != self.concepts.cols() {
            return Err(Error::Shape("replacement concept matrix has the wrong shape".into()));
        }
        Ok(Self {
            concepts,
            ..self.clone()
        })
    }

    /// Copy with the labels replaced.
    pub fn with_labels(&self, labels: Vec<usize>) -> Result<Self> {
        let mut parts = self.to_parts();
        parts.labels = labels;
        Self::new(parts, 0)
    }

    pub fn to_parts(&self) -> DatasetParts {
        DatasetParts {
            schema: self.schema.clone(),
            concepts: self.concepts.clone(),
            labels: self.labels.clone(),
            true_concepts: self.true_concepts.clone(),
            identity: self.identity.clone(),
            split: Some(self.split.clone()),
            instance_ids: self.instance_ids.clone(),
        }
    }

    /// Writes the data file (CSV). Floats use the shortest representation
    /// that parses back to the same bits.
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
        let concept_cols = self.schema.concept_columns();
        let mut header: Vec<String> = concept_cols.clone();
        header.push(LABEL_COLUMN.into());
        if self.identity.is_some() {
            header.push(IDENTITY_COLUMN.into());
        }
        if self.true_concepts.is_some() {
            header.extend(concept_cols.iter().map(|c| format!("{TRUE_PREFIX}{c}")));
        }
        header.push(SPLIT_COLUMN.into());
        if self.instance_ids.is_some() {
            header.push(INSTANCE_ID_COLUMN.into());
        }
        w.write_record(&header)?;
        let mut record: Vec<String> = Vec::with_capacity(header.len());
        for r in 0..self.len() {
            record.clear();
            record.extend(self.concepts.row(r).iter().map(|v| v.to_string()));
            record.push(self.labels[r].to_string());
            if let Some(id) = &self.identity {
                record.push(id[r].clone());
            }
            if let Some(t) = &self.true_concepts {
                record.extend(t.row(r).iter().map(|v| v.to_string()));
            }
            record.push(self.split[r].to_string());
            if let Some(ids) = &self.instance_ids {
                record.push(ids[r].clone());
            }
            w.write_record(&record)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    /// Writes `schema_path` (JSON) and `data_path` (CSV).
    pub fn save(&self, schema_path: &Path, data_path: &Path) -> Result<()> {
        self.schema.save(schema_path)?;
        self.save_csv(data_path)
    }
}

fn parse_f64(cell: &str, row: usize, column: &str) -> Result<f64> {
    let v: f64 = cell.trim().parse().map_err(|_| Error::Ingest {
        row,
        column: column.to_string(),
        message: format!("non-numeric value `{cell}`"),
    })?;
    if !v.is_finite() {
        return Err(Error::Ingest {
            row,
            column: column.to_string(),
            message: format!("non-finite value `{cell}`"),
        });
    }
    Ok(v)
}

/// Loads a schema file and a CSV data file.
///
/// Without a `split` column, rows are split 60/20/20 using `split_seed`.
pub fn load_dataset(schema_path: &Path, data_path: &Path, split_seed: u64) -> Result<ConceptDataset> {
    let schema = ConceptSchema::load(schema_path)?;
    let file = std::fs::File::open(data_path).map_err(|e| Error::io(data_path, e))?;
    read_dataset(schema, std::io::BufReader::new(file), split_seed)
}

/// Parses CSV data against an already loaded schema.
pub fn read_dataset<R: std::io::Read>(
    schema: ConceptSchema,
    reader: R,
    split_seed: u64,
) -> Result<ConceptDataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let index: HashMap<&str, usize> = header
        .iter()
        .enumerate()
        .map(|(i, h)| (h.as_str(), i))
        .collect();
    if index.len() != header.len() {
        return Err(Error::Ingest {
            row: 0,
            column: "header".into(),
            message: "duplicate column names".into(),
        });
    }

    let concept_cols = schema.concept_columns();
    let missing = |col: &str| Error::Ingest {
        row: 0,
        column: col.to_string(),
        message: "missing column".into(),
    };
    let concept_idx = concept_cols
        .iter()
        .map(|c| index.get(c.as_str()).copied().ok_or_else(|| missing(c)))
        .collect::<Result<Vec<_>>>()?;
    let label_idx = *index.get(LABEL_COLUMN).ok_or_else(|| missing(LABEL_COLUMN))?;
    let identity_idx = index.get(IDENTITY_COLUMN).copied();
    let split_idx = index.get(SPLIT_COLUMN).copied();
    let instance_idx = index.get(INSTANCE_ID_COLUMN).copied();
    let true_cols: Vec<String> = concept_cols.iter().map(|c| format!("{TRUE_PREFIX}{c}")).collect();
    let true_present: Vec<Option<usize>> =
        true_cols.iter().map(|c| index.get(c.as_str()).copied()).collect();
    let true_idx = if true_present.iter().all(Option::is_none) {
        None
    } else {
        Some(
            true_present
                .iter()
                .zip(&true_cols)
                .map(|(i, c)| i.ok_or_else(|| missing(c)))
                .collect::<Result<Vec<_>>>()?,
        )
    };

    let mut known: Vec<usize> = concept_idx.clone();
    known.push(label_idx);
    known.extend(identity_idx);
    known.extend(split_idx);
    known.extend(instance_idx);
    if let Some(t) = &true_idx {
        known.extend(t);
    }
    if let Some((_, name)) = header.iter().enumerate().find(|(i, _)| !known.contains(i)) {
        return Err(Error::Ingest {
            row: 0,
            column: name.clone(),
            message: "unknown column".into(),
        });
    }

    let d = concept_cols.len();
    let mut concepts = Vec::new();
    let mut truth = Vec::new();
    let mut labels = Vec::new();
    let mut identity = Vec::new();
    let mut split = Vec::new();
    let mut instance_ids = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| Error::Ingest {
            row,
            column: "*".into(),
            message: e.to_string(),
        })?;
        if rec.len() != header.len() {
            return Err(Error::Ingest {
                row,
                column: "*".into(),
                message: format!("{} cells, header has {}", rec.len(), header.len()),
            });
        }
        for (&ci, name) in concept_idx.iter().zip(&concept_cols) {
            concepts.push(parse_f64(&rec[ci], row, name)?);
        }
        let label_cell = rec[label_idx].trim();
        let label: usize = label_cell.parse().map_err(|_| Error::Ingest {
            row,
            column: LABEL_COLUMN.into(),
            message: format!("label `{label_cell}` is not a class index"),
        })?;
        if label >= schema.num_classes {
            return Err(Error::Ingest {
                row,
                column: LABEL_COLUMN.into(),
                message: format!("label {label} out of range for {} classes", schema.num_classes),
            });
        }
        labels.push(label);
        if let Some(t) = &true_idx {
            for (&ci, name) in t.iter().zip(&true_cols) {
                truth.push(parse_f64(&rec[ci], row, name)?);
            }
        }
        if let Some(ii) = identity_idx {
            identity.push(rec[ii].trim().to_string());
        }
        if let Some(si) = split_idx {
            split.push(rec[si].trim().parse::<Split>().map_err(|m| Error::Ingest {
                row,
                column: SPLIT_COLUMN.into(),
                message: m,
            })?);
        }
        if let Some(ii) = instance_idx {
            instance_ids.push(rec[ii].trim().to_string());
        }
    }
    let n = labels.len();
    let parts = DatasetParts {
        concepts: Matrix::from_vec(n, d, concepts)?,
        labels,
        true_concepts: match true_idx {
            Some(_) => Some(Matrix::from_vec(n, d, truth)?),
            None => None,
        },
        identity: identity_idx.map(|_| identity),
        split: split_idx.map(|_| split),
        instance_ids: instance_idx.map(|_| instance_ids),
        schema,
    };
    ConceptDataset::new(parts, split_seed)
}
