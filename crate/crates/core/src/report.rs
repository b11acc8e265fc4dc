//! Accuracy-vs-k tables for selection methods and external selection files.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ConceptDataset, Split};
use crate::error::{Error, Result};
use crate::masking::Mask;
use crate::model::{score, MaskAssignment, OutputModel, Prediction};
use crate::selection::{select, Level, Method, SelectionRequest, SelectionTrace};

/// Method label used for rows that come from a selection file.
pub const EXTERNAL_METHOD: &str = "external";

/// What to tabulate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSpec {
    pub methods: Vec<Method>,
    pub levels: Vec<Level>,
    /// Set sizes; empty means every size reachable by all methods.
    #[serde(default)]
    pub ks: Vec<usize>,
    /// Seeds for random selection. Greedy methods are deterministic and
    /// report zero spread.
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub locked_in: BTreeSet<usize>,
    #[serde(default)]
    pub excluded: BTreeSet<usize>,
    /// Rows that are scored; default is the test split.
    #[serde(default = "default_split")]
    pub split: Split,
}

fn default_split() -> Split {
    Split::Test
}

impl ReportSpec {
    pub fn new(methods: Vec<Method>, levels: Vec<Level>, seeds: Vec<u64>) -> Self {
        Self {
            methods,
            levels,
            ks: Vec::new(),
            seeds,
            locked_in: BTreeSet::new(),
            excluded: BTreeSet::new(),
            split: Split::Test,
        }
    }

    pub fn with_ks(mut self, ks: Vec<usize>) -> Self {
        self.ks = ks;
        self
    }

    pub fn with_constraints(mut self, locked_in: BTreeSet<usize>, excluded: BTreeSet<usize>) -> Self {
        self.locked_in = locked_in;
        self.excluded = excluded;
        self
    }

    fn resolved_ks(&self, n: usize) -> Result<Vec<usize>> {
        let hi = n - self.excluded.len().min(n);
        let mut lo = 0;
        if self.methods.contains(&Method::Backward) {
            lo = lo.max(self.locked_in.len());
        }
        if self.methods.contains(&Method::Random) {
            lo = lo.max(1);
        }
        if self.ks.is_empty() {
            return Ok((lo..=hi).collect());
        }
        let mut ks = self.ks.clone();
        ks.sort_unstable();
        ks.dedup();
        if let Some(k) = ks.iter().find(|&&k| k < lo || k > hi) {
            return Err(Error::Infeasible(format!(
                "k = {k} is outside the reachable sizes {lo}..={hi}"
            )));
        }
        Ok(ks)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    pub level: String,
    pub k: usize,
    pub accuracy: f64,
    /// Standard error of the accuracy across seeds.
    pub stderr: f64,
    pub mean_entropy_nats: f64,
    pub mean_entropy_bits: f64,
    pub rows: usize,
    pub seeds: usize,
}

/// Inputs that identify how a report was produced.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: Option<String>,
    pub seeds: Vec<u64>,
    pub checkpoint_sha256: String,
    pub schema_fingerprint: String,
}

impl Provenance {
    pub fn for_model(model: &OutputModel, seeds: Vec<u64>, config_hash: Option<String>) -> Result<Self> {
        Ok(Self {
            config_hash,
            seeds,
            checkpoint_sha256: model.content_hash()?,
            schema_fingerprint: model.schema_fingerprint.clone(),
        })
    }

    /// Leading `#` comment lines for CSV outputs.
    pub fn csv_comments(&self) -> String {
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        format!(
            "# config_hash={}\n# seeds={}\n# checkpoint_sha256={}\n# schema_fingerprint={}\n",
            self.config_hash.as_deref().unwrap_or(""),
            seeds.join(";"),
            self.checkpoint_sha256,
            self.schema_fingerprint
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub rows: Vec<ReportRow>,
    pub provenance: Provenance,
}

const CSV_HEADER: &str = "method,level,k,accuracy,stderr,mean_entropy_nats,mean_entropy_bits,rows,seeds";

impl AccuracyReport {
    /// CSV with provenance as leading `#` comment lines.
    pub fn to_csv(&self) -> String {
        let mut out = self.provenance.csv_comments();
        out.push_str(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                r.method,
                r.level,
                r.k,
                r.accuracy,
                r.stderr,
                r.mean_entropy_nats,
                r.mean_entropy_bits,
                r.rows,
                r.seeds
            ));
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn row(&self, method: &str, level: &str, k: usize) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.level == level && r.k == k)
    }
}

fn bits(nats: f64) -> f64 {
    nats / std::f64::consts::LN_2
}

/// Mean and sample standard error. Identical values give exactly zero spread.
pub(crate) fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let m = values.len() as f64;
    if values.windows(2).all(|w| w[0] == w[1]) {
        return (values.first().copied().unwrap_or(f64::NAN), 0.0);
    }
    let mean = values.iter().sum::<f64>() / m;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0);
    (mean, (var / m).sqrt())
}

/// Per-row seed for instance-level random selection.
fn row_seed(seed: u64, row: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(row as u64 + 1);
    rng.next_u64()
}

/// Full trace for one (method, seed, row) cell; `row` selects instance level.
fn full_trace(
    model: &OutputModel,
    dataset: &ConceptDataset,
    spec: &ReportSpec,
    method: Method,
    seed: u64,
    row: Option<usize>,
) -> Result<SelectionTrace> {
    let n = model.num_groups();
    let mut req = SelectionRequest::new(method, 0)
        .locked(spec.locked_in.iter().copied())
        .exclude(spec.excluded.iter().copied())
        .seed(seed);
    if let Some(r) = row {
        req = req.instance(r);
        if method == Method::Random {
            req = req.seed(row_seed(seed, r));
        }
    }
    select(model, dataset, &req.full_trace(n))
}

/// Accuracy and mean entropy per (method, level, k) on `spec.split`.
///
/// Dataset-level selection runs once per seed and shares one set across rows;
/// instance-level selection runs per scored row and each row uses its own
/// set.
pub fn accuracy_report(
    model: &OutputModel,
    dataset: &ConceptDataset,
    spec: &ReportSpec,
    config_hash: Option<String>,
) -> Result<AccuracyReport> {
    model.ensure_compatible(dataset.schema())?;
    if spec.seeds.is_empty() {
        return Err(Error::InvalidInput("at least one seed is required".into()));
    }
    let n = model.num_groups();
    let ks = spec.resolved_ks(n)?;
    let rows = dataset.rows_in(spec.split);
    if rows.is_empty() {
        return Err(Error::InvalidInput(format!("dataset has no {} rows", spec.split)));
    }

    let mut out = Vec::new();
    for &level in &spec.levels {
        for &method in &spec.methods {
            let seeds: &[u64] = if method == Method::Random {
                &spec.seeds
            } else {
                &spec.seeds[..1]
            };
            // evals[seed][k index] = (accuracy, mean entropy)
            let evals: Vec<Vec<(f64, f64)>> = seeds
                .iter()
                .map(|&seed| match level {
                    Level::Dataset => {
                        let trace = full_trace(model, dataset, spec, method, seed, None)?;
                        ks.iter()
                            .map(|&k| {
                                let mask = trace.mask_of_size(k, n)?;
                                let preds = model.predict_rows(dataset, &rows, &mask)?;
                                let e = score(dataset.labels(), &rows, &preds)?;
                                Ok((e.accuracy, e.mean_entropy_nats))
                            })
                            .collect::<Result<Vec<_>>>()
                    }
                    Level::Instance => {
                        let traces: Vec<SelectionTrace> = rows
                            .par_iter()
                            .map(|&r| full_trace(model, dataset, spec, method, seed, Some(r)))
                            .collect::<Result<_>>()?;
                        ks.iter()
                            .map(|&k| {
                                let masks = traces
                                    .iter()
                                    .map(|t| t.mask_of_size(k, n))
                                    .collect::<Result<Vec<Mask>>>()?;
                                let items: Vec<(&[f64], &Mask)> =
                                    rows.iter().zip(&masks).map(|(&r, m)| (dataset.row(r), m)).collect();
                                let preds = model.predict_many(&items)?;
                                let e = score(dataset.labels(), &rows, &preds)?;
                                Ok((e.accuracy, e.mean_entropy_nats))
                            })
                            .collect::<Result<Vec<_>>>()
                    }
                })
                .collect::<Result<_>>()?;
            for (ki, &k) in ks.iter().enumerate() {
                let accs: Vec<f64> = evals.iter().map(|e| e[ki].0).collect();
                let ents: Vec<f64> = evals.iter().map(|e| e[ki].1).collect();
                let (accuracy, stderr) = mean_and_stderr(&accs);
                let entropy = ents.iter().sum::<f64>() / ents.len() as f64;
                out.push(ReportRow {
                    method: method.as_str().to_string(),
                    level: level.as_str().to_string(),
                    k,
                    accuracy,
                    stderr,
                    mean_entropy_nats: entropy,
                    mean_entropy_bits: bits(entropy),
                    rows: rows.len(),
                    seeds: seeds.len(),
                });
            }
        }
    }
    Ok(AccuracyReport {
        rows: out,
        provenance: Provenance::for_model(model, spec.seeds.clone(), config_hash)?,
    })
}

/// One externally supplied selection.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionEntry {
    pub instance_id: String,
    pub selected: Vec<String>,
}

/// Externally supplied per-instance selections: CSV with columns
/// `instance_id` and `selected` (group names joined by `;`).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionFile {
    pub rows: Vec<SelectionEntry>,
}

impl SelectionFile {
    pub fn read<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let col = |name: &str| {
            headers.iter().position(|h| h == name).ok_or_else(|| Error::Ingest {
                row: 0,
                column: name.to_string(),
                message: "missing column".into(),
            })
        };
        let (id_col, sel_col) = (col("instance_id")?, col("selected")?);
        let mut rows = Vec::new();
        for record in rdr.records() {
            let record = record?;
            let selected = record
                .get(sel_col)
                .unwrap_or("")
                .split(';')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(String::from)
                .collect();
            rows.push(SelectionEntry {
                instance_id: record.get(id_col).unwrap_or("").to_string(),
                selected,
            });
        }
        Ok(Self { rows })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(file)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("instance_id,selected\n");
        for e in &self.rows {
            out.push_str(&format!("{},{}\n", e.instance_id, e.selected.join(";")));
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    /// Resolves every entry to a dataset row and a mask. Errors name the
    /// 1-based file row that failed.
    pub fn resolve(&self, dataset: &ConceptDataset) -> Result<Vec<(usize, Mask)>> {
        let schema = dataset.schema();
        self.rows
            .iter()
            .enumerate()
            .map(|(i, e)| {
                let row = dataset.resolve_instance(&e.instance_id).ok_or_else(|| Error::Ingest {
                    row: i + 1,
                    column: "instance_id".into(),
                    message: format!("unknown instance `{}`", e.instance_id),
                })?;
                let mut bits = vec![false; schema.num_groups()];
                for name in &e.selected {
                    let g = schema.group_index(name).ok_or_else(|| Error::Ingest {
                        row: i + 1,
                        column: "selected".into(),
                        message: format!("unknown concept group `{name}`"),
                    })?;
                    bits[g] = true;
                }
                Ok((row, Mask::new(bits)))
            })
            .collect()
    }
}

/// Evaluates external selections with each row's own mask, one report row
/// per selected-set size. Every file row counts regardless of split.
pub fn evaluate_selection_file(
    model: &OutputModel,
    dataset: &ConceptDataset,
    file: &SelectionFile,
    config_hash: Option<String>,
) -> Result<AccuracyReport> {
    model.ensure_compatible(dataset.schema())?;
    let pairs = file.resolve(dataset)?;
    if pairs.is_empty() {
        return Err(Error::InvalidInput("selection file has no rows".into()));
    }
    let mut by_k: BTreeMap<usize, Vec<(usize, Mask)>> = BTreeMap::new();
    for (r, m) in pairs {
        by_k.entry(m.popcount()).or_default().push((r, m));
    }
    let mut out = Vec::new();
    for (k, pairs) in by_k {
        let e = model.evaluate(dataset, &MaskAssignment::PerRow(pairs), None)?;
        out.push(ReportRow {
            method: EXTERNAL_METHOD.into(),
            level: Level::Instance.as_str().into(),
            k,
            accuracy: e.accuracy,
            stderr: 0.0,
            mean_entropy_nats: e.mean_entropy_nats,
            mean_entropy_bits: bits(e.mean_entropy_nats),
            rows: e.rows,
            seeds: 1,
        });
    }
    Ok(AccuracyReport {
        rows: out,
        provenance: Provenance::for_model(model, Vec::new(), config_hash)?,
    })
}

/// Predictions for every entry of a resolved selection file, in file order.
pub fn predict_selection_file(
    model: &OutputModel,
    dataset: &ConceptDataset,
    file: &SelectionFile,
) -> Result<Vec<Prediction>> {
    let pairs = file.resolve(dataset)?;
    let items: Vec<(&[f64], &Mask)> = pairs.iter().map(|(r, m)| (dataset.row(*r), m)).collect();
    model.predict_many(&items)
}
