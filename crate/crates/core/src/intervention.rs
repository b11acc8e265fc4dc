//! Oracle interventions on concept values and the accuracy-vs-interventions
//! sweep.
//!
//! Oracles speak in ground-truth space. For `logit` groups an oracle value
//! `v` in `[0, 1]` is inserted as `min + v * (max - min)` of that dimension's
//! training-split range, so 0 and 1 land on the most extreme logits the model
//! saw; other kinds are inserted unchanged.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ConceptDataset, ConceptKind, ConceptSchema, Oracle, OracleKind, Split};
use crate::error::{Error, Result};
use crate::masking::Mask;
use crate::model::{MaskAssignment, OutputModel, Prediction};
use crate::report::{mean_and_stderr, Provenance};
use crate::selection::{Level, SelectionTrace};

/// Replaces the dims of `groups_to_fix` with `oracle_values` (model input
/// space, full concept length). Other dims are untouched.
pub fn apply_interventions(
    concepts: &[f64],
    mask: &Mask,
    schema: &ConceptSchema,
    oracle_values: &[f64],
    groups_to_fix: &[usize],
) -> Result<Vec<f64>> {
    let d = schema.total_dims();
    if concepts.len() != d || oracle_values.len() != d {
        return Err(Error::InvalidInput(format!(
            "concept and oracle vectors must have length {d}"
        )));
    }
    if mask.len() != schema.num_groups() {
        return Err(Error::InvalidInput(format!(
            "mask has length {}, schema has {} groups",
            mask.len(),
            schema.num_groups()
        )));
    }
    let mut out = concepts.to_vec();
    for &g in groups_to_fix {
        if g >= schema.num_groups() {
            return Err(Error::Intervention(format!("group index {g} out of range")));
        }
        if !mask.get(g) {
            return Err(Error::Intervention(format!(
                "group `{}` is not in the selected set",
                schema.groups[g].name
            )));
        }
        let range = schema.group_range(g);
        out[range.clone()].copy_from_slice(&oracle_values[range]);
    }
    Ok(out)
}

/// Maps ground-truth oracle values into model input space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputMapping {
    /// `Some((min, max))` for logit dimensions.
    ranges: Vec<Option<(f64, f64)>>,
}

impl InputMapping {
    /// Logit ranges come from the train split (all rows if it is empty).
    pub fn from_dataset(dataset: &ConceptDataset) -> Self {
        let schema = dataset.schema();
        let mut rows = dataset.rows_in(Split::Train);
        if rows.is_empty() {
            rows = (0..dataset.len()).collect();
        }
        let mut ranges = Vec::with_capacity(schema.total_dims());
        for g in &schema.groups {
            for _ in 0..g.dims {
                ranges.push(None);
            }
        }
        for (gi, g) in schema.groups.iter().enumerate() {
            if g.kind != ConceptKind::Logit {
                continue;
            }
            for dim in schema.group_range(gi) {
                let (lo, hi) = rows.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &r| {
                    let v = dataset.concepts().get(r, dim);
                    (lo.min(v), hi.max(v))
                });
                ranges[dim] = lo.is_finite().then_some((lo, hi));
            }
        }
        Self { ranges }
    }

    pub fn map(&self, values: &[f64]) -> Vec<f64> {
        values
            .iter()
            .zip(&self.ranges)
            .map(|(&v, r)| match r {
                Some((lo, hi)) => lo + v * (hi - lo),
                None => v,
            })
            .collect()
    }
}

/// Oracle plus input mapping, ready to produce per-row replacement values.
#[derive(Debug, Clone)]
pub struct OracleSource {
    oracle: Oracle,
    mapping: InputMapping,
}

impl OracleSource {
    pub fn new(kind: OracleKind, dataset: &ConceptDataset) -> Result<Self> {
        Ok(Self {
            oracle: Oracle::build(kind, dataset)?,
            mapping: InputMapping::from_dataset(dataset),
        })
    }

    pub fn kind(&self) -> OracleKind {
        self.oracle.kind()
    }

    /// Oracle values for `row` in model input space.
    pub fn input_values(&self, dataset: &ConceptDataset, row: usize) -> Result<Vec<f64>> {
        Ok(self.mapping.map(self.oracle.values_for_row(dataset, row)?))
    }

    /// Oracle values for `row` in ground-truth space.
    pub fn truth_values<'a>(&'a self, dataset: &ConceptDataset, row: usize) -> Result<&'a [f64]> {
        self.oracle.values_for_row(dataset, row)
    }
}

/// Before/after predictions for one intervened row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionOutcome {
    pub concepts: Vec<f64>,
    pub before: Prediction,
    pub after: Prediction,
}

/// Intervenes on `groups` of dataset row `row` under `mask`.
pub fn intervene_row(
    model: &OutputModel,
    dataset: &ConceptDataset,
    source: &OracleSource,
    row: usize,
    mask: &Mask,
    groups: &[usize],
) -> Result<InterventionOutcome> {
    model.ensure_compatible(dataset.schema())?;
    if row >= dataset.len() {
        return Err(Error::InvalidInput(format!("row {row} out of range")));
    }
    let original = dataset.row(row);
    let oracle = source.input_values(dataset, row)?;
    let concepts = apply_interventions(original, mask, dataset.schema(), &oracle, groups)?;
    Ok(InterventionOutcome {
        before: model.predict(original, mask)?,
        after: model.predict(&concepts, mask)?,
        concepts,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InterventionOrder {
    /// Uniformly random order per seed, without replacement.
    Random { seed: u64 },
    /// Fixed order; groups outside a given selected set are skipped.
    User { indices: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterventionPlan {
    pub order: InterventionOrder,
    pub oracle: OracleKind,
    /// Cap on interventions per set; `None` sweeps up to the set size.
    #[serde(default)]
    pub max_interventions: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub k: usize,
    pub interventions: usize,
    pub accuracy: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub seeds: usize,
    pub oracle: OracleKind,
    pub provenance: Provenance,
}

impl SweepReport {
    pub fn with_config_hash(mut self, hash: Option<String>) -> Self {
        self.provenance.config_hash = hash;
        self
    }

    /// CSV with provenance as leading `#` comment lines.
    pub fn to_csv(&self) -> String {
        let mut out = self.provenance.csv_comments();
        out.push_str(&format!("# oracle={}\n", self.oracle));
        out.push_str("k,interventions,accuracy,stderr\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{},{}\n", r.k, r.interventions, r.accuracy, r.stderr));
        }
        out
    }

    pub fn row(&self, k: usize, interventions: usize) -> Option<&SweepRow> {
        self.rows
            .iter()
            .find(|r| r.k == k && r.interventions == interventions)
    }

    /// Mean accuracy gain per intervention when intervening on the whole set.
    pub fn gain_per_intervention(&self, k: usize) -> Option<f64> {
        let start = self.row(k, 0)?;
        let end = self
            .rows
            .iter()
            .filter(|r| r.k == k)
            .max_by_key(|r| r.interventions)?;
        (end.interventions > 0)
            .then(|| (end.accuracy - start.accuracy) / end.interventions as f64)
    }
}

/// Test-split accuracy after `i` oracle interventions, for every set size in
/// `ks` (read from `trace`) and every `i` up to the cap, averaged over
/// `seeds` intervention orders. Standard errors are across seeds.
pub fn intervention_sweep(
    model: &OutputModel,
    dataset: &ConceptDataset,
    trace: &SelectionTrace,
    ks: &[usize],
    plan: &InterventionPlan,
    seeds: usize,
) -> Result<SweepReport> {
    model.ensure_compatible(dataset.schema())?;
    if trace.level != Level::Dataset {
        return Err(Error::InvalidInput("sweeps need a dataset-level trace".into()));
    }
    if seeds == 0 {
        return Err(Error::InvalidInput("seeds must be at least 1".into()));
    }
    let source = OracleSource::new(plan.oracle, dataset)?;
    let n = model.num_groups();
    let rows = dataset.rows_in(Split::Test);
    if rows.is_empty() {
        return Err(Error::InvalidInput("dataset has no test rows".into()));
    }
    let oracle_rows: Vec<Vec<f64>> = rows
        .iter()
        .map(|&r| source.input_values(dataset, r))
        .collect::<Result<_>>()?;

    let mut sets = Vec::with_capacity(ks.len());
    for &k in ks {
        let set = trace.set_of_size(k).ok_or_else(|| {
            let (lo, hi) = trace.size_range();
            Error::InvalidInput(format!("k = {k} is outside the trace's sizes {lo}..={hi}"))
        })?;
        sets.push((k, set));
    }

    let jobs: Vec<(usize, usize)> = (0..sets.len())
        .flat_map(|si| (0..seeds).map(move |s| (si, s)))
        .collect();
    // Per job: correct counts for i = 0..=cap.
    let counts: Vec<Vec<usize>> = jobs
        .par_iter()
        .map(|&(si, s)| {
            let (k, set) = &sets[si];
            let mask = Mask::from_set(set, n)?;
            let base_order: Vec<usize> = match &plan.order {
                InterventionOrder::User { indices } => {
                    indices.iter().copied().filter(|g| set.contains(g)).collect()
                }
                InterventionOrder::Random { .. } => set.clone(),
            };
            let cap = plan.max_interventions.unwrap_or(*k).min(base_order.len());
            let mut rng = match &plan.order {
                InterventionOrder::Random { seed } => {
                    let mut r = ChaCha8Rng::seed_from_u64(seed.wrapping_add(s as u64));
                    r.set_stream(*k as u64);
                    Some(r)
                }
                InterventionOrder::User { .. } => None,
            };
            let orders: Vec<Vec<usize>> = rows
                .iter()
                .map(|_| {
                    let mut o = base_order.clone();
                    if let Some(rng) = rng.as_mut() {
                        o.shuffle(rng);
                    }
                    o
                })
                .collect();
            let mut correct = Vec::with_capacity(cap + 1);
            for i in 0..=cap {
                let inputs: Vec<Vec<f64>> = rows
                    .iter()
                    .zip(&orders)
                    .zip(&oracle_rows)
                    .map(|((&r, order), oracle)| {
                        apply_interventions(dataset.row(r), &mask, dataset.schema(), oracle, &order[..i])
                    })
                    .collect::<Result<_>>()?;
                let items: Vec<(&[f64], &Mask)> =
                    inputs.iter().map(|c| (c.as_slice(), &mask)).collect();
                let preds = model.predict_many(&items)?;
                correct.push(
                    rows.iter()
                        .zip(&preds)
                        .filter(|(&r, p)| p.argmax() == dataset.labels()[r])
                        .count(),
                );
            }
            Ok(correct)
        })
        .collect::<Result<_>>()?;

    let total = rows.len();
    let mut out = Vec::new();
    for (si, (k, _)) in sets.iter().enumerate() {
        let per_seed: Vec<&Vec<usize>> = (0..seeds).map(|s| &counts[si * seeds + s]).collect();
        for i in 0..per_seed[0].len() {
            let pooled: usize = per_seed.iter().map(|c| c[i]).sum();
            let accuracy = pooled as f64 / (seeds * total) as f64;
            let accs: Vec<f64> = per_seed.iter().map(|c| c[i] as f64 / total as f64).collect();
            let (_, stderr) = mean_and_stderr(&accs);
            out.push(SweepRow {
                k: *k,
                interventions: i,
                accuracy,
                stderr,
            });
        }
    }
    let seed_list = match &plan.order {
        InterventionOrder::Random { seed } => (0..seeds as u64).map(|s| seed.wrapping_add(s)).collect(),
        InterventionOrder::User { .. } => Vec::new(),
    };
    Ok(SweepReport {
        rows: out,
        seeds,
        oracle: plan.oracle,
        provenance: Provenance::for_model(model, seed_list, None)?,
    })
}

/// Test accuracy of the size-`k` set with the concepts of every selected
/// group replaced by oracle values.
pub fn oracle_accuracy(
    model: &OutputModel,
    dataset: &ConceptDataset,
    set: &[usize],
    oracle: OracleKind,
) -> Result<f64> {
    let source = OracleSource::new(oracle, dataset)?;
    let mut values = dataset.concepts().clone();
    for r in 0..dataset.len() {
        let v = source.input_values(dataset, r)?;
        values.row_mut(r).copy_from_slice(&v);
    }
    let replaced = dataset.with_concepts(values)?;
    let mask = Mask::from_set(set, model.num_groups())?;
    Ok(model
        .evaluate(&replaced, &MaskAssignment::Shared(mask), Some(Split::Test))?
        .accuracy)
}
