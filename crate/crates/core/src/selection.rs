//! Concept-set selection.
//!
//! Greedy forward selection and backward elimination score candidate sets by
//! the output model's predictive entropy: under a well-trained model,
//! minimising `H(Ŷ | C)` picks the same set as maximising `I(Y; C)`, and the
//! entropy needs no density estimate. A plug-in mutual information estimator
//! and an exhaustive search over small concept sets are provided as
//! verification oracles.
//!
//! One greedy run yields every set size: forward traces are read by prefix,
//! backward traces by suffix.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use itertools::Itertools;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ConceptDataset, ConceptKind, Split};
use crate::error::{Error, Result};
use crate::masking::Mask;
use crate::model::OutputModel;

/// Scores closer than this (in nats or bits) are ties, resolved by the lowest
/// group index or the lexicographically smallest subset.
pub const TIE_EPS: f64 = 1e-12;

/// Largest concept count accepted by [`exhaustive_best_subset`].
pub const MAX_EXHAUSTIVE_GROUPS: usize = 12;

/// Largest joint support (in bits) accepted by [`plugin_mi`].
pub const MAX_MI_SUPPORT_BITS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[serde(alias = "fs")]
    Forward,
    #[serde(alias = "be")]
    Backward,
    Random,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Forward => "forward",
            Method::Backward => "backward",
            Method::Random => "random",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "forward" | "fs" => Ok(Method::Forward),
            "backward" | "be" => Ok(Method::Backward),
            "random" => Ok(Method::Random),
            other => Err(format!("unknown selection method `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    /// One set for the whole dataset, scored by mean validation entropy.
    #[default]
    Dataset,
    /// A set for a single row, scored by that row's entropy.
    Instance,
}

impl Level {
    pub fn as_str(self) -> &'static str {
        match self {
            Level::Dataset => "dataset",
            Level::Instance => "instance",
        }
    }
}

impl FromStr for Level {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "dataset" => Ok(Level::Dataset),
            "instance" => Ok(Level::Instance),
            other => Err(format!("unknown selection level `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionRequest {
    pub k: usize,
    pub method: Method,
    #[serde(default)]
    pub level: Level,
    #[serde(default)]
    pub instance_index: Option<usize>,
    #[serde(default)]
    pub locked_in: BTreeSet<usize>,
    #[serde(default)]
    pub excluded: BTreeSet<usize>,
    #[serde(default)]
    pub seed: u64,
}

impl SelectionRequest {
    pub fn new(method: Method, k: usize) -> Self {
        Self {
            k,
            method,
            level: Level::Dataset,
            instance_index: None,
            locked_in: BTreeSet::new(),
            excluded: BTreeSet::new(),
            seed: 0,
        }
    }

    pub fn instance(mut self, row: usize) -> Self {
        self.level = Level::Instance;
        self.instance_index = Some(row);
        self
    }

    pub fn locked(mut self, groups: impl IntoIterator<Item = usize>) -> Self {
        self.locked_in.extend(groups);
        self
    }

    pub fn exclude(mut self, groups: impl IntoIterator<Item = usize>) -> Self {
        self.excluded.extend(groups);
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Sets `k` so that one run yields every reachable set size: the largest
    /// size for forward/random, the smallest for backward.
    pub fn full_trace(mut self, n: usize) -> Self {
        self.k = match self.method {
            Method::Forward | Method::Random => n.saturating_sub(self.excluded.len()),
            Method::Backward => self.locked_in.len(),
        };
        self
    }

    /// Checks the constraints against `n` groups and `rows` dataset rows.
    pub fn validate(&self, n: usize, rows: usize) -> Result<()> {
        if let Some(&g) = self.locked_in.iter().chain(&self.excluded).find(|&&g| g >= n) {
            return Err(Error::Infeasible(format!(
                "group index {g} out of range for {n} groups"
            )));
        }
        if let Some(g) = self.locked_in.intersection(&self.excluded).next() {
            return Err(Error::Infeasible(format!(
                "group {g} is both locked in and excluded"
            )));
        }
        let available = n - self.excluded.len();
        if self.k > available {
            return Err(Error::Infeasible(format!(
                "k = {} exceeds the {available} non-excluded groups",
                self.k
            )));
        }
        if self.locked_in.len() > self.k {
            return Err(Error::Infeasible(format!(
                "{} locked-in groups exceed k = {}",
                self.locked_in.len(),
                self.k
            )));
        }
        if self.method == Method::Random && self.k == 0 {
            return Err(Error::Infeasible("random selection needs k >= 1".into()));
        }
        match (self.level, self.instance_index) {
            (Level::Instance, None) => {
                return Err(Error::Infeasible("instance-level selection needs an instance index".into()))
            }
            (Level::Instance, Some(r)) if r >= rows => {
                return Err(Error::Infeasible(format!("instance {r} out of range for {rows} rows")))
            }
            (Level::Dataset, Some(_)) => {
                return Err(Error::Infeasible(
                    "an instance index is only valid for instance-level selection".into(),
                ))
            }
            _ => {}
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub group: usize,
    /// Proxy entropy of the set after this step; `None` for random traces.
    pub entropy_nats: Option<f64>,
    pub size_after: usize,
}

/// Ordered greedy trajectory. Forward/random traces grow from the empty set;
/// backward traces shrink from `initial_set`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionTrace {
    pub method: Method,
    pub level: Level,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance_index: Option<usize>,
    pub initial_set: Vec<usize>,
    pub initial_entropy_nats: Option<f64>,
    pub locked_in: Vec<usize>,
    pub excluded: Vec<usize>,
    pub steps: Vec<TraceStep>,
    pub schema_fingerprint: String,
}

impl SelectionTrace {
    /// Smallest and largest set size readable from this trace.
    pub fn size_range(&self) -> (usize, usize) {
        let m = self.initial_set.len();
        match self.method {
            Method::Backward => (m - self.steps.len(), m),
            Method::Forward | Method::Random => (m, m + self.steps.len()),
        }
    }

    /// The selected set of size `k`, ascending, if the trace reaches it.
    pub fn set_of_size(&self, k: usize) -> Option<Vec<usize>> {
        let (lo, hi) = self.size_range();
        if k < lo || k > hi {
            return None;
        }
        let mut set: BTreeSet<usize> = self.initial_set.iter().copied().collect();
        match self.method {
            Method::Backward => {
                for s in &self.steps[..hi - k] {
                    set.remove(&s.group);
                }
            }
            Method::Forward | Method::Random => {
                set.extend(self.steps[..k - lo].iter().map(|s| s.group));
            }
        }
        Some(set.into_iter().collect())
    }

    /// Proxy entropy recorded for the set of size `k`.
    pub fn entropy_at_size(&self, k: usize) -> Option<f64> {
        let (lo, hi) = self.size_range();
        if k < lo || k > hi {
            return None;
        }
        let at_start = match self.method {
            Method::Backward => k == hi,
            _ => k == lo,
        };
        if at_start {
            return self.initial_entropy_nats;
        }
        self.steps
            .iter()
            .find(|s| s.size_after == k)
            .and_then(|s| s.entropy_nats)
    }

    /// Mask of the size-`k` set over `n` groups.
    pub fn mask_of_size(&self, k: usize, n: usize) -> Result<Mask> {
        let set = self.set_of_size(k).ok_or_else(|| {
            let (lo, hi) = self.size_range();
            Error::InvalidInput(format!("trace covers set sizes {lo}..={hi}, not {k}"))
        })?;
        Mask::from_set(&set, n)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Scores concept sets by the model's predictive entropy.
pub struct ProxyScorer<'a> {
    model: &'a OutputModel,
    dataset: &'a ConceptDataset,
    rows: Vec<usize>,
    level: Level,
}

impl<'a> ProxyScorer<'a> {
    /// Dataset level averages over the validation split; instance level uses
    /// the single row.
    pub fn new(
        model: &'a OutputModel,
        dataset: &'a ConceptDataset,
        level: Level,
        instance: Option<usize>,
    ) -> Result<Self> {
        model.ensure_compatible(dataset.schema())?;
        let rows = match (level, instance) {
            (Level::Instance, Some(r)) if r < dataset.len() => vec![r],
            (Level::Instance, _) => {
                return Err(Error::InvalidInput("instance-level scoring needs a valid row".into()))
            }
            (Level::Dataset, _) => dataset.rows_in(Split::Val),
        };
        if rows.is_empty() {
            return Err(Error::InvalidInput(
                "dataset has no validation rows to score selections on".into(),
            ));
        }
        Ok(Self {
            model,
            dataset,
            rows,
            level,
        })
    }

    /// Dataset-level scorer over an explicit pool of rows.
    pub fn with_rows(model: &'a OutputModel, dataset: &'a ConceptDataset, rows: Vec<usize>) -> Result<Self> {
        model.ensure_compatible(dataset.schema())?;
        if rows.is_empty() || rows.iter().any(|&r| r >= dataset.len()) {
            return Err(Error::InvalidInput("scoring pool is empty or out of range".into()));
        }
        Ok(Self {
            model,
            dataset,
            rows,
            level: Level::Dataset,
        })
    }

    /// Mean predictive entropy (nats) of the pool under `set`.
    pub fn entropy(&self, set: &BTreeSet<usize>) -> Result<f64> {
        Ok(self.score_sets(std::slice::from_ref(set))?[0])
    }

    /// Scores several sets; the result does not depend on evaluation order.
    pub fn score_sets(&self, sets: &[BTreeSet<usize>]) -> Result<Vec<f64>> {
        let n = self.model.num_groups();
        let masks = sets
            .iter()
            .map(|s| Mask::from_set(s, n))
            .collect::<Result<Vec<_>>>()?;
        match self.level {
            Level::Instance => {
                let row = self.dataset.row(self.rows[0]);
                let items: Vec<(&[f64], &Mask)> = masks.iter().map(|m| (row, m)).collect();
                Ok(self
                    .model
                    .predict_many(&items)?
                    .into_iter()
                    .map(|p| p.entropy_nats)
                    .collect())
            }
            Level::Dataset => masks
                .par_iter()
                .map(|m| {
                    let preds = self.model.predict_rows(self.dataset, &self.rows, m)?;
                    Ok(preds.iter().map(|p| p.entropy_nats).sum::<f64>() / preds.len() as f64)
                })
                .collect(),
        }
    }
}

/// Lowest score wins; near-ties go to the earlier (lower-index) candidate.
fn pick_min(scored: &[(usize, f64)]) -> (usize, f64) {
    let mut best = scored[0];
    for &(g, s) in &scored[1..] {
        if s < best.1 - TIE_EPS {
            best = (g, s);
        }
    }
    best
}

fn check_method(request: &SelectionRequest, expected: Method) -> Result<()> {
    if request.method != expected {
        return Err(Error::InvalidInput(format!(
            "request method is {}, expected {expected}",
            request.method
        )));
    }
    Ok(())
}

fn new_trace(model: &OutputModel, request: &SelectionRequest) -> SelectionTrace {
    SelectionTrace {
        method: request.method,
        level: request.level,
        instance_index: request.instance_index,
        initial_set: Vec::new(),
        initial_entropy_nats: None,
        locked_in: request.locked_in.iter().copied().collect(),
        excluded: request.excluded.iter().copied().collect(),
        steps: Vec::new(),
        schema_fingerprint: model.schema_fingerprint.clone(),
    }
}

/// Greedy forward selection up to `request.k` groups.
///
/// Locked-in groups are added first, in index order; each later stage adds
/// the non-excluded candidate whose inclusion gives the lowest entropy.
pub fn forward_select(
    model: &OutputModel,
    dataset: &ConceptDataset,
    request: &SelectionRequest,
) -> Result<SelectionTrace> {
    check_method(request, Method::Forward)?;
    let n = model.num_groups();
    request.validate(n, dataset.len())?;
    let scorer = ProxyScorer::new(model, dataset, request.level, request.instance_index)?;
    let mut trace = new_trace(model, request);
    trace.initial_entropy_nats = Some(scorer.entropy(&BTreeSet::new())?);

    let mut current = BTreeSet::new();
    for &g in &request.locked_in {
        current.insert(g);
        trace.steps.push(TraceStep {
            group: g,
            entropy_nats: Some(scorer.entropy(&current)?),
            size_after: current.len(),
        });
    }
    while current.len() < request.k {
        let candidates: Vec<usize> = (0..n)
            .filter(|g| !current.contains(g) && !request.excluded.contains(g))
            .collect();
        let sets: Vec<BTreeSet<usize>> = candidates
            .iter()
            .map(|&g| {
                let mut s = current.clone();
                s.insert(g);
                s
            })
            .collect();
        let scores = scorer.score_sets(&sets)?;
        let scored: Vec<(usize, f64)> = candidates.into_iter().zip(scores).collect();
        let (g, h) = pick_min(&scored);
        current.insert(g);
        trace.steps.push(TraceStep {
            group: g,
            entropy_nats: Some(h),
            size_after: current.len(),
        });
    }
    Ok(trace)
}

/// Greedy backward elimination from all non-excluded groups down to
/// `max(k, |locked_in|)` groups. Locked-in groups are never removed.
pub fn backward_eliminate(
    model: &OutputModel,
    dataset: &ConceptDataset,
    request: &SelectionRequest,
) -> Result<SelectionTrace> {
    check_method(request, Method::Backward)?;
    let n = model.num_groups();
    request.validate(n, dataset.len())?;
    let scorer = ProxyScorer::new(model, dataset, request.level, request.instance_index)?;
    let mut trace = new_trace(model, request);
    let mut current: BTreeSet<usize> = (0..n).filter(|g| !request.excluded.contains(g)).collect();
    trace.initial_set = current.iter().copied().collect();
    trace.initial_entropy_nats = Some(scorer.entropy(&current)?);

    let target = request.k.max(request.locked_in.len());
    while current.len() > target {
        let candidates: Vec<usize> = current
            .iter()
            .copied()
            .filter(|g| !request.locked_in.contains(g))
            .collect();
        let sets: Vec<BTreeSet<usize>> = candidates
            .iter()
            .map(|g| {
                let mut s = current.clone();
                s.remove(g);
                s
            })
            .collect();
        let scores = scorer.score_sets(&sets)?;
        let scored: Vec<(usize, f64)> = candidates.into_iter().zip(scores).collect();
        let (g, h) = pick_min(&scored);
        current.remove(&g);
        trace.steps.push(TraceStep {
            group: g,
            entropy_nats: Some(h),
            size_after: current.len(),
        });
    }
    Ok(trace)
}

/// Seeded uniform `k`-subset containing every locked-in group and no
/// excluded one. The trace lists locked groups first, then a random order of
/// the rest, so every prefix is itself a uniform draw.
pub fn random_select(n: usize, request: &SelectionRequest, schema_fingerprint: &str) -> Result<SelectionTrace> {
    check_method(request, Method::Random)?;
    if request.level == Level::Instance {
        // Row content does not matter for random selection.
        let rows = request.instance_index.map_or(0, |r| r + 1);
        request.validate(n, rows)?;
    } else {
        request.validate(n, 0)?;
    }
    let mut free: Vec<usize> = (0..n)
        .filter(|g| !request.locked_in.contains(g) && !request.excluded.contains(g))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(request.seed);
    free.shuffle(&mut rng);
    let order = request
        .locked_in
        .iter()
        .copied()
        .chain(free)
        .take(request.k);
    let steps = order
        .enumerate()
        .map(|(i, group)| TraceStep {
            group,
            entropy_nats: None,
            size_after: i + 1,
        })
        .collect();
    Ok(SelectionTrace {
        method: Method::Random,
        level: request.level,
        instance_index: request.instance_index,
        initial_set: Vec::new(),
        initial_entropy_nats: None,
        locked_in: request.locked_in.iter().copied().collect(),
        excluded: request.excluded.iter().copied().collect(),
        steps,
        schema_fingerprint: schema_fingerprint.to_string(),
    })
}

/// Dispatches on `request.method`.
pub fn select(model: &OutputModel, dataset: &ConceptDataset, request: &SelectionRequest) -> Result<SelectionTrace> {
    match request.method {
        Method::Forward => forward_select(model, dataset, request),
        Method::Backward => backward_eliminate(model, dataset, request),
        Method::Random => {
            model.ensure_compatible(dataset.schema())?;
            if let Some(r) = request.instance_index {
                if r >= dataset.len() {
                    return Err(Error::Infeasible(format!("instance {r} out of range")));
                }
            }
            random_select(model.num_groups(), request, &model.schema_fingerprint)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    PluginDiscrete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiEstimate {
    pub subset: Vec<usize>,
    pub mi_bits: f64,
    pub estimator: Estimator,
}

/// Plug-in `I(Y; C_subset)` in bits from the empirical joint over all rows.
/// Every group in the subset must be binary.
pub fn plugin_mi(dataset: &ConceptDataset, subset: &[usize]) -> Result<MiEstimate> {
    let rows: Vec<usize> = (0..dataset.len()).collect();
    plugin_mi_rows(dataset, subset, &rows)
}

/// [`plugin_mi`] restricted to `rows`.
pub fn plugin_mi_rows(dataset: &ConceptDataset, subset: &[usize], rows: &[usize]) -> Result<MiEstimate> {
    let schema = dataset.schema();
    let mut dims = Vec::new();
    let mut subset_sorted: Vec<usize> = subset.to_vec();
    subset_sorted.sort_unstable();
    subset_sorted.dedup();
    for &g in &subset_sorted {
        let group = schema
            .groups
            .get(g)
            .ok_or_else(|| Error::InvalidInput(format!("group index {g} out of range")))?;
        if group.kind != ConceptKind::Binary {
            return Err(Error::UnsupportedEstimator(format!(
                "group `{}` is {:?}; plug-in MI needs discrete (binary) concepts, \
                 use the model's proxy entropy instead",
                group.name, group.kind
            )));
        }
        dims.extend(schema.group_range(g));
    }
    if dims.len() > MAX_MI_SUPPORT_BITS {
        return Err(Error::Refused(format!(
            "joint support of 2^{} cells exceeds the 2^{MAX_MI_SUPPORT_BITS} limit",
            dims.len()
        )));
    }
    if rows.is_empty() {
        return Err(Error::InvalidInput("no rows for MI estimate".into()));
    }

    // Sorted maps keep the summation order independent of hashing.
    let mut joint: BTreeMap<(u64, usize), usize> = BTreeMap::new();
    let mut c_marg: BTreeMap<u64, usize> = BTreeMap::new();
    let mut y_marg: BTreeMap<usize, usize> = BTreeMap::new();
    let concepts = dataset.concepts();
    for &r in rows {
        let mut key = 0u64;
        for &d in &dims {
            let v = concepts.get(r, d);
            let b = if v == 0.0 {
                0
            } else if v == 1.0 {
                1
            } else {
                return Err(Error::InvalidInput(format!(
                    "row {r}: binary concept column {d} holds {v}"
                )));
            };
            key = (key << 1) | b;
        }
        let y = dataset.labels()[r];
        *joint.entry((key, y)).or_insert(0) += 1;
        *c_marg.entry(key).or_insert(0) += 1;
        *y_marg.entry(y).or_insert(0) += 1;
    }
    let total = rows.len() as f64;
    let mut mi = 0.0;
    for (&(c, y), &count) in &joint {
        let p_cy = count as f64 / total;
        let p_c = c_marg[&c] as f64 / total;
        let p_y = y_marg[&y] as f64 / total;
        mi += p_cy * (p_cy / (p_c * p_y)).log2();
    }
    Ok(MiEstimate {
        subset: subset_sorted,
        mi_bits: mi.max(0.0),
        estimator: Estimator::PluginDiscrete,
    })
}

/// Objective for [`exhaustive_best_subset`].
#[derive(Clone, Copy)]
pub enum Objective<'a> {
    /// Maximise plug-in MI over all rows.
    PluginMi,
    /// Minimise dataset-level proxy entropy (validation split).
    ProxyEntropy(&'a OutputModel),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestSubset {
    pub subset: Vec<usize>,
    pub score: f64,
}

/// Tries every size-`k` subset; ties go to the lexicographically smallest.
/// Only for small concept sets (`n <= 12`).
pub fn exhaustive_best_subset(dataset: &ConceptDataset, k: usize, objective: Objective<'_>) -> Result<BestSubset> {
    let n = dataset.schema().num_groups();
    if n > MAX_EXHAUSTIVE_GROUPS {
        return Err(Error::Refused(format!(
            "exhaustive search over {n} groups is combinatorial; \
             the limit is {MAX_EXHAUSTIVE_GROUPS}, use forward or backward selection"
        )));
    }
    if k > n {
        return Err(Error::InvalidInput(format!("k = {k} exceeds {n} groups")));
    }
    let subsets: Vec<Vec<usize>> = (0..n).combinations(k).collect();
    let scores: Vec<f64> = match objective {
        Objective::PluginMi => subsets
            .iter()
            .map(|s| plugin_mi(dataset, s).map(|m| m.mi_bits))
            .collect::<Result<_>>()?,
        Objective::ProxyEntropy(model) => {
            let scorer = ProxyScorer::new(model, dataset, Level::Dataset, None)?;
            let sets: Vec<BTreeSet<usize>> =
                subsets.iter().map(|s| s.iter().copied().collect()).collect();
            scorer.score_sets(&sets)?
        }
    };
    let maximise = matches!(objective, Objective::PluginMi);
    let mut best = 0;
    for i in 1..subsets.len() {
        let better = if maximise {
            scores[i] > scores[best] + TIE_EPS
        } else {
            scores[i] < scores[best] - TIE_EPS
        };
        if better {
            best = i;
        }
    }
    Ok(BestSubset {
        subset: subsets[best].clone(),
        score: scores[best],
    })
}
