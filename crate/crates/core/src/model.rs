//! The output model: a dense network over augmented concept vectors, trained
//! on randomly masked inputs so one set of weights serves every concept
//! subset.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{ConceptDataset, ConceptSchema, Split};
use crate::error::{Error, Result};
use crate::masking::{write_augmented, Mask, MaskSampler};
use crate::nn::{Matrix, Network};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// Rows per forward pass during inference.
const INFERENCE_CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MaskGranularity {
    /// One mask shared by every row of a batch.
    #[default]
    PerBatch,
    PerRow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "TrainConfig::default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "TrainConfig::default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "TrainConfig::default_epochs")]
    pub epochs: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "TrainConfig::default_hidden_dims")]
    pub hidden_dims: Vec<usize>,
    #[serde(default)]
    pub mask_granularity: MaskGranularity,
    /// Optional prior over set sizes; `k_weights[j]` weights `k = j + 1`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_weights: Option<Vec<f64>>,
}

impl TrainConfig {
    fn default_learning_rate() -> f64 {
        0.05
    }
    fn default_batch_size() -> usize {
        32
    }
    fn default_epochs() -> usize {
        200
    }
    fn default_hidden_dims() -> Vec<usize> {
        vec![100, 100]
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.hidden_dims.contains(&0) {
            return Err(Error::Config("hidden layer widths must be at least 1".into()));
        }
        Ok(())
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: Self::default_learning_rate(),
            batch_size: Self::default_batch_size(),
            epochs: Self::default_epochs(),
            seed: 0,
            hidden_dims: Self::default_hidden_dims(),
            mask_granularity: MaskGranularity::PerBatch,
            k_weights: None,
        }
    }
}

/// Class distribution and its entropy in nats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub probs: Vec<f64>,
    pub entropy_nats: f64,
}

impl Prediction {
    fn from_probs(probs: &[f64]) -> Self {
        let h: f64 = probs
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| -p * p.ln())
            .sum();
        let cap = (probs.len() as f64).ln();
        Self {
            probs: probs.to_vec(),
            entropy_nats: h.clamp(0.0, cap),
        }
    }

    /// Most probable class; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate().skip(1) {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }

    pub fn entropy_bits(&self) -> f64 {
        self.entropy_nats / std::f64::consts::LN_2
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
}

/// Mean training loss per epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,mean_loss\n");
        for r in &self.epochs {
            out.push_str(&format!("{},{}\n", r.epoch, r.mean_loss));
        }
        out
    }
}

/// A trained output model together with the schema it was trained on.
///
/// This is also the checkpoint file; see `docs/checkpoint-format.md`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputModel {
    pub format_version: u32,
    pub schema_fingerprint: String,
    pub schema: ConceptSchema,
    pub train_config: TrainConfig,
    pub network: Network,
}

/// Which mask each evaluated row uses.
#[derive(Debug, Clone, PartialEq)]
pub enum MaskAssignment {
    /// Same mask for every row of the split.
    Shared(Mask),
    /// Explicit `(row, mask)` pairs. Rows may repeat.
    PerRow(Vec<(usize, Mask)>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub mean_entropy_nats: f64,
    pub rows: usize,
}

impl OutputModel {
    /// Wraps an existing network, checking that its input width matches the
    /// schema's augmented width.
    pub fn from_parts(schema: ConceptSchema, train_config: TrainConfig, network: Network) -> Result<Self> {
        let model = Self {
            format_version: CHECKPOINT_FORMAT_VERSION,
            schema_fingerprint: schema.fingerprint(),
            schema,
            train_config,
            network,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::IncompatibleCheckpoint(format!(
                "format_version {} (expected {CHECKPOINT_FORMAT_VERSION})",
                self.format_version
            )));
        }
        self.schema.validate()?;
        if self.schema.fingerprint() != self.schema_fingerprint {
            return Err(Error::IncompatibleCheckpoint(
                "schema fingerprint does not match the embedded schema".into(),
            ));
        }
        self.network.validate()?;
        if self.network.input_dim() != self.schema.augmented_dims() {
            return Err(Error::IncompatibleCheckpoint(format!(
                "network input width {} != concept dims + groups = {}",
                self.network.input_dim(),
                self.schema.augmented_dims()
            )));
        }
        if self.network.num_classes() != self.schema.num_classes {
            return Err(Error::IncompatibleCheckpoint(format!(
                "network has {} outputs for {} classes",
                self.network.num_classes(),
                self.schema.num_classes
            )));
        }
        Ok(())
    }

    pub fn schema(&self) -> &ConceptSchema {
        &self.schema
    }

    pub fn num_groups(&self) -> usize {
        self.schema.num_groups()
    }

    /// Fails unless `schema` is the one the model was trained on.
    pub fn ensure_compatible(&self, schema: &ConceptSchema) -> Result<()> {
        let fp = schema.fingerprint();
        if fp != self.schema_fingerprint {
            return Err(Error::IncompatibleCheckpoint(format!(
                "checkpoint schema {} does not match dataset schema {}",
                &self.schema_fingerprint[..12],
                &fp[..12]
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let model: Self = serde_json::from_str(s)?;
        model.validate()?;
        Ok(model)
    }

    /// Hex SHA-256 of the serialized checkpoint.
    pub fn content_hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_json()?.as_bytes())))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    fn check_inputs(&self, concepts: &[f64], mask: &Mask) -> Result<()> {
        if concepts.len() != self.schema.total_dims() {
            return Err(Error::InvalidInput(format!(
                "concept vector has length {}, expected {}",
                concepts.len(),
                self.schema.total_dims()
            )));
        }
        if mask.len() != self.schema.num_groups() {
            return Err(Error::InvalidInput(format!(
                "mask has length {}, expected {}",
                mask.len(),
                self.schema.num_groups()
            )));
        }
        if let Some(v) = concepts.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite concept value {v}")));
        }
        Ok(())
    }

    /// Predicts from the groups selected by `mask`; values of masked-out
    /// groups are ignored.
    pub fn predict(&self, concepts: &[f64], mask: &Mask) -> Result<Prediction> {
        Ok(self.predict_many(&[(concepts, mask)])?.remove(0))
    }

    /// Batched [`OutputModel::predict`]. The result for each item does not
    /// depend on the other items.
    pub fn predict_many(&self, items: &[(&[f64], &Mask)]) -> Result<Vec<Prediction>> {
        for (c, m) in items {
            self.check_inputs(c, m)?;
        }
        let dim_groups = self.schema.dim_groups();
        let width = self.schema.augmented_dims();
        let mut out = Vec::with_capacity(items.len());
        for chunk in items.chunks(INFERENCE_CHUNK) {
            let mut batch = Matrix::zeros(chunk.len(), width);
            for (r, (c, m)) in chunk.iter().enumerate() {
                write_augmented(c, m, &dim_groups, batch.row_mut(r));
            }
            let probs = self.network.forward(&batch)?;
            out.extend(probs.iter_rows().map(Prediction::from_probs));
        }
        Ok(out)
    }

    /// Predictions for dataset rows under one shared mask.
    pub fn predict_rows(&self, dataset: &ConceptDataset, rows: &[usize], mask: &Mask) -> Result<Vec<Prediction>> {
        let items: Vec<(&[f64], &Mask)> = rows.iter().map(|&r| (dataset.row(r), mask)).collect();
        self.predict_many(&items)
    }

    /// Accuracy (argmax, ties to the lowest class) and mean predictive
    /// entropy over the rows of `split` (`None` = all rows).
    pub fn evaluate(
        &self,
        dataset: &ConceptDataset,
        assignment: &MaskAssignment,
        split: Option<Split>,
    ) -> Result<Evaluation> {
        self.ensure_compatible(dataset.schema())?;
        let (rows, preds) = match assignment {
            MaskAssignment::Shared(mask) => {
                let rows = dataset.rows_filtered(split);
                let preds = self.predict_rows(dataset, &rows, mask)?;
                (rows, preds)
            }
            MaskAssignment::PerRow(pairs) => {
                let keep: Vec<&(usize, Mask)> = pairs
                    .iter()
                    .filter(|(r, _)| split.is_none_or(|s| dataset.splits().get(*r) == Some(&s)))
                    .collect();
                if let Some((r, _)) = keep.iter().find(|(r, _)| *r >= dataset.len()) {
                    return Err(Error::InvalidInput(format!("row {r} out of range")));
                }
                let items: Vec<(&[f64], &Mask)> =
                    keep.iter().map(|(r, m)| (dataset.row(*r), m)).collect();
                let preds = self.predict_many(&items)?;
                (keep.iter().map(|(r, _)| *r).collect(), preds)
            }
        };
        score(dataset.labels(), &rows, &preds)
    }
}

/// Accuracy and mean entropy of `preds` against the labels of `rows`.
pub(crate) fn score(labels: &[usize], rows: &[usize], preds: &[Prediction]) -> Result<Evaluation> {
    if rows.is_empty() {
        return Err(Error::InvalidInput("no rows to evaluate".into()));
    }
    let correct = rows
        .iter()
        .zip(preds)
        .filter(|(&r, p)| p.argmax() == labels[r])
        .count();
    let entropy: f64 = preds.iter().map(|p| p.entropy_nats).sum();
    Ok(Evaluation {
        accuracy: correct as f64 / rows.len() as f64,
        mean_entropy_nats: entropy / rows.len() as f64,
        rows: rows.len(),
    })
}

/// Trains the output model on the train split.
///
/// Each epoch shuffles the train rows; each batch samples a fresh mask (or
/// one per row), augments the concepts, and takes one SGD step on the mean
/// cross-entropy. Deterministic in `(dataset, config)`.
pub fn train_output_model(dataset: &ConceptDataset, config: &TrainConfig) -> Result<(OutputModel, TrainLog)> {
    config.validate()?;
    let schema = dataset.schema().clone();
    let n_groups = schema.num_groups();
    let sampler = match &config.k_weights {
        Some(w) => MaskSampler::weighted(n_groups, w)?,
        None => MaskSampler::uniform(n_groups)?,
    };
    let mut train_rows = dataset.rows_in(Split::Train);
    if train_rows.is_empty() {
        return Err(Error::InvalidInput("dataset has no train rows".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut network = Network::random(
        schema.augmented_dims(),
        &config.hidden_dims,
        schema.num_classes,
        &mut rng,
    );
    let dim_groups = schema.dim_groups();
    let width = schema.augmented_dims();
    let mut log = TrainLog::default();
    let mut batch = Matrix::zeros(config.batch_size, width);
    let mut labels = Vec::with_capacity(config.batch_size);

    for epoch in 0..config.epochs {
        train_rows.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in train_rows.chunks(config.batch_size) {
            if batch.rows() != chunk.len() {
                batch = Matrix::zeros(chunk.len(), width);
            }
            labels.clear();
            let shared = match config.mask_granularity {
                MaskGranularity::PerBatch => Some(sampler.sample(&mut rng)),
                MaskGranularity::PerRow => None,
            };
            for (i, &r) in chunk.iter().enumerate() {
                let mask = match &shared {
                    Some(m) => m.clone(),
                    None => sampler.sample(&mut rng),
                };
                write_augmented(dataset.row(r), &mask, &dim_groups, batch.row_mut(i));
                labels.push(dataset.labels()[r]);
            }
            let (loss, grads) = network.loss_and_grad(&batch, &labels)?;
            if !loss.is_finite() {
                return Err(Error::Training(format!(
                    "loss diverged at epoch {epoch}; lower the learning rate"
                )));
            }
            network.sgd_step(&grads, config.learning_rate)?;
            total += loss * chunk.len() as f64;
        }
        log.epochs.push(EpochRecord {
            epoch,
            mean_loss: total / train_rows.len() as f64,
        });
    }
    let model = OutputModel::from_parts(schema, config.clone(), network)?;
    Ok((model, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, ConceptGroup, ConceptKind, Generator, SyntheticSpec};

    fn small_config(seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: 5,
            hidden_dims: vec![8],
            seed,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_model_predicts_uniform() {
        let schema = ConceptSchema::new(
            vec![ConceptGroup::new("a", 2, ConceptKind::Logit)],
            4,
            None,
        )
        .unwrap();
        let net = Network::zeros(schema.augmented_dims(), &[5], 4);
        let model = OutputModel::from_parts(schema, TrainConfig::default(), net).unwrap();
        let p = model.predict(&[3.0, -1.0], &Mask::full(1)).unwrap();
        assert_eq!(p.probs, vec![0.25; 4]);
        assert!((p.entropy_nats - 4f64.ln()).abs() < 1e-12);
        assert_eq!(p.argmax(), 0);
    }

    #[test]
    fn from_parts_checks_width() {
        let schema = ConceptSchema::new(
            vec![ConceptGroup::new("a", 2, ConceptKind::Logit)],
            2,
            None,
        )
        .unwrap();
        let net = Network::zeros(2, &[], 2);
        assert!(matches!(
            OutputModel::from_parts(schema, TrainConfig::default(), net),
            Err(Error::IncompatibleCheckpoint(_))
        ));
    }

    #[test]
    fn training_is_deterministic() {
        let ds = generate_synthetic(&SyntheticSpec::new(Generator::XorDistractor, 200, 1)).unwrap();
        let (a, la) = train_output_model(&ds, &small_config(3)).unwrap();
        let (b, lb) = train_output_model(&ds, &small_config(3)).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        assert_eq!(la, lb);
        let (c, _) = train_output_model(&ds, &small_config(4)).unwrap();
        assert_ne!(a.to_json().unwrap(), c.to_json().unwrap());
    }

    #[test]
    fn per_row_masks_train() {
        let ds = generate_synthetic(&SyntheticSpec::new(Generator::Duplicated, 200, 1)).unwrap();
        let cfg = TrainConfig {
            mask_granularity: MaskGranularity::PerRow,
            ..small_config(0)
        };
        let (m, log) = train_output_model(&ds, &cfg).unwrap();
        assert_eq!(log.epochs.len(), 5);
        assert_eq!(m.train_config.mask_granularity, MaskGranularity::PerRow);
    }

    #[test]
    fn empty_train_split_rejected() {
        let ds = generate_synthetic(&SyntheticSpec::new(Generator::Duplicated, 20, 1)).unwrap();
        let mut parts = ds.to_parts();
        parts.split = Some(vec![Split::Test; 20]);
        let ds = ConceptDataset::new(parts, 0).unwrap();
        assert!(train_output_model(&ds, &small_config(0)).is_err());
    }

    #[test]
    fn invalid_config_rejected() {
        let ds = generate_synthetic(&SyntheticSpec::new(Generator::Duplicated, 20, 1)).unwrap();
        for cfg in [
            TrainConfig { learning_rate: 0.0, ..small_config(0) },
            TrainConfig { batch_size: 0, ..small_config(0) },
            TrainConfig { epochs: 0, ..small_config(0) },
        ] {
            assert!(matches!(train_output_model(&ds, &cfg), Err(Error::Config(_))));
        }
    }

    #[test]
    fn fingerprint_mismatch_rejected() {
        let ds = generate_synthetic(&SyntheticSpec::new(Generator::Duplicated, 50, 1)).unwrap();
        let other = generate_synthetic(&SyntheticSpec::new(Generator::XorDistractor, 50, 1)).unwrap();
        let (m, _) = train_output_model(&ds, &small_config(0)).unwrap();
        let err = m
            .evaluate(&other, &MaskAssignment::Shared(Mask::full(3)), None)
            .unwrap_err();
        assert!(matches!(err, Error::IncompatibleCheckpoint(_)));
    }

    #[test]
    fn tampered_checkpoint_rejected() {
        let ds = generate_synthetic(&SyntheticSpec::new(Generator::Duplicated, 50, 1)).unwrap();
        let (m, _) = train_output_model(&ds, &small_config(0)).unwrap();
        let json = m.to_json().unwrap().replace("\"c2\"", "\"zz\"");
        assert!(matches!(
            OutputModel::from_json(&json),
            Err(Error::IncompatibleCheckpoint(_))
        ));
    }

    #[test]
    fn evaluate_ties_break_low_and_counts() {
        // Uniform model on balanced labels: always predicts class 0.
        let ds = generate_synthetic(&SyntheticSpec::new(Generator::Duplicated, 400, 2)).unwrap();
        let net = Network::zeros(ds.schema().augmented_dims(), &[], 2);
        let m = OutputModel::from_parts(ds.schema().clone(), TrainConfig::default(), net).unwrap();
        let e = m
            .evaluate(&ds, &MaskAssignment::Shared(Mask::full(2)), None)
            .unwrap();
        let zeros = ds.labels().iter().filter(|&&y| y == 0).count() as f64 / 400.0;
        assert_eq!(e.accuracy, zeros);
        assert!((e.accuracy - 0.5).abs() < 0.06);
        assert!((e.mean_entropy_nats - 2f64.ln()).abs() < 1e-12);
    }
}
