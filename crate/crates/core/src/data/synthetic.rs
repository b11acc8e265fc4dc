//! Synthetic concept datasets whose information structure is known by
//! construction.
//!
//! Every generator draws ground-truth binary concepts, derives the label from
//! them, and then produces the observed concepts by flipping each
//! ground-truth bit independently with probability `noise`. Ground truth is
//! kept in `true_concepts` and the identity column is the class index, so
//! both oracles are available.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{assign_splits, ConceptDataset, DatasetParts};
use super::schema::{ConceptGroup, ConceptKind, ConceptSchema};
use crate::error::{Error, Result};
use crate::nn::Matrix;

/// Flip probability of the non-representative members of a correlated
/// block, giving a within-block correlation of `1 - 2 * 0.02 = 0.96`.
pub const BLOCK_MEMBER_FLIP: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Generator {
    /// `c2` is an exact copy of `c1`; the label is `c1`.
    Duplicated,
    /// Label is `c1 XOR c2`; `c3` is independent noise.
    XorDistractor,
    /// Label is `c1` (value 0 carries class information); `c2` is
    /// independent noise.
    InformativeZero,
    /// `blocks` groups of `block_size` redundant concepts. Member 0 of each
    /// block is its representative; the label is the binary number spelled
    /// by the representatives.
    CorrelatedBlocks,
}

impl std::str::FromStr for Generator {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "duplicated" => Ok(Generator::Duplicated),
            "xor_distractor" | "xor-distractor" => Ok(Generator::XorDistractor),
            "informative_zero" | "informative-zero" => Ok(Generator::InformativeZero),
            "correlated_blocks" | "correlated-blocks" => Ok(Generator::CorrelatedBlocks),
            other => Err(format!("unknown generator `{other}`")),
        }
    }
}

fn default_blocks() -> usize {
    3
}

fn default_block_size() -> usize {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub generator: Generator,
    pub n_instances: usize,
    /// Observation flip probability in `[0, 1)`.
    #[serde(default)]
    pub noise: f64,
    #[serde(default)]
    pub seed: u64,
    /// Only read by [`Generator::CorrelatedBlocks`].
    #[serde(default = "default_blocks")]
    pub blocks: usize,
    /// Only read by [`Generator::CorrelatedBlocks`].
    #[serde(default = "default_block_size")]
    pub block_size: usize,
}

impl SyntheticSpec {
    pub fn new(generator: Generator, n_instances: usize, seed: u64) -> Self {
        Self {
            generator,
            n_instances,
            noise: 0.0,
            seed,
            blocks: default_blocks(),
            block_size: default_block_size(),
        }
    }

    pub fn with_noise(mut self, noise: f64) -> Self {
        self.noise = noise;
        self
    }

    pub fn with_blocks(mut self, blocks: usize, block_size: usize) -> Self {
        self.blocks = blocks;
        self.block_size = block_size;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.n_instances == 0 {
            return Err(Error::InvalidInput("n_instances must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.noise) {
            return Err(Error::InvalidInput(format!("noise {} not in [0, 1)", self.noise)));
        }
        if self.generator == Generator::CorrelatedBlocks
            && (self.blocks == 0 || self.blocks > 12 || self.block_size == 0)
        {
            return Err(Error::InvalidInput(
                "correlated_blocks needs 1..=12 blocks of at least one member".into(),
            ));
        }
        Ok(())
    }
}

fn bit<R: Rng>(rng: &mut R, p: f64) -> bool {
    rng.random_bool(p)
}

fn binary_schema(names: &[String], num_classes: usize) -> Result<ConceptSchema> {
    ConceptSchema::new(
        names
            .iter()
            .map(|n| ConceptGroup::new(n.clone(), 1, ConceptKind::Binary))
            .collect(),
        num_classes,
        None,
    )
}

/// Generates a dataset. Deterministic in `spec`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<ConceptDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.n_instances;

    let (names, num_classes): (Vec<String>, usize) = match spec.generator {
        Generator::Duplicated => (vec!["c1".into(), "c2".into()], 2),
        Generator::XorDistractor => (vec!["c1".into(), "c2".into(), "c3".into()], 2),
        Generator::InformativeZero => (vec!["c1".into(), "c2".into()], 2),
        Generator::CorrelatedBlocks => (
            (0..spec.blocks)
                .flat_map(|b| (0..spec.block_size).map(move |m| format!("b{b}_m{m}")))
                .collect(),
            1usize << spec.blocks,
        ),
    };
    let d = names.len();
    let schema = binary_schema(&names, num_classes.max(2))?;

    let mut truth = Vec::with_capacity(n * d);
    let mut observed = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    let mut row_truth = vec![false; d];
    for _ in 0..n {
        let label = match spec.generator {
            Generator::Duplicated => {
                let c1 = bit(&mut rng, 0.5);
                row_truth[0] = c1;
                row_truth[1] = c1;
                c1 as usize
            }
            Generator::XorDistractor => {
                for t in row_truth.iter_mut() {
                    *t = bit(&mut rng, 0.5);
                }
                (row_truth[0] ^ row_truth[1]) as usize
            }
            Generator::InformativeZero => {
                row_truth[0] = bit(&mut rng, 0.5);
                row_truth[1] = bit(&mut rng, 0.5);
                row_truth[0] as usize
            }
            Generator::CorrelatedBlocks => {
                let mut label = 0usize;
                for b in 0..spec.blocks {
                    let rep = bit(&mut rng, 0.5);
                    label |= (rep as usize) << b;
                    for m in 0..spec.block_size {
                        let v = if m == 0 {
                            rep
                        } else {
                            rep ^ bit(&mut rng, BLOCK_MEMBER_FLIP)
                        };
                        row_truth[b * spec.block_size + m] = v;
                    }
                }
                label
            }
        };
        labels.push(label);
        let mut row_obs: Vec<bool> = row_truth
            .iter()
            .map(|&t| t ^ (spec.noise > 0.0 && bit(&mut rng, spec.noise)))
            .collect();
        if spec.generator == Generator::Duplicated {
            row_obs[1] = row_obs[0];
        }
        truth.extend(row_truth.iter().map(|&b| b as u8 as f64));
        observed.extend(row_obs.iter().map(|&b| b as u8 as f64));
    }

    let parts = DatasetParts {
        concepts: Matrix::from_vec(n, d, observed)?,
        true_concepts: Some(Matrix::from_vec(n, d, truth)?),
        identity: Some(labels.iter().map(|y| y.to_string()).collect()),
        split: Some(assign_splits(n, spec.seed)),
        instance_ids: None,
        labels,
        schema,
    };
    ConceptDataset::new(parts, spec.seed)
}
