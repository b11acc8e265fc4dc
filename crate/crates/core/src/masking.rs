//! Group masks, the two-step mask sampler, and concept augmentation.
//!
//! The augmented input for concepts `c` and group mask `m` is the concept
//! vector with every dimension of an unselected group zeroed, followed by
//! the group mask itself:
//!
//! ```text
//! c = [c1, c2, c3], m = [1, 0, 1]  ->  [c1, 0, c3, 1, 0, 1]
//! ```
//!
//! The mask tail lets the model tell a masked-out zero from a genuine zero.

use std::collections::BTreeSet;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::data::ConceptSchema;
use crate::error::{Error, Result};

/// Binary selection vector over concept groups.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Mask {
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(bits: Vec<bool>) -> Self {
        Self { bits }
    }

    pub fn empty(n: usize) -> Self {
        Self { bits: vec![false; n] }
    }

    pub fn full(n: usize) -> Self {
        Self { bits: vec![true; n] }
    }

    /// `bits[i] = 1` iff `i` is in `selected`.
    pub fn from_set<'a, I>(selected: I, n: usize) -> Result<Self>
    where
        I: IntoIterator<Item = &'a usize>,
    {
        let mut bits = vec![false; n];
        for &i in selected {
            if i >= n {
                return Err(Error::InvalidInput(format!(
                    "group index {i} out of range for {n} groups"
                )));
            }
            bits[i] = true;
        }
        Ok(Self { bits })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.bits.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    #[inline]
    pub fn get(&self, g: usize) -> bool {
        self.bits[g]
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn popcount(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn selected(&self) -> BTreeSet<usize> {
        self.bits
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
            .collect()
    }
}

impl Serialize for Mask {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(self.bits.iter().map(|&b| b as u8))
    }
}

impl<'de> Deserialize<'de> for Mask {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw: Vec<u8> = Vec::deserialize(d)?;
        raw.into_iter()
            .map(|v| match v {
                0 => Ok(false),
                1 => Ok(true),
                other => Err(serde::de::Error::custom(format!(
                    "mask entries must be 0 or 1, got {other}"
                ))),
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Mask::new)
    }
}

/// Two-step sampler: draw a set size `k` from `{1..n}` (uniform unless
/// weights are given), then a uniformly random `k`-subset.
#[derive(Debug, Clone)]
pub struct MaskSampler {
    n: usize,
    k_dist: Option<WeightedIndex<f64>>,
}

impl MaskSampler {
    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidInput("mask length must be at least 1".into()));
        }
        Ok(Self { n, k_dist: None })
    }

    /// `weights[j]` is the relative probability of `k = j + 1`.
    pub fn weighted(n: usize, weights: &[f64]) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidInput("mask length must be at least 1".into()));
        }
        if weights.len() != n {
            return Err(Error::InvalidInput(format!(
                "{} k-weights for {n} groups",
                weights.len()
            )));
        }
        let dist = WeightedIndex::new(weights)
            .map_err(|e| Error::InvalidInput(format!("invalid k-weights: {e}")))?;
        Ok(Self {
            n,
            k_dist: Some(dist),
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Mask {
        let k = match &self.k_dist {
            Some(d) => d.sample(rng) + 1,
            None => rng.random_range(1..=self.n),
        };
        // Partial Fisher-Yates: the first k slots end up a uniform k-subset.
        let mut idx: Vec<usize> = (0..self.n).collect();
        for i in 0..k {
            let j = rng.random_range(i..self.n);
            idx.swap(i, j);
        }
        let mut bits = vec![false; self.n];
        for &i in &idx[..k] {
            bits[i] = true;
        }
        Mask { bits }
    }
}

/// Convenience wrapper for a uniform sampler.
pub fn sample_mask<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<Mask> {
    Ok(MaskSampler::uniform(n)?.sample(rng))
}

/// Augmented model input: masked concepts followed by the group mask.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedConcepts {
    values: Vec<f64>,
    concept_dims: usize,
}

impl AugmentedConcepts {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn concept_part(&self) -> &[f64] {
        &self.values[..self.concept_dims]
    }

    pub fn mask_part(&self) -> &[f64] {
        &self.values[self.concept_dims..]
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

fn check_lengths(concepts: &[f64], mask: &Mask, schema: &ConceptSchema) -> Result<()> {
    if concepts.len() != schema.total_dims() {
        return Err(Error::InvalidInput(format!(
            "concept vector has length {}, schema needs {}",
            concepts.len(),
            schema.total_dims()
        )));
    }
    if mask.len() != schema.num_groups() {
        return Err(Error::InvalidInput(format!(
            "mask has length {}, schema has {} groups",
            mask.len(),
            schema.num_groups()
        )));
    }
    Ok(())
}

pub fn augment(concepts: &[f64], mask: &Mask, schema: &ConceptSchema) -> Result<AugmentedConcepts> {
    check_lengths(concepts, mask, schema)?;
    let mut values = vec![0.0; schema.augmented_dims()];
    write_augmented(concepts, mask, &schema.dim_groups(), &mut values);
    Ok(AugmentedConcepts {
        values,
        concept_dims: concepts.len(),
    })
}

/// Hot-path variant of [`augment`]: `dim_groups` is
/// [`ConceptSchema::dim_groups`] and `out` has length `D + n`. Lengths are
/// the caller's responsibility.
#[inline]
pub(crate) fn write_augmented(concepts: &[f64], mask: &Mask, dim_groups: &[usize], out: &mut [f64]) {
    let d = concepts.len();
    for ((o, &c), &g) in out[..d].iter_mut().zip(concepts).zip(dim_groups) {
        *o = if mask.bits[g] { c } else { 0.0 };
    }
    for (o, &b) in out[d..].iter_mut().zip(&mask.bits) {
        *o = if b { 1.0 } else { 0.0 };
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{ConceptGroup, ConceptKind};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashMap;

    fn ones(n: usize) -> ConceptSchema {
        ConceptSchema::new(
            (0..n)
                .map(|i| ConceptGroup::new(format!("g{i}"), 1, ConceptKind::Logit))
                .collect(),
            2,
            None,
        )
        .unwrap()
    }

    #[test]
    fn single_group_mask_is_always_set() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            assert_eq!(sample_mask(1, &mut rng).unwrap(), Mask::full(1));
        }
        assert!(sample_mask(0, &mut rng).is_err());
    }

    /// Exact distribution of the two-step sampler for n = 3, by enumerating
    /// every (k, ordered draw) outcome of the partial Fisher-Yates shuffle.
    fn enumerate_n3() -> HashMap<Vec<bool>, f64> {
        let n = 3;
        let mut dist = HashMap::new();
        fn rec(
            idx: Vec<usize>,
            i: usize,
            k: usize,
            p: f64,
            n: usize,
            dist: &mut HashMap<Vec<bool>, f64>,
        ) {
            if i == k {
                let mut bits = vec![false; n];
                for &j in &idx[..k] {
                    bits[j] = true;
                }
                *dist.entry(bits).or_insert(0.0) += p;
                return;
            }
            for j in i..n {
                let mut next = idx.clone();
                next.swap(i, j);
                rec(next, i + 1, k, p / (n - i) as f64, n, dist);
            }
        }
        for k in 1..=n {
            rec((0..n).collect(), 0, k, 1.0 / n as f64, n, &mut dist);
        }
        dist
    }

    #[test]
    fn enumerated_distribution_n3() {
        let dist = enumerate_n3();
        assert_eq!(dist.len(), 7);
        let p_pop2: f64 = dist
            .iter()
            .filter(|(b, _)| b.iter().filter(|&&x| x).count() == 2)
            .map(|(_, p)| p)
            .sum();
        assert!((p_pop2 - 1.0 / 3.0).abs() < 1e-12);
        assert!((dist[&vec![true, true, false]] - 1.0 / 9.0).abs() < 1e-12);
        assert!((dist[&vec![false, true, false]] - 1.0 / 9.0).abs() < 1e-12);
        assert!((dist[&vec![true, true, true]] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn monte_carlo_matches_enumeration() {
        let dist = enumerate_n3();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let sampler = MaskSampler::uniform(3).unwrap();
        let draws = 30_000;
        let mut pop = [0usize; 4];
        let mut by_mask: HashMap<Vec<bool>, usize> = HashMap::new();
        for _ in 0..draws {
            let m = sampler.sample(&mut rng);
            pop[m.popcount()] += 1;
            *by_mask.entry(m.bits().to_vec()).or_insert(0) += 1;
        }
        assert_eq!(pop[0], 0);
        for &count in &pop[1..] {
            assert!((count as f64 / draws as f64 - 1.0 / 3.0).abs() < 0.02);
        }
        for (bits, p) in dist {
            let freq = by_mask.get(&bits).copied().unwrap_or(0) as f64 / draws as f64;
            assert!((freq - p).abs() < 0.02, "{bits:?}: {freq} vs {p}");
        }
    }

    #[test]
    fn weighted_k_prior() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let sampler = MaskSampler::weighted(4, &[0.0, 0.0, 1.0, 0.0]).unwrap();
        for _ in 0..50 {
            assert_eq!(sampler.sample(&mut rng).popcount(), 3);
        }
        assert!(MaskSampler::weighted(4, &[1.0]).is_err());
    }

    #[test]
    fn augment_one_dim_example() {
        let s = ones(3);
        let m = Mask::new(vec![true, false, true]);
        let a = augment(&[0.3, -0.7, 2.5], &m, &s).unwrap();
        assert_eq!(a.values(), &[0.3, 0.0, 2.5, 1.0, 0.0, 1.0]);
        let full = augment(&[0.3, -0.7, 2.5], &Mask::full(3), &s).unwrap();
        assert_eq!(full.values(), &[0.3, -0.7, 2.5, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn augment_multi_dim_groups() {
        let s = ConceptSchema::new(
            vec![
                ConceptGroup::new("wing", 2, ConceptKind::Binary),
                ConceptGroup::new("beak", 1, ConceptKind::Binary),
            ],
            2,
            None,
        )
        .unwrap();
        let a = augment(&[4.0, 5.0, 6.0], &Mask::new(vec![false, true]), &s).unwrap();
        assert_eq!(a.values(), &[0.0, 0.0, 6.0, 0.0, 1.0]);
        assert_eq!(a.concept_part(), &[0.0, 0.0, 6.0]);
        assert_eq!(a.mask_part(), &[0.0, 1.0]);
    }

    #[test]
    fn augment_rejects_bad_lengths() {
        let s = ones(3);
        assert!(augment(&[1.0, 2.0], &Mask::full(3), &s).is_err());
        assert!(augment(&[1.0, 2.0, 3.0], &Mask::full(2), &s).is_err());
    }

    #[test]
    fn mask_from_set_cases() {
        assert_eq!(Mask::from_set(&[], 3).unwrap(), Mask::empty(3));
        assert_eq!(
            Mask::from_set(&[0, 2], 3).unwrap(),
            Mask::new(vec![true, false, true])
        );
        assert_eq!(Mask::from_set(&[0, 1, 2], 3).unwrap(), Mask::full(3));
        assert!(Mask::from_set(&[3], 3).is_err());
    }

    #[test]
    fn mask_json_is_zero_one_array() {
        let m = Mask::new(vec![true, false, true]);
        assert_eq!(serde_json::to_string(&m).unwrap(), "[1,0,1]");
        assert_eq!(serde_json::from_str::<Mask>("[1,0,1]").unwrap(), m);
        assert!(serde_json::from_str::<Mask>("[1,2]").is_err());
    }

    #[test]
    fn masked_zero_differs_from_genuine_zero() {
        let s = ones(2);
        let genuine = augment(&[0.0, 1.0], &Mask::full(2), &s).unwrap();
        let masked = augment(&[0.0, 1.0], &Mask::new(vec![false, true]), &s).unwrap();
        assert_eq!(genuine.concept_part(), masked.concept_part());
        assert_ne!(genuine.values(), masked.values());
    }

    proptest! {
        #[test]
        fn augment_idempotent_on_concept_part(
            values in proptest::collection::vec(-10.0f64..10.0, 5),
            bits in proptest::collection::vec(any::<bool>(), 5),
        ) {
            let s = ones(5);
            let m = Mask::new(bits);
            let once = augment(&values, &m, &s).unwrap();
            let twice = augment(once.concept_part(), &m, &s).unwrap();
            prop_assert_eq!(&once, &twice);
            prop_assert_eq!(once.values().len(), 10);
            let full = augment(&values, &Mask::full(5), &s).unwrap();
            prop_assert_eq!(full.concept_part(), &values[..]);
        }
    }
}
