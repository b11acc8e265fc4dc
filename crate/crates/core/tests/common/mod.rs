#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex, OnceLock};

use scom::data::{generate_synthetic, ConceptDataset, Generator, SyntheticSpec};
use scom::model::{train_output_model, OutputModel, TrainConfig};

pub struct Fixture {
    pub dataset: ConceptDataset,
    pub model: OutputModel,
}

type Slot = Arc<OnceLock<Arc<Fixture>>>;

/// Trains once per process for each distinct dataset spec.
pub fn trained(spec: &SyntheticSpec) -> Arc<Fixture> {
    static CACHE: OnceLock<Mutex<BTreeMap<String, Slot>>> = OnceLock::new();
    let key = format!(
        "{:?}/{}/{}/{}/{}x{}",
        spec.generator, spec.n_instances, spec.noise, spec.seed, spec.blocks, spec.block_size
    );
    let slot = {
        let mut map = CACHE.get_or_init(Default::default).lock().unwrap();
        map.entry(key).or_default().clone()
    };
    slot.get_or_init(|| {
        let dataset = generate_synthetic(spec).unwrap();
        let config = TrainConfig {
            seed: spec.seed,
            ..TrainConfig::default()
        };
        let (model, _) = train_output_model(&dataset, &config).unwrap();
        Arc::new(Fixture { dataset, model })
    })
    .clone()
}

pub fn synthetic(generator: Generator, n: usize, noise: f64, seed: u64) -> Arc<Fixture> {
    trained(&SyntheticSpec::new(generator, n, seed).with_noise(noise))
}

/// `I(Y; C)` in bits as `H(Y) + H(C) - H(Y, C)`, counted with hash maps over
/// the raw column values of `dims`.
pub fn mi_bits_by_entropies(dataset: &ConceptDataset, dims: &[usize]) -> f64 {
    fn entropy<K: std::hash::Hash + Eq>(counts: HashMap<K, usize>, total: f64) -> f64 {
        counts
            .values()
            .map(|&c| {
                let p = c as f64 / total;
                -p * p.log2()
            })
            .sum()
    }
    let total = dataset.len() as f64;
    let mut hy = HashMap::new();
    let mut hc = HashMap::new();
    let mut hyc = HashMap::new();
    for r in 0..dataset.len() {
        let c: Vec<u64> = dims.iter().map(|&d| dataset.concepts().get(r, d).to_bits()).collect();
        let y = dataset.labels()[r];
        *hy.entry(y).or_insert(0) += 1;
        *hc.entry(c.clone()).or_insert(0) += 1;
        *hyc.entry((c, y)).or_insert(0) += 1;
    }
    entropy(hy, total) + entropy(hc, total) - entropy(hyc, total)
}

/// Dimension indices of a set of groups.
pub fn dims_of(dataset: &ConceptDataset, groups: &[usize]) -> Vec<usize> {
    groups
        .iter()
        .flat_map(|&g| dataset.schema().group_range(g))
        .collect()
}

/// Largest relative error between analytic gradients and central finite
/// differences with step `h`, over every parameter of `net`.
pub fn max_gradient_rel_error(
    net: &scom::nn::Network,
    batch: &scom::nn::Matrix,
    labels: &[usize],
    h: f64,
) -> f64 {
    let (_, grads) = net.loss_and_grad(batch, labels).unwrap();
    let analytic = grads.flat_params();
    let mut worst: f64 = 0.0;
    for (i, &a) in analytic.iter().enumerate() {
        let mut plus = net.clone();
        *plus.param_mut(i).unwrap() += h;
        let mut minus = net.clone();
        *minus.param_mut(i).unwrap() -= h;
        let lp = plus.loss_and_grad(batch, labels).unwrap().0;
        let lm = minus.loss_and_grad(batch, labels).unwrap().0;
        let numeric = (lp - lm) / (2.0 * h);
        let scale = a.abs().max(numeric.abs());
        let err = if scale < 1e-7 { (a - numeric).abs() } else { (a - numeric).abs() / scale };
        worst = worst.max(err);
    }
    worst
}

/// A random network (random weights and biases) with every dimension at
/// most 10, plus a batch for it.
pub fn random_problem(seed: u64) -> (scom::nn::Network, scom::nn::Matrix, Vec<usize>) {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let input = rng.random_range(1..=10);
    let hidden: Vec<usize> = (0..rng.random_range(0..=2)).map(|_| rng.random_range(1..=10)).collect();
    let classes = rng.random_range(2..=10);
    let rows = rng.random_range(1..=10);
    let mut net = scom::nn::Network::random(input, &hidden, classes, &mut rng);
    for layer in &mut net.layers {
        for b in &mut layer.bias {
            *b = rng.random_range(-0.5..0.5);
        }
    }
    let values: Vec<f64> = (0..rows * input).map(|_| rng.random_range(-2.0..2.0)).collect();
    let batch = scom::nn::Matrix::from_vec(rows, input, values).unwrap();
    let labels = (0..rows).map(|_| rng.random_range(0..classes)).collect();
    (net, batch, labels)
}
