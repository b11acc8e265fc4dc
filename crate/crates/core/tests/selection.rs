mod common;

use std::collections::BTreeSet;

use proptest::prelude::*;

use scom::data::{generate_synthetic, Generator, SyntheticSpec};
use scom::selection::{
    exhaustive_best_subset, plugin_mi, select, Level, Method, Objective, ProxyScorer, SelectionRequest,
};

fn blocks() -> std::sync::Arc<common::Fixture> {
    common::trained(&SyntheticSpec::new(Generator::CorrelatedBlocks, 2000, 3).with_blocks(3, 2))
}

#[test]
fn trace_prefixes_equal_reruns_for_every_k() {
    let fx = blocks();
    let n = fx.model.num_groups();
    for method in [Method::Forward, Method::Backward] {
        let full = select(&fx.model, &fx.dataset, &SelectionRequest::new(method, 0).full_trace(n)).unwrap();
        for k in 0..=n {
            let rerun = select(&fx.model, &fx.dataset, &SelectionRequest::new(method, k)).unwrap();
            assert_eq!(full.set_of_size(k), rerun.set_of_size(k), "{method} k={k}");
            assert_eq!(full.entropy_at_size(k), rerun.entropy_at_size(k), "{method} k={k}");
        }
    }
}

#[test]
fn full_traces_visit_every_group_once() {
    let fx = blocks();
    let n = fx.model.num_groups();
    let fs = select(&fx.model, &fx.dataset, &SelectionRequest::new(Method::Forward, n)).unwrap();
    let sizes: Vec<usize> = fs.steps.iter().map(|s| s.size_after).collect();
    assert_eq!(sizes, (1..=n).collect::<Vec<_>>());
    let be = select(&fx.model, &fx.dataset, &SelectionRequest::new(Method::Backward, 0)).unwrap();
    let sizes: Vec<usize> = be.steps.iter().map(|s| s.size_after).collect();
    assert_eq!(sizes, (0..n).rev().collect::<Vec<_>>());
    for trace in [&fs, &be] {
        let groups: BTreeSet<usize> = trace.steps.iter().map(|s| s.group).collect();
        assert_eq!(groups.len(), n);
    }
}

#[test]
fn forward_proxy_entropy_is_nearly_monotone() {
    let fx = blocks();
    let n = fx.model.num_groups();
    let fs = select(&fx.model, &fx.dataset, &SelectionRequest::new(Method::Forward, n)).unwrap();
    let mut prev = fs.initial_entropy_nats.unwrap();
    for s in &fs.steps {
        let h = s.entropy_nats.unwrap();
        assert!(h <= prev + 0.02, "size {}: {h} after {prev}", s.size_after);
        prev = h;
    }
}

fn constraints() -> impl Strategy<Value = (Vec<u8>, u64)> {
    // 0 = free, 1 = locked, 2 = excluded, per group.
    (prop::collection::vec(0u8..3, 6), any::<u64>())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn constraints_are_respected((roles, seed) in constraints()) {
        let fx = blocks();
        let locked: BTreeSet<usize> = roles.iter().enumerate().filter(|(_, &r)| r == 1).map(|(g, _)| g).collect();
        let excluded: BTreeSet<usize> = roles.iter().enumerate().filter(|(_, &r)| r == 2).map(|(g, _)| g).collect();
        let n = 6;
        for method in [Method::Forward, Method::Backward, Method::Random] {
            let req = SelectionRequest::new(method, 0)
                .locked(locked.iter().copied())
                .exclude(excluded.iter().copied())
                .seed(seed)
                .full_trace(n);
            if method == Method::Random && req.k == 0 {
                prop_assert!(select(&fx.model, &fx.dataset, &req).is_err());
                continue;
            }
            let trace = select(&fx.model, &fx.dataset, &req).unwrap();
            prop_assert!(trace.steps.iter().all(|s| !excluded.contains(&s.group)));
            let (lo, hi) = trace.size_range();
            prop_assert_eq!(hi, n - excluded.len());
            for k in lo.max(locked.len())..=hi {
                let set: BTreeSet<usize> = trace.set_of_size(k).unwrap().into_iter().collect();
                prop_assert_eq!(set.len(), k);
                prop_assert!(locked.is_subset(&set), "{} k={} {:?}", method, k, set);
                prop_assert!(set.is_disjoint(&excluded));
            }
        }
    }
}

#[test]
fn infeasible_constraints_are_rejected() {
    let fx = blocks();
    let cases = [
        SelectionRequest::new(Method::Forward, 2).locked([0, 1, 2]),
        SelectionRequest::new(Method::Backward, 6).exclude([0]),
        SelectionRequest::new(Method::Forward, 2).locked([1]).exclude([1]),
        SelectionRequest::new(Method::Random, 0),
        SelectionRequest::new(Method::Forward, 2).locked([9]),
    ];
    for req in cases {
        let err = select(&fx.model, &fx.dataset, &req).unwrap_err();
        assert!(matches!(err, scom::Error::Infeasible(_)), "{req:?}: {err}");
    }
}

#[test]
fn duplicated_selection_examples() {
    let fx = common::synthetic(Generator::Duplicated, 2000, 0.0, 1);
    let fs = select(&fx.model, &fx.dataset, &SelectionRequest::new(Method::Forward, 2)).unwrap();
    assert_eq!(fs.steps[0].group, 0);
    let h1 = fs.entropy_at_size(1).unwrap();
    let h2 = fs.entropy_at_size(2).unwrap();
    assert!((h1 - h2).abs() < 0.05);

    let be = select(&fx.model, &fx.dataset, &SelectionRequest::new(Method::Backward, 1)).unwrap();
    let set = be.set_of_size(1).unwrap();
    assert!(set == vec![0] || set == vec![1]);
    assert!((be.entropy_at_size(1).unwrap() - be.entropy_at_size(2).unwrap()).abs() < 0.05);

    let ex = select(&fx.model, &fx.dataset, &SelectionRequest::new(Method::Forward, 1).exclude([0])).unwrap();
    assert_eq!(ex.set_of_size(1).unwrap(), vec![1]);
}

#[test]
fn xor_selection_examples() {
    let fx = common::synthetic(Generator::XorDistractor, 2000, 0.0, 1);
    let fs = select(&fx.model, &fx.dataset, &SelectionRequest::new(Method::Forward, 2)).unwrap();
    assert_eq!(fs.set_of_size(2).unwrap(), vec![0, 1]);
    let be = select(&fx.model, &fx.dataset, &SelectionRequest::new(Method::Backward, 2)).unwrap();
    assert_eq!(be.set_of_size(2).unwrap(), vec![0, 1]);

    let locked = select(&fx.model, &fx.dataset, &SelectionRequest::new(Method::Forward, 3).locked([2])).unwrap();
    assert_eq!(locked.steps[0].group, 2);
    let h = locked.entropy_at_size(1).unwrap();
    assert!((h - 2f64.ln()).abs() < 0.05, "entropy {h}");

    let none = select(&fx.model, &fx.dataset, &SelectionRequest::new(Method::Backward, 3)).unwrap();
    assert!(none.steps.is_empty());
    assert_eq!(none.set_of_size(3).unwrap(), vec![0, 1, 2]);
}

#[test]
fn instance_level_uses_the_single_row() {
    let fx = common::synthetic(Generator::XorDistractor, 2000, 0.0, 1);
    let row = 17;
    let trace = select(&fx.model, &fx.dataset, &SelectionRequest::new(Method::Forward, 3).instance(row)).unwrap();
    assert_eq!(trace.level, Level::Instance);
    let scorer = ProxyScorer::new(&fx.model, &fx.dataset, Level::Instance, Some(row)).unwrap();
    for s in &trace.steps {
        let set: BTreeSet<usize> = trace.set_of_size(s.size_after).unwrap().into_iter().collect();
        let direct = fx
            .model
            .predict(fx.dataset.row(row), &scom::masking::Mask::from_set(&set, 3).unwrap())
            .unwrap()
            .entropy_nats;
        assert_eq!(s.entropy_nats, Some(direct));
        assert_eq!(scorer.entropy(&set).unwrap(), direct);
    }
}

#[test]
fn random_selection_is_seeded() {
    let fx = blocks();
    let req = SelectionRequest::new(Method::Random, 3).seed(99);
    let a = select(&fx.model, &fx.dataset, &req).unwrap();
    let b = select(&fx.model, &fx.dataset, &req).unwrap();
    assert_eq!(a, b);
    let full = select(&fx.model, &fx.dataset, &SelectionRequest::new(Method::Random, 6).seed(1)).unwrap();
    assert_eq!(full.set_of_size(6).unwrap(), (0..6).collect::<Vec<_>>());
}

#[test]
fn plugin_mi_agrees_with_entropy_decomposition_and_bounds() {
    let ds = generate_synthetic(&SyntheticSpec::new(Generator::CorrelatedBlocks, 1500, 8).with_noise(0.1)).unwrap();
    let n = ds.schema().num_groups();
    let label_entropy = entropy_of_labels(&ds);
    for bits in 1u32..(1 << n) {
        let subset: Vec<usize> = (0..n).filter(|g| bits >> g & 1 == 1).collect();
        let est = plugin_mi(&ds, &subset).unwrap();
        let oracle = common::mi_bits_by_entropies(&ds, &common::dims_of(&ds, &subset));
        assert!((est.mi_bits - oracle).abs() < 1e-9, "{subset:?}: {} vs {oracle}", est.mi_bits);
        assert!(est.mi_bits >= 0.0);
        assert!(est.mi_bits <= label_entropy + 1e-9);
    }
}

fn entropy_of_labels(ds: &scom::data::ConceptDataset) -> f64 {
    let mut counts = vec![0usize; ds.schema().num_classes];
    for &y in ds.labels() {
        counts[y] += 1;
    }
    let n = ds.len() as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum()
}

#[test]
fn exhaustive_search_examples() {
    let xor = generate_synthetic(&SyntheticSpec::new(Generator::XorDistractor, 1000, 3)).unwrap();
    assert_eq!(exhaustive_best_subset(&xor, 2, Objective::PluginMi).unwrap().subset, vec![0, 1]);
    assert_eq!(exhaustive_best_subset(&xor, 3, Objective::PluginMi).unwrap().subset, vec![0, 1, 2]);
    let dup = generate_synthetic(&SyntheticSpec::new(Generator::Duplicated, 1000, 3)).unwrap();
    assert_eq!(exhaustive_best_subset(&dup, 1, Objective::PluginMi).unwrap().subset, vec![0]);
    let big = generate_synthetic(&SyntheticSpec::new(Generator::CorrelatedBlocks, 50, 3).with_blocks(7, 2)).unwrap();
    assert!(matches!(
        exhaustive_best_subset(&big, 2, Objective::PluginMi).unwrap_err(),
        scom::Error::Refused(_)
    ));
}

#[test]
fn exhaustive_proxy_objective_agrees_with_greedy_on_xor() {
    let fx = common::synthetic(Generator::XorDistractor, 2000, 0.0, 1);
    let best = exhaustive_best_subset(&fx.dataset, 2, Objective::ProxyEntropy(&fx.model)).unwrap();
    assert_eq!(best.subset, vec![0, 1]);
    let be = select(&fx.model, &fx.dataset, &SelectionRequest::new(Method::Backward, 2)).unwrap();
    assert_eq!(be.entropy_at_size(2), Some(best.score));
}

#[test]
fn trace_json_shape() {
    let fx = common::synthetic(Generator::XorDistractor, 2000, 0.0, 1);
    let trace = select(&fx.model, &fx.dataset, &SelectionRequest::new(Method::Forward, 2)).unwrap();
    let v: serde_json::Value = serde_json::from_str(&trace.to_json().unwrap()).unwrap();
    assert_eq!(v["method"], "forward");
    assert_eq!(v["level"], "dataset");
    assert_eq!(v["schema_fingerprint"], fx.model.schema_fingerprint.as_str());
    let step = &v["steps"][0];
    assert!(step["group"].is_u64() && step["entropy_nats"].is_f64() && step["size_after"] == 1);
    let back: scom::selection::SelectionTrace = serde_json::from_value(v).unwrap();
    assert_eq!(back, trace);
}
