use proptest::prelude::*;

use scom::data::{
    class_level_oracle, generate_synthetic, load_dataset, read_dataset, soft_oracle, ConceptDataset,
    ConceptGroup, ConceptKind, ConceptSchema, DatasetParts, Generator, Split, SyntheticSpec,
};
use scom::nn::Matrix;
use scom::selection::plugin_mi;

fn round_trip(ds: &ConceptDataset) -> ConceptDataset {
    let dir = tempfile::tempdir().unwrap();
    let schema = dir.path().join("schema.json");
    let data = dir.path().join("data.csv");
    ds.save(&schema, &data).unwrap();
    load_dataset(&schema, &data, 12345).unwrap()
}

fn dataset_strategy() -> impl Strategy<Value = ConceptDataset> {
    (1usize..4, 1usize..3, 2usize..5, 1usize..25, any::<bool>(), any::<bool>()).prop_flat_map(
        |(groups, dims, classes, rows, with_truth, with_ids)| {
            let d = groups * dims;
            (
                prop::collection::vec(prop::num::f64::NORMAL | prop::num::f64::ZERO | prop::num::f64::SUBNORMAL, rows * d),
                prop::collection::vec(0..classes, rows),
                prop::collection::vec(prop::bool::ANY, rows * d),
                prop::collection::vec("[a-z,\"][a-z ,\"]{0,4}[a-z,\"]", rows),
                prop::collection::vec(0u8..3, rows),
            )
                .prop_map(move |(values, labels, truth, identity, splits)| {
                    let schema = ConceptSchema::new(
                        (0..groups)
                            .map(|g| ConceptGroup::new(format!("g{g}"), dims, ConceptKind::Logit))
                            .collect(),
                        classes,
                        None,
                    )
                    .unwrap();
                    let mut parts = DatasetParts::new(schema, Matrix::from_vec(rows, d, values).unwrap(), labels);
                    if with_truth {
                        parts.true_concepts = Some(
                            Matrix::from_vec(rows, d, truth.iter().map(|&b| b as u8 as f64).collect()).unwrap(),
                        );
                    }
                    parts.identity = Some(identity.clone());
                    parts.split = Some(
                        splits
                            .iter()
                            .map(|s| [Split::Train, Split::Val, Split::Test][*s as usize])
                            .collect(),
                    );
                    if with_ids {
                        parts.instance_ids = Some((0..rows).map(|r| format!("id-{r}")).collect());
                    }
                    ConceptDataset::new(parts, 0).unwrap()
                })
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn save_then_load_is_bit_exact(ds in dataset_strategy()) {
        let back = round_trip(&ds);
        prop_assert_eq!(back.schema(), ds.schema());
        let bits = |m: &Matrix| m.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(back.concepts()), bits(ds.concepts()));
        prop_assert_eq!(back, ds);
    }
}

#[test]
fn synthetic_datasets_round_trip() {
    for g in [
        Generator::Duplicated,
        Generator::XorDistractor,
        Generator::InformativeZero,
        Generator::CorrelatedBlocks,
    ] {
        let ds = generate_synthetic(&SyntheticSpec::new(g, 300, 4).with_noise(0.1)).unwrap();
        assert_eq!(round_trip(&ds), ds);
    }
}

#[test]
fn cub_shaped_schema_layout() {
    let groups: Vec<ConceptGroup> = (0..28)
        .map(|g| ConceptGroup::new(format!("attr{g}"), 4, ConceptKind::Logit))
        .collect();
    let schema = ConceptSchema::new(groups, 200, None).unwrap();
    assert_eq!(schema.total_dims(), 112);
    assert_eq!(schema.num_groups(), 28);
    assert_eq!(schema.augmented_dims(), 140);

    let mut csv = schema.concept_columns().join(",");
    csv.push_str(",label\n");
    let row = vec!["0.5"; 112].join(",");
    csv.push_str(&format!("{row},199\n{row},200\n"));
    let err = read_dataset(schema, csv.as_bytes(), 0).unwrap_err();
    match err {
        scom::Error::Ingest { row, column, .. } => {
            assert_eq!(row, 2);
            assert_eq!(column, "label");
        }
        other => panic!("unexpected error {other}"),
    }
}

#[test]
fn missing_files_name_their_path() {
    let dir = tempfile::tempdir().unwrap();
    let ds = generate_synthetic(&SyntheticSpec::new(Generator::Duplicated, 10, 0)).unwrap();
    let schema = dir.path().join("schema.json");
    ds.schema().save(&schema).unwrap();
    let missing = dir.path().join("absent.csv");
    let err = load_dataset(&schema, &missing, 0).unwrap_err();
    assert!(err.to_string().contains("absent.csv"), "{err}");
}

#[test]
fn generator_information_structure() {
    let dup = generate_synthetic(&SyntheticSpec::new(Generator::Duplicated, 1000, 1)).unwrap();
    assert!((plugin_mi(&dup, &[0]).unwrap().mi_bits - 1.0).abs() < 0.01);
    assert_eq!(plugin_mi(&dup, &[0, 1]).unwrap().mi_bits, plugin_mi(&dup, &[0]).unwrap().mi_bits);

    let xor = generate_synthetic(&SyntheticSpec::new(Generator::XorDistractor, 1000, 1)).unwrap();
    assert!(plugin_mi(&xor, &[0]).unwrap().mi_bits < 0.02);
    assert!(plugin_mi(&xor, &[1]).unwrap().mi_bits < 0.02);
    assert!(plugin_mi(&xor, &[0, 1]).unwrap().mi_bits > 0.95);

    let blocks = generate_synthetic(&SyntheticSpec::new(Generator::CorrelatedBlocks, 2000, 1).with_blocks(3, 3)).unwrap();
    for b in 0..3 {
        for m in 1..3 {
            let (a, c) = (b * 3, b * 3 + m);
            let agree = (0..blocks.len())
                .filter(|&r| blocks.concepts().get(r, a) == blocks.concepts().get(r, c))
                .count() as f64
                / blocks.len() as f64;
            // Agreement rate 1 - q gives correlation 1 - 2q for balanced bits.
            assert!(2.0 * agree - 1.0 >= 0.9, "block {b} member {m}: agreement {agree}");
        }
    }
}

#[test]
fn oracle_tables_from_synthetic_data() {
    let dup = generate_synthetic(&SyntheticSpec::new(Generator::Duplicated, 500, 2).with_noise(0.2)).unwrap();
    let table = class_level_oracle(&dup).unwrap();
    assert_eq!(table.get(0).unwrap(), &[0.0, 0.0]);
    assert_eq!(table.get(1).unwrap(), &[1.0, 1.0]);

    let blocks = generate_synthetic(&SyntheticSpec::new(Generator::CorrelatedBlocks, 2000, 2).with_noise(0.1)).unwrap();
    let soft = soft_oracle(&blocks).unwrap();
    let truth = blocks.true_concepts().unwrap();
    for class in 0..blocks.schema().num_classes {
        let rows: Vec<usize> = (0..blocks.len()).filter(|&r| blocks.labels()[r] == class).collect();
        let d = blocks.schema().total_dims();
        let mut mean = vec![0.0; d];
        for &r in &rows {
            for (m, v) in mean.iter_mut().zip(truth.row(r)) {
                *m += v;
            }
        }
        let mean: Vec<f64> = mean.iter().map(|m| m / rows.len() as f64).collect();
        let got = soft.get(&class.to_string()).unwrap();
        for (a, b) in got.iter().zip(&mean) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
