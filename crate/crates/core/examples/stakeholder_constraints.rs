//! Locked-in and excluded concepts customise a selection without retraining.

use scom::data::{generate_synthetic, Generator, Split, SyntheticSpec};
use scom::model::{train_output_model, MaskAssignment, TrainConfig};
use scom::selection::{select, Method, SelectionRequest};

fn main() -> scom::Result<()> {
    let spec = SyntheticSpec::new(Generator::CorrelatedBlocks, 2000, 5).with_blocks(3, 2);
    let dataset = generate_synthetic(&spec)?;
    let config = TrainConfig {
        seed: 5,
        epochs: 60,
        ..TrainConfig::default()
    };
    let (model, _) = train_output_model(&dataset, &config)?;
    let schema = dataset.schema();
    let index = |name: &str| schema.group_index(name).expect("known group");
    let checkpoint = model.content_hash()?;

    let cases = [
        ("unconstrained", SelectionRequest::new(Method::Backward, 3)),
        (
            "b0_m0 excluded",
            SelectionRequest::new(Method::Backward, 3).exclude([index("b0_m0")]),
        ),
        (
            "b2_m1 locked in",
            SelectionRequest::new(Method::Forward, 3).locked([index("b2_m1")]),
        ),
    ];
    for (label, request) in cases {
        let trace = select(&model, &dataset, &request)?;
        let mask = trace.mask_of_size(3, schema.num_groups())?;
        let names: Vec<&str> = mask.selected().iter().map(|&g| schema.groups[g].name.as_str()).collect();
        let acc = model
            .evaluate(&dataset, &MaskAssignment::Shared(mask), Some(Split::Test))?
            .accuracy;
        println!("{label:<16} {names:?}  test accuracy {acc:.3}");
    }
    assert_eq!(model.content_hash()?, checkpoint);
    println!("checkpoint unchanged: {}", &checkpoint[..16]);
    Ok(())
}
