//! An observed zero and a masked-out concept are different inputs: the model
//! sees the mask alongside the masked values.

use scom::data::{generate_synthetic, Generator, SyntheticSpec};
use scom::masking::{augment, Mask};
use scom::model::{train_output_model, TrainConfig};

fn main() -> scom::Result<()> {
    let dataset = generate_synthetic(&SyntheticSpec::new(Generator::InformativeZero, 2000, 1))?;
    let config = TrainConfig {
        seed: 1,
        epochs: 60,
        ..TrainConfig::default()
    };
    let (model, _) = train_output_model(&dataset, &config)?;

    let concepts = [0.0, 1.0];
    for (label, mask) in [
        ("c1 observed as 0", Mask::new(vec![true, false])),
        ("c1 masked out", Mask::empty(2)),
    ] {
        let input = augment(&concepts, &mask, model.schema())?;
        let p = model.predict(&concepts, &mask)?;
        println!(
            "{label:<18} input {:?}  p(y=1) {:.3}  entropy {:.3} nats",
            input.values(),
            p.probs[1],
            p.entropy_nats
        );
    }
    Ok(())
}
