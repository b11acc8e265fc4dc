//! Trains a mask-aware output model on a synthetic dataset, saves the
//! checkpoint and reloads it.

use scom::data::{generate_synthetic, Generator, Split, SyntheticSpec};
use scom::masking::Mask;
use scom::model::{train_output_model, MaskAssignment, OutputModel, TrainConfig};

fn main() -> scom::Result<()> {
    let dataset = generate_synthetic(&SyntheticSpec::new(Generator::XorDistractor, 2000, 1).with_noise(0.05))?;
    let config = TrainConfig {
        seed: 1,
        epochs: 60,
        ..TrainConfig::default()
    };
    let (model, log) = train_output_model(&dataset, &config)?;
    for record in log.epochs.iter().step_by(10) {
        println!("epoch {:>3}  loss {:.4}", record.epoch, record.mean_loss);
    }

    let dir = tempfile::tempdir().expect("temporary directory");
    let path = dir.path().join("model.json");
    model.save(&path)?;
    let loaded = OutputModel::load(&path)?;
    println!("checkpoint sha256 {}", loaded.content_hash()?);
    assert_eq!(loaded, model);

    let n = model.num_groups();
    for bits in 0..(1u32 << n) {
        let mask = Mask::new((0..n).map(|g| bits >> g & 1 == 1).collect());
        let eval = loaded.evaluate(&dataset, &MaskAssignment::Shared(mask.clone()), Some(Split::Test))?;
        println!("mask {:?}  test accuracy {:.3}", mask.selected(), eval.accuracy);
    }
    Ok(())
}
