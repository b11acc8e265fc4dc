//! Accuracy-vs-k table for greedy and random selection at dataset and
//! instance level.

use scom::data::{generate_synthetic, Generator, SyntheticSpec};
use scom::model::{train_output_model, TrainConfig};
use scom::report::{accuracy_report, ReportSpec};
use scom::selection::{Level, Method};

fn main() -> scom::Result<()> {
    let spec = SyntheticSpec::new(Generator::CorrelatedBlocks, 1500, 2)
        .with_blocks(2, 2)
        .with_noise(0.1);
    let dataset = generate_synthetic(&spec)?;
    let config = TrainConfig {
        seed: 2,
        epochs: 60,
        ..TrainConfig::default()
    };
    let (model, _) = train_output_model(&dataset, &config)?;
    let spec = ReportSpec::new(
        vec![Method::Backward, Method::Forward, Method::Random],
        vec![Level::Dataset, Level::Instance],
        vec![0, 1, 2],
    );
    let report = accuracy_report(&model, &dataset, &spec, None)?;
    print!("{}", report.to_csv());
    Ok(())
}
