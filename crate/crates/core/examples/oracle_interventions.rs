//! Accuracy as an oracle fixes more of the selected concepts.

use scom::data::{generate_synthetic, Generator, OracleKind, SyntheticSpec};
use scom::intervention::{intervention_sweep, InterventionOrder, InterventionPlan};
use scom::model::{train_output_model, TrainConfig};
use scom::selection::{select, Method, SelectionRequest};

fn main() -> scom::Result<()> {
    let spec = SyntheticSpec::new(Generator::CorrelatedBlocks, 2000, 6)
        .with_blocks(3, 1)
        .with_noise(0.15);
    let dataset = generate_synthetic(&spec)?;
    let config = TrainConfig {
        seed: 6,
        epochs: 60,
        ..TrainConfig::default()
    };
    let (model, _) = train_output_model(&dataset, &config)?;
    let n = model.num_groups();
    let trace = select(&model, &dataset, &SelectionRequest::new(Method::Backward, 0))?;
    let plan = InterventionPlan {
        order: InterventionOrder::Random { seed: 0 },
        oracle: OracleKind::ClassLevel,
        max_interventions: None,
    };
    let ks: Vec<usize> = (1..=n).collect();
    let report = intervention_sweep(&model, &dataset, &trace, &ks, &plan, 10)?;
    print!("{}", report.to_csv());
    for k in ks {
        println!("k={k}: gain per intervention {:.4}", report.gain_per_intervention(k).unwrap_or(0.0));
    }
    Ok(())
}
