//! Greedy forward selection and backward elimination on the XOR task, where
//! neither parity bit is informative alone.

use scom::data::{generate_synthetic, Generator, SyntheticSpec};
use scom::model::{train_output_model, TrainConfig};
use scom::selection::{select, Method, SelectionRequest};

fn main() -> scom::Result<()> {
    let dataset = generate_synthetic(&SyntheticSpec::new(Generator::XorDistractor, 2000, 3).with_noise(0.05))?;
    let config = TrainConfig {
        seed: 3,
        epochs: 60,
        ..TrainConfig::default()
    };
    let (model, _) = train_output_model(&dataset, &config)?;
    let n = model.num_groups();
    let names: Vec<&str> = dataset.schema().groups.iter().map(|g| g.name.as_str()).collect();

    for (method, request) in [
        (Method::Forward, SelectionRequest::new(Method::Forward, n)),
        (Method::Backward, SelectionRequest::new(Method::Backward, 0)),
    ] {
        let trace = select(&model, &dataset, &request)?;
        println!("{method}:");
        let (lo, hi) = trace.size_range();
        for k in lo..=hi {
            let set = trace.set_of_size(k).unwrap_or_default();
            let picked: Vec<&str> = set.iter().map(|&g| names[g]).collect();
            let h = trace.entropy_at_size(k).map_or("-".into(), |h| format!("{h:.4}"));
            println!("  k={k}  {{{}}}  mean entropy {h}", picked.join(", "));
        }
    }
    Ok(())
}
