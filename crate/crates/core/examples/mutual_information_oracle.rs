//! Plug-in mutual information and exhaustive search, compared with the
//! greedy entropy proxy.

use scom::data::{generate_synthetic, Generator, SyntheticSpec};
use scom::model::{train_output_model, TrainConfig};
use scom::selection::{exhaustive_best_subset, plugin_mi, select, Method, Objective, SelectionRequest};

fn main() -> scom::Result<()> {
    let spec = SyntheticSpec::new(Generator::CorrelatedBlocks, 2000, 7).with_blocks(3, 2);
    let dataset = generate_synthetic(&spec)?;
    let config = TrainConfig {
        seed: 7,
        epochs: 60,
        ..TrainConfig::default()
    };
    let (model, _) = train_output_model(&dataset, &config)?;
    let n = model.num_groups();
    let trace = select(&model, &dataset, &SelectionRequest::new(Method::Backward, 0))?;

    println!("k  greedy set     MI bits  exhaustive set  MI bits");
    for k in 1..=n {
        let greedy = trace.set_of_size(k).unwrap_or_default();
        let greedy_mi = plugin_mi(&dataset, &greedy)?.mi_bits;
        let best = exhaustive_best_subset(&dataset, k, Objective::PluginMi)?;
        println!(
            "{k}  {:<14} {greedy_mi:.4}   {:<15} {:.4}",
            format!("{greedy:?}"),
            format!("{:?}", best.subset),
            best.score
        );
    }
    Ok(())
}
