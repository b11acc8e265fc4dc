//! Evaluates per-instance concept selections supplied from outside, such as
//! sets chosen by people.

use scom::data::{generate_synthetic, Generator, Split, SyntheticSpec};
use scom::model::{train_output_model, TrainConfig};
use scom::report::{evaluate_selection_file, SelectionEntry, SelectionFile};

fn main() -> scom::Result<()> {
    let dataset = generate_synthetic(&SyntheticSpec::new(Generator::XorDistractor, 2000, 4).with_noise(0.05))?;
    let config = TrainConfig {
        seed: 4,
        epochs: 60,
        ..TrainConfig::default()
    };
    let (model, _) = train_output_model(&dataset, &config)?;

    // Alternate between a helpful pair and a distractor-heavy pair.
    let rows = dataset.rows_in(Split::Test);
    let file = SelectionFile {
        rows: rows
            .iter()
            .enumerate()
            .map(|(i, &r)| SelectionEntry {
                instance_id: dataset.instance_id(r),
                selected: if i % 2 == 0 { vec!["c1".into(), "c2".into()] } else { vec!["c1".into(), "c3".into()] },
            })
            .collect(),
    };
    let dir = tempfile::tempdir().expect("temporary directory");
    let path = dir.path().join("selections.csv");
    file.save(&path)?;
    let loaded = SelectionFile::load(&path)?;

    let report = evaluate_selection_file(&model, &dataset, &loaded, None)?;
    print!("{}", report.to_csv());
    Ok(())
}
