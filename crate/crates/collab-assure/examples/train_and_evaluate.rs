//! Plaintext training of the from-scratch network on synthetic data, plus
//! the dataset utilities: generation, splitting and CSV round-trips.
//!
//! ```bash
//! cargo run --release -p collab-assure --example train_and_evaluate
//! ```

use collab_assure::data::{gen_synthetic_binary, load_csv, split, write_csv, SplitPlan};
use collab_assure::nn::{evaluate, train_plaintext, LayerSpec, TrainConfig};

fn main() -> anyhow::Result<()> {
    let dataset = gen_synthetic_binary(2000, 4, 0.5, 1);
    println!("{dataset}");

    let plan = SplitPlan {
        holdout_fraction: 0.3,
        d1_fraction: 0.2,
        d2_fraction: 0.5,
        skew: None,
        seed: 1,
    };
    let (d1, d2, d_hold) = split(&dataset, &plan)?;
    println!("split: {} / {} / {} rows (d1 / d2 / holdout)", d1.len(), d2.len(), d_hold.len());

    let spec = LayerSpec::with_hidden(4, &[8], 2)?;
    let config = TrainConfig {
        epochs: 30,
        batch_size: 32,
        learning_rate: 0.3,
        l2: 0.01,
    };

    let small = train_plaintext(&d1, &spec, &config, 5)?;
    let joint = d1.concat(&d2, "joint");
    let big = train_plaintext(&joint, &spec, &config, 5)?;
    println!(
        "holdout accuracy: {:.4} trained on {} rows, {:.4} trained on {} rows",
        evaluate(&small, &d_hold)?,
        d1.len(),
        evaluate(&big, &d_hold)?,
        joint.len()
    );

    // Datasets round-trip through CSV; features re-standardize on load.
    let dir = std::env::temp_dir().join("collab-assure-example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("synthetic.csv");
    write_csv(&dataset, &path)?;
    let reloaded = load_csv(&path, "label", 2)?;
    println!("wrote and reloaded {}: {} rows", path.display(), reloaded.len());
    Ok(())
}
