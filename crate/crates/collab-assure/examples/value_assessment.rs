//! The full value-assessment experiment: for each privacy budget, repeatedly
//! re-partition the data, train the baseline, the joint plaintext model and
//! the protocol model, and tabulate mean holdout accuracies. This is what
//! the `collab-assure assess` subcommand runs.
//!
//! ```bash
//! cargo run --release -p collab-assure --example value_assessment
//! ```

use collab_assure::data::{gen_iris_like, SplitPlan};
use collab_assure::experiment::{run_value_assessment, AssessOptions, Hyperparams};

fn main() -> anyhow::Result<()> {
    let dataset = gen_iris_like(1234);
    println!("{dataset}\n");

    let hyper = Hyperparams {
        hidden: vec![8],
        epochs: 50,
        batch_size: 32,
        learning_rate: 0.1,
        l2: 0.01,
    };
    let opts = AssessOptions {
        repetitions: 5,
        seed: 0,
        baseline_hyper: Some(Hyperparams {
            hidden: vec![8],
            epochs: 120,
            batch_size: 16,
            learning_rate: 0.3,
            l2: 0.01,
        }),
        z_max: Some(8_000_000),
        ..AssessOptions::default()
    };

    // Three regimes: generous budget (joint model intact), mid, and a budget
    // so tight the noise erases the benefit.
    let report = run_value_assessment(
        &dataset,
        &SplitPlan::default(),
        &[10.0, 1.0, 0.1],
        &hyper,
        &opts,
        None,
    )?;

    println!("{:>8} {:>14} {:>10} {:>10}", "epsilon", "model", "accuracy", "time");
    for agg in &report.aggregates {
        println!(
            "{:>8} {:>14} {:>10.4} {:>9.3}s",
            agg.epsilon.map_or("-".into(), |e| format!("{e}")),
            agg.model,
            agg.mean_accuracy,
            agg.mean_time_s
        );
    }
    println!("\n(each row is the mean of {} re-partitioned runs)", opts.repetitions);
    Ok(())
}
