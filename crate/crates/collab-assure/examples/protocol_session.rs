//! One full assurance session, in process: party two offers a dataset with
//! encrypted labels, party one trains its baseline and the joint model
//! (label-dependent gradient terms computed homomorphically, decrypted only
//! blinded and noised), and both sides receive the verdict.
//!
//! ```bash
//! cargo run --release -p collab-assure --example protocol_session
//! ```

use collab_assure::data::{gen_iris_like, split, SplitPlan};
use collab_assure::nn::LayerSpec;
use collab_assure::protocol::{run_in_process, NoiseBudget, SessionConfig, VerdictDetail};

fn main() -> anyhow::Result<()> {
    let dataset = gen_iris_like(1234);
    let (d1, d2, d_hold) = split(&dataset, &SplitPlan { seed: 3, ..SplitPlan::default() })?;
    println!(
        "party one holds {} labelled rows and a {}-row holdout; party two offers {} rows",
        d1.len(),
        d_hold.len(),
        d2.len()
    );

    let layers = LayerSpec::with_hidden(4, &[8], 3)?;
    let mut config = SessionConfig::new(layers, NoiseBudget::Total(10.0), 50, 32, 99);
    config.z_max = 8_000_000;
    config.verdict_detail = VerdictDetail::WithAccuracies;
    println!(
        "session: {} epochs, batch {}, privacy budget {:?}, fixed-point scales {} / {}",
        config.epochs, config.batch_size, config.noise, config.scale_z, config.scale_noise
    );

    let (p1, p2) = run_in_process(&config, &d1, &d2, &d_hold)?;

    println!(
        "\nparty one: baseline accuracy {:.4}, joint accuracy {:.4} over {} noisy exchanges",
        p1.baseline_accuracy, p1.joint_accuracy, p1.exchanges
    );
    let mut per_epoch: Vec<f64> = Vec::new();
    for entry in &p1.ledger {
        if per_epoch.len() <= entry.epoch as usize {
            per_epoch.resize(entry.epoch as usize + 1, 0.0);
        }
        per_epoch[entry.epoch as usize] = per_epoch[entry.epoch as usize].max(entry.epsilon);
    }
    println!(
        "ledger: {} entries at {:.4} per batch, composing to {:.4} of the total budget",
        p1.ledger.len(),
        config.epsilon_per_batch().unwrap_or(0.0),
        collab_assure::label_dp::compose_sequential(&per_epoch)
    );
    println!("party two served {} exchanges and saw only blinded values", p2.exchanges);

    assert_eq!(p1.verdict, p2.verdict);
    println!(
        "\nverdict (identical on both sides): collaboration {} the baseline{}",
        if p1.verdict.improved { "IMPROVES on" } else { "does not improve on" },
        match p1.verdict.accuracies {
            Some((a, b)) => format!(" ({a:.4} -> {b:.4})"),
            None => String::new(),
        }
    );
    Ok(())
}
