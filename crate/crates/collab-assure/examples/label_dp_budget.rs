//! The label-DP machinery: batch sensitivity, Gaussian noise at
//! sigma = 1/epsilon, the non-negative split used by integer-only circuits,
//! and the accountant that enforces the session budget.
//!
//! ```bash
//! cargo run --release -p collab-assure --example label_dp_budget
//! ```

use collab_assure::label_dp::{
    batch_sensitivity, compose_parallel, compose_sequential, nonneg_split, per_epoch_budget,
    sample_noise, PrivacyAccountant,
};
use collab_assure::nn::{forward_batch, full_z_grads, init_params, LayerSpec};
use collab_assure::{rng_streams, seeded_rng};

fn main() -> anyhow::Result<()> {
    // Sensitivity of a real batch: a single label swap can move the batch
    // gradient by at most (2/|B|) max ||dz_i/dw||.
    let spec = LayerSpec::new(vec![3, 5, 2])?;
    let params = init_params(&spec, 3)?;
    let features: Vec<Vec<f64>> = (0..8)
        .map(|i| vec![i as f64 / 4.0 - 1.0, (i % 3) as f64 - 1.0, 0.5])
        .collect();
    let traces = forward_batch(&params, &features)?;
    let zg = full_z_grads(&params, &traces);
    let sens = batch_sensitivity(&zg, features.len())?;
    println!("batch of {}: sensitivity {:.6}", features.len(), sens.delta);

    // Budget arithmetic: epochs compose sequentially, disjoint batches in an
    // epoch compose in parallel.
    let total = 1.0;
    let epochs = 25;
    let per_epoch = per_epoch_budget(total, epochs);
    println!(
        "budget {total} over {epochs} epochs: {per_epoch:.4} per epoch; \
         sequential recomposition {:.4}, parallel within an epoch {:.4}",
        compose_sequential(&vec![per_epoch; epochs]),
        compose_parallel(&vec![per_epoch; 4])
    );

    // Noise at sigma = 1/epsilon, from a dedicated seeded stream.
    let mut rng = seeded_rng(11, rng_streams::DP_NOISE);
    let noise = sample_noise(5, per_epoch, &mut rng)?;
    println!("noise at epsilon {per_epoch:.4} (sigma {:.2}): {:?}", noise.sigma_dp, rounded(&noise.eta));

    // The non-negative encoding: both halves are >= 0 and subtract back
    // exactly.
    let (shifted, magnitude) = nonneg_split(&noise.eta);
    println!("eta + |eta|: {:?}", rounded(&shifted));
    println!("      |eta|: {:?}", rounded(&magnitude));

    // The accountant refuses to overspend.
    let mut accountant = PrivacyAccountant::new(total, epochs)?;
    for epoch in 0..epochs as u64 {
        for batch in 0..3 {
            accountant.charge(epoch, batch, per_epoch, Some(sens.delta))?;
        }
    }
    println!(
        "after {} charges: spent {:.6} of {total}",
        accountant.ledger().len(),
        accountant.spent()
    );
    let refused = accountant.charge(epochs as u64, 0, per_epoch, None);
    println!("one more epoch would overspend: {}", refused.unwrap_err());
    println!("\nledger (first three lines):");
    for line in accountant.ledger_json_lines().lines().take(3) {
        println!("  {line}");
    }
    Ok(())
}

fn rounded(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| (x * 1000.0).round() / 1000.0).collect()
}
