//! Why the verdict can be trusted: a party without domain knowledge labels
//! by a feature-independent coin, and such labels cannot beat the baseline
//! on a balanced holdout. This example measures all three regimes; the
//! `collab-assure lemma-check` subcommand prints the same report.
//!
//! ```bash
//! cargo run --release -p collab-assure --example lemma_checks
//! ```

use collab_assure::experiment::check_lemma2;

fn main() -> anyhow::Result<()> {
    let report = check_lemma2(10, 400, 7)?;

    println!("random labels against a balanced holdout (expect one half):");
    for (p, acc) in &report.balanced {
        println!("  labeling probability {p}: mean accuracy {acc:.4}");
    }

    println!(
        "\nimbalanced holdout (fraction of ones q = {}), constant label 1:",
        report.imbalanced_q
    );
    println!(
        "  accuracy {:.4} — the error drops to 1 - q = {:.2}, beating one half,\n  \
         which is exactly why the holdout must be balanced",
        report.imbalanced_accuracy,
        1.0 - report.imbalanced_q
    );

    println!(
        "\nholdout balance drawn uniformly per trial ({} trials):",
        report.uniform_q_trials
    );
    println!("  grand mean accuracy {:.4} (expect one half)", report.uniform_q_grand_mean);
    Ok(())
}
