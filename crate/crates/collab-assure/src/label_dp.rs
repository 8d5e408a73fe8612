//! Gaussian label differential privacy for the gradient exchange.
//!
//! Neighboring datasets differ in exactly one label, so the sensitivity of a
//! batch gradient is `(2/|B|) * max_{i,s} ||dz_i(s)/dw||_2`: swapping one
//! sample's label moves the gradient by at most the difference of two
//! per-class derivative rows. Noise at `sigma = 1/epsilon` times that
//! sensitivity makes each batch epsilon-GLDP; disjoint batches within an
//! epoch compose in parallel (max) and epochs compose sequentially (root sum
//! of squares).
//!
//! Gaussian draws use the ziggurat sampler from `rand_distr` on a dedicated
//! seeded ChaCha20 stream, so protocol transcripts are reproducible.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;
use thiserror::Error;

use crate::nn::ZGradients;

#[derive(Debug, Error, PartialEq)]
pub enum DpError {
    #[error("epsilon must be positive, got {0}")]
    InvalidEpsilon(f64),
    #[error("noise dimension must be at least 1")]
    EmptyNoise,
    #[error("cannot compute sensitivity of an empty batch")]
    EmptyBatch,
    #[error("privacy budget exhausted: spending {attempted} of {total}")]
    BudgetExhausted { attempted: f64, total: f64 },
}

/// The per-batch L2 sensitivity of the gradient under a single label swap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensitivityValue {
    pub delta: f64,
}

/// `(2 / batch_size) * max_{i,s} ||g(s, i)||_2` over the given derivative
/// rows. Depends only on label-free quantities, so the data-receiving party
/// can evaluate it locally.
pub fn batch_sensitivity(
    z_grads: &ZGradients,
    batch_size: usize,
) -> Result<SensitivityValue, DpError> {
    if z_grads.samples() == 0 || batch_size == 0 {
        return Err(DpError::EmptyBatch);
    }
    Ok(SensitivityValue {
        delta: 2.0 / batch_size as f64 * z_grads.max_row_norm(),
    })
}

/// An i.i.d. Gaussian noise vector at scale `sigma = 1/epsilon`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseVector {
    pub eta: Vec<f64>,
    pub sigma_dp: f64,
}

pub fn sample_noise<R: Rng>(
    coords: usize,
    epsilon_batch: f64,
    rng: &mut R,
) -> Result<NoiseVector, DpError> {
    if !(epsilon_batch > 0.0) {
        return Err(DpError::InvalidEpsilon(epsilon_batch));
    }
    if coords == 0 {
        return Err(DpError::EmptyNoise);
    }
    let sigma_dp = 1.0 / epsilon_batch;
    let normal = Normal::new(0.0, sigma_dp).map_err(|_| DpError::InvalidEpsilon(epsilon_batch))?;
    Ok(NoiseVector {
        eta: (0..coords).map(|_| normal.sample(rng)).collect(),
        sigma_dp,
    })
}

/// Per-epoch budget such that `epochs` sequential epochs compose back to the
/// total: `epsilon_total / sqrt(epochs)`.
pub fn per_epoch_budget(epsilon_total: f64, epochs: usize) -> f64 {
    epsilon_total / (epochs as f64).sqrt()
}

/// Sequential composition of Gaussian label-DP mechanisms on the same data:
/// the Euclidean norm of the individual budgets.
pub fn compose_sequential(epsilons: &[f64]) -> f64 {
    epsilons.iter().map(|e| e * e).sum::<f64>().sqrt()
}

/// Parallel composition over disjoint data: the maximum budget.
pub fn compose_parallel(epsilons: &[f64]) -> f64 {
    epsilons.iter().cloned().fold(0.0, f64::max)
}

/// Splits a noise vector into the two non-negative vectors
/// `(eta + |eta|, |eta|)` whose difference recovers `eta` exactly; used by
/// circuits that only accept non-negative inputs.
pub fn nonneg_split(eta: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let magnitude: Vec<f64> = eta.iter().map(|e| e.abs()).collect();
    let shifted: Vec<f64> = eta.iter().zip(&magnitude).map(|(e, m)| e + m).collect();
    (shifted, magnitude)
}

/// One noise purchase in the session ledger. The decrypting party never
/// learns the sensitivity, so its ledger carries `None` there.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LedgerEntry {
    pub epoch: u64,
    pub batch: u32,
    pub epsilon: f64,
    pub sensitivity: Option<f64>,
}

/// Tracks the total budget across a session: per-epoch spends compose in
/// parallel (batches are disjoint), epochs compose sequentially. Refuses any
/// charge that would push the sequential total past `epsilon_total`.
#[derive(Debug, Clone)]
pub struct PrivacyAccountant {
    pub epsilon_total: f64,
    pub epochs: usize,
    pub epsilon_per_epoch: f64,
    ledger: Vec<LedgerEntry>,
}

impl PrivacyAccountant {
    pub fn new(epsilon_total: f64, epochs: usize) -> Result<Self, DpError> {
        if !(epsilon_total > 0.0) {
            return Err(DpError::InvalidEpsilon(epsilon_total));
        }
        Ok(PrivacyAccountant {
            epsilon_total,
            epochs: epochs.max(1),
            epsilon_per_epoch: per_epoch_budget(epsilon_total, epochs.max(1)),
            ledger: Vec::new(),
        })
    }

    pub fn charge(
        &mut self,
        epoch: u64,
        batch: u32,
        epsilon: f64,
        sensitivity: Option<f64>,
    ) -> Result<(), DpError> {
        if !(epsilon > 0.0) {
            return Err(DpError::InvalidEpsilon(epsilon));
        }
        let entry = LedgerEntry {
            epoch,
            batch,
            epsilon,
            sensitivity,
        };
        self.ledger.push(entry);
        let spent = self.spent();
        if spent > self.epsilon_total + 1e-12 {
            self.ledger.pop();
            return Err(DpError::BudgetExhausted {
                attempted: spent,
                total: self.epsilon_total,
            });
        }
        Ok(())
    }

    /// Total budget consumed so far: within each epoch the maximum entry,
    /// across epochs the Euclidean norm.
    pub fn spent(&self) -> f64 {
        let mut per_epoch: Vec<(u64, f64)> = Vec::new();
        for entry in &self.ledger {
            match per_epoch.iter_mut().find(|(e, _)| *e == entry.epoch) {
                Some((_, eps)) => *eps = eps.max(entry.epsilon),
                None => per_epoch.push((entry.epoch, entry.epsilon)),
            }
        }
        compose_sequential(&per_epoch.iter().map(|(_, e)| *e).collect::<Vec<_>>())
    }

    pub fn ledger(&self) -> &[LedgerEntry] {
        &self.ledger
    }

    /// One JSON object per entry: `{epoch, batch, epsilon, sensitivity}`.
    pub fn ledger_json_lines(&self) -> String {
        self.ledger
            .iter()
            .map(|e| serde_json::to_string(e).expect("ledger entries serialize"))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{forward_batch, full_z_grads, init_params, LayerSpec};
    use crate::seeded_rng;

    #[test]
    fn sensitivity_plugin_values() {
        // One sample, one class, a single row of known norm 1.5.
        let params = init_params(&LayerSpec::new(vec![2, 1]).unwrap(), 0).unwrap();
        let traces = forward_batch(&params, &[vec![0.9, 1.2]]).unwrap();
        let zg = full_z_grads(&params, &traces);
        // dz_0/dw = the input itself for a single linear layer: norm 1.5.
        let sens = batch_sensitivity(&zg, 16).unwrap();
        assert!((sens.delta - 2.0 / 16.0 * 1.5).abs() < 1e-12);
        assert!((sens.delta - 0.1875).abs() < 1e-12);

        let zeros = forward_batch(&params, &[vec![0.0, 0.0]]).unwrap();
        let zg = full_z_grads(&params, &zeros);
        assert_eq!(batch_sensitivity(&zg, 4).unwrap().delta, 0.0);

        assert!(matches!(batch_sensitivity(&zg, 0), Err(DpError::EmptyBatch)));
    }

    #[test]
    fn noise_scale_and_determinism() {
        let mut rng = seeded_rng(1, crate::rng_streams::DP_NOISE);
        let v = sample_noise(100_000, 1.0, &mut rng).unwrap();
        let mean: f64 = v.eta.iter().sum::<f64>() / 1e5;
        let std = (v.eta.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / 1e5).sqrt();
        assert!(std > 0.99 && std < 1.01, "std {std}");

        let small = sample_noise(10, 10.0, &mut rng).unwrap();
        assert!((small.sigma_dp - 0.1).abs() < 1e-15);

        let mut r1 = seeded_rng(7, crate::rng_streams::DP_NOISE);
        let mut r2 = seeded_rng(7, crate::rng_streams::DP_NOISE);
        assert_eq!(
            sample_noise(32, 0.5, &mut r1).unwrap(),
            sample_noise(32, 0.5, &mut r2).unwrap()
        );

        assert!(matches!(
            sample_noise(4, 0.0, &mut rng),
            Err(DpError::InvalidEpsilon(_))
        ));
        assert!(matches!(
            sample_noise(0, 1.0, &mut rng),
            Err(DpError::EmptyNoise)
        ));
    }

    #[test]
    fn composition_rules() {
        assert!((per_epoch_budget(1.0, 100) - 0.1).abs() < 1e-15);
        assert!((per_epoch_budget(0.5, 1) - 0.5).abs() < 1e-15);

        assert!((compose_sequential(&[0.3, 0.3, 0.3, 0.3]) - 0.6).abs() < 1e-12);
        assert!((compose_sequential(&[0.7]) - 0.7).abs() < 1e-15);
        assert!((compose_sequential(&[3.0, 4.0]) - 5.0).abs() < 1e-12);

        assert_eq!(compose_parallel(&[0.2, 0.5, 0.3]), 0.5);
        assert_eq!(compose_parallel(&[0.7]), 0.7);
        assert_eq!(compose_parallel(&[]), 0.0);

        // Splitting a budget across epochs composes back to the total.
        let per = per_epoch_budget(1.3, 7);
        assert!((compose_sequential(&vec![per; 7]) - 1.3).abs() < 1e-12);
    }

    #[test]
    fn nonneg_split_identity() {
        assert_eq!(nonneg_split(&[-2.5]), (vec![0.0], vec![2.5]));
        assert_eq!(nonneg_split(&[1.2]), (vec![2.4], vec![1.2]));

        let mut rng = seeded_rng(5, crate::rng_streams::DP_NOISE);
        let noise = sample_noise(10_000, 0.3, &mut rng).unwrap();
        let (shifted, magnitude) = nonneg_split(&noise.eta);
        for ((s, m), e) in shifted.iter().zip(&magnitude).zip(&noise.eta) {
            assert!(*s >= 0.0 && *m >= 0.0);
            assert_eq!(s - m, *e);
        }
    }

    #[test]
    fn accountant_tracks_parallel_then_sequential() {
        let mut acc = PrivacyAccountant::new(1.0, 4).unwrap();
        assert!((acc.epsilon_per_epoch - 0.5).abs() < 1e-15);
        for epoch in 0..4u64 {
            for batch in 0..3u32 {
                acc.charge(epoch, batch, 0.5, Some(0.1)).unwrap();
            }
        }
        // Four epochs at 0.5 each: sqrt(4 * 0.25) = 1.0, exactly the budget.
        assert!((acc.spent() - 1.0).abs() < 1e-12);
        assert_eq!(acc.ledger().len(), 12);

        // A fifth epoch would overspend.
        let err = acc.charge(4, 0, 0.5, None);
        assert!(matches!(err, Err(DpError::BudgetExhausted { .. })));
        assert_eq!(acc.ledger().len(), 12);
    }

    #[test]
    fn ledger_serializes_as_json_lines() {
        let mut acc = PrivacyAccountant::new(2.0, 1).unwrap();
        acc.charge(0, 0, 1.0, Some(0.25)).unwrap();
        acc.charge(0, 1, 1.0, None).unwrap();
        let json = acc.ledger_json_lines();
        let lines: Vec<&str> = json.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(
            lines[0],
            r#"{"epoch":0,"batch":0,"epsilon":1.0,"sensitivity":0.25}"#
        );
        assert_eq!(
            lines[1],
            r#"{"epoch":0,"batch":1,"epsilon":1.0,"sensitivity":null}"#
        );
    }

    #[test]
    fn pooled_noise_variance_matches_the_accounted_scale() {
        // Per-coordinate session noise is sum_b deltaS_b * sigma * eta; its
        // variance must match sum (deltaS * sigma)^2 within 5%.
        let mut rng = seeded_rng(11, crate::rng_streams::DP_NOISE);
        let sensitivities = [0.5, 0.25, 1.0, 0.125];
        let sigma = 2.0;
        let draws = 100_000;
        let mut pooled = vec![0.0f64; draws];
        for &delta in &sensitivities {
            let noise = sample_noise(draws, 1.0 / sigma, &mut rng).unwrap();
            for (p, e) in pooled.iter_mut().zip(&noise.eta) {
                *p += delta * e;
            }
        }
        let expected: f64 = sensitivities.iter().map(|d| (d * sigma).powi(2)).sum();
        let mean: f64 = pooled.iter().sum::<f64>() / draws as f64;
        let var: f64 = pooled.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / draws as f64;
        assert!(
            (var / expected - 1.0).abs() < 0.05,
            "variance {var} vs expected {expected}"
        );
    }
}
