//! Shared oracles for the integration suites. Everything here checks the
//! library from the outside: the loss is recomputed from `forward` alone and
//! differentiated numerically, so these paths stay independent of the
//! hand-coded derivatives they verify.

use collab_assure::nn::{forward, forward_batch, direct_gradient, LayerSpec, NetworkParams};
use collab_assure::seeded_rng;
use rand::Rng;

/// Mean cross-entropy of a batch, computed from scratch.
pub fn batch_loss(params: &NetworkParams, features: &[Vec<f64>], labels: &[usize]) -> f64 {
    let mut total = 0.0;
    for (row, &label) in features.iter().zip(labels) {
        let trace = forward(params, row).unwrap();
        total += -trace.p[label].max(1e-15).ln();
    }
    total / features.len() as f64
}

/// Central finite differences of the batch loss over every parameter.
pub fn numeric_gradient(
    params: &NetworkParams,
    features: &[Vec<f64>],
    labels: &[usize],
    step: f64,
) -> Vec<f64> {
    let flat = params.flatten();
    let spec = params.spec().clone();
    (0..flat.len())
        .map(|coord| {
            let mut plus = flat.clone();
            plus[coord] += step;
            let mut minus = flat.clone();
            minus[coord] -= step;
            let up = batch_loss(&NetworkParams::from_flat(&spec, &plus).unwrap(), features, labels);
            let down =
                batch_loss(&NetworkParams::from_flat(&spec, &minus).unwrap(), features, labels);
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// Largest coordinate difference relative to the reference's largest
/// coordinate; robust where single coordinates vanish.
pub fn max_relative_error(got: &[f64], reference: &[f64]) -> f64 {
    let scale = reference
        .iter()
        .map(|v| v.abs())
        .fold(1e-12f64, f64::max);
    got.iter()
        .zip(reference)
        .map(|(a, b)| (a - b).abs() / scale)
        .fold(0.0f64, f64::max)
}

/// A small random architecture: 3 or 4 features, up to two hidden layers of
/// at most 10 units, 2 or 3 classes.
pub fn random_spec(seed: u64) -> LayerSpec {
    let mut rng = seeded_rng(seed, 9001);
    let input = 3 + (rng.random::<u32>() % 2) as usize;
    let classes = 2 + (rng.random::<u32>() % 2) as usize;
    let mut sizes = vec![input];
    for _ in 0..1 + (rng.random::<u32>() % 2) {
        sizes.push(2 + (rng.random::<u32>() % 9) as usize);
    }
    sizes.push(classes);
    LayerSpec::new(sizes).unwrap()
}

/// Random features in `[-2, 2]` with cycling labels.
pub fn random_batch(spec: &LayerSpec, rows: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut rng = seeded_rng(seed, 9002);
    let features = (0..rows)
        .map(|_| {
            (0..spec.input_dim())
                .map(|_| rng.random::<f64>() * 4.0 - 2.0)
                .collect()
        })
        .collect();
    let labels = (0..rows).map(|i| i % spec.classes()).collect();
    (features, labels)
}

/// Enumerates every ordered pair of label assignments differing in one
/// sample and counts the pairs whose gradient distance exceeds `bound`.
pub fn enumerate_swap_violations(
    params: &NetworkParams,
    features: &[Vec<f64>],
    labels: &[usize],
    classes: usize,
    bound: f64,
) -> usize {
    let traces = forward_batch(params, features).unwrap();
    let mut violations = 0;
    for sample in 0..labels.len() {
        for first in 0..classes {
            for second in 0..classes {
                if first == second {
                    continue;
                }
                let mut labels_a = labels.to_vec();
                labels_a[sample] = first;
                let mut labels_b = labels.to_vec();
                labels_b[sample] = second;
                let ga = direct_gradient(params, &traces, &labels_a);
                let gb = direct_gradient(params, &traces, &labels_b);
                let dist = ga
                    .iter()
                    .zip(&gb)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                if dist > bound + 1e-12 {
                    violations += 1;
                }
            }
        }
    }
    violations
}
