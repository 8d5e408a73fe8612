//! The gradient decomposition that makes the protocol cheap: every batch
//! gradient splits into a label-free term and a term linear in the one-hot
//! labels. This example computes both halves, reassembles them, and checks
//! the result against classic delta-rule backpropagation and against finite
//! differences.
//!
//! ```bash
//! cargo run --release -p collab-assure --example gradient_split
//! ```

use collab_assure::nn::{
    assemble_gradient, cross_entropy, direct_gradient, forward, forward_batch, full_z_grads,
    init_params, one_hot, p_term, y_term_clear, LayerSpec, NetworkParams,
};

fn main() -> anyhow::Result<()> {
    let spec = LayerSpec::new(vec![4, 6, 3])?;
    let params = init_params(&spec, 7)?;
    println!(
        "network {:?}: {} trainable values (output layer has no bias)",
        spec.sizes,
        params.param_count()
    );

    let features = vec![
        vec![0.2, -1.1, 0.7, 0.4],
        vec![1.5, 0.3, -0.2, -0.8],
        vec![-0.5, 0.9, 1.2, 0.1],
    ];
    let labels = vec![0usize, 2, 1];

    let traces = forward_batch(&params, &features)?;
    let zg = full_z_grads(&params, &traces);
    println!(
        "derivative tensor: {} samples x {} classes x {} coordinates",
        traces.len(),
        zg.classes,
        zg.coords
    );

    let p = p_term(&traces, &zg);
    let y = y_term_clear(&labels, &zg);
    let grad = assemble_gradient(&p, &y.normalized())?;
    println!(
        "label-free term |.|_2 = {:.6}, label term |.|_2 = {:.6}",
        norm(&p),
        norm(&y.normalized())
    );

    // Same gradient through the classic route.
    let direct = direct_gradient(&params, &traces, &labels);
    let max_diff = grad
        .iter()
        .zip(&direct)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    println!("two-term vs delta-rule backprop: max difference {max_diff:.2e}");

    // And against a numerical derivative of the loss.
    let coord = zg.coords / 2;
    let step = 1e-6;
    let flat = params.flatten();
    let mut plus = flat.clone();
    plus[coord] += step;
    let mut minus = flat;
    minus[coord] -= step;
    let fd = (batch_loss(&NetworkParams::from_flat(&spec, &plus)?, &features, &labels)
        - batch_loss(&NetworkParams::from_flat(&spec, &minus)?, &features, &labels))
        / (2.0 * step);
    println!(
        "coordinate {coord}: analytic {:.8}, finite difference {:.8}",
        grad[coord], fd
    );
    Ok(())
}

fn batch_loss(params: &NetworkParams, features: &[Vec<f64>], labels: &[usize]) -> f64 {
    features
        .iter()
        .zip(labels)
        .map(|(x, &l)| cross_entropy(&forward(params, x).unwrap(), &one_hot(3, l)))
        .sum::<f64>()
        / features.len() as f64
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
