//! Two parties want to know whether pooling their datasets would improve a
//! model before they commit to sharing anything. Party one holds a labelled
//! dataset, a holdout set and a baseline model; party two offers additional
//! data but will not reveal its labels. This crate implements an interactive
//! protocol that answers the single question "does the joint model beat the
//! baseline on the holdout set?" while the labels of party two only ever
//! travel encrypted and every decrypted gradient carries Gaussian label-DP
//! noise.
//!
//! The pieces:
//!
//! - [`tlwe`] — LWE encryption over the discretized torus: exact modular
//!   integer arithmetic, linear homomorphism (addition, integer scalar
//!   multiplication) and plaintext blinding.
//! - [`nn`] — a from-scratch feedforward network (sigmoid hidden layers,
//!   softmax + cross-entropy) that exposes the per-sample, per-class
//!   derivatives needed to split each batch gradient into a label-free term
//!   and a label-dependent term.
//! - [`label_dp`] — batch sensitivity, seeded Gaussian noise at `sigma = 1/epsilon`,
//!   and a privacy accountant with sequential/parallel composition.
//! - [`protocol`] — the two-party session: wire format, transports, and the
//!   per-batch exchange that lets party one assemble noisy decrypted
//!   gradients and train in the clear.
//! - [`data`] / [`experiment`] / [`cli`] — dataset ingestion, synthetic
//!   generators, the empirical checks for the no-domain-knowledge results,
//!   and the experiment driver behind the `collab-assure` binary.
//!
//! See the crate `examples/` directory for one runnable program per
//! capability.

pub mod cli;
pub mod data;
pub mod experiment;
pub mod label_dp;
pub mod nn;
pub mod protocol;
pub mod tlwe;

/// Domain-separation stream ids for the seeded ChaCha20 generators.
///
/// Every random choice in a session is drawn from `ChaCha20Rng::seed_from_u64(seed)`
/// with one of these stream ids, so a session is fully reproducible from the
/// single session seed and the two roles never share a stream.
pub mod rng_streams {
    /// Network weight initialization (party one, also plaintext training).
    pub const INIT: u64 = 1;
    /// Per-epoch batch shuffling (party one, also plaintext training).
    pub const SHUFFLE: u64 = 2;
    /// Secret key generation (party two).
    pub const KEYGEN: u64 = 3;
    /// Encryption masks and noise (party two).
    pub const ENCRYPT: u64 = 4;
    /// Label-DP Gaussian noise (party two).
    pub const DP_NOISE: u64 = 5;
    /// Blinding pads (party one).
    pub const BLIND: u64 = 6;
    /// Synthetic data generation and splits.
    pub const DATA: u64 = 7;
}

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// A ChaCha20 generator for `seed`, domain-separated by `stream`.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
