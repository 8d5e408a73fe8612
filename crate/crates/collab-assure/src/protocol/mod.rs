//! The two-party session.
//!
//! Party two holds the candidate dataset and the decryption key; party one
//! holds its own data, the holdout set and the model architecture. One
//! session runs:
//!
//! 1. Party two sends its dataset with each one-hot label entry encrypted.
//! 2. Party one trains a baseline on its own data, then trains the joint
//!    model. Per batch that touches party-two rows it computes the
//!    label-free gradient term in the clear and the label-dependent term
//!    homomorphically, asks party two for an encrypted Gaussian noise
//!    vector, scales the noise by the batch sensitivity, blinds the result
//!    with a fresh uniform pad and has party two decrypt it. Unblinding
//!    yields the noisy label-dependent term; training proceeds in the clear.
//! 3. Party one evaluates both models on the holdout set and both parties
//!    receive the verdict.
//!
//! Batches without party-two rows trigger no exchange and spend no budget.
//! Every value party two ever decrypts is blinded by a fresh uniform pad, so
//! the only things it learns are the vector length, the exchange count and
//! the final verdict.

mod message;
mod party_one;
mod party_two;
mod transport;

pub use message::{
    decode_real, encode_real, frame_decode, frame_encode, EncryptedLabelRow, ProtocolMessage,
    Verdict, WireError, REAL_SCALE, WIRE_VERSION,
};
pub use party_one::{
    homomorphic_y_term, run_party_one, scale_and_blind, scale_gradients, unblind, EncNoiseVectors,
    PartyOneOutcome,
};
pub use party_two::{prepare_encrypted_dataset, run_party_two, PartyTwoOutcome};
pub use transport::{in_process_pair, InProcessTransport, RecordingTransport, TcpTransport, Transport};

use thiserror::Error;

use crate::data::LabeledDataset;
use crate::label_dp::{per_epoch_budget, DpError, PrivacyAccountant};
use crate::nn::{LayerSpec, NnError};
use crate::tlwe::{validate_noise_budget, TlweError, TlweParams};

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("wire decode: {0}")]
    Decode(#[from] WireError),
    #[error("protocol order violation: expected {expected}, got {got}")]
    UnexpectedMessage {
        expected: &'static str,
        got: &'static str,
    },
    #[error("malformed message: {0}")]
    BadMessage(String),
    #[error("noise budget validation failed (slack {slack:.3e}); refusing to start")]
    NoiseBudgetRejected { slack: f64 },
    #[error("scaled gradient {value} at coordinate {coordinate} exceeds the scalar bound {bound}")]
    ScalarOverflow {
        value: f64,
        coordinate: usize,
        bound: i64,
    },
    #[error("invalid session config: {0}")]
    InvalidConfig(String),
    #[error("dataset mismatch: {0}")]
    DatasetMismatch(String),
    #[error("nothing to assess: empty dataset")]
    EmptyDataset,
    #[error(transparent)]
    Dp(#[from] DpError),
    #[error(transparent)]
    Tlwe(#[from] TlweError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// Label-DP regime of a session. `Disabled` runs the identical message flow
/// with an all-zero noise stream, for equivalence testing against plaintext
/// training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseBudget {
    Disabled,
    Total(f64),
}

/// How much the verdict message reveals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VerdictDetail {
    #[default]
    BitOnly,
    WithAccuracies,
}

/// Everything both parties must agree on before a session starts.
#[derive(Debug, Clone)]
pub struct SessionConfig {
    pub tlwe: TlweParams,
    pub layers: LayerSpec,
    pub noise: NoiseBudget,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub seed: u64,
    /// Fixed-point scale for gradients and blinds: six decimal places.
    pub scale_z: i64,
    /// Fixed-point scale for the sensitivity and the noise: three decimal
    /// places, so their product lands back on the `scale_z` grid.
    pub scale_noise: i64,
    /// Magnitude bound for homomorphic scalars; checked against the noise
    /// budget at session start.
    pub z_max: i64,
    /// Encrypt noise as the non-negative pair `(eta + |eta|, |eta|)` and
    /// subtract homomorphically, mirroring circuits that reject negative
    /// inputs. Off by default; results are identical either way.
    pub compat_nonneg: bool,
    pub verdict_detail: VerdictDetail,
}

impl SessionConfig {
    pub fn new(layers: LayerSpec, noise: NoiseBudget, epochs: usize, batch_size: usize, seed: u64) -> Self {
        SessionConfig {
            tlwe: TlweParams::default(),
            layers,
            noise,
            epochs,
            batch_size,
            learning_rate: 0.1,
            l2: 0.01,
            seed,
            scale_z: 1_000_000,
            scale_noise: 1_000,
            z_max: 1_000_000,
            compat_nonneg: false,
            verdict_detail: VerdictDetail::default(),
        }
    }

    pub fn validate(&self) -> Result<(), ProtocolError> {
        self.tlwe.validate()?;
        LayerSpec::new(self.layers.sizes.clone())?;
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(ProtocolError::InvalidConfig(
                "epochs and batch size must be at least 1".into(),
            ));
        }
        if !(self.learning_rate > 0.0) || self.l2 < 0.0 {
            return Err(ProtocolError::InvalidConfig(
                "learning rate must be positive, l2 non-negative".into(),
            ));
        }
        if self.scale_z <= 0 || self.scale_noise <= 0 || self.z_max <= 0 {
            return Err(ProtocolError::InvalidConfig("scales must be positive".into()));
        }
        if self.scale_z != self.scale_noise * self.scale_noise {
            return Err(ProtocolError::InvalidConfig(format!(
                "scale_z ({}) must equal scale_noise^2 ({})",
                self.scale_z,
                self.scale_noise * self.scale_noise
            )));
        }
        if let NoiseBudget::Total(e) = self.noise {
            if !(e > 0.0) || !e.is_finite() {
                return Err(ProtocolError::InvalidConfig(format!(
                    "total privacy budget {e} must be positive and finite"
                )));
            }
        }
        let fan_in = self.layers.classes() * self.batch_size;
        let report = validate_noise_budget(&self.tlwe, self.z_max, fan_in);
        if !report.pass {
            return Err(ProtocolError::NoiseBudgetRejected { slack: report.slack });
        }
        Ok(())
    }

    /// Raises `z_max` to the largest scalar bound that still passes the
    /// noise-budget check at `margin` times the six-sigma requirement,
    /// never dropping below the `10^6` default. Small batches have spare
    /// fan-in headroom; spending it on scalar range keeps sessions with
    /// drifting or noise-inflated gradients from aborting on the fixed
    /// default, while configurations whose fan-in cannot support even the
    /// default still fail validation.
    pub fn auto_z_max(&mut self, margin: f64) {
        assert!(margin >= 1.0);
        let fan_in = (self.layers.classes() * self.batch_size) as f64;
        let limit = 1.0 / (2.0 * self.tlwe.p as f64);
        let denom = self.tlwe.sigma_lwe * fan_in.sqrt() * 6.0 * margin;
        let cap = if denom > 0.0 { limit / denom } else { f64::INFINITY };
        self.z_max = (cap.min((1u64 << 40) as f64) as i64).max(1_000_000);
    }

    /// Budget spent per exchanged batch: disjoint batches within an epoch
    /// compose in parallel, epochs sequentially, so each batch gets the
    /// per-epoch share `epsilon_total / sqrt(epochs)`.
    pub fn epsilon_per_batch(&self) -> Option<f64> {
        match self.noise {
            NoiseBudget::Disabled => None,
            NoiseBudget::Total(e) => Some(per_epoch_budget(e, self.epochs)),
        }
    }

    pub(crate) fn accountant(&self) -> Result<Option<PrivacyAccountant>, ProtocolError> {
        match self.noise {
            NoiseBudget::Disabled => Ok(None),
            NoiseBudget::Total(e) => Ok(Some(PrivacyAccountant::new(e, self.epochs)?)),
        }
    }
}

/// Runs both roles over an in-process transport pair, returning both
/// outcomes. Party two runs on a scoped thread; errors from either side
/// surface here.
pub fn run_in_process(
    config: &SessionConfig,
    d1: &LabeledDataset,
    d2: &LabeledDataset,
    d_hold: &LabeledDataset,
) -> Result<(PartyOneOutcome, PartyTwoOutcome), ProtocolError> {
    let (mut t1, mut t2) = in_process_pair();
    std::thread::scope(|scope| {
        let p2 = scope.spawn(move || run_party_two(&mut t2, config, d2));
        let out1 = run_party_one(&mut t1, config, d1, d_hold);
        // Close the channel so a peer still waiting on it unblocks before
        // the join (matters when this side aborted mid-session).
        drop(t1);
        let out2 = p2
            .join()
            .map_err(|_| ProtocolError::Transport("party two panicked".into()))?;
        Ok((out1?, out2?))
    })
}

/// Like [`run_in_process`] but over a loopback TCP connection: party one
/// listens on an ephemeral port, party two connects from a scoped thread.
pub fn run_loopback_tcp(
    config: &SessionConfig,
    d1: &LabeledDataset,
    d2: &LabeledDataset,
    d_hold: &LabeledDataset,
) -> Result<(PartyOneOutcome, PartyTwoOutcome), ProtocolError> {
    let listener = std::net::TcpListener::bind("127.0.0.1:0")
        .map_err(|e| ProtocolError::Transport(e.to_string()))?;
    let addr = listener
        .local_addr()
        .map_err(|e| ProtocolError::Transport(e.to_string()))?;
    std::thread::scope(|scope| {
        let p2 = scope.spawn(move || {
            let stream = std::net::TcpStream::connect(addr)
                .map_err(|e| ProtocolError::Transport(e.to_string()))?;
            run_party_two(&mut TcpTransport::new(stream), config, d2)
        });
        let (stream, _) = listener
            .accept()
            .map_err(|e| ProtocolError::Transport(e.to_string()))?;
        let mut t1 = TcpTransport::new(stream);
        let out1 = run_party_one(&mut t1, config, d1, d_hold);
        // Close the socket so a peer still reading unblocks before the join.
        drop(t1);
        let out2 = p2
            .join()
            .map_err(|_| ProtocolError::Transport("party two panicked".into()))?;
        Ok((out1?, out2?))
    })
}
