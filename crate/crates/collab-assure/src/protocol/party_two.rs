//! The data-owner role: holds the secret key and the candidate dataset,
//! serves encrypted noise on request and decrypts blinded vectors.
//!
//! Party two never sees a plaintext label leave this module, never learns
//! the batch sensitivity, and only ever decrypts values blinded by party
//! one's uniform pad.

use rand::Rng;

use crate::data::LabeledDataset;
use crate::label_dp::{sample_noise, LedgerEntry};
use crate::protocol::message::{
    frame_decode, frame_encode, EncryptedLabelRow, ProtocolMessage, Verdict,
};
use crate::protocol::transport::Transport;
use crate::protocol::{ProtocolError, SessionConfig};
use crate::tlwe::{decode_signed, decrypt, encode_signed, encrypt, keygen, SecretKey};
use crate::{rng_streams, seeded_rng};

/// What party two knows after a completed session.
#[derive(Debug)]
pub struct PartyTwoOutcome {
    pub verdict: Verdict,
    pub ledger: Vec<LedgerEntry>,
    pub exchanges: usize,
}

/// Encrypts every one-hot label entry of `d2` with fresh randomness;
/// features pass through untouched.
pub fn prepare_encrypted_dataset<R: Rng>(
    d2: &LabeledDataset,
    key: &SecretKey,
    config: &SessionConfig,
    rng: &mut R,
) -> Result<Vec<EncryptedLabelRow>, ProtocolError> {
    if d2.is_empty() {
        return Err(ProtocolError::EmptyDataset);
    }
    let classes = config.layers.classes();
    if d2.classes != classes {
        return Err(ProtocolError::DatasetMismatch(format!(
            "dataset has {} classes, session expects {classes}",
            d2.classes
        )));
    }
    d2.features
        .iter()
        .zip(&d2.labels)
        .map(|(features, &label)| {
            let label_cts = (0..classes)
                .map(|class| {
                    let bit = encode_signed(i64::from(class == label), &config.tlwe)?;
                    encrypt(bit, key, &config.tlwe, rng)
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok(EncryptedLabelRow {
                features: features.clone(),
                label_cts,
            })
        })
        .collect()
}

enum Expecting {
    RequestOrVerdict,
    Blinded { coords: usize },
}

/// Runs the data-owner side of one session to completion.
pub fn run_party_two<T: Transport>(
    transport: &mut T,
    config: &SessionConfig,
    d2: &LabeledDataset,
) -> Result<PartyTwoOutcome, ProtocolError> {
    config.validate()?;
    let key_seed = seeded_rng(config.seed, rng_streams::KEYGEN).random::<u64>();
    let key = keygen(&config.tlwe, key_seed)?;
    let mut enc_rng = seeded_rng(config.seed, rng_streams::ENCRYPT);
    let rows = prepare_encrypted_dataset(d2, &key, config, &mut enc_rng)?;
    transport.send(&frame_encode(&ProtocolMessage::EncDataset(rows)))?;

    let mut noise_rng = seeded_rng(config.seed, rng_streams::DP_NOISE);
    let mut accountant = config.accountant()?;
    let epsilon_batch = config.epsilon_per_batch();
    let mut exchanges = 0usize;
    let mut state = Expecting::RequestOrVerdict;

    loop {
        let msg = frame_decode(&transport.recv()?)?;
        match (&state, msg) {
            (Expecting::RequestOrVerdict, ProtocolMessage::NoiseRequest { epoch, batch, coords }) => {
                let coords = coords as usize;
                if coords == 0 || coords > (1 << 24) {
                    return Err(ProtocolError::BadMessage(format!(
                        "noise request for {coords} coordinates is outside the accepted range"
                    )));
                }
                if let (Some(acc), Some(eps)) = (accountant.as_mut(), epsilon_batch) {
                    // The sensitivity stays with party one; the ledger here
                    // records only the spend.
                    acc.charge(epoch, batch, eps, None)?;
                }
                let eta_scaled: Vec<i64> = match epsilon_batch {
                    Some(eps) => sample_noise(coords, eps, &mut noise_rng)?
                        .eta
                        .iter()
                        .map(|e| (e * config.scale_noise as f64).round_ties_even() as i64)
                        .collect(),
                    None => vec![0; coords],
                };
                let encrypt_all = |values: &[i64],
                                   rng: &mut rand_chacha::ChaCha20Rng|
                 -> Result<Vec<_>, ProtocolError> {
                    values
                        .iter()
                        .map(|&v| Ok(encrypt(encode_signed(v, &config.tlwe)?, &key, &config.tlwe, rng)?))
                        .collect()
                };
                let reply = if config.compat_nonneg {
                    let shifted: Vec<i64> = eta_scaled.iter().map(|e| e + e.abs()).collect();
                    let magnitude: Vec<i64> = eta_scaled.iter().map(|e| e.abs()).collect();
                    ProtocolMessage::EncNoise {
                        cts: encrypt_all(&shifted, &mut enc_rng)?,
                        magnitudes: Some(encrypt_all(&magnitude, &mut enc_rng)?),
                    }
                } else {
                    ProtocolMessage::EncNoise {
                        cts: encrypt_all(&eta_scaled, &mut enc_rng)?,
                        magnitudes: None,
                    }
                };
                transport.send(&frame_encode(&reply))?;
                exchanges += 1;
                state = Expecting::Blinded { coords };
            }
            (Expecting::Blinded { coords }, ProtocolMessage::BlindedNoisyYTerm(cts)) => {
                if cts.len() != *coords {
                    return Err(ProtocolError::BadMessage(format!(
                        "blinded vector has {} entries, request was for {coords}",
                        cts.len()
                    )));
                }
                let values = cts
                    .iter()
                    .map(|ct| Ok(decode_signed(decrypt(ct, &key, &config.tlwe)?, &config.tlwe)))
                    .collect::<Result<Vec<i64>, ProtocolError>>()?;
                transport.send(&frame_encode(&ProtocolMessage::DecryptedBlinded(values)))?;
                state = Expecting::RequestOrVerdict;
            }
            (Expecting::RequestOrVerdict, ProtocolMessage::Verdict(verdict)) => {
                return Ok(PartyTwoOutcome {
                    verdict,
                    ledger: accountant.map(|a| a.ledger().to_vec()).unwrap_or_default(),
                    exchanges,
                });
            }
            (state, msg) => {
                return Err(ProtocolError::UnexpectedMessage {
                    expected: match state {
                        Expecting::RequestOrVerdict => "noise-request or verdict",
                        Expecting::Blinded { .. } => "blinded-noisy-y-term",
                    },
                    got: msg.name(),
                });
            }
        }
    }
}
