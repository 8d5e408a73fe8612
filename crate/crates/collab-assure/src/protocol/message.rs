//! The six wire messages and their binary framing.
//!
//! Frame layout: a 4-byte big-endian payload length, the version byte
//! `0x01`, then the payload. The payload is a 1-byte message tag
//! (`0x01..=0x06`, in session order) followed by the message body. Integers
//! are little-endian; vectors carry a 4-byte little-endian count; reals
//! travel as signed 8-byte integers scaled by `10^6` (so values on the
//! micro grid round-trip exactly); ciphertexts use the serialization from
//! [`crate::tlwe`].

use thiserror::Error;

use crate::tlwe::{TlweCiphertext, TlweError};

pub const WIRE_VERSION: u8 = 0x01;
/// Fixed-point scale for reals on the wire: six decimal places.
pub const REAL_SCALE: f64 = 1_000_000.0;

#[derive(Debug, Error, PartialEq)]
pub enum WireError {
    #[error("bad version byte {0:#04x}")]
    BadMagic(u8),
    #[error("unknown message tag {0:#04x}")]
    UnknownTag(u8),
    #[error("frame truncated: {0}")]
    Truncated(String),
    #[error("frame length field {field} does not match payload length {actual}")]
    LengthMismatch { field: usize, actual: usize },
    #[error("{0} trailing bytes after message body")]
    TrailingBytes(usize),
    #[error("ciphertext field: {0}")]
    Ciphertext(#[from] TlweError),
}

/// One row of the encrypted dataset: clear features, one ciphertext per
/// class encrypting the one-hot label entry.
#[derive(Debug, Clone, PartialEq)]
pub struct EncryptedLabelRow {
    pub features: Vec<f64>,
    pub label_cts: Vec<TlweCiphertext>,
}

/// The session output: whether the jointly trained model beat the baseline,
/// optionally with the two holdout accuracies attached.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Verdict {
    pub improved: bool,
    pub accuracies: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProtocolMessage {
    /// Party two's dataset with encrypted labels (tag 0x01).
    EncDataset(Vec<EncryptedLabelRow>),
    /// Party one asks for a noise vector of `coords` entries (tag 0x02).
    NoiseRequest { epoch: u64, batch: u32, coords: u32 },
    /// Encrypted noise; `magnitudes` present only in the non-negative
    /// compatibility mode, where `cts` holds `eta + |eta|` and `magnitudes`
    /// holds `|eta|` (tag 0x03).
    EncNoise {
        cts: Vec<TlweCiphertext>,
        magnitudes: Option<Vec<TlweCiphertext>>,
    },
    /// The blinded, noise-added encrypted y-term (tag 0x04).
    BlindedNoisyYTerm(Vec<TlweCiphertext>),
    /// Party two's decryption, signed integers at the z scale (tag 0x05).
    DecryptedBlinded(Vec<i64>),
    /// Final verdict (tag 0x06).
    Verdict(Verdict),
}

impl ProtocolMessage {
    pub fn tag(&self) -> u8 {
        match self {
            ProtocolMessage::EncDataset(_) => 0x01,
            ProtocolMessage::NoiseRequest { .. } => 0x02,
            ProtocolMessage::EncNoise { .. } => 0x03,
            ProtocolMessage::BlindedNoisyYTerm(_) => 0x04,
            ProtocolMessage::DecryptedBlinded(_) => 0x05,
            ProtocolMessage::Verdict(_) => 0x06,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ProtocolMessage::EncDataset(_) => "enc-dataset",
            ProtocolMessage::NoiseRequest { .. } => "noise-request",
            ProtocolMessage::EncNoise { .. } => "enc-noise",
            ProtocolMessage::BlindedNoisyYTerm(_) => "blinded-noisy-y-term",
            ProtocolMessage::DecryptedBlinded(_) => "decrypted-blinded",
            ProtocolMessage::Verdict(_) => "verdict",
        }
    }
}

pub fn encode_real(x: f64) -> i64 {
    (x * REAL_SCALE).round_ties_even() as i64
}

pub fn decode_real(v: i64) -> f64 {
    v as f64 / REAL_SCALE
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_i64(out: &mut Vec<u8>, v: i64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_reals(out: &mut Vec<u8>, values: &[f64]) {
    put_u32(out, values.len() as u32);
    for &v in values {
        put_i64(out, encode_real(v));
    }
}

fn put_cts(out: &mut Vec<u8>, cts: &[TlweCiphertext]) {
    put_u32(out, cts.len() as u32);
    for ct in cts {
        out.extend_from_slice(&ct.to_bytes());
    }
}

/// Serializes a message into a complete frame, header included.
pub fn frame_encode(msg: &ProtocolMessage) -> Vec<u8> {
    let mut payload = vec![msg.tag()];
    match msg {
        ProtocolMessage::EncDataset(rows) => {
            put_u32(&mut payload, rows.len() as u32);
            for row in rows {
                put_reals(&mut payload, &row.features);
                put_cts(&mut payload, &row.label_cts);
            }
        }
        ProtocolMessage::NoiseRequest { epoch, batch, coords } => {
            payload.extend_from_slice(&epoch.to_le_bytes());
            put_u32(&mut payload, *batch);
            put_u32(&mut payload, *coords);
        }
        ProtocolMessage::EncNoise { cts, magnitudes } => {
            payload.push(u8::from(magnitudes.is_some()));
            put_cts(&mut payload, cts);
            if let Some(mags) = magnitudes {
                put_cts(&mut payload, mags);
            }
        }
        ProtocolMessage::BlindedNoisyYTerm(cts) => put_cts(&mut payload, cts),
        ProtocolMessage::DecryptedBlinded(values) => {
            put_u32(&mut payload, values.len() as u32);
            for &v in values {
                put_i64(&mut payload, v);
            }
        }
        ProtocolMessage::Verdict(v) => {
            payload.push(u8::from(v.improved));
            payload.push(u8::from(v.accuracies.is_some()));
            if let Some((a1, a2)) = v.accuracies {
                put_i64(&mut payload, encode_real(a1));
                put_i64(&mut payload, encode_real(a2));
            }
        }
    }
    let mut frame = Vec::with_capacity(5 + payload.len());
    frame.extend_from_slice(&(payload.len() as u32).to_be_bytes());
    frame.push(WIRE_VERSION);
    frame.extend_from_slice(&payload);
    frame
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize, what: &str) -> Result<&'a [u8], WireError> {
        let slice = self
            .buf
            .get(self.pos..self.pos + len)
            .ok_or_else(|| WireError::Truncated(what.to_string()))?;
        self.pos += len;
        Ok(slice)
    }

    fn u8(&mut self, what: &str) -> Result<u8, WireError> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32, WireError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    /// A count prefix, sanity-checked against the bytes actually left so a
    /// forged count cannot drive a huge preallocation.
    fn count(&mut self, what: &str, min_item_bytes: usize) -> Result<usize, WireError> {
        let count = self.u32(what)? as usize;
        if count * min_item_bytes > self.buf.len() - self.pos {
            return Err(WireError::Truncated(format!("{what} (count {count})")));
        }
        Ok(count)
    }

    fn u64(&mut self, what: &str) -> Result<u64, WireError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn i64(&mut self, what: &str) -> Result<i64, WireError> {
        Ok(i64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn reals(&mut self, what: &str) -> Result<Vec<f64>, WireError> {
        let count = self.count(what, 8)?;
        (0..count).map(|_| Ok(decode_real(self.i64(what)?))).collect()
    }

    fn cts(&mut self, what: &str) -> Result<Vec<TlweCiphertext>, WireError> {
        // Each ciphertext is at least its count prefix and body.
        let count = self.count(what, 12)?;
        let mut cts = Vec::with_capacity(count);
        for _ in 0..count {
            let (ct, used) = TlweCiphertext::from_bytes(&self.buf[self.pos..])
                .map_err(WireError::Ciphertext)?;
            self.pos += used;
            cts.push(ct);
        }
        Ok(cts)
    }
}

/// Parses a complete frame back into a message, rejecting version or length
/// mismatches, unknown tags and trailing bytes.
pub fn frame_decode(frame: &[u8]) -> Result<ProtocolMessage, WireError> {
    if frame.len() < 6 {
        return Err(WireError::Truncated("frame header".into()));
    }
    let field = u32::from_be_bytes(frame[0..4].try_into().unwrap()) as usize;
    if frame[4] != WIRE_VERSION {
        return Err(WireError::BadMagic(frame[4]));
    }
    let payload = &frame[5..];
    if field != payload.len() {
        return Err(WireError::LengthMismatch {
            field,
            actual: payload.len(),
        });
    }
    let mut r = Reader { buf: payload, pos: 0 };
    let tag = r.u8("tag")?;
    let msg = match tag {
        0x01 => {
            let rows = r.count("row count", 8)?;
            let rows = (0..rows)
                .map(|_| {
                    Ok(EncryptedLabelRow {
                        features: r.reals("features")?,
                        label_cts: r.cts("label ciphertexts")?,
                    })
                })
                .collect::<Result<Vec<_>, WireError>>()?;
            ProtocolMessage::EncDataset(rows)
        }
        0x02 => ProtocolMessage::NoiseRequest {
            epoch: r.u64("epoch")?,
            batch: r.u32("batch")?,
            coords: r.u32("coords")?,
        },
        0x03 => {
            let paired = r.u8("noise mode")? != 0;
            let cts = r.cts("noise ciphertexts")?;
            let magnitudes = if paired {
                Some(r.cts("magnitude ciphertexts")?)
            } else {
                None
            };
            ProtocolMessage::EncNoise { cts, magnitudes }
        }
        0x04 => ProtocolMessage::BlindedNoisyYTerm(r.cts("blinded ciphertexts")?),
        0x05 => {
            let count = r.count("value count", 8)?;
            let values = (0..count)
                .map(|_| r.i64("decrypted value"))
                .collect::<Result<Vec<_>, WireError>>()?;
            ProtocolMessage::DecryptedBlinded(values)
        }
        0x06 => {
            let improved = r.u8("verdict bit")? != 0;
            let has_acc = r.u8("accuracy flag")? != 0;
            let accuracies = if has_acc {
                Some((decode_real(r.i64("accuracy 1")?), decode_real(r.i64("accuracy 2")?)))
            } else {
                None
            };
            ProtocolMessage::Verdict(Verdict { improved, accuracies })
        }
        other => return Err(WireError::UnknownTag(other)),
    };
    if r.pos != payload.len() {
        return Err(WireError::TrailingBytes(payload.len() - r.pos));
    }
    Ok(msg)
}
