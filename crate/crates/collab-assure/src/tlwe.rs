//! LWE encryption over the discretized torus.
//!
//! Torus elements are the `q` evenly spaced points of the reals mod 1,
//! represented by their integer numerator in `[0, q)`. With `q` a power of
//! two up to `2^64`, every operation is exact wrapping integer arithmetic —
//! no floating point appears anywhere in this module except when drawing
//! encryption noise.
//!
//! Plaintexts live in the subgroup of `p` slots (`p` divides `q`). Signed
//! values embed into the upper half of the slot range, two's-complement
//! style. The scheme is linearly homomorphic: ciphertext addition, integer
//! scalar multiplication and plaintext offsets (used for blinding) are
//! supported; there is no bootstrapping and no ciphertext-ciphertext
//! multiplication because the protocol only needs the linear operations.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TlweError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("value {value} outside signed plaintext range [-{half}, {half})")]
    PlaintextOutOfRange { value: i64, half: u64 },
    #[error("scalar {value} exceeds the session bound {bound}")]
    ScalarOutOfRange { value: i64, bound: i64 },
    #[error("ciphertext dimension {got} does not match parameters (n = {expected})")]
    DimensionMismatch { got: usize, expected: usize },
    #[error("malformed ciphertext bytes: {0}")]
    Malformed(String),
}

/// Parameters of the discretized torus and the LWE instance.
///
/// `q` and `p` must be powers of two with `p` dividing `q`; `q` may be the
/// full machine word `2^64`. The defaults pass [`validate_noise_budget`] for
/// the protocol's worst-case fan-in (3 classes, batch 512, scalars up to
/// `10^6`). They are demonstrative; no concrete LWE security level is
/// claimed.
#[derive(Debug, Clone, PartialEq)]
pub struct TlweParams {
    /// Ciphertext modulus, a power of two, at most `2^64`.
    pub q: u128,
    /// Plaintext modulus, a power of two dividing `q`, at most `2^62`.
    pub p: u64,
    /// LWE dimension.
    pub n: usize,
    /// Standard deviation of the encryption noise, in torus units.
    pub sigma_lwe: f64,
}

impl Default for TlweParams {
    fn default() -> Self {
        TlweParams {
            q: 1u128 << 64,
            p: 1u64 << 32,
            n: 1024,
            sigma_lwe: (2.0f64).powi(-62),
        }
    }
}

impl TlweParams {
    pub fn new(q: u128, p: u64, n: usize, sigma_lwe: f64) -> Result<Self, TlweError> {
        let params = TlweParams { q, p, n, sigma_lwe };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<(), TlweError> {
        if !self.q.is_power_of_two() || self.q > (1u128 << 64) {
            return Err(TlweError::InvalidParams(format!(
                "q must be a power of two at most 2^64, got {}",
                self.q
            )));
        }
        if self.p < 2 || !self.p.is_power_of_two() || self.p > (1u64 << 62) {
            return Err(TlweError::InvalidParams(format!(
                "p must be a power of two in [2, 2^62], got {}",
                self.p
            )));
        }
        if u128::from(self.p) > self.q {
            return Err(TlweError::InvalidParams(
                "p must divide q (p > q)".into(),
            ));
        }
        if self.n == 0 {
            return Err(TlweError::InvalidParams("dimension n must be >= 1".into()));
        }
        if !self.sigma_lwe.is_finite() || self.sigma_lwe < 0.0 {
            return Err(TlweError::InvalidParams(
                "sigma_lwe must be finite and >= 0".into(),
            ));
        }
        Ok(())
    }

    /// Bit mask implementing reduction mod `q` on `u64` numerators.
    #[inline]
    pub(crate) fn q_mask(&self) -> u64 {
        (self.q - 1) as u64
    }

    /// Numerator distance between adjacent plaintext slots, `q / p`.
    #[inline]
    pub(crate) fn slot_width(&self) -> u64 {
        (self.q / u128::from(self.p)) as u64
    }
}

/// A point of the discretized torus, stored as its numerator in `[0, q)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TorusElement(pub u64);

impl TorusElement {
    #[inline]
    pub fn add(self, other: TorusElement, params: &TlweParams) -> TorusElement {
        TorusElement(self.0.wrapping_add(other.0) & params.q_mask())
    }

    #[inline]
    pub fn sub(self, other: TorusElement, params: &TlweParams) -> TorusElement {
        TorusElement(self.0.wrapping_sub(other.0) & params.q_mask())
    }

    /// Integer-times-torus product. Because `q` is a power of two the low
    /// 64-bit wrapping product reduces correctly for any signed scalar.
    #[inline]
    pub fn scalar_mul(self, z: i64, params: &TlweParams) -> TorusElement {
        TorusElement(self.0.wrapping_mul(z as u64) & params.q_mask())
    }
}

/// A plaintext slot index in `[0, p)`, representing `slot / p` on the torus.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlaintextElement(pub u64);

/// Embeds a signed integer in `[-p/2, p/2)` into the slot group.
pub fn encode_signed(value: i64, params: &TlweParams) -> Result<PlaintextElement, TlweError> {
    let half = params.p / 2;
    let v = i128::from(value);
    if v < -i128::from(half) || v >= i128::from(half) {
        return Err(TlweError::PlaintextOutOfRange { value, half });
    }
    Ok(PlaintextElement(v.rem_euclid(i128::from(params.p)) as u64))
}

/// Inverse of [`encode_signed`]: slots at or above `p/2` map to negatives.
pub fn decode_signed(m: PlaintextElement, params: &TlweParams) -> i64 {
    let half = params.p / 2;
    if m.0 >= half {
        (i128::from(m.0) - i128::from(params.p)) as i64
    } else {
        m.0 as i64
    }
}

/// The LWE secret key: a uniform binary vector of length `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct SecretKey {
    pub bits: Vec<u64>,
}

/// Generates a secret key deterministically from a seed.
pub fn keygen(params: &TlweParams, seed: u64) -> Result<SecretKey, TlweError> {
    params.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let bits = (0..params.n).map(|_| rng.random::<u64>() & 1).collect();
    Ok(SecretKey { bits })
}

/// An LWE sample `(a, b)` with `b = <s, a> + m + e`.
#[derive(Debug, Clone, PartialEq)]
pub struct TlweCiphertext {
    pub mask: Vec<TorusElement>,
    pub body: TorusElement,
}

impl TlweCiphertext {
    /// The trivial encryption of zero (no mask, no noise). Used as the
    /// accumulator identity for homomorphic sums.
    pub fn zero(params: &TlweParams) -> TlweCiphertext {
        TlweCiphertext {
            mask: vec![TorusElement(0); params.n],
            body: TorusElement(0),
        }
    }

    /// Serializes as a 4-byte little-endian count, the mask numerators and
    /// then the body, each as 8-byte little-endian integers.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + 8 * (self.mask.len() + 1));
        out.extend_from_slice(&(self.mask.len() as u32).to_le_bytes());
        for t in &self.mask {
            out.extend_from_slice(&t.0.to_le_bytes());
        }
        out.extend_from_slice(&self.body.0.to_le_bytes());
        out
    }

    /// Parses [`Self::to_bytes`] output, returning the ciphertext and the
    /// number of bytes consumed.
    pub fn from_bytes(bytes: &[u8]) -> Result<(TlweCiphertext, usize), TlweError> {
        if bytes.len() < 4 {
            return Err(TlweError::Malformed("truncated count prefix".into()));
        }
        let n = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
        let need = 4 + 8 * (n + 1);
        if bytes.len() < need {
            return Err(TlweError::Malformed(format!(
                "need {need} bytes for n = {n}, have {}",
                bytes.len()
            )));
        }
        let mut mask = Vec::with_capacity(n);
        for i in 0..n {
            let off = 4 + 8 * i;
            mask.push(TorusElement(u64::from_le_bytes(
                bytes[off..off + 8].try_into().unwrap(),
            )));
        }
        let off = 4 + 8 * n;
        let body = TorusElement(u64::from_le_bytes(bytes[off..off + 8].try_into().unwrap()));
        Ok((TlweCiphertext { mask, body }, need))
    }
}

#[inline]
fn key_mask_dot(key: &SecretKey, ct: &TlweCiphertext, params: &TlweParams) -> u64 {
    let mut acc = 0u64;
    for (s, a) in key.bits.iter().zip(&ct.mask) {
        acc = acc.wrapping_add(s.wrapping_mul(a.0));
    }
    acc & params.q_mask()
}

/// Encrypts a plaintext slot under `key`, drawing the mask uniformly and the
/// noise as `round(q * N(0, sigma_lwe^2)) / q`.
pub fn encrypt<R: Rng>(
    m: PlaintextElement,
    key: &SecretKey,
    params: &TlweParams,
    rng: &mut R,
) -> Result<TlweCiphertext, TlweError> {
    if key.bits.len() != params.n {
        return Err(TlweError::DimensionMismatch {
            got: key.bits.len(),
            expected: params.n,
        });
    }
    let mask: Vec<TorusElement> = (0..params.n)
        .map(|_| TorusElement(rng.random::<u64>() & params.q_mask()))
        .collect();
    let ct = TlweCiphertext {
        mask,
        body: TorusElement(0),
    };
    let dot = key_mask_dot(key, &ct, params);
    let message = m.0.wrapping_mul(params.slot_width());
    let noise = sample_noise_numerator(params, rng);
    let body = dot.wrapping_add(message).wrapping_add(noise) & params.q_mask();
    Ok(TlweCiphertext {
        body: TorusElement(body),
        ..ct
    })
}

fn sample_noise_numerator<R: Rng>(params: &TlweParams, rng: &mut R) -> u64 {
    if params.sigma_lwe == 0.0 {
        return 0;
    }
    let std_numerator = params.sigma_lwe * params.q as f64;
    let normal = Normal::new(0.0, std_numerator).expect("validated sigma");
    let e = normal.sample(rng).round() as i64;
    (e as u64) & params.q_mask()
}

/// Decrypts by removing the key-mask product and rounding `b - <s, a>` to the
/// nearest plaintext slot; exact ties round toward the smaller slot.
pub fn decrypt(
    ct: &TlweCiphertext,
    key: &SecretKey,
    params: &TlweParams,
) -> Result<PlaintextElement, TlweError> {
    if ct.mask.len() != params.n || key.bits.len() != params.n {
        return Err(TlweError::DimensionMismatch {
            got: ct.mask.len(),
            expected: params.n,
        });
    }
    let dot = key_mask_dot(key, ct, params);
    let m_star = ct.body.0.wrapping_sub(dot) & params.q_mask();
    let w = params.slot_width();
    let base = m_star / w;
    let rem = m_star % w;
    let slot = if rem > w / 2 { base + 1 } else { base } % params.p;
    debug_assert!(rem.min(w - rem) <= w / 2, "rounding residual exceeds half a slot");
    Ok(PlaintextElement(slot))
}

/// Componentwise torus addition; decrypts to the sum of the plaintexts while
/// the accumulated noise stays below half a slot.
pub fn ct_add(
    c1: &TlweCiphertext,
    c2: &TlweCiphertext,
    params: &TlweParams,
) -> Result<TlweCiphertext, TlweError> {
    if c1.mask.len() != c2.mask.len() || c1.mask.len() != params.n {
        return Err(TlweError::DimensionMismatch {
            got: c2.mask.len(),
            expected: c1.mask.len(),
        });
    }
    let mask = c1
        .mask
        .iter()
        .zip(&c2.mask)
        .map(|(a, b)| a.add(*b, params))
        .collect();
    Ok(TlweCiphertext {
        mask,
        body: c1.body.add(c2.body, params),
    })
}

/// Multiplies every component by the signed integer `z`. The magnitude bound
/// `z_max` protects the session's noise budget, which grows linearly in `|z|`.
pub fn ct_scalar_mul(
    z: i64,
    ct: &TlweCiphertext,
    z_max: i64,
    params: &TlweParams,
) -> Result<TlweCiphertext, TlweError> {
    if z.checked_abs().is_none_or(|a| a > z_max) {
        return Err(TlweError::ScalarOutOfRange { value: z, bound: z_max });
    }
    let mask = ct.mask.iter().map(|a| a.scalar_mul(z, params)).collect();
    Ok(TlweCiphertext {
        mask,
        body: ct.body.scalar_mul(z, params),
    })
}

/// Adds the plaintext offset `mu` to the body only. With `mu` uniform over
/// the slot group this is a one-time pad on the plaintext.
pub fn ct_add_plain(
    ct: &TlweCiphertext,
    mu: PlaintextElement,
    params: &TlweParams,
) -> TlweCiphertext {
    TlweCiphertext {
        mask: ct.mask.clone(),
        body: ct
            .body
            .add(TorusElement(mu.0.wrapping_mul(params.slot_width())), params),
    }
}

/// In-place fused `acc += z * ct`, equivalent to
/// `ct_add(acc, ct_scalar_mul(z, ct))` without the intermediate allocation.
pub(crate) fn ct_scaled_add_assign(
    acc: &mut TlweCiphertext,
    z: i64,
    ct: &TlweCiphertext,
    params: &TlweParams,
) {
    debug_assert_eq!(acc.mask.len(), ct.mask.len());
    let mask = params.q_mask();
    for (a, b) in acc.mask.iter_mut().zip(&ct.mask) {
        a.0 = a.0.wrapping_add(b.0.wrapping_mul(z as u64)) & mask;
    }
    acc.body.0 = acc.body.0.wrapping_add(ct.body.0.wrapping_mul(z as u64)) & mask;
}

/// Outcome of the pre-session noise-budget check.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseBudgetReport {
    pub pass: bool,
    /// Six-sigma bound on the accumulated noise, in torus units.
    pub noise_bound: f64,
    /// Decryption tolerance `1 / (2p)`.
    pub limit: f64,
    /// `limit / noise_bound`; values above 1 pass.
    pub slack: f64,
}

/// Checks that `fan_in` ciphertexts, each scaled by up to `z_max`, still
/// decrypt correctly at six standard deviations of accumulated noise:
/// `sigma_lwe * z_max * sqrt(fan_in) * 6 < 1 / (2p)`.
///
/// Failure is a report, not an error; callers must refuse to start a session
/// on a failing report.
pub fn validate_noise_budget(params: &TlweParams, z_max: i64, fan_in: usize) -> NoiseBudgetReport {
    let noise_bound = params.sigma_lwe * z_max as f64 * (fan_in as f64).sqrt() * 6.0;
    let limit = 1.0 / (2.0 * params.p as f64);
    NoiseBudgetReport {
        pass: noise_bound < limit,
        noise_bound,
        limit,
        slack: if noise_bound == 0.0 {
            f64::INFINITY
        } else {
            limit / noise_bound
        },
    }
}
