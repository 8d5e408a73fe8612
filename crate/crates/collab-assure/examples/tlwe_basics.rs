//! The torus-LWE layer on its own: key generation, encryption, the two
//! homomorphic operations the protocol relies on, blinding, and the
//! noise-budget check that gates every session.
//!
//! ```bash
//! cargo run --release -p collab-assure --example tlwe_basics
//! ```

use collab_assure::tlwe::{
    ct_add, ct_add_plain, ct_scalar_mul, decode_signed, decrypt, encode_signed, encrypt, keygen,
    validate_noise_budget, PlaintextElement, TlweParams,
};
use collab_assure::{rng_streams, seeded_rng};
use rand::Rng;

fn main() -> anyhow::Result<()> {
    let params = TlweParams::default();
    println!(
        "parameters: q = 2^64, p = 2^{}, n = {}, sigma = 2^{}",
        params.p.trailing_zeros(),
        params.n,
        params.sigma_lwe.log2()
    );

    let key = keygen(&params, 42)?;
    let mut rng = seeded_rng(42, rng_streams::ENCRYPT);

    // Round trip.
    let m = encode_signed(-123_456, &params)?;
    let ct = encrypt(m, &key, &params, &mut rng)?;
    println!(
        "encrypt/decrypt: -123456 -> ciphertext of {} torus elements -> {}",
        ct.mask.len() + 1,
        decode_signed(decrypt(&ct, &key, &params)?, &params)
    );

    // Additive homomorphism.
    let c5 = encrypt(encode_signed(5, &params)?, &key, &params, &mut rng)?;
    let c7 = encrypt(encode_signed(7, &params)?, &key, &params, &mut rng)?;
    let sum = ct_add(&c5, &c7, &params)?;
    println!("homomorphic add: E(5) + E(7) decrypts to {}", decode_signed(decrypt(&sum, &key, &params)?, &params));

    // Integer scalar multiplication, the workhorse of the gradient pipeline.
    let scaled = ct_scalar_mul(-250_000, &c7, 1_000_000, &params)?;
    println!(
        "homomorphic scalar: -250000 * E(7) decrypts to {}",
        decode_signed(decrypt(&scaled, &key, &params)?, &params)
    );

    // Blinding: a uniform pad on the plaintext makes the decryption a
    // one-time-pad opening.
    let blind = PlaintextElement(rng.random::<u64>() & (params.p - 1));
    let blinded = ct_add_plain(&c5, blind, &params);
    let opened = decrypt(&blinded, &key, &params)?;
    let unblinded = PlaintextElement(opened.0.wrapping_sub(blind.0) & (params.p - 1));
    println!(
        "blinding: opened slot {} looks uniform, unblinds to {}",
        opened.0,
        decode_signed(unblinded, &params)
    );

    // The pre-session safety check: can this parameter set absorb the
    // worst-case homomorphic fan-in of a session?
    let report = validate_noise_budget(&params, 1_000_000, 3 * 512);
    println!(
        "noise budget at 3 classes x batch 512, scalars to 1e6: pass = {}, slack = {:.2}",
        report.pass, report.slack
    );
    Ok(())
}
