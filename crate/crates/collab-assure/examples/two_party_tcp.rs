//! The same session over a real socket: party one listens on loopback,
//! party two connects from another thread, and both ends run the framed
//! wire protocol. With equal seeds the transcript is bit-identical to the
//! in-process run.
//!
//! The `collab-assure p1` / `collab-assure p2` subcommands run exactly this
//! across two processes or machines.
//!
//! ```bash
//! cargo run --release -p collab-assure --example two_party_tcp
//! ```

use std::net::{TcpListener, TcpStream};

use collab_assure::data::{gen_iris_like, split, SplitPlan};
use collab_assure::nn::LayerSpec;
use collab_assure::protocol::{
    run_in_process, run_party_one, run_party_two, NoiseBudget, SessionConfig, TcpTransport,
    VerdictDetail,
};

fn main() -> anyhow::Result<()> {
    let dataset = gen_iris_like(1234);
    let (d1, d2, d_hold) = split(&dataset, &SplitPlan { seed: 8, ..SplitPlan::default() })?;

    let layers = LayerSpec::with_hidden(4, &[8], 3)?;
    let mut config = SessionConfig::new(layers, NoiseBudget::Total(5.0), 25, 16, 77);
    config.z_max = 4_000_000;
    config.verdict_detail = VerdictDetail::WithAccuracies;

    let listener = TcpListener::bind("127.0.0.1:0")?;
    let addr = listener.local_addr()?;
    println!("party one listening on {addr}");

    let (p1, p2) = std::thread::scope(|scope| -> anyhow::Result<_> {
        let config_ref = &config;
        let d2_ref = &d2;
        let peer = scope.spawn(move || {
            let stream = TcpStream::connect(addr).expect("connect to party one");
            run_party_two(&mut TcpTransport::new(stream), config_ref, d2_ref)
        });
        let (stream, peer_addr) = listener.accept()?;
        println!("party two connected from {peer_addr}");
        let p1 = run_party_one(&mut TcpTransport::new(stream), &config, &d1, &d_hold)?;
        let p2 = peer.join().expect("party two thread")?;
        Ok((p1, p2))
    })?;

    println!(
        "verdicts agree over TCP: improved = {} / {}, accuracies {:?}",
        p1.verdict.improved, p2.verdict.improved, p1.verdict.accuracies
    );

    // Determinism across transports: the in-process run of the same session
    // produces the identical model.
    let (inproc, _) = run_in_process(&config, &d1, &d2, &d_hold)?;
    println!(
        "in-process rerun matches the TCP run bit for bit: {}",
        inproc.model.to_bytes() == p1.model.to_bytes()
    );
    Ok(())
}
