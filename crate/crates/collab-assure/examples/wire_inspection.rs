//! A look at the bytes: every message travels as a length-prefixed frame
//! with a version byte, a tag and a fixed little-endian body layout. Reals
//! ride as signed 64-bit integers at the micro scale.
//!
//! ```bash
//! cargo run --release -p collab-assure --example wire_inspection
//! ```

use collab_assure::protocol::{frame_decode, frame_encode, ProtocolMessage, Verdict};

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect::<Vec<_>>().join(" ")
}

fn main() -> anyhow::Result<()> {
    let request = ProtocolMessage::NoiseRequest {
        epoch: 2,
        batch: 5,
        coords: 15,
    };
    let frame = frame_encode(&request);
    println!("noise request, {} bytes on the wire:", frame.len());
    println!("  length   (u32 be): {}", hex(&frame[0..4]));
    println!("  version          : {}", hex(&frame[4..5]));
    println!("  tag              : {}", hex(&frame[5..6]));
    println!("  epoch    (u64 le): {}", hex(&frame[6..14]));
    println!("  batch    (u32 le): {}", hex(&frame[14..18]));
    println!("  coords   (u32 le): {}", hex(&frame[18..22]));
    println!("  decodes back to  : {:?}", frame_decode(&frame)?);

    let verdict = ProtocolMessage::Verdict(Verdict {
        improved: true,
        accuracies: Some((0.7289, 0.8311)),
    });
    let frame = frame_encode(&verdict);
    println!("\nverdict with accuracies, {} bytes:", frame.len());
    println!("  frame: {}", hex(&frame));
    println!("  note the accuracies as micro-scaled i64: 728900 and 831100");
    println!("  decodes back to: {:?}", frame_decode(&frame)?);

    let mut corrupted = frame.clone();
    corrupted[4] = 0x02;
    println!("\ncorrupting the version byte: {}", frame_decode(&corrupted).unwrap_err());
    let truncated = &frame[..frame.len() - 3];
    println!("truncating the frame:       {}", frame_decode(truncated).unwrap_err());
    Ok(())
}
