//! Byte-level transports for framed messages.
//!
//! Both roles speak complete frames (see [`super::message`]); a transport
//! only moves opaque frame bytes. The in-process pair and the TCP stream
//! therefore produce bit-identical transcripts for the same seeds.

use std::io::{Read, Write};
use std::net::TcpStream;
use std::sync::mpsc;

use super::ProtocolError;

/// Largest frame a receiver will accept (defends against corrupt length
/// headers, not against a malicious peer).
const MAX_FRAME_BYTES: usize = 1 << 31;

pub trait Transport {
    fn send(&mut self, frame: &[u8]) -> Result<(), ProtocolError>;
    fn recv(&mut self) -> Result<Vec<u8>, ProtocolError>;
}

impl<T: Transport + ?Sized> Transport for &mut T {
    fn send(&mut self, frame: &[u8]) -> Result<(), ProtocolError> {
        (**self).send(frame)
    }

    fn recv(&mut self) -> Result<Vec<u8>, ProtocolError> {
        (**self).recv()
    }
}

/// One endpoint of an in-process duplex queue.
pub struct InProcessTransport {
    tx: mpsc::Sender<Vec<u8>>,
    rx: mpsc::Receiver<Vec<u8>>,
}

/// A connected pair of in-process endpoints.
pub fn in_process_pair() -> (InProcessTransport, InProcessTransport) {
    let (tx_a, rx_b) = mpsc::channel();
    let (tx_b, rx_a) = mpsc::channel();
    (
        InProcessTransport { tx: tx_a, rx: rx_a },
        InProcessTransport { tx: tx_b, rx: rx_b },
    )
}

impl Transport for InProcessTransport {
    fn send(&mut self, frame: &[u8]) -> Result<(), ProtocolError> {
        self.tx
            .send(frame.to_vec())
            .map_err(|_| ProtocolError::Transport("peer hung up".into()))
    }

    fn recv(&mut self) -> Result<Vec<u8>, ProtocolError> {
        self.rx
            .recv()
            .map_err(|_| ProtocolError::Transport("peer hung up".into()))
    }
}

/// A framed transport over any reliable ordered byte stream.
pub struct TcpTransport {
    stream: TcpStream,
}

impl TcpTransport {
    pub fn new(stream: TcpStream) -> Self {
        TcpTransport { stream }
    }
}

impl Transport for TcpTransport {
    fn send(&mut self, frame: &[u8]) -> Result<(), ProtocolError> {
        self.stream
            .write_all(frame)
            .and_then(|()| self.stream.flush())
            .map_err(|e| ProtocolError::Transport(e.to_string()))
    }

    fn recv(&mut self) -> Result<Vec<u8>, ProtocolError> {
        let mut header = [0u8; 4];
        self.stream
            .read_exact(&mut header)
            .map_err(|e| ProtocolError::Transport(e.to_string()))?;
        let payload_len = u32::from_be_bytes(header) as usize;
        if payload_len + 5 > MAX_FRAME_BYTES {
            return Err(ProtocolError::Transport(format!(
                "frame of {payload_len} bytes exceeds the receive limit"
            )));
        }
        // Re-assemble the full frame: header, version byte, payload.
        let mut frame = vec![0u8; 5 + payload_len];
        frame[0..4].copy_from_slice(&header);
        self.stream
            .read_exact(&mut frame[4..])
            .map_err(|e| ProtocolError::Transport(e.to_string()))?;
        Ok(frame)
    }
}

/// Wraps a transport and keeps a copy of every frame in each direction.
pub struct RecordingTransport<T: Transport> {
    pub inner: T,
    pub sent: Vec<Vec<u8>>,
    pub received: Vec<Vec<u8>>,
}

impl<T: Transport> RecordingTransport<T> {
    pub fn new(inner: T) -> Self {
        RecordingTransport {
            inner,
            sent: Vec::new(),
            received: Vec::new(),
        }
    }
}

impl<T: Transport> Transport for RecordingTransport<T> {
    fn send(&mut self, frame: &[u8]) -> Result<(), ProtocolError> {
        self.sent.push(frame.to_vec());
        self.inner.send(frame)
    }

    fn recv(&mut self) -> Result<Vec<u8>, ProtocolError> {
        let frame = self.inner.recv()?;
        self.received.push(frame.clone());
        Ok(frame)
    }
}
