//! Host/guest framing. Every frame is a 4-byte big-endian length followed by
//! that many bytes of UTF-8 JSON: `{"type": ..., "seq": ..., "payload": ...}`.
//! The byte-level contract is written up in `docs/wire-protocol.md`.

use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const PROTOCOL_VERSION: u32 = 1;
/// Frames above this size are rejected as corrupt.
pub const MAX_FRAME_BYTES: u32 = 64 << 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameType {
    Handshake,
    Exec,
    Out,
    Err,
    Status,
    Interrupt,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    #[serde(rename = "type")]
    pub kind: FrameType,
    pub seq: u64,
    #[serde(default)]
    pub payload: Value,
}

impl Frame {
    pub fn new(kind: FrameType, seq: u64, payload: impl Into<Value>) -> Self {
        Self {
            kind,
            seq,
            payload: payload.into(),
        }
    }

    pub fn text(&self) -> &str {
        self.payload.as_str().unwrap_or("")
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Handshake {
    pub protocol: u32,
    pub runner: String,
    pub pid: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStatus {
    Ok,
    Exception,
}

/// Payload of the one `status` frame closing each cell.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatusPayload {
    pub status: CellStatus,
    /// Sum of the UTF-8 byte lengths of every out/err payload of the cell.
    pub total_output_bytes: u64,
    pub wall_ms: u64,
    /// Traceback or interruption notice when `status` is `exception`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub protocol_error: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum FrameError {
    #[error("stream closed")]
    Eof,
    #[error("frame of {0} bytes exceeds limit")]
    TooLarge(u32),
    /// The frame body was consumed but did not decode; the stream is still aligned.
    #[error("malformed frame: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub fn encode(frame: &Frame) -> Vec<u8> {
    let body = serde_json::to_vec(frame).expect("frames always serialize");
    let mut out = Vec::with_capacity(body.len() + 4);
    out.extend_from_slice(&(body.len() as u32).to_be_bytes());
    out.extend_from_slice(&body);
    out
}

pub fn write_frame(w: &mut impl Write, frame: &Frame) -> io::Result<()> {
    w.write_all(&encode(frame))?;
    w.flush()
}

pub fn read_frame(r: &mut impl Read) -> Result<Frame, FrameError> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Err(FrameError::Eof),
        Err(e) => return Err(e.into()),
    }
    let len = u32::from_be_bytes(len);
    if len > MAX_FRAME_BYTES {
        return Err(FrameError::TooLarge(len));
    }
    let mut body = vec![0u8; len as usize];
    r.read_exact(&mut body).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => FrameError::Eof,
        _ => FrameError::Io(e),
    })?;
    serde_json::from_slice(&body).map_err(|e| FrameError::Malformed(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn exact_bytes() {
        let f = Frame::new(FrameType::Exec, 3, "print hi");
        let bytes = encode(&f);
        let body = br#"{"type":"exec","seq":3,"payload":"print hi"}"#;
        assert_eq!(&bytes[..4], &(body.len() as u32).to_be_bytes());
        assert_eq!(&bytes[4..], body);
        assert_eq!(read_frame(&mut &bytes[..]).unwrap(), f);
    }

    #[test]
    fn malformed_body_keeps_alignment() {
        let mut stream = Vec::new();
        stream.extend_from_slice(&5u32.to_be_bytes());
        stream.extend_from_slice(b"nope!");
        stream.extend(encode(&Frame::new(FrameType::Interrupt, 1, Value::Null)));
        let mut r = &stream[..];
        assert!(matches!(read_frame(&mut r), Err(FrameError::Malformed(_))));
        assert_eq!(read_frame(&mut r).unwrap().kind, FrameType::Interrupt);
        assert!(matches!(read_frame(&mut r), Err(FrameError::Eof)));
    }

    #[test]
    fn status_payload_shape() {
        let s = StatusPayload {
            status: CellStatus::Ok,
            total_output_bytes: 3,
            wall_ms: 10,
            error: None,
            protocol_error: false,
        };
        assert_eq!(
            serde_json::to_value(&s).unwrap(),
            json!({"status": "ok", "total_output_bytes": 3, "wall_ms": 10})
        );
    }

    #[test]
    fn oversize_rejected() {
        let bytes = (MAX_FRAME_BYTES + 1).to_be_bytes();
        assert!(matches!(read_frame(&mut &bytes[..]), Err(FrameError::TooLarge(_))));
    }
}
