//! Length-prefixed framing between the edge agent and the cloud server.
//!
//! ```text
//! +---------+------+----------------+------------------------+
//! | "HCG1"  | type | payload_len BE | payload (UTF-8 JSON)   |
//! | 4 bytes | 1 B  | 4 bytes        | payload_len bytes      |
//! +---------+------+----------------+------------------------+
//! ```
//!
//! Types: 1 DetectRequest, 2 DetectResponse, 3 Error, 4 Ping, 5 Pong.
//! Ping and Pong carry an empty payload. Payloads are capped at 16 MiB.

use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detect::FinalDetection;

pub const MAGIC: [u8; 4] = *b"HCG1";
pub const HEADER_LEN: usize = 9;
pub const MAX_PAYLOAD: u32 = 16 * 1024 * 1024;

#[derive(Debug, Error)]
pub enum WireError {
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unknown message type {0}")]
    UnknownType(u8),
    #[error("payload length {0} exceeds the 16 MiB limit")]
    Oversize(u32),
    #[error("truncated frame: expected {expected} bytes, got {got}")]
    Truncated { expected: usize, got: usize },
    #[error("bad payload: {0}")]
    BadPayload(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl WireError {
    /// Stable numeric code per failure class.
    pub fn code(&self) -> u8 {
        match self {
            WireError::BadMagic(_) => 1,
            WireError::UnknownType(_) => 2,
            WireError::Oversize(_) => 3,
            WireError::Truncated { .. } => 4,
            WireError::BadPayload(_) => 5,
            WireError::Io(_) => 6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum MsgType {
    DetectRequest = 1,
    DetectResponse = 2,
    Error = 3,
    Ping = 4,
    Pong = 5,
}

impl TryFrom<u8> for MsgType {
    type Error = WireError;

    fn try_from(v: u8) -> Result<Self, WireError> {
        Ok(match v {
            1 => MsgType::DetectRequest,
            2 => MsgType::DetectResponse,
            3 => MsgType::Error,
            4 => MsgType::Ping,
            5 => MsgType::Pong,
            other => return Err(WireError::UnknownType(other)),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub msg_type: MsgType,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn wire_len(&self) -> usize {
        HEADER_LEN + self.payload.len()
    }

    pub fn encode(&self) -> Result<Vec<u8>, WireError> {
        let len = u32::try_from(self.payload.len()).map_err(|_| WireError::Oversize(u32::MAX))?;
        if len > MAX_PAYLOAD {
            return Err(WireError::Oversize(len));
        }
        let mut out = Vec::with_capacity(self.wire_len());
        out.extend_from_slice(&MAGIC);
        out.push(self.msg_type as u8);
        out.extend_from_slice(&len.to_be_bytes());
        out.extend_from_slice(&self.payload);
        Ok(out)
    }

    /// Decodes one frame from the front of `buf`, returning it with the
    /// number of bytes consumed.
    pub fn decode(buf: &[u8]) -> Result<(Frame, usize), WireError> {
        if buf.len() < HEADER_LEN {
            // a short buffer with the wrong magic is still a bad magic
            let n = buf.len().min(4);
            if buf[..n] != MAGIC[..n] {
                let mut m = [0u8; 4];
                m[..n].copy_from_slice(&buf[..n]);
                return Err(WireError::BadMagic(m));
            }
            return Err(WireError::Truncated { expected: HEADER_LEN, got: buf.len() });
        }
        let (msg_type, len) = parse_header(buf[..HEADER_LEN].try_into().expect("header length"))?;
        let end = HEADER_LEN + len as usize;
        if buf.len() < end {
            return Err(WireError::Truncated { expected: end, got: buf.len() });
        }
        Ok((Frame { msg_type, payload: buf[HEADER_LEN..end].to_vec() }, end))
    }
}

fn parse_header(h: &[u8; HEADER_LEN]) -> Result<(MsgType, u32), WireError> {
    let magic: [u8; 4] = h[..4].try_into().expect("four bytes");
    if magic != MAGIC {
        return Err(WireError::BadMagic(magic));
    }
    let msg_type = MsgType::try_from(h[4])?;
    let len = u32::from_be_bytes(h[5..9].try_into().expect("four bytes"));
    if len > MAX_PAYLOAD {
        return Err(WireError::Oversize(len));
    }
    Ok((msg_type, len))
}

/// Reads exactly `buf.len()` bytes; returns how many arrived before EOF.
fn read_full<R: Read>(r: &mut R, buf: &mut [u8]) -> io::Result<usize> {
    let mut got = 0;
    while got < buf.len() {
        match r.read(&mut buf[got..]) {
            Ok(0) => break,
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(got)
}

/// Reads the next frame. `Ok(None)` on a clean end of stream between frames.
pub fn read_frame<R: Read>(r: &mut R) -> Result<Option<Frame>, WireError> {
    let mut header = [0u8; HEADER_LEN];
    let got = read_full(r, &mut header)?;
    if got == 0 {
        return Ok(None);
    }
    if got < HEADER_LEN {
        return Err(WireError::Truncated { expected: HEADER_LEN, got });
    }
    let (msg_type, len) = parse_header(&header)?;
    let mut payload = vec![0u8; len as usize];
    let got = read_full(r, &mut payload)?;
    if got < payload.len() {
        return Err(WireError::Truncated { expected: HEADER_LEN + payload.len(), got: HEADER_LEN + got });
    }
    Ok(Some(Frame { msg_type, payload }))
}

/// Writes a frame and returns the number of bytes put on the wire.
pub fn write_frame<W: Write>(w: &mut W, frame: &Frame) -> Result<usize, WireError> {
    let bytes = frame.encode()?;
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(bytes.len())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectRequest {
    pub image_id: String,
    pub padding_bytes: u64,
    /// `padding_bytes` ASCII zeros standing in for the image upload.
    #[serde(default)]
    pub padding: String,
}

impl DetectRequest {
    pub fn new(image_id: impl Into<String>, padding_bytes: u64) -> Self {
        Self { image_id: image_id.into(), padding_bytes, padding: "0".repeat(padding_bytes as usize) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectResponse {
    pub image_id: String,
    pub detections: Vec<FinalDetection>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorPayload {
    pub reason: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_id: Option<String>,
}

/// Typed view of a frame.
#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    DetectRequest(DetectRequest),
    DetectResponse(DetectResponse),
    Error(ErrorPayload),
    Ping,
    Pong,
}

impl Message {
    pub fn to_frame(&self) -> Frame {
        let (msg_type, payload) = match self {
            Message::DetectRequest(r) => (MsgType::DetectRequest, to_json(r)),
            Message::DetectResponse(r) => (MsgType::DetectResponse, to_json(r)),
            Message::Error(e) => (MsgType::Error, to_json(e)),
            Message::Ping => (MsgType::Ping, Vec::new()),
            Message::Pong => (MsgType::Pong, Vec::new()),
        };
        Frame { msg_type, payload }
    }

    pub fn from_frame(frame: &Frame) -> Result<Self, WireError> {
        fn parse<T: for<'de> Deserialize<'de>>(p: &[u8]) -> Result<T, WireError> {
            let text = std::str::from_utf8(p).map_err(|e| WireError::BadPayload(e.to_string()))?;
            serde_json::from_str(text).map_err(|e| WireError::BadPayload(e.to_string()))
        }
        let empty = |m: Message| {
            if frame.payload.is_empty() {
                Ok(m)
            } else {
                Err(WireError::BadPayload("ping/pong payload must be empty".into()))
            }
        };
        match frame.msg_type {
            MsgType::DetectRequest => {
                let r: DetectRequest = parse(&frame.payload)?;
                if r.padding.len() as u64 != r.padding_bytes || r.padding.bytes().any(|b| b != b'0') {
                    return Err(WireError::BadPayload("padding does not match padding_bytes".into()));
                }
                Ok(Message::DetectRequest(r))
            }
            MsgType::DetectResponse => Ok(Message::DetectResponse(parse(&frame.payload)?)),
            MsgType::Error => Ok(Message::Error(parse(&frame.payload)?)),
            MsgType::Ping => empty(Message::Ping),
            MsgType::Pong => empty(Message::Pong),
        }
    }
}

fn to_json<T: Serialize>(v: &T) -> Vec<u8> {
    serde_json::to_vec(v).expect("payload serializes")
}
