//! Batch envelope encoding and block compression.
//!
//! Wire layout of a producer batch:
//!
//! ```text
//! [codec id: u8][message count: u32 LE][uncompressed length: u32 LE][body]
//! ```
//!
//! The body is the codec-encoded concatenation of message frames, each
//! `[key length: u32 LE][payload length: u32 LE][key bytes][payload bytes]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ENVELOPE_HEADER_LEN: usize = 1 + 4 + 4;

/// Compression applied to batch bodies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Codec {
    /// Identity codec.
    None,
    /// Snappy-backed block compression.
    Block,
}

impl Codec {
    pub fn id(self) -> u8 {
        match self {
            Codec::None => 0,
            Codec::Block => 1,
        }
    }

    pub fn from_id(id: u8) -> Result<Codec> {
        match id {
            0 => Ok(Codec::None),
            1 => Ok(Codec::Block),
            other => Err(Error::Envelope(format!("unknown codec id {other}"))),
        }
    }

    fn compress(self, body: &[u8]) -> Vec<u8> {
        match self {
            Codec::None => body.to_vec(),
            Codec::Block => snap::raw::Encoder::new()
                .compress_vec(body)
                .expect("snappy compression is infallible for in-memory inputs"),
        }
    }

    fn decompress(self, body: &[u8], uncompressed_len: usize) -> Result<Vec<u8>> {
        match self {
            Codec::None => {
                if body.len() != uncompressed_len {
                    return Err(Error::Envelope(format!(
                        "identity body length {} disagrees with header {uncompressed_len}",
                        body.len()
                    )));
                }
                Ok(body.to_vec())
            }
            Codec::Block => {
                let out = snap::raw::Decoder::new()
                    .decompress_vec(body)
                    .map_err(|e| Error::Envelope(format!("block decompression failed: {e}")))?;
                if out.len() != uncompressed_len {
                    return Err(Error::Envelope(format!(
                        "decompressed length {} disagrees with header {uncompressed_len}",
                        out.len()
                    )));
                }
                Ok(out)
            }
        }
    }
}

/// One message as carried inside a batch: routing key plus opaque payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MessageFrame {
    pub key: Vec<u8>,
    pub payload: Vec<u8>,
}

/// Encodes frames into a self-describing envelope.
pub fn encode_batch(codec: Codec, frames: &[MessageFrame]) -> Result<Vec<u8>> {
    if frames.len() > u32::MAX as usize {
        return Err(Error::Envelope("batch exceeds u32 message count".into()));
    }
    let mut body = Vec::new();
    for f in frames {
        if f.key.len() > u32::MAX as usize || f.payload.len() > u32::MAX as usize {
            return Err(Error::Envelope("frame exceeds u32 length".into()));
        }
        body.extend_from_slice(&(f.key.len() as u32).to_le_bytes());
        body.extend_from_slice(&(f.payload.len() as u32).to_le_bytes());
        body.extend_from_slice(&f.key);
        body.extend_from_slice(&f.payload);
    }
    if body.len() > u32::MAX as usize {
        return Err(Error::Envelope("batch body exceeds u32 length".into()));
    }
    let compressed = codec.compress(&body);
    let mut out = Vec::with_capacity(ENVELOPE_HEADER_LEN + compressed.len());
    out.push(codec.id());
    out.extend_from_slice(&(frames.len() as u32).to_le_bytes());
    out.extend_from_slice(&(body.len() as u32).to_le_bytes());
    out.extend_from_slice(&compressed);
    Ok(out)
}

/// Decodes an envelope back into its frames. Fails on any structural
/// disagreement between header and body.
pub fn decode_batch(bytes: &[u8]) -> Result<(Codec, Vec<MessageFrame>)> {
    if bytes.len() < ENVELOPE_HEADER_LEN {
        return Err(Error::Envelope(format!(
            "envelope of {} bytes is shorter than the header",
            bytes.len()
        )));
    }
    let codec = Codec::from_id(bytes[0])?;
    let count = u32::from_le_bytes(bytes[1..5].try_into().unwrap()) as usize;
    let uncompressed_len = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
    let body = codec.decompress(&bytes[ENVELOPE_HEADER_LEN..], uncompressed_len)?;

    let mut frames = Vec::with_capacity(count);
    let mut at = 0usize;
    for i in 0..count {
        if at + 8 > body.len() {
            return Err(Error::Envelope(format!("frame {i} header truncated")));
        }
        let key_len = u32::from_le_bytes(body[at..at + 4].try_into().unwrap()) as usize;
        let payload_len = u32::from_le_bytes(body[at + 4..at + 8].try_into().unwrap()) as usize;
        at += 8;
        if at + key_len + payload_len > body.len() {
            return Err(Error::Envelope(format!("frame {i} body truncated")));
        }
        let key = body[at..at + key_len].to_vec();
        at += key_len;
        let payload = body[at..at + payload_len].to_vec();
        at += payload_len;
        frames.push(MessageFrame { key, payload });
    }
    if at != body.len() {
        return Err(Error::Envelope(format!(
            "{} trailing bytes after {count} frames",
            body.len() - at
        )));
    }
    Ok((codec, frames))
}
