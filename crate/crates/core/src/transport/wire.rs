//! Frame layout: little-endian `{tag: u64, length: u64}` followed by
//! `length` payload bytes.
//!
//! Tags with the top bit clear carry revision payloads and encode
//! `(object << 24) | revision`. Tags with the top bit set are control
//! messages: bits 56..63 hold the kind, bits 0..56 a kind-specific value.

use std::io::{self, Read, Write};

use crate::store::RevisionRef;

pub const HEADER_LEN: usize = 16;

const CONTROL_BIT: u64 = 1 << 63;
const KIND_SHIFT: u32 = 56;
const VALUE_MASK: u64 = (1 << KIND_SHIFT) - 1;
const REVISION_BITS: u32 = 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum ControlKind {
    Fingerprint = 1,
    Abort = 2,
    Bye = 3,
    Hello = 4,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub tag: u64,
    pub payload: Vec<u8>,
}

impl Message {
    pub fn data(r: RevisionRef, payload: Vec<u8>) -> Self {
        Message {
            tag: data_tag(r),
            payload,
        }
    }

    pub fn control(kind: ControlKind, value: u64, payload: Vec<u8>) -> Self {
        Message {
            tag: control_tag(kind, value),
            payload,
        }
    }

    pub fn is_data(&self) -> bool {
        self.tag & CONTROL_BIT == 0
    }

    pub fn control_kind(&self) -> Option<(ControlKind, u64)> {
        if self.is_data() {
            return None;
        }
        let kind = match ((self.tag & !CONTROL_BIT) >> KIND_SHIFT) as u8 {
            1 => ControlKind::Fingerprint,
            2 => ControlKind::Abort,
            3 => ControlKind::Bye,
            4 => ControlKind::Hello,
            _ => return None,
        };
        Some((kind, self.tag & VALUE_MASK))
    }
}

pub fn data_tag(r: RevisionRef) -> u64 {
    debug_assert!(r.object.0 < (1 << (63 - REVISION_BITS)));
    debug_assert!((r.index as u64) < (1 << REVISION_BITS));
    (r.object.0 << REVISION_BITS) | r.index as u64
}

pub fn control_tag(kind: ControlKind, value: u64) -> u64 {
    CONTROL_BIT | ((kind as u64) << KIND_SHIFT) | (value & VALUE_MASK)
}

pub fn encode_header(tag: u64, len: u64) -> [u8; HEADER_LEN] {
    let mut h = [0u8; HEADER_LEN];
    h[..8].copy_from_slice(&tag.to_le_bytes());
    h[8..].copy_from_slice(&len.to_le_bytes());
    h
}

pub fn write_frame<W: Write>(w: &mut W, msg: &Message) -> io::Result<()> {
    w.write_all(&encode_header(msg.tag, msg.payload.len() as u64))?;
    w.write_all(&msg.payload)
}

/// Reads one frame; `Ok(None)` on clean end of stream at a frame boundary.
pub fn read_frame<R: Read>(r: &mut R) -> io::Result<Option<Message>> {
    let mut h = [0u8; HEADER_LEN];
    let mut got = 0;
    while got < HEADER_LEN {
        match r.read(&mut h[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(io::ErrorKind::UnexpectedEof.into()),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    let tag = u64::from_le_bytes(h[..8].try_into().unwrap());
    let len = u64::from_le_bytes(h[8..].try_into().unwrap()) as usize;
    let mut payload = vec![0u8; len];
    r.read_exact(&mut payload)?;
    Ok(Some(Message { tag, payload }))
}
