//! Typed payload buffers.
//!
//! Payloads are stored with their element type so kernels get typed slices
//! and the transport can serialize them as little-endian bytes.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ElemType {
    F64,
    I32,
    Raw,
}

impl ElemType {
    pub fn width(self) -> usize {
        match self {
            ElemType::F64 => 8,
            ElemType::I32 => 4,
            ElemType::Raw => 1,
        }
    }
}

/// Element type plus length. `len: None` marks a dynamically sized object
/// whose payload length is decided by each generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub elem: ElemType,
    pub len: Option<usize>,
}

impl Layout {
    pub fn f64(len: usize) -> Self {
        Layout {
            elem: ElemType::F64,
            len: Some(len),
        }
    }

    pub fn i32(len: usize) -> Self {
        Layout {
            elem: ElemType::I32,
            len: Some(len),
        }
    }

    pub fn raw(len: usize) -> Self {
        Layout {
            elem: ElemType::Raw,
            len: Some(len),
        }
    }

    pub fn dynamic(elem: ElemType) -> Self {
        Layout { elem, len: None }
    }

    pub fn size_bytes(&self) -> Option<usize> {
        self.len.map(|n| n * self.elem.width())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Buffer {
    F64(Vec<f64>),
    I32(Vec<i32>),
    Raw(Vec<u8>),
}

impl Buffer {
    pub fn zeroed(elem: ElemType, len: usize) -> Self {
        match elem {
            ElemType::F64 => Buffer::F64(vec![0.0; len]),
            ElemType::I32 => Buffer::I32(vec![0; len]),
            ElemType::Raw => Buffer::Raw(vec![0; len]),
        }
    }

    pub fn elem(&self) -> ElemType {
        match self {
            Buffer::F64(_) => ElemType::F64,
            Buffer::I32(_) => ElemType::I32,
            Buffer::Raw(_) => ElemType::Raw,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Buffer::F64(v) => v.len(),
            Buffer::I32(v) => v.len(),
            Buffer::Raw(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn size_bytes(&self) -> usize {
        self.len() * self.elem().width()
    }

    pub fn as_f64(&self) -> Option<&[f64]> {
        match self {
            Buffer::F64(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_f64_mut(&mut self) -> Option<&mut [f64]> {
        match self {
            Buffer::F64(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_i32(&self) -> Option<&[i32]> {
        match self {
            Buffer::I32(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_i32_mut(&mut self) -> Option<&mut [i32]> {
        match self {
            Buffer::I32(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_raw(&self) -> Option<&[u8]> {
        match self {
            Buffer::Raw(v) => Some(v),
            _ => None,
        }
    }

    /// Raw buffers may be resized by their generator.
    pub fn as_raw_mut(&mut self) -> Option<&mut Vec<u8>> {
        match self {
            Buffer::Raw(v) => Some(v),
            _ => None,
        }
    }

    pub fn to_le_bytes(&self) -> Vec<u8> {
        match self {
            Buffer::F64(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
            Buffer::I32(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
            Buffer::Raw(v) => v.clone(),
        }
    }

    /// Returns `None` when `bytes` is not a whole number of elements.
    pub fn from_le_bytes(elem: ElemType, bytes: &[u8]) -> Option<Self> {
        if !bytes.len().is_multiple_of(elem.width()) {
            return None;
        }
        Some(match elem {
            ElemType::F64 => Buffer::F64(
                bytes
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            ElemType::I32 => Buffer::I32(
                bytes
                    .chunks_exact(4)
                    .map(|c| i32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            ElemType::Raw => Buffer::Raw(bytes.to_vec()),
        })
    }
}
