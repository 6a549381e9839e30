//! Flat binary feature caches.
//!
//! Layout (all integers little-endian):
//!
//! | bytes | content |
//! |-------|---------|
//! | 4     | magic `ADTC` |
//! | 1     | format version (1) |
//! | 1     | dtype: 0 = f32, 1 = u8 |
//! | 1     | rank `r` |
//! | 1     | reserved (0) |
//! | 8·r   | dimensions, u64 each |
//! | ...   | row-major element data |

use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"ADTC";
const VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum CacheArray {
    F32 { shape: Vec<usize>, data: Vec<f32> },
    U8 { shape: Vec<usize>, data: Vec<u8> },
}

impl CacheArray {
    pub fn shape(&self) -> &[usize] {
        match self {
            CacheArray::F32 { shape, .. } | CacheArray::U8 { shape, .. } => shape,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let (code, shape) = match self {
            CacheArray::F32 { shape, .. } => (0u8, shape),
            CacheArray::U8 { shape, .. } => (1u8, shape),
        };
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&[VERSION, code, shape.len() as u8, 0]);
        for &d in shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        match self {
            CacheArray::F32 { data, .. } => data.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
            CacheArray::U8 { data, .. } => out.extend_from_slice(data),
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        if bytes.len() < 8 || &bytes[..4] != MAGIC {
            return Err("not a feature cache (bad magic)".into());
        }
        if bytes[4] != VERSION {
            return Err(format!("unsupported cache version {}", bytes[4]));
        }
        let rank = bytes[6] as usize;
        let header = 8 + 8 * rank;
        if bytes.len() < header {
            return Err("truncated header".into());
        }
        let shape: Vec<usize> = (0..rank)
            .map(|i| u64::from_le_bytes(bytes[8 + 8 * i..16 + 8 * i].try_into().unwrap()) as usize)
            .collect();
        let n: usize = shape.iter().product();
        let body = &bytes[header..];
        match bytes[5] {
            0 if body.len() == 4 * n => Ok(CacheArray::F32 {
                data: body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect(),
                shape,
            }),
            1 if body.len() == n => Ok(CacheArray::U8 {
                data: body.to_vec(),
                shape,
            }),
            0 | 1 => Err(format!("payload size {} does not match shape {shape:?}", body.len())),
            other => Err(format!("unknown dtype code {other}")),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|msg| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            msg,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip(rows in 0usize..6, cols in 0usize..6, seed in any::<u32>()) {
            let data: Vec<f32> = (0..rows * cols).map(|i| (i as f32 + seed as f32).sin()).collect();
            let a = CacheArray::F32 { shape: vec![rows, cols], data };
            prop_assert_eq!(CacheArray::from_bytes(&a.to_bytes()).unwrap(), a);
            let b = CacheArray::U8 { shape: vec![rows * cols], data: (0..rows * cols).map(|i| i as u8).collect() };
            prop_assert_eq!(CacheArray::from_bytes(&b.to_bytes()).unwrap(), b);
        }
    }

    #[test]
    fn corrupt_payload_rejected() {
        let a = CacheArray::U8 { shape: vec![3], data: vec![1, 2, 3] };
        let mut bytes = a.to_bytes();
        bytes.pop();
        assert!(CacheArray::from_bytes(&bytes).is_err());
        assert!(CacheArray::from_bytes(b"NOPE0000").is_err());
    }
}
