//! Named-tensor checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "LIA1" | u32 count | count x entry
//! entry: u32 name_len | name (UTF-8) | u8 dtype (0 = f32) | u32 ndim | u32 dims[ndim] | data
//! ```
//!
//! `data` is the row-major f32 payload.

use std::collections::BTreeMap;
use std::path::Path;

use thiserror::Error;

use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"LIA1";
const DTYPE_F32: u8 = 0;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint: bad magic bytes {0:?}")]
    BadMagic(Vec<u8>),
    #[error("checkpoint truncated at byte {0}")]
    Truncated(usize),
    #[error("unknown dtype code {0}")]
    UnknownDtype(u8),
    #[error("tensor name is not UTF-8")]
    BadName,
    #[error("invalid tensor {name}: {detail}")]
    BadTensor { name: String, detail: String },
    #[error("{0} trailing bytes after last entry")]
    TrailingBytes(usize),
    #[error("missing tensor {0}")]
    Missing(String),
    #[error("checkpoint I/O: {0}")]
    Io(#[from] std::io::Error),
}

/// Ordered map of tensor name to value.
pub type Checkpoint = BTreeMap<String, Tensor>;

pub fn encode(ckpt: &Checkpoint) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(ckpt.len() as u32).to_le_bytes());
    for (name, t) in ckpt {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(DTYPE_F32);
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or(CheckpointError::Truncated(self.buf.len()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn decode(buf: &[u8]) -> Result<Checkpoint, CheckpointError> {
    if buf.len() < 4 {
        return Err(CheckpointError::Truncated(buf.len()));
    }
    if &buf[..4] != MAGIC {
        return Err(CheckpointError::BadMagic(buf[..4].to_vec()));
    }
    let mut r = Reader { buf, pos: 4 };
    let count = r.u32()?;
    let mut ckpt = Checkpoint::new();
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| CheckpointError::BadName)?
            .to_string();
        let dtype = r.take(1)?[0];
        if dtype != DTYPE_F32 {
            return Err(CheckpointError::UnknownDtype(dtype));
        }
        let ndim = r.u32()? as usize;
        let mut shape = Vec::with_capacity(ndim.min(16));
        for _ in 0..ndim {
            shape.push(r.u32()? as usize);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| CheckpointError::BadTensor {
                name: name.clone(),
                detail: format!("shape {shape:?} overflows"),
            })?;
        let bytes = r.take(numel.checked_mul(4).ok_or(CheckpointError::Truncated(buf.len()))?)?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| CheckpointError::BadTensor {
            name: name.clone(),
            detail: e.to_string(),
        })?;
        ckpt.insert(name, t);
    }
    if r.pos != buf.len() {
        return Err(CheckpointError::TrailingBytes(buf.len() - r.pos));
    }
    Ok(ckpt)
}

pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<(), CheckpointError> {
    std::fs::write(path, encode(ckpt))?;
    Ok(())
}

/// Read and validate a whole checkpoint; nothing is returned on error.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, CheckpointError> {
    decode(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_checkpoint_is_eight_bytes() {
        let bytes = encode(&Checkpoint::new());
        assert_eq!(bytes, b"LIA1\0\0\0\0");
        assert!(decode(&bytes).unwrap().is_empty());
    }

    #[test]
    fn distinct_errors() {
        let mut c = Checkpoint::new();
        c.insert("w".into(), Tensor::new([2], vec![1.0, -2.5]).unwrap());
        let good = encode(&c);

        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        assert!(matches!(decode(&bad_magic), Err(CheckpointError::BadMagic(_))));

        assert!(matches!(decode(&good[..good.len() - 1]), Err(CheckpointError::Truncated(_))));

        let mut bad_dtype = good.clone();
        // magic(4) + count(4) + name_len(4) + "w"(1) -> dtype byte
        bad_dtype[13] = 7;
        assert!(matches!(decode(&bad_dtype), Err(CheckpointError::UnknownDtype(7))));
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let mut c = Checkpoint::new();
        c.insert("a.0.weight".into(), Tensor::new([2, 2], vec![0.1, f32::MIN_POSITIVE, -0.0, 3e38]).unwrap());
        save_checkpoint(&path, &c).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), c);
    }

    #[test]
    fn corrupt_file_leaves_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        std::fs::write(&path, b"NOPE\0\0\0\0").unwrap();
        assert!(matches!(load_checkpoint(&path), Err(CheckpointError::BadMagic(_))));
    }

    proptest! {
        #[test]
        fn roundtrip_is_bit_exact(
            entries in prop::collection::btree_map(
                "[a-z.0-9]{1,12}",
                (prop::collection::vec(1usize..4, 1..3), any::<u32>()),
                0..5,
            )
        ) {
            let ckpt: Checkpoint = entries
                .into_iter()
                .map(|(name, (shape, seed))| {
                    let n: usize = shape.iter().product();
                    let data = (0..n as u32)
                        .map(|i| f32::from_bits(seed.wrapping_mul(2654435761).wrapping_add(i) & 0x7f7f_ffff))
                        .collect();
                    (name, Tensor::new(shape, data).unwrap())
                })
                .collect();
            let back = decode(&encode(&ckpt)).unwrap();
            prop_assert_eq!(back.len(), ckpt.len());
            for (k, v) in &ckpt {
                let w = &back[k];
                prop_assert_eq!(v.shape(), w.shape());
                prop_assert!(v.data().iter().zip(w.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
            }
        }
    }
}
