//! Flat checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   8 bytes  "KCPCKPT\0"
//! version u32
//! dtype   u8       4 = f32, 8 = f64
//! count   u32
//! count × { name_len u32, name utf-8, ndim u32, dims u64×ndim, values }
//! ```

use std::path::Path;

use super::{DType, ParamStore, Scalar, Tensor};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"KCPCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn encode<T: Scalar>(store: &ParamStore<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + store.num_values() * std::mem::size_of::<T>());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.push(T::DTYPE.code());
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (_, p) in store.iter() {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        let shape = p.value().shape();
        out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &d in shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in p.value().data() {
            v.write_le(&mut out);
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint(format!(
                "truncated at byte {} (needed {n} more)",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Decode into a fresh store. Values stored in the other precision are converted.
pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<ParamStore<T>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::SchemaVersion {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let dtype = DType::from_code(r.take(1)?[0]).ok_or_else(|| Error::Checkpoint("unknown dtype".into()))?;
    let count = r.u32()?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|e| Error::Checkpoint(format!("bad name: {e}")))?
            .to_string();
        let ndim = r.u32()? as usize;
        let shape = (0..ndim)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let values: Vec<T> = match dtype {
            DType::F32 => r
                .take(4 * n)?
                .chunks_exact(4)
                .map(|c| T::of(f32::read_le(c) as f64))
                .collect(),
            DType::F64 => r.take(8 * n)?.chunks_exact(8).map(|c| T::of(f64::read_le(c))).collect(),
        };
        store.add(name, Tensor::new(shape, values)?);
    }
    Ok(store)
}

pub fn save<T: Scalar>(store: &ParamStore<T>, path: &Path) -> Result<()> {
    std::fs::write(path, encode(store)).map_err(|e| Error::io(path, e))
}

pub fn load<T: Scalar>(path: &Path) -> Result<ParamStore<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_bit_exact() {
        let mut s = ParamStore::<f32>::new();
        s.add("enc.w", Tensor::from_fn(&[3, 2], |i| i as f32 * 0.1 - 0.3));
        s.add("enc.b", Tensor::from_fn(&[2], |i| 1.0 / (i as f32 + 3.0)));
        let back: ParamStore<f32> = decode(&encode(&s)).unwrap();
        for (id, p) in s.iter() {
            assert_eq!(back.get(id).name, p.name);
            assert_eq!(back.value(id), p.value());
        }
    }

    #[test]
    fn version_mismatch_reports_both() {
        let s = ParamStore::<f64>::new();
        let mut bytes = encode(&s);
        bytes[8] = 9;
        match decode::<f64>(&bytes) {
            Err(Error::SchemaVersion { found: 9, expected: 1 }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn truncation_detected() {
        let mut s = ParamStore::<f64>::new();
        s.add("w", Tensor::ones(&[4]));
        let bytes = encode(&s);
        assert!(decode::<f64>(&bytes[..bytes.len() - 3]).is_err());
    }
}
