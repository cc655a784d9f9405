//! `THGR` checkpoint files.
//!
//! Layout (little-endian): magic `THGR`, `u32` version, then one record per
//! parameter until end of file: `u16` name length, UTF-8 name, `u8` rank,
//! `u32` per dimension, `f32` data.

use std::fs;
use std::path::Path;

use super::{Float, ParamSet, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"THGR";
pub const VERSION: u32 = 1;

pub fn encode<T: Float>(params: &ParamSet<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + params.numel() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for (_, name, t) in params.iter() {
        let name = name.as_bytes();
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name);
        out.push(t.rank() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &x in t.data() {
            out.extend_from_slice(&(x.as_f64() as f32).to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Corrupt {
                offset: self.pos as u64,
                reason: format!("truncated {what}"),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

/// Parses a checkpoint into `(name, tensor)` records in file order.
pub fn decode(bytes: &[u8]) -> Result<Vec<(String, Tensor<f32>)>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic").ok() != Some(MAGIC.as_slice()) {
        return Err(Error::Format("checkpoint magic is not THGR".into()));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let mut records = Vec::new();
    while r.pos < bytes.len() {
        let start = r.pos as u64;
        let len = u16::from_le_bytes(r.take(2, "name length")?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| Error::Corrupt {
                offset: start,
                reason: "parameter name is not UTF-8".into(),
            })?
            .to_string();
        let rank = r.take(1, "rank")?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("dimension")? as usize);
        }
        let n: usize = shape.iter().product();
        let data = r
            .take(n * 4, "tensor data")?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        records.push((name, Tensor::new(shape, data)?));
    }
    Ok(records)
}

pub fn save<T: Float>(params: &ParamSet<T>, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode(params))?;
    Ok(())
}

/// Overwrites every parameter in `params` from the file. Names and shapes
/// must match exactly.
pub fn load_into<T: Float>(params: &mut ParamSet<T>, path: impl AsRef<Path>) -> Result<()> {
    let records = decode(&fs::read(path)?)?;
    if records.len() != params.len() {
        return Err(Error::Format(format!(
            "checkpoint has {} tensors, model expects {}",
            records.len(),
            params.len()
        )));
    }
    for (name, t) in records {
        let id = params
            .find(&name)
            .ok_or_else(|| Error::Format(format!("unknown parameter {name:?}")))?;
        let dst = params.get_mut(id);
        if dst.shape() != t.shape() {
            return Err(Error::Dimension {
                op: "checkpoint load",
                lhs: dst.shape().to_vec(),
                rhs: t.shape().to_vec(),
            });
        }
        for (d, &s) in dst.data_mut().iter_mut().zip(t.data()) {
            *d = T::of(s as f64);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ParamSet<f32> {
        let mut ps = ParamSet::new();
        ps.add(
            "a.weight",
            Tensor::from_fn(vec![2, 3], |i| i as f32 * 0.5 - 1.0),
        );
        ps.add("a.bias", Tensor::from_fn(vec![3], |i| i as f32));
        ps
    }

    #[test]
    fn byte_layout_is_exact() {
        let mut ps = ParamSet::<f32>::new();
        ps.add("w", Tensor::new(vec![1], vec![1.0]).unwrap());
        let bytes = encode(&ps);
        let mut want = b"THGR".to_vec();
        want.extend_from_slice(&1u32.to_le_bytes());
        want.extend_from_slice(&1u16.to_le_bytes());
        want.push(b'w');
        want.push(1);
        want.extend_from_slice(&1u32.to_le_bytes());
        want.extend_from_slice(&1.0f32.to_le_bytes());
        assert_eq!(bytes, want);
    }

    #[test]
    fn round_trip_and_errors() {
        let ps = sample();
        let bytes = encode(&ps);
        let recs = decode(&bytes).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].1.data(), ps.get(crate::tensor::ParamId(0)).data());

        assert!(matches!(decode(b"XXXX\x01\0\0\0"), Err(Error::Format(_))));
        assert!(matches!(
            decode(&bytes[..bytes.len() - 2]),
            Err(Error::Corrupt { .. })
        ));

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save(&ps, &path).unwrap();
        let mut other = sample();
        other.tensors_mut().for_each(|t| t.data_mut().fill(0.0));
        load_into(&mut other, &path).unwrap();
        assert_eq!(encode(&other), bytes);
    }
}
