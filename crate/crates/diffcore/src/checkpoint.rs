//! `MAILPARM` parameter files.
//!
//! Layout (all integers little-endian): 8-byte magic, `u32` version, then
//! until end of file one record per parameter: `u32` name length, UTF-8
//! name, `u8` dtype tag, `u32` rank, `u64` per dimension, raw values.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::real::{DType, Real};
use crate::tensor::Tensor;

pub const PARAM_MAGIC: &[u8; 8] = b"MAILPARM";
pub const PARAM_VERSION: u32 = 1;

/// Serializes `(name, tensor)` records.
pub fn write_params<'a, T: Real>(records: impl IntoIterator<Item = (&'a str, &'a Tensor<T>)>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(PARAM_MAGIC);
    out.extend_from_slice(&PARAM_VERSION.to_le_bytes());
    for (name, t) in records {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(T::DTYPE.tag());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
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
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(
                self.pos as u64,
                format!("truncated: need {n} bytes for {what}, {} left", self.bytes.len() - self.pos),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

/// Decodes records; the dtype stored in the file must match `T`.
pub fn read_params<T: Real>(bytes: &[u8]) -> Result<Vec<(String, Tensor<T>)>> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(8, "magic")?;
    if magic != PARAM_MAGIC {
        return Err(Error::format(0, "bad magic, expected \"MAILPARM\""));
    }
    let version = r.u32("version")?;
    if version != PARAM_VERSION {
        return Err(Error::format(8, format!("unsupported version {version}")));
    }
    let mut out = Vec::new();
    while r.pos < bytes.len() {
        let start = r.pos as u64;
        let len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| Error::format(start + 4, "parameter name is not UTF-8"))?
            .to_string();
        let tag_at = r.pos as u64;
        let tag = r.take(1, "dtype")?[0];
        let dtype = DType::from_tag(tag).ok_or_else(|| Error::format(tag_at, format!("unknown dtype tag {tag}")))?;
        if dtype != T::DTYPE {
            return Err(Error::format(
                tag_at,
                format!("parameter {name:?} stored as {dtype:?}, expected {:?}", T::DTYPE),
            ));
        }
        let rank = r.u32("rank")? as usize;
        if rank > 8 {
            return Err(Error::format(tag_at + 1, format!("implausible rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64("dimension")? as usize);
        }
        let dims_at = r.pos as u64;
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&n| n > 0 || rank == 0)
            .ok_or_else(|| Error::format(dims_at, format!("invalid shape {shape:?}")))?;
        let width = dtype.width();
        let raw = r.take(numel.saturating_mul(width), "values")?;
        let data = raw.chunks_exact(width).map(T::read_le).collect();
        let tensor = Tensor::new(shape, data).map_err(|e| Error::format(dims_at, e.to_string()))?;
        out.push((name, tensor));
    }
    Ok(out)
}

/// Writes the named parameters of `params` (all of them when `filter` is
/// `None`) to `path`.
pub fn save_params<T: Real>(path: &Path, params: &ParamSet<T>, filter: Option<&dyn Fn(&str) -> bool>) -> Result<()> {
    let bytes =
        write_params(params.iter().filter(|(_, name, _)| filter.is_none_or(|f| f(name))).map(|(_, name, t)| (name, t)));
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn load_params<T: Real>(path: &Path) -> Result<Vec<(String, Tensor<T>)>> {
    read_params(&fs::read(path)?)
}
