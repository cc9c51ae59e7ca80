//! Named-tensor container.
//!
//! Layout, all integers little-endian:
//! `version:u8 dtype:u8 count:u32` then per tensor
//! `name_len:u32 name ndim:u32 dims:u64* payload`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{DType, ParamStore, Real, Tensor};

pub const CHECKPOINT_VERSION: u8 = 1;

pub fn save_checkpoint<F: Real>(store: &ParamStore<F>, path: &Path) -> Result<()> {
    let mut out = vec![CHECKPOINT_VERSION, F::DTYPE.byte()];
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (_, name, t) in store.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &x in t.data() {
            x.write_le(&mut out);
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Checkpoint("truncated file".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
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

/// Reads every tensor; the stored element type must match `F`.
pub fn load_checkpoint<F: Real>(path: &Path) -> Result<Vec<(String, Tensor<F>)>> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader { buf: &buf, pos: 0 };
    let head = r.take(2)?;
    if head[0] != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {}", head[0])));
    }
    let dtype = DType::from_byte(head[1])
        .ok_or_else(|| Error::Checkpoint(format!("unknown dtype byte {}", head[1])))?;
    if dtype != F::DTYPE {
        return Err(Error::Checkpoint(format!(
            "checkpoint holds {} but {} was requested",
            dtype.name(),
            F::DTYPE.name()
        )));
    }
    let width = dtype.byte() as usize;
    let count = r.u32()?;
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Checkpoint("tensor name is not utf-8".into()))?
            .to_string();
        let ndim = r.u32()? as usize;
        let shape = (0..ndim)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let payload = r.take(n * width)?;
        let data = payload.chunks(width).map(F::read_le).collect();
        out.push((name, Tensor::new(shape, data)?));
    }
    if r.pos != buf.len() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    Ok(out)
}

/// Reads just the dtype byte.
pub fn checkpoint_dtype(path: &Path) -> Result<DType> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    if buf.len() < 2 || buf[0] != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint("not a checkpoint".into()));
    }
    DType::from_byte(buf[1]).ok_or_else(|| Error::Checkpoint("unknown dtype".into()))
}
