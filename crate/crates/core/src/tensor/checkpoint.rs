//! Binary parameter checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "ADCK"  u32 version
//! repeated until EOF:
//!   u32 name_len, name (UTF-8), u32 rank, rank × u64 extent, numel × f64
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{ParamStore, Tensor};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"ADCK";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint<'a, W: Write>(
    out: &mut W,
    tensors: impl IntoIterator<Item = (&'a str, &'a Tensor)>,
) -> std::io::Result<()> {
    out.write_all(CHECKPOINT_MAGIC)?;
    out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    for (name, t) in tensors {
        out.write_all(&(name.len() as u32).to_le_bytes())?;
        out.write_all(name.as_bytes())?;
        out.write_all(&(t.rank() as u32).to_le_bytes())?;
        for d in t.shape() {
            out.write_all(&(*d as u64).to_le_bytes())?;
        }
        for v in t.data() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format {
                offset: self.pos as u64,
                message: format!("truncated {what}: need {n} bytes, {} left", self.bytes.len() - self.pos),
            });
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

pub fn read_checkpoint(bytes: &[u8]) -> Result<ParamStore> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: "bad magic, expected ADCK".into(),
        });
    }
    let version = cur.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format {
            offset: 4,
            message: format!("unsupported checkpoint version {version}"),
        });
    }
    let mut store = ParamStore::new();
    while cur.pos < bytes.len() {
        let record = cur.pos as u64;
        let name_len = cur.u32("name length")? as usize;
        let name = std::str::from_utf8(cur.take(name_len, "name")?).map_err(|e| Error::Format {
            offset: record + 4,
            message: format!("name is not UTF-8: {e}"),
        })?;
        let rank = cur.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(rank.min(16));
        for _ in 0..rank {
            shape.push(cur.u64("extent")? as usize);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|n| n.checked_mul(8).is_some())
            .ok_or_else(|| Error::Format {
                offset: record,
                message: format!("extents {shape:?} overflow"),
            })?;
        let raw = cur.take(numel * 8, "tensor data")?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let tensor = Tensor::new(shape, data).map_err(|e| Error::Format {
            offset: record,
            message: e.to_string(),
        })?;
        store.insert(name, tensor).map_err(|e| Error::Format {
            offset: record,
            message: e.to_string(),
        })?;
    }
    Ok(store)
}

pub fn save_checkpoint(path: impl AsRef<Path>, params: &ParamStore) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::with_capacity(params.num_values() * 8 + 64);
    write_checkpoint(&mut buf, params.iter()).expect("writing to a Vec cannot fail");
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ParamStore> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&bytes)
}
