//! Flat binary tensor container.
//!
//! Layout: magic `GPRODOM1`, version `u32`, then zero or more records of
//! `name_len u32 | name utf-8 | rank u32 | extents u64[rank] | f64[prod]`.
//! All integers and floats are little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{AutonnError, Tensor};

pub const MAGIC: &[u8; 8] = b"GPRODOM1";
pub const VERSION: u32 = 1;

pub fn encode(records: &[(String, Tensor)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for (name, t) in records {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &e in t.shape() {
            out.extend_from_slice(&(e as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], AutonnError> {
        if self.buf.len() - self.pos < n {
            return Err(AutonnError::Checkpoint(format!(
                "truncated container at byte {}",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, AutonnError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, AutonnError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode(buf: &[u8]) -> Result<Vec<(String, Tensor)>, AutonnError> {
    let mut c = Cursor { buf, pos: 0 };
    if c.take(8)? != MAGIC {
        return Err(AutonnError::Checkpoint("bad magic".into()));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(AutonnError::Checkpoint(format!("unsupported version {version}")));
    }
    let mut records = Vec::new();
    while c.pos < buf.len() {
        let name_len = c.u32()? as usize;
        let name = std::str::from_utf8(c.take(name_len)?)
            .map_err(|e| AutonnError::Checkpoint(format!("parameter name is not utf-8: {e}")))?
            .to_string();
        let rank = c.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(c.u64()? as usize);
        }
        let n: usize = shape.iter().product();
        let bytes = c.take(n.checked_mul(8).ok_or_else(|| {
            AutonnError::Checkpoint(format!("record {name} is too large"))
        })?)?;
        let data = bytes
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        records.push((name, Tensor::new(&shape, data)?));
    }
    Ok(records)
}

pub fn save(path: &Path, records: &[(String, Tensor)]) -> Result<(), AutonnError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&encode(records))?;
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Vec<(String, Tensor)>, AutonnError> {
    let mut buf = Vec::new();
    BufReader::new(File::open(path).map_err(|e| {
        AutonnError::Checkpoint(format!("cannot open {}: {e}", path.display()))
    })?)
    .read_to_end(&mut buf)?;
    decode(&buf)
}
