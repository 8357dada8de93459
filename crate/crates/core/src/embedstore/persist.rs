//! `.hxem` binary layout, all integers little-endian:
//!
//! ```text
//! "HXEM" | u32 version (=1) | u32 dim | u64 n | u8 normalized
//! n x (u32 byte length | UTF-8 id bytes)
//! n x dim f32
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{EmbeddingMatrix, StoreError};

pub const MAGIC: &[u8; 4] = b"HXEM";
pub const VERSION: u32 = 1;

pub fn encode(m: &EmbeddingMatrix) -> Vec<u8> {
    let id_bytes: usize = m.ids().iter().map(|s| 4 + s.len()).sum();
    let mut buf = Vec::with_capacity(21 + id_bytes + m.data().len() * 4);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(m.dim() as u32).to_le_bytes());
    buf.extend_from_slice(&(m.len() as u64).to_le_bytes());
    buf.push(u8::from(m.is_normalized()));
    for id in m.ids() {
        buf.extend_from_slice(&(id.len() as u32).to_le_bytes());
        buf.extend_from_slice(id.as_bytes());
    }
    for x in m.data() {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    buf
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], StoreError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or(StoreError::Truncated {
                section: what,
                offset: self.pos,
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, StoreError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64, StoreError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<EmbeddingMatrix, StoreError> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4, "magic")? != MAGIC {
        return Err(StoreError::BadMagic);
    }
    let version = c.u32("header")?;
    if version != VERSION {
        return Err(StoreError::UnsupportedVersion(version));
    }
    let dim = c.u32("header")? as usize;
    let n = c.u64("header")?;
    let normalized = match c.take(1, "header")?[0] {
        0 => false,
        1 => true,
        other => return Err(StoreError::Corrupt(format!("normalized flag {other}"))),
    };
    // Each id costs at least 4 bytes, so a count beyond that is a truncation.
    let n: usize = usize::try_from(n)
        .ok()
        .filter(|&n| n <= bytes.len() / 4)
        .ok_or(StoreError::Truncated {
            section: "id table",
            offset: c.pos,
        })?;
    let mut ids = Vec::with_capacity(n);
    for _ in 0..n {
        let len = c.u32("id table")? as usize;
        let raw = c.take(len, "id table")?;
        let id = std::str::from_utf8(raw)
            .map_err(|_| StoreError::Corrupt(format!("id at offset {} is not UTF-8", c.pos - len)))?;
        ids.push(id.to_owned());
    }
    let floats = n
        .checked_mul(dim)
        .and_then(|x| x.checked_mul(4))
        .ok_or_else(|| StoreError::Corrupt("matrix size overflows".into()))?;
    let raw = c.take(floats, "data")?;
    if c.pos != bytes.len() {
        return Err(StoreError::Corrupt(format!(
            "{} trailing bytes",
            bytes.len() - c.pos
        )));
    }
    let data = raw
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    EmbeddingMatrix::new(dim, ids, data, normalized)
}

pub fn save(m: &EmbeddingMatrix, path: impl AsRef<Path>) -> Result<(), StoreError> {
    let path = path.as_ref();
    let tmp = path.with_extension("hxem.tmp");
    let mut f = fs::File::create(&tmp)?;
    f.write_all(&encode(m))?;
    f.sync_all()?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<EmbeddingMatrix, StoreError> {
    decode(&fs::read(path)?)
}
