//! Versioned little-endian binary container used for cached mode bases and
//! serialized operators.
//!
//! Layout: 8-byte magic, `u32` format version, `u32` payload kind, 32-byte
//! content key, `u64` payload length, payload.

use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"MCHANNEL";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u32)]
pub enum PayloadKind {
    ModeBasis = 1,
    Operator = 2,
}

pub fn encode(kind: PayloadKind, key: &[u8; 32], payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(56 + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend(FORMAT_VERSION.to_le_bytes());
    out.extend((kind as u32).to_le_bytes());
    out.extend_from_slice(key);
    out.extend((payload.len() as u64).to_le_bytes());
    out.extend_from_slice(payload);
    out
}

/// `Ok(None)` when the key differs; errors on a corrupt or foreign file.
pub fn decode<'a>(bytes: &'a [u8], kind: PayloadKind, key: &[u8; 32]) -> Result<Option<&'a [u8]>> {
    let mut r = Reader::new(bytes);
    if r.take(8)? != MAGIC {
        return Err(Error::invalid("cache file has the wrong magic"));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::invalid(format!("cache format version {version} is not supported")));
    }
    if r.u32()? != kind as u32 {
        return Err(Error::invalid("cache file holds a different payload kind"));
    }
    if r.take(32)? != key {
        return Ok(None);
    }
    let len = r.u64()? as usize;
    let payload = r.take(len)?;
    r.finish()?;
    Ok(Some(payload))
}

pub fn write(path: &Path, kind: PayloadKind, key: &[u8; 32], payload: &[u8]) -> Result<()> {
    std::fs::write(path, encode(kind, key, payload))?;
    Ok(())
}

pub fn read(path: &Path, kind: PayloadKind, key: &[u8; 32]) -> Result<Option<Vec<u8>>> {
    let bytes = match std::fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
        Err(e) => return Err(e.into()),
    };
    Ok(decode(&bytes, kind, key)?.map(<[u8]>::to_vec))
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::invalid("cache payload is truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }

    pub fn finish(&self) -> Result<()> {
        if self.pos == self.bytes.len() {
            Ok(())
        } else {
            Err(Error::invalid("cache payload has trailing bytes"))
        }
    }
}
