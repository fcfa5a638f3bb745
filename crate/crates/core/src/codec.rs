//! Little-endian primitives shared by every binary encoding in the crate.
//!
//! Variable-length values are written as a `u32` little-endian length
//! followed by the raw bytes. The [`Reader`] tracks its offset so decode
//! errors can report where the input went wrong.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{reason} at byte {position}")]
pub struct DecodeError {
    pub position: usize,
    pub reason: String,
}

impl DecodeError {
    pub fn new(position: usize, reason: impl Into<String>) -> Self {
        Self {
            position,
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Default)]
pub struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn u8(&mut self, v: u8) -> &mut Self {
        self.buf.push(v);
        self
    }

    pub fn u32(&mut self, v: u32) -> &mut Self {
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn i64(&mut self, v: i64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn raw(&mut self, v: &[u8]) -> &mut Self {
        self.buf.extend_from_slice(v);
        self
    }

    /// Length-prefixed byte string. Callers bound the length well below `u32::MAX`.
    pub fn bytes(&mut self, v: &[u8]) -> &mut Self {
        self.u32(v.len() as u32);
        self.raw(v)
    }

    pub fn str(&mut self, v: &str) -> &mut Self {
        self.bytes(v.as_bytes())
    }

    pub fn bool(&mut self, v: bool) -> &mut Self {
        self.u8(v as u8)
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn is_empty(&self) -> bool {
        self.remaining() == 0
    }

    pub fn error(&self, reason: impl Into<String>) -> DecodeError {
        DecodeError::new(self.pos, reason)
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        if self.remaining() < n {
            return Err(self.error(format!(
                "truncated input: need {n} bytes, {} left",
                self.remaining()
            )));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn rest(&mut self) -> &'a [u8] {
        let out = &self.buf[self.pos..];
        self.pos = self.buf.len();
        out
    }

    pub fn u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32, DecodeError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64, DecodeError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn i64(&mut self) -> Result<i64, DecodeError> {
        Ok(i64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn bool(&mut self) -> Result<bool, DecodeError> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(DecodeError::new(
                self.pos - 1,
                format!("invalid boolean byte {other:#04x}"),
            )),
        }
    }

    /// Length-prefixed bytes, rejecting lengths above `max` before reading them.
    pub fn bytes(&mut self, max: usize) -> Result<&'a [u8], DecodeError> {
        let start = self.pos;
        let len = self.u32()? as usize;
        if len > max {
            return Err(DecodeError::new(
                start,
                format!("length {len} exceeds limit {max}"),
            ));
        }
        self.take(len)
    }

    pub fn str(&mut self, max: usize) -> Result<&'a str, DecodeError> {
        let start = self.pos;
        let raw = self.bytes(max)?;
        std::str::from_utf8(raw).map_err(|_| DecodeError::new(start, "invalid UTF-8"))
    }

    /// Tag byte that must equal `expected`.
    pub fn expect_tag(&mut self, expected: u8) -> Result<(), DecodeError> {
        let at = self.pos;
        let tag = self.u8()?;
        if tag != expected {
            return Err(DecodeError::new(
                at,
                format!("unexpected field tag {tag:#04x}, expected {expected:#04x}"),
            ));
        }
        Ok(())
    }

    pub fn finish(&self) -> Result<(), DecodeError> {
        if !self.is_empty() {
            return Err(self.error(format!("{} trailing bytes", self.remaining())));
        }
        Ok(())
    }
}
