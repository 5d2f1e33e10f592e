//! Little-endian binary I/O helpers shared by the model, index, and vector
//! file formats. All multi-byte values are little-endian. The reader tracks
//! its byte offset so format errors can name the exact position.

use std::io::{self, Read, Write};

use byteorder::{LittleEndian, WriteBytesExt};

use crate::error::{Error, Result};

/// Reader wrapper that counts consumed bytes for positioned error messages.
pub struct TrackedReader<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> TrackedReader<R> {
    pub fn new(inner: R) -> Self {
        Self { inner, offset: 0 }
    }

    /// Byte offset of the next unread byte.
    pub fn offset(&self) -> u64 {
        self.offset
    }

    pub fn err(&self, msg: impl Into<String>) -> Error {
        Error::format(self.offset, msg)
    }

    fn map_eof(&self, res: io::Result<()>, what: &str) -> Result<()> {
        res.map_err(|e| {
            if e.kind() == io::ErrorKind::UnexpectedEof {
                self.err(format!("truncated file while reading {what}"))
            } else {
                Error::Io(e)
            }
        })
    }

    pub fn read_exact(&mut self, buf: &mut [u8], what: &str) -> Result<()> {
        let res = self.inner.read_exact(buf);
        self.map_eof(res, what)?;
        self.offset += buf.len() as u64;
        Ok(())
    }

    pub fn read_u8(&mut self, what: &str) -> Result<u8> {
        let mut b = [0u8; 1];
        self.read_exact(&mut b, what)?;
        Ok(b[0])
    }

    pub fn read_u32(&mut self, what: &str) -> Result<u32> {
        let mut b = [0u8; 4];
        self.read_exact(&mut b, what)?;
        Ok(u32::from_le_bytes(b))
    }

    pub fn read_u64(&mut self, what: &str) -> Result<u64> {
        let mut b = [0u8; 8];
        self.read_exact(&mut b, what)?;
        Ok(u64::from_le_bytes(b))
    }

    pub fn read_f32(&mut self, what: &str) -> Result<f32> {
        let mut b = [0u8; 4];
        self.read_exact(&mut b, what)?;
        Ok(f32::from_le_bytes(b))
    }

    pub fn read_f64(&mut self, what: &str) -> Result<f64> {
        let mut b = [0u8; 8];
        self.read_exact(&mut b, what)?;
        Ok(f64::from_le_bytes(b))
    }

    /// Length-prefixed (u32) UTF-8 string.
    pub fn read_string(&mut self, what: &str) -> Result<String> {
        let len = self.read_u32(what)? as usize;
        if len > MAX_STRING_LEN {
            return Err(self.err(format!("{what}: string length {len} exceeds limit")));
        }
        let mut buf = vec![0u8; len];
        self.read_exact(&mut buf, what)?;
        String::from_utf8(buf).map_err(|_| self.err(format!("{what}: invalid utf-8")))
    }

    /// LEB128-style variable-length unsigned integer.
    pub fn read_vint(&mut self, what: &str) -> Result<u64> {
        let mut value = 0u64;
        let mut shift = 0u32;
        loop {
            let byte = self.read_u8(what)?;
            value |= u64::from(byte & 0x7f) << shift;
            if byte & 0x80 == 0 {
                return Ok(value);
            }
            shift += 7;
            if shift >= 64 {
                return Err(self.err(format!("{what}: varint overflow")));
            }
        }
    }

    /// True if the underlying stream is exhausted. Consumes nothing.
    pub fn at_eof(&mut self) -> Result<bool>
    where
        R: io::BufRead,
    {
        Ok(self.inner.fill_buf()?.is_empty())
    }
}

const MAX_STRING_LEN: usize = 1 << 20;

pub fn write_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_u32::<LittleEndian>(v)?;
    Ok(())
}

pub fn write_u64<W: Write>(w: &mut W, v: u64) -> Result<()> {
    w.write_u64::<LittleEndian>(v)?;
    Ok(())
}

pub fn write_f32<W: Write>(w: &mut W, v: f32) -> Result<()> {
    w.write_f32::<LittleEndian>(v)?;
    Ok(())
}

pub fn write_f64<W: Write>(w: &mut W, v: f64) -> Result<()> {
    w.write_f64::<LittleEndian>(v)?;
    Ok(())
}

pub fn write_u8<W: Write>(w: &mut W, v: u8) -> Result<()> {
    w.write_u8(v)?;
    Ok(())
}

pub fn write_string<W: Write>(w: &mut W, s: &str) -> Result<()> {
    if s.len() > MAX_STRING_LEN {
        return Err(Error::data(format!("string length {} exceeds limit", s.len())));
    }
    write_u32(w, s.len() as u32)?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

pub fn write_vint<W: Write>(w: &mut W, mut v: u64) -> Result<()> {
    loop {
        let byte = (v & 0x7f) as u8;
        v >>= 7;
        if v == 0 {
            w.write_all(&[byte])?;
            return Ok(());
        }
        w.write_all(&[byte | 0x80])?;
    }
}

/// Write `bytes` to `path` atomically: temp file in the same directory, then
/// rename over the destination.
pub fn atomic_write(path: &std::path::Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let tmp = match dir {
        Some(d) => d.join(format!(
            ".{}.tmp-{}",
            path.file_name().and_then(|n| n.to_str()).unwrap_or("out"),
            std::process::id()
        )),
        None => std::path::PathBuf::from(format!(".atomic.tmp-{}", std::process::id())),
    };
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}
