//! Shared binary-format plumbing for the versioned artifact files.
//!
//! All three formats (weights "LSRW", trajectories "LSRT", reference store
//! "LSRS") share the same envelope: 4 magic bytes, a little-endian u32
//! version, then format-specific payload. Truncation, wrong magic and wrong
//! version are distinct error kinds so callers can tell corruption modes
//! apart.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported version {found} (expected {expected})")]
    BadVersion { expected: u32, found: u32 },
    #[error("file truncated while reading {context}")]
    Truncated { context: &'static str },
    #[error("corrupt payload: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub struct BinWriter<W: Write> {
    inner: W,
}

impl BinWriter<BufWriter<File>> {
    pub fn create(path: &Path, magic: [u8; 4], version: u32) -> Result<Self, FormatError> {
        let file = File::create(path)?;
        let mut w = BinWriter {
            inner: BufWriter::new(file),
        };
        w.inner.write_all(&magic)?;
        w.put_u32(version)?;
        Ok(w)
    }
}

impl<W: Write> BinWriter<W> {
    pub fn put_u8(&mut self, v: u8) -> Result<(), FormatError> {
        self.inner.write_all(&[v])?;
        Ok(())
    }

    pub fn put_u32(&mut self, v: u32) -> Result<(), FormatError> {
        self.inner.write_all(&v.to_le_bytes())?;
        Ok(())
    }

    pub fn put_f64(&mut self, v: f64) -> Result<(), FormatError> {
        self.inner.write_all(&v.to_le_bytes())?;
        Ok(())
    }

    pub fn put_f64_slice(&mut self, vs: &[f64]) -> Result<(), FormatError> {
        for v in vs {
            self.put_f64(*v)?;
        }
        Ok(())
    }

    pub fn put_bytes(&mut self, bytes: &[u8]) -> Result<(), FormatError> {
        self.inner.write_all(bytes)?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<(), FormatError> {
        self.inner.flush()?;
        Ok(())
    }
}

pub struct BinReader<R: Read> {
    inner: R,
}

impl BinReader<BufReader<File>> {
    /// Open a file and validate its magic/version envelope.
    pub fn open(path: &Path, magic: [u8; 4], version: u32) -> Result<Self, FormatError> {
        let file = File::open(path)?;
        let mut r = BinReader {
            inner: BufReader::new(file),
        };
        let mut found = [0u8; 4];
        r.read_exact(&mut found, "magic")?;
        if found != magic {
            return Err(FormatError::BadMagic {
                expected: magic,
                found,
            });
        }
        let found_version = r.get_u32("version")?;
        if found_version != version {
            return Err(FormatError::BadVersion {
                expected: version,
                found: found_version,
            });
        }
        Ok(r)
    }
}

impl<R: Read> BinReader<R> {
    fn read_exact(&mut self, buf: &mut [u8], context: &'static str) -> Result<(), FormatError> {
        self.inner
            .read_exact(buf)
            .map_err(|_| FormatError::Truncated { context })
    }

    pub fn get_u8(&mut self, context: &'static str) -> Result<u8, FormatError> {
        let mut b = [0u8; 1];
        self.read_exact(&mut b, context)?;
        Ok(b[0])
    }

    pub fn get_u32(&mut self, context: &'static str) -> Result<u32, FormatError> {
        let mut b = [0u8; 4];
        self.read_exact(&mut b, context)?;
        Ok(u32::from_le_bytes(b))
    }

    pub fn get_f64(&mut self, context: &'static str) -> Result<f64, FormatError> {
        let mut b = [0u8; 8];
        self.read_exact(&mut b, context)?;
        Ok(f64::from_le_bytes(b))
    }

    pub fn get_f64_vec(
        &mut self,
        count: usize,
        context: &'static str,
    ) -> Result<Vec<f64>, FormatError> {
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            out.push(self.get_f64(context)?);
        }
        Ok(out)
    }

    pub fn get_string(&mut self, len: usize, context: &'static str) -> Result<String, FormatError> {
        let mut buf = vec![0u8; len];
        self.read_exact(&mut buf, context)?;
        String::from_utf8(buf).map_err(|e| FormatError::Corrupt(format!("{context}: {e}")))
    }

    /// Error if any bytes remain (catches silently-extended files).
    pub fn expect_eof(&mut self) -> Result<(), FormatError> {
        let mut probe = [0u8; 1];
        match self.inner.read(&mut probe)? {
            0 => Ok(()),
            _ => Err(FormatError::Corrupt("trailing bytes after payload".into())),
        }
    }
}
