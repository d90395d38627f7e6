//! Shared framing for the binary artifacts written between pipeline stages.
//!
//! Every artifact starts with an 8-byte magic, a little-endian `u32` format
//! version and a 32-byte provenance hash identifying the configuration that
//! produced it.

use std::fmt;
use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// SHA-256 digest of the configuration that produced an artifact.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Provenance(pub [u8; 32]);

impl Provenance {
    /// Hash an arbitrary canonical byte representation.
    pub fn of_bytes(bytes: &[u8]) -> Self {
        let digest = Sha256::digest(bytes);
        let mut out = [0u8; 32];
        out.copy_from_slice(&digest);
        Provenance(out)
    }

    /// Hash of the little-endian bytes of a real vector.
    pub fn of_f64s(values: &[f64]) -> Self {
        let mut hasher = Sha256::new();
        for v in values {
            hasher.update(v.to_le_bytes());
        }
        let mut out = [0u8; 32];
        out.copy_from_slice(&hasher.finalize());
        Provenance(out)
    }

    /// Combine this provenance with extra tagged content, e.g. a stage name.
    pub fn derive(&self, tag: &str) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(self.0);
        hasher.update(tag.as_bytes());
        let mut out = [0u8; 32];
        out.copy_from_slice(&hasher.finalize());
        Provenance(out)
    }

    pub fn to_hex(&self) -> String {
        self.0.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Abbreviated form for reports.
    pub fn short(&self) -> String {
        self.to_hex()[..12].to_string()
    }

    pub fn ensure_eq(&self, other: &Provenance) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::Provenance {
                expected: self.to_hex(),
                found: other.to_hex(),
            })
        }
    }
}

impl fmt::Debug for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Provenance({})", self.short())
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

pub(crate) fn write_header<W: Write>(
    w: &mut W,
    magic: &[u8; 8],
    version: u32,
    provenance: &Provenance,
) -> Result<()> {
    w.write_all(magic)?;
    w.write_u32::<LittleEndian>(version)?;
    w.write_all(&provenance.0)?;
    Ok(())
}

pub(crate) fn read_header<R: Read>(
    r: &mut R,
    magic: &[u8; 8],
    version: u32,
) -> Result<Provenance> {
    let mut found = [0u8; 8];
    r.read_exact(&mut found).map_err(truncated("magic"))?;
    if &found != magic {
        return Err(Error::Format {
            offset: 0,
            msg: format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(&found),
                String::from_utf8_lossy(magic)
            ),
        });
    }
    let v = r.read_u32::<LittleEndian>().map_err(truncated("version"))?;
    if v != version {
        return Err(Error::Format {
            offset: 8,
            msg: format!("unsupported version {v}, expected {version}"),
        });
    }
    let mut hash = [0u8; 32];
    r.read_exact(&mut hash).map_err(truncated("provenance"))?;
    Ok(Provenance(hash))
}

pub(crate) fn write_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    w.write_u32::<LittleEndian>(s.len() as u32)?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

pub(crate) fn read_str<R: Read>(r: &mut R) -> Result<String> {
    let len = r.read_u32::<LittleEndian>().map_err(truncated("string length"))? as usize;
    let mut buf = Vec::with_capacity(len.min(1 << 16));
    r.take(len as u64).read_to_end(&mut buf)?;
    if buf.len() != len {
        return Err(Error::Truncated {
            offset: 0,
            msg: "string payload".into(),
        });
    }
    String::from_utf8(buf).map_err(|e| Error::Decode {
        offset: e.utf8_error().valid_up_to(),
    })
}

pub(crate) fn write_f64s<W: Write>(w: &mut W, values: &[f64]) -> Result<()> {
    for &v in values {
        w.write_f64::<LittleEndian>(v)?;
    }
    Ok(())
}

pub(crate) fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(n.min(1 << 24));
    for _ in 0..n {
        out.push(r.read_f64::<LittleEndian>().map_err(truncated("f64 payload"))?);
    }
    Ok(out)
}

pub(crate) fn truncated(what: &'static str) -> impl Fn(std::io::Error) -> Error {
    move |e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::Truncated {
                offset: 0,
                msg: what.into(),
            }
        } else {
            Error::Io(e)
        }
    }
}
