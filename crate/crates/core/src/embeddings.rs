//! Pre-trained word embedding tables.
//!
//! Two interchange formats are supported:
//!
//! * binary: an ASCII header `"<count> <dim>\n"` followed by `count` records,
//!   each the token bytes terminated by a single space and `dim` little-endian
//!   `f32`s. A newline between records is tolerated.
//! * text: an optional `"<count> <dim>"` header line, then one line per token
//!   with `dim` space-separated decimal reals.

use std::collections::HashMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use byteorder::{LittleEndian, WriteBytesExt};
use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAX_TOKEN_BYTES: usize = 1 << 20;
/// Largest accepted vector dimension.
const MAX_DIM: usize = 1 << 20;
const MAX_HEADER_BYTES: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingFormat {
    Binary,
    Text,
}

/// How tokens are matched against the (case-sensitive) table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CasePolicy {
    /// Look the token up verbatim.
    Exact,
    /// Try the lowercased token first, then the token as written.
    #[default]
    LowerThenOriginal,
}

/// Immutable token to vector map.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    tokens: Vec<Vec<u8>>,
    index: HashMap<Vec<u8>, usize>,
    vectors: Vec<f32>,
    duplicates: usize,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("embedding dimension must be positive"));
        }
        Ok(EmbeddingTable {
            dim,
            tokens: Vec::new(),
            index: HashMap::new(),
            vectors: Vec::new(),
            duplicates: 0,
        })
    }

    /// Insert a token. Returns `false` (and counts a duplicate) if the token
    /// was already present; the stored vector is left untouched.
    pub fn insert(&mut self, token: &[u8], vector: &[f32]) -> Result<bool> {
        if vector.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: vector.len(),
            });
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("embedding vector contains non-finite values"));
        }
        if self.index.contains_key(token) {
            self.duplicates += 1;
            return Ok(false);
        }
        self.index.insert(token.to_vec(), self.tokens.len());
        self.tokens.push(token.to_vec());
        self.vectors.extend_from_slice(vector);
        Ok(true)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Number of duplicate records skipped while building the table.
    pub fn duplicates(&self) -> usize {
        self.duplicates
    }

    pub fn lookup(&self, token: &[u8]) -> Option<&[f32]> {
        self.index.get(token).map(|&i| self.row(i))
    }

    /// Look up with the given case policy.
    pub fn lookup_with(&self, token: &str, case: CasePolicy) -> Option<&[f32]> {
        match case {
            CasePolicy::Exact => self.lookup(token.as_bytes()),
            CasePolicy::LowerThenOriginal => {
                let lower = token.to_lowercase();
                self.lookup(lower.as_bytes())
                    .or_else(|| self.lookup(token.as_bytes()))
            }
        }
    }

    /// Tokens and vectors in insertion (file) order.
    pub fn iter(&self) -> impl Iterator<Item = (&[u8], &[f32])> {
        self.tokens
            .iter()
            .enumerate()
            .map(move |(i, t)| (t.as_slice(), self.row(i)))
    }

    fn row(&self, i: usize) -> &[f32] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    /// One 64-bit vector per in-vocabulary token, in order. Out-of-vocabulary
    /// tokens are skipped.
    pub fn embed_document<S: AsRef<str>>(&self, tokens: &[S], case: CasePolicy) -> Vec<Vec<f64>> {
        tokens
            .iter()
            .filter_map(|t| self.lookup_with(t.as_ref(), case))
            .map(|v| v.iter().map(|&x| f64::from(x)).collect())
            .collect()
    }

    pub fn write_binary<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "{} {}", self.len(), self.dim)?;
        for (token, vector) in self.iter() {
            check_writable(token, b' ')?;
            w.write_all(token)?;
            w.write_all(b" ")?;
            for &v in vector {
                w.write_f32::<LittleEndian>(v)?;
            }
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn write_text<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "{} {}", self.len(), self.dim)?;
        for (token, vector) in self.iter() {
            check_writable(token, b' ')?;
            w.write_all(token)?;
            for &v in vector {
                // `Display` for f32 is shortest-round-trip.
                write!(w, " {v}")?;
            }
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path, format: EmbeddingFormat) -> Result<()> {
        let file = File::create(path).map_err(Error::at_path(path))?;
        let mut w = BufWriter::new(file);
        match format {
            EmbeddingFormat::Binary => self.write_binary(&mut w)?,
            EmbeddingFormat::Text => self.write_text(&mut w)?,
        }
        w.flush()?;
        Ok(())
    }
}

fn check_writable(token: &[u8], sep: u8) -> Result<()> {
    if token.is_empty() || token.iter().any(|&b| b == sep || b == b'\n') {
        return Err(Error::invalid(format!(
            "token {:?} cannot be serialized",
            String::from_utf8_lossy(token)
        )));
    }
    Ok(())
}

/// Load a table from disk. `limit` caps the number of records read.
pub fn load_embeddings(
    path: &Path,
    format: EmbeddingFormat,
    limit: Option<usize>,
) -> Result<EmbeddingTable> {
    let file = File::open(path).map_err(Error::at_path(path))?;
    let mut reader = BufReader::with_capacity(1 << 20, file);
    let table = match format {
        EmbeddingFormat::Binary => read_binary(&mut reader, limit)?,
        EmbeddingFormat::Text => read_text(&mut reader, limit)?,
    };
    if table.duplicates() > 0 {
        warn!(
            "{}: skipped {} duplicate tokens (first occurrence kept)",
            path.display(),
            table.duplicates()
        );
    }
    Ok(table)
}

/// Buffered reader that tracks the absolute byte offset.
struct Tracked<R> {
    inner: R,
    offset: u64,
}

impl<R: BufRead> Tracked<R> {
    fn peek(&mut self) -> io::Result<Option<u8>> {
        Ok(self.inner.fill_buf()?.first().copied())
    }

    fn bump(&mut self) {
        self.inner.consume(1);
        self.offset += 1;
    }

    /// Read up to and excluding `delim`, consuming it. Returns `None` at a
    /// clean EOF before any byte was read.
    fn read_until(&mut self, delim: u8, max: usize, buf: &mut Vec<u8>) -> Result<Option<()>> {
        buf.clear();
        loop {
            let available = self.inner.fill_buf()?;
            if available.is_empty() {
                return if buf.is_empty() {
                    Ok(None)
                } else {
                    Err(Error::Truncated {
                        offset: self.offset,
                        msg: format!("missing delimiter {:?}", delim as char),
                    })
                };
            }
            let (used, done) = match available.iter().position(|&b| b == delim) {
                Some(i) => {
                    buf.extend_from_slice(&available[..i]);
                    (i + 1, true)
                }
                None => {
                    buf.extend_from_slice(available);
                    (available.len(), false)
                }
            };
            self.inner.consume(used);
            self.offset += used as u64;
            if done {
                return Ok(Some(()));
            }
            if buf.len() > max {
                return Err(Error::Format {
                    offset: self.offset,
                    msg: format!("field longer than {max} bytes"),
                });
            }
        }
    }

    fn read_exact(&mut self, buf: &mut [u8]) -> Result<()> {
        let start = self.offset;
        let mut filled = 0;
        while filled < buf.len() {
            let n = self.inner.read(&mut buf[filled..])?;
            if n == 0 {
                return Err(Error::Truncated {
                    offset: start + filled as u64,
                    msg: format!("vector payload needs {} bytes, got {filled}", buf.len()),
                });
            }
            filled += n;
            self.offset += n as u64;
        }
        Ok(())
    }
}

fn parse_header(line: &[u8], offset: u64) -> Result<(usize, usize)> {
    let bad = |msg: &str| Error::Format {
        offset,
        msg: msg.to_string(),
    };
    let text = std::str::from_utf8(line).map_err(|_| bad("header is not ASCII"))?;
    let fields: Vec<&str> = text.split_ascii_whitespace().collect();
    if fields.len() != 2 {
        return Err(bad("header must be \"<count> <dim>\""));
    }
    let count: i64 = fields[0].parse().map_err(|_| bad("count is not an integer"))?;
    let dim: i64 = fields[1].parse().map_err(|_| bad("dim is not an integer"))?;
    if count < 0 {
        return Err(bad("count is negative"));
    }
    if dim <= 0 {
        return Err(bad("dim must be positive"));
    }
    if dim > MAX_DIM as i64 {
        return Err(bad("dim exceeds the supported maximum"));
    }
    Ok((count as usize, dim as usize))
}

/// Parse the binary format from any buffered reader.
pub fn read_binary<R: BufRead>(reader: R, limit: Option<usize>) -> Result<EmbeddingTable> {
    let mut r = Tracked {
        inner: reader,
        offset: 0,
    };
    let mut line = Vec::new();
    if r.read_until(b'\n', MAX_HEADER_BYTES, &mut line)?.is_none() {
        return Err(Error::Format {
            offset: 0,
            msg: "empty file".into(),
        });
    }
    let (count, dim) = parse_header(&line, 0)?;
    let mut table = EmbeddingTable::new(dim)?;
    let wanted = limit.map_or(count, |l| l.min(count));

    let mut token = Vec::new();
    let mut raw = vec![0u8; dim.checked_mul(4).ok_or_else(|| Error::Format {
        offset: 0,
        msg: "dim too large".into(),
    })?];
    let mut vector = vec![0f32; dim];
    for _ in 0..wanted {
        while r.peek()? == Some(b'\n') {
            r.bump();
        }
        let start = r.offset;
        if r.read_until(b' ', MAX_TOKEN_BYTES, &mut token)?.is_none() {
            return Err(Error::Truncated {
                offset: start,
                msg: format!("expected {count} records, found {}", table.len() + table.duplicates()),
            });
        }
        if token.is_empty() {
            return Err(Error::Format {
                offset: start,
                msg: "empty token".into(),
            });
        }
        let payload_at = r.offset;
        r.read_exact(&mut raw)?;
        for (v, chunk) in vector.iter_mut().zip(raw.chunks_exact(4)) {
            *v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format {
                offset: payload_at,
                msg: "non-finite component".into(),
            });
        }
        table.insert(&token, &vector)?;
    }
    Ok(table)
}

/// Parse the text format from any buffered reader.
pub fn read_text<R: BufRead>(reader: R, limit: Option<usize>) -> Result<EmbeddingTable> {
    let mut r = Tracked {
        inner: reader,
        offset: 0,
    };
    let mut line = Vec::new();
    let mut table: Option<EmbeddingTable> = None;
    let mut first = true;
    let mut records = 0usize;
    let mut vector = Vec::new();

    loop {
        if limit.is_some_and(|l| records >= l) {
            break;
        }
        let start = r.offset;
        if r.read_until(b'\n', MAX_TOKEN_BYTES, &mut line).or_else(|e| match e {
            // last line without trailing newline
            Error::Truncated { .. } => Ok(Some(())),
            e => Err(e),
        })?
        .is_none()
        {
            break;
        }
        if line.last() == Some(&b'\r') {
            line.pop();
        }
        let fields: Vec<&[u8]> = line
            .split(|&b| b == b' ' || b == b'\t')
            .filter(|f| !f.is_empty())
            .collect();
        if fields.is_empty() {
            continue;
        }
        let bad = |msg: String| Error::Format { offset: start, msg };

        if first {
            first = false;
            if fields.len() == 2 && fields.iter().all(|f| is_integer(f)) {
                let (_, dim) = parse_header(&line, start)?;
                table = Some(EmbeddingTable::new(dim)?);
                continue;
            }
        }
        if fields.len() < 2 {
            return Err(bad("record has no vector components".into()));
        }
        let table = match table.as_mut() {
            Some(t) => t,
            None => table.insert(EmbeddingTable::new(fields.len() - 1)?),
        };
        if fields.len() - 1 != table.dim() {
            return Err(bad(format!(
                "expected {} components, found {}",
                table.dim(),
                fields.len() - 1
            )));
        }
        vector.clear();
        for f in &fields[1..] {
            let v: f32 = std::str::from_utf8(f)
                .ok()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| bad(format!("invalid real {:?}", String::from_utf8_lossy(f))))?;
            if !v.is_finite() {
                return Err(bad("non-finite component".into()));
            }
            vector.push(v);
        }
        table.insert(fields[0], &vector)?;
        records += 1;
    }
    table.ok_or(Error::Format {
        offset: 0,
        msg: "no records".into(),
    })
}

fn is_integer(field: &[u8]) -> bool {
    let digits = field.strip_prefix(b"-").unwrap_or(field);
    !digits.is_empty() && digits.iter().all(u8::is_ascii_digit)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture_bytes() -> Vec<u8> {
        let mut buf = b"2 3\n".to_vec();
        buf.extend_from_slice(b"a ");
        for v in [1f32, 0., 0.] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf.extend_from_slice(b"\nb ");
        for v in [0f32, 1., 0.] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf
    }

    #[test]
    fn binary_fixture_loads() {
        let t = read_binary(fixture_bytes().as_slice(), None).unwrap();
        assert_eq!(t.dim(), 3);
        assert_eq!(t.len(), 2);
        assert_eq!(t.lookup(b"a"), Some(&[1f32, 0., 0.][..]));
        assert_eq!(t.lookup(b"b"), Some(&[0f32, 1., 0.][..]));
        assert_eq!(t.lookup(b"zzz-unknown"), None);
    }

    #[test]
    fn binary_limit_is_a_prefix() {
        let t = read_binary(fixture_bytes().as_slice(), Some(1)).unwrap();
        assert_eq!(t.len(), 1);
        assert!(t.lookup(b"a").is_some());
        assert!(t.lookup(b"b").is_none());
    }

    #[test]
    fn binary_without_record_separators() {
        let mut buf = b"2 1\n".to_vec();
        buf.extend_from_slice(b"x ");
        buf.extend_from_slice(&2f32.to_le_bytes());
        buf.extend_from_slice(b"y ");
        buf.extend_from_slice(&3f32.to_le_bytes());
        let t = read_binary(buf.as_slice(), None).unwrap();
        assert_eq!(t.lookup(b"y"), Some(&[3f32][..]));
    }

    #[test]
    fn binary_errors_are_located() {
        let err = read_binary(&b"two 3\n"[..], None).unwrap_err();
        assert!(matches!(err, Error::Format { offset: 0, .. }), "{err}");

        let err = read_binary(&b"1 0\n"[..], None).unwrap_err();
        assert!(matches!(err, Error::Format { .. }), "{err}");
        let err = read_binary(&b"1 -2\n"[..], None).unwrap_err();
        assert!(matches!(err, Error::Format { .. }), "{err}");

        let bytes = fixture_bytes();
        let err = read_binary(&bytes[..bytes.len() - 2], None).unwrap_err();
        assert!(matches!(err, Error::Truncated { .. }), "{err}");

        // header promises three records, only two present
        let mut bytes = fixture_bytes();
        bytes[0] = b'3';
        let err = read_binary(bytes.as_slice(), None).unwrap_err();
        assert!(matches!(err, Error::Truncated { .. }), "{err}");
    }

    #[test]
    fn duplicates_keep_first() {
        let mut buf = b"2 1\n".to_vec();
        buf.extend_from_slice(b"x ");
        buf.extend_from_slice(&2f32.to_le_bytes());
        buf.extend_from_slice(b"\nx ");
        buf.extend_from_slice(&5f32.to_le_bytes());
        let t = read_binary(buf.as_slice(), None).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.duplicates(), 1);
        assert_eq!(t.lookup(b"x"), Some(&[2f32][..]));
    }

    #[test]
    fn text_with_and_without_header() {
        let with = read_text(&b"2 2\nfoo 1 2\nbar 0.5 -1e-3\n"[..], None).unwrap();
        let without = read_text(&b"foo 1 2\r\n\nbar 0.5 -1e-3"[..], None).unwrap();
        assert_eq!(with, without);
        assert_eq!(with.lookup(b"bar"), Some(&[0.5f32, -1e-3][..]));

        let err = read_text(&b"foo 1 2\nbar 1\n"[..], None).unwrap_err();
        assert!(matches!(err, Error::Format { offset: 8, .. }), "{err}");
        let err = read_text(&b"foo 1 x\n"[..], None).unwrap_err();
        assert!(matches!(err, Error::Format { .. }));
    }

    #[test]
    fn text_round_trip_five_by_four() {
        let mut t = EmbeddingTable::new(4).unwrap();
        let words = ["alpha", "beta", "gamma", "delta", "epsilon"];
        for (i, w) in words.iter().enumerate() {
            let v: Vec<f32> = (0..4).map(|j| (i * 4 + j) as f32 / 7.0 - 1.3).collect();
            t.insert(w.as_bytes(), &v).unwrap();
        }
        let mut buf = Vec::new();
        t.write_text(&mut buf).unwrap();
        assert_eq!(read_text(buf.as_slice(), None).unwrap(), t);
        let mut buf = Vec::new();
        t.write_binary(&mut buf).unwrap();
        assert_eq!(read_binary(buf.as_slice(), None).unwrap(), t);
    }

    #[test]
    fn embed_document_skips_oov() {
        let t = read_binary(fixture_bytes().as_slice(), None).unwrap();
        let v = t.embed_document(&["a", "b"], CasePolicy::Exact);
        assert_eq!(v, vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]]);
        let v = t.embed_document(&["a", "zzz", "a"], CasePolicy::Exact);
        assert_eq!(v, vec![vec![1.0, 0.0, 0.0]; 2]);
        assert!(t.embed_document::<&str>(&[], CasePolicy::Exact).is_empty());
    }

    #[test]
    fn case_policy() {
        let mut t = EmbeddingTable::new(1).unwrap();
        t.insert(b"Paris", &[1.0]).unwrap();
        t.insert(b"good", &[2.0]).unwrap();
        t.insert(b"Good", &[3.0]).unwrap();
        assert_eq!(t.lookup_with("Paris", CasePolicy::LowerThenOriginal), Some(&[1.0f32][..]));
        assert_eq!(t.lookup_with("Good", CasePolicy::LowerThenOriginal), Some(&[2.0f32][..]));
        assert_eq!(t.lookup_with("Good", CasePolicy::Exact), Some(&[3.0f32][..]));
        assert_eq!(t.lookup_with("paris", CasePolicy::Exact), None);
    }
}
