//! Quantization of word vectors into codebooks of "super word" centroids.

mod forest;
mod kmeans;

use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use log::info;
use serde::{Deserialize, Serialize};

use crate::artifact::{self, Provenance};
use crate::corpus::Document;
use crate::embeddings::{CasePolicy, EmbeddingTable};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub use forest::{Budget, CentroidIndex, SearchScratch, DEFAULT_MAX_CHECKS, DEFAULT_TREES};
pub use kmeans::{kmeans, KMeansOutcome, KMeansParams};

const VOCAB_MAGIC: &[u8; 8] = b"BOSWEVOC";
const VOCAB_VERSION: u32 = 1;

/// `k` centroids in embedding space.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    pub centroids: Matrix,
    pub class_tag: Option<String>,
    /// Sum of squared distances from the clustered points to their nearest centroid.
    pub inertia: f64,
}

impl Codebook {
    pub fn new(centroids: Matrix, class_tag: Option<String>, inertia: f64) -> Result<Self> {
        if centroids.rows() == 0 || centroids.cols() == 0 {
            return Err(Error::invalid("codebook must have at least one centroid"));
        }
        if centroids.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("codebook contains non-finite values"));
        }
        Ok(Codebook {
            centroids,
            class_tag,
            inertia,
        })
    }

    pub fn k(&self) -> usize {
        self.centroids.rows()
    }

    pub fn dim(&self) -> usize {
        self.centroids.cols()
    }

    pub fn centroid(&self, i: usize) -> &[f64] {
        self.centroids.row(i)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VocabMode {
    /// One codebook over all training words.
    Single,
    /// One codebook per category, in category order.
    PerClass,
}

impl VocabMode {
    fn code(self) -> u8 {
        match self {
            VocabMode::Single => 0,
            VocabMode::PerClass => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VocabularySet {
    pub mode: VocabMode,
    pub books: Vec<Codebook>,
}

impl VocabularySet {
    /// Length of the concatenated histogram.
    pub fn total_size(&self) -> usize {
        self.books.iter().map(Codebook::k).sum()
    }

    pub fn dim(&self) -> usize {
        self.books.first().map_or(0, Codebook::dim)
    }

    /// Layout description such as `2 x 7500`.
    pub fn shape(&self) -> String {
        let k = self.books.first().map_or(0, Codebook::k);
        if self.books.iter().all(|b| b.k() == k) {
            format!("{} x {}", self.books.len(), k)
        } else {
            format!("{} books / {} words", self.books.len(), self.total_size())
        }
    }

    pub fn build_indexes(&self, num_trees: usize, seed: u64) -> IndexSet {
        IndexSet(
            self.books
                .iter()
                .enumerate()
                .map(|(i, b)| CentroidIndex::build(b, num_trees, seed.wrapping_add(1000 * i as u64)))
                .collect(),
        )
    }

    pub fn write<W: Write>(&self, w: &mut W, provenance: &Provenance) -> Result<()> {
        artifact::write_header(w, VOCAB_MAGIC, VOCAB_VERSION, provenance)?;
        w.write_u8(self.mode.code())?;
        w.write_u32::<LittleEndian>(self.books.len() as u32)?;
        for book in &self.books {
            artifact::write_str(w, book.class_tag.as_deref().unwrap_or(""))?;
            w.write_u64::<LittleEndian>(book.k() as u64)?;
            w.write_u64::<LittleEndian>(book.dim() as u64)?;
            w.write_f64::<LittleEndian>(book.inertia)?;
            artifact::write_f64s(w, book.centroids.as_slice())?;
        }
        Ok(())
    }

    pub fn read<R: Read>(r: &mut R) -> Result<(Self, Provenance)> {
        let provenance = artifact::read_header(r, VOCAB_MAGIC, VOCAB_VERSION)?;
        let mode = match r.read_u8().map_err(artifact::truncated("mode"))? {
            0 => VocabMode::Single,
            1 => VocabMode::PerClass,
            m => {
                return Err(Error::Format {
                    offset: 44,
                    msg: format!("unknown vocabulary mode {m}"),
                })
            }
        };
        let count = r.read_u32::<LittleEndian>().map_err(artifact::truncated("book count"))?;
        let mut books = Vec::with_capacity(count.min(4096) as usize);
        for _ in 0..count {
            let tag = artifact::read_str(r)?;
            let k = r.read_u64::<LittleEndian>().map_err(artifact::truncated("k"))? as usize;
            let dim = r.read_u64::<LittleEndian>().map_err(artifact::truncated("dim"))? as usize;
            let inertia = r.read_f64::<LittleEndian>().map_err(artifact::truncated("inertia"))?;
            let n = k.checked_mul(dim).ok_or_else(|| Error::Format {
                offset: 0,
                msg: "codebook too large".into(),
            })?;
            let data = artifact::read_f64s(r, n)?;
            let tag = (!tag.is_empty()).then_some(tag);
            books.push(Codebook::new(Matrix::from_vec(k, dim, data)?, tag, inertia)?);
        }
        Ok((VocabularySet { mode, books }, provenance))
    }

    /// Human-readable dump for debugging.
    pub fn write_text<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "# mode={:?} books={} total_size={}", self.mode, self.books.len(), self.total_size())?;
        for (b, book) in self.books.iter().enumerate() {
            writeln!(
                w,
                "# book {b} class={} k={} dim={} inertia={}",
                book.class_tag.as_deref().unwrap_or("-"),
                book.k(),
                book.dim(),
                book.inertia
            )?;
            for (i, row) in book.centroids.iter_rows().enumerate() {
                write!(w, "{b}:{i}")?;
                for v in row {
                    write!(w, " {v:.6}")?;
                }
                writeln!(w)?;
            }
        }
        Ok(())
    }
}

/// One centroid index per codebook.
#[derive(Debug, Clone)]
pub struct IndexSet(pub Vec<CentroidIndex>);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VocabParams {
    pub mode: VocabMode,
    /// Centroids per codebook.
    pub k: usize,
    pub seed: u64,
    pub max_iter: usize,
    pub tol: f64,
    /// Cluster each distinct token once instead of once per occurrence.
    pub unique_tokens: bool,
    pub case: CasePolicy,
}

impl VocabParams {
    pub fn new(mode: VocabMode, k: usize, seed: u64) -> Self {
        VocabParams {
            mode,
            k,
            seed,
            max_iter: 100,
            tol: 1e-4,
            unique_tokens: false,
            case: CasePolicy::default(),
        }
    }
}

/// Cluster the word vectors of `docs` into one codebook (single mode) or one
/// codebook per category (per-class mode). Multi-label documents contribute
/// to every category they belong to.
pub fn build_vocabularies(
    docs: &[&Document],
    categories: &[String],
    table: &EmbeddingTable,
    params: &VocabParams,
) -> Result<VocabularySet> {
    let pools: Vec<(Option<String>, Vec<&Document>)> = match params.mode {
        VocabMode::Single => vec![(None, docs.to_vec())],
        VocabMode::PerClass => categories
            .iter()
            .map(|c| {
                let members = docs.iter().copied().filter(|d| d.labels.contains(c)).collect();
                (Some(c.clone()), members)
            })
            .collect(),
    };

    let mut books = Vec::with_capacity(pools.len());
    for (b, (tag, members)) in pools.into_iter().enumerate() {
        let name = tag.clone().unwrap_or_else(|| "<all>".to_string());
        let data = pool_vectors(&members, table, params)?;
        if data.rows() == 0 {
            return Err(Error::EmptyClassPool(name));
        }
        let km = KMeansParams {
            k: params.k,
            seed: params.seed ^ (b as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
            max_iter: params.max_iter,
            tol: params.tol,
        };
        let outcome = kmeans(&data, &km)?;
        info!(
            "codebook {name}: {} vectors, k={}, {} iterations, inertia {:.4}",
            data.rows(),
            params.k,
            outcome.iterations,
            outcome.codebook.inertia
        );
        let mut book = outcome.codebook;
        book.class_tag = tag;
        books.push(book);
    }
    Ok(VocabularySet {
        mode: params.mode,
        books,
    })
}

fn pool_vectors(docs: &[&Document], table: &EmbeddingTable, params: &VocabParams) -> Result<Matrix> {
    let mut data = Vec::new();
    let mut rows = 0;
    let mut seen = std::collections::HashSet::new();
    for doc in docs {
        for token in &doc.tokens {
            if params.unique_tokens && !seen.insert(token.as_str()) {
                continue;
            }
            if let Some(v) = table.lookup_with(token, params.case) {
                data.extend(v.iter().map(|&x| f64::from(x)));
                rows += 1;
            }
        }
    }
    Matrix::from_vec(rows, table.dim(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Split;
    use std::collections::BTreeSet;

    fn doc(id: &str, label: &str, tokens: &[&str]) -> Document {
        Document {
            id: id.into(),
            tokens: tokens.iter().map(|s| s.to_string()).collect(),
            labels: BTreeSet::from([label.to_string()]),
            split: Split::Train,
        }
    }

    fn toy_table() -> EmbeddingTable {
        let mut t = EmbeddingTable::new(2).unwrap();
        for (w, v) in [
            ("a1", [0.0f32, 0.2]),
            ("a2", [0.2, 0.0]),
            ("a3", [-0.1, -0.1]),
            ("b1", [10.0, 10.2]),
            ("b2", [9.8, 10.0]),
            ("b3", [10.1, 9.9]),
        ] {
            t.insert(w.as_bytes(), &v).unwrap();
        }
        t
    }

    #[test]
    fn per_class_books_sit_on_class_means() {
        let docs = [doc("1", "A", &["a1", "a2"]), doc("2", "A", &["a3", "oov"]), doc("3", "B", &["b1", "b2", "b3"])];
        let refs: Vec<&Document> = docs.iter().collect();
        let cats = vec!["A".to_string(), "B".to_string()];
        let params = VocabParams::new(VocabMode::PerClass, 1, 7);
        let vocab = build_vocabularies(&refs, &cats, &toy_table(), &params).unwrap();
        assert_eq!(vocab.total_size(), 2);
        assert_eq!(vocab.books[0].class_tag.as_deref(), Some("A"));
        let a = vocab.books[0].centroid(0);
        let b = vocab.books[1].centroid(0);
        assert!((a[0] - 0.1 / 3.0).abs() < 1e-6 && (a[1] - 0.1 / 3.0).abs() < 1e-6);
        assert!((b[0] - 29.9 / 3.0).abs() < 1e-5 && (b[1] - 30.1 / 3.0).abs() < 1e-5);
    }

    #[test]
    fn empty_class_pool_is_named() {
        let docs = [doc("1", "A", &["a1"]), doc("2", "B", &["oov"])];
        let refs: Vec<&Document> = docs.iter().collect();
        let cats = vec!["A".to_string(), "B".to_string()];
        let err = build_vocabularies(&refs, &cats, &toy_table(), &VocabParams::new(VocabMode::PerClass, 1, 0))
            .unwrap_err();
        assert!(matches!(err, Error::EmptyClassPool(ref c) if c == "B"));
    }

    #[test]
    fn unique_tokens_flag() {
        let docs = [doc("1", "A", &["a1", "a1", "a1", "b1"])];
        let refs: Vec<&Document> = docs.iter().collect();
        let mut params = VocabParams::new(VocabMode::Single, 1, 0);
        let counted = pool_vectors(&refs, &toy_table(), &params).unwrap();
        params.unique_tokens = true;
        let unique = pool_vectors(&refs, &toy_table(), &params).unwrap();
        assert_eq!((counted.rows(), unique.rows()), (4, 2));
    }

    #[test]
    fn serialization_round_trip() {
        let docs = [doc("1", "A", &["a1", "a2", "a3"]), doc("2", "B", &["b1", "b2"])];
        let refs: Vec<&Document> = docs.iter().collect();
        let cats = vec!["A".to_string(), "B".to_string()];
        let vocab =
            build_vocabularies(&refs, &cats, &toy_table(), &VocabParams::new(VocabMode::PerClass, 2, 1)).unwrap();
        let prov = Provenance::of_bytes(b"cfg");
        let mut buf = Vec::new();
        vocab.write(&mut buf, &prov).unwrap();
        let (back, p) = VocabularySet::read(&mut buf.as_slice()).unwrap();
        assert_eq!(back, vocab);
        assert_eq!(p, prov);
        assert!(VocabularySet::read(&mut &buf[..buf.len() - 3]).is_err());

        let mut text = Vec::new();
        vocab.write_text(&mut text).unwrap();
        assert!(String::from_utf8(text).unwrap().contains("class=B"));
    }
}
