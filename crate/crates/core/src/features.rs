//! Document histograms: bag of super word embeddings and the bag-of-words
//! baseline.

use std::collections::{BTreeSet, HashMap};
use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::artifact::{self, Provenance};
use crate::corpus::Document;
use crate::error::{Error, Result};
use crate::quantizer::{Budget, IndexSet, SearchScratch, VocabularySet};

const FEATURES_MAGIC: &[u8; 8] = b"BOSWEFEA";
const FEATURES_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    None,
    L1,
    L2,
}

impl Norm {
    pub fn name(self) -> &'static str {
        match self {
            Norm::None => "none",
            Norm::L1 => "L1",
            Norm::L2 => "L2",
        }
    }

    fn code(self) -> u8 {
        match self {
            Norm::None => 0,
            Norm::L1 => 1,
            Norm::L2 => 2,
        }
    }

    fn from_code(c: u8) -> Result<Self> {
        match c {
            0 => Ok(Norm::None),
            1 => Ok(Norm::L1),
            2 => Ok(Norm::L2),
            _ => Err(Error::Format {
                offset: 0,
                msg: format!("unknown norm code {c}"),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    Raw,
    LogTf,
}

impl Weighting {
    fn code(self) -> u8 {
        match self {
            Weighting::Raw => 0,
            Weighting::LogTf => 1,
        }
    }
}

/// Non-negative feature vector with its recorded normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub doc_id: String,
    pub values: Vec<f64>,
    pub norm: Norm,
}

impl Histogram {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// A copy rescaled to the requested norm. Only unnormalized histograms
    /// (or ones already in the requested norm) can be converted.
    pub fn normalized(&self, norm: Norm) -> Result<Histogram> {
        if self.norm == norm {
            return Ok(self.clone());
        }
        if self.norm != Norm::None {
            return Err(Error::invalid(format!(
                "cannot renormalize an {} histogram to {}",
                self.norm.name(),
                norm.name()
            )));
        }
        let mut values = self.values.clone();
        normalize(&mut values, norm);
        Ok(Histogram {
            doc_id: self.doc_id.clone(),
            values,
            norm,
        })
    }
}

/// Scale in place to unit L1 or L2 norm. All-zero vectors are left as is.
pub fn normalize(values: &mut [f64], norm: Norm) {
    let total = match norm {
        Norm::None => return,
        Norm::L1 => values.iter().map(|v| v.abs()).sum::<f64>(),
        Norm::L2 => values.iter().map(|v| v * v).sum::<f64>().sqrt(),
    };
    if total > 0.0 {
        values.iter_mut().for_each(|v| *v /= total);
    }
}

/// Nearest-centroid counts over the vocabulary. In per-class mode each
/// vector is assigned within every codebook and the per-book counts are
/// concatenated in book order; normalization applies to the whole vector.
pub fn boswe_histogram<V: AsRef<[f64]>>(
    doc_id: &str,
    vectors: &[V],
    vocab: &VocabularySet,
    indexes: &IndexSet,
    norm: Norm,
    budget: Budget,
) -> Result<Histogram> {
    if indexes.0.len() != vocab.books.len() {
        return Err(Error::invalid("index set does not match vocabulary"));
    }
    let mut values = vec![0.0; vocab.total_size()];
    let mut scratch: Vec<SearchScratch> = indexes.0.iter().map(|_| SearchScratch::default()).collect();
    for v in vectors {
        let v = v.as_ref();
        if v.len() != vocab.dim() {
            return Err(Error::DimensionMismatch {
                expected: vocab.dim(),
                found: v.len(),
            });
        }
        let mut offset = 0;
        for ((book, index), scratch) in vocab.books.iter().zip(&indexes.0).zip(&mut scratch) {
            let (id, _) = index.search(v, budget, scratch);
            values[offset + id] += 1.0;
            offset += book.k();
        }
    }
    normalize(&mut values, norm);
    Ok(Histogram {
        doc_id: doc_id.to_string(),
        values,
        norm,
    })
}

/// Histograms for many documents, computed in parallel; order is preserved.
pub fn boswe_histograms<V: AsRef<[f64]> + Sync>(
    docs: &[(String, Vec<V>)],
    vocab: &VocabularySet,
    indexes: &IndexSet,
    norm: Norm,
    budget: Budget,
) -> Result<Vec<Histogram>> {
    docs.par_iter()
        .map(|(id, vectors)| boswe_histogram(id, vectors, vocab, indexes, norm, budget))
        .collect()
}

/// Log-scaled term frequency: `0` for an absent term, else `1 + ln f`.
pub fn log_tf(f: u64) -> f64 {
    if f == 0 {
        0.0
    } else {
        1.0 + (f as f64).ln()
    }
}

/// Ordered term list built from training documents only.
#[derive(Debug, Clone, PartialEq)]
pub struct TermVocab {
    terms: Vec<String>,
    index: HashMap<String, usize>,
}

impl TermVocab {
    /// Collect every term of `docs`, sorted for a deterministic layout.
    pub fn build(docs: &[&Document]) -> Self {
        let set: BTreeSet<&str> = docs.iter().flat_map(|d| d.tokens.iter().map(String::as_str)).collect();
        Self::from_terms(set.into_iter().map(str::to_string).collect())
    }

    pub fn from_terms(terms: Vec<String>) -> Self {
        let mut uniq = Vec::with_capacity(terms.len());
        let mut index = HashMap::with_capacity(terms.len());
        for t in terms {
            if !index.contains_key(&t) {
                index.insert(t.clone(), uniq.len());
                uniq.push(t);
            }
        }
        TermVocab { terms: uniq, index }
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn position(&self, term: &str) -> Option<usize> {
        self.index.get(term).copied()
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }
}

/// Term-frequency features; terms outside the vocabulary are ignored.
pub fn bow_features<S: AsRef<str>>(
    doc_id: &str,
    tokens: &[S],
    vocab: &TermVocab,
    weighting: Weighting,
    norm: Norm,
) -> Histogram {
    let mut counts = vec![0u64; vocab.len()];
    for t in tokens {
        if let Some(i) = vocab.position(t.as_ref()) {
            counts[i] += 1;
        }
    }
    let mut values: Vec<f64> = counts
        .into_iter()
        .map(|c| match weighting {
            Weighting::Raw => c as f64,
            Weighting::LogTf => log_tf(c),
        })
        .collect();
    normalize(&mut values, norm);
    Histogram {
        doc_id: doc_id.to_string(),
        values,
        norm,
    }
}

/// Header metadata of a dumped feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub histograms: Vec<Histogram>,
    pub weighting: Weighting,
}

impl FeatureMatrix {
    pub fn dim(&self) -> usize {
        self.histograms.first().map_or(0, Histogram::len)
    }

    pub fn write<W: Write>(&self, w: &mut W, provenance: &Provenance) -> Result<()> {
        let dim = self.dim();
        let norm = self.histograms.first().map_or(Norm::None, |h| h.norm);
        if self.histograms.iter().any(|h| h.len() != dim || h.norm != norm) {
            return Err(Error::invalid("feature rows differ in length or norm"));
        }
        artifact::write_header(w, FEATURES_MAGIC, FEATURES_VERSION, provenance)?;
        w.write_u64::<LittleEndian>(self.histograms.len() as u64)?;
        w.write_u64::<LittleEndian>(dim as u64)?;
        w.write_u8(norm.code())?;
        w.write_u8(self.weighting.code())?;
        for h in &self.histograms {
            artifact::write_str(w, &h.doc_id)?;
        }
        for h in &self.histograms {
            artifact::write_f64s(w, &h.values)?;
        }
        Ok(())
    }

    pub fn read<R: Read>(r: &mut R) -> Result<(Self, Provenance)> {
        let provenance = artifact::read_header(r, FEATURES_MAGIC, FEATURES_VERSION)?;
        let n = r.read_u64::<LittleEndian>().map_err(artifact::truncated("n_docs"))? as usize;
        let dim = r.read_u64::<LittleEndian>().map_err(artifact::truncated("dim"))? as usize;
        let norm = Norm::from_code(r.read_u8().map_err(artifact::truncated("norm"))?)?;
        let weighting = match r.read_u8().map_err(artifact::truncated("weighting"))? {
            0 => Weighting::Raw,
            1 => Weighting::LogTf,
            c => {
                return Err(Error::Format {
                    offset: 0,
                    msg: format!("unknown weighting code {c}"),
                })
            }
        };
        let ids = (0..n).map(|_| artifact::read_str(r)).collect::<Result<Vec<_>>>()?;
        let mut histograms = Vec::with_capacity(n);
        for doc_id in ids {
            histograms.push(Histogram {
                doc_id,
                values: artifact::read_f64s(r, dim)?,
                norm,
            });
        }
        Ok((FeatureMatrix { histograms, weighting }, provenance))
    }

    /// Sparse text dump: `doc_id idx:val ...` with zero entries omitted.
    pub fn write_sparse_text<W: Write>(&self, w: &mut W) -> Result<()> {
        for h in &self.histograms {
            write!(w, "{}", h.doc_id)?;
            for (i, v) in h.values.iter().enumerate().filter(|(_, v)| **v != 0.0) {
                write!(w, " {i}:{v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;
    use crate::quantizer::{Codebook, VocabMode};

    fn two_centroid_vocab() -> (VocabularySet, IndexSet) {
        let book = Codebook::new(Matrix::from_rows(&[vec![0.0, 0.0], vec![10.0, 10.0]]).unwrap(), None, 0.0).unwrap();
        let vocab = VocabularySet {
            mode: VocabMode::Single,
            books: vec![book],
        };
        let idx = vocab.build_indexes(4, 0);
        (vocab, idx)
    }

    #[test]
    fn boswe_counts_and_l1() {
        let (vocab, idx) = two_centroid_vocab();
        let vectors = vec![vec![1.0, 0.0], vec![9.0, 9.0], vec![11.0, 11.0]];
        let h = boswe_histogram("d", &vectors, &vocab, &idx, Norm::None, Budget::Exhaustive).unwrap();
        assert_eq!(h.values, [1.0, 2.0]);
        let h = boswe_histogram("d", &vectors, &vocab, &idx, Norm::L1, Budget::Exhaustive).unwrap();
        assert!((h.values[0] - 1.0 / 3.0).abs() < 1e-15 && (h.values[1] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn per_class_single_centroid_books() {
        let book = |tag: &str, x: f64| {
            Codebook::new(Matrix::from_rows(&[vec![x, x]]).unwrap(), Some(tag.into()), 0.0).unwrap()
        };
        let vocab = VocabularySet {
            mode: VocabMode::PerClass,
            books: vec![book("a", 0.0), book("b", 5.0)],
        };
        let idx = vocab.build_indexes(2, 0);
        let vectors = vec![vec![1.0, 1.0], vec![7.0, 2.0], vec![-3.0, 0.0]];
        let h = boswe_histogram("d", &vectors, &vocab, &idx, Norm::None, Budget::Exhaustive).unwrap();
        assert_eq!(h.values, [3.0, 3.0]);
    }

    #[test]
    fn empty_document_is_all_zero() {
        let (vocab, idx) = two_centroid_vocab();
        let h = boswe_histogram::<Vec<f64>>("d", &[], &vocab, &idx, Norm::L2, Budget::Exhaustive).unwrap();
        assert_eq!(h.values, [0.0, 0.0]);
        assert_eq!(h.norm, Norm::L2);
    }

    #[test]
    fn log_tf_values() {
        assert_eq!(log_tf(0), 0.0);
        assert_eq!(log_tf(1), 1.0);
        assert!((log_tf(10) - 3.302585092994046).abs() < 1e-12);
    }

    #[test]
    fn bow_examples() {
        let vocab = TermVocab::from_terms(vec!["good".into(), "bad".into()]);
        let doc = ["good", "good", "bad", "unseen"];
        assert_eq!(bow_features("d", &doc, &vocab, Weighting::Raw, Norm::None).values, [2.0, 1.0]);
        let l2 = bow_features("d", &doc, &vocab, Weighting::Raw, Norm::L2).values;
        assert!((l2[0] - 2.0 / 5f64.sqrt()).abs() < 1e-15 && (l2[1] - 1.0 / 5f64.sqrt()).abs() < 1e-15);
        let lt = bow_features("d", &doc, &vocab, Weighting::LogTf, Norm::None).values;
        assert_eq!(lt, [1.0 + 2f64.ln(), 1.0]);
    }

    #[test]
    fn renormalize_rules() {
        let h = Histogram {
            doc_id: "x".into(),
            values: vec![3.0, 4.0],
            norm: Norm::None,
        };
        assert_eq!(h.normalized(Norm::L2).unwrap().values, [0.6, 0.8]);
        let l1 = h.normalized(Norm::L1).unwrap();
        assert!(l1.normalized(Norm::L2).is_err());
    }

    #[test]
    fn feature_matrix_round_trip() {
        let m = FeatureMatrix {
            histograms: vec![
                Histogram {
                    doc_id: "a".into(),
                    values: vec![0.0, 0.5, 0.5],
                    norm: Norm::L1,
                },
                Histogram {
                    doc_id: "b".into(),
                    values: vec![1.0, 0.0, 0.0],
                    norm: Norm::L1,
                },
            ],
            weighting: Weighting::Raw,
        };
        let p = Provenance::of_bytes(b"x");
        let mut buf = Vec::new();
        m.write(&mut buf, &p).unwrap();
        let (back, bp) = FeatureMatrix::read(&mut buf.as_slice()).unwrap();
        assert_eq!((back, bp), (m.clone(), p));
        let mut text = Vec::new();
        m.write_sparse_text(&mut text).unwrap();
        assert_eq!(String::from_utf8(text).unwrap(), "a 1:0.5 2:0.5\nb 0:1\n");
    }
}
