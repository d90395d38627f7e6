//! Generated two-class corpus with a matching embedding table.
//!
//! Each class owns a set of indicative tokens whose vectors are drawn from a
//! tight Gaussian blob; the two blobs sit on opposite sides of the origin.
//! Shared filler tokens are drawn from a broad Gaussian around the origin and
//! appear in both classes.

use std::collections::BTreeSet;
use std::io::Write;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::corpus::{Corpus, Document, Split};
use crate::embeddings::EmbeddingTable;
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub docs_per_class: usize,
    pub dim: usize,
    pub tokens_per_doc: usize,
    /// Indicative token types per class.
    pub class_vocab: usize,
    pub shared_vocab: usize,
    /// Expected share of indicative tokens in a document.
    pub indicative_rate: f64,
    /// Distance of each class blob centre from the origin.
    pub separation: f64,
    pub blob_sigma: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            docs_per_class: 100,
            dim: 50,
            tokens_per_doc: 40,
            class_vocab: 60,
            shared_vocab: 200,
            indicative_rate: 0.3,
            separation: 4.0,
            blob_sigma: 0.4,
            seed: 7,
        }
    }
}

pub const CLASSES: [&str; 2] = ["alpha", "beta"];

fn class_token(class: usize, i: usize) -> String {
    format!("{}{i}", CLASSES[class])
}

fn shared_token(i: usize) -> String {
    format!("common{i}")
}

/// Generate the corpus (categories `alpha`, `beta`; documents unsplit) and an
/// embedding table covering every token.
pub fn generate(spec: &SyntheticSpec) -> Result<(Corpus, EmbeddingTable)> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut table = EmbeddingTable::new(spec.dim)?;

    let mut direction: Vec<f64> = (0..spec.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    let norm = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
    direction.iter_mut().for_each(|v| *v /= norm);

    let blob = Normal::new(0.0, spec.blob_sigma).expect("valid sigma");
    for class in 0..2 {
        let sign = if class == 0 { 1.0 } else { -1.0 };
        for i in 0..spec.class_vocab {
            let v: Vec<f32> = direction
                .iter()
                .map(|d| (sign * spec.separation * d + blob.sample(&mut rng)) as f32)
                .collect();
            table.insert(class_token(class, i).as_bytes(), &v)?;
        }
    }
    for i in 0..spec.shared_vocab {
        let v: Vec<f32> = (0..spec.dim).map(|_| StandardNormal.sample(&mut rng)).map(|x: f64| x as f32).collect();
        table.insert(shared_token(i).as_bytes(), &v)?;
    }

    let own: Vec<Vec<String>> = (0..2).map(|c| (0..spec.class_vocab).map(|i| class_token(c, i)).collect()).collect();
    let shared: Vec<String> = (0..spec.shared_vocab).map(shared_token).collect();
    let mut documents = Vec::with_capacity(2 * spec.docs_per_class);
    for d in 0..spec.docs_per_class {
        for class in 0..2 {
            let tokens = (0..spec.tokens_per_doc)
                .map(|_| {
                    let pool = if rng.random::<f64>() < spec.indicative_rate { &own[class] } else { &shared };
                    pool.choose(&mut rng).expect("non-empty pool").clone()
                })
                .collect();
            documents.push(Document {
                id: format!("{}-{d:04}", CLASSES[class]),
                tokens,
                labels: BTreeSet::from([CLASSES[class].to_string()]),
                split: Split::Unsplit,
            });
        }
    }
    let corpus = Corpus::new(documents, CLASSES.iter().map(|s| s.to_string()).collect())?;
    Ok((corpus, table))
}

/// Write a corpus in the generic `label<TAB>text` format.
pub fn write_generic<W: Write>(corpus: &Corpus, w: &mut W) -> Result<()> {
    for d in &corpus.documents {
        let labels: Vec<&str> = d.labels.iter().map(String::as_str).collect();
        writeln!(w, "{}\t{}", labels.join(","), d.tokens.join(" "))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_and_determinism() {
        let spec = SyntheticSpec::default();
        let (c, t) = generate(&spec).unwrap();
        assert_eq!(c.len(), 200);
        assert_eq!(t.len(), 2 * spec.class_vocab + spec.shared_vocab);
        assert!(c.documents.iter().all(|d| d.tokens.len() == spec.tokens_per_doc));
        let (c2, t2) = generate(&spec).unwrap();
        assert_eq!((c, t), (c2, t2));
    }
}
