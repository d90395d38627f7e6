//! Documents, corpora, text preprocessing and corpus loaders.

mod porter;
mod reuters;
mod tokenize;

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use porter::porter_stem;
pub use reuters::{load_reuters_modapte, parse_reuters_sgml, ReutersArticle};
pub use tokenize::{english_stopwords, remove_stopwords, tokenize, tokenize_str, TokenizeOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
    Unsplit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub id: String,
    pub tokens: Vec<String>,
    pub labels: BTreeSet<String>,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Corpus {
    pub documents: Vec<Document>,
    pub categories: Vec<String>,
    /// Non-fatal problems noticed while loading.
    pub warnings: Vec<String>,
}

impl Corpus {
    /// Build a corpus, checking that ids are unique and every label is a
    /// known category.
    pub fn new(documents: Vec<Document>, categories: Vec<String>) -> Result<Self> {
        let known: HashSet<&str> = categories.iter().map(String::as_str).collect();
        if known.len() != categories.len() {
            return Err(Error::invalid("duplicate category names"));
        }
        let mut ids = HashSet::new();
        for doc in &documents {
            if !ids.insert(doc.id.as_str()) {
                return Err(Error::invalid(format!("duplicate document id `{}`", doc.id)));
            }
            if let Some(l) = doc.labels.iter().find(|l| !known.contains(l.as_str())) {
                return Err(Error::invalid(format!(
                    "document `{}` has unknown label `{l}`",
                    doc.id
                )));
            }
        }
        Ok(Corpus {
            documents,
            categories,
            warnings: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn category_index(&self, name: &str) -> Option<usize> {
        self.categories.iter().position(|c| c == name)
    }

    /// Per-document membership flags in category order.
    pub fn label_matrix(&self) -> Vec<Vec<bool>> {
        self.documents
            .iter()
            .map(|d| self.categories.iter().map(|c| d.labels.contains(c)).collect())
            .collect()
    }

    /// True when every document carries exactly one label.
    pub fn is_single_label(&self) -> bool {
        self.documents.iter().all(|d| d.labels.len() == 1)
    }
}

/// Token-level preprocessing applied after tokenization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Preprocess {
    pub lowercase: bool,
    pub stopwords: bool,
    pub stem: bool,
}

impl Preprocess {
    /// Lowercase, drop stop words and stem, in that order, as enabled.
    pub fn apply(&self, tokens: &[String], stoplist: &HashSet<String>) -> Vec<String> {
        tokens
            .iter()
            .map(|t| if self.lowercase { t.to_lowercase() } else { t.clone() })
            .filter(|t| !self.stopwords || !stoplist.contains(&t.to_lowercase()))
            .map(|t| if self.stem { porter_stem(&t) } else { t })
            .collect()
    }
}

fn read_dir_sorted(dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let mut paths = Vec::new();
    for entry in fs::read_dir(dir).map_err(Error::at_path(dir))? {
        let entry = entry.map_err(Error::at_path(dir))?;
        if entry.file_type().map_err(Error::at_path(entry.path()))?.is_file() {
            paths.push(entry.path());
        }
    }
    paths.sort();
    Ok(paths)
}

/// Load the polarity data set: `root/pos/*` and `root/neg/*`, one review per
/// file. Categories are `[pos, neg]`.
pub fn load_movie_review(root: &Path, options: TokenizeOptions) -> Result<Corpus> {
    let mut documents = Vec::new();
    let mut warnings = Vec::new();
    for class in ["pos", "neg"] {
        let dir = root.join(class);
        let files = read_dir_sorted(&dir)?;
        if files.len() != 1000 {
            let msg = format!("{}: expected 1000 reviews, found {}", dir.display(), files.len());
            warn!("{msg}");
            warnings.push(msg);
        }
        for path in files {
            let bytes = fs::read(&path).map_err(Error::at_path(&path))?;
            let tokens = tokenize(&bytes, options).map_err(|e| match e {
                Error::Decode { offset } => Error::Parse {
                    file: path.display().to_string(),
                    offset,
                    msg: "invalid UTF-8".into(),
                },
                e => e,
            })?;
            let name = path.file_name().unwrap_or_default().to_string_lossy();
            documents.push(Document {
                id: format!("{class}/{name}"),
                tokens,
                labels: BTreeSet::from([class.to_string()]),
                split: Split::Unsplit,
            });
        }
    }
    let mut corpus = Corpus::new(documents, vec!["pos".into(), "neg".into()])?;
    corpus.warnings = warnings;
    Ok(corpus)
}

/// Parse `label<TAB>text` lines. The label field may hold several
/// comma-separated labels. Blank lines are skipped; categories are ordered
/// by first appearance. Document ids are line numbers, prefixed with the
/// split name for train and test files.
pub fn parse_generic(text: &str, options: TokenizeOptions, split: Split) -> Result<Corpus> {
    let mut documents = Vec::new();
    let mut categories: Vec<String> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let (label_field, body) = line.split_once('\t').ok_or_else(|| Error::Line {
            line: line_no,
            msg: "missing TAB between label and text".into(),
        })?;
        let labels: BTreeSet<String> = label_field
            .split(',')
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(str::to_string)
            .collect();
        if labels.is_empty() {
            return Err(Error::Line {
                line: line_no,
                msg: "empty label".into(),
            });
        }
        for l in &labels {
            if !categories.contains(l) {
                categories.push(l.clone());
            }
        }
        documents.push(Document {
            id: match split {
                Split::Train => format!("train-line-{line_no}"),
                Split::Test => format!("test-line-{line_no}"),
                Split::Unsplit => format!("line-{line_no}"),
            },
            tokens: tokenize_str(body, options),
            labels,
            split,
        });
    }
    Corpus::new(documents, categories)
}

pub fn load_generic(path: &Path, options: TokenizeOptions, split: Split) -> Result<Corpus> {
    let bytes = fs::read(path).map_err(Error::at_path(path))?;
    let text = std::str::from_utf8(&bytes).map_err(|e| Error::Parse {
        file: path.display().to_string(),
        offset: e.valid_up_to(),
        msg: "invalid UTF-8".into(),
    })?;
    parse_generic(text, options, split)
}
