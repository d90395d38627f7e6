//! Experimental grids: vocabulary layouts crossed with the five kernels,
//! scored by cross-validation or on a fixed train/test split.

use std::io::Write;

use log::info;

use crate::corpus::Corpus;
use crate::embeddings::EmbeddingTable;
use crate::error::{Error, Result};
use crate::eval::{evaluate_testset, kfold_cv};
use crate::kernels::KernelKind;
use crate::pipeline::{BosweClassifier, BosweConfig, KernelCombo};
use crate::quantizer::VocabMode;

/// One vocabulary layout: a single codebook of `k` words, or `k` words per class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridRow {
    pub mode: VocabMode,
    pub k: usize,
}

impl GridRow {
    pub fn label(&self, n_classes: usize) -> String {
        let books = match self.mode {
            VocabMode::Single => 1,
            VocabMode::PerClass => n_classes,
        };
        format!("{books} x {} words", self.k)
    }
}

pub const POLARITY_ROWS: [GridRow; 4] = [
    GridRow { mode: VocabMode::Single, k: 5000 },
    GridRow { mode: VocabMode::Single, k: 10000 },
    GridRow { mode: VocabMode::PerClass, k: 5000 },
    GridRow { mode: VocabMode::PerClass, k: 7500 },
];

pub const TOPIC_ROWS: [GridRow; 4] = [
    GridRow { mode: VocabMode::Single, k: 10000 },
    GridRow { mode: VocabMode::Single, k: 20000 },
    GridRow { mode: VocabMode::PerClass, k: 100 },
    GridRow { mode: VocabMode::PerClass, k: 200 },
];

/// Rows of vocabulary layouts, one column per kernel, one or more metrics per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultTable {
    pub title: String,
    pub columns: Vec<String>,
    pub metrics: Vec<String>,
    /// `(row label, cells[column][metric])`
    pub rows: Vec<(String, Vec<Vec<f64>>)>,
}

impl ResultTable {
    pub fn cell(&self, row: usize, column: usize, metric: usize) -> f64 {
        self.rows[row].1[column][metric]
    }

    /// Fixed-width text layout, values in percent.
    pub fn write_text<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "{}", self.title)?;
        let width = 14 * self.metrics.len();
        write!(w, "{:<20}", "vocabulary")?;
        for c in &self.columns {
            write!(w, "{c:>width$}")?;
        }
        writeln!(w)?;
        if self.metrics.len() > 1 {
            write!(w, "{:<20}", "")?;
            for _ in &self.columns {
                for m in &self.metrics {
                    write!(w, "{m:>14}")?;
                }
            }
            writeln!(w)?;
        }
        for (label, cells) in &self.rows {
            write!(w, "{label:<20}")?;
            for cell in cells {
                for v in cell {
                    write!(w, "{:>13.2}%", 100.0 * v)?;
                }
            }
            writeln!(w)?;
        }
        Ok(())
    }

    /// Tab-separated: row, column, metric, value.
    pub fn write_tsv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "vocabulary\tkernel\tmetric\tvalue")?;
        for (label, cells) in &self.rows {
            for (c, cell) in self.columns.iter().zip(cells) {
                for (m, v) in self.metrics.iter().zip(cell) {
                    writeln!(w, "{label}\t{c}\t{m}\t{v:.6}")?;
                }
            }
        }
        Ok(())
    }
}

fn all_kernels() -> Vec<KernelCombo> {
    KernelKind::ALL.into_iter().map(KernelCombo::single).collect()
}

fn row_config(base: &BosweConfig, row: GridRow, kernels: &[KernelCombo]) -> BosweConfig {
    let mut cfg = base.clone();
    cfg.vocab.mode = row.mode;
    cfg.vocab.k = row.k;
    cfg.kernels = kernels.to_vec();
    cfg
}

/// Accuracy under k-fold cross-validation for every row and kernel.
pub fn cv_table(
    corpus: &Corpus,
    table: &EmbeddingTable,
    base: &BosweConfig,
    rows: &[GridRow],
    folds: usize,
    seed: u64,
) -> Result<ResultTable> {
    let kernels = all_kernels();
    let mut out = Vec::with_capacity(rows.len());
    for &row in rows {
        let label = row.label(corpus.categories.len());
        info!("cross-validating {label}");
        let clf = BosweClassifier::new(table, row_config(base, row, &kernels));
        let report = kfold_cv(corpus, &clf, folds, seed)?;
        let cells = (0..kernels.len()).map(|v| vec![report.mean_accuracy(v)]).collect();
        out.push((label, cells));
    }
    Ok(ResultTable {
        title: format!("{folds}-fold cross-validation accuracy"),
        columns: kernels.iter().map(ToString::to_string).collect(),
        metrics: vec!["accuracy".into()],
        rows: out,
    })
}

/// Micro and macro F1 on the test split for every row and kernel.
pub fn testset_table(
    corpus: &Corpus,
    train: &[usize],
    test: &[usize],
    table: &EmbeddingTable,
    base: &BosweConfig,
    rows: &[GridRow],
) -> Result<ResultTable> {
    let kernels = all_kernels();
    let mut out = Vec::with_capacity(rows.len());
    for &row in rows {
        let label = row.label(corpus.categories.len());
        info!("evaluating {label}");
        let clf = BosweClassifier::new(table, row_config(base, row, &kernels));
        let reports = evaluate_testset(corpus, &clf, train, test)?;
        let cells = reports.iter().map(|r| vec![r.micro_f1, r.macro_f1]).collect();
        out.push((label, cells));
    }
    Ok(ResultTable {
        title: "test set F1".into(),
        columns: kernels.iter().map(ToString::to_string).collect(),
        metrics: vec!["microF1".into(), "macroF1".into()],
        rows: out,
    })
}

/// Concatenate a train and a test corpus over the same categories.
pub fn merge_splits(train: Corpus, test: Corpus) -> Result<(Corpus, Vec<usize>, Vec<usize>)> {
    if train.categories != test.categories {
        return Err(Error::invalid("train and test corpora have different categories"));
    }
    let n_train = train.len();
    let n_test = test.len();
    let mut documents = train.documents;
    documents.extend(test.documents);
    let mut corpus = Corpus::new(documents, train.categories)?;
    corpus.warnings = train.warnings;
    Ok((corpus, (0..n_train).collect(), (n_train..n_train + n_test).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_and_text_layout() {
        assert_eq!(POLARITY_ROWS[3].label(2), "2 x 7500 words");
        assert_eq!(TOPIC_ROWS[0].label(90), "1 x 10000 words");
        let t = ResultTable {
            title: "t".into(),
            columns: vec!["linear".into(), "pq".into()],
            metrics: vec!["accuracy".into()],
            rows: vec![("1 x 5 words".into(), vec![vec![0.5], vec![0.875]])],
        };
        let mut buf = Vec::new();
        t.write_text(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.contains("50.00%") && s.contains("87.50%"));
        let mut buf = Vec::new();
        t.write_tsv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 3);
    }
}
