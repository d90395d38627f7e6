//! End-to-end classifiers: BOSWE histograms or bag-of-words features, a
//! (possibly summed) kernel, and SVMs on the precomputed Gram matrix.

use std::collections::HashSet;
use std::fmt;
use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::artifact::{self, Provenance};
use crate::corpus::{english_stopwords, Corpus, Document, Preprocess};
use crate::embeddings::{CasePolicy, EmbeddingTable};
use crate::error::{Error, Result};
use crate::eval::{exact_match_accuracy, micro_macro_f1, confusions, FoldOutput, FoldPlan, TextClassifier};
use crate::features::{boswe_histogram, bow_features, Histogram, Norm, TermVocab, Weighting};
use crate::kernels::{cross_gram, gram, sum_kernels, GramMatrix, KernelKind};
use crate::matrix::Matrix;
use crate::quantizer::{build_vocabularies, Budget, IndexSet, VocabParams, VocabularySet, DEFAULT_TREES};
use crate::svm::{train_binary, train_one_vs_rest, MultiModel, SvmModel, SvmParams};

/// Kernels summed into one Gram matrix, e.g. `hellinger+pq`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct KernelCombo(pub Vec<KernelKind>);

impl KernelCombo {
    pub fn single(kind: KernelKind) -> Self {
        KernelCombo(vec![kind])
    }

    pub fn parse(s: &str) -> Result<Self> {
        let kinds = s
            .split('+')
            .map(|p| KernelKind::parse(p.trim()).ok_or_else(|| Error::invalid(format!("unknown kernel {p:?}"))))
            .collect::<Result<Vec<_>>>()?;
        if kinds.is_empty() {
            return Err(Error::invalid("empty kernel combination"));
        }
        Ok(KernelCombo(kinds))
    }
}

impl fmt::Display for KernelCombo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.0.iter().map(|k| k.name()).collect();
        f.write_str(&names.join("+"))
    }
}

/// SVM settings shared by every classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct SvmConfig {
    pub params: SvmParams,
    /// Candidate values of C; with more than one, C is picked by an inner
    /// cross-validation on the training Gram matrix.
    pub c_grid: Vec<f64>,
    pub inner_folds: usize,
    pub seed: u64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig {
            params: SvmParams::default(),
            c_grid: Vec::new(),
            inner_folds: 3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BosweConfig {
    pub vocab: VocabParams,
    pub preprocess: Preprocess,
    pub kernels: Vec<KernelCombo>,
    pub pq_normalize: bool,
    pub num_trees: usize,
    pub index_seed: u64,
    pub budget: Budget,
    pub svm: SvmConfig,
}

impl BosweConfig {
    pub fn new(vocab: VocabParams, kernels: Vec<KernelCombo>) -> Self {
        BosweConfig {
            vocab,
            preprocess: Preprocess {
                lowercase: false,
                stopwords: true,
                stem: false,
            },
            kernels,
            pq_normalize: true,
            num_trees: DEFAULT_TREES,
            index_seed: vocab.seed,
            budget: Budget::default(),
            svm: SvmConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BowConfig {
    pub preprocess: Preprocess,
    pub weighting: Weighting,
    pub norm: Norm,
}

/// Documents with preprocessing applied, keeping ids and labels.
pub fn preprocess_docs(corpus: &Corpus, idx: &[usize], pre: &Preprocess, stoplist: &HashSet<String>) -> Vec<Document> {
    idx.par_iter()
        .map(|&i| {
            let d = &corpus.documents[i];
            Document {
                tokens: pre.apply(&d.tokens, stoplist),
                ..d.clone()
            }
        })
        .collect()
}

/// Unnormalized BOSWE histograms, computed one document at a time so only
/// one document's word vectors are held per worker.
pub fn featurize_boswe(
    docs: &[Document],
    table: &EmbeddingTable,
    case: CasePolicy,
    vocab: &VocabularySet,
    indexes: &IndexSet,
    budget: Budget,
) -> Result<Vec<Histogram>> {
    docs.par_iter()
        .map(|d| {
            let vectors = table.embed_document(&d.tokens, case);
            boswe_histogram(&d.id, &vectors, vocab, indexes, Norm::None, budget)
        })
        .collect()
}

/// Training Gram matrix and test-by-train cross matrix for one combination.
pub fn kernel_matrices(
    train: &[Histogram],
    test: &[Histogram],
    combo: &KernelCombo,
    pq_normalize: bool,
) -> Result<(GramMatrix, Option<GramMatrix>)> {
    let mut acc: Option<(GramMatrix, Option<GramMatrix>)> = None;
    for &kind in &combo.0 {
        let norm = kind.required_norm();
        let tr: Vec<Histogram> = train.iter().map(|h| h.normalized(norm)).collect::<Result<_>>()?;
        let g = gram(&tr, kind, pq_normalize)?;
        let c = if test.is_empty() {
            None
        } else {
            let te: Vec<Histogram> = test.iter().map(|h| h.normalized(norm)).collect::<Result<_>>()?;
            Some(cross_gram(&te, &tr, kind, pq_normalize)?)
        };
        acc = Some(match acc {
            None => (g, c),
            Some((ag, ac)) => {
                let sc = match (ac, c) {
                    (Some(a), Some(b)) => Some(sum_kernels(&a, &b)?),
                    _ => None,
                };
                (sum_kernels(&ag, &g)?, sc)
            }
        });
    }
    acc.ok_or_else(|| Error::invalid("empty kernel combination"))
}

const KERNEL_MODEL_MAGIC: &[u8; 8] = b"BOSWEKMD";

/// Trained kernel classifier over a fixed training set.
#[derive(Debug, Clone, PartialEq)]
pub enum KernelModel {
    /// Two single-label classes: a non-negative score means `positive`.
    Binary {
        model: SvmModel,
        positive: usize,
        negative: usize,
    },
    /// One model per category. With `single_label`, the top-scoring category
    /// is predicted; otherwise every category with a non-negative score.
    OneVsRest { models: MultiModel, single_label: bool },
}

impl KernelModel {
    pub fn predict_row(&self, k_row: &[f64]) -> Result<Vec<usize>> {
        match self {
            KernelModel::Binary {
                model,
                positive,
                negative,
            } => Ok(vec![if model.decision(k_row)? >= 0.0 { *positive } else { *negative }]),
            KernelModel::OneVsRest { models, single_label } => {
                if *single_label {
                    let scores = models.scores(k_row)?;
                    let best = (0..scores.len()).fold(0, |b, i| if scores[i] > scores[b] { i } else { b });
                    Ok(vec![best])
                } else {
                    models.predict(k_row)
                }
            }
        }
    }

    pub fn predict(&self, k: &Matrix) -> Result<Vec<Vec<usize>>> {
        k.iter_rows().map(|r| self.predict_row(r)).collect()
    }

    pub fn c(&self) -> f64 {
        match self {
            KernelModel::Binary { model, .. } => model.c,
            KernelModel::OneVsRest { models, .. } => models.models.first().map_or(0.0, |(_, m)| m.c),
        }
    }

    pub fn write<W: Write>(&self, w: &mut W, provenance: &Provenance) -> Result<()> {
        artifact::write_header(w, KERNEL_MODEL_MAGIC, 1, provenance)?;
        match self {
            KernelModel::Binary {
                model,
                positive,
                negative,
            } => {
                w.write_u8(0)?;
                w.write_u32::<LittleEndian>(*positive as u32)?;
                w.write_u32::<LittleEndian>(*negative as u32)?;
                model.write(w, provenance)
            }
            KernelModel::OneVsRest { models, single_label } => {
                w.write_u8(1)?;
                w.write_u8(u8::from(*single_label))?;
                models.write(w, provenance)
            }
        }
    }

    pub fn read<R: Read>(r: &mut R) -> Result<(Self, Provenance)> {
        let provenance = artifact::read_header(r, KERNEL_MODEL_MAGIC, 1)?;
        let model = match r.read_u8().map_err(artifact::truncated("model kind"))? {
            0 => {
                let positive = r.read_u32::<LittleEndian>().map_err(artifact::truncated("positive class"))? as usize;
                let negative = r.read_u32::<LittleEndian>().map_err(artifact::truncated("negative class"))? as usize;
                let (model, inner) = SvmModel::read(r)?;
                provenance.ensure_eq(&inner)?;
                KernelModel::Binary {
                    model,
                    positive,
                    negative,
                }
            }
            1 => {
                let single_label = r.read_u8().map_err(artifact::truncated("label mode"))? != 0;
                let (models, inner) = MultiModel::read(r)?;
                provenance.ensure_eq(&inner)?;
                KernelModel::OneVsRest { models, single_label }
            }
            t => {
                return Err(Error::Format {
                    offset: 44,
                    msg: format!("unknown model kind {t}"),
                })
            }
        };
        Ok((model, provenance))
    }
}

fn fit_with(k: &Matrix, labels: &[Vec<usize>], categories: &[String], single_label: bool, params: &SvmParams) -> Result<KernelModel> {
    if single_label && categories.len() == 2 {
        let y: Vec<f64> = labels.iter().map(|l| if l.contains(&0) { 1.0 } else { -1.0 }).collect();
        let mut model = train_binary(k, &y, params)?;
        model.positive = categories[0].clone();
        model.negative = categories[1].clone();
        Ok(KernelModel::Binary {
            model,
            positive: 0,
            negative: 1,
        })
    } else {
        Ok(KernelModel::OneVsRest {
            models: train_one_vs_rest(k, labels, categories, params)?,
            single_label,
        })
    }
}

fn score(predicted: &[Vec<usize>], gold: &[Vec<usize>], n_cat: usize, single_label: bool) -> Result<f64> {
    if single_label {
        Ok(exact_match_accuracy(predicted, gold))
    } else {
        Ok(micro_macro_f1(&confusions(predicted, gold, n_cat)?)?.0)
    }
}

/// Train on a precomputed Gram matrix, choosing C from `svm.c_grid` by inner
/// cross-validation when the grid has several values. Accuracy drives the
/// choice for single-label data and micro-F1 otherwise; ties keep the
/// earlier grid value.
pub fn fit_kernel_model(
    k: &Matrix,
    labels: &[Vec<usize>],
    categories: &[String],
    single_label: bool,
    svm: &SvmConfig,
) -> Result<KernelModel> {
    let mut params = svm.params;
    if svm.c_grid.len() > 1 {
        let strata: Vec<usize> = labels.iter().map(|l| l.first().copied().unwrap_or(categories.len())).collect();
        let plan = FoldPlan::stratified(&strata, svm.inner_folds, svm.seed)?;
        let mut best = (f64::NEG_INFINITY, svm.c_grid[0]);
        for &c in &svm.c_grid {
            let p = SvmParams { c, ..svm.params };
            let mut total = 0.0;
            for f in 0..plan.k() {
                let tr = plan.train_indices(f);
                let te = &plan.folds[f];
                let sub_labels: Vec<Vec<usize>> = tr.iter().map(|&i| labels[i].clone()).collect();
                let model = fit_with(&k.select(&tr, &tr), &sub_labels, categories, single_label, &p)?;
                let pred = model.predict(&k.select(te, &tr))?;
                let gold: Vec<Vec<usize>> = te.iter().map(|&i| labels[i].clone()).collect();
                total += score(&pred, &gold, categories.len(), single_label)?;
            }
            let mean = total / plan.k() as f64;
            if mean > best.0 {
                best = (mean, c);
            }
        }
        info!("selected C = {} (inner score {:.4})", best.1, best.0);
        params.c = best.1;
    } else if let Some(&c) = svm.c_grid.first() {
        params.c = c;
    }
    fit_with(k, labels, categories, single_label, &params)
}

pub fn label_sets(corpus: &Corpus, idx: &[usize]) -> Vec<Vec<usize>> {
    idx.iter()
        .map(|&i| corpus.documents[i].labels.iter().filter_map(|l| corpus.category_index(l)).collect())
        .collect()
}

/// BOSWE classifier; each kernel combination is one variant.
pub struct BosweClassifier<'a> {
    pub table: &'a EmbeddingTable,
    pub config: BosweConfig,
    stoplist: HashSet<String>,
}

impl<'a> BosweClassifier<'a> {
    pub fn new(table: &'a EmbeddingTable, config: BosweConfig) -> Self {
        BosweClassifier {
            table,
            config,
            stoplist: english_stopwords(),
        }
    }
}

impl TextClassifier for BosweClassifier<'_> {
    fn variants(&self) -> Vec<String> {
        self.config.kernels.iter().map(ToString::to_string).collect()
    }

    fn fit_predict(&self, corpus: &Corpus, train: &[usize], test: &[usize]) -> Result<FoldOutput> {
        let cfg = &self.config;
        let train_docs = preprocess_docs(corpus, train, &cfg.preprocess, &self.stoplist);
        let test_docs = preprocess_docs(corpus, test, &cfg.preprocess, &self.stoplist);
        let refs: Vec<&Document> = train_docs.iter().collect();
        let vocab = build_vocabularies(&refs, &corpus.categories, self.table, &cfg.vocab)?;
        let indexes = vocab.build_indexes(cfg.num_trees, cfg.index_seed);
        let h_train = featurize_boswe(&train_docs, self.table, cfg.vocab.case, &vocab, &indexes, cfg.budget)?;
        let h_test = featurize_boswe(&test_docs, self.table, cfg.vocab.case, &vocab, &indexes, cfg.budget)?;
        let labels = label_sets(corpus, train);
        let single = corpus.is_single_label();

        let mut predictions = Vec::with_capacity(cfg.kernels.len());
        for combo in &cfg.kernels {
            let (k_train, k_test) = kernel_matrices(&h_train, &h_test, combo, cfg.pq_normalize)?;
            let model = fit_kernel_model(&k_train.matrix, &labels, &corpus.categories, single, &cfg.svm)?;
            predictions.push(match k_test {
                Some(k) => model.predict(&k.matrix)?,
                None => Vec::new(),
            });
        }
        Ok(FoldOutput {
            predictions,
            seen_ids: train_docs.into_iter().map(|d| d.id).collect(),
        })
    }
}

/// Sparse bag-of-words vector, sorted by term index.
type Sparse = Vec<(u32, f64)>;

fn sparse(h: &Histogram) -> Sparse {
    h.values
        .iter()
        .enumerate()
        .filter(|(_, v)| **v != 0.0)
        .map(|(i, &v)| (i as u32, v))
        .collect()
}

fn sparse_dot(a: &Sparse, b: &Sparse) -> f64 {
    let (mut i, mut j, mut s) = (0, 0, 0.0);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                s += a[i].1 * b[j].1;
                i += 1;
                j += 1;
            }
        }
    }
    s
}

fn sparse_linear(rows: &[Sparse], cols: &[Sparse], symmetric: bool) -> Matrix {
    let n = cols.len();
    let data: Vec<f64> = rows
        .par_iter()
        .enumerate()
        .flat_map_iter(|(i, a)| (0..n).map(move |j| if symmetric && j < i { f64::NAN } else { sparse_dot(a, &cols[j]) }))
        .collect();
    let mut m = Matrix::from_vec(rows.len(), n, data).expect("shape");
    if symmetric {
        for i in 0..n {
            for j in 0..i {
                m.set(i, j, m.get(j, i));
            }
        }
    }
    m
}

/// Bag-of-words baseline with a linear kernel.
pub struct BowClassifier {
    pub config: BowConfig,
    pub svm: SvmConfig,
    stoplist: HashSet<String>,
}

impl BowClassifier {
    pub fn new(config: BowConfig, svm: SvmConfig) -> Self {
        BowClassifier {
            config,
            svm,
            stoplist: english_stopwords(),
        }
    }

    fn features(&self, docs: &[Document], vocab: &TermVocab) -> Vec<Sparse> {
        docs.par_iter()
            .map(|d| sparse(&bow_features(&d.id, &d.tokens, vocab, self.config.weighting, self.config.norm)))
            .collect()
    }
}

impl TextClassifier for BowClassifier {
    fn variants(&self) -> Vec<String> {
        vec!["bow".into()]
    }

    fn fit_predict(&self, corpus: &Corpus, train: &[usize], test: &[usize]) -> Result<FoldOutput> {
        let train_docs = preprocess_docs(corpus, train, &self.config.preprocess, &self.stoplist);
        let test_docs = preprocess_docs(corpus, test, &self.config.preprocess, &self.stoplist);
        let refs: Vec<&Document> = train_docs.iter().collect();
        let vocab = TermVocab::build(&refs);
        let f_train = self.features(&train_docs, &vocab);
        let f_test = self.features(&test_docs, &vocab);
        let k_train = sparse_linear(&f_train, &f_train, true);
        let k_test = sparse_linear(&f_test, &f_train, false);
        let labels = label_sets(corpus, train);
        let model = fit_kernel_model(&k_train, &labels, &corpus.categories, corpus.is_single_label(), &self.svm)?;
        Ok(FoldOutput {
            predictions: vec![model.predict(&k_test)?],
            seen_ids: train_docs.into_iter().map(|d| d.id).collect(),
        })
    }
}
