//! Confusion counts, F1 aggregation and cross-validation.

use std::collections::HashSet;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::corpus::Corpus;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl Confusion {
    pub fn new(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        Confusion { tp, fp, fn_, tn }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.tp + self.tn, self.total())
    }

    pub fn record(&mut self, predicted: bool, gold: bool) {
        match (predicted, gold) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }

    fn add(self, o: Confusion) -> Confusion {
        Confusion::new(self.tp + o.tp, self.fp + o.fp, self.fn_ + o.fn_, self.tn + o.tn)
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Precision, recall and F1; every vanishing denominator yields 0.
pub fn precision_recall_f1(c: &Confusion) -> (f64, f64, f64) {
    let p = ratio(c.tp, c.tp + c.fp);
    let r = ratio(c.tp, c.tp + c.fn_);
    let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f1)
}

/// `(microF1, macroF1)`: F1 of the summed confusion and mean per-category F1.
pub fn micro_macro_f1(confusions: &[Confusion]) -> Result<(f64, f64)> {
    if confusions.is_empty() {
        return Err(Error::invalid("micro/macro F1 of an empty category list"));
    }
    let total = confusions.iter().fold(Confusion::default(), |a, &c| a.add(c));
    let micro = precision_recall_f1(&total).2;
    let macro_ = confusions.iter().map(|c| precision_recall_f1(c).2).sum::<f64>() / confusions.len() as f64;
    Ok((micro, macro_))
}

/// Per-category confusions of predicted versus gold label sets.
pub fn confusions(predicted: &[Vec<usize>], gold: &[Vec<usize>], n_categories: usize) -> Result<Vec<Confusion>> {
    if predicted.len() != gold.len() {
        return Err(Error::DimensionMismatch {
            expected: gold.len(),
            found: predicted.len(),
        });
    }
    let mut out = vec![Confusion::default(); n_categories];
    for (p, g) in predicted.iter().zip(gold) {
        for (c, conf) in out.iter_mut().enumerate() {
            conf.record(p.contains(&c), g.contains(&c));
        }
    }
    Ok(out)
}

/// Fraction of documents whose predicted label set equals the gold set.
pub fn exact_match_accuracy(predicted: &[Vec<usize>], gold: &[Vec<usize>]) -> f64 {
    let hits = predicted
        .iter()
        .zip(gold)
        .filter(|(p, g)| {
            let mut p = (*p).clone();
            let mut g = (*g).clone();
            p.sort_unstable();
            g.sort_unstable();
            p == g
        })
        .count();
    ratio(hits as u64, gold.len() as u64)
}

/// Per-category and aggregate scores of one evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub categories: Vec<String>,
    pub confusions: Vec<Confusion>,
    pub micro_f1: f64,
    pub macro_f1: f64,
    pub accuracy: f64,
}

impl EvalReport {
    pub fn from_predictions(categories: &[String], predicted: &[Vec<usize>], gold: &[Vec<usize>]) -> Result<Self> {
        let confusions = confusions(predicted, gold, categories.len())?;
        let (micro_f1, macro_f1) = micro_macro_f1(&confusions)?;
        Ok(EvalReport {
            categories: categories.to_vec(),
            confusions,
            micro_f1,
            macro_f1,
            accuracy: exact_match_accuracy(predicted, gold),
        })
    }

    /// Tab-separated table: one row per category, then aggregate rows.
    pub fn write_tsv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "category\ttp\tfp\tfn\ttn\tprecision\trecall\tf1")?;
        for (name, c) in self.categories.iter().zip(&self.confusions) {
            let (p, r, f) = precision_recall_f1(c);
            writeln!(w, "{name}\t{}\t{}\t{}\t{}\t{p:.6}\t{r:.6}\t{f:.6}", c.tp, c.fp, c.fn_, c.tn)?;
        }
        writeln!(w, "#micro_f1\t{:.6}", self.micro_f1)?;
        writeln!(w, "#macro_f1\t{:.6}", self.macro_f1)?;
        writeln!(w, "#accuracy\t{:.6}", self.accuracy)?;
        Ok(())
    }

    pub fn write_text<W: Write>(&self, w: &mut W) -> Result<()> {
        let width = self.categories.iter().map(String::len).max().unwrap_or(8).max(8);
        writeln!(w, "{:<width$}  {:>6} {:>6} {:>6} {:>6}  {:>7} {:>7} {:>7}", "category", "TP", "FP", "FN", "TN", "P", "R", "F1")?;
        for (name, c) in self.categories.iter().zip(&self.confusions) {
            let (p, r, f) = precision_recall_f1(c);
            writeln!(
                w,
                "{name:<width$}  {:>6} {:>6} {:>6} {:>6}  {p:>7.4} {r:>7.4} {f:>7.4}",
                c.tp, c.fp, c.fn_, c.tn
            )?;
        }
        writeln!(w, "microF1  {:.2}%", 100.0 * self.micro_f1)?;
        writeln!(w, "macroF1  {:.2}%", 100.0 * self.macro_f1)?;
        writeln!(w, "accuracy {:.2}%", 100.0 * self.accuracy)?;
        Ok(())
    }
}

/// Stratified partition of document indices into folds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    pub folds: Vec<Vec<usize>>,
    pub seed: u64,
}

impl FoldPlan {
    /// Shuffle each stratum with `seed`, lay the strata end to end and deal
    /// the sequence round-robin, so fold sizes differ by at most one and every
    /// class is spread evenly.
    pub fn stratified(strata: &[usize], k: usize, seed: u64) -> Result<Self> {
        let n = strata.len();
        if k < 2 || k > n {
            return Err(Error::invalid(format!("cannot split {n} documents into {k} folds")));
        }
        let n_strata = strata.iter().max().map_or(0, |m| m + 1);
        let mut groups = vec![Vec::new(); n_strata];
        for (i, &s) in strata.iter().enumerate() {
            groups[s].push(i);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut folds = vec![Vec::new(); k];
        for (pos, i) in groups
            .into_iter()
            .flat_map(|mut g| {
                g.shuffle(&mut rng);
                g
            })
            .enumerate()
        {
            folds[pos % k].push(i);
        }
        folds.iter_mut().for_each(|f| f.sort_unstable());
        Ok(FoldPlan { folds, seed })
    }

    pub fn k(&self) -> usize {
        self.folds.len()
    }

    /// Every index outside fold `f`, ascending.
    pub fn train_indices(&self, f: usize) -> Vec<usize> {
        let mut v: Vec<usize> = self
            .folds
            .iter()
            .enumerate()
            .filter(|(g, _)| *g != f)
            .flat_map(|(_, fold)| fold.iter().copied())
            .collect();
        v.sort_unstable();
        v
    }
}

/// Output of one training/prediction round.
#[derive(Debug, Clone, Default)]
pub struct FoldOutput {
    /// Predicted label sets of the test documents, one list per variant.
    pub predictions: Vec<Vec<Vec<usize>>>,
    /// Ids of every document that fed any structure built during training.
    pub seen_ids: HashSet<String>,
}

/// A learner that can be trained on one index set of a corpus and applied
/// to another. One call may score several variants sharing the same
/// expensive stages.
pub trait TextClassifier: Sync {
    fn variants(&self) -> Vec<String>;

    fn fit_predict(&self, corpus: &Corpus, train: &[usize], test: &[usize]) -> Result<FoldOutput>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvReport {
    pub variants: Vec<String>,
    /// `fold_accuracy[v][f]`.
    pub fold_accuracy: Vec<Vec<f64>>,
    pub plan: FoldPlan,
}

impl CvReport {
    pub fn mean_accuracy(&self, v: usize) -> f64 {
        let a = &self.fold_accuracy[v];
        a.iter().sum::<f64>() / a.len() as f64
    }

    pub fn write_tsv<W: Write>(&self, w: &mut W) -> Result<()> {
        write!(w, "variant\tmean")?;
        for f in 0..self.plan.k() {
            write!(w, "\tfold{f}")?;
        }
        writeln!(w)?;
        for (v, name) in self.variants.iter().enumerate() {
            write!(w, "{name}\t{:.6}", self.mean_accuracy(v))?;
            for a in &self.fold_accuracy[v] {
                write!(w, "\t{a:.6}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

fn gold_sets(corpus: &Corpus) -> Vec<Vec<usize>> {
    corpus
        .documents
        .iter()
        .map(|d| d.labels.iter().filter_map(|l| corpus.category_index(l)).collect())
        .collect()
}

fn check_no_leakage(corpus: &Corpus, test: &[usize], seen: &HashSet<String>) -> Result<()> {
    for &i in test {
        let id = &corpus.documents[i].id;
        if seen.contains(id) {
            return Err(Error::invalid(format!("test document {id} leaked into training")));
        }
    }
    Ok(())
}

/// Stratified k-fold cross-validation on a single-label corpus. Folds run in
/// parallel; each builds every model structure from its training folds only.
pub fn kfold_cv<C: TextClassifier + ?Sized>(corpus: &Corpus, classifier: &C, k: usize, seed: u64) -> Result<CvReport> {
    if !corpus.is_single_label() {
        return Err(Error::invalid("cross-validation needs a single-label corpus"));
    }
    let gold = gold_sets(corpus);
    let strata: Vec<usize> = gold.iter().map(|g| g[0]).collect();
    let plan = FoldPlan::stratified(&strata, k, seed)?;
    let variants = classifier.variants();

    let per_fold: Vec<Vec<f64>> = (0..plan.k())
        .into_par_iter()
        .map(|f| {
            let train = plan.train_indices(f);
            let test = &plan.folds[f];
            let first = strata[train[0]];
            if train.iter().all(|&i| strata[i] == first) {
                return Err(Error::invalid(format!("fold {f} has a single class in training")));
            }
            let out = classifier.fit_predict(corpus, &train, test)?;
            check_no_leakage(corpus, test, &out.seen_ids)?;
            if out.predictions.len() != variants.len() {
                return Err(Error::invalid("classifier returned the wrong number of variants"));
            }
            let test_gold: Vec<Vec<usize>> = test.iter().map(|&i| gold[i].clone()).collect();
            Ok(out.predictions.iter().map(|p| exact_match_accuracy(p, &test_gold)).collect())
        })
        .collect::<Result<_>>()?;

    let fold_accuracy = (0..variants.len()).map(|v| per_fold.iter().map(|f| f[v]).collect()).collect();
    Ok(CvReport {
        variants,
        fold_accuracy,
        plan,
    })
}

/// Train on the documents marked as training and score the test documents.
pub fn evaluate_testset<C: TextClassifier + ?Sized>(
    corpus: &Corpus,
    classifier: &C,
    train: &[usize],
    test: &[usize],
) -> Result<Vec<EvalReport>> {
    let gold = gold_sets(corpus);
    let out = classifier.fit_predict(corpus, train, test)?;
    check_no_leakage(corpus, test, &out.seen_ids)?;
    let test_gold: Vec<Vec<usize>> = test.iter().map(|&i| gold[i].clone()).collect();
    out.predictions
        .iter()
        .map(|p| EvalReport::from_predictions(&corpus.categories, p, &test_gold))
        .collect()
}
