//! Subcommand implementations. Each stage reads its inputs from the output
//! directory, checks that they were produced under the same configuration,
//! and writes its own artifact there.

use std::collections::HashSet;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use boswe::artifact::Provenance;
use boswe::corpus::{
    english_stopwords, load_generic, load_movie_review, load_reuters_modapte, Corpus, Document, Split, TokenizeOptions,
};
use boswe::embeddings::{load_embeddings, EmbeddingTable};
use boswe::eval::{kfold_cv, EvalReport};
use boswe::features::{FeatureMatrix, Histogram, Weighting};
use boswe::kernels::GramMatrix;
use boswe::pipeline::{
    featurize_boswe, fit_kernel_model, kernel_matrices, label_sets, preprocess_docs, BosweClassifier, KernelCombo,
    KernelModel,
};
use boswe::quantizer::{build_vocabularies, VocabMode, VocabularySet};
use boswe::reproduce::{cv_table, merge_splits, testset_table, GridRow, ResultTable, POLARITY_ROWS, TOPIC_ROWS};
use boswe::synthetic::{generate, write_generic, SyntheticSpec};
use log::info;

use crate::config::{Loader, Protocol, Resolved};
use crate::error::CliError;

type Result<T> = std::result::Result<T, CliError>;

/// Documents in training-then-test order with the index ranges of each part.
pub struct Data {
    pub corpus: Corpus,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

pub fn load_data(r: &Resolved) -> Result<Data> {
    let options = TokenizeOptions {
        lowercase: r.config.corpus.lowercase,
        strip_punct: true,
    };
    let (corpus, train, test) = match r.config.corpus.loader {
        Loader::MovieReview => {
            let c = load_movie_review(&r.corpus, options)?;
            let all = (0..c.len()).collect();
            (c, all, Vec::new())
        }
        Loader::Reuters => {
            let (train, test) = load_reuters_modapte(&r.corpus, options)?;
            merge_splits(train, test)?
        }
        Loader::Generic => {
            let train = load_generic(&r.corpus, options, Split::Train)?;
            match &r.test_corpus {
                None => {
                    let all = (0..train.len()).collect();
                    (train, all, Vec::new())
                }
                Some(path) => {
                    let test = load_generic(path, options, Split::Test)?;
                    if let Some(extra) = test.categories.iter().find(|c| !train.categories.contains(c)) {
                        return Err(boswe::Error::InvalidInput(format!(
                            "{}: category {extra:?} does not occur in the training corpus",
                            path.display()
                        ))
                        .into());
                    }
                    let test = Corpus::new(test.documents, train.categories.clone())?;
                    merge_splits(train, test)?
                }
            }
        }
    };
    for w in &corpus.warnings {
        log::warn!("{w}");
    }
    info!("{} documents ({} train, {} test), {} categories", corpus.len(), train.len(), test.len(), corpus.categories.len());
    Ok(Data { corpus, train, test })
}

fn load_table(r: &Resolved) -> Result<EmbeddingTable> {
    let e = &r.config.embeddings;
    let table = load_embeddings(&r.embeddings, e.format, e.limit)?;
    info!("{} word vectors of dimension {}", table.len(), table.dim());
    Ok(table)
}

fn vocab_path(r: &Resolved) -> PathBuf {
    r.output_dir.join("vocab.bin")
}

fn features_path(r: &Resolved) -> PathBuf {
    r.output_dir.join("features.bin")
}

fn gram_path(r: &Resolved, combo: &KernelCombo, test: bool) -> PathBuf {
    let suffix = if test { ".test" } else { "" };
    r.output_dir.join(format!("gram-{combo}{suffix}.bin"))
}

fn model_path(r: &Resolved, combo: &KernelCombo) -> PathBuf {
    r.output_dir.join(format!("model-{combo}.bin"))
}

/// Write through a temporary file so an interrupted run leaves no partial artifact.
fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> boswe::Result<()>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| boswe::Error::Path {
            path: dir.to_path_buf(),
            source: e,
        })?;
    }
    let tmp = path.with_extension("partial");
    let io_err = |p: &Path| {
        let p = p.to_path_buf();
        move |source| CliError::Core(boswe::Error::Path { path: p, source })
    };
    let file = File::create(&tmp).map_err(io_err(&tmp))?;
    let mut w = BufWriter::new(file);
    f(&mut w)?;
    w.flush().map_err(io_err(&tmp))?;
    drop(w);
    fs::rename(&tmp, path).map_err(io_err(path))?;
    info!("wrote {}", path.display());
    Ok(())
}

fn read_artifact<T>(
    r: &Resolved,
    path: &Path,
    producer: &'static str,
    read: impl FnOnce(&mut BufReader<File>) -> boswe::Result<(T, Provenance)>,
) -> Result<T> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(CliError::MissingArtifact {
                path: path.to_path_buf(),
                producer,
            })
        }
        Err(source) => {
            return Err(boswe::Error::Path {
                path: path.to_path_buf(),
                source,
            }
            .into())
        }
    };
    let (value, provenance) = read(&mut BufReader::new(file))?;
    if provenance != r.hash {
        return Err(CliError::StaleArtifact {
            path: path.to_path_buf(),
            producer,
            expected: r.hash.short(),
            found: provenance.short(),
        });
    }
    Ok(value)
}

fn preprocessed(r: &Resolved, data: &Data, idx: &[usize]) -> Vec<Document> {
    let stoplist: HashSet<String> = if r.config.preprocess.stopwords { english_stopwords() } else { HashSet::new() };
    preprocess_docs(&data.corpus, idx, &r.config.preprocess, &stoplist)
}

pub fn build_vocab(r: &Resolved) -> Result<()> {
    let data = load_data(r)?;
    let table = load_table(r)?;
    let docs = preprocessed(r, &data, &data.train);
    let refs: Vec<&Document> = docs.iter().collect();
    let vocab = build_vocabularies(&refs, &data.corpus.categories, &table, &r.config.vocab_params())?;
    write_file(&vocab_path(r), |w| vocab.write(w, &r.hash))?;
    println!("vocabulary {} ({} words)", vocab.shape(), vocab.total_size());
    Ok(())
}

pub fn featurize(r: &Resolved) -> Result<()> {
    let vocab = read_artifact(r, &vocab_path(r), "build-vocab", VocabularySet::read)?;
    let data = load_data(r)?;
    let table = load_table(r)?;
    let order: Vec<usize> = data.train.iter().chain(&data.test).copied().collect();
    let docs = preprocessed(r, &data, &order);
    let indexes = vocab.build_indexes(r.config.vocab.trees, r.config.vocab.seed);
    let raw = featurize_boswe(&docs, &table, r.config.embeddings.case, &vocab, &indexes, r.config.budget())?;
    let histograms = raw
        .into_iter()
        .map(|h| h.normalized(r.config.stored_norm()))
        .collect::<boswe::Result<Vec<Histogram>>>()?;
    let features = FeatureMatrix {
        histograms,
        weighting: Weighting::Raw,
    };
    write_file(&features_path(r), |w| features.write(w, &r.hash))?;
    println!("features {} x {}", features.histograms.len(), features.dim());
    Ok(())
}

/// Split stored features into training and test rows, checking that they
/// line up with the corpus.
fn split_features(data: &Data, features: FeatureMatrix) -> Result<(Vec<Histogram>, Vec<Histogram>)> {
    let expected = data.train.iter().chain(&data.test).map(|&i| &data.corpus.documents[i].id);
    if features.histograms.len() != data.train.len() + data.test.len()
        || !features.histograms.iter().map(|h| &h.doc_id).eq(expected)
    {
        return Err(boswe::Error::InvalidInput("stored features do not match the corpus documents".into()).into());
    }
    let mut train = features.histograms;
    let test = train.split_off(data.train.len());
    Ok((train, test))
}

pub fn gram(r: &Resolved) -> Result<()> {
    let features = read_artifact(r, &features_path(r), "featurize", FeatureMatrix::read)?;
    let data = load_data(r)?;
    let (train, test) = split_features(&data, features)?;
    for combo in &r.combos {
        let (k, cross) = kernel_matrices(&train, &test, combo, r.config.kernels.pq_normalize)?;
        write_file(&gram_path(r, combo, false), |w| k.write(w, &r.hash))?;
        if let Some(c) = cross {
            write_file(&gram_path(r, combo, true), |w| c.write(w, &r.hash))?;
        }
        println!("gram {combo}: {} x {}", k.rows(), k.cols());
    }
    Ok(())
}

pub fn train(r: &Resolved) -> Result<()> {
    let data = load_data(r)?;
    let labels = label_sets(&data.corpus, &data.train);
    let svm = r.config.svm_config();
    for combo in &r.combos {
        let k = read_artifact(r, &gram_path(r, combo, false), "gram", GramMatrix::read)?;
        if k.rows() != data.train.len() {
            return Err(boswe::Error::DimensionMismatch {
                expected: data.train.len(),
                found: k.rows(),
            }
            .into());
        }
        let model = fit_kernel_model(&k.matrix, &labels, &data.corpus.categories, data.corpus.is_single_label(), &svm)?;
        write_file(&model_path(r, combo), |w| model.write(w, &r.hash))?;
        println!("model {combo}: C = {}", model.c());
    }
    Ok(())
}

fn report_header(r: &Resolved) -> String {
    let mut s = format!("# config {}\n", r.hash);
    for line in r.config.to_toml().lines() {
        s.push_str("#   ");
        s.push_str(line);
        s.push('\n');
    }
    s
}

pub fn evaluate(r: &Resolved) -> Result<()> {
    match r.config.eval.protocol {
        Protocol::Cv => evaluate_cv(r),
        Protocol::TrainTest => evaluate_split(r),
    }
}

fn evaluate_cv(r: &Resolved) -> Result<()> {
    let data = load_data(r)?;
    let table = load_table(r)?;
    let clf = BosweClassifier::new(&table, r.config.boswe_config());
    let report = kfold_cv(&data.corpus, &clf, r.config.eval.folds, r.config.eval.seed)?;
    let mut text = report_header(r);
    text.push_str(&format!("{}-fold cross-validation, {} documents\n", report.plan.k(), data.corpus.len()));
    for (v, name) in report.variants.iter().enumerate() {
        text.push_str(&format!("{name}\taccuracy {:.4}\n", report.mean_accuracy(v)));
    }
    write_file(&r.output_dir.join("report.txt"), |w| Ok(w.write_all(text.as_bytes())?))?;
    write_file(&r.output_dir.join("cv.tsv"), |w| report.write_tsv(w))?;
    print!("{}", text.lines().filter(|l| !l.starts_with('#')).map(|l| format!("{l}\n")).collect::<String>());
    Ok(())
}

fn evaluate_split(r: &Resolved) -> Result<()> {
    let data = load_data(r)?;
    let gold = label_sets(&data.corpus, &data.test);
    let mut text = report_header(r);
    let mut summary = String::new();
    for combo in &r.combos {
        let model = read_artifact(r, &model_path(r, combo), "train", KernelModel::read)?;
        let k = read_artifact(r, &gram_path(r, combo, true), "gram", GramMatrix::read)?;
        if k.rows() != data.test.len() {
            return Err(boswe::Error::DimensionMismatch {
                expected: data.test.len(),
                found: k.rows(),
            }
            .into());
        }
        let predicted = model.predict(&k.matrix)?;
        let report = EvalReport::from_predictions(&data.corpus.categories, &predicted, &gold)?;
        write_file(&r.output_dir.join(format!("report-{combo}.tsv")), |w| report.write_tsv(w))?;
        let mut body = Vec::new();
        report.write_text(&mut body)?;
        text.push_str(&format!("== {combo}\n{}", String::from_utf8_lossy(&body)));
        summary.push_str(&format!(
            "{combo}\tmicroF1 {:.4}\tmacroF1 {:.4}\taccuracy {:.4}\n",
            report.micro_f1, report.macro_f1, report.accuracy
        ));
    }
    write_file(&r.output_dir.join("report.txt"), |w| Ok(w.write_all(text.as_bytes())?))?;
    print!("{summary}");
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum TableKind {
    /// Cross-validated accuracy for each vocabulary layout and kernel.
    Table1,
    /// Test-set micro and macro F1 for each vocabulary layout and kernel.
    Table4,
}

/// Parse `single:5000` or `per_class:200`.
pub fn parse_row(s: &str) -> std::result::Result<GridRow, String> {
    let (mode, k) = s.split_once(':').ok_or_else(|| format!("expected MODE:K, got {s:?}"))?;
    let mode = match mode {
        "single" => VocabMode::Single,
        "per_class" => VocabMode::PerClass,
        m => return Err(format!("unknown vocabulary mode {m:?} (single, per_class)")),
    };
    let k = k.parse().map_err(|_| format!("bad vocabulary size {k:?}"))?;
    if k == 0 {
        return Err("vocabulary size must be positive".into());
    }
    Ok(GridRow { mode, k })
}

pub fn reproduce(r: &Resolved, kind: TableKind, rows: &[GridRow]) -> Result<()> {
    let data = load_data(r)?;
    let table = load_table(r)?;
    let base = r.config.boswe_config();
    let (result, name): (ResultTable, &str) = match kind {
        TableKind::Table1 => {
            let rows = if rows.is_empty() { &POLARITY_ROWS[..] } else { rows };
            let t = cv_table(&data.corpus, &table, &base, rows, r.config.eval.folds, r.config.eval.seed)?;
            (t, "table1")
        }
        TableKind::Table4 => {
            if data.test.is_empty() {
                return Err(CliError::Validation(vec![
                    "reproduce table4: the corpus has no test split (use the reuters loader or corpus.test_path)".into(),
                ]));
            }
            let rows = if rows.is_empty() { &TOPIC_ROWS[..] } else { rows };
            (testset_table(&data.corpus, &data.train, &data.test, &table, &base, rows)?, "table4")
        }
    };
    let mut text = Vec::new();
    result.write_text(&mut text)?;
    let header = report_header(r);
    write_file(&r.output_dir.join(format!("{name}.txt")), |w| {
        w.write_all(header.as_bytes())?;
        Ok(w.write_all(&text)?)
    })?;
    write_file(&r.output_dir.join(format!("{name}.tsv")), |w| result.write_tsv(w))?;
    print!("{}", String::from_utf8_lossy(&text));
    Ok(())
}

pub fn check_config(r: &Resolved) {
    println!("# config {}", r.hash);
    println!("# embeddings: {}", r.embeddings.display());
    println!("# corpus: {}", r.corpus.display());
    if let Some(t) = &r.test_corpus {
        println!("# test corpus: {}", t.display());
    }
    println!("# output: {}", r.output_dir.display());
    print!("{}", r.config.to_toml());
}

const SYNTHETIC_CONFIG: &str = r#"output_dir = "out"

[embeddings]
path = "embeddings.bin"
format = "binary"

[corpus]
loader = "generic"
path = "corpus.tsv"
lowercase = false

[preprocess]
lowercase = false
stopwords = false
stem = false

[vocab]
mode = "per_class"
k = 16

[kernels]
combos = ["hellinger"]

[eval]
protocol = "cv"
folds = 10
"#;

/// Write a separable two-class corpus, its word vectors and a matching
/// configuration into `dir`.
pub fn synthetic(dir: &Path, spec: &SyntheticSpec) -> Result<()> {
    let (corpus, table) = generate(spec)?;
    write_file(&dir.join("corpus.tsv"), |w| write_generic(&corpus, w))?;
    write_file(&dir.join("embeddings.bin"), |w| table.write_binary(w))?;
    write_file(&dir.join("config.toml"), |w| Ok(w.write_all(SYNTHETIC_CONFIG.as_bytes())?))?;
    println!("{} documents, {} word vectors in {}", corpus.len(), table.len(), dir.display());
    Ok(())
}
