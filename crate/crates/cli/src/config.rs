//! Run configuration: a TOML file describing data locations and every
//! pipeline setting, with defaults filled in and checked as a whole.

use std::env;
use std::fs;
use std::path::{Path, PathBuf};

use boswe::artifact::Provenance;
use boswe::corpus::Preprocess;
use boswe::embeddings::{CasePolicy, EmbeddingFormat};
use boswe::features::Norm;
use boswe::pipeline::{BosweConfig, KernelCombo, SvmConfig};
use boswe::quantizer::{Budget, VocabMode, VocabParams, DEFAULT_MAX_CHECKS, DEFAULT_TREES};
use boswe::svm::SvmParams;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const DATA_ROOT_VAR: &str = "BOSWE_DATA_ROOT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Artifact directory; relative paths are taken from the config file's directory.
    pub output_dir: PathBuf,
    pub embeddings: EmbeddingsSection,
    pub corpus: CorpusSection,
    #[serde(default = "default_preprocess")]
    pub preprocess: Preprocess,
    pub vocab: VocabSection,
    #[serde(default)]
    pub features: FeatureSection,
    pub kernels: KernelSection,
    #[serde(default)]
    pub svm: SvmSection,
    #[serde(default)]
    pub eval: EvalSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingsSection {
    pub path: PathBuf,
    #[serde(default = "default_format")]
    pub format: EmbeddingFormat,
    /// Read only the first `limit` words.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limit: Option<usize>,
    #[serde(default)]
    pub case: CasePolicy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loader {
    MovieReview,
    Reuters,
    Generic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSection {
    pub loader: Loader,
    pub path: PathBuf,
    /// Held-out documents for a generic corpus.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_path: Option<PathBuf>,
    /// Lowercase while tokenizing.
    #[serde(default = "yes")]
    pub lowercase: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VocabSection {
    pub mode: VocabMode,
    pub k: usize,
    #[serde(default = "one")]
    pub seed: u64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_kmeans_tol")]
    pub tol: f64,
    #[serde(default)]
    pub unique_tokens: bool,
    #[serde(default = "default_trees")]
    pub trees: usize,
    /// Centroid distance evaluations per query; 0 searches exhaustively.
    #[serde(default = "default_checks")]
    pub max_checks: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormSetting {
    /// Each kernel receives its own required normalization.
    #[default]
    Auto,
    L1,
    L2,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureSection {
    #[serde(default)]
    pub norm: NormSetting,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSection {
    /// Kernel combinations such as `pq` or `hellinger+pq`.
    pub combos: Vec<String>,
    #[serde(default = "yes")]
    pub pq_normalize: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SvmSection {
    #[serde(default = "default_c")]
    pub c: f64,
    #[serde(default = "default_svm_tol")]
    pub tol: f64,
    #[serde(default = "default_passes")]
    pub max_passes: usize,
    #[serde(default)]
    pub balanced: bool,
    /// Several values select C by inner cross-validation.
    #[serde(default)]
    pub c_grid: Vec<f64>,
    #[serde(default = "default_inner_folds")]
    pub inner_folds: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for SvmSection {
    fn default() -> Self {
        SvmSection {
            c: default_c(),
            tol: default_svm_tol(),
            max_passes: default_passes(),
            balanced: false,
            c_grid: Vec::new(),
            inner_folds: default_inner_folds(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    #[default]
    #[serde(alias = "cv10")]
    Cv,
    TrainTest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    #[serde(default)]
    pub protocol: Protocol,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default = "one")]
    pub seed: u64,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            protocol: Protocol::Cv,
            folds: default_folds(),
            seed: 1,
        }
    }
}

fn default_preprocess() -> Preprocess {
    Preprocess {
        lowercase: false,
        stopwords: true,
        stem: false,
    }
}

fn default_format() -> EmbeddingFormat {
    EmbeddingFormat::Binary
}

fn yes() -> bool {
    true
}

fn one() -> u64 {
    1
}

fn default_max_iter() -> usize {
    100
}

fn default_kmeans_tol() -> f64 {
    1e-4
}

fn default_trees() -> usize {
    DEFAULT_TREES
}

fn default_checks() -> usize {
    DEFAULT_MAX_CHECKS
}

fn default_c() -> f64 {
    SvmParams::default().c
}

fn default_svm_tol() -> f64 {
    SvmParams::default().tol
}

fn default_passes() -> usize {
    SvmParams::default().max_passes
}

fn default_inner_folds() -> usize {
    3
}

fn default_folds() -> usize {
    10
}

/// A validated configuration with its data paths resolved.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub config: RunConfig,
    pub combos: Vec<KernelCombo>,
    pub embeddings: PathBuf,
    pub corpus: PathBuf,
    pub test_corpus: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub hash: Provenance,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Validation(vec![e.to_string().trim().to_string()]))
    }

    /// Every violated constraint, in field order.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        let mut need = |ok: bool, msg: String| {
            if !ok {
                v.push(msg);
            }
        };
        need(!self.output_dir.as_os_str().is_empty(), "output_dir: must not be empty".into());
        need(!self.embeddings.path.as_os_str().is_empty(), "embeddings.path: must not be empty".into());
        need(self.embeddings.limit != Some(0), "embeddings.limit: must be positive".into());
        need(!self.corpus.path.as_os_str().is_empty(), "corpus.path: must not be empty".into());
        if self.corpus.test_path.is_some() {
            need(self.corpus.loader == Loader::Generic, "corpus.test_path: only used by the generic loader".into());
        }
        need(self.vocab.k >= 1, "vocab.k: must be at least 1".into());
        need(self.vocab.max_iter >= 1, "vocab.max_iter: must be at least 1".into());
        need(self.vocab.tol >= 0.0 && self.vocab.tol.is_finite(), "vocab.tol: must be finite and >= 0".into());
        need(self.vocab.trees >= 1, "vocab.trees: must be at least 1".into());

        need(!self.kernels.combos.is_empty(), "kernels.combos: list at least one kernel".into());
        for (i, c) in self.kernels.combos.iter().enumerate() {
            match KernelCombo::parse(c) {
                Ok(combo) => {
                    let fixed = match self.features.norm {
                        NormSetting::Auto => None,
                        NormSetting::L1 => Some(Norm::L1),
                        NormSetting::L2 => Some(Norm::L2),
                    };
                    if let Some(norm) = fixed {
                        for kind in &combo.0 {
                            need(
                                kind.required_norm() == norm,
                                format!(
                                    "kernels.combos[{i}]: {} needs {} histograms but features.norm is {}",
                                    kind.name(),
                                    kind.required_norm().name(),
                                    norm.name()
                                ),
                            );
                        }
                    }
                }
                Err(_) => need(false, format!("kernels.combos[{i}]: unknown kernel in {c:?} (linear, hellinger, intersection, js, pq)")),
            }
        }

        need(self.svm.c > 0.0 && self.svm.c.is_finite(), "svm.c: must be positive".into());
        need(self.svm.tol > 0.0 && self.svm.tol.is_finite(), "svm.tol: must be positive".into());
        need(self.svm.max_passes >= 1, "svm.max_passes: must be at least 1".into());
        need(self.svm.c_grid.iter().all(|c| *c > 0.0 && c.is_finite()), "svm.c_grid: values must be positive".into());
        if self.svm.c_grid.len() > 1 {
            need(self.svm.inner_folds >= 2, "svm.inner_folds: must be at least 2".into());
        }

        match self.eval.protocol {
            Protocol::Cv => need(self.eval.folds >= 2, "eval.folds: must be at least 2".into()),
            Protocol::TrainTest => need(
                self.has_split(),
                "eval.protocol: train-test needs the reuters loader or a generic corpus with test_path".into(),
            ),
        }
        v
    }

    /// Whether the corpus comes with a designated training split.
    pub fn has_split(&self) -> bool {
        self.corpus.loader == Loader::Reuters || self.corpus.test_path.is_some()
    }

    /// Hash of the canonical serialization; the output directory is excluded
    /// so a configuration can be moved.
    pub fn hash(&self) -> Provenance {
        let mut canonical = self.clone();
        canonical.output_dir = PathBuf::new();
        let text = toml::to_string(&canonical).expect("configuration serializes");
        Provenance::of_bytes(text.as_bytes())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn combos(&self) -> Vec<KernelCombo> {
        self.kernels.combos.iter().filter_map(|c| KernelCombo::parse(c).ok()).collect()
    }

    pub fn vocab_params(&self) -> VocabParams {
        VocabParams {
            max_iter: self.vocab.max_iter,
            tol: self.vocab.tol,
            unique_tokens: self.vocab.unique_tokens,
            case: self.embeddings.case,
            ..VocabParams::new(self.vocab.mode, self.vocab.k, self.vocab.seed)
        }
    }

    pub fn budget(&self) -> Budget {
        if self.vocab.max_checks == 0 {
            Budget::Exhaustive
        } else {
            Budget::Checks(self.vocab.max_checks)
        }
    }

    pub fn svm_config(&self) -> SvmConfig {
        SvmConfig {
            params: SvmParams {
                c: self.svm.c,
                tol: self.svm.tol,
                max_passes: self.svm.max_passes,
                balanced: self.svm.balanced,
            },
            c_grid: self.svm.c_grid.clone(),
            inner_folds: self.svm.inner_folds,
            seed: self.svm.seed,
        }
    }

    pub fn boswe_config(&self) -> BosweConfig {
        let mut cfg = BosweConfig::new(self.vocab_params(), self.combos());
        cfg.preprocess = self.preprocess;
        cfg.pq_normalize = self.kernels.pq_normalize;
        cfg.num_trees = self.vocab.trees;
        cfg.budget = self.budget();
        cfg.svm = self.svm_config();
        cfg
    }

    /// Histogram normalization applied at featurization time.
    pub fn stored_norm(&self) -> Norm {
        match self.features.norm {
            NormSetting::Auto => Norm::None,
            NormSetting::L1 => Norm::L1,
            NormSetting::L2 => Norm::L2,
        }
    }
}

/// Relative data paths are taken from `BOSWE_DATA_ROOT` when it is set and
/// from the config file's directory otherwise.
fn resolve(path: &Path, data_root: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        data_root.join(path)
    }
}

pub fn load(path: &Path) -> Result<Resolved, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Validation(vec![format!("{}: {e}", path.display())]))?;
    let config = RunConfig::parse(&text)?;
    let violations = config.violations();
    if !violations.is_empty() {
        return Err(CliError::Validation(violations));
    }
    let config_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let data_root = env::var_os(DATA_ROOT_VAR)
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
        .unwrap_or_else(|| config_dir.clone());
    Ok(Resolved {
        combos: config.combos(),
        embeddings: resolve(&config.embeddings.path, &data_root),
        corpus: resolve(&config.corpus.path, &data_root),
        test_corpus: config.corpus.test_path.as_deref().map(|p| resolve(p, &data_root)),
        output_dir: resolve(&config.output_dir, &config_dir),
        hash: config.hash(),
        config,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
output_dir = "out"
[embeddings]
path = "vectors.bin"
[corpus]
loader = "movie_review"
path = "review_polarity"
[vocab]
mode = "per_class"
k = 7500
[kernels]
combos = ["hellinger+pq"]
"#;

    #[test]
    fn defaults_are_filled_in() {
        let c = RunConfig::parse(MINIMAL).unwrap();
        assert!(c.violations().is_empty());
        assert_eq!(c.vocab.trees, 8);
        assert_eq!(c.vocab.max_checks, 512);
        assert_eq!(c.eval.protocol, Protocol::Cv);
        assert_eq!(c.eval.folds, 10);
        assert!(c.preprocess.stopwords && !c.preprocess.stem);
        assert!(c.kernels.pq_normalize);
        assert_eq!(c.stored_norm(), Norm::None);
        let echoed = RunConfig::parse(&c.to_toml()).unwrap();
        assert_eq!(echoed, c);
        assert_eq!(echoed.hash(), c.hash());
    }

    #[test]
    fn every_violation_is_listed() {
        let text = MINIMAL
            .replace("k = 7500", "k = 0")
            .replace(r#"combos = ["hellinger+pq"]"#, "combos = [\"chi2\", \"hellinger+pq\"]\n[features]\nnorm = \"l2\"\n[svm]\nc = -1.0\n[eval]\nprotocol = \"train-test\"");
        let c = RunConfig::parse(&text).unwrap();
        let v = c.violations();
        assert_eq!(v.len(), 5, "{v:#?}");
        assert!(v[0].starts_with("vocab.k"));
        assert!(v[1].contains("chi2"));
        assert!(v[2].contains("hellinger needs L1"));
        assert!(v[3].starts_with("svm.c"));
        assert!(v[4].starts_with("eval.protocol"));
    }

    #[test]
    fn unknown_fields_and_values_are_rejected() {
        assert!(RunConfig::parse(&MINIMAL.replace("k = 7500", "k = 7500\nkk = 1")).is_err());
        assert!(RunConfig::parse(&MINIMAL.replace("per_class", "per_word")).is_err());
    }

    #[test]
    fn hash_ignores_output_dir_only() {
        let a = RunConfig::parse(MINIMAL).unwrap();
        let mut b = a.clone();
        b.output_dir = PathBuf::from("elsewhere");
        assert_eq!(a.hash(), b.hash());
        b.svm.c = 2.0;
        assert_ne!(a.hash(), b.hash());
    }
}
