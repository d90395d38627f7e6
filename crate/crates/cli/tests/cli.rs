use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn boswe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_boswe"))
        .args(args)
        .env("RUST_LOG", "warn")
        .env_remove("BOSWE_DATA_ROOT")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(o: Output) -> String {
    assert!(o.status.success(), "exit {:?}\nstdout: {}\nstderr: {}", o.status.code(), stdout(&o), stderr(&o));
    stdout(&o)
}

fn synthetic(dir: &Path, docs_per_class: usize) {
    ok(boswe(&["synthetic", dir.to_str().unwrap(), "--docs-per-class", &docs_per_class.to_string()]));
}

/// Split the synthetic corpus into training and test files, every fifth
/// line held out, and point a train-test configuration at them.
fn split_config(dir: &Path, extra: &str) -> String {
    let text = fs::read_to_string(dir.join("corpus.tsv")).unwrap();
    let (mut train, mut test) = (String::new(), String::new());
    for (i, line) in text.lines().enumerate() {
        let target = if i % 5 == 0 { &mut test } else { &mut train };
        target.push_str(line);
        target.push('\n');
    }
    fs::write(dir.join("train.tsv"), train).unwrap();
    fs::write(dir.join("test.tsv"), test).unwrap();
    let config = fs::read_to_string(dir.join("config.toml"))
        .unwrap()
        .replace("path = \"corpus.tsv\"", "path = \"train.tsv\"\ntest_path = \"test.tsv\"")
        .replace("protocol = \"cv\"", "protocol = \"train-test\"")
        .replace("combos = [\"hellinger\"]", "combos = [\"hellinger\", \"linear+pq\"]");
    let path = dir.join("split.toml");
    fs::write(&path, format!("{config}{extra}")).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn evaluate_synthetic_fixture_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    synthetic(dir.path(), 40);
    let config = dir.path().join("config.toml");
    let out = ok(boswe(&["evaluate", "-c", config.to_str().unwrap()]));
    assert!(out.contains("hellinger\taccuracy 1.0000"), "{out}");
    let report = fs::read_to_string(dir.path().join("out/report.txt")).unwrap();
    assert!(report.starts_with("# config "));
    assert!(report.contains("max_checks = 512"), "defaults are echoed");
    let cv = fs::read_to_string(dir.path().join("out/cv.tsv")).unwrap();
    let row: Vec<&str> = cv.lines().nth(1).unwrap().split('\t').collect();
    assert_eq!(row.len(), 2 + 10, "{cv}");
    assert!(row[2..].iter().all(|a| *a == "1.000000"));
}

#[test]
fn staged_train_test_run_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    synthetic(dir.path(), 40);
    let config = split_config(dir.path(), "");
    for stage in ["build-vocab", "featurize", "gram", "train"] {
        ok(boswe(&[stage, "-c", &config]));
    }
    let out = ok(boswe(&["evaluate", "-c", &config]));
    for combo in ["hellinger", "linear+pq"] {
        assert!(out.contains(&format!("{combo}\tmicroF1 1.0000\tmacroF1 1.0000\taccuracy 1.0000")), "{out}");
    }
    let out_dir = dir.path().join("out");
    assert!(out_dir.join("report-linear+pq.tsv").exists());

    let second = dir.path().join("split2.toml");
    fs::write(&second, fs::read_to_string(&config).unwrap().replace("output_dir = \"out\"", "output_dir = \"out2\"")).unwrap();
    let second = second.to_str().unwrap();
    for stage in ["build-vocab", "featurize", "gram"] {
        ok(boswe(&[stage, "-c", second]));
    }
    for file in ["vocab.bin", "features.bin", "gram-hellinger.bin", "gram-linear+pq.test.bin"] {
        let a = fs::read(out_dir.join(file)).unwrap();
        let b = fs::read(dir.path().join("out2").join(file)).unwrap();
        assert!(a == b, "{file} differs between identical runs");
    }
}

#[test]
fn missing_upstream_artifact_names_its_producer() {
    let dir = tempfile::tempdir().unwrap();
    synthetic(dir.path(), 10);
    let config = split_config(dir.path(), "");
    let o = boswe(&["featurize", "-c", &config]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("boswe build-vocab"), "{}", stderr(&o));
    let o = boswe(&["evaluate", "-c", &config]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("boswe train"), "{}", stderr(&o));
}

#[test]
fn artifacts_from_another_configuration_are_refused() {
    let dir = tempfile::tempdir().unwrap();
    synthetic(dir.path(), 10);
    let config = split_config(dir.path(), "");
    for stage in ["build-vocab", "featurize", "gram"] {
        ok(boswe(&[stage, "-c", &config]));
    }
    let changed = split_config(dir.path(), "\n[svm]\nc = 7.0\n");
    let o = boswe(&["train", "-c", &changed]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("different configuration") && err.contains("boswe gram"), "{err}");
    assert!(!dir.path().join("out/model-hellinger.bin").exists());
}

#[test]
fn invalid_configuration_lists_every_violation() {
    let dir = tempfile::tempdir().unwrap();
    synthetic(dir.path(), 10);
    let text = fs::read_to_string(dir.path().join("config.toml"))
        .unwrap()
        .replace("k = 16", "k = 0")
        .replace("combos = [\"hellinger\"]", "combos = [\"hellinger\", \"cosine\"]")
        .replace("folds = 10", "folds = 1");
    let path = dir.path().join("bad.toml");
    fs::write(&path, text).unwrap();
    let o = boswe(&["check-config", "-c", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    for field in ["vocab.k", "kernels.combos[1]", "eval.folds"] {
        assert!(err.contains(field), "{field} not reported in {err}");
    }
    let o = boswe(&["check-config", "-c", dir.path().join("absent.toml").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(boswe(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(boswe(&["--help"]).status.code(), Some(0));
}

#[test]
fn missing_data_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    synthetic(dir.path(), 10);
    fs::remove_file(dir.path().join("embeddings.bin")).unwrap();
    let o = boswe(&["build-vocab", "-c", dir.path().join("config.toml").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("embeddings.bin"));
}

#[test]
fn data_root_resolves_relative_paths() {
    let data = tempfile::tempdir().unwrap();
    synthetic(data.path(), 10);
    let conf_dir = tempfile::tempdir().unwrap();
    let config = conf_dir.path().join("config.toml");
    fs::copy(data.path().join("config.toml"), &config).unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_boswe"))
        .args(["check-config", "-c", config.to_str().unwrap()])
        .env("BOSWE_DATA_ROOT", data.path())
        .output()
        .unwrap();
    let out = ok(o);
    assert!(out.contains(&format!("# corpus: {}", data.path().join("corpus.tsv").display())), "{out}");
    assert!(out.contains(&format!("# output: {}", conf_dir.path().join("out").display())), "{out}");
}

#[test]
fn reproduce_prints_a_grid() {
    let dir = tempfile::tempdir().unwrap();
    synthetic(dir.path(), 20);
    let config = dir.path().join("config.toml");
    fs::write(&config, fs::read_to_string(&config).unwrap().replace("folds = 10", "folds = 3")).unwrap();
    let out = ok(boswe(&["reproduce", "table1", "-c", config.to_str().unwrap(), "--rows", "single:8,per_class:4"]));
    assert!(out.contains("1 x 8 words") && out.contains("2 x 4 words"), "{out}");
    assert!(out.contains("hellinger") && out.contains("pq"));
    let tsv = fs::read_to_string(dir.path().join("out/table1.tsv")).unwrap();
    assert_eq!(tsv.lines().count(), 1 + 2 * 5);
    let o = boswe(&["reproduce", "table4", "-c", config.to_str().unwrap(), "--rows", "single:8"]);
    assert_eq!(o.status.code(), Some(1));
    let o = boswe(&["reproduce", "table1", "-c", config.to_str().unwrap(), "--rows", "many:8"]);
    assert_eq!(o.status.code(), Some(1));
}
