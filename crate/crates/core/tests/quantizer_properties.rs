mod common;

use std::collections::BTreeSet;

use boswe::corpus::{Document, Split};
use boswe::embeddings::EmbeddingTable;
use boswe::matrix::{nearest_brute, Matrix};
use boswe::quantizer::{
    build_vocabularies, kmeans, Budget, CentroidIndex, Codebook, KMeansParams, VocabMode, VocabParams,
};
use common::*;
use proptest::prelude::*;
use rand::Rng;

#[test]
fn two_cluster_oracle_for_many_seeds() {
    let points = [0.0, 1.0, 10.0, 11.0];
    let (opt, centres) = best_two_partition(&points);
    assert_eq!(opt, 1.0);
    assert_eq!(centres, [0.5, 10.5]);
    let data = Matrix::from_vec(4, 1, points.to_vec()).unwrap();
    for seed in 0..20 {
        let out = kmeans(&data, &KMeansParams::new(2, seed)).unwrap();
        let mut got = [out.codebook.centroid(0)[0], out.codebook.centroid(1)[0]];
        got.sort_by(f64::total_cmp);
        assert_eq!(got, centres, "seed {seed}");
        assert_eq!(out.codebook.inertia, opt);
    }
}

fn assert_monotone(trace: &[f64]) {
    for w in trace.windows(2) {
        assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-12, "objective rose: {} -> {}", w[0], w[1]);
    }
}

#[test]
fn objective_never_increases() {
    let mut r = rng(21);
    for case in 0..100 {
        let n = r.random_range(5..120);
        let dim = r.random_range(1..8);
        let k = r.random_range(1..10);
        let data: Vec<f64> = (0..n * dim).map(|_| r.random::<f64>() * 10.0 - 5.0).collect();
        let data = Matrix::from_vec(n, dim, data).unwrap();
        let out = kmeans(&data, &KMeansParams::new(k, case)).unwrap();
        assert_monotone(&out.objective_trace);
    }
}

#[test]
fn converged_assignment_is_exact_nearest() {
    let mut r = rng(22);
    let data = Matrix::from_rows(&uniform_points(&mut r, 300, 4)).unwrap();
    let mut params = KMeansParams::new(6, 1);
    params.tol = 0.0;
    params.max_iter = 500;
    let out = kmeans(&data, &params).unwrap();
    assert!(out.converged);
    // a converged codebook is the mean of its own nearest-centroid cells
    let mut sums = vec![vec![0.0; 4]; 6];
    let mut counts = [0usize; 6];
    for row in data.iter_rows() {
        let (c, _) = nearest_brute(&out.codebook.centroids, row);
        counts[c] += 1;
        for (s, x) in sums[c].iter_mut().zip(row) {
            *s += x;
        }
    }
    for c in 0..6 {
        for d in 0..4 {
            assert!((sums[c][d] / counts[c] as f64 - out.codebook.centroid(c)[d]).abs() < 1e-9);
        }
    }
}

#[test]
fn independent_of_worker_count() {
    let mut r = rng(23);
    let data = Matrix::from_rows(&uniform_points(&mut r, 500, 6)).unwrap();
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| kmeans(&data, &KMeansParams::new(12, 5)).unwrap().codebook)
    };
    assert_eq!(run(1), run(4));
}

fn random_book(r: &mut rand_chacha::ChaCha8Rng, k: usize, dim: usize) -> Codebook {
    Codebook::new(Matrix::from_rows(&uniform_points(r, k, dim)).unwrap(), None, 0.0).unwrap()
}

#[test]
fn exhaustive_forest_matches_brute_force() {
    let mut r = rng(24);
    for (k, dim, trees) in [(1000, 300, 8), (200, 30, 1), (50, 2, 3), (1, 5, 2)] {
        let book = random_book(&mut r, k, dim);
        let index = CentroidIndex::build(&book, trees, 7);
        for _ in 0..200 {
            let q: Vec<f64> = (0..dim).map(|_| r.random::<f64>() * 1.4 - 0.2).collect();
            assert_eq!(index.assign(&q, Budget::Exhaustive).unwrap(), nearest_brute(&book.centroids, &q).0);
        }
    }
}

#[test]
fn exhaustive_forest_with_duplicate_and_grid_centroids() {
    // integer grid points give many exact distance ties
    let rows: Vec<Vec<f64>> = (0..64).map(|i| vec![(i % 4) as f64, ((i / 4) % 4) as f64, (i / 16) as f64]).collect();
    let mut rows2 = rows.clone();
    rows2.extend(rows.iter().take(10).cloned());
    let book = Codebook::new(Matrix::from_rows(&rows2).unwrap(), None, 0.0).unwrap();
    let mut r = rng(25);
    for seed in 0..5 {
        let index = CentroidIndex::build(&book, 4, seed);
        for _ in 0..300 {
            let q: Vec<f64> = (0..3).map(|_| f64::from(r.random_range(-2..12i32)) * 0.5).collect();
            assert_eq!(index.assign(&q, Budget::Exhaustive).unwrap(), nearest_brute(&book.centroids, &q).0);
        }
    }
}

#[test]
fn batch_assignment_independent_of_worker_count() {
    let mut r = rng(26);
    let book = random_book(&mut r, 300, 20);
    let index = CentroidIndex::build(&book, 4, 1);
    let queries = uniform_points(&mut r, 500, 20);
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| index.assign_batch(&queries, Budget::Checks(32)).unwrap())
    };
    assert_eq!(run(1), run(3));
}

#[test]
fn structured_recall_at_default_budget() {
    let mut r = rng(27);
    let cloud = SpectralCloud::new(300, &mut r);
    let rows: Vec<Vec<f64>> = (0..2000).map(|_| cloud.sample(&mut r)).collect();
    let book = Codebook::new(Matrix::from_rows(&rows).unwrap(), None, 0.0).unwrap();
    let index = CentroidIndex::build(&book, 8, 0);
    let hits = (0..300)
        .filter(|_| {
            let q = cloud.sample(&mut r);
            index.assign(&q, Budget::default()).unwrap() == nearest_brute(&book.centroids, &q).0
        })
        .count();
    assert!(hits as f64 / 300.0 >= 0.95, "recall {}", hits as f64 / 300.0);
}

fn table_2d(entries: &[(&str, [f32; 2])]) -> EmbeddingTable {
    let mut t = EmbeddingTable::new(2).unwrap();
    for (w, v) in entries {
        t.insert(w.as_bytes(), v).unwrap();
    }
    t
}

fn doc(id: &str, label: &str, tokens: &[&str]) -> Document {
    Document {
        id: id.into(),
        tokens: tokens.iter().map(|s| s.to_string()).collect(),
        labels: BTreeSet::from([label.to_string()]),
        split: Split::Train,
    }
}

#[test]
fn per_class_books_sit_on_class_means() {
    let mut r = rng(28);
    let mut entries = Vec::new();
    let mut names = Vec::new();
    for i in 0..30 {
        let a = [r.random::<f32>() - 0.5, r.random::<f32>() - 0.5];
        let b = [10.0 + r.random::<f32>() - 0.5, 10.0 + r.random::<f32>() - 0.5];
        names.push((format!("a{i}"), a, format!("b{i}"), b));
    }
    for (na, a, nb, b) in &names {
        entries.push((na.as_str(), *a));
        entries.push((nb.as_str(), *b));
    }
    let table = table_2d(&entries);
    let a_tokens: Vec<&str> = names.iter().map(|n| n.0.as_str()).collect();
    let b_tokens: Vec<&str> = names.iter().map(|n| n.2.as_str()).collect();
    let docs = [doc("d1", "A", &a_tokens), doc("d2", "B", &b_tokens)];
    let refs: Vec<&Document> = docs.iter().collect();
    let cats = vec!["A".to_string(), "B".to_string()];
    let vocab = build_vocabularies(&refs, &cats, &table, &VocabParams::new(VocabMode::PerClass, 1, 0)).unwrap();
    assert_eq!(vocab.total_size(), 2);
    for (b, pts) in [(0, names.iter().map(|n| n.1).collect::<Vec<_>>()), (1, names.iter().map(|n| n.3).collect())] {
        for d in 0..2 {
            let mean = pts.iter().map(|p| f64::from(p[d])).sum::<f64>() / pts.len() as f64;
            assert!((vocab.books[b].centroid(0)[d] - mean).abs() < 1e-9);
        }
    }
    let single = build_vocabularies(&refs, &cats, &table, &VocabParams::new(VocabMode::Single, 10, 0)).unwrap();
    assert_eq!(single.total_size(), 10);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn same_seed_same_codebook(seed in any::<u64>(), n in 3usize..60, k in 1usize..6) {
        let mut r = rng(seed);
        let data = Matrix::from_rows(&uniform_points(&mut r, n, 3)).unwrap();
        let a = kmeans(&data, &KMeansParams::new(k, seed)).unwrap();
        let b = kmeans(&data, &KMeansParams::new(k, seed)).unwrap();
        prop_assert_eq!(a.codebook, b.codebook);
        assert_monotone(&a.objective_trace);
    }
}
