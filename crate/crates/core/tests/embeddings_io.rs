use std::io::Cursor;

use boswe::embeddings::{load_embeddings, read_binary, read_text, CasePolicy, EmbeddingFormat, EmbeddingTable};
use boswe::Error;
use proptest::prelude::*;

fn table(entries: &[(&str, Vec<f32>)]) -> EmbeddingTable {
    let mut t = EmbeddingTable::new(entries[0].1.len()).unwrap();
    for (w, v) in entries {
        t.insert(w.as_bytes(), v).unwrap();
    }
    t
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn binary_parser_never_panics(bytes in prop::collection::vec(any::<u8>(), 0..512)) {
        let _ = read_binary(Cursor::new(bytes), None);
    }

    #[test]
    fn binary_parser_with_plausible_header(count in 0u32..5, dim in 0u32..6, body in prop::collection::vec(any::<u8>(), 0..200)) {
        let mut bytes = format!("{count} {dim}\n").into_bytes();
        bytes.extend(body);
        let _ = read_binary(Cursor::new(bytes), None);
    }

    #[test]
    fn text_parser_never_panics(bytes in prop::collection::vec(any::<u8>(), 0..512)) {
        let _ = read_text(Cursor::new(bytes), None);
    }

    #[test]
    fn binary_round_trip(words in prop::collection::btree_set("[a-zA-Z0-9_]{1,12}", 1..20), dim in 1usize..8, seed in any::<u32>()) {
        let entries: Vec<(String, Vec<f32>)> = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), (0..dim).map(|j| ((i * 31 + j) as f32 + seed as f32 * 1e-3).sin()).collect()))
            .collect();
        let refs: Vec<(&str, Vec<f32>)> = entries.iter().map(|(w, v)| (w.as_str(), v.clone())).collect();
        let t = table(&refs);
        let mut buf = Vec::new();
        t.write_binary(&mut buf).unwrap();
        prop_assert_eq!(read_binary(Cursor::new(&buf), None).unwrap(), t.clone());
        let mut text = Vec::new();
        t.write_text(&mut text).unwrap();
        let back = read_text(Cursor::new(&text), None).unwrap();
        for (w, v) in t.iter() {
            prop_assert_eq!(back.lookup(w).unwrap(), v);
        }
    }
}

#[test]
fn truncated_binary_reports_offset() {
    let t = table(&[("alpha", vec![1.0, 2.0]), ("beta", vec![3.0, 4.0])]);
    let mut buf = Vec::new();
    t.write_binary(&mut buf).unwrap();
    buf.truncate(buf.len() - 3);
    match read_binary(Cursor::new(&buf), None) {
        Err(Error::Truncated { offset, .. }) => assert!(offset > 0),
        other => panic!("expected truncation, got {other:?}"),
    }
}

#[test]
fn huge_declared_dimension_is_an_error() {
    assert!(read_binary(Cursor::new(b"1 99999999999\nx ".to_vec()), None).is_err());
}

#[test]
fn limit_and_file_loading() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("vectors.bin");
    let t = table(&[("The", vec![1.0]), ("the", vec![2.0]), ("cat", vec![3.0])]);
    t.save(&path, EmbeddingFormat::Binary).unwrap();
    let full = load_embeddings(&path, EmbeddingFormat::Binary, None).unwrap();
    assert_eq!(full.len(), 3);
    assert_eq!(full.lookup_with("THE", CasePolicy::LowerThenOriginal), Some(&[2.0f32][..]));
    assert_eq!(full.lookup_with("THE", CasePolicy::Exact), None);
    let two = load_embeddings(&path, EmbeddingFormat::Binary, Some(2)).unwrap();
    assert_eq!(two.len(), 2);
    assert!(matches!(
        load_embeddings(&dir.path().join("missing"), EmbeddingFormat::Text, None),
        Err(Error::Path { .. })
    ));
}
