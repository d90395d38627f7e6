use boswe::corpus::porter_stem;

const VOC: &str = include_str!("data/porter_voc.txt");
const OUTPUT: &str = include_str!("data/porter_output.txt");

#[test]
fn official_vocabulary_matches_exactly() {
    let voc: Vec<&str> = VOC.lines().collect();
    let out: Vec<&str> = OUTPUT.lines().collect();
    assert_eq!(voc.len(), out.len());
    assert!(voc.len() > 23_000);
    let mismatches: Vec<String> = voc
        .iter()
        .zip(&out)
        .filter(|(w, s)| porter_stem(w) != **s)
        .map(|(w, s)| format!("{w}: expected {s}, got {}", porter_stem(w)))
        .collect();
    assert!(mismatches.is_empty(), "{} mismatches, first: {:?}", mismatches.len(), &mismatches[..mismatches.len().min(10)]);
}

#[test]
fn stemming_is_not_idempotent_on_the_official_output() {
    // the reference algorithm strips again from some of its own outputs
    assert_eq!(porter_stem("abase"), "abas");
    assert_eq!(porter_stem("abas"), "aba");
    let out: Vec<&str> = OUTPUT.lines().collect();
    let moved = out.iter().filter(|s| porter_stem(s) != **s).count();
    assert_eq!(moved, 785);
}
