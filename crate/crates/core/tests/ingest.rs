use mmd_sense::embedding::{align, load_snapshot, split_vocab, write_word2vec_text, EmbeddingFormat, EmbeddingSnapshot};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[test]
fn eighteen_yearly_snapshots_align() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for year in 2003..2021 {
        // Each year drops a different word so the intersection is non-trivial.
        let words: Vec<String> = (0..80).filter(|&i| i != year - 2003).map(|i| format!("noun{i}")).collect();
        let m = Array2::from_shape_fn((words.len(), 100), |_| rng.sample::<f64, _>(StandardNormal));
        let snap = EmbeddingSnapshot::new(year.to_string(), words, m).unwrap();
        write_word2vec_text(&snap, dir.path().join(format!("{year}.txt"))).unwrap();
    }
    let loaded: Vec<_> = (2003..2021)
        .map(|y| load_snapshot(dir.path().join(format!("{y}.txt")), EmbeddingFormat::Word2vecText).unwrap())
        .collect();
    let corpus = align(loaded).unwrap();
    assert_eq!(corpus.n_periods(), 18);
    assert_eq!(corpus.dim(), 100);
    assert_eq!(corpus.labels()[0], "2003");
    assert_eq!(corpus.shared_vocab().len(), 80 - 18);
    assert!(!corpus.contains_word("noun0"));
}

#[test]
fn rows_survive_load_align_split() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut originals = Vec::new();
    for (t, drop) in ["w3", "w7"].iter().enumerate() {
        let words: Vec<String> = (0..30).map(|i| format!("w{i}")).filter(|w| w != drop).collect();
        let m = Array2::from_shape_fn((words.len(), 4), |_| rng.sample::<f64, _>(StandardNormal));
        let snap = EmbeddingSnapshot::new(format!("p{t}"), words, m).unwrap();
        write_word2vec_text(&snap, dir.path().join(format!("p{t}.txt"))).unwrap();
        originals.push(snap);
    }
    let load = || {
        let snaps = (0..2)
            .map(|t| load_snapshot(dir.path().join(format!("p{t}.txt")), EmbeddingFormat::Word2vecText).unwrap())
            .collect();
        align(snaps).unwrap()
    };
    let corpus = load();
    assert_eq!(corpus.shared_vocab().len(), 28);
    for (t, orig) in originals.iter().enumerate() {
        for w in corpus.shared_vocab() {
            assert_eq!(corpus.periods()[t].vector(w).unwrap(), orig.vector(w).unwrap());
        }
    }
    let a = split_vocab(&corpus, 20, 8, 9).unwrap();
    let b = split_vocab(&load(), 20, 8, 9).unwrap();
    assert_eq!(a, b);
}
