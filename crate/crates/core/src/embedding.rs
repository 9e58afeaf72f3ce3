//! Per-period embedding snapshots: loading, alignment and vocabulary splits.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs;
use std::path::Path;
use std::str::FromStr;

use log::warn;
use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// On-disk layout of an embedding file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingFormat {
    /// `word v1 ... vD` per line with an optional `count dim` header.
    #[default]
    Word2vecText,
    /// `word<TAB>v1<TAB>...<TAB>vD` per line.
    Tsv,
}

impl FromStr for EmbeddingFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "word2vec_text" | "word2vec" | "text" => Ok(EmbeddingFormat::Word2vecText),
            "tsv" => Ok(EmbeddingFormat::Tsv),
            other => Err(Error::InvalidConfig(format!("unknown embedding format `{other}`"))),
        }
    }
}

impl std::fmt::Display for EmbeddingFormat {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EmbeddingFormat::Word2vecText => "word2vec_text",
            EmbeddingFormat::Tsv => "tsv",
        })
    }
}

/// Word vectors of one time period.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSnapshot {
    period_label: String,
    vocab: Vec<String>,
    index: HashMap<String, usize>,
    matrix: Array2<f64>,
}

impl EmbeddingSnapshot {
    /// Builds a snapshot, checking that rows are finite, words are unique and
    /// there are at least two words.
    pub fn new(period_label: impl Into<String>, vocab: Vec<String>, matrix: Array2<f64>) -> Result<Self> {
        let period_label = period_label.into();
        if vocab.len() != matrix.nrows() {
            return Err(Error::DimensionMismatch { expected: vocab.len(), found: matrix.nrows() });
        }
        if matrix.ncols() == 0 {
            return Err(Error::Validation(format!("period {period_label}: zero-dimensional vectors")));
        }
        if vocab.len() < 2 {
            return Err(Error::Validation(format!(
                "period {period_label}: need at least 2 words, got {}",
                vocab.len()
            )));
        }
        let mut index = HashMap::with_capacity(vocab.len());
        for (row, word) in vocab.iter().enumerate() {
            if index.insert(word.clone(), row).is_some() {
                return Err(Error::Validation(format!("period {period_label}: duplicate word `{word}`")));
            }
        }
        if let Some((row, _)) = matrix
            .axis_iter(Axis(0))
            .enumerate()
            .find(|(_, r)| r.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::Validation(format!(
                "period {period_label}: non-finite value in row of `{}`",
                vocab[row]
            )));
        }
        Ok(EmbeddingSnapshot { period_label, vocab, index, matrix })
    }

    pub fn period_label(&self) -> &str {
        &self.period_label
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn matrix(&self) -> ArrayView2<'_, f64> {
        self.matrix.view()
    }

    pub fn dim(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn len(&self) -> usize {
        self.vocab.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vocab.is_empty()
    }

    pub fn row_of(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn vector(&self, word: &str) -> Option<ArrayView1<'_, f64>> {
        self.row_of(word).map(|r| self.matrix.row(r))
    }

    /// Rows for `words`, in the given order.
    pub fn rows_for(&self, words: &[String]) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((words.len(), self.dim()));
        for (i, w) in words.iter().enumerate() {
            let row = self
                .row_of(w)
                .ok_or_else(|| Error::WordNotFound(format!("{w} (period {})", self.period_label)))?;
            out.row_mut(i).assign(&self.matrix.row(row));
        }
        Ok(out)
    }

    /// Keeps only the words in `allowed`, preserving row order.
    pub fn retain_words(&self, allowed: &HashSet<String>) -> Result<Self> {
        let rows: Vec<usize> = (0..self.len()).filter(|&r| allowed.contains(&self.vocab[r])).collect();
        let vocab = rows.iter().map(|&r| self.vocab[r].clone()).collect();
        let matrix = self.matrix.select(Axis(0), &rows);
        EmbeddingSnapshot::new(self.period_label.clone(), vocab, matrix)
    }
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse { location: format!("{}:{}", path.display(), line), message: message.into() }
}

/// Parses embedding text already in memory. `source` is only used in messages.
pub fn parse_snapshot(
    text: &str,
    source: &Path,
    period_label: impl Into<String>,
    format: EmbeddingFormat,
) -> Result<EmbeddingSnapshot> {
    let mut vocab = Vec::new();
    let mut values: Vec<f64> = Vec::new();
    let mut dim: Option<usize> = None;
    let mut header_count: Option<usize> = None;

    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let mut fields: Vec<&str> = match format {
            EmbeddingFormat::Word2vecText => line.split_whitespace().collect(),
            EmbeddingFormat::Tsv => line.split('\t').collect(),
        };
        if format == EmbeddingFormat::Word2vecText && vocab.is_empty() && header_count.is_none() && fields.len() == 2 {
            if let (Ok(count), Ok(d)) = (fields[0].parse::<usize>(), fields[1].parse::<usize>()) {
                if d == 0 {
                    return Err(parse_err(source, lineno, "header declares dimension 0"));
                }
                header_count = Some(count);
                dim = Some(d);
                continue;
            }
        }
        if format == EmbeddingFormat::Tsv && fields.last() == Some(&"") {
            fields.pop();
        }
        if fields.len() < 2 {
            return Err(parse_err(source, lineno, "expected a word followed by coordinates"));
        }
        let coords = &fields[1..];
        match dim {
            Some(d) if d != coords.len() => {
                return Err(parse_err(
                    source,
                    lineno,
                    format!("expected {d} coordinates, found {}", coords.len()),
                ))
            }
            None => dim = Some(coords.len()),
            _ => {}
        }
        for c in coords {
            let v: f64 = c
                .trim()
                .parse()
                .map_err(|_| parse_err(source, lineno, format!("invalid number `{c}`")))?;
            values.push(v);
        }
        vocab.push(fields[0].to_string());
    }

    if let Some(count) = header_count {
        if count != vocab.len() {
            return Err(parse_err(
                source,
                0,
                format!("header declares {count} words, file has {}", vocab.len()),
            ));
        }
    }
    let dim = dim.ok_or_else(|| parse_err(source, 0, "no embedding rows"))?;
    let matrix = Array2::from_shape_vec((vocab.len(), dim), values)
        .map_err(|e| parse_err(source, 0, e.to_string()))?;
    EmbeddingSnapshot::new(period_label, vocab, matrix)
}

/// Loads one snapshot. The period label defaults to the file stem.
pub fn load_snapshot(path: impl AsRef<Path>, format: EmbeddingFormat) -> Result<EmbeddingSnapshot> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let label = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string());
    parse_snapshot(&text, path, label, format)
}

/// Writes a snapshot in word2vec text format with a header line.
pub fn write_word2vec_text(snapshot: &EmbeddingSnapshot, path: impl AsRef<Path>) -> Result<()> {
    use std::fmt::Write as _;
    let path = path.as_ref();
    let mut out = String::new();
    let _ = writeln!(out, "{} {}", snapshot.len(), snapshot.dim());
    for (word, row) in snapshot.vocab.iter().zip(snapshot.matrix.axis_iter(Axis(0))) {
        out.push_str(word);
        for v in row {
            let _ = write!(out, " {v}");
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads a one-word-per-line allowlist.
pub fn read_allowlist(path: impl AsRef<Path>) -> Result<HashSet<String>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect())
}

/// Time-ordered snapshots restricted to the vocabulary they all share.
#[derive(Debug, Clone)]
pub struct AlignedCorpus {
    periods: Vec<EmbeddingSnapshot>,
    shared_vocab: Vec<String>,
}

impl AlignedCorpus {
    pub fn periods(&self) -> &[EmbeddingSnapshot] {
        &self.periods
    }

    pub fn n_periods(&self) -> usize {
        self.periods.len()
    }

    pub fn dim(&self) -> usize {
        self.periods[0].dim()
    }

    /// Lexicographically sorted words present in every period.
    pub fn shared_vocab(&self) -> &[String] {
        &self.shared_vocab
    }

    pub fn labels(&self) -> Vec<String> {
        self.periods.iter().map(|p| p.period_label().to_string()).collect()
    }

    pub fn period_index(&self, label: &str) -> Option<usize> {
        self.periods.iter().position(|p| p.period_label() == label)
    }

    pub fn contains_word(&self, word: &str) -> bool {
        self.shared_vocab.binary_search_by(|w| w.as_str().cmp(word)).is_ok()
    }
}

/// Aligns snapshots on their shared vocabulary. Period order is kept as given.
pub fn align(snapshots: Vec<EmbeddingSnapshot>) -> Result<AlignedCorpus> {
    if snapshots.len() < 2 {
        return Err(Error::Validation(format!("need at least 2 periods, got {}", snapshots.len())));
    }
    let dim = snapshots[0].dim();
    if let Some(bad) = snapshots.iter().find(|s| s.dim() != dim) {
        return Err(Error::DimensionMismatch { expected: dim, found: bad.dim() });
    }
    let mut shared: BTreeSet<&str> = snapshots[0].vocab.iter().map(String::as_str).collect();
    for s in &snapshots[1..] {
        shared.retain(|w| s.index.contains_key(*w));
    }
    if shared.is_empty() {
        return Err(Error::EmptySharedVocab);
    }
    for s in &snapshots {
        let dropped = s.len() - shared.len();
        if dropped > 0 {
            warn!("period {}: {dropped} words are missing from other periods and are dropped", s.period_label);
        }
    }
    let shared_vocab: Vec<String> = shared.into_iter().map(str::to_string).collect();
    Ok(AlignedCorpus { periods: snapshots, shared_vocab })
}

/// Disjoint train/test word sets drawn from the shared vocabulary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabSplit {
    pub train_words: Vec<String>,
    pub test_words: Vec<String>,
    pub seed: u64,
}

/// Draws a uniformly random disjoint split, reproducible under `seed`.
pub fn split_vocab(corpus: &AlignedCorpus, n_train: usize, n_test: usize, seed: u64) -> Result<VocabSplit> {
    let available = corpus.shared_vocab.len();
    let requested = n_train + n_test;
    if requested > available {
        return Err(Error::InsufficientVocab { requested, available });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chosen: Vec<&String> = corpus.shared_vocab.choose_multiple(&mut rng, requested).collect();
    let train_words = chosen[..n_train].iter().map(|w| (*w).clone()).collect();
    let test_words = chosen[n_train..].iter().map(|w| (*w).clone()).collect();
    Ok(VocabSplit { train_words, test_words, seed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn snap(label: &str, words: &[&str], dim: usize) -> EmbeddingSnapshot {
        let n = words.len();
        let m = Array2::from_shape_fn((n, dim), |(i, j)| (i * dim + j) as f64);
        EmbeddingSnapshot::new(label, words.iter().map(|w| w.to_string()).collect(), m).unwrap()
    }

    #[test]
    fn parses_plain_text() {
        let s = parse_snapshot("a 1.0 0.0\nb 0.0 1.0\nc 1.0 1.0\n", Path::new("t"), "t", EmbeddingFormat::Word2vecText)
            .unwrap();
        assert_eq!(s.vocab(), ["a", "b", "c"]);
        assert_eq!(s.dim(), 2);
        assert_eq!(s.matrix(), array![[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]);
    }

    #[test]
    fn header_dimension_is_enforced() {
        let err = parse_snapshot("2 2\na 1 0\nb 0 1 3\n", Path::new("t"), "t", EmbeddingFormat::Word2vecText)
            .unwrap_err();
        assert!(matches!(err, Error::Parse { .. }), "{err:?}");
    }

    #[test]
    fn header_count_is_enforced() {
        let err = parse_snapshot("3 2\na 1 0\nb 0 1\n", Path::new("t"), "t", EmbeddingFormat::Word2vecText)
            .unwrap_err();
        assert!(matches!(err, Error::Parse { .. }));
    }

    #[test]
    fn tsv_rows() {
        let s = parse_snapshot("a\t1\t2\nb b\t3\t4\n", Path::new("t"), "t", EmbeddingFormat::Tsv).unwrap();
        assert_eq!(s.vocab(), ["a", "b b"]);
        assert_eq!(s.vector("b b").unwrap().to_vec(), vec![3.0, 4.0]);
    }

    #[test]
    fn rejects_nan_and_duplicates() {
        let e = parse_snapshot("a 1 NaN\nb 0 1\n", Path::new("t"), "t", EmbeddingFormat::Word2vecText).unwrap_err();
        assert!(matches!(e, Error::Validation(_)));
        let e = parse_snapshot("a 1 0\na 0 1\n", Path::new("t"), "t", EmbeddingFormat::Word2vecText).unwrap_err();
        assert!(matches!(e, Error::Validation(_)));
        let e = parse_snapshot("a 1 inf\nb 0 1\n", Path::new("t"), "t", EmbeddingFormat::Word2vecText).unwrap_err();
        assert!(matches!(e, Error::Validation(_)));
    }

    #[test]
    fn single_word_is_rejected() {
        let e = parse_snapshot("a 1 0\n", Path::new("t"), "t", EmbeddingFormat::Word2vecText).unwrap_err();
        assert!(matches!(e, Error::Validation(_)));
    }

    #[test]
    fn align_intersects_and_sorts() {
        let c = align(vec![snap("1", &["c", "a", "b"], 2), snap("2", &["d", "b", "c"], 2)]).unwrap();
        assert_eq!(c.shared_vocab(), ["b", "c"]);
        let c = align(vec![snap("1", &["c", "a", "b"], 2), snap("2", &["c", "a", "b"], 2)]).unwrap();
        assert_eq!(c.shared_vocab(), ["a", "b", "c"]);
    }

    #[test]
    fn align_errors() {
        let e = align(vec![snap("1", &["a", "b"], 100), snap("2", &["a", "b"], 50)]).unwrap_err();
        assert_eq!(e, Error::DimensionMismatch { expected: 100, found: 50 });
        let e = align(vec![snap("1", &["a", "b"], 2), snap("2", &["c", "d"], 2)]).unwrap_err();
        assert_eq!(e, Error::EmptySharedVocab);
        assert!(align(vec![snap("1", &["a", "b"], 2)]).is_err());
    }

    #[test]
    fn rows_follow_source_rows() {
        let a = snap("1", &["z", "y", "x"], 3);
        let b = snap("2", &["x", "z", "y"], 3);
        let c = align(vec![a.clone(), b.clone()]).unwrap();
        for w in c.shared_vocab() {
            assert_eq!(c.periods()[0].vector(w), a.vector(w));
            assert_eq!(c.periods()[1].vector(w), b.vector(w));
        }
    }

    fn corpus_of(size: usize) -> AlignedCorpus {
        let words: Vec<String> = (0..size).map(|i| format!("w{i:05}")).collect();
        let refs: Vec<&str> = words.iter().map(String::as_str).collect();
        align(vec![snap("1", &refs, 1), snap("2", &refs, 1)]).unwrap()
    }

    #[test]
    fn split_sizes_from_the_reported_setups() {
        for (size, tr, te) in [(2300, 2000, 300), (505, 400, 105)] {
            let c = corpus_of(size);
            let s = split_vocab(&c, tr, te, 7).unwrap();
            assert_eq!(s.train_words.len(), tr);
            assert_eq!(s.test_words.len(), te);
            let train: HashSet<_> = s.train_words.iter().collect();
            assert!(s.test_words.iter().all(|w| !train.contains(w)));
            assert!(s.train_words.iter().chain(&s.test_words).all(|w| c.contains_word(w)));
        }
    }

    #[test]
    fn split_is_seeded() {
        let c = corpus_of(100);
        assert_eq!(split_vocab(&c, 60, 20, 3).unwrap(), split_vocab(&c, 60, 20, 3).unwrap());
        assert_ne!(split_vocab(&c, 60, 20, 3).unwrap(), split_vocab(&c, 60, 20, 4).unwrap());
        assert_eq!(
            split_vocab(&c, 60, 50, 3).unwrap_err(),
            Error::InsufficientVocab { requested: 110, available: 100 }
        );
    }
}
