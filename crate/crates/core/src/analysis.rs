//! Pairwise analysis across all periods and global-time word scores.
//!
//! For every unordered period pair the training words select variables and
//! the test words feed a permutation test. A word's score at period `t` is
//! the cosine distance between its vectors at `t` and at each other period
//! `t'`, restricted to the variables selected for `(t, t')`, averaged over the
//! other periods. Scores lie in `[0, 2]`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use log::warn;
use ndarray::ArrayView1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::{AlignedCorpus, VocabSplit};
use crate::error::{Error, Result};
use crate::permutation::{permutation_test, PermutationConfig};
use crate::selection::{select_variables, OptimizerConfig};

/// Significance level used for the filtered heatmap.
pub const SIGNIFICANCE_LEVEL: f64 = 0.05;

/// How a pair with no selected variables enters a word's score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EmptyPairPolicy {
    /// The pair contributes a zero term and still counts in the average.
    #[default]
    Zero,
    /// The pair is left out and the average runs over the remaining pairs.
    Exclude,
}

impl FromStr for EmptyPairPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "zero" => Ok(EmptyPairPolicy::Zero),
            "exclude" => Ok(EmptyPairPolicy::Exclude),
            other => Err(Error::InvalidConfig(format!("unknown empty-pair policy `{other}`"))),
        }
    }
}

impl std::fmt::Display for EmptyPairPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EmptyPairPolicy::Zero => "zero",
            EmptyPairPolicy::Exclude => "exclude",
        })
    }
}

/// Result for one unordered period pair, earlier period first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairAnalysis {
    pub period_a: String,
    pub period_b: String,
    pub index_a: usize,
    pub index_b: usize,
    pub selected_vars: Vec<usize>,
    pub n_selected: usize,
    /// `None` when the test is undefined (empty selection or a failed pair).
    pub p_value: Option<f64>,
    pub observed_stat: Option<f64>,
    pub n_permutations: usize,
    pub stability: Vec<f64>,
    pub n_runs: usize,
    pub n_accepted_runs: usize,
    pub error: Option<String>,
    pub warnings: Vec<String>,
}

impl PairAnalysis {
    fn empty(corpus: &AlignedCorpus, a: usize, b: usize, n_permutations: usize) -> Self {
        PairAnalysis {
            period_a: corpus.periods()[a].period_label().to_string(),
            period_b: corpus.periods()[b].period_label().to_string(),
            index_a: a,
            index_b: b,
            selected_vars: Vec::new(),
            n_selected: 0,
            p_value: None,
            observed_stat: None,
            n_permutations,
            stability: Vec::new(),
            n_runs: 0,
            n_accepted_runs: 0,
            error: None,
            warnings: Vec::new(),
        }
    }

    pub fn is_significant(&self, alpha: f64) -> bool {
        self.p_value.is_some_and(|p| p < alpha)
    }
}

/// splitmix64 finaliser.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for one pair and purpose, independent of processing order.
pub fn pair_seed(base: u64, a: usize, b: usize, stream: u64) -> u64 {
    mix(mix(mix(base ^ stream) ^ a as u64) ^ b as u64)
}

/// All `(a, b)` index pairs with `a < b`, in row-major order.
pub fn period_pairs(n_periods: usize) -> Vec<(usize, usize)> {
    (0..n_periods)
        .flat_map(|a| ((a + 1)..n_periods).map(move |b| (a, b)))
        .collect()
}

fn analyze_pair(
    corpus: &AlignedCorpus,
    split: &VocabSplit,
    optimizer: &OptimizerConfig,
    test: &PermutationConfig,
    a: usize,
    b: usize,
) -> PairAnalysis {
    let mut record = PairAnalysis::empty(corpus, a, b, test.n_permutations);
    let (pa, pb) = (&corpus.periods()[a], &corpus.periods()[b]);
    let run = |record: &mut PairAnalysis| -> Result<()> {
        let x = pa.rows_for(&split.train_words)?;
        let y = pb.rows_for(&split.train_words)?;
        let cfg = OptimizerConfig { seed: pair_seed(optimizer.seed, a, b, 1), ..optimizer.clone() };
        let selection = match select_variables(x.view(), y.view(), &cfg) {
            Ok(s) => s,
            Err(Error::AllRunsRejected) => {
                record.warnings.push(Error::AllRunsRejected.to_string());
                record.n_runs = cfg.lambda_grid.len() * cfg.cv_folds;
                return Ok(());
            }
            Err(e) => return Err(e),
        };
        record.n_runs = selection.runs.len();
        record.n_accepted_runs = selection.n_accepted();
        record.stability = selection.stability.clone();
        if !selection.degenerate_dims.is_empty() {
            record
                .warnings
                .push(format!("constant dimensions use the fallback bandwidth: {:?}", selection.degenerate_dims));
        }
        record.selected_vars = selection.selected.clone();
        record.n_selected = selection.selected.len();
        if selection.selected.is_empty() {
            record.warnings.push(Error::EmptySelection.to_string());
            return Ok(());
        }
        let xt = pa.rows_for(&split.test_words)?;
        let yt = pb.rows_for(&split.test_words)?;
        let tcfg = PermutationConfig { seed: pair_seed(test.seed, a, b, 2), ..test.clone() };
        let result = permutation_test(xt.view(), yt.view(), &selection.selected, &tcfg)?;
        record.p_value = Some(result.p_value);
        record.observed_stat = Some(result.observed_stat);
        Ok(())
    };
    if let Err(e) = run(&mut record) {
        warn!("pair ({}, {}): {e}", record.period_a, record.period_b);
        record.error = Some(e.to_string());
    }
    record
}

/// Selection and permutation test for every unordered pair of periods.
///
/// A failure in one pair is recorded in that pair's record; the others still
/// run. Output order is `(0,1), (0,2), ..., (T-2,T-1)` whatever the
/// scheduling.
pub fn analyze_all_pairs(
    corpus: &AlignedCorpus,
    split: &VocabSplit,
    optimizer: &OptimizerConfig,
    test: &PermutationConfig,
) -> Result<Vec<PairAnalysis>> {
    optimizer.validate()?;
    Ok(period_pairs(corpus.n_periods())
        .par_iter()
        .map(|&(a, b)| analyze_pair(corpus, split, optimizer, test, a, b))
        .collect())
}

/// `1 - cos(u, v)`, in `[0, 2]`. A zero vector on either side gives 1.
pub fn cosine_distance_term(u: ArrayView1<f64>, v: ArrayView1<f64>) -> f64 {
    cosine_distance_checked(u, v).0
}

/// Cosine distance and whether a zero-norm input forced the neutral value.
fn cosine_distance_checked(u: ArrayView1<f64>, v: ArrayView1<f64>) -> (f64, bool) {
    debug_assert_eq!(u.len(), v.len());
    let uu = u.dot(&u);
    let vv = v.dot(&v);
    if uu == 0.0 || vv == 0.0 {
        return (1.0, true);
    }
    let cos = u.dot(&v) / (uu * vv).sqrt();
    ((1.0 - cos).clamp(0.0, 2.0), false)
}

/// Selected variables of every pair, keyed by `(earlier, later)` period index.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PairSelections(BTreeMap<(usize, usize), Vec<usize>>);

impl PairSelections {
    pub fn from_pairs(pairs: &[PairAnalysis]) -> Self {
        PairSelections(pairs.iter().map(|p| ((p.index_a, p.index_b), p.selected_vars.clone())).collect())
    }

    pub fn insert(&mut self, a: usize, b: usize, selected: Vec<usize>) {
        self.0.insert((a.min(b), a.max(b)), selected);
    }

    pub fn get(&self, a: usize, b: usize) -> &[usize] {
        self.0.get(&(a.min(b), a.max(b))).map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Term contributed by the pair `(t, other)` to `word`'s score, or `None`
/// when the pair has no selected variables.
fn pair_term(corpus: &AlignedCorpus, selections: &PairSelections, word: &str, t: usize, other: usize) -> Option<f64> {
    let selected = selections.get(t, other);
    if selected.is_empty() {
        return None;
    }
    let periods = corpus.periods();
    let u = periods[t].vector(word)?.select(ndarray::Axis(0), selected);
    let v = periods[other].vector(word)?.select(ndarray::Axis(0), selected);
    let (term, zero_norm) = cosine_distance_checked(u.view(), v.view());
    if zero_norm {
        warn!(
            "`{word}` has a zero subvector for pair ({}, {}); using term 1.0",
            periods[t].period_label(),
            periods[other].period_label()
        );
    }
    Some(term)
}

/// Global-time score of `word` at period index `t`; `None` if no pair
/// involving `t` selected any variable.
pub fn global_time_score(
    word: &str,
    t: usize,
    selections: &PairSelections,
    corpus: &AlignedCorpus,
    policy: EmptyPairPolicy,
) -> Result<Option<f64>> {
    if !corpus.contains_word(word) {
        return Err(Error::WordNotFound(word.to_string()));
    }
    if t >= corpus.n_periods() {
        return Err(Error::Validation(format!("period index {t} out of range")));
    }
    let mut sum = 0.0;
    let mut contributing = 0usize;
    for other in (0..corpus.n_periods()).filter(|&o| o != t) {
        if let Some(term) = pair_term(corpus, selections, word, t, other) {
            sum += term;
            contributing += 1;
        }
    }
    if contributing == 0 {
        return Ok(None);
    }
    let denominator = match policy {
        EmptyPairPolicy::Zero => corpus.n_periods() - 1,
        EmptyPairPolicy::Exclude => contributing,
    };
    Ok(Some(sum / denominator as f64))
}

/// Scores of one word at every period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordScoreSeries {
    pub word: String,
    pub periods: Vec<String>,
    pub scores: Vec<Option<f64>>,
    /// `(earlier label, later label, term)` for pairs with a selection.
    pub per_pair_terms: Vec<(String, String, f64)>,
}

impl WordScoreSeries {
    /// Period label with the highest defined score (first on ties).
    pub fn peak(&self) -> Option<&str> {
        let mut best: Option<(usize, f64)> = None;
        for (i, s) in self.scores.iter().enumerate() {
            if let Some(s) = *s {
                if best.is_none_or(|(_, b)| s > b) {
                    best = Some((i, s));
                }
            }
        }
        best.map(|(i, _)| self.periods[i].as_str())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("period,score\n");
        for (p, s) in self.periods.iter().zip(&self.scores) {
            let _ = writeln!(out, "{},{}", csv_field(p), s.map(|v| v.to_string()).unwrap_or_default());
        }
        out
    }
}

pub fn score_series(
    word: &str,
    selections: &PairSelections,
    corpus: &AlignedCorpus,
    policy: EmptyPairPolicy,
) -> Result<WordScoreSeries> {
    let scores = (0..corpus.n_periods())
        .map(|t| global_time_score(word, t, selections, corpus, policy))
        .collect::<Result<Vec<_>>>()?;
    let labels = corpus.labels();
    let per_pair_terms = period_pairs(corpus.n_periods())
        .into_iter()
        .filter_map(|(a, b)| {
            pair_term(corpus, selections, word, a, b).map(|t| (labels[a].clone(), labels[b].clone(), t))
        })
        .collect();
    Ok(WordScoreSeries { word: word.to_string(), periods: labels, scores, per_pair_terms })
}

/// Scores of every shared word at one period.
pub fn period_scores(
    t: usize,
    selections: &PairSelections,
    corpus: &AlignedCorpus,
    policy: EmptyPairPolicy,
) -> Result<Vec<(String, Option<f64>)>> {
    corpus
        .shared_vocab()
        .par_iter()
        .map(|w| Ok((w.clone(), global_time_score(w, t, selections, corpus, policy)?)))
        .collect()
}

/// Top `k` words by descending score, ties broken by word. Words with an
/// undefined score are not ranked.
pub fn rank_words(scores: &[(String, Option<f64>)], k: usize) -> Vec<(String, f64)> {
    let mut ranked: Vec<(String, f64)> = scores
        .iter()
        .filter_map(|(w, s)| s.map(|s| (w.clone(), s)))
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(k);
    ranked
}

/// `word,score,rank`, ranked words first, then unranked words with empty cells.
pub fn scores_csv(scores: &[(String, Option<f64>)]) -> String {
    let ranked = rank_words(scores, usize::MAX);
    let mut out = String::from("word,score,rank\n");
    for (i, (w, s)) in ranked.iter().enumerate() {
        let _ = writeln!(out, "{},{},{}", csv_field(w), s, i + 1);
    }
    let mut undefined: Vec<&String> = scores.iter().filter(|(_, s)| s.is_none()).map(|(w, _)| w).collect();
    undefined.sort();
    for w in undefined {
        let _ = writeln!(out, "{},,", csv_field(w));
    }
    out
}

/// Which quantity a heatmap cell shows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeatmapKind {
    /// Number of selected variables.
    Counts,
    /// Number of selected variables, zeroed where `p >= 0.05` or undefined.
    SignificantCounts,
    /// Permutation p-value; empty where undefined.
    PValues,
}

/// `T x T` matrix with period labels on both axes. The upper triangle holds the
/// pair values, the lower triangle mirrors it and the diagonal is empty.
pub fn heatmap_csv(labels: &[String], pairs: &[PairAnalysis], kind: HeatmapKind) -> String {
    let t = labels.len();
    let mut cells = vec![vec![String::new(); t]; t];
    for p in pairs {
        let value = match kind {
            HeatmapKind::Counts => p.n_selected.to_string(),
            HeatmapKind::SignificantCounts => {
                if p.is_significant(SIGNIFICANCE_LEVEL) { p.n_selected } else { 0 }.to_string()
            }
            HeatmapKind::PValues => p.p_value.map(|v| v.to_string()).unwrap_or_default(),
        };
        cells[p.index_a][p.index_b] = value.clone();
        cells[p.index_b][p.index_a] = value;
    }
    let mut out = String::from("period");
    for l in labels {
        out.push(',');
        out.push_str(&csv_field(l));
    }
    out.push('\n');
    for (l, row) in labels.iter().zip(cells) {
        out.push_str(&csv_field(l));
        for c in row {
            out.push(',');
            out.push_str(&c);
        }
        out.push('\n');
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
