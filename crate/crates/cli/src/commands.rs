//! The `analyze`, `score` and `synth` subcommands.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use mmd_sense::analysis::{
    analyze_all_pairs, heatmap_csv, period_scores, scores_csv, score_series, HeatmapKind, PairAnalysis,
    PairSelections,
};
use mmd_sense::embedding::{align, load_snapshot, read_allowlist, split_vocab, AlignedCorpus, EmbeddingSnapshot};
use mmd_sense::permutation::PermutationConfig;
use mmd_sense::Error;
use serde::Serialize;

use crate::error::{CliError, CliResult};
use crate::run_config::{Manifest, RunConfig};
use crate::synth::{generate, write_corpus, SynthSpec};

pub const PAIRS_FILE: &str = "pairs.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const SPLIT_FILE: &str = "split.json";

/// Number of nearest vocabulary entries listed for an unknown word.
const SUGGESTIONS: usize = 5;

fn to_json<T: Serialize>(value: &T) -> CliResult<String> {
    serde_json::to_string_pretty(value)
        .map(|s| s + "\n")
        .map_err(|e| CliError::Internal(e.to_string()))
}

/// Period files in `dir`, sorted by name. Hidden files and `.json` files
/// (manifests, ground truth) are skipped.
pub fn period_files(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::User(format!("cannot read `{}`: {e}", dir.display())))?;
    let mut files = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| CliError::User(e.to_string()))?;
        let path = entry.path();
        let hidden = entry.file_name().to_string_lossy().starts_with('.');
        let json = path.extension().is_some_and(|e| e == "json");
        if path.is_file() && !hidden && !json {
            files.push(path);
        }
    }
    files.sort();
    if files.len() < 2 {
        return Err(CliError::User(format!("`{}` holds {} period files; need at least 2", dir.display(), files.len())));
    }
    Ok(files)
}

pub fn load_corpus(cfg: &RunConfig) -> CliResult<AlignedCorpus> {
    cfg.check_paths()?;
    let files = period_files(&cfg.input_dir)?;
    let labels = match &cfg.labels {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| CliError::User(format!("cannot read `{}`: {e}", path.display())))?;
            let labels: Vec<String> = text.lines().map(str::trim).filter(|l| !l.is_empty()).map(str::to_string).collect();
            if labels.len() != files.len() {
                return Err(CliError::User(format!(
                    "labels file has {} entries for {} period files",
                    labels.len(),
                    files.len()
                )));
            }
            Some(labels)
        }
        None => None,
    };
    let allowlist: Option<HashSet<String>> = cfg.allowlist.as_ref().map(read_allowlist).transpose()?;
    let mut snapshots = Vec::with_capacity(files.len());
    for (i, file) in files.iter().enumerate() {
        let mut snap = load_snapshot(file, cfg.format)?;
        if let Some(labels) = &labels {
            snap = EmbeddingSnapshot::new(labels[i].clone(), snap.vocab().to_vec(), snap.matrix().to_owned())?;
        }
        if let Some(allow) = &allowlist {
            snap = snap.retain_words(allow)?;
        }
        info!("loaded {} ({} words, dim {})", snap.period_label(), snap.len(), snap.dim());
        snapshots.push(snap);
    }
    Ok(align(snapshots)?)
}

fn write_file(dir: &Path, name: &str, contents: &str) -> CliResult<()> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| CliError::User(format!("cannot write `{}`: {e}", path.display())))
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::User(format!("cannot create `{}`: {e}", dir.display())))
}

/// File-name-safe rendering of a word or label.
pub fn file_component(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
        .collect()
}

pub fn scores_file_name(label: &str) -> String {
    format!("scores_{}.csv", file_component(label))
}

pub fn series_file_name(word: &str) -> String {
    format!("series_{}.csv", file_component(word))
}

pub fn cmd_analyze(cfg: &RunConfig) -> CliResult<Vec<PairAnalysis>> {
    let corpus = load_corpus(cfg)?;
    let split = split_vocab(&corpus, cfg.n_train, cfg.n_test, cfg.seed)?;
    let test = PermutationConfig {
        n_permutations: cfg.n_permutations,
        seed: cfg.seed,
        bandwidth_mode: cfg.optimizer.bandwidth_mode,
        retain_null: false,
    };
    info!("analysing {} period pairs", corpus.n_periods() * (corpus.n_periods() - 1) / 2);
    let pairs = analyze_all_pairs(&corpus, &split, &cfg.optimizer, &test)?;
    for p in pairs.iter().filter(|p| p.error.is_some()) {
        warn!("pair ({}, {}) failed: {}", p.period_a, p.period_b, p.error.as_deref().unwrap_or_default());
    }

    let labels = corpus.labels();
    let selections = PairSelections::from_pairs(&pairs);
    let mut score_files = Vec::with_capacity(labels.len());
    for (t, label) in labels.iter().enumerate() {
        let scores = period_scores(t, &selections, &corpus, cfg.empty_pair_policy)?;
        score_files.push((scores_file_name(label), scores_csv(&scores)));
    }

    let out = &cfg.output_dir;
    create_dir(out)?;
    write_file(out, PAIRS_FILE, &to_json(&pairs)?)?;
    write_file(out, SPLIT_FILE, &to_json(&split)?)?;
    write_file(out, "heatmap_counts.csv", &heatmap_csv(&labels, &pairs, HeatmapKind::Counts))?;
    write_file(out, "heatmap_counts_significant.csv", &heatmap_csv(&labels, &pairs, HeatmapKind::SignificantCounts))?;
    write_file(out, "heatmap_pvalues.csv", &heatmap_csv(&labels, &pairs, HeatmapKind::PValues))?;
    for (name, csv) in &score_files {
        write_file(out, name, csv)?;
    }
    write_file(out, MANIFEST_FILE, &to_json(&Manifest::new("analyze", cfg.seed, cfg.to_kv()))?)?;
    Ok(pairs)
}

/// Closest vocabulary entries by edit distance, ties broken by word.
pub fn nearest_words<'a>(word: &str, vocab: &'a [String], k: usize) -> Vec<&'a str> {
    let mut scored: Vec<(usize, &str)> = vocab.iter().map(|w| (strsim::levenshtein(word, w), w.as_str())).collect();
    scored.sort();
    scored.into_iter().take(k).map(|(_, w)| w).collect()
}

pub fn cmd_score(cfg: &RunConfig, word: &str) -> CliResult<PathBuf> {
    let corpus = load_corpus(cfg)?;
    if !corpus.contains_word(word) {
        let near = nearest_words(word, corpus.shared_vocab(), SUGGESTIONS);
        return Err(CliError::User(format!("{}; nearest: {}", Error::WordNotFound(word.to_string()), near.join(", "))));
    }
    let pairs_path = cfg.output_dir.join(PAIRS_FILE);
    let text = fs::read_to_string(&pairs_path)
        .map_err(|e| CliError::User(format!("cannot read `{}` (run `analyze` first): {e}", pairs_path.display())))?;
    let pairs: Vec<PairAnalysis> =
        serde_json::from_str(&text).map_err(|e| CliError::User(format!("cannot parse `{}`: {e}", pairs_path.display())))?;
    let labels = corpus.labels();
    for p in &pairs {
        if labels.get(p.index_a) != Some(&p.period_a) || labels.get(p.index_b) != Some(&p.period_b) {
            return Err(CliError::User(format!(
                "`{}` does not match the periods in `{}`",
                pairs_path.display(),
                cfg.input_dir.display()
            )));
        }
    }
    let series = score_series(word, &PairSelections::from_pairs(&pairs), &corpus, cfg.empty_pair_policy)?;
    let name = series_file_name(word);
    write_file(&cfg.output_dir, &name, &series.to_csv())?;
    Ok(cfg.output_dir.join(name))
}

pub fn cmd_synth(spec: &SynthSpec, out: &Path) -> CliResult<()> {
    let corpus = generate(spec)?;
    write_corpus(&corpus, out)?;
    let mut config = spec.to_kv();
    config.insert("output_dir".into(), out.display().to_string());
    write_file(out, MANIFEST_FILE, &to_json(&Manifest::new("synth", spec.seed, config))?)
}
