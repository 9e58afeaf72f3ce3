//! Synthetic diachronic corpora with known shifted dimensions.
//!
//! Word `v` at period `t` is `rho * b_v + sqrt(1 - rho^2) * e_{v,t}` with
//! standard normal `b` and `e`, so every coordinate is standard normal and
//! `rho` controls how much a word's vectors persist over time. In each shifted
//! period a fixed subset of words moves by `shift_magnitude` along every
//! shifted dimension.

use std::fs;
use std::path::Path;

use mmd_sense::config::{fmt_f64, parse_list, parse_value, KvMap};
use mmd_sense::embedding::{write_word2vec_text, EmbeddingSnapshot};
use ndarray::Array2;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const TRUTH_FILE: &str = "truth.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_periods: usize,
    pub dim: usize,
    pub n_words: usize,
    pub seed: u64,
    pub shift_dims: Vec<usize>,
    /// Zero-based period indices that carry the shift.
    pub shift_periods: Vec<usize>,
    pub shift_magnitude: f64,
    /// Fraction of words that move in the shifted periods.
    pub shift_fraction: f64,
    pub persistence: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_periods: 2,
            dim: 20,
            n_words: 500,
            seed: 0,
            shift_dims: vec![0, 1, 2],
            shift_periods: vec![1],
            shift_magnitude: 1.0,
            shift_fraction: 1.0,
            persistence: 0.0,
        }
    }
}

impl SynthSpec {
    pub fn from_kv(map: &KvMap) -> CliResult<Self> {
        let mut s = SynthSpec::default();
        for (key, value) in map {
            let k = key.as_str();
            match k {
                "n_periods" => s.n_periods = parse_value(k, value)?,
                "dim" => s.dim = parse_value(k, value)?,
                "n_words" => s.n_words = parse_value(k, value)?,
                "seed" => s.seed = parse_value(k, value)?,
                "shift_dims" => s.shift_dims = parse_list(k, value)?,
                "shift_periods" => s.shift_periods = parse_list(k, value)?,
                "shift_magnitude" => s.shift_magnitude = parse_value(k, value)?,
                "shift_fraction" => s.shift_fraction = parse_value(k, value)?,
                "persistence" => s.persistence = parse_value(k, value)?,
                // Accepted so that a synth manifest can be fed back as config.
                "output_dir" => {}
                other => return Err(CliError::User(format!("unknown synth key `{other}`"))),
            }
        }
        s.validate()?;
        Ok(s)
    }

    pub fn to_kv(&self) -> KvMap {
        let list = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(", ");
        [
            ("n_periods", self.n_periods.to_string()),
            ("dim", self.dim.to_string()),
            ("n_words", self.n_words.to_string()),
            ("seed", self.seed.to_string()),
            ("shift_dims", list(&self.shift_dims)),
            ("shift_periods", list(&self.shift_periods)),
            ("shift_magnitude", fmt_f64(self.shift_magnitude)),
            ("shift_fraction", fmt_f64(self.shift_fraction)),
            ("persistence", fmt_f64(self.persistence)),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |m: String| Err(CliError::User(format!("invalid synth spec: {m}")));
        if self.n_periods < 2 {
            return bad("n_periods must be at least 2".into());
        }
        if self.dim == 0 || self.n_words < 2 {
            return bad("dim must be positive and n_words at least 2".into());
        }
        if let Some(d) = self.shift_dims.iter().find(|&&d| d >= self.dim) {
            return bad(format!("shift dimension {d} is out of range"));
        }
        if let Some(p) = self.shift_periods.iter().find(|&&p| p >= self.n_periods) {
            return bad(format!("shift period {p} is out of range"));
        }
        if !self.shift_magnitude.is_finite() {
            return bad("shift_magnitude must be finite".into());
        }
        if !(0.0..=1.0).contains(&self.shift_fraction) {
            return bad("shift_fraction must lie in [0, 1]".into());
        }
        if !(0.0..=1.0).contains(&self.persistence) || self.persistence.is_nan() {
            return bad("persistence must lie in [0, 1]".into());
        }
        Ok(())
    }

    pub fn period_label(&self, t: usize) -> String {
        let width = (self.n_periods - 1).to_string().len().max(2);
        format!("t{t:0width$}")
    }

    pub fn word(&self, v: usize) -> String {
        let width = (self.n_words - 1).to_string().len();
        format!("w{v:0width$}")
    }
}

/// Ground truth written next to the generated files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTruth {
    pub spec: SynthSpec,
    pub period_labels: Vec<String>,
    pub shift_period_labels: Vec<String>,
    pub shift_dims: Vec<usize>,
    pub shifted_words: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub periods: Vec<EmbeddingSnapshot>,
    pub truth: SynthTruth,
}

pub fn generate(spec: &SynthSpec) -> CliResult<SynthCorpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (v, d) = (spec.n_words, spec.dim);
    let rho = spec.persistence;
    let noise = (1.0 - rho * rho).sqrt();
    let base = Array2::from_shape_fn((v, d), |_| rng.sample::<f64, _>(StandardNormal));
    let n_shifted = (spec.shift_fraction * v as f64).round() as usize;
    let mut shifted = sample(&mut rng, v, n_shifted).into_vec();
    shifted.sort_unstable();
    let vocab: Vec<String> = (0..v).map(|i| spec.word(i)).collect();

    let mut periods = Vec::with_capacity(spec.n_periods);
    for t in 0..spec.n_periods {
        let mut m = Array2::from_shape_fn((v, d), |(i, j)| rho * base[[i, j]] + noise * rng.sample::<f64, _>(StandardNormal));
        if spec.shift_periods.contains(&t) {
            for &i in &shifted {
                for &j in &spec.shift_dims {
                    m[[i, j]] += spec.shift_magnitude;
                }
            }
        }
        periods.push(EmbeddingSnapshot::new(spec.period_label(t), vocab.clone(), m)?);
    }
    let mut shift_periods = spec.shift_periods.clone();
    shift_periods.sort_unstable();
    shift_periods.dedup();
    let mut shift_dims = spec.shift_dims.clone();
    shift_dims.sort_unstable();
    shift_dims.dedup();
    let truth = SynthTruth {
        spec: spec.clone(),
        period_labels: (0..spec.n_periods).map(|t| spec.period_label(t)).collect(),
        shift_period_labels: shift_periods.iter().map(|&t| spec.period_label(t)).collect(),
        shift_dims,
        shifted_words: shifted.iter().map(|&i| vocab[i].clone()).collect(),
    };
    Ok(SynthCorpus { periods, truth })
}

/// Writes `<label>.txt` per period plus the truth file.
pub fn write_corpus(corpus: &SynthCorpus, dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::User(format!("cannot create `{}`: {e}", dir.display())))?;
    for p in &corpus.periods {
        write_word2vec_text(p, dir.join(format!("{}.txt", p.period_label())))?;
    }
    let json = serde_json::to_string_pretty(&corpus.truth).map_err(|e| CliError::Internal(e.to_string()))?;
    let path = dir.join(TRUTH_FILE);
    fs::write(&path, json + "\n").map_err(|e| CliError::User(format!("cannot write `{}`: {e}", path.display())))
}
