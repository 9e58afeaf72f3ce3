//! Configuration of the `analyze` and `score` subcommands.

use std::fs;
use std::path::{Path, PathBuf};

use mmd_sense::analysis::EmptyPairPolicy;
use mmd_sense::config::{parse_kv, parse_value, KvMap};
use mmd_sense::embedding::EmbeddingFormat;
use mmd_sense::permutation::DEFAULT_PERMUTATIONS;
use mmd_sense::selection::OptimizerConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

const OPTIMIZER_PREFIX: &str = "optimizer.";

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub input_dir: PathBuf,
    pub output_dir: PathBuf,
    pub format: EmbeddingFormat,
    pub n_train: usize,
    pub n_test: usize,
    /// Drives the vocabulary split, the CV folds and the permutations.
    pub seed: u64,
    pub optimizer: OptimizerConfig,
    pub n_permutations: usize,
    pub allowlist: Option<PathBuf>,
    /// One label per line, in sorted-filename order.
    pub labels: Option<PathBuf>,
    pub empty_pair_policy: EmptyPairPolicy,
}

impl RunConfig {
    pub fn from_kv(map: &KvMap) -> CliResult<Self> {
        let get = |k: &str| map.get(k).map(String::as_str);
        let required = |k: &str| get(k).ok_or_else(|| CliError::User(format!("missing config key `{k}`")));
        for key in map.keys() {
            let known = matches!(
                key.as_str(),
                "input_dir"
                    | "output_dir"
                    | "format"
                    | "n_train"
                    | "n_test"
                    | "seed"
                    | "n_permutations"
                    | "allowlist"
                    | "labels"
                    | "score.empty_pair_policy"
            ) || key.starts_with(OPTIMIZER_PREFIX);
            if !known {
                return Err(CliError::User(format!("unknown config key `{key}`")));
            }
        }
        if map.contains_key("optimizer.seed") {
            return Err(CliError::User("set `seed`, not `optimizer.seed`".into()));
        }
        let seed = get("seed").map(|v| parse_value("seed", v)).transpose()?.unwrap_or(0);
        let mut optimizer = OptimizerConfig::from_kv(map, OPTIMIZER_PREFIX)?;
        optimizer.seed = seed;
        let cfg = RunConfig {
            input_dir: PathBuf::from(required("input_dir")?),
            output_dir: PathBuf::from(required("output_dir")?),
            format: get("format").map(str::parse).transpose()?.unwrap_or_default(),
            n_train: get("n_train").map(|v| parse_value("n_train", v)).transpose()?.unwrap_or(2000),
            n_test: get("n_test").map(|v| parse_value("n_test", v)).transpose()?.unwrap_or(300),
            seed,
            optimizer,
            n_permutations: get("n_permutations")
                .map(|v| parse_value("n_permutations", v))
                .transpose()?
                .unwrap_or(DEFAULT_PERMUTATIONS),
            allowlist: get("allowlist").filter(|v| !v.is_empty()).map(PathBuf::from),
            labels: get("labels").filter(|v| !v.is_empty()).map(PathBuf::from),
            empty_pair_policy: get("score.empty_pair_policy").map(str::parse).transpose()?.unwrap_or_default(),
        };
        if cfg.n_train == 0 || cfg.n_test == 0 {
            return Err(CliError::User("n_train and n_test must be positive".into()));
        }
        Ok(cfg)
    }

    /// Full configuration, defaults included.
    pub fn to_kv(&self) -> KvMap {
        let mut map = self.optimizer.to_kv(OPTIMIZER_PREFIX);
        map.remove("optimizer.seed");
        let mut put = |k: &str, v: String| {
            map.insert(k.to_string(), v);
        };
        put("input_dir", self.input_dir.display().to_string());
        put("output_dir", self.output_dir.display().to_string());
        put("format", self.format.to_string());
        put("n_train", self.n_train.to_string());
        put("n_test", self.n_test.to_string());
        put("seed", self.seed.to_string());
        put("n_permutations", self.n_permutations.to_string());
        if let Some(p) = &self.allowlist {
            put("allowlist", p.display().to_string());
        }
        if let Some(p) = &self.labels {
            put("labels", p.display().to_string());
        }
        put("score.empty_pair_policy", self.empty_pair_policy.to_string());
        map
    }

    /// Paths that must exist before anything is written.
    pub fn check_paths(&self) -> CliResult<()> {
        if !self.input_dir.is_dir() {
            return Err(CliError::User(format!("input_dir `{}` is not a directory", self.input_dir.display())));
        }
        for p in self.allowlist.iter().chain(&self.labels) {
            if !p.is_file() {
                return Err(CliError::User(format!("`{}` does not exist", p.display())));
            }
        }
        Ok(())
    }
}

/// Written next to every run's outputs; accepted back by `--config`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub config: KvMap,
}

impl Manifest {
    pub fn new(command: &str, seed: u64, config: KvMap) -> Self {
        Manifest {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            seed,
            config,
        }
    }
}

/// Reads `key = value` text, or the `config` object of a manifest.
pub fn read_config_file(path: &Path) -> CliResult<KvMap> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::User(format!("cannot read config `{}`: {e}", path.display())))?;
    if text.trim_start().starts_with('{') {
        let manifest: Manifest = serde_json::from_str(&text)
            .map_err(|e| CliError::User(format!("cannot parse manifest `{}`: {e}", path.display())))?;
        return Ok(manifest.config);
    }
    Ok(parse_kv(&text)?)
}
