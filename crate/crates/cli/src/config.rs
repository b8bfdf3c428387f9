//! The run configuration file.
//!
//! A single TOML file whose keys mirror the command-line flags. Relative
//! paths are resolved against the directory holding the file. Every flag
//! given on the command line wins over the matching key.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};

use codeinterp::classify::Family;
use codeinterp::corpus::CleaningConfig;
use codeinterp::taxonomy::Category;
use codeinterp_neural::PretrainConfig;

use crate::UsageError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestSection {
    pub input_dir: Option<PathBuf>,
    pub meta: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub provision_pattern: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImportSection {
    pub tsv: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub prefix: Option<String>,
    /// Class names indexed by the numeric labels of the file.
    pub class_names: Vec<String>,
    /// Extra label spellings, added to the built-in ones.
    pub labels: BTreeMap<String, Category>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentSection {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub target: Option<usize>,
    pub categories: Option<Vec<Category>>,
    pub magnitude_band: Option<(f64, f64)>,
    pub comparators: Option<Vec<Vec<String>>>,
    pub attempts_per_example: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub data: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    /// Train, validation and test shares, as decimals or fractions.
    pub ratios: Option<[String; 3]>,
    pub stratified: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub train: Option<PathBuf>,
    pub val: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub family: Option<Family>,
    pub checkpoint_id: Option<String>,
    pub epochs: Option<usize>,
    pub padding_size: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate_grid: Option<Vec<f64>>,
    pub ngram_range: Option<[usize; 2]>,
    pub pretrained_embeddings: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoreSection {
    pub threshold_pct: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportSection {
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    /// Directories searched for named encoder checkpoints.
    pub checkpoint_roots: Vec<PathBuf>,
    pub ingest: IngestSection,
    pub cleaning: Option<CleaningConfig>,
    pub import: ImportSection,
    pub augment: AugmentSection,
    pub split: SplitSection,
    pub train: TrainSection,
    pub score: ScoreSection,
    pub report: ReportSection,
    pub pretrain: Option<PretrainConfig>,
}

/// A parsed config file together with where it came from.
#[derive(Debug, Clone, Default)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub path: Option<PathBuf>,
    /// Raw file bytes, hashed into run manifests.
    pub bytes: Vec<u8>,
}

impl LoadedConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<LoadedConfig> {
        let Some(path) = path else {
            return Ok(LoadedConfig::default());
        };
        let bytes = fs::read(path).with_context(|| format!("reading config {}", path.display()))?;
        let text = std::str::from_utf8(&bytes)
            .map_err(|e| UsageError(format!("{}: not UTF-8: {e}", path.display())))?;
        let mut config: RunConfig =
            toml::from_str(text).map_err(|e| UsageError(format!("{}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        config.resolve_paths(&base);
        Ok(LoadedConfig {
            config,
            path: Some(path.to_path_buf()),
            bytes,
        })
    }
}

fn rebase(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

impl RunConfig {
    fn resolve_paths(&mut self, base: &Path) {
        for root in &mut self.checkpoint_roots {
            if root.is_relative() {
                *root = base.join(&*root);
            }
        }
        let i = &mut self.ingest;
        for p in [&mut i.input_dir, &mut i.meta, &mut i.out] {
            rebase(base, p);
        }
        rebase(base, &mut self.import.tsv);
        rebase(base, &mut self.import.out);
        rebase(base, &mut self.augment.data);
        rebase(base, &mut self.augment.out);
        rebase(base, &mut self.split.data);
        rebase(base, &mut self.split.out_dir);
        let t = &mut self.train;
        for p in [&mut t.train, &mut t.val, &mut t.out, &mut t.pretrained_embeddings] {
            rebase(base, p);
        }
        rebase(base, &mut self.report.out_dir);
    }
}

/// The flag value if given, else the config value, else a usage error.
pub fn require<T>(flag: Option<T>, config: Option<T>, name: &str) -> Result<T, UsageError> {
    flag.or(config)
        .ok_or_else(|| UsageError(format!("missing --{name} (no value on the command line or in the config)")))
}

/// Fails with a usage error unless `path` exists.
pub fn must_exist(path: &Path, what: &str) -> Result<(), UsageError> {
    if path.exists() {
        Ok(())
    } else {
        Err(UsageError(format!("{what} {} does not exist", path.display())))
    }
}
