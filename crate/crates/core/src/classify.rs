//! Classifier training, model selection and prediction.
//!
//! Backends plug in through [`Backend`]. The driver in [`train`] runs every
//! learning rate of the grid for the configured number of epochs, scores
//! each epoch on the validation split and keeps the best snapshot.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::ClassifyError;
use crate::metrics;
use crate::taxonomy::Category;

pub type Probabilities = [f64; Category::COUNT];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    NgramLinear,
    Cnn,
    Rnn,
    RnnAttention,
    TransformerScratch,
    PretrainedEncoder,
}

impl Family {
    pub const ALL: [Family; 6] = [
        Family::NgramLinear,
        Family::Cnn,
        Family::Rnn,
        Family::RnnAttention,
        Family::TransformerScratch,
        Family::PretrainedEncoder,
    ];

    pub const fn as_str(self) -> &'static str {
        match self {
            Family::NgramLinear => "ngram_linear",
            Family::Cnn => "cnn",
            Family::Rnn => "rnn",
            Family::RnnAttention => "rnn_attention",
            Family::TransformerScratch => "transformer_scratch",
            Family::PretrainedEncoder => "pretrained_encoder",
        }
    }

    /// Whether inputs are token sequences cut to `padding_size`.
    pub const fn is_sequence_model(self) -> bool {
        !matches!(self, Family::NgramLinear)
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Family {
    type Err = ClassifyError;

    fn from_str(s: &str) -> Result<Family, ClassifyError> {
        Family::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| ClassifyError::UnsupportedFamily(s.to_string()))
    }
}

pub const DEFAULT_CHECKPOINT: &str = "bert-base-chinese";
pub const ENCODER_LR_GRID: [f64; 4] = [7e-5, 5e-5, 3e-5, 1e-5];
pub const BASELINE_LR_GRID: [f64; 4] = [1e-3, 5e-4, 2.5e-4, 1e-4];
/// Full-batch gradient descent on L2-normalized features stays monotone
/// for any step up to 2.
pub const NGRAM_LR_GRID: [f64; 4] = [1.0, 0.5, 0.25, 0.1];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub family: Family,
    #[serde(default)]
    pub checkpoint_id: Option<String>,
    pub epochs: usize,
    pub padding_size: usize,
    pub learning_rate_grid: Vec<f64>,
    pub batch_size: usize,
    pub seed: u64,
    /// Character n-gram orders for the linear baseline, inclusive.
    #[serde(default = "default_ngram_range")]
    pub ngram_range: [usize; 2],
    /// Word2vec-style text file for the sequence baselines. Embeddings
    /// start random when unset.
    #[serde(default)]
    pub pretrained_embeddings: Option<PathBuf>,
}

fn default_ngram_range() -> [usize; 2] {
    [1, 3]
}

impl BackendConfig {
    pub fn for_family(family: Family) -> BackendConfig {
        let (grid, epochs, checkpoint) = match family {
            Family::NgramLinear => (NGRAM_LR_GRID.to_vec(), 300, None),
            Family::PretrainedEncoder => {
                (ENCODER_LR_GRID.to_vec(), 100, Some(DEFAULT_CHECKPOINT.to_string()))
            }
            _ => (BASELINE_LR_GRID.to_vec(), 100, None),
        };
        BackendConfig {
            family,
            checkpoint_id: checkpoint,
            epochs,
            padding_size: 64,
            learning_rate_grid: grid,
            batch_size: 32,
            seed: 0,
            ngram_range: default_ngram_range(),
            pretrained_embeddings: None,
        }
    }

    pub fn validate(&self) -> Result<(), ClassifyError> {
        let bad = |m: String| Err(ClassifyError::InvalidConfig(m));
        if self.learning_rate_grid.is_empty() {
            return bad("learning_rate_grid is empty".into());
        }
        if let Some(lr) = self
            .learning_rate_grid
            .iter()
            .find(|lr| !(lr.is_finite() && **lr > 0.0))
        {
            return bad(format!("learning rate {lr} is not a positive number"));
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.padding_size < 8 {
            return bad(format!("padding_size {} is below 8", self.padding_size));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        let [lo, hi] = self.ngram_range;
        if lo == 0 || lo > hi {
            return bad(format!("ngram_range [{lo}, {hi}] is not a valid range"));
        }
        if self.family == Family::PretrainedEncoder && self.checkpoint_id.is_none() {
            return bad("pretrained_encoder needs a checkpoint_id".into());
        }
        Ok(())
    }

    pub fn embedding_mode(&self) -> &'static str {
        match (self.family.is_sequence_model(), &self.pretrained_embeddings) {
            (false, _) => "none",
            (true, _) if self.family == Family::PretrainedEncoder => "checkpoint",
            (true, Some(_)) => "pretrained",
            (true, None) => "random",
        }
    }
}

/// A trained, immutable scorer.
pub trait Predictor: Send + Sync {
    fn probabilities(&self, texts: &[&str]) -> Result<Vec<Probabilities>, ClassifyError>;

    /// Writes the weights into `dir`. The manifest is written by the caller.
    fn save(&self, dir: &Path) -> Result<(), ClassifyError>;
}

/// Training state for one learning rate.
pub trait TrainingSession {
    /// Runs one epoch and returns the mean training loss.
    fn run_epoch(&mut self) -> Result<f64, ClassifyError>;

    fn probabilities(&self, texts: &[&str]) -> Result<Vec<Probabilities>, ClassifyError>;

    /// Freezes the current parameters.
    fn snapshot(&self) -> Result<Box<dyn Predictor>, ClassifyError>;
}

pub trait Backend {
    fn family(&self) -> Family;

    fn start<'a>(
        &'a self,
        cfg: &BackendConfig,
        lr: f64,
        train: &Dataset,
    ) -> Result<Box<dyn TrainingSession + 'a>, ClassifyError>;

    fn load(&self, cfg: &BackendConfig, dir: &Path) -> Result<Box<dyn Predictor>, ClassifyError>;
}

/// Highest probability, lowest ordinal on ties.
pub fn argmax(probs: &Probabilities) -> (Category, f64) {
    let mut best = 0;
    for i in 1..Category::COUNT {
        if probs[i] > probs[best] {
            best = i;
        }
    }
    (Category::from_ordinal(best).expect("ordinal in range"), probs[best])
}

/// Softmax over raw class scores.
pub fn softmax(scores: &[f64; Category::COUNT]) -> Probabilities {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = [0.0; Category::COUNT];
    let mut sum = 0.0;
    for (o, s) in out.iter_mut().zip(scores) {
        *o = (s - max).exp();
        sum += *o;
    }
    for o in &mut out {
        *o /= sum;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub category: Category,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub lr: f64,
    pub epoch: usize,
    pub train_loss: f64,
    pub val_weighted_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochRecord>,
    pub warnings: Vec<String>,
}

impl TrainingLog {
    /// Highest validation score logged for one learning rate.
    pub fn best_for_lr(&self, lr: f64) -> Option<f64> {
        self.epochs
            .iter()
            .filter(|r| r.lr == lr)
            .map(|r| r.val_weighted_f1)
            .fold(None, |acc, f| Some(acc.map_or(f, |a: f64| a.max(f))))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub family: Family,
    pub checkpoint_id: Option<String>,
    pub winning_lr: f64,
    pub winning_epoch: usize,
    pub label_set: Vec<Category>,
    pub seed: u64,
    pub embedding_mode: String,
    pub metrics: BTreeMap<String, f64>,
    pub config: BackendConfig,
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const LOG_FILE: &str = "training_log.json";

impl ModelManifest {
    pub fn read(dir: &Path) -> Result<ModelManifest, ClassifyError> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|source| ClassifyError::Io { path: path.clone(), source })?;
        let manifest: ModelManifest = serde_json::from_str(&text)
            .map_err(|e| ClassifyError::Artifact(format!("{}: {e}", path.display())))?;
        if manifest.label_set != Category::ALL {
            return Err(ClassifyError::Artifact(format!(
                "{}: label set does not match the category taxonomy",
                path.display()
            )));
        }
        Ok(manifest)
    }
}

pub struct ClassifierModel {
    pub manifest: ModelManifest,
    pub log: TrainingLog,
    predictor: Box<dyn Predictor>,
}

impl fmt::Debug for ClassifierModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ClassifierModel")
            .field("manifest", &self.manifest)
            .finish_non_exhaustive()
    }
}

impl ClassifierModel {
    pub fn from_parts(manifest: ModelManifest, log: TrainingLog, predictor: Box<dyn Predictor>) -> ClassifierModel {
        ClassifierModel { manifest, log, predictor }
    }

    pub fn config(&self) -> &BackendConfig {
        &self.manifest.config
    }

    pub fn probabilities(&self, texts: &[&str]) -> Result<Vec<Probabilities>, ClassifyError> {
        self.predictor.probabilities(texts)
    }

    /// One prediction per text, in input order.
    pub fn predict(&self, texts: &[&str]) -> Result<Vec<Prediction>, ClassifyError> {
        Ok(self
            .predictor
            .probabilities(texts)?
            .iter()
            .map(|p| {
                let (category, confidence) = argmax(p);
                Prediction {
                    category,
                    confidence: confidence.clamp(0.0, 1.0),
                }
            })
            .collect())
    }

    pub fn save(&self, dir: &Path) -> Result<(), ClassifyError> {
        fs::create_dir_all(dir).map_err(|source| ClassifyError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        self.predictor.save(dir)?;
        write_pretty(&dir.join(MANIFEST_FILE), &self.manifest)?;
        write_pretty(&dir.join(LOG_FILE), &self.log)
    }

    pub fn load(dir: &Path, backend: &dyn Backend) -> Result<ClassifierModel, ClassifyError> {
        let manifest = ModelManifest::read(dir)?;
        if manifest.family != backend.family() {
            return Err(ClassifyError::Artifact(format!(
                "model is {} but backend is {}",
                manifest.family,
                backend.family()
            )));
        }
        let log_path = dir.join(LOG_FILE);
        let log = match fs::read_to_string(&log_path) {
            Ok(text) => serde_json::from_str(&text)
                .map_err(|e| ClassifyError::Artifact(format!("{}: {e}", log_path.display())))?,
            Err(_) => TrainingLog::default(),
        };
        let predictor = backend.load(&manifest.config, dir)?;
        Ok(ClassifierModel { manifest, log, predictor })
    }
}

fn write_pretty<T: Serialize>(path: &Path, value: &T) -> Result<(), ClassifyError> {
    let text = serde_json::to_string_pretty(value).expect("serializable") + "\n";
    fs::write(path, text).map_err(|source| ClassifyError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn weighted_f1_of(probs: &[Probabilities], golds: &[Category]) -> f64 {
    let preds: Vec<Category> = probs.iter().map(|p| argmax(p).0).collect();
    metrics::evaluate(&preds, golds)
        .map(|r| r.weighted_f1)
        .unwrap_or(0.0)
}

/// Grid search over learning rates, keeping the best validation snapshot.
///
/// Ties keep the earlier learning rate and the earlier epoch.
pub fn train(
    backend: &dyn Backend,
    cfg: &BackendConfig,
    train_set: &Dataset,
    val_set: &Dataset,
) -> Result<ClassifierModel, ClassifyError> {
    cfg.validate()?;
    if cfg.family != backend.family() {
        return Err(ClassifyError::InvalidConfig(format!(
            "config family {} does not match backend {}",
            cfg.family,
            backend.family()
        )));
    }
    if train_set.is_empty() {
        return Err(ClassifyError::EmptySplit("train"));
    }
    if val_set.is_empty() {
        return Err(ClassifyError::EmptySplit("validation"));
    }
    let train_ids: HashSet<&str> = train_set.examples().iter().map(|e| e.id()).collect();
    if let Some(shared) = val_set.examples().iter().find(|e| train_ids.contains(e.id())) {
        return Err(ClassifyError::OverlappingSplits(shared.id().to_string()));
    }

    let mut log = TrainingLog::default();
    for c in Category::ALL {
        if train_set.counts()[c.ordinal()] == 0 {
            let msg = format!("category {c} has no training examples");
            log::warn!("{msg}");
            log.warnings.push(msg);
        }
    }

    let val_texts = val_set.texts();
    let val_labels = val_set.labels();
    let mut best: Option<(f64, f64, usize, Box<dyn Predictor>)> = None;

    for &lr in &cfg.learning_rate_grid {
        let mut session = backend.start(cfg, lr, train_set)?;
        for epoch in 1..=cfg.epochs {
            let loss = session.run_epoch()?;
            if !loss.is_finite() {
                return Err(ClassifyError::DivergedTraining { lr, epoch });
            }
            let f1 = weighted_f1_of(&session.probabilities(&val_texts)?, &val_labels);
            log::info!("lr {lr:e} epoch {epoch}: loss {loss:.6}, val weighted F1 {f1:.4}");
            log.epochs.push(EpochRecord {
                lr,
                epoch,
                train_loss: loss,
                val_weighted_f1: f1,
            });
            if best.as_ref().is_none_or(|b| f1 > b.0) {
                best = Some((f1, lr, epoch, session.snapshot()?));
            }
        }
    }

    let (f1, winning_lr, winning_epoch, predictor) = best.expect("grid and epochs are non-empty");
    let manifest = ModelManifest {
        family: cfg.family,
        checkpoint_id: cfg.checkpoint_id.clone(),
        winning_lr,
        winning_epoch,
        label_set: Category::ALL.to_vec(),
        seed: cfg.seed,
        embedding_mode: cfg.embedding_mode().to_string(),
        metrics: BTreeMap::from([("val_weighted_f1".to_string(), f1)]),
        config: cfg.clone(),
    };
    Ok(ClassifierModel { manifest, log, predictor })
}

/// Maps a checkpoint name to a local directory.
pub trait CheckpointResolver {
    fn resolve(&self, checkpoint_id: &str) -> Result<PathBuf, ClassifyError>;
}

/// Looks the name up as a path, then under each root directory in order.
#[derive(Debug, Clone, Default)]
pub struct LocalResolver {
    pub roots: Vec<PathBuf>,
}

impl LocalResolver {
    pub fn new(roots: Vec<PathBuf>) -> LocalResolver {
        LocalResolver { roots }
    }
}

impl CheckpointResolver for LocalResolver {
    fn resolve(&self, checkpoint_id: &str) -> Result<PathBuf, ClassifyError> {
        let direct = PathBuf::from(checkpoint_id);
        if direct.is_dir() {
            return Ok(direct);
        }
        self.roots
            .iter()
            .map(|root| root.join(checkpoint_id))
            .find(|p| p.is_dir())
            .ok_or_else(|| ClassifyError::CheckpointNotFound(checkpoint_id.to_string()))
    }
}

/// Unlabeled in-domain text, one passage per line.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainCorpus {
    lines: Vec<String>,
}

impl DomainCorpus {
    /// Blank lines are dropped.
    pub fn new<I, S>(lines: I) -> Result<DomainCorpus, ClassifyError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let lines: Vec<String> = lines
            .into_iter()
            .map(|l| l.as_ref().trim().to_string())
            .filter(|l| !l.is_empty())
            .collect();
        if lines.is_empty() {
            return Err(ClassifyError::CorpusTooSmall { lines: 0, floor: 1 });
        }
        Ok(DomainCorpus { lines })
    }

    pub fn load(path: &Path) -> Result<DomainCorpus, ClassifyError> {
        let text = fs::read_to_string(path).map_err(|source| ClassifyError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        DomainCorpus::new(text.lines())
    }

    pub fn lines(&self) -> &[String] {
        &self.lines
    }

    pub fn len(&self) -> usize {
        self.lines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }
}


#[cfg(test)]
mod properties {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn softmax_is_a_distribution(scores in prop::array::uniform7(-50.0f64..50.0)) {
            let p = softmax(&scores);
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(p.iter().all(|x| (0.0..=1.0).contains(x)));
            let shifted = softmax(&scores.map(|s| s + 7.5));
            for (a, b) in p.iter().zip(&shifted) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn argmax_picks_the_first_maximum(probs in prop::array::uniform7(prop::sample::select(vec![0.0, 0.1, 0.25, 0.5]))) {
            let (c, p) = argmax(&probs);
            let max = probs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let first = probs.iter().position(|&x| x == max).unwrap();
            prop_assert_eq!(c.ordinal(), first);
            prop_assert_eq!(p, max);
        }
    }
}
