//! Character n-gram TF-IDF features with multinomial logistic regression.
//!
//! Training is full-batch gradient descent on the mean cross-entropy,
//! starting from zero weights. Feature rows are L2-normalized, which bounds
//! the curvature of the objective by 1, so any step size up to 2 gives a
//! non-increasing loss.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classify::{
    softmax, Backend, BackendConfig, Family, Predictor, Probabilities, TrainingSession,
};
use crate::dataset::Dataset;
use crate::error::ClassifyError;
use crate::taxonomy::Category;

const K: usize = Category::COUNT;
pub const WEIGHTS_FILE: &str = "weights.json";

type SparseRow = Vec<(usize, f64)>;

fn char_ngrams(text: &str, [lo, hi]: [usize; 2]) -> Vec<String> {
    let chars: Vec<char> = text.chars().flat_map(char::to_lowercase).collect();
    let mut out = Vec::new();
    for n in lo..=hi {
        out.extend(chars.windows(n).map(|w| w.iter().collect::<String>()));
    }
    out
}

/// Vocabulary and inverse document frequencies fitted on training texts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TfidfFeaturizer {
    pub ngram_range: [usize; 2],
    /// Feature names in column order.
    pub vocab: Vec<String>,
    pub idf: Vec<f64>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl TfidfFeaturizer {
    /// Smoothed idf: ln((1 + n) / (1 + df)) + 1.
    pub fn fit(texts: &[&str], ngram_range: [usize; 2]) -> TfidfFeaturizer {
        let mut df: BTreeMap<String, usize> = BTreeMap::new();
        for t in texts {
            let uniq: BTreeSet<String> = char_ngrams(t, ngram_range).into_iter().collect();
            for g in uniq {
                *df.entry(g).or_default() += 1;
            }
        }
        let n = texts.len() as f64;
        let (vocab, idf) = df
            .into_iter()
            .map(|(g, d)| (g, ((1.0 + n) / (1.0 + d as f64)).ln() + 1.0))
            .unzip();
        TfidfFeaturizer {
            ngram_range,
            vocab,
            idf,
            index: HashMap::new(),
        }
        .indexed()
    }

    fn indexed(mut self) -> TfidfFeaturizer {
        self.index = self.vocab.iter().enumerate().map(|(i, g)| (g.clone(), i)).collect();
        self
    }

    pub fn dim(&self) -> usize {
        self.vocab.len()
    }

    /// Sparse L2-normalized row sorted by column. Unknown n-grams are ignored.
    pub fn transform(&self, text: &str) -> SparseRow {
        let mut tf: BTreeMap<usize, f64> = BTreeMap::new();
        for g in char_ngrams(text, self.ngram_range) {
            if let Some(&i) = self.index.get(&g) {
                *tf.entry(i).or_default() += 1.0;
            }
        }
        let mut row: SparseRow = tf.into_iter().map(|(i, c)| (i, c * self.idf[i])).collect();
        let norm = row.iter().map(|(_, v)| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for (_, v) in &mut row {
                *v /= norm;
            }
        }
        row
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NgramModel {
    pub features: TfidfFeaturizer,
    /// Row-major, one row of `dim` weights per category.
    pub weights: Vec<Vec<f64>>,
    pub bias: [f64; K],
}

impl NgramModel {
    fn zeros(features: TfidfFeaturizer) -> NgramModel {
        let d = features.dim();
        NgramModel {
            features,
            weights: vec![vec![0.0; d]; K],
            bias: [0.0; K],
        }
    }

    fn scores(&self, row: &SparseRow) -> [f64; K] {
        let mut s = self.bias;
        for (k, sk) in s.iter_mut().enumerate() {
            let w = &self.weights[k];
            *sk += row.iter().map(|&(i, v)| w[i] * v).sum::<f64>();
        }
        s
    }

    pub fn probabilities_of(&self, text: &str) -> Probabilities {
        softmax(&self.scores(&self.features.transform(text)))
    }
}

impl Predictor for NgramModel {
    fn probabilities(&self, texts: &[&str]) -> Result<Vec<Probabilities>, ClassifyError> {
        Ok(texts.iter().map(|t| self.probabilities_of(t)).collect())
    }

    fn save(&self, dir: &Path) -> Result<(), ClassifyError> {
        let path = dir.join(WEIGHTS_FILE);
        let text = serde_json::to_string(self).expect("serializable");
        fs::write(&path, text).map_err(|source| ClassifyError::Io { path, source })
    }
}

/// Mean cross-entropy and its gradient at the current parameters.
struct Evaluation {
    loss: f64,
    grad_w: Vec<Vec<f64>>,
    grad_b: [f64; K],
}

pub struct NgramSession {
    model: NgramModel,
    rows: Vec<SparseRow>,
    labels: Vec<usize>,
    lr: f64,
    current: Evaluation,
}

impl NgramSession {
    fn evaluate(model: &NgramModel, rows: &[SparseRow], labels: &[usize]) -> Evaluation {
        let d = model.features.dim();
        let n = rows.len() as f64;
        let mut grad_w = vec![vec![0.0; d]; K];
        let mut grad_b = [0.0; K];
        let mut loss = 0.0;
        for (row, &y) in rows.iter().zip(labels) {
            let scores = model.scores(row);
            let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let log_z = max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
            loss += log_z - scores[y];
            for k in 0..K {
                let delta = (scores[k] - log_z).exp() - if k == y { 1.0 } else { 0.0 };
                grad_b[k] += delta / n;
                for &(i, v) in row {
                    grad_w[k][i] += delta * v / n;
                }
            }
        }
        Evaluation {
            loss: loss / n,
            grad_w,
            grad_b,
        }
    }

    /// Loss at the current parameters.
    pub fn loss(&self) -> f64 {
        self.current.loss
    }
}

impl TrainingSession for NgramSession {
    fn run_epoch(&mut self) -> Result<f64, ClassifyError> {
        let g = &self.current;
        for k in 0..K {
            self.model.bias[k] -= self.lr * g.grad_b[k];
            for (w, dw) in self.model.weights[k].iter_mut().zip(&g.grad_w[k]) {
                *w -= self.lr * dw;
            }
        }
        self.current = NgramSession::evaluate(&self.model, &self.rows, &self.labels);
        Ok(self.current.loss)
    }

    fn probabilities(&self, texts: &[&str]) -> Result<Vec<Probabilities>, ClassifyError> {
        self.model.probabilities(texts)
    }

    fn snapshot(&self) -> Result<Box<dyn Predictor>, ClassifyError> {
        Ok(Box::new(self.model.clone()))
    }
}

/// The n-gram linear backend. `batch_size` and `padding_size` are unused:
/// every epoch is one full-batch step over untruncated text.
#[derive(Debug, Clone, Copy, Default)]
pub struct NgramBackend;

impl NgramBackend {
    pub fn session(cfg: &BackendConfig, lr: f64, train: &Dataset) -> NgramSession {
        let texts = train.texts();
        let features = TfidfFeaturizer::fit(&texts, cfg.ngram_range);
        let rows: Vec<SparseRow> = texts.iter().map(|t| features.transform(t)).collect();
        let labels: Vec<usize> = train.labels().iter().map(|c| c.ordinal()).collect();
        let model = NgramModel::zeros(features);
        let current = NgramSession::evaluate(&model, &rows, &labels);
        NgramSession {
            model,
            rows,
            labels,
            lr,
            current,
        }
    }
}

impl Backend for NgramBackend {
    fn family(&self) -> Family {
        Family::NgramLinear
    }

    fn start<'a>(
        &'a self,
        cfg: &BackendConfig,
        lr: f64,
        train: &Dataset,
    ) -> Result<Box<dyn TrainingSession + 'a>, ClassifyError> {
        if cfg.family != Family::NgramLinear {
            return Err(ClassifyError::InvalidConfig(format!(
                "ngram backend cannot train family {}",
                cfg.family
            )));
        }
        Ok(Box::new(NgramBackend::session(cfg, lr, train)))
    }

    fn load(&self, _cfg: &BackendConfig, dir: &Path) -> Result<Box<dyn Predictor>, ClassifyError> {
        let path = dir.join(WEIGHTS_FILE);
        let text = fs::read_to_string(&path).map_err(|source| ClassifyError::Io {
            path: path.clone(),
            source,
        })?;
        let mut model: NgramModel = serde_json::from_str(&text)
            .map_err(|e| ClassifyError::Artifact(format!("{}: {e}", path.display())))?;
        if model.weights.len() != K
            || model.weights.iter().any(|w| w.len() != model.features.dim())
            || model.features.idf.len() != model.features.dim()
        {
            return Err(ClassifyError::Artifact(format!(
                "{}: weight shapes do not match the vocabulary",
                path.display()
            )));
        }
        model.features = model.features.indexed();
        Ok(Box::new(model))
    }
}
