//! [`Backend`] implementation for the neural families.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use candle_core::{DType, Device, Tensor};
use candle_nn::{AdamW, Optimizer, ParamsAdamW, VarBuilder};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use codeinterp::classify::{
    Backend, BackendConfig, CheckpointResolver, Family, Predictor, Probabilities, TrainingSession,
};
use codeinterp::dataset::Dataset;
use codeinterp::error::ClassifyError;
use codeinterp::taxonomy::Category;

use crate::checkpoint::{self, Checkpoint};
use crate::init::{rng_for, sample_init, SeededDropout, SeededVarMap};
use crate::nets::{build_baseline, ArchConfig, Batch, EncoderClassifier, Net};
use crate::tokenizer::{CharVocab, Encoding, WordPiece, CHAR_PAD, CHAR_UNK, PAD};
use crate::NeuralError;

const NETWORK_FILE: &str = "network.json";
const PREDICT_BATCH: usize = 32;

#[derive(Clone)]
pub enum TextEncoder {
    Chars(Arc<CharVocab>),
    WordPiece(Arc<WordPiece>),
}

impl TextEncoder {
    pub fn encode(&self, text: &str, max_len: usize) -> Encoding {
        match self {
            TextEncoder::Chars(v) => {
                let mut e = v.encode(text, max_len);
                if e.ids.is_empty() {
                    e.ids.push(CHAR_UNK);
                    e.type_ids.push(0);
                }
                e
            }
            TextEncoder::WordPiece(w) => w.encode(text, max_len),
        }
    }

    pub fn pad_id(&self) -> u32 {
        match self {
            TextEncoder::Chars(_) => CHAR_PAD,
            TextEncoder::WordPiece(w) => w.special(PAD),
        }
    }
}

/// What besides the weights is needed to rebuild a network.
#[derive(Clone)]
enum Blueprint {
    Baseline { family: Family, arch: ArchConfig, vocab: Arc<CharVocab> },
    Encoder { config_text: String, tokenizer: Arc<WordPiece> },
}

#[derive(Serialize, Deserialize)]
struct NetworkFile {
    family: Family,
    arch: ArchConfig,
    vocab: CharVocab,
}

impl Blueprint {
    fn text_encoder(&self) -> TextEncoder {
        match self {
            Blueprint::Baseline { vocab, .. } => TextEncoder::Chars(vocab.clone()),
            Blueprint::Encoder { tokenizer, .. } => TextEncoder::WordPiece(tokenizer.clone()),
        }
    }

    fn build(&self, vb: VarBuilder) -> Result<Box<dyn Net>, NeuralError> {
        Ok(match self {
            Blueprint::Baseline { family, arch, .. } => build_baseline(*family, arch, vb)?,
            Blueprint::Encoder { config_text, .. } => {
                let config = serde_json::from_str(config_text)
                    .map_err(|e| NeuralError::Checkpoint(format!("config: {e}")))?;
                Box::new(EncoderClassifier::new(&config, vb)?)
            }
        })
    }

    fn save(&self, dir: &Path, tensors: &HashMap<String, Tensor>) -> Result<(), NeuralError> {
        match self {
            Blueprint::Baseline { family, arch, vocab } => {
                let path = dir.join(NETWORK_FILE);
                let file = NetworkFile {
                    family: *family,
                    arch: arch.clone(),
                    vocab: (**vocab).clone(),
                };
                fs::write(&path, serde_json::to_string_pretty(&file).expect("serializable"))
                    .map_err(|e| NeuralError::io(&path, e))?;
                candle_core::safetensors::save(tensors, dir.join(checkpoint::WEIGHTS_FILE))?;
                Ok(())
            }
            Blueprint::Encoder { config_text, tokenizer } => {
                checkpoint::write_checkpoint(dir, config_text, tokenizer, tensors)?;
                let path = dir.join("tokenizer_config.json");
                let flag = serde_json::json!({ "do_lower_case": tokenizer.lowercase });
                fs::write(&path, flag.to_string()).map_err(|e| NeuralError::io(&path, e))
            }
        }
    }
}

fn encode_all(encoder: &TextEncoder, texts: &[&str], max_len: usize) -> Vec<Encoding> {
    let encoded: Vec<Encoding> = texts.iter().map(|t| encoder.encode(t, max_len)).collect();
    let cut = encoded.iter().filter(|e| e.truncated).count();
    if cut > 0 {
        log::warn!("{cut} of {} texts truncated to {max_len} tokens", texts.len());
    }
    encoded
}

fn probabilities_of(
    net: &dyn Net,
    encoded: &[Encoding],
    padding: usize,
    pad_id: u32,
    device: &Device,
) -> Result<Vec<Probabilities>, NeuralError> {
    let mut out = Vec::with_capacity(encoded.len());
    for chunk in encoded.chunks(PREDICT_BATCH) {
        let refs: Vec<&Encoding> = chunk.iter().collect();
        let batch = Batch::new(&refs, padding, pad_id, device)?;
        let probs = candle_nn::ops::softmax_last_dim(&net.logits(&batch, None)?)?
            .to_dtype(DType::F64)?
            .to_vec2::<f64>()?;
        for row in probs {
            let mut p = [0.0; Category::COUNT];
            p.copy_from_slice(&row);
            out.push(p);
        }
    }
    Ok(out)
}

pub struct NeuralPredictor {
    net: Box<dyn Net>,
    blueprint: Blueprint,
    tensors: HashMap<String, Tensor>,
    padding: usize,
    device: Device,
}

impl NeuralPredictor {
    fn new(blueprint: Blueprint, tensors: HashMap<String, Tensor>, padding: usize, device: Device) -> Result<NeuralPredictor, NeuralError> {
        let net = blueprint.build(VarBuilder::from_tensors(tensors.clone(), DType::F32, &device))?;
        Ok(NeuralPredictor {
            net,
            blueprint,
            tensors,
            padding,
            device,
        })
    }
}

impl Predictor for NeuralPredictor {
    fn probabilities(&self, texts: &[&str]) -> Result<Vec<Probabilities>, ClassifyError> {
        let encoder = self.blueprint.text_encoder();
        let encoded = encode_all(&encoder, texts, self.padding);
        Ok(probabilities_of(self.net.as_ref(), &encoded, self.padding, encoder.pad_id(), &self.device)?)
    }

    fn save(&self, dir: &Path) -> Result<(), ClassifyError> {
        Ok(self.blueprint.save(dir, &self.tensors)?)
    }
}

pub struct NeuralSession {
    net: Box<dyn Net>,
    vars: SeededVarMap,
    optimizer: AdamW,
    blueprint: Blueprint,
    encoder: TextEncoder,
    encoded: Vec<Encoding>,
    labels: Vec<u32>,
    order: ChaCha8Rng,
    dropout: SeededDropout,
    batch_size: usize,
    padding: usize,
    device: Device,
}

impl NeuralSession {
    /// One optimizer step. Returns the batch loss; the step is skipped when
    /// the loss is not finite.
    fn step(&mut self, chunk: &[usize]) -> Result<f32, NeuralError> {
        let refs: Vec<&Encoding> = chunk.iter().map(|&i| &self.encoded[i]).collect();
        let labels: Vec<u32> = chunk.iter().map(|&i| self.labels[i]).collect();
        let batch = Batch::new(&refs, self.padding, self.encoder.pad_id(), &self.device)?;
        let logits = self.net.logits(&batch, Some(&self.dropout))?;
        let target = Tensor::new(labels.as_slice(), &self.device)?;
        let loss = candle_nn::loss::cross_entropy(&logits, &target)?;
        let value = loss.to_scalar::<f32>()?;
        if value.is_finite() {
            self.optimizer.backward_step(&loss)?;
        }
        Ok(value)
    }
}

impl TrainingSession for NeuralSession {
    fn run_epoch(&mut self) -> Result<f64, ClassifyError> {
        let mut idx: Vec<usize> = (0..self.encoded.len()).collect();
        idx.shuffle(&mut self.order);
        let mut total = 0.0;
        for chunk in idx.chunks(self.batch_size) {
            let value = self.step(chunk)?;
            if !value.is_finite() {
                return Ok(f64::NAN);
            }
            total += value as f64 * chunk.len() as f64;
        }
        Ok(total / self.encoded.len() as f64)
    }

    fn probabilities(&self, texts: &[&str]) -> Result<Vec<Probabilities>, ClassifyError> {
        let encoded = encode_all(&self.encoder, texts, self.padding);
        Ok(probabilities_of(self.net.as_ref(), &encoded, self.padding, self.encoder.pad_id(), &self.device)?)
    }

    fn snapshot(&self) -> Result<Box<dyn Predictor>, ClassifyError> {
        let tensors = self.vars.snapshot().map_err(NeuralError::from)?;
        Ok(Box::new(NeuralPredictor::new(
            self.blueprint.clone(),
            tensors,
            self.padding,
            self.device.clone(),
        )?))
    }
}

/// Reads a word2vec-style text file. Rows for characters in `vocab` replace
/// the seeded initialization; everything else stays random.
pub fn load_char_embeddings(path: &Path, vocab: &CharVocab, seed: u64) -> Result<(Tensor, usize), NeuralError> {
    let text = fs::read_to_string(path).map_err(|e| NeuralError::io(path, e))?;
    let mut rows: HashMap<char, Vec<f32>> = HashMap::new();
    let mut dim = None;
    for (i, line) in text.lines().enumerate() {
        let mut parts = line.split_whitespace();
        let Some(token) = parts.next() else { continue };
        let values: Vec<f32> = match parts.map(str::parse).collect() {
            Ok(v) => v,
            Err(_) => {
                return Err(NeuralError::Config(format!("{}:{}: malformed vector", path.display(), i + 1)));
            }
        };
        // optional "count dim" header
        if i == 0 && values.len() == 1 && token.parse::<usize>().is_ok() {
            continue;
        }
        match dim {
            None => dim = Some(values.len()),
            Some(d) if d != values.len() => {
                return Err(NeuralError::Config(format!(
                    "{}:{}: expected {d} values, found {}",
                    path.display(),
                    i + 1,
                    values.len()
                )));
            }
            _ => {}
        }
        let mut chars = token.chars();
        if let (Some(c), None) = (chars.next(), chars.next()) {
            rows.insert(c, values);
        }
    }
    let dim = dim.filter(|d| *d > 0).ok_or_else(|| NeuralError::Config(format!("{}: no vectors", path.display())))?;
    let shape = candle_core::Shape::from((vocab.size(), dim));
    let mut table = sample_init(
        candle_nn::Init::Randn { mean: 0.0, stdev: 1.0 },
        &shape,
        &mut rng_for(seed, "embedding.weight"),
    );
    let mut hits = 0;
    for &c in vocab.chars() {
        if let Some(v) = rows.get(&c) {
            let id = vocab.id(c) as usize;
            table[id * dim..(id + 1) * dim].copy_from_slice(v);
            hits += 1;
        }
    }
    log::info!("pretrained vectors cover {hits} of {} characters", vocab.chars().len());
    Ok((Tensor::from_vec(table, shape, &Device::Cpu)?, dim))
}

pub struct NeuralBackend {
    family: Family,
    resolver: Box<dyn CheckpointResolver>,
    device: Device,
}

impl NeuralBackend {
    pub fn new(family: Family, resolver: Box<dyn CheckpointResolver>) -> Result<NeuralBackend, ClassifyError> {
        if family == Family::NgramLinear {
            return Err(ClassifyError::UnsupportedFamily(family.to_string()));
        }
        Ok(NeuralBackend {
            family,
            resolver,
            device: Device::Cpu,
        })
    }

    fn encoder_session(&self, cfg: &BackendConfig) -> Result<(Blueprint, SeededVarMap, Box<dyn Net>), ClassifyError> {
        let id = cfg.checkpoint_id.as_deref().ok_or_else(|| {
            ClassifyError::InvalidConfig("pretrained_encoder needs a checkpoint_id".into())
        })?;
        let ck = Checkpoint::load(&self.resolver.resolve(id)?, &self.device)?;
        if cfg.padding_size > ck.config.max_position_embeddings {
            return Err(ClassifyError::InvalidConfig(format!(
                "padding_size {} exceeds the checkpoint's {} positions",
                cfg.padding_size, ck.config.max_position_embeddings
            )));
        }
        let pretrained = ck.encoder_tensors();
        let vars = SeededVarMap::with_tensors(cfg.seed, pretrained.clone()).map_err(NeuralError::from)?;
        let blueprint = Blueprint::Encoder {
            config_text: ck.config_text.clone(),
            tokenizer: Arc::new(ck.tokenizer),
        };
        let net = blueprint.build(vars.builder(&self.device))?;
        for (name, _) in vars.sorted_vars() {
            if name.starts_with("bert.") && !pretrained.contains_key(&name) {
                if name.starts_with("bert.pooler.") {
                    log::warn!("checkpoint {id} has no {name}; starting it from the seed");
                } else {
                    return Err(ClassifyError::Artifact(format!("checkpoint {id} lacks tensor {name}")));
                }
            }
        }
        Ok((blueprint, vars, net))
    }

    fn baseline_session(&self, cfg: &BackendConfig, train: &Dataset) -> Result<(Blueprint, SeededVarMap, Box<dyn Net>), ClassifyError> {
        let vocab = Arc::new(CharVocab::build(train.texts(), 1));
        let mut arch = ArchConfig::for_family(self.family, vocab.size());
        let mut initial = HashMap::new();
        if let Some(path) = &cfg.pretrained_embeddings {
            let (table, dim) = load_char_embeddings(path, &vocab, cfg.seed)?;
            arch.embed_dim = dim;
            initial.insert("embedding.weight".to_string(), table);
        }
        let vars = SeededVarMap::with_tensors(cfg.seed, initial).map_err(NeuralError::from)?;
        let blueprint = Blueprint::Baseline {
            family: self.family,
            arch,
            vocab,
        };
        let net = blueprint.build(vars.builder(&self.device))?;
        Ok((blueprint, vars, net))
    }
}

impl Backend for NeuralBackend {
    fn family(&self) -> Family {
        self.family
    }

    fn start<'a>(
        &'a self,
        cfg: &BackendConfig,
        lr: f64,
        train: &Dataset,
    ) -> Result<Box<dyn TrainingSession + 'a>, ClassifyError> {
        if cfg.family != self.family {
            return Err(ClassifyError::InvalidConfig(format!(
                "backend for {} cannot train {}",
                self.family, cfg.family
            )));
        }
        let (blueprint, vars, net) = if self.family == Family::PretrainedEncoder {
            self.encoder_session(cfg)?
        } else {
            self.baseline_session(cfg, train)?
        };
        let weight_decay = if self.family == Family::PretrainedEncoder { 0.01 } else { 0.0 };
        let params = ParamsAdamW {
            lr,
            weight_decay,
            ..ParamsAdamW::default()
        };
        let trainable = vars.sorted_vars().into_iter().map(|(_, v)| v).collect();
        let optimizer = AdamW::new(trainable, params).map_err(NeuralError::from)?;
        let encoder = blueprint.text_encoder();
        let texts = train.texts();
        let encoded = encode_all(&encoder, &texts, cfg.padding_size);
        Ok(Box::new(NeuralSession {
            net,
            vars,
            optimizer,
            blueprint,
            encoder,
            encoded,
            labels: train.labels().iter().map(|c| c.ordinal() as u32).collect(),
            order: rng_for(cfg.seed, "batch-order"),
            dropout: SeededDropout::new(cfg.seed),
            batch_size: cfg.batch_size,
            padding: cfg.padding_size,
            device: self.device.clone(),
        }))
    }

    fn load(&self, cfg: &BackendConfig, dir: &Path) -> Result<Box<dyn Predictor>, ClassifyError> {
        let blueprint = if self.family == Family::PretrainedEncoder {
            let ck = Checkpoint::load(dir, &self.device)?;
            let blueprint = Blueprint::Encoder {
                config_text: ck.config_text,
                tokenizer: Arc::new(ck.tokenizer),
            };
            return Ok(Box::new(NeuralPredictor::new(blueprint, ck.tensors, cfg.padding_size, self.device.clone())?));
        } else {
            let path = dir.join(NETWORK_FILE);
            let text = fs::read_to_string(&path).map_err(|e| NeuralError::io(&path, e))?;
            let file: NetworkFile = serde_json::from_str(&text)
                .map_err(|e| ClassifyError::Artifact(format!("{}: {e}", path.display())))?;
            if file.family != self.family {
                return Err(ClassifyError::Artifact(format!(
                    "{} holds a {} network",
                    path.display(),
                    file.family
                )));
            }
            Blueprint::Baseline {
                family: file.family,
                arch: file.arch,
                vocab: Arc::new(file.vocab.indexed()),
            }
        };
        let tensors = candle_core::safetensors::load(dir.join(checkpoint::WEIGHTS_FILE), &self.device)
            .map_err(NeuralError::from)?;
        Ok(Box::new(NeuralPredictor::new(blueprint, tensors, cfg.padding_size, self.device.clone())?))
    }
}
