//! Pretrained encoder checkpoints on disk.
//!
//! A checkpoint directory holds `config.json`, `vocab.txt` and
//! `model.safetensors`. Tensor names are normalized on load: LayerNorm
//! `gamma`/`beta` become `weight`/`bias`, encoder tensors saved without the
//! `bert.` prefix get it, and the masked-LM output bias moves under the
//! decoder.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Tensor};
use candle_nn::Module;

use crate::encoder::{Encoder, EncoderConfig, MlmHead};

use crate::init::SeededVarMap;
use crate::tokenizer::WordPiece;
use crate::NeuralError;

pub const CONFIG_FILE: &str = "config.json";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const WEIGHTS_FILE: &str = "model.safetensors";
const TOKENIZER_CONFIG_FILE: &str = "tokenizer_config.json";

pub struct Checkpoint {
    pub dir: PathBuf,
    pub config: EncoderConfig,
    /// `config.json` verbatim, written back unchanged by derived checkpoints.
    pub config_text: String,
    pub tokenizer: WordPiece,
    pub tensors: HashMap<String, Tensor>,
}

/// Canonical name for a tensor as stored by the common exporters.
pub fn normalize_name(name: &str) -> String {
    let mut n = name.to_string();
    if let Some(stem) = n.strip_suffix(".gamma") {
        n = format!("{stem}.weight");
    } else if let Some(stem) = n.strip_suffix(".beta") {
        n = format!("{stem}.bias");
    }
    if !(n.starts_with("bert.") || n.starts_with("cls.") || n.starts_with("classifier.")) {
        n = format!("bert.{n}");
    }
    if n == "cls.predictions.bias" {
        n = "cls.predictions.decoder.bias".to_string();
    }
    n
}

fn lowercase_flag(dir: &Path) -> bool {
    fs::read_to_string(dir.join(TOKENIZER_CONFIG_FILE))
        .ok()
        .and_then(|t| serde_json::from_str::<serde_json::Value>(&t).ok())
        .and_then(|v| v.get("do_lower_case").and_then(|b| b.as_bool()))
        .unwrap_or(true)
}

impl Checkpoint {
    pub fn load(dir: &Path, device: &Device) -> Result<Checkpoint, NeuralError> {
        let config_path = dir.join(CONFIG_FILE);
        let config_text = fs::read_to_string(&config_path).map_err(|e| NeuralError::io(&config_path, e))?;
        let config: EncoderConfig = serde_json::from_str(&config_text)
            .map_err(|e| NeuralError::Checkpoint(format!("{}: {e}", config_path.display())))?;
        config.check()?;
        let tokenizer = WordPiece::load(&dir.join(VOCAB_FILE), lowercase_flag(dir))?;
        if tokenizer.len() != config.vocab_size {
            return Err(NeuralError::Checkpoint(format!(
                "{} has {} tokens but the config declares {}",
                VOCAB_FILE,
                tokenizer.len(),
                config.vocab_size
            )));
        }
        let weights = dir.join(WEIGHTS_FILE);
        if !weights.is_file() {
            return Err(NeuralError::Checkpoint(format!(
                "{} not found; only safetensors weights are supported",
                weights.display()
            )));
        }
        let raw = candle_core::safetensors::load(&weights, device)?;
        let mut tensors = HashMap::with_capacity(raw.len());
        for (name, t) in raw {
            tensors.insert(normalize_name(&name), t.to_dtype(DType::F32)?);
        }
        if !tensors.contains_key("cls.predictions.decoder.weight") {
            if let Some(emb) = tensors.get("bert.embeddings.word_embeddings.weight") {
                tensors.insert("cls.predictions.decoder.weight".to_string(), emb.clone());
            }
        }
        Ok(Checkpoint {
            dir: dir.to_path_buf(),
            config,
            config_text,
            tokenizer,
            tensors,
        })
    }

    /// Encoder tensors only, without any task heads.
    pub fn encoder_tensors(&self) -> HashMap<String, Tensor> {
        self.tensors
            .iter()
            .filter(|(k, _)| k.starts_with("bert."))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }
}

/// Writes a checkpoint directory.
pub fn write_checkpoint(
    dir: &Path,
    config_text: &str,
    tokenizer: &WordPiece,
    tensors: &HashMap<String, Tensor>,
) -> Result<(), NeuralError> {
    fs::create_dir_all(dir).map_err(|e| NeuralError::io(dir, e))?;
    let config_path = dir.join(CONFIG_FILE);
    fs::write(&config_path, config_text).map_err(|e| NeuralError::io(&config_path, e))?;
    tokenizer.save(&dir.join(VOCAB_FILE))?;
    let sorted: BTreeMap<&String, &Tensor> = tensors.iter().collect();
    candle_core::safetensors::save(&sorted.into_iter().map(|(k, v)| (k.clone(), v.clone())).collect(), dir.join(WEIGHTS_FILE))?;
    Ok(())
}

/// A randomly initialized encoder with masked-LM and next-sentence heads.
/// Useful as a stand-in checkpoint for small experiments.
pub fn write_random_checkpoint(
    dir: &Path,
    config_text: &str,
    vocab: Vec<String>,
    seed: u64,
) -> Result<(), NeuralError> {
    let config: EncoderConfig = serde_json::from_str(config_text)
        .map_err(|e| NeuralError::Checkpoint(format!("config: {e}")))?;
    let tokenizer = WordPiece::from_tokens(vocab, true)?;
    if tokenizer.len() != config.vocab_size {
        return Err(NeuralError::Checkpoint(format!(
            "vocabulary has {} tokens but the config declares {}",
            tokenizer.len(),
            config.vocab_size
        )));
    }
    let device = Device::Cpu;
    let map = SeededVarMap::new(seed);
    let vb = map.builder(&device);
    let bert = Encoder::new(&config, vb.pp("bert"))?;
    let head = MlmHead::new(&config, vb.pp("cls.predictions"))?;
    candle_nn::linear(config.hidden_size, config.hidden_size, vb.pp("bert.pooler.dense"))?;
    candle_nn::linear(config.hidden_size, 2, vb.pp("cls.seq_relationship"))?;
    // touch the graph once so a malformed config fails here
    let ids = Tensor::new(&[[0u32, 1]], &device)?;
    let mask = Tensor::ones((1, 2), DType::F32, &device)?;
    head.forward(&bert.forward(&ids, &ids.zeros_like()?, &mask, None)?)?;
    write_checkpoint(dir, config_text, &tokenizer, &map.snapshot()?)
}


#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_normalized() {
        assert_eq!(normalize_name("bert.embeddings.LayerNorm.gamma"), "bert.embeddings.LayerNorm.weight");
        assert_eq!(normalize_name("encoder.layer.0.output.LayerNorm.beta"), "bert.encoder.layer.0.output.LayerNorm.bias");
        assert_eq!(normalize_name("cls.predictions.bias"), "cls.predictions.decoder.bias");
        assert_eq!(normalize_name("classifier.weight"), "classifier.weight");
    }

    #[test]
    fn random_checkpoint_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        fixtures::write(dir.path(), 3);
        let ck = Checkpoint::load(dir.path(), &Device::Cpu).unwrap();
        assert_eq!(ck.config.hidden_size, 16);
        assert!(ck.tensors.contains_key("bert.embeddings.word_embeddings.weight"));
        assert!(ck.tensors.contains_key("cls.seq_relationship.weight"));
        assert!(ck.encoder_tensors().keys().all(|k| k.starts_with("bert.")));
        assert_eq!(ck.tokenizer.len(), fixtures::vocab().len());
    }

    #[test]
    fn missing_weights_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        fixtures::write(dir.path(), 3);
        fs::remove_file(dir.path().join(WEIGHTS_FILE)).unwrap();
        assert!(matches!(Checkpoint::load(dir.path(), &Device::Cpu), Err(NeuralError::Checkpoint(_))));
    }

    #[test]
    fn tied_decoder_is_restored() {
        let dir = tempfile::tempdir().unwrap();
        fixtures::write(dir.path(), 3);
        let path = dir.path().join(WEIGHTS_FILE);
        let mut t = candle_core::safetensors::load(&path, &Device::Cpu).unwrap();
        t.remove("cls.predictions.decoder.weight");
        candle_core::safetensors::save(&t, &path).unwrap();
        let ck = Checkpoint::load(dir.path(), &Device::Cpu).unwrap();
        let dec = ck.tensors["cls.predictions.decoder.weight"].to_vec2::<f32>().unwrap();
        let emb = ck.tensors["bert.embeddings.word_embeddings.weight"].to_vec2::<f32>().unwrap();
        assert_eq!(dec, emb);
    }
}
