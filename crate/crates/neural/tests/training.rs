use std::path::Path;

use codeinterp::classify::{train, BackendConfig, ClassifierModel, Family, LocalResolver};
use codeinterp::corpus::Clause;
use codeinterp::dataset::{Dataset, LabeledClause};
use codeinterp::error::ClassifyError;
use codeinterp::taxonomy::Category;
use codeinterp_neural::checkpoint::{write_random_checkpoint, WEIGHTS_FILE};
use codeinterp_neural::tokenizer::{CLS, MASK, PAD, SEP, UNK};
use codeinterp_neural::NeuralBackend;

/// One marker character per category; every text carries its marker.
const MARKERS: [char; 7] = ['墙', '算', '法', '表', '宜', '语', '施'];
const FILLER: [&str; 4] = ["应当", "不应", "按照", "符合"];

fn dataset(prefix: &str, rounds: usize) -> Dataset {
    let mut examples = Vec::new();
    for r in 0..rounds {
        for (c, m) in Category::ALL.iter().zip(MARKERS) {
            let text = format!("{}{m}{m}{}", FILLER[r % 4], FILLER[(r + 1) % 4]);
            let clause = Clause::new(format!("{prefix}-{c}-{r}"), "doc", &text).unwrap();
            examples.push(LabeledClause::manual(clause, *c));
        }
    }
    Dataset::new(examples).unwrap()
}

fn accuracy(model: &ClassifierModel, ds: &Dataset) -> f64 {
    let preds = model.predict(&ds.texts()).unwrap();
    let hits = preds.iter().zip(ds.labels()).filter(|(p, g)| p.category == *g).count();
    hits as f64 / ds.len() as f64
}

fn probs(model: &ClassifierModel, ds: &Dataset) -> Vec<[f64; 7]> {
    model.probabilities(&ds.texts()).unwrap()
}

fn baseline_config(family: Family) -> BackendConfig {
    BackendConfig {
        epochs: 40,
        padding_size: 12,
        batch_size: 8,
        learning_rate_grid: vec![3e-3],
        seed: 11,
        ..BackendConfig::for_family(family)
    }
}

fn no_checkpoints() -> Box<LocalResolver> {
    Box::new(LocalResolver::new(vec![]))
}

#[test]
fn baselines_learn_and_round_trip() {
    let (tr, va) = (dataset("t", 4), dataset("v", 1));
    for family in [Family::Cnn, Family::Rnn, Family::RnnAttention, Family::TransformerScratch] {
        let backend = NeuralBackend::new(family, no_checkpoints()).unwrap();
        let cfg = baseline_config(family);
        let model = train(&backend, &cfg, &tr, &va).unwrap();
        assert!(accuracy(&model, &tr) >= 0.85, "{family} train accuracy {}", accuracy(&model, &tr));
        assert_eq!(model.log.epochs.len(), cfg.epochs);

        let dir = tempfile::tempdir().unwrap();
        model.save(dir.path()).unwrap();
        let loaded = ClassifierModel::load(dir.path(), &backend).unwrap();
        assert_eq!(loaded.manifest, model.manifest);
        assert_eq!(probs(&loaded, &va), probs(&model, &va), "{family}");
    }
}

#[test]
fn baseline_training_is_deterministic() {
    let (tr, va) = (dataset("t", 2), dataset("v", 1));
    let backend = NeuralBackend::new(Family::RnnAttention, no_checkpoints()).unwrap();
    let cfg = BackendConfig {
        epochs: 3,
        ..baseline_config(Family::RnnAttention)
    };
    let a = train(&backend, &cfg, &tr, &va).unwrap();
    let b = train(&backend, &cfg, &tr, &va).unwrap();
    assert_eq!(a.log, b.log);
    assert_eq!(probs(&a, &va), probs(&b, &va));
    let c = train(&backend, &BackendConfig { seed: 12, ..cfg }, &tr, &va).unwrap();
    assert_ne!(probs(&a, &va), probs(&c, &va));
}

#[test]
fn pretrained_character_vectors_set_the_width() {
    let (tr, va) = (dataset("t", 1), dataset("v", 1));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("vectors.txt");
    std::fs::write(&path, "2 6\n墙 1 0 0 0 0 0\n算 0 1 0 0 0 0\n").unwrap();
    let backend = NeuralBackend::new(Family::Cnn, no_checkpoints()).unwrap();
    let cfg = BackendConfig {
        epochs: 1,
        pretrained_embeddings: Some(path),
        ..baseline_config(Family::Cnn)
    };
    let model = train(&backend, &cfg, &tr, &va).unwrap();
    assert_eq!(model.manifest.embedding_mode, "pretrained");

    std::fs::write(dir.path().join("bad.txt"), "墙 1 0\n算 1\n").unwrap();
    let bad = BackendConfig {
        pretrained_embeddings: Some(dir.path().join("bad.txt")),
        ..cfg
    };
    assert!(matches!(train(&backend, &bad, &tr, &va), Err(ClassifyError::InvalidConfig(_))));
}

fn write_checkpoint_dir(dir: &Path, seed: u64) {
    let mut vocab: Vec<String> = [PAD, UNK, CLS, SEP, MASK].iter().map(|s| s.to_string()).collect();
    let mut chars: Vec<char> = MARKERS.to_vec();
    chars.extend(FILLER.concat().chars());
    chars.sort();
    chars.dedup();
    vocab.extend(chars.iter().map(|c| c.to_string()));
    let config = serde_json::json!({
        "vocab_size": vocab.len(),
        "hidden_size": 16,
        "num_hidden_layers": 1,
        "num_attention_heads": 2,
        "intermediate_size": 32,
        "max_position_embeddings": 32,
        "type_vocab_size": 2,
        "hidden_dropout_prob": 0.1
    });
    write_random_checkpoint(dir, &config.to_string(), vocab, seed).unwrap();
}

fn encoder_config() -> BackendConfig {
    BackendConfig {
        checkpoint_id: Some("tiny".into()),
        epochs: 30,
        padding_size: 12,
        batch_size: 8,
        learning_rate_grid: vec![3e-3, 1e-3],
        seed: 5,
        ..BackendConfig::for_family(Family::PretrainedEncoder)
    }
}

#[test]
fn encoder_fine_tunes_from_a_checkpoint() {
    let root = tempfile::tempdir().unwrap();
    write_checkpoint_dir(&root.path().join("tiny"), 1);
    let resolver = Box::new(LocalResolver::new(vec![root.path().to_path_buf()]));
    let backend = NeuralBackend::new(Family::PretrainedEncoder, resolver).unwrap();
    let (tr, va) = (dataset("t", 4), dataset("v", 1));
    let cfg = encoder_config();
    let model = train(&backend, &cfg, &tr, &va).unwrap();
    assert!(accuracy(&model, &tr) >= 0.85, "train accuracy {}", accuracy(&model, &tr));
    assert_eq!(model.manifest.embedding_mode, "checkpoint");
    assert_eq!(model.log.epochs.len(), 60);

    let out = root.path().join("model");
    model.save(&out).unwrap();
    assert!(out.join(WEIGHTS_FILE).is_file());
    let loaded = ClassifierModel::load(&out, &backend).unwrap();
    assert_eq!(probs(&loaded, &va), probs(&model, &va));

    let again = train(&backend, &cfg, &tr, &va).unwrap();
    assert_eq!(again.log, model.log);
}

#[test]
fn encoder_rejects_incomplete_or_missing_checkpoints() {
    let root = tempfile::tempdir().unwrap();
    let dir = root.path().join("tiny");
    write_checkpoint_dir(&dir, 1);
    let path = dir.join(WEIGHTS_FILE);
    let mut tensors = candle_core::safetensors::load(&path, &candle_core::Device::Cpu).unwrap();
    tensors.remove("bert.encoder.layer.0.attention.self.query.weight");
    candle_core::safetensors::save(&tensors, &path).unwrap();

    let resolver = Box::new(LocalResolver::new(vec![root.path().to_path_buf()]));
    let backend = NeuralBackend::new(Family::PretrainedEncoder, resolver).unwrap();
    let (tr, va) = (dataset("t", 1), dataset("v", 1));
    let cfg = BackendConfig { epochs: 1, ..encoder_config() };
    match train(&backend, &cfg, &tr, &va) {
        Err(ClassifyError::Artifact(m)) => assert!(m.contains("query.weight"), "{m}"),
        other => panic!("expected an artifact error, got {:?}", other.map(|_| ())),
    }
    let missing = BackendConfig { checkpoint_id: Some("absent".into()), ..cfg.clone() };
    assert!(matches!(train(&backend, &missing, &tr, &va), Err(ClassifyError::CheckpointNotFound(_))));
    let too_long = BackendConfig { padding_size: 64, ..cfg };
    assert!(matches!(train(&backend, &too_long, &tr, &va), Err(ClassifyError::InvalidConfig(_))));
}

#[test]
fn ngram_family_is_not_neural() {
    assert!(matches!(
        NeuralBackend::new(Family::NgramLinear, no_checkpoints()),
        Err(ClassifyError::UnsupportedFamily(_))
    ));
}
