//! Continued pretraining of an encoder checkpoint on unlabeled text.
//!
//! Each step trains masked-token prediction and next-line prediction on
//! pairs of corpus lines. The source checkpoint is only read; the result is
//! written to a new directory in the same layout.

use std::fs;
use std::path::{Path, PathBuf};

use candle_core::{Device, Tensor};
use candle_nn::{AdamW, Module, Optimizer, ParamsAdamW};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use codeinterp::classify::{CheckpointResolver, DomainCorpus};
use codeinterp::error::ClassifyError;

use crate::checkpoint::{write_checkpoint, Checkpoint};
use crate::encoder::{Encoder, MlmHead};
use crate::init::{rng_for, SeededDropout, SeededVarMap};
use crate::nets::{pool_first, Batch};
use crate::tokenizer::{Encoding, WordPiece, CLS, MASK, PAD, SEP, UNK};
use crate::NeuralError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Tokens per line pair, special tokens included.
    pub max_len: usize,
    pub mask_prob: f64,
    /// Smallest accepted corpus, in non-blank lines.
    pub min_lines: usize,
    /// Stops early after this many optimizer steps.
    pub max_steps: Option<usize>,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> PretrainConfig {
        PretrainConfig {
            learning_rate: 5e-5,
            batch_size: 4,
            epochs: 1,
            max_len: 128,
            mask_prob: 0.15,
            min_lines: 8,
            max_steps: None,
            seed: 0,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<(), ClassifyError> {
        let bad = |m: String| Err(ClassifyError::InvalidConfig(m));
        if !(self.mask_prob > 0.0 && self.mask_prob <= 1.0) {
            return bad(format!(
                "mask_prob {} leaves nothing to predict; it must be in (0, 1]",
                self.mask_prob
            ));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad(format!("learning rate {} is not a positive number", self.learning_rate));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return bad("batch_size and epochs must be at least 1".into());
        }
        if self.max_len < 8 {
            return bad(format!("max_len {} is below 8", self.max_len));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    pub source_checkpoint: String,
    pub checkpoint_dir: PathBuf,
    pub corpus_lines: usize,
    pub steps: usize,
    /// Mean combined loss per epoch.
    pub epoch_losses: Vec<f64>,
    pub config: PretrainConfig,
}

pub const REPORT_FILE: &str = "pretrain_log.json";

struct Example {
    encoding: Encoding,
    /// Flat positions in the row that are predicted, with their original ids.
    targets: Vec<(usize, u32)>,
    is_random_next: bool,
}

fn build_example(
    tok: &WordPiece,
    lines: &[String],
    i: usize,
    cfg: &PretrainConfig,
    rng: &mut impl Rng,
) -> Example {
    let n = lines.len();
    let next = (i + 1) % n;
    let is_random_next = rng.random::<f64>() < 0.5;
    let b = if is_random_next {
        // any line except the true successor
        let mut j = rng.random_range(0..n - 1);
        if j >= next {
            j += 1;
        }
        j
    } else {
        next
    };
    let mut encoding = tok.encode_pair(&lines[i], &lines[b], cfg.max_len);
    let specials = [CLS, SEP, PAD, UNK, MASK].map(|s| tok.special(s));
    let candidates: Vec<usize> = (0..encoding.ids.len())
        .filter(|&p| !specials.contains(&encoding.ids[p]))
        .collect();
    let mut chosen: Vec<usize> = candidates
        .iter()
        .copied()
        .filter(|_| rng.random::<f64>() < cfg.mask_prob)
        .collect();
    if chosen.is_empty() && !candidates.is_empty() {
        chosen.push(candidates[rng.random_range(0..candidates.len())]);
    }
    let mask_id = tok.special(MASK);
    let targets = chosen
        .into_iter()
        .map(|p| {
            let original = encoding.ids[p];
            let r = rng.random::<f64>();
            if r < 0.8 {
                encoding.ids[p] = mask_id;
            } else if r < 0.9 {
                encoding.ids[p] = rng.random_range(0..tok.len() as u32);
            }
            (p, original)
        })
        .collect();
    Example {
        encoding,
        targets,
        is_random_next,
    }
}

fn io_err(path: &Path, e: std::io::Error) -> ClassifyError {
    ClassifyError::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

/// Continues pretraining `checkpoint_id` on `corpus` and writes the result
/// to `out_dir`, which becomes the new checkpoint.
pub fn further_pretrain(
    resolver: &dyn CheckpointResolver,
    checkpoint_id: &str,
    corpus: &DomainCorpus,
    cfg: &PretrainConfig,
    out_dir: &Path,
) -> Result<PretrainReport, ClassifyError> {
    cfg.validate()?;
    let source = resolver.resolve(checkpoint_id)?;
    let floor = cfg.min_lines.max(2);
    if corpus.len() < floor {
        return Err(ClassifyError::CorpusTooSmall {
            lines: corpus.len(),
            floor,
        });
    }
    if out_dir.exists()
        && fs::canonicalize(out_dir).map_err(|e| io_err(out_dir, e))?
            == fs::canonicalize(&source).map_err(|e| io_err(&source, e))?
    {
        return Err(ClassifyError::InvalidConfig(
            "output directory is the source checkpoint".into(),
        ));
    }

    let device = Device::Cpu;
    let ck = Checkpoint::load(&source, &device)?;
    if cfg.max_len > ck.config.max_position_embeddings {
        return Err(ClassifyError::InvalidConfig(format!(
            "max_len {} exceeds the checkpoint's {} positions",
            cfg.max_len, ck.config.max_position_embeddings
        )));
    }
    let vars = SeededVarMap::with_tensors(cfg.seed, ck.tensors.clone()).map_err(NeuralError::from)?;
    let vb = vars.builder(&device);
    let h = ck.config.hidden_size;
    let build = || -> Result<_, NeuralError> {
        Ok((
            Encoder::new(&ck.config, vb.pp("bert"))?,
            MlmHead::new(&ck.config, vb.pp("cls.predictions"))?,
            candle_nn::linear(h, h, vb.pp("bert.pooler.dense"))?,
            candle_nn::linear(h, 2, vb.pp("cls.seq_relationship"))?,
        ))
    };
    let (bert, mlm, pooler, nsp) = build()?;
    for (name, _) in vars.sorted_vars() {
        if !ck.tensors.contains_key(&name) {
            if name.starts_with("bert.pooler.") || name.starts_with("cls.") {
                log::warn!("checkpoint {checkpoint_id} has no {name}; starting it from the seed");
            } else {
                return Err(ClassifyError::Artifact(format!(
                    "checkpoint {checkpoint_id} lacks tensor {name}"
                )));
            }
        }
    }

    let params = ParamsAdamW {
        lr: cfg.learning_rate,
        weight_decay: 0.01,
        ..ParamsAdamW::default()
    };
    let mut opt = AdamW::new(vars.sorted_vars().into_iter().map(|(_, v)| v).collect(), params)
        .map_err(NeuralError::from)?;
    let mut rng = rng_for(cfg.seed, "pretrain");
    let dropout = SeededDropout::new(cfg.seed);
    let lines = corpus.lines();
    let pad = ck.tokenizer.special(PAD);
    let mut steps = 0;
    let mut epoch_losses = Vec::new();

    'epochs: for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..lines.len()).collect();
        order.shuffle(&mut rng);
        let (mut total, mut count) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let examples: Vec<Example> = chunk
                .iter()
                .map(|&i| build_example(&ck.tokenizer, lines, i, cfg, &mut rng))
                .collect();
            let step = || -> Result<(f32, Tensor), NeuralError> {
                let refs: Vec<&Encoding> = examples.iter().map(|e| &e.encoding).collect();
                let batch = Batch::new(&refs, cfg.max_len, pad, &device)?;
                let seq = bert.forward(&batch.ids, &batch.type_ids, &batch.mask, Some(&dropout))?;
                let (b, t, _) = seq.dims3()?;
                let mut positions = Vec::new();
                let mut originals = Vec::new();
                for (r, e) in examples.iter().enumerate() {
                    for &(p, id) in &e.targets {
                        positions.push((r * t + p) as u32);
                        originals.push(id);
                    }
                }
                let flat = seq.reshape((b * t, h))?;
                let picked = flat.index_select(&Tensor::new(positions.as_slice(), &device)?, 0)?;
                let mlm_loss = candle_nn::loss::cross_entropy(
                    &mlm.forward(&picked)?,
                    &Tensor::new(originals.as_slice(), &device)?,
                )?;
                let pooled = pool_first(&pooler, &seq)?;
                let nsp_labels: Vec<u32> = examples.iter().map(|e| e.is_random_next as u32).collect();
                let nsp_loss = candle_nn::loss::cross_entropy(
                    &nsp.forward(&pooled)?,
                    &Tensor::new(nsp_labels.as_slice(), &device)?,
                )?;
                let loss = (mlm_loss + nsp_loss)?;
                Ok((loss.to_scalar::<f32>()?, loss))
            };
            let (value, loss) = step()?;
            if !value.is_finite() {
                return Err(ClassifyError::DivergedTraining {
                    lr: cfg.learning_rate,
                    epoch,
                });
            }
            opt.backward_step(&loss).map_err(NeuralError::from)?;
            total += value as f64 * chunk.len() as f64;
            count += chunk.len();
            steps += 1;
            if cfg.max_steps.is_some_and(|m| steps >= m) {
                epoch_losses.push(total / count as f64);
                break 'epochs;
            }
        }
        log::info!("pretraining epoch {epoch}: loss {:.4}", total / count as f64);
        epoch_losses.push(total / count as f64);
    }

    let tensors = vars.snapshot().map_err(NeuralError::from)?;
    write_checkpoint(out_dir, &ck.config_text, &ck.tokenizer, &tensors)?;
    let flag = serde_json::json!({ "do_lower_case": ck.tokenizer.lowercase }).to_string();
    let flag_path = out_dir.join("tokenizer_config.json");
    fs::write(&flag_path, flag).map_err(|e| io_err(&flag_path, e))?;
    let report = PretrainReport {
        source_checkpoint: checkpoint_id.to_string(),
        checkpoint_dir: out_dir.to_path_buf(),
        corpus_lines: corpus.len(),
        steps,
        epoch_losses,
        config: cfg.clone(),
    };
    let report_path = out_dir.join(REPORT_FILE);
    fs::write(&report_path, serde_json::to_string_pretty(&report).expect("serializable") + "\n")
        .map_err(|e| io_err(&report_path, e))?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checkpoint::fixtures;
    use codeinterp::classify::LocalResolver;

    fn corpus() -> DomainCorpus {
        DomainCorpus::new([
            "墙高度不应小于2m。",
            "用水量：用户消耗的水量。",
            "本标准由负责管理。",
            "防火间距应按规定执行。",
            "建筑设计防火间距。",
            "第1条 术语。",
            "墙的高度不应小于3m。",
            "按本标准规定执行。",
        ])
        .unwrap()
    }

    fn small() -> PretrainConfig {
        PretrainConfig {
            learning_rate: 1e-3,
            batch_size: 4,
            epochs: 2,
            max_len: 32,
            ..PretrainConfig::default()
        }
    }

    #[test]
    fn writes_a_new_loadable_checkpoint() {
        let root = tempfile::tempdir().unwrap();
        fixtures::write(&root.path().join("base"), 5);
        let before = fs::read(root.path().join("base/model.safetensors")).unwrap();
        let resolver = LocalResolver::new(vec![root.path().to_path_buf()]);
        let out = root.path().join("domain");
        let report = further_pretrain(&resolver, "base", &corpus(), &small(), &out).unwrap();
        assert_eq!(report.steps, 4);
        assert_eq!(report.epoch_losses.len(), 2);
        assert!(report.epoch_losses.iter().all(|l| l.is_finite()));
        assert_eq!(fs::read(root.path().join("base/model.safetensors")).unwrap(), before);
        let ck = Checkpoint::load(&out, &Device::Cpu).unwrap();
        let base = Checkpoint::load(&root.path().join("base"), &Device::Cpu).unwrap();
        assert_eq!(ck.tensors.len(), base.tensors.len());
        for (name, t) in &ck.tensors {
            let moved = (t - &base.tensors[name]).unwrap().abs().unwrap().max_all().unwrap();
            assert!(moved.to_scalar::<f32>().unwrap() > 0.0, "{name} did not move");
        }

        let again = further_pretrain(&resolver, "base", &corpus(), &small(), &root.path().join("again")).unwrap();
        assert_eq!(again.epoch_losses, report.epoch_losses);
    }

    #[test]
    fn rejects_degenerate_inputs() {
        let root = tempfile::tempdir().unwrap();
        fixtures::write(&root.path().join("base"), 5);
        let resolver = LocalResolver::new(vec![root.path().to_path_buf()]);
        let out = root.path().join("x");
        let no_mask = PretrainConfig { mask_prob: 0.0, ..small() };
        assert!(matches!(
            further_pretrain(&resolver, "base", &corpus(), &no_mask, &out),
            Err(ClassifyError::InvalidConfig(_))
        ));
        let one = DomainCorpus::new(["only line"]).unwrap();
        assert!(matches!(
            further_pretrain(&resolver, "base", &one, &small(), &out),
            Err(ClassifyError::CorpusTooSmall { lines: 1, .. })
        ));
        assert!(matches!(
            further_pretrain(&resolver, "missing", &corpus(), &small(), &out),
            Err(ClassifyError::CheckpointNotFound(_))
        ));
        assert!(matches!(
            further_pretrain(&resolver, "base", &corpus(), &small(), &root.path().join("base")),
            Err(ClassifyError::InvalidConfig(_))
        ));
        assert!(!out.exists());
    }

    #[test]
    fn masking_follows_the_config() {
        let tok = WordPiece::from_tokens(fixtures::vocab(), true).unwrap();
        let lines: Vec<String> = corpus().lines().to_vec();
        let cfg = PretrainConfig { mask_prob: 1.0, ..small() };
        let mut rng = rng_for(1, "t");
        let e = build_example(&tok, &lines, 0, &cfg, &mut rng);
        let specials = [CLS, SEP, UNK].map(|s| tok.special(s));
        let non_special = e.encoding.ids.len() - e.encoding.ids.iter().filter(|i| specials.contains(i)).count();
        assert_eq!(e.targets.len(), non_special);
        let cfg = PretrainConfig { mask_prob: 1e-9, ..small() };
        assert_eq!(build_example(&tok, &lines, 0, &cfg, &mut rng).targets.len(), 1);
    }
}
