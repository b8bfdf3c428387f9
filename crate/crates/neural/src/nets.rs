//! Network definitions.
//!
//! Every network maps a padded batch to one logit per category. Dropout is
//! applied only when a generator is passed in.

use candle_core::{Device, IndexOp, Result, Tensor, D};
use candle_nn::rnn::{Direction, LSTMConfig, LSTM, RNN};
use candle_nn::{Conv1d, Conv1dConfig, Embedding, Linear, Module, VarBuilder};
use serde::{Deserialize, Serialize};

use codeinterp::classify::Family;
use codeinterp::taxonomy::Category;

use crate::encoder::{maybe_drop as drop, softmax_last, Encoder, EncoderConfig, LayerNorm};
use crate::init::SeededDropout;
use crate::tokenizer::Encoding;

const CLASSES: usize = Category::COUNT;

/// A padded batch on one device.
pub struct Batch {
    /// `[batch, len]` token ids.
    pub ids: Tensor,
    /// `[batch, len]` segment ids.
    pub type_ids: Tensor,
    /// `[batch, len]` 1.0 on real tokens.
    pub mask: Tensor,
    /// Real token count per row, at least 1.
    pub lengths: Vec<usize>,
    /// Ids with each row's real tokens in reverse order.
    pub reversed_ids: Tensor,
    /// Position map between a row and its reversal. Padding maps to itself.
    pub reversal: Tensor,
}

impl Batch {
    pub fn new(encodings: &[&Encoding], len: usize, pad_id: u32, device: &Device) -> Result<Batch> {
        let b = encodings.len();
        let mut ids = vec![pad_id; b * len];
        let mut type_ids = vec![0u32; b * len];
        let mut mask = vec![0f32; b * len];
        let mut reversed = vec![pad_id; b * len];
        let mut reversal = vec![0u32; b * len];
        let mut lengths = Vec::with_capacity(b);
        for (r, e) in encodings.iter().enumerate() {
            let n = e.ids.len().min(len).max(1);
            let row = r * len;
            for t in 0..len {
                reversal[row + t] = if t < n { (n - 1 - t) as u32 } else { t as u32 };
            }
            for t in 0..n {
                let id = e.ids.get(t).copied().unwrap_or(pad_id);
                ids[row + t] = id;
                reversed[row + n - 1 - t] = id;
                type_ids[row + t] = e.type_ids.get(t).copied().unwrap_or(0);
                mask[row + t] = 1.0;
            }
            lengths.push(n);
        }
        Ok(Batch {
            ids: Tensor::from_vec(ids, (b, len), device)?,
            type_ids: Tensor::from_vec(type_ids, (b, len), device)?,
            mask: Tensor::from_vec(mask, (b, len), device)?,
            lengths,
            reversed_ids: Tensor::from_vec(reversed, (b, len), device)?,
            reversal: Tensor::from_vec(reversal, (b, len), device)?,
        })
    }
}

pub trait Net: Send + Sync {
    fn logits(&self, batch: &Batch, dropout: Option<&SeededDropout>) -> Result<Tensor>;
}

/// Mean of `[b, t, h]` over real positions.
fn masked_mean(xs: &Tensor, mask: &Tensor) -> Result<Tensor> {
    let m = mask.unsqueeze(2)?;
    let summed = xs.broadcast_mul(&m)?.sum(1)?;
    summed.broadcast_div(&mask.sum_keepdim(1)?)
}

/// Sizes of the baseline networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden: usize,
    pub filters: usize,
    pub kernels: Vec<usize>,
    pub heads: usize,
    pub layers: usize,
    pub ff_dim: usize,
    pub dropout: f64,
}

impl ArchConfig {
    pub fn for_family(family: Family, vocab_size: usize) -> ArchConfig {
        ArchConfig {
            vocab_size,
            embed_dim: 128,
            hidden: 128,
            filters: 128,
            kernels: vec![2, 3, 4],
            heads: 4,
            layers: 2,
            ff_dim: 256,
            dropout: if family == Family::TransformerScratch { 0.1 } else { 0.5 },
        }
    }
}

pub struct TextCnn {
    embedding: Embedding,
    convs: Vec<Conv1d>,
    out: Linear,
    p: f64,
}

impl TextCnn {
    pub fn new(a: &ArchConfig, vb: VarBuilder) -> Result<TextCnn> {
        let embedding = candle_nn::embedding(a.vocab_size, a.embed_dim, vb.pp("embedding"))?;
        let convs = a
            .kernels
            .iter()
            .map(|&k| {
                candle_nn::conv1d(a.embed_dim, a.filters, k, Conv1dConfig::default(), vb.pp(format!("conv{k}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let out = candle_nn::linear(a.filters * a.kernels.len(), CLASSES, vb.pp("out"))?;
        Ok(TextCnn {
            embedding,
            convs,
            out,
            p: a.dropout,
        })
    }
}

impl Net for TextCnn {
    fn logits(&self, batch: &Batch, dropout: Option<&SeededDropout>) -> Result<Tensor> {
        let x = self.embedding.forward(&batch.ids)?.transpose(1, 2)?.contiguous()?;
        let pooled = self
            .convs
            .iter()
            .map(|c| c.forward(&x)?.relu()?.max(D::Minus1))
            .collect::<Result<Vec<_>>>()?;
        let h = Tensor::cat(&pooled, 1)?;
        self.out.forward(&drop(&h, self.p, dropout)?)
    }
}

/// Forward and backward LSTM outputs aligned by position, `[b, t, 2h]`.
struct BiLstm {
    embedding: Embedding,
    fwd: LSTM,
    bwd: LSTM,
}

impl BiLstm {
    fn new(a: &ArchConfig, vb: &VarBuilder) -> Result<BiLstm> {
        let embedding = candle_nn::embedding(a.vocab_size, a.embed_dim, vb.pp("embedding"))?;
        let fwd = candle_nn::lstm(a.embed_dim, a.hidden, LSTMConfig::default(), vb.pp("lstm"))?;
        let bwd = candle_nn::lstm(
            a.embed_dim,
            a.hidden,
            LSTMConfig {
                direction: Direction::Backward,
                ..LSTMConfig::default()
            },
            vb.pp("lstm"),
        )?;
        Ok(BiLstm { embedding, fwd, bwd })
    }

    fn run(lstm: &LSTM, x: &Tensor) -> Result<Tensor> {
        let states = lstm.seq(x)?;
        let hs: Vec<Tensor> = states.iter().map(|s| s.h().clone()).collect();
        Tensor::stack(&hs, 1)
    }

    fn forward(&self, batch: &Batch) -> Result<Tensor> {
        let f = BiLstm::run(&self.fwd, &self.embedding.forward(&batch.ids)?)?;
        let b = BiLstm::run(&self.bwd, &self.embedding.forward(&batch.reversed_ids)?)?;
        let (_, _, h) = b.dims3()?;
        let index = batch.reversal.unsqueeze(2)?.broadcast_as(b.shape())?.contiguous()?;
        let b = b.contiguous()?.gather(&index, 1)?;
        debug_assert_eq!(b.dim(2)?, h);
        Tensor::cat(&[f, b], 2)
    }
}

pub struct LstmMean {
    rnn: BiLstm,
    out: Linear,
    p: f64,
}

impl LstmMean {
    pub fn new(a: &ArchConfig, vb: VarBuilder) -> Result<LstmMean> {
        Ok(LstmMean {
            rnn: BiLstm::new(a, &vb)?,
            out: candle_nn::linear(2 * a.hidden, CLASSES, vb.pp("out"))?,
            p: a.dropout,
        })
    }
}

impl Net for LstmMean {
    fn logits(&self, batch: &Batch, dropout: Option<&SeededDropout>) -> Result<Tensor> {
        let h = masked_mean(&self.rnn.forward(batch)?, &batch.mask)?;
        self.out.forward(&drop(&h, self.p, dropout)?)
    }
}

/// Additive attention pooling over the BiLSTM outputs.
pub struct LstmAttention {
    rnn: BiLstm,
    proj: Linear,
    context: Linear,
    out: Linear,
    p: f64,
}

impl LstmAttention {
    pub fn new(a: &ArchConfig, vb: VarBuilder) -> Result<LstmAttention> {
        Ok(LstmAttention {
            rnn: BiLstm::new(a, &vb)?,
            proj: candle_nn::linear(2 * a.hidden, 2 * a.hidden, vb.pp("attention.proj"))?,
            context: candle_nn::linear_no_bias(2 * a.hidden, 1, vb.pp("attention.context"))?,
            out: candle_nn::linear(2 * a.hidden, CLASSES, vb.pp("out"))?,
            p: a.dropout,
        })
    }
}

fn padding_bias(mask: &Tensor) -> Result<Tensor> {
    // 0 on real tokens, -1e9 on padding
    (mask - 1.0)? * 1e9
}

impl Net for LstmAttention {
    fn logits(&self, batch: &Batch, dropout: Option<&SeededDropout>) -> Result<Tensor> {
        let h = self.rnn.forward(batch)?;
        let scores = self.context.forward(&self.proj.forward(&h)?.tanh()?)?.squeeze(2)?;
        let weights = softmax_last(&(scores + padding_bias(&batch.mask)?)?)?;
        let pooled = weights.unsqueeze(1)?.matmul(&h)?.squeeze(1)?;
        self.out.forward(&drop(&pooled, self.p, dropout)?)
    }
}

struct EncoderLayer {
    qkv: Linear,
    attn_out: Linear,
    norm1: LayerNorm,
    ff1: Linear,
    ff2: Linear,
    norm2: LayerNorm,
    heads: usize,
}

impl EncoderLayer {
    fn new(a: &ArchConfig, vb: VarBuilder) -> Result<EncoderLayer> {
        let d = a.embed_dim;
        Ok(EncoderLayer {
            qkv: candle_nn::linear(d, 3 * d, vb.pp("qkv"))?,
            attn_out: candle_nn::linear(d, d, vb.pp("attn_out"))?,
            norm1: LayerNorm::new(d, 1e-5, vb.pp("norm1"))?,
            ff1: candle_nn::linear(d, a.ff_dim, vb.pp("ff1"))?,
            ff2: candle_nn::linear(a.ff_dim, d, vb.pp("ff2"))?,
            norm2: LayerNorm::new(d, 1e-5, vb.pp("norm2"))?,
            heads: a.heads,
        })
    }

    fn forward(&self, x: &Tensor, bias: &Tensor, p: f64, dropout: Option<&SeededDropout>) -> Result<Tensor> {
        let (b, t, d) = x.dims3()?;
        let dh = d / self.heads;
        let qkv = self.qkv.forward(x)?.reshape((b, t, 3, self.heads, dh))?;
        let part = |i: usize| qkv.i((.., .., i))?.transpose(1, 2)?.contiguous();
        let (q, k, v) = (part(0)?, part(1)?, part(2)?);
        let scores = (q.matmul(&k.t()?)? / (dh as f64).sqrt())?.broadcast_add(bias)?;
        let attn = softmax_last(&scores)?;
        let ctx = attn.matmul(&v)?.transpose(1, 2)?.reshape((b, t, d))?;
        let x = self.norm1.forward(&(x + drop(&self.attn_out.forward(&ctx)?, p, dropout)?)?)?;
        let ff = self.ff2.forward(&self.ff1.forward(&x)?.relu()?)?;
        self.norm2.forward(&(&x + drop(&ff, p, dropout)?)?)
    }
}

/// Sinusoidal position table `[len, dim]`.
pub fn sinusoidal_positions(len: usize, dim: usize, device: &Device) -> Result<Tensor> {
    let mut table = vec![0f32; len * dim];
    for pos in 0..len {
        for i in 0..dim {
            let angle = pos as f64 / 10000f64.powf((2 * (i / 2)) as f64 / dim as f64);
            table[pos * dim + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() } as f32;
        }
    }
    Tensor::from_vec(table, (len, dim), device)
}

pub struct SmallTransformer {
    embedding: Embedding,
    layers: Vec<EncoderLayer>,
    out: Linear,
    dim: usize,
    p: f64,
}

impl SmallTransformer {
    pub fn new(a: &ArchConfig, vb: VarBuilder) -> Result<SmallTransformer> {
        if a.embed_dim % a.heads != 0 {
            candle_core::bail!("embed_dim {} is not divisible by {} heads", a.embed_dim, a.heads);
        }
        Ok(SmallTransformer {
            embedding: candle_nn::embedding(a.vocab_size, a.embed_dim, vb.pp("embedding"))?,
            layers: (0..a.layers)
                .map(|i| EncoderLayer::new(a, vb.pp(format!("layer{i}"))))
                .collect::<Result<_>>()?,
            out: candle_nn::linear(a.embed_dim, CLASSES, vb.pp("out"))?,
            dim: a.embed_dim,
            p: a.dropout,
        })
    }
}

impl Net for SmallTransformer {
    fn logits(&self, batch: &Batch, dropout: Option<&SeededDropout>) -> Result<Tensor> {
        let (b, t) = batch.ids.dims2()?;
        let pos = sinusoidal_positions(t, self.dim, batch.ids.device())?;
        let x = (self.embedding.forward(&batch.ids)? * (self.dim as f64).sqrt())?.broadcast_add(&pos)?;
        let mut x = drop(&x, self.p, dropout)?;
        let bias = padding_bias(&batch.mask)?.reshape((b, 1, 1, t))?;
        for layer in &self.layers {
            x = layer.forward(&x, &bias, self.p, dropout)?;
        }
        self.out.forward(&masked_mean(&x, &batch.mask)?)
    }
}

/// Pretrained encoder with a pooled `[CLS]` head.
pub struct EncoderClassifier {
    encoder: Encoder,
    pooler: Linear,
    classifier: Linear,
    p: f64,
}

impl EncoderClassifier {
    pub fn new(config: &EncoderConfig, vb: VarBuilder) -> Result<EncoderClassifier> {
        let h = config.hidden_size;
        Ok(EncoderClassifier {
            encoder: Encoder::new(config, vb.pp("bert"))?,
            pooler: candle_nn::linear(h, h, vb.pp("bert.pooler.dense"))?,
            classifier: candle_nn::linear(h, CLASSES, vb.pp("classifier"))?,
            p: config.classifier_dropout.unwrap_or(config.hidden_dropout_prob),
        })
    }
}

/// Tanh-pooled first-token state, `[b, hidden]`.
pub fn pool_first(pooler: &Linear, seq: &Tensor) -> Result<Tensor> {
    pooler.forward(&seq.i((.., 0))?)?.tanh()
}

impl Net for EncoderClassifier {
    fn logits(&self, batch: &Batch, dropout: Option<&SeededDropout>) -> Result<Tensor> {
        let seq = self.encoder.forward(&batch.ids, &batch.type_ids, &batch.mask, dropout)?;
        let pooled = pool_first(&self.pooler, &seq)?;
        self.classifier.forward(&drop(&pooled, self.p, dropout)?)
    }
}

pub fn build_baseline(family: Family, a: &ArchConfig, vb: VarBuilder) -> Result<Box<dyn Net>> {
    Ok(match family {
        Family::Cnn => Box::new(TextCnn::new(a, vb)?),
        Family::Rnn => Box::new(LstmMean::new(a, vb)?),
        Family::RnnAttention => Box::new(LstmAttention::new(a, vb)?),
        Family::TransformerScratch => Box::new(SmallTransformer::new(a, vb)?),
        other => candle_core::bail!("{other} is not a baseline network"),
    })
}
