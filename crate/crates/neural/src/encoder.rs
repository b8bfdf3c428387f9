//! A BERT-style encoder built only from differentiable tensor ops.
//!
//! Parameter names follow the common checkpoint layout (`bert.embeddings.*`,
//! `bert.encoder.layer.N.*`, `cls.predictions.*`), so published weights load
//! unchanged. The fused normalization and softmax kernels shipped with candle
//! have no backward pass, which is why this module spells them out.

use candle_core::{Result, Tensor, D};
use candle_nn::{Embedding, Init, Linear, Module, VarBuilder};
use serde::{Deserialize, Serialize};

use crate::init::SeededDropout;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    #[serde(rename = "gelu")]
    Gelu,
    #[serde(rename = "gelu_new", alias = "gelu_pytorch_tanh")]
    GeluTanh,
    #[serde(rename = "relu")]
    Relu,
}

impl Activation {
    fn apply(self, xs: &Tensor) -> Result<Tensor> {
        match self {
            Activation::Gelu => xs.gelu_erf(),
            Activation::GeluTanh => xs.gelu(),
            Activation::Relu => xs.relu(),
        }
    }
}

fn default_act() -> Activation {
    Activation::Gelu
}
fn default_type_vocab() -> usize {
    2
}
fn default_eps() -> f64 {
    1e-12
}
fn default_dropout() -> f64 {
    0.1
}

/// The subset of `config.json` the encoder needs. Unknown keys are ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub hidden_size: usize,
    pub num_hidden_layers: usize,
    pub num_attention_heads: usize,
    pub intermediate_size: usize,
    #[serde(default = "default_act")]
    pub hidden_act: Activation,
    pub max_position_embeddings: usize,
    #[serde(default = "default_type_vocab")]
    pub type_vocab_size: usize,
    #[serde(default = "default_eps")]
    pub layer_norm_eps: f64,
    #[serde(default = "default_dropout")]
    pub hidden_dropout_prob: f64,
    #[serde(default = "default_dropout")]
    pub attention_probs_dropout_prob: f64,
    #[serde(default)]
    pub classifier_dropout: Option<f64>,
}

impl EncoderConfig {
    pub fn check(&self) -> Result<()> {
        if self.num_attention_heads == 0 || self.hidden_size % self.num_attention_heads != 0 {
            candle_core::bail!(
                "hidden_size {} is not divisible by {} attention heads",
                self.hidden_size,
                self.num_attention_heads
            );
        }
        Ok(())
    }
}

pub(crate) fn maybe_drop(xs: &Tensor, p: f64, dropout: Option<&SeededDropout>) -> Result<Tensor> {
    match dropout {
        Some(d) => d.apply(xs, p),
        None => Ok(xs.clone()),
    }
}

/// Softmax over the last axis, differentiable.
pub(crate) fn softmax_last(xs: &Tensor) -> Result<Tensor> {
    candle_nn::ops::softmax(xs, D::Minus1)
}

/// Layer normalization over the last axis, differentiable.
pub struct LayerNorm {
    weight: Tensor,
    bias: Tensor,
    eps: f64,
}

impl LayerNorm {
    pub fn new(dim: usize, eps: f64, vb: VarBuilder) -> Result<LayerNorm> {
        Ok(LayerNorm {
            weight: vb.get_with_hints(dim, "weight", Init::Const(1.0))?,
            bias: vb.get_with_hints(dim, "bias", Init::Const(0.0))?,
            eps,
        })
    }
}

impl Module for LayerNorm {
    fn forward(&self, xs: &Tensor) -> Result<Tensor> {
        let centered = xs.broadcast_sub(&xs.mean_keepdim(D::Minus1)?)?;
        let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
        let normed = centered.broadcast_div(&(var + self.eps)?.sqrt()?)?;
        normed.broadcast_mul(&self.weight)?.broadcast_add(&self.bias)
    }
}

struct Layer {
    query: Linear,
    key: Linear,
    value: Linear,
    attn_out: Linear,
    attn_norm: LayerNorm,
    intermediate: Linear,
    out: Linear,
    out_norm: LayerNorm,
}

impl Layer {
    fn new(c: &EncoderConfig, vb: VarBuilder) -> Result<Layer> {
        let h = c.hidden_size;
        let att = vb.pp("attention");
        Ok(Layer {
            query: candle_nn::linear(h, h, att.pp("self.query"))?,
            key: candle_nn::linear(h, h, att.pp("self.key"))?,
            value: candle_nn::linear(h, h, att.pp("self.value"))?,
            attn_out: candle_nn::linear(h, h, att.pp("output.dense"))?,
            attn_norm: LayerNorm::new(h, c.layer_norm_eps, att.pp("output.LayerNorm"))?,
            intermediate: candle_nn::linear(h, c.intermediate_size, vb.pp("intermediate.dense"))?,
            out: candle_nn::linear(c.intermediate_size, h, vb.pp("output.dense"))?,
            out_norm: LayerNorm::new(h, c.layer_norm_eps, vb.pp("output.LayerNorm"))?,
        })
    }

    fn forward(
        &self,
        x: &Tensor,
        bias: &Tensor,
        c: &EncoderConfig,
        dropout: Option<&SeededDropout>,
    ) -> Result<Tensor> {
        let (b, t, h) = x.dims3()?;
        let heads = c.num_attention_heads;
        let dh = h / heads;
        let split = |l: &Linear| -> Result<Tensor> {
            l.forward(x)?.reshape((b, t, heads, dh))?.transpose(1, 2)?.contiguous()
        };
        let (q, k, v) = (split(&self.query)?, split(&self.key)?, split(&self.value)?);
        let scores = (q.matmul(&k.t()?)? / (dh as f64).sqrt())?.broadcast_add(bias)?;
        let probs = maybe_drop(&softmax_last(&scores)?, c.attention_probs_dropout_prob, dropout)?;
        let ctx = probs.matmul(&v)?.transpose(1, 2)?.reshape((b, t, h))?;
        let attn = maybe_drop(&self.attn_out.forward(&ctx)?, c.hidden_dropout_prob, dropout)?;
        let x = self.attn_norm.forward(&(attn + x)?)?;
        let mid = c.hidden_act.apply(&self.intermediate.forward(&x)?)?;
        let out = maybe_drop(&self.out.forward(&mid)?, c.hidden_dropout_prob, dropout)?;
        self.out_norm.forward(&(out + x)?)
    }
}

/// The encoder stack under `bert.`, without pooler or task heads.
pub struct Encoder {
    word: Embedding,
    position: Embedding,
    token_type: Embedding,
    norm: LayerNorm,
    layers: Vec<Layer>,
    config: EncoderConfig,
}

impl Encoder {
    /// `vb` points at the `bert` prefix.
    pub fn new(config: &EncoderConfig, vb: VarBuilder) -> Result<Encoder> {
        config.check()?;
        let h = config.hidden_size;
        let emb = vb.pp("embeddings");
        Ok(Encoder {
            word: candle_nn::embedding(config.vocab_size, h, emb.pp("word_embeddings"))?,
            position: candle_nn::embedding(config.max_position_embeddings, h, emb.pp("position_embeddings"))?,
            token_type: candle_nn::embedding(config.type_vocab_size, h, emb.pp("token_type_embeddings"))?,
            norm: LayerNorm::new(h, config.layer_norm_eps, emb.pp("LayerNorm"))?,
            layers: (0..config.num_hidden_layers)
                .map(|i| Layer::new(config, vb.pp(format!("encoder.layer.{i}"))))
                .collect::<Result<_>>()?,
            config: config.clone(),
        })
    }

    /// Hidden states `[b, t, hidden]`. `mask` is `[b, t]` with 1.0 on real
    /// tokens.
    pub fn forward(
        &self,
        ids: &Tensor,
        type_ids: &Tensor,
        mask: &Tensor,
        dropout: Option<&SeededDropout>,
    ) -> Result<Tensor> {
        let (b, t) = ids.dims2()?;
        if t > self.config.max_position_embeddings {
            candle_core::bail!(
                "sequence of {t} tokens exceeds {} positions",
                self.config.max_position_embeddings
            );
        }
        let positions = Tensor::arange(0u32, t as u32, ids.device())?;
        let x = (self.word.forward(ids)? + self.token_type.forward(type_ids)?)?
            .broadcast_add(&self.position.forward(&positions)?)?;
        let mut x = maybe_drop(&self.norm.forward(&x)?, self.config.hidden_dropout_prob, dropout)?;
        // 0 on real tokens, -1e4 on padding, broadcast over heads and queries
        let bias = ((mask - 1.0)? * 1e4)?.reshape((b, 1, 1, t))?;
        for layer in &self.layers {
            x = layer.forward(&x, &bias, &self.config, dropout)?;
        }
        Ok(x)
    }
}

/// Masked-token prediction head under `cls.predictions`.
pub struct MlmHead {
    dense: Linear,
    norm: LayerNorm,
    decoder: Linear,
    act: Activation,
}

impl MlmHead {
    /// `vb` points at the `cls.predictions` prefix.
    pub fn new(config: &EncoderConfig, vb: VarBuilder) -> Result<MlmHead> {
        let h = config.hidden_size;
        Ok(MlmHead {
            dense: candle_nn::linear(h, h, vb.pp("transform.dense"))?,
            norm: LayerNorm::new(h, config.layer_norm_eps, vb.pp("transform.LayerNorm"))?,
            decoder: candle_nn::linear(h, config.vocab_size, vb.pp("decoder"))?,
            act: config.hidden_act,
        })
    }
}

impl Module for MlmHead {
    fn forward(&self, xs: &Tensor) -> Result<Tensor> {
        let h = self.norm.forward(&self.act.apply(&self.dense.forward(xs)?)?)?;
        self.decoder.forward(&h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::init::SeededVarMap;
    use candle_core::{DType, Device, Var};

    fn config() -> EncoderConfig {
        serde_json::from_value(serde_json::json!({
            "vocab_size": 12, "hidden_size": 8, "num_hidden_layers": 2,
            "num_attention_heads": 2, "intermediate_size": 16,
            "max_position_embeddings": 10, "model_type": "bert"
        }))
        .unwrap()
    }

    #[test]
    fn config_defaults_and_activation_names() {
        let c = config();
        assert_eq!(c.hidden_act, Activation::Gelu);
        assert_eq!(c.type_vocab_size, 2);
        let a: Activation = serde_json::from_str("\"gelu_pytorch_tanh\"").unwrap();
        assert_eq!(a, Activation::GeluTanh);
        let bad = EncoderConfig { num_attention_heads: 3, ..c };
        assert!(bad.check().is_err());
    }

    #[test]
    fn layer_norm_matches_a_direct_computation() {
        let dev = Device::Cpu;
        let map = SeededVarMap::new(0);
        let ln = LayerNorm::new(4, 1e-5, map.builder(&dev)).unwrap();
        let x = Tensor::new(&[[1f32, 2.0, 3.0, 6.0]], &dev).unwrap();
        let y = ln.forward(&x).unwrap().to_vec2::<f32>().unwrap();
        let mean = 3.0f64;
        let var = (4.0 + 1.0 + 0.0 + 9.0) / 4.0;
        for (got, v) in y[0].iter().zip([1.0, 2.0, 3.0, 6.0]) {
            let want = (v - mean) / (var + 1e-5f64).sqrt();
            assert!((*got as f64 - want).abs() < 1e-5);
        }
    }

    #[test]
    fn every_parameter_receives_a_gradient() {
        let dev = Device::Cpu;
        let c = config();
        let map = SeededVarMap::new(2);
        let vb = map.builder(&dev);
        let enc = Encoder::new(&c, vb.pp("bert")).unwrap();
        let head = MlmHead::new(&c, vb.pp("cls.predictions")).unwrap();
        let ids = Tensor::new(&[[2u32, 5, 7, 3, 0], [2, 9, 3, 0, 0]], &dev).unwrap();
        let types = Tensor::new(&[[0u32, 0, 0, 1, 0], [0, 0, 1, 0, 0]], &dev).unwrap();
        let mask = Tensor::new(&[[1f32, 1.0, 1.0, 1.0, 0.0], [1.0, 1.0, 1.0, 0.0, 0.0]], &dev).unwrap();
        let seq = enc.forward(&ids, &types, &mask, None).unwrap();
        let logits = head.forward(&seq.reshape((10, 8)).unwrap()).unwrap();
        let targets = Tensor::new(&[1u32, 4, 6, 8, 0, 10, 11, 2, 0, 0], &dev).unwrap();
        let loss = candle_nn::loss::cross_entropy(&logits, &targets).unwrap();
        let grads = loss.backward().unwrap();
        let vars: Vec<(String, Var)> = map.sorted_vars();
        assert!(!vars.is_empty());
        for (name, var) in vars {
            let g = grads.get(&var).unwrap_or_else(|| panic!("no gradient for {name}"));
            let norm = g.sqr().unwrap().sum_all().unwrap().to_dtype(DType::F64).unwrap().to_scalar::<f64>().unwrap();
            assert!(norm.is_finite(), "{name}");
            if !name.contains("token_type") && !name.contains("position") && !name.contains("word") {
                assert!(norm > 0.0, "zero gradient for {name}");
            }
        }
    }

    #[test]
    fn padding_does_not_change_real_positions() {
        let dev = Device::Cpu;
        let c = config();
        let map = SeededVarMap::new(3);
        let enc = Encoder::new(&c, map.builder(&dev).pp("bert")).unwrap();
        let run = |ids: &[u32]| {
            let n = ids.len();
            let mut m = vec![0f32; n];
            for v in m.iter_mut().take(3) {
                *v = 1.0;
            }
            let t = Tensor::new(ids, &dev).unwrap().unsqueeze(0).unwrap();
            let mask = Tensor::new(m.as_slice(), &dev).unwrap().unsqueeze(0).unwrap();
            enc.forward(&t, &t.zeros_like().unwrap(), &mask, None).unwrap().to_vec3::<f32>().unwrap()
        };
        let short = run(&[2, 5, 3]);
        let long = run(&[2, 5, 3, 0, 0, 0]);
        for p in 0..3 {
            for (a, b) in short[0][p].iter().zip(&long[0][p]) {
                assert!((a - b).abs() < 1e-5);
            }
        }
    }
}
