//! Seeded parameter creation and dropout.
//!
//! candle draws initial values and dropout masks from an unseeded global
//! generator. Everything here derives its randomness from the run seed
//! instead, so two runs with the same seed start from identical weights.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use candle_core::{DType, Device, Result, Shape, Tensor, Var};
use candle_nn::init::NormalOrUniform;
use candle_nn::var_builder::SimpleBackend;
use candle_nn::{Init, VarBuilder, VarMap};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

/// Generator for one named parameter. Independent of creation order.
pub fn rng_for(seed: u64, name: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ fnv1a(name))
}

/// Values for `init` over `shape`, drawn from `rng`.
pub fn sample_init(init: Init, shape: &Shape, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let n = shape.elem_count();
    let normal = |rng: &mut ChaCha8Rng, mean: f64, std: f64| -> Vec<f32> {
        let d = Normal::new(mean, std.max(f64::MIN_POSITIVE)).expect("finite std");
        (0..n).map(|_| d.sample(rng) as f32).collect()
    };
    let uniform = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| -> Vec<f32> {
        if lo >= hi {
            return vec![lo as f32; n];
        }
        let d = Uniform::new(lo, hi).expect("ordered bounds");
        (0..n).map(|_| d.sample(rng) as f32).collect()
    };
    match init {
        Init::Const(c) => vec![c as f32; n],
        Init::Randn { mean, stdev } => normal(rng, mean, stdev),
        Init::Uniform { lo, up } => uniform(rng, lo, up),
        Init::Kaiming { dist, fan, non_linearity } => {
            let std = non_linearity.gain() / (fan.for_shape(shape) as f64).sqrt();
            match dist {
                NormalOrUniform::Uniform => {
                    let bound = 3f64.sqrt() * std;
                    uniform(rng, -bound, bound)
                }
                NormalOrUniform::Normal => normal(rng, 0.0, std),
            }
        }
    }
}

/// A [`VarMap`] whose new variables are initialized from the seed.
#[derive(Clone)]
pub struct SeededVarMap {
    pub vars: VarMap,
    seed: u64,
}

impl SeededVarMap {
    pub fn new(seed: u64) -> SeededVarMap {
        SeededVarMap {
            vars: VarMap::new(),
            seed,
        }
    }

    /// Starts from existing values. Names not in `tensors` are initialized
    /// from the seed when first requested.
    pub fn with_tensors(seed: u64, tensors: HashMap<String, Tensor>) -> Result<SeededVarMap> {
        let map = SeededVarMap::new(seed);
        {
            let mut data = map.vars.data().lock().expect("var map lock");
            for (name, t) in tensors {
                data.insert(name, Var::from_tensor(&t.to_dtype(DType::F32)?)?);
            }
        }
        Ok(map)
    }

    pub fn builder(&self, device: &Device) -> VarBuilder<'static> {
        VarBuilder::from_backend(Box::new(self.clone()), DType::F32, device.clone())
    }

    /// Trainable variables sorted by name.
    pub fn sorted_vars(&self) -> Vec<(String, Var)> {
        let data = self.vars.data().lock().expect("var map lock");
        let mut out: Vec<(String, Var)> = data.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
        out.sort_by(|a, b| a.0.cmp(&b.0));
        out
    }

    /// Deep copy of the current values.
    pub fn snapshot(&self) -> Result<HashMap<String, Tensor>> {
        self.sorted_vars()
            .into_iter()
            .map(|(k, v)| Ok((k, v.as_tensor().copy()?)))
            .collect()
    }
}

impl SimpleBackend for SeededVarMap {
    fn get(&self, s: Shape, name: &str, h: Init, dtype: DType, dev: &Device) -> Result<Tensor> {
        let mut data = self.vars.data().lock().expect("var map lock");
        if let Some(v) = data.get(name) {
            if v.shape() != &s {
                candle_core::bail!("shape mismatch on {name}: expected {s:?}, found {:?}", v.shape());
            }
            return v.as_tensor().to_dtype(dtype);
        }
        let values = sample_init(h, &s, &mut rng_for(self.seed, name));
        let var = Var::from_tensor(&Tensor::from_vec(values, s, dev)?.to_dtype(dtype)?)?;
        let t = var.as_tensor().clone();
        data.insert(name.to_string(), var);
        Ok(t)
    }

    fn get_unchecked(&self, name: &str, dtype: DType, _dev: &Device) -> Result<Tensor> {
        let data = self.vars.data().lock().expect("var map lock");
        match data.get(name) {
            Some(v) => v.as_tensor().to_dtype(dtype),
            None => candle_core::bail!("no variable named {name}"),
        }
    }

    fn contains_tensor(&self, name: &str) -> bool {
        self.vars.data().lock().expect("var map lock").contains_key(name)
    }
}

/// Inverted dropout with masks drawn from a seeded generator.
#[derive(Clone)]
pub struct SeededDropout {
    rng: Arc<Mutex<ChaCha8Rng>>,
}

impl SeededDropout {
    pub fn new(seed: u64) -> SeededDropout {
        SeededDropout {
            rng: Arc::new(Mutex::new(rng_for(seed, "dropout"))),
        }
    }

    pub fn apply(&self, xs: &Tensor, p: f64) -> Result<Tensor> {
        if p <= 0.0 {
            return Ok(xs.clone());
        }
        if p >= 1.0 {
            candle_core::bail!("dropout probability must be below 1, got {p}");
        }
        let scale = (1.0 / (1.0 - p)) as f32;
        let mask: Vec<f32> = {
            let mut rng = self.rng.lock().expect("dropout lock");
            (0..xs.elem_count())
                .map(|_| if rng.random::<f64>() < p { 0.0 } else { scale })
                .collect()
        };
        let mask = Tensor::from_vec(mask, xs.shape(), xs.device())?.to_dtype(xs.dtype())?;
        xs * mask
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_nn::Module;

    #[test]
    fn same_seed_same_weights() {
        let dev = Device::Cpu;
        let build = |seed| {
            let map = SeededVarMap::new(seed);
            let lin = candle_nn::linear(4, 3, map.builder(&dev).pp("head")).unwrap();
            let emb = candle_nn::embedding(10, 4, map.builder(&dev).pp("emb")).unwrap();
            let x = Tensor::new(&[[1f32, 2.0, 3.0, 4.0]], &dev).unwrap();
            let y = lin.forward(&x).unwrap().to_vec2::<f32>().unwrap();
            let e = emb.embeddings().to_vec2::<f32>().unwrap();
            (y, e)
        };
        assert_eq!(build(7), build(7));
        assert_ne!(build(7), build(8));
    }

    #[test]
    fn existing_tensors_win() {
        let dev = Device::Cpu;
        let w = Tensor::ones((2, 2), DType::F32, &dev).unwrap();
        let map = SeededVarMap::with_tensors(0, HashMap::from([("l.weight".to_string(), w)])).unwrap();
        let got = map.builder(&dev).pp("l").get((2, 2), "weight").unwrap();
        assert_eq!(got.to_vec2::<f32>().unwrap(), [[1.0, 1.0], [1.0, 1.0]]);
        assert!(map.builder(&dev).pp("l").get((3, 2), "weight").is_err());
    }

    #[test]
    fn dropout_is_reproducible_and_scaled() {
        let dev = Device::Cpu;
        let x = Tensor::ones(1000, DType::F32, &dev).unwrap();
        let a = SeededDropout::new(3).apply(&x, 0.5).unwrap().to_vec1::<f32>().unwrap();
        let b = SeededDropout::new(3).apply(&x, 0.5).unwrap().to_vec1::<f32>().unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|v| *v == 0.0 || *v == 2.0));
        let kept = a.iter().filter(|v| **v > 0.0).count();
        assert!((400..600).contains(&kept));
        assert_eq!(SeededDropout::new(3).apply(&x, 0.0).unwrap().to_vec1::<f32>().unwrap(), vec![1.0; 1000]);
    }
}
