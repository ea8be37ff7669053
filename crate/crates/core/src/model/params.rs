use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::{ModelConfig, Variant};
use crate::error::{Error, Result};
use crate::nn::{MultiHeadAttention, ParamLeaf, Tensor};
use crate::real::Real;

/// Standard deviation of the truncated normal used for weights.
pub const INIT_STD: f64 = 0.02;

#[derive(Clone, Debug)]
pub struct LayerNormParams<T> {
    pub gain: ParamLeaf<T>,
    pub bias: ParamLeaf<T>,
}

impl<T: Real> LayerNormParams<T> {
    fn zeros(prefix: &str, d: usize) -> Self {
        Self {
            gain: ParamLeaf::zeros(format!("{prefix}.gain"), 1, d, false),
            bias: ParamLeaf::zeros(format!("{prefix}.bias"), 1, d, false),
        }
    }
}

#[derive(Clone, Debug)]
pub struct EncoderLayer<T> {
    pub ln1: LayerNormParams<T>,
    pub attn: MultiHeadAttention<T>,
    pub ln2: LayerNormParams<T>,
    pub ff1_w: ParamLeaf<T>,
    pub ff1_b: ParamLeaf<T>,
    pub ff2_w: ParamLeaf<T>,
    pub ff2_b: ParamLeaf<T>,
}

/// `E = w2 . GELU(w1 . LN(h) + b1) + b2`.
#[derive(Clone, Debug)]
pub struct EnergyHead<T> {
    pub ln: LayerNormParams<T>,
    pub w1: ParamLeaf<T>,
    pub b1: ParamLeaf<T>,
    pub w2: ParamLeaf<T>,
    pub b2: ParamLeaf<T>,
}

#[derive(Clone, Debug)]
pub struct ModelParams<T> {
    pub config: ModelConfig,
    pub tok_emb: ParamLeaf<T>,
    pub pos_emb: Option<ParamLeaf<T>>,
    /// Empty for the MLP baseline.
    pub layers: Vec<EncoderLayer<T>>,
    pub final_ln: LayerNormParams<T>,
    pub head: EnergyHead<T>,
}

impl<T: Real> ModelParams<T> {
    /// Every leaf zero, layer-norm gains included.
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let ff = config.ff_dim();
        let layers = match config.variant {
            Variant::Transformer => (0..config.n_layers)
                .map(|l| {
                    let p = format!("enc.{l}");
                    Ok(EncoderLayer {
                        ln1: LayerNormParams::zeros(&format!("{p}.ln1"), d),
                        attn: MultiHeadAttention::new(&format!("{p}.attn"), d, config.n_heads)?,
                        ln2: LayerNormParams::zeros(&format!("{p}.ln2"), d),
                        ff1_w: ParamLeaf::zeros(format!("{p}.ff1.w"), ff, d, true),
                        ff1_b: ParamLeaf::zeros(format!("{p}.ff1.b"), 1, ff, false),
                        ff2_w: ParamLeaf::zeros(format!("{p}.ff2.w"), d, ff, true),
                        ff2_b: ParamLeaf::zeros(format!("{p}.ff2.b"), 1, d, false),
                    })
                })
                .collect::<Result<Vec<_>>>()?,
            Variant::MlpBaseline => Vec::new(),
        };
        Ok(Self {
            config: config.clone(),
            tok_emb: ParamLeaf::zeros("tok_emb", config.vocab_size, d, true),
            pos_emb: config
                .positional
                .then(|| ParamLeaf::zeros("pos_emb", config.max_seq_len, d, true)),
            layers,
            final_ln: LayerNormParams::zeros("final_ln", d),
            head: EnergyHead {
                ln: LayerNormParams::zeros("head.ln", d),
                w1: ParamLeaf::zeros("head.w1", d, d, true),
                b1: ParamLeaf::zeros("head.b1", 1, d, false),
                w2: ParamLeaf::zeros("head.w2", 1, d, true),
                b2: ParamLeaf::zeros("head.b2", 1, 1, false),
            },
        })
    }

    /// All leaves in storage order (the order of [`ModelConfig::leaf_specs`]).
    pub fn leaves(&self) -> Vec<&ParamLeaf<T>> {
        let mut v = vec![&self.tok_emb];
        v.extend(self.pos_emb.as_ref());
        for l in &self.layers {
            v.extend([&l.ln1.gain, &l.ln1.bias]);
            v.extend(l.attn.leaves());
            v.extend([&l.ln2.gain, &l.ln2.bias, &l.ff1_w, &l.ff1_b, &l.ff2_w, &l.ff2_b]);
        }
        v.extend([&self.final_ln.gain, &self.final_ln.bias]);
        let h = &self.head;
        v.extend([&h.ln.gain, &h.ln.bias, &h.w1, &h.b1, &h.w2, &h.b2]);
        v
    }

    pub fn leaves_mut(&mut self) -> Vec<&mut ParamLeaf<T>> {
        let mut v = vec![&mut self.tok_emb];
        v.extend(self.pos_emb.as_mut());
        for l in &mut self.layers {
            v.extend([&mut l.ln1.gain, &mut l.ln1.bias]);
            v.extend(l.attn.leaves_mut());
            v.extend([
                &mut l.ln2.gain,
                &mut l.ln2.bias,
                &mut l.ff1_w,
                &mut l.ff1_b,
                &mut l.ff2_w,
                &mut l.ff2_b,
            ]);
        }
        v.extend([&mut self.final_ln.gain, &mut self.final_ln.bias]);
        let h = &mut self.head;
        v.extend([&mut h.ln.gain, &mut h.ln.bias, &mut h.w1, &mut h.b1, &mut h.w2, &mut h.b2]);
        v
    }

    pub fn param_count(&self) -> usize {
        self.leaves().iter().map(|l| l.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for l in self.leaves_mut() {
            l.zero_grad();
        }
    }

    pub fn ensure_finite(&self) -> Result<()> {
        for l in self.leaves() {
            if !l.value.is_finite() {
                return Err(Error::NonFinite(format!("parameter {}", l.name)));
            }
        }
        Ok(())
    }

    /// Same values in another precision; gradients reset to zero.
    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        let mut out = ModelParams::<U>::zeros(&self.config).expect("config already validated");
        for (dst, src) in out.leaves_mut().into_iter().zip(self.leaves()) {
            dst.value = src.value.cast();
        }
        out
    }
}

fn truncated_normal(rng: &mut ChaCha8Rng, normal: &Normal<f64>) -> f64 {
    loop {
        let v = normal.sample(rng);
        if v.abs() <= 2.0 * INIT_STD {
            return v;
        }
    }
}

/// Seeded initialization: weight matrices and embeddings from N(0, 0.02^2)
/// truncated at two standard deviations, layer-norm gains 1, biases 0.
pub fn init_params<T: Real>(config: &ModelConfig, seed: u64) -> Result<ModelParams<T>> {
    let mut params = ModelParams::zeros(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, INIT_STD).expect("positive std");
    for leaf in params.leaves_mut() {
        if leaf.decay {
            for v in leaf.value.data_mut() {
                *v = T::lit(truncated_normal(&mut rng, &normal));
            }
        } else if leaf.name.ends_with(".gain") {
            leaf.value = Tensor::filled(leaf.value.rows(), leaf.value.cols(), T::one());
        }
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelConfig {
        ModelConfig {
            vocab_size: 258,
            d_model: 16,
            n_heads: 2,
            n_layers: 1,
            ff_mult: 4,
            dropout: 0.1,
            max_seq_len: 64,
            variant: Variant::Transformer,
            positional: true,
        }
    }

    #[test]
    fn leaves_follow_the_spec_list() {
        for variant in [Variant::Transformer, Variant::MlpBaseline] {
            for positional in [true, false] {
                let cfg = ModelConfig {
                    variant,
                    positional,
                    n_layers: 2,
                    ..small()
                };
                let p = ModelParams::<f32>::zeros(&cfg).unwrap();
                let got: Vec<_> = p.leaves().iter().map(|l| (l.name.clone(), l.shape(), l.decay)).collect();
                let want: Vec<_> = cfg
                    .leaf_specs()
                    .into_iter()
                    .map(|s| (s.name, (s.rows, s.cols), s.decay))
                    .collect();
                assert_eq!(got, want);
                assert_eq!(p.param_count(), cfg.param_count());
            }
        }
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let a = init_params::<f32>(&small(), 7).unwrap();
        let b = init_params::<f32>(&small(), 7).unwrap();
        let c = init_params::<f32>(&small(), 8).unwrap();
        for ((la, lb), lc) in a.leaves().iter().zip(b.leaves()).zip(c.leaves()) {
            let bits = |t: &Tensor<f32>| t.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&la.value), bits(&lb.value), "{}", la.name);
            if la.decay {
                assert_ne!(bits(&la.value), bits(&lc.value), "{}", la.name);
                assert!(la.value.data().iter().all(|x| x.abs() <= 0.04 + 1e-7));
            } else if la.name.ends_with(".gain") {
                assert!(la.value.data().iter().all(|&x| x == 1.0), "{}", la.name);
            } else {
                assert!(la.value.data().iter().all(|&x| x == 0.0), "{}", la.name);
            }
        }
    }

    #[test]
    fn init_spread_is_close_to_truncated_std() {
        let p = init_params::<f64>(&small(), 1).unwrap();
        let w = &p.tok_emb.value;
        let n = w.len() as f64;
        let mean = w.data().iter().sum::<f64>() / n;
        let var = w.data().iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        // std of N(0, s^2) truncated at +-2s is about 0.88 s
        assert!(mean.abs() < 0.002, "{mean}");
        assert!((var.sqrt() / INIT_STD - 0.88).abs() < 0.03, "{}", var.sqrt());
    }

    #[test]
    fn invalid_config_is_rejected() {
        let cfg = ModelConfig { n_heads: 5, ..small() };
        assert!(matches!(init_params::<f32>(&cfg, 0), Err(Error::Config(_))));
    }
}
