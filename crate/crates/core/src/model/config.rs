use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    /// CLS-pooled pre-LN transformer encoder.
    Transformer,
    /// Mean-pooled embeddings straight into the head, no encoder layers.
    MlpBaseline,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Transformer => "transformer",
            Variant::MlpBaseline => "mlp_baseline",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "transformer" => Ok(Variant::Transformer),
            "mlp_baseline" | "mlp" => Ok(Variant::MlpBaseline),
            other => Err(Error::Config(format!("unknown model variant {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    /// Feed-forward width is `ff_mult * d_model`.
    pub ff_mult: usize,
    pub dropout: f64,
    pub max_seq_len: usize,
    pub variant: Variant,
    /// Learned positional embeddings added after the token embedding.
    pub positional: bool,
}

/// Name, shape and weight-decay flag of one parameter matrix.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LeafSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub decay: bool,
}

impl LeafSpec {
    fn new(name: impl Into<String>, rows: usize, cols: usize, decay: bool) -> Self {
        Self {
            name: name.into(),
            rows,
            cols,
            decay,
        }
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl ModelConfig {
    /// Small default that trains on a laptop CPU.
    pub fn desk(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            d_model: 128,
            n_heads: 4,
            n_layers: 2,
            ff_mult: 4,
            dropout: 0.2,
            max_seq_len: 512,
            variant: Variant::Transformer,
            positional: true,
        }
    }

    /// Published full-size hyperparameters. Far too large to train on a desk.
    pub fn full() -> Self {
        Self {
            vocab_size: 50257,
            d_model: 4096,
            n_heads: 4,
            n_layers: 2,
            ff_mult: 4,
            dropout: 0.2,
            max_seq_len: 4096,
            variant: Variant::Transformer,
            positional: true,
        }
    }

    pub fn ff_dim(&self) -> usize {
        self.ff_mult * self.d_model
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.vocab_size == 0 {
            return fail("vocab_size must be positive".into());
        }
        if self.d_model == 0 {
            return fail("d_model must be positive".into());
        }
        if self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return fail(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.n_layers == 0 {
            return fail("n_layers must be at least 1".into());
        }
        if self.ff_mult == 0 {
            return fail("ff_mult must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if self.max_seq_len < 2 {
            return fail(format!("max_seq_len must be at least 2, got {}", self.max_seq_len));
        }
        Ok(())
    }

    /// Every parameter matrix in storage order.
    pub fn leaf_specs(&self) -> Vec<LeafSpec> {
        let d = self.d_model;
        let mut v = vec![LeafSpec::new("tok_emb", self.vocab_size, d, true)];
        if self.positional {
            v.push(LeafSpec::new("pos_emb", self.max_seq_len, d, true));
        }
        if self.variant == Variant::Transformer {
            let ff = self.ff_dim();
            for l in 0..self.n_layers {
                let p = format!("enc.{l}");
                v.push(LeafSpec::new(format!("{p}.ln1.gain"), 1, d, false));
                v.push(LeafSpec::new(format!("{p}.ln1.bias"), 1, d, false));
                for proj in ["q", "k", "v", "o"] {
                    v.push(LeafSpec::new(format!("{p}.attn.w{proj}"), d, d, true));
                    v.push(LeafSpec::new(format!("{p}.attn.b{proj}"), 1, d, false));
                }
                v.push(LeafSpec::new(format!("{p}.ln2.gain"), 1, d, false));
                v.push(LeafSpec::new(format!("{p}.ln2.bias"), 1, d, false));
                v.push(LeafSpec::new(format!("{p}.ff1.w"), ff, d, true));
                v.push(LeafSpec::new(format!("{p}.ff1.b"), 1, ff, false));
                v.push(LeafSpec::new(format!("{p}.ff2.w"), d, ff, true));
                v.push(LeafSpec::new(format!("{p}.ff2.b"), 1, d, false));
            }
        }
        v.push(LeafSpec::new("final_ln.gain", 1, d, false));
        v.push(LeafSpec::new("final_ln.bias", 1, d, false));
        v.push(LeafSpec::new("head.ln.gain", 1, d, false));
        v.push(LeafSpec::new("head.ln.bias", 1, d, false));
        v.push(LeafSpec::new("head.w1", d, d, true));
        v.push(LeafSpec::new("head.b1", 1, d, false));
        v.push(LeafSpec::new("head.w2", 1, d, true));
        v.push(LeafSpec::new("head.b2", 1, 1, false));
        v
    }

    /// Total number of scalar parameters.
    pub fn param_count(&self) -> usize {
        self.leaf_specs().iter().map(LeafSpec::len).sum()
    }

    /// `key=value` lines, one per field.
    pub fn to_kv_lines(&self) -> Vec<String> {
        vec![
            format!("variant={}", self.variant),
            format!("vocab_size={}", self.vocab_size),
            format!("d_model={}", self.d_model),
            format!("n_heads={}", self.n_heads),
            format!("n_layers={}", self.n_layers),
            format!("ff_mult={}", self.ff_mult),
            format!("dropout={}", self.dropout),
            format!("max_seq_len={}", self.max_seq_len),
            format!("positional={}", self.positional),
        ]
    }

    /// Inverse of [`to_kv_lines`](Self::to_kv_lines). Every field is required.
    pub fn from_kv<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self> {
        let mut cfg = ModelConfig::desk(0);
        let mut seen = Vec::new();
        for (k, v) in pairs {
            let bad = |e: &dyn fmt::Display| Error::Config(format!("bad value for {k}: {v:?} ({e})"));
            match k {
                "variant" => cfg.variant = v.parse()?,
                "vocab_size" => cfg.vocab_size = v.parse().map_err(|e| bad(&e))?,
                "d_model" => cfg.d_model = v.parse().map_err(|e| bad(&e))?,
                "n_heads" => cfg.n_heads = v.parse().map_err(|e| bad(&e))?,
                "n_layers" => cfg.n_layers = v.parse().map_err(|e| bad(&e))?,
                "ff_mult" => cfg.ff_mult = v.parse().map_err(|e| bad(&e))?,
                "dropout" => cfg.dropout = v.parse().map_err(|e| bad(&e))?,
                "max_seq_len" => cfg.max_seq_len = v.parse().map_err(|e| bad(&e))?,
                "positional" => cfg.positional = v.parse().map_err(|e| bad(&e))?,
                _ => return Err(Error::Config(format!("unknown model field {k:?}"))),
            }
            seen.push(k);
        }
        for k in [
            "variant",
            "vocab_size",
            "d_model",
            "n_heads",
            "n_layers",
            "ff_mult",
            "dropout",
            "max_seq_len",
            "positional",
        ] {
            if !seen.contains(&k) {
                return Err(Error::Config(format!("missing model field {k:?}")));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
