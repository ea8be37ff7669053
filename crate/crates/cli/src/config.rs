//! Layered `key=value` configuration: preset, then config file, then flags.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use eorm::model::ModelConfig;
use eorm::tokenizer::{byte_fallback_vocab, load_vocab, Vocab};
use eorm::train::TrainConfig;
use eorm::{Error, Result};

/// Every key a config file may set.
pub const KNOWN_KEYS: &[&str] = &[
    "preset",
    "data",
    "answers",
    "out",
    "tokenizer",
    "strict",
    "split_ratio",
    "variant",
    "vocab_size",
    "d_model",
    "n_heads",
    "n_layers",
    "ff_mult",
    "dropout",
    "max_seq_len",
    "positional",
    "epochs",
    "lr",
    "weight_decay",
    "warmup_ratio",
    "clip",
    "seed",
    "group_batch",
    "adam_beta1",
    "adam_beta2",
    "adam_eps",
    "eval_every",
    "n_values",
    "trials",
];

pub type KvMap = BTreeMap<String, String>;

/// Parses a flat `key=value` file. Blank lines and lines starting with `#`
/// are ignored; unknown keys are an error so typos do not go unnoticed.
pub fn parse_config_text(text: &str, origin: &str) -> Result<KvMap> {
    let mut out = KvMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Config(format!("{origin}:{}: expected key=value, got {line:?}", i + 1)));
        };
        let k = k.trim();
        if !KNOWN_KEYS.contains(&k) {
            return Err(Error::Config(format!("{origin}:{}: unknown key {k:?}", i + 1)));
        }
        out.insert(k.to_string(), v.trim().to_string());
    }
    Ok(out)
}

pub fn read_config_file(path: &Path) -> Result<KvMap> {
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_config_text(&text, &path.display().to_string())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Desk,
    Full,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Preset::Desk),
            "full" => Ok(Preset::Full),
            other => Err(Error::Config(format!("unknown preset {other:?} (expected desk or full)"))),
        }
    }
}

impl Preset {
    /// Defaults for every training key. `vocab_size` is left out: it always
    /// comes from the tokenizer.
    pub fn defaults(self) -> KvMap {
        let model = match self {
            Preset::Desk => ModelConfig::desk(0),
            Preset::Full => ModelConfig::full(),
        };
        let mut m = KvMap::new();
        let lines = model.to_kv_lines().into_iter().chain(TrainConfig::default().to_kv_lines());
        for line in lines {
            let (k, v) = line.split_once('=').expect("kv line");
            if k != "vocab_size" {
                m.insert(k.into(), v.into());
            }
        }
        m.insert("tokenizer".into(), TokenizerSpec::Byte.to_string());
        m.insert("split_ratio".into(), "0.8".into());
        m.insert("strict".into(), "false".into());
        m.insert("out".into(), "eorm-run".into());
        m
    }
}

/// Which vocabulary to encode text with.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TokenizerSpec {
    /// 256 byte tokens plus CLS and PAD.
    Byte,
    /// A byte-level BPE `vocab.json`, with an optional `merges.txt`.
    Files { vocab: PathBuf, merges: Option<PathBuf> },
}

impl fmt::Display for TokenizerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TokenizerSpec::Byte => f.write_str("byte"),
            TokenizerSpec::Files { vocab, merges: None } => write!(f, "files:{}", vocab.display()),
            TokenizerSpec::Files { vocab, merges: Some(m) } => write!(f, "files:{},{}", vocab.display(), m.display()),
        }
    }
}

impl FromStr for TokenizerSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "byte" {
            return Ok(TokenizerSpec::Byte);
        }
        let Some(rest) = s.strip_prefix("files:") else {
            return Err(Error::Config(format!(
                "tokenizer must be \"byte\" or \"files:<vocab.json>[,<merges.txt>]\", got {s:?}"
            )));
        };
        let mut parts = rest.splitn(2, ',');
        let vocab = parts.next().filter(|p| !p.is_empty());
        let Some(vocab) = vocab else {
            return Err(Error::Config("tokenizer files: missing vocabulary path".into()));
        };
        Ok(TokenizerSpec::Files {
            vocab: vocab.into(),
            merges: parts.next().filter(|p| !p.is_empty()).map(PathBuf::from),
        })
    }
}

impl TokenizerSpec {
    pub fn load(&self) -> Result<Vocab> {
        match self {
            TokenizerSpec::Byte => Ok(byte_fallback_vocab()),
            TokenizerSpec::Files { vocab, merges } => load_vocab(vocab, merges.as_deref()),
        }
    }
}

fn get<T: FromStr>(m: &KvMap, key: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    let v = m
        .get(key)
        .ok_or_else(|| Error::Config(format!("missing setting {key:?}")))?;
    v.parse()
        .map_err(|e| Error::Config(format!("bad value for {key}: {v:?} ({e})")))
}

/// Everything `train` needs, fully resolved.
#[derive(Clone, Debug)]
pub struct TrainRun {
    pub data: PathBuf,
    pub tokenizer: TokenizerSpec,
    pub strict: bool,
    pub split_ratio: f64,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl TrainRun {
    /// Resolves `preset < file < flags` and loads the tokenizer to fix the
    /// vocabulary size. Returns the run and its vocabulary.
    pub fn resolve(file: &KvMap, flags: &KvMap) -> Result<(Self, Vocab)> {
        let preset: Preset = flags
            .get("preset")
            .or_else(|| file.get("preset"))
            .map_or(Ok(Preset::Desk), |p| p.parse())?;
        let mut m = preset.defaults();
        m.extend(file.iter().map(|(k, v)| (k.clone(), v.clone())));
        m.extend(flags.iter().map(|(k, v)| (k.clone(), v.clone())));

        let tokenizer: TokenizerSpec = get(&m, "tokenizer")?;
        let vocab = tokenizer.load()?;
        if let Some(v) = m.get("vocab_size") {
            if v.parse::<usize>().ok() != Some(vocab.vocab_size()) {
                return Err(Error::Config(format!(
                    "vocab_size={v} does not match tokenizer {tokenizer} with {} entries",
                    vocab.vocab_size()
                )));
            }
        }
        let vocab_size = vocab.vocab_size().to_string();
        let model_keys = [
            "variant",
            "d_model",
            "n_heads",
            "n_layers",
            "ff_mult",
            "dropout",
            "max_seq_len",
            "positional",
        ];
        let pairs = model_keys
            .iter()
            .map(|&k| Ok((k, m.get(k).ok_or_else(|| Error::Config(format!("missing setting {k:?}")))?.as_str())))
            .chain(std::iter::once(Ok(("vocab_size", vocab_size.as_str()))))
            .collect::<Result<Vec<_>>>()?;
        let model = ModelConfig::from_kv(pairs)?;

        let train = TrainConfig {
            epochs: get(&m, "epochs")?,
            peak_lr: get(&m, "lr")?,
            weight_decay: get(&m, "weight_decay")?,
            warmup_ratio: get(&m, "warmup_ratio")?,
            clip_norm: get(&m, "clip")?,
            seed: get(&m, "seed")?,
            group_batch: get(&m, "group_batch")?,
            adam_beta1: get(&m, "adam_beta1")?,
            adam_beta2: get(&m, "adam_beta2")?,
            adam_eps: get(&m, "adam_eps")?,
            eval_every: get(&m, "eval_every")?,
            checkpoint_dir: Some(get::<PathBuf>(&m, "out")?),
        };
        train.validate()?;
        let data = m
            .get("data")
            .map(PathBuf::from)
            .ok_or_else(|| Error::Config("no training data: pass --data or set data= in the config file".into()))?;
        let run = TrainRun {
            data,
            tokenizer,
            strict: get(&m, "strict")?,
            split_ratio: get(&m, "split_ratio")?,
            model,
            train,
        };
        if !(run.split_ratio > 0.0 && run.split_ratio < 1.0) {
            return Err(Error::Config(format!("split ratio must lie in (0, 1), got {}", run.split_ratio)));
        }
        Ok((run, vocab))
    }

    /// The resolved settings as a config file that reproduces this run.
    pub fn echo(&self) -> String {
        let mut s = String::from("# resolved configuration\n");
        s.push_str(&format!("data={}\n", self.data.display()));
        s.push_str(&format!("tokenizer={}\n", self.tokenizer));
        s.push_str(&format!("strict={}\n", self.strict));
        s.push_str(&format!("split_ratio={}\n", self.split_ratio));
        for line in self.model.to_kv_lines().into_iter().chain(self.train.to_kv_lines()) {
            s.push_str(&line);
            s.push('\n');
        }
        s
    }
}

/// Settings for `eval`.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalRun {
    pub n_values: Vec<usize>,
    pub trials: usize,
    pub seed: u64,
}

impl EvalRun {
    pub fn resolve(file: &KvMap, flags: &KvMap) -> Result<Self> {
        let mut m = KvMap::from([
            ("n_values".to_string(), "1,2,4,8".to_string()),
            ("trials".to_string(), "8".to_string()),
            ("seed".to_string(), "42".to_string()),
        ]);
        m.extend(file.iter().map(|(k, v)| (k.clone(), v.clone())));
        m.extend(flags.iter().map(|(k, v)| (k.clone(), v.clone())));
        let n_values = parse_n_values(&m["n_values"])?;
        let run = EvalRun {
            n_values,
            trials: get(&m, "trials")?,
            seed: get(&m, "seed")?,
        };
        if run.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        Ok(run)
    }

    pub fn echo(&self) -> String {
        let n: Vec<String> = self.n_values.iter().map(usize::to_string).collect();
        format!(
            "# resolved configuration\nn_values={}\ntrials={}\nseed={}\n",
            n.join(","),
            self.trials,
            self.seed
        )
    }
}

pub fn parse_n_values(s: &str) -> Result<Vec<usize>> {
    let vals = s
        .split(',')
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .ok()
                .filter(|&n| n > 0)
                .ok_or_else(|| Error::Config(format!("n values must be positive integers, got {p:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    if vals.is_empty() {
        return Err(Error::Config("n values list is empty".into()));
    }
    Ok(vals)
}
