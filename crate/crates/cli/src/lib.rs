//! Command-line driver: train, score, rerank, eval, inspect-checkpoint and
//! generate-synthetic.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use eorm::{Error, ErrorKind};

pub mod commands;
pub mod config;

use config::KvMap;

#[derive(Parser, Debug)]
#[command(name = "eorm", version, about = "Energy outcome reward model: train, score and rerank candidate solutions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a model on a labeled candidate corpus.
    Train(TrainArgs),
    /// Write the energy of every candidate.
    Score(ScoreArgs),
    /// Pick the minimum-energy candidate of every group.
    Rerank(ScoreArgs),
    /// Best-of-n accuracy of the model against baselines.
    Eval(EvalArgs),
    /// Print a checkpoint's configuration, metadata and parameter shapes.
    InspectCheckpoint(InspectArgs),
    /// Write a seeded synthetic corpus with a known perfect verifier.
    GenerateSynthetic(SyntheticArgs),
}

#[derive(Args, Debug, Default)]
pub struct ModelFlags {
    #[arg(long)]
    pub d_model: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub ff_mult: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub max_seq: Option<usize>,
    /// transformer or mlp_baseline
    #[arg(long)]
    pub variant: Option<String>,
    /// Learned positional embeddings (true/false).
    #[arg(long)]
    pub positional: Option<bool>,
}

impl ModelFlags {
    /// Flags that were given, under their config-file keys.
    pub fn pairs(&self) -> Vec<(&'static str, String)> {
        let mut v = Vec::new();
        let mut put = |k, x: Option<String>| {
            if let Some(x) = x {
                v.push((k, x));
            }
        };
        put("d_model", self.d_model.map(|x| x.to_string()));
        put("n_layers", self.layers.map(|x| x.to_string()));
        put("n_heads", self.heads.map(|x| x.to_string()));
        put("ff_mult", self.ff_mult.map(|x| x.to_string()));
        put("dropout", self.dropout.map(|x| x.to_string()));
        put("max_seq_len", self.max_seq.map(|x| x.to_string()));
        put("variant", self.variant.clone());
        put("positional", self.positional.map(|x| x.to_string()));
        v
    }
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Line-delimited JSON candidates.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Flat key=value config file; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// desk (default) or full
    #[arg(long)]
    pub preset: Option<String>,
    /// byte, or files:<vocab.json>[,<merges.txt>]
    #[arg(long)]
    pub tokenizer: Option<String>,
    #[command(flatten)]
    pub model: ModelFlags,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub warmup_ratio: Option<f64>,
    #[arg(long)]
    pub clip: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub split_ratio: Option<f64>,
    /// Groups per optimizer step.
    #[arg(long)]
    pub group_batch: Option<usize>,
    /// Also validate every this many optimizer steps.
    #[arg(long)]
    pub eval_every: Option<usize>,
    /// Fail on the first malformed record instead of skipping it.
    #[arg(long)]
    pub strict: bool,
    /// Output directory for checkpoints and the report.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl TrainArgs {
    pub fn flag_map(&self) -> KvMap {
        let mut m: KvMap = self.model.pairs().into_iter().map(|(k, v)| (k.to_string(), v)).collect();
        let mut put = |k: &str, x: Option<String>| {
            if let Some(x) = x {
                m.insert(k.to_string(), x);
            }
        };
        put("data", self.data.as_ref().map(|p| p.display().to_string()));
        put("preset", self.preset.clone());
        put("tokenizer", self.tokenizer.clone());
        put("epochs", self.epochs.map(|x| x.to_string()));
        put("lr", self.lr.map(|x| x.to_string()));
        put("weight_decay", self.weight_decay.map(|x| x.to_string()));
        put("warmup_ratio", self.warmup_ratio.map(|x| x.to_string()));
        put("clip", self.clip.map(|x| x.to_string()));
        put("seed", self.seed.map(|x| x.to_string()));
        put("split_ratio", self.split_ratio.map(|x| x.to_string()));
        put("group_batch", self.group_batch.map(|x| x.to_string()));
        put("eval_every", self.eval_every.map(|x| x.to_string()));
        put("strict", self.strict.then(|| "true".to_string()));
        put("out", self.out.as_ref().map(|p| p.display().to_string()));
        m
    }
}

#[derive(Args, Debug)]
pub struct ScoreArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Overrides the tokenizer recorded in the checkpoint.
    #[arg(long)]
    pub tokenizer: Option<String>,
    /// Expected architecture; a mismatch with the checkpoint is an error.
    #[command(flatten)]
    pub model: ModelFlags,
    #[arg(long)]
    pub strict: bool,
    /// Output file; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Line-delimited {"key", "answer"} records; overrides inline answers.
    #[arg(long)]
    pub answers: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub tokenizer: Option<String>,
    #[command(flatten)]
    pub model: ModelFlags,
    /// Comma-separated subsample sizes, e.g. 1,2,4,8.
    #[arg(long)]
    pub n_values: Option<String>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub strict: bool,
    /// CSV output file; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write one energy report per group here.
    #[arg(long)]
    pub reports: Option<PathBuf>,
}

impl EvalArgs {
    pub fn flag_map(&self) -> KvMap {
        let mut m = KvMap::new();
        if let Some(n) = &self.n_values {
            m.insert("n_values".into(), n.clone());
        }
        if let Some(t) = self.trials {
            m.insert("trials".into(), t.to_string());
        }
        if let Some(s) = self.seed {
            m.insert("seed".into(), s.to_string());
        }
        m
    }
}

#[derive(Args, Debug)]
pub struct InspectArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
}

#[derive(Args, Debug)]
pub struct SyntheticArgs {
    /// Output file; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    pub groups: usize,
    #[arg(long, default_value_t = 8)]
    pub pool: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.375)]
    pub positive_rate: f64,
    /// planted or ordered
    #[arg(long, default_value = "planted")]
    pub pattern: String,
    /// Filler sentences per solution.
    #[arg(long, default_value_t = 2)]
    pub filler: usize,
}

pub fn exit_code(e: &Error) -> i32 {
    match e.kind() {
        ErrorKind::Config => 2,
        ErrorKind::Data => 3,
        ErrorKind::Checkpoint => 4,
        ErrorKind::Numeric => 5,
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .try_init();
    match commands::dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
