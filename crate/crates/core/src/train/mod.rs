//! Pairwise training: per-group Bradley-Terry loss, AdamW with cosine warmup,
//! gradient clipping, validation and checkpointing.

mod optim;
mod trainer;
mod validate;

use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Duration;

pub use optim::{adamw_step, clip_gradients, grad_norm, lr_at, warmup_steps, AdamWConfig, OptimState};
pub use trainer::{encode_groups, train_loop, EncodedGroup};
pub use validate::{evaluate_encoded, evaluate_validation, ValidationResult};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub peak_lr: f64,
    pub weight_decay: f64,
    pub warmup_ratio: f64,
    pub clip_norm: f64,
    pub seed: u64,
    /// Groups averaged into one optimizer step.
    pub group_batch: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Extra validation every this many steps (0 = only at epoch ends).
    pub eval_every: usize,
    /// Where `best.ckpt`, `last.ckpt` and `train_report.txt` go.
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            peak_lr: 1e-4,
            weight_decay: 0.01,
            warmup_ratio: 0.2,
            clip_norm: 1.0,
            seed: 42,
            group_batch: 1,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            eval_every: 0,
            checkpoint_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.epochs == 0 {
            return fail("epochs must be at least 1".into());
        }
        if !(self.peak_lr.is_finite() && self.peak_lr > 0.0) {
            return fail(format!("learning rate must be positive, got {}", self.peak_lr));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return fail(format!("weight decay must be non-negative, got {}", self.weight_decay));
        }
        if !(0.0..1.0).contains(&self.warmup_ratio) {
            return fail(format!("warmup ratio must lie in [0, 1), got {}", self.warmup_ratio));
        }
        if !(self.clip_norm.is_finite() && self.clip_norm > 0.0) {
            return fail(format!("clip norm must be positive, got {}", self.clip_norm));
        }
        if self.group_batch == 0 {
            return fail("group batch must be at least 1".into());
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return fail(format!("{name} must lie in [0, 1), got {b}"));
            }
        }
        if !(self.adam_eps > 0.0) {
            return fail(format!("adam_eps must be positive, got {}", self.adam_eps));
        }
        Ok(())
    }

    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
        }
    }

    pub fn to_kv_lines(&self) -> Vec<String> {
        let mut v = vec![
            format!("epochs={}", self.epochs),
            format!("lr={}", self.peak_lr),
            format!("weight_decay={}", self.weight_decay),
            format!("warmup_ratio={}", self.warmup_ratio),
            format!("clip={}", self.clip_norm),
            format!("seed={}", self.seed),
            format!("group_batch={}", self.group_batch),
            format!("adam_beta1={}", self.adam_beta1),
            format!("adam_beta2={}", self.adam_beta2),
            format!("adam_eps={}", self.adam_eps),
            format!("eval_every={}", self.eval_every),
        ];
        if let Some(d) = &self.checkpoint_dir {
            v.push(format!("out={}", d.display()));
        }
        v
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    /// 1-based.
    pub epoch: usize,
    /// Mean loss over the epoch's trained groups, measured in training mode.
    pub train_loss: Option<f64>,
    pub val_loss: Option<f64>,
    pub val_rank_acc: Option<f64>,
    /// Degenerate groups passed over this epoch.
    pub skipped: usize,
    /// Learning rate of the epoch's last update.
    pub lr: f64,
    pub steps: u64,
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub epochs: Vec<EpochMetrics>,
    pub optimizer_steps: u64,
    pub skipped_groups: usize,
    pub trainable_groups: usize,
    /// Candidate rows cut to fit `max_seq_len`.
    pub truncated_rows: usize,
    pub best_epoch: Option<usize>,
    /// `(step, result)` for the intermediate evaluations requested by `eval_every`.
    pub step_evals: Vec<(u64, ValidationResult)>,
    pub wall_time: Duration,
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.6}"))
}

impl TrainReport {
    /// Fixed-width metrics table, one row per epoch.
    pub fn table(&self) -> String {
        let mut s = String::from("epoch train_loss val_loss val_rank_acc skipped lr\n");
        for e in &self.epochs {
            let _ = writeln!(
                s,
                "{} {} {} {} {} {:.6e}",
                e.epoch,
                opt(e.train_loss),
                opt(e.val_loss),
                opt(e.val_rank_acc),
                e.skipped,
                e.lr
            );
        }
        s
    }

    pub fn final_epoch(&self) -> Option<&EpochMetrics> {
        self.epochs.last()
    }
}
