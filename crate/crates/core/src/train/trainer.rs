use std::collections::BTreeMap;
use std::fs;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::optim::{adamw_step, clip_gradients, lr_at, OptimState};
use super::validate::evaluate_encoded;
use super::{EpochMetrics, TrainConfig, TrainReport};
use crate::dataset::{CorpusSplit, Group};
use crate::error::{Error, Result};
use crate::loss::{bt_loss, LossResult};
use crate::model::{save_checkpoint, ModelParams};
use crate::real::Real;
use crate::tokenizer::Vocab;

/// One group's candidates as token rows, with their labels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedGroup {
    pub key: String,
    pub rows: Vec<Vec<u32>>,
    pub correct: Vec<bool>,
}

impl EncodedGroup {
    pub fn is_degenerate(&self) -> bool {
        !self.correct.iter().any(|&c| c) || self.correct.iter().all(|&c| c)
    }

    /// Splits per-candidate values into (positives, negatives), keeping order.
    pub fn split<T: Copy>(&self, values: &[T]) -> (Vec<T>, Vec<T>) {
        let mut pos = Vec::new();
        let mut neg = Vec::new();
        for (&v, &c) in values.iter().zip(&self.correct) {
            if c {
                pos.push(v);
            } else {
                neg.push(v);
            }
        }
        (pos, neg)
    }
}

/// Encodes every candidate; returns the groups and the number of truncated rows.
pub fn encode_groups(groups: &[Group], vocab: &Vocab, max_seq_len: usize) -> (Vec<EncodedGroup>, usize) {
    let mut truncated = 0;
    let out = groups
        .iter()
        .map(|g| {
            let mut rows = Vec::with_capacity(g.members.len());
            for c in &g.members {
                let row = vocab.encode_pair(&c.question, &c.cot_text, max_seq_len);
                truncated += usize::from(row.truncated);
                rows.push(row.ids);
            }
            EncodedGroup {
                key: g.key.clone(),
                rows,
                correct: g.members.iter().map(|c| c.label.is_correct()).collect(),
            }
        })
        .collect();
    (out, truncated)
}

fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed ^ (epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Forward every candidate in training mode, then backpropagate `scale * dL/dE`.
fn train_group<T: Real>(model: &mut ModelParams<T>, g: &EncodedGroup, scale: f64, rng: &mut ChaCha8Rng) -> Result<f64> {
    let traces = g
        .rows
        .iter()
        .map(|ids| model.forward_row(ids, true, rng))
        .collect::<Result<Vec<_>>>()?;
    let energies: Vec<T> = traces.iter().map(|t| t.energy).collect();
    let (pos, neg) = g.split(&energies);
    let LossResult::Pairs { value, d_pos, d_neg } = bt_loss(&pos, &neg)? else {
        unreachable!("degenerate groups are filtered before training");
    };
    let (mut dp, mut dn) = (d_pos.into_iter(), d_neg.into_iter());
    for (trace, &c) in traces.iter().zip(&g.correct) {
        let d = if c { dp.next() } else { dn.next() }.expect("one gradient per candidate");
        model.backward(trace, d * T::lit(scale))?;
    }
    Ok(value.as_f64())
}

/// Runs the full training schedule on `split.train`, validating on
/// `split.validation` after every epoch.
///
/// Degenerate groups are skipped and never cause an update. When a
/// checkpoint directory is configured, `last.ckpt`, `best.ckpt` (lowest
/// validation loss, or training loss without validation data) and
/// `train_report.txt` are written there after every epoch.
pub fn train_loop<T: Real>(
    split: &CorpusSplit,
    model: &mut ModelParams<T>,
    cfg: &TrainConfig,
    vocab: &Vocab,
    meta: &BTreeMap<String, String>,
) -> Result<TrainReport> {
    cfg.validate()?;
    let start = Instant::now();
    let max_len = model.config.max_seq_len;
    let (train, trunc_a) = encode_groups(&split.train, vocab, max_len);
    let (val, trunc_b) = encode_groups(&split.validation, vocab, max_len);
    let trainable: Vec<usize> = (0..train.len()).filter(|&i| !train[i].is_degenerate()).collect();
    if trainable.is_empty() {
        return Err(Error::Data(format!(
            "no trainable data: all {} training groups lack a positive or a negative",
            train.len()
        )));
    }
    let skipped_per_epoch = train.len() - trainable.len();
    let steps_per_epoch = trainable.len().div_ceil(cfg.group_batch);
    let total_steps = steps_per_epoch * cfg.epochs;
    let adam = cfg.adamw();
    if let Some(dir) = &cfg.checkpoint_dir {
        fs::create_dir_all(dir)?;
    }

    let mut state = OptimState::new(model);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = TrainReport {
        epochs: Vec::with_capacity(cfg.epochs),
        optimizer_steps: 0,
        skipped_groups: 0,
        trainable_groups: trainable.len(),
        truncated_rows: trunc_a + trunc_b,
        best_epoch: None,
        step_evals: Vec::new(),
        wall_time: Default::default(),
    };
    let mut best = f64::INFINITY;
    model.zero_grad();

    for epoch in 1..=cfg.epochs {
        let mut order = trainable.clone();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed(cfg.seed, epoch)));
        let (mut loss_sum, mut n_loss) = (0.0, 0usize);
        let mut lr = 0.0;
        let mut epoch_steps = 0;
        for chunk in order.chunks(cfg.group_batch) {
            let scale = 1.0 / chunk.len() as f64;
            for &gi in chunk {
                loss_sum += train_group(model, &train[gi], scale, &mut dropout_rng)?;
                n_loss += 1;
            }
            clip_gradients(model, cfg.clip_norm);
            lr = lr_at(report.optimizer_steps as usize, total_steps, cfg.peak_lr, cfg.warmup_ratio);
            adamw_step(model, &mut state, lr, &adam)?;
            report.optimizer_steps += 1;
            epoch_steps += 1;
            if cfg.eval_every > 0 && report.optimizer_steps % cfg.eval_every as u64 == 0 && !val.is_empty() {
                let r = evaluate_encoded(&val, model)?;
                log::info!(
                    "step {}: val_loss {} val_rank_acc {}",
                    report.optimizer_steps,
                    super::opt(r.loss),
                    super::opt(r.ranking_accuracy)
                );
                report.step_evals.push((report.optimizer_steps, r));
            }
        }
        model.ensure_finite()?;
        report.skipped_groups += skipped_per_epoch;
        let v = evaluate_encoded(&val, model)?;
        let metrics = EpochMetrics {
            epoch,
            train_loss: (n_loss > 0).then(|| loss_sum / n_loss as f64),
            val_loss: v.loss,
            val_rank_acc: v.ranking_accuracy,
            skipped: skipped_per_epoch,
            lr,
            steps: epoch_steps,
        };
        log::info!(
            "epoch {epoch}/{}: train_loss {} val_loss {} val_rank_acc {}",
            cfg.epochs,
            super::opt(metrics.train_loss),
            super::opt(metrics.val_loss),
            super::opt(metrics.val_rank_acc)
        );
        let score = metrics.val_loss.or(metrics.train_loss).unwrap_or(f64::INFINITY);
        let improved = score < best || report.best_epoch.is_none();
        if improved {
            best = score;
            report.best_epoch = Some(epoch);
        }
        report.epochs.push(metrics);
        if let Some(dir) = &cfg.checkpoint_dir {
            save_checkpoint(model, meta, &dir.join("last.ckpt"))?;
            if improved {
                save_checkpoint(model, meta, &dir.join("best.ckpt"))?;
            }
            fs::write(dir.join("train_report.txt"), sidecar(model, cfg, &report))?;
        }
    }
    report.wall_time = start.elapsed();
    Ok(report)
}

fn sidecar<T: Real>(model: &ModelParams<T>, cfg: &TrainConfig, report: &TrainReport) -> String {
    let mut s = String::new();
    for line in model.config.to_kv_lines().into_iter().chain(cfg.to_kv_lines()) {
        s.push_str(&line);
        s.push('\n');
    }
    s.push_str(&format!(
        "optimizer_steps={}\nskipped_groups={}\ntruncated_rows={}\nbest_epoch={}\n\n",
        report.optimizer_steps,
        report.skipped_groups,
        report.truncated_rows,
        report.best_epoch.map_or_else(|| "-".into(), |e| e.to_string())
    ));
    s.push_str(&report.table());
    s
}
