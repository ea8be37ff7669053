use super::trainer::{encode_groups, EncodedGroup};
use crate::dataset::Group;
use crate::error::Result;
use crate::loss::{bt_loss, ordered_pairs};
use crate::model::ModelParams;
use crate::real::Real;
use crate::tokenizer::Vocab;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ValidationResult {
    /// Mean loss over non-degenerate groups; `None` when there are none.
    pub loss: Option<f64>,
    /// Correctly ordered pairs over all pairs; ties count as wrong.
    pub ranking_accuracy: Option<f64>,
    pub groups: usize,
    pub pairs: usize,
}

/// Eval-mode loss and pairwise ranking accuracy.
pub fn evaluate_validation<T: Real>(groups: &[Group], model: &ModelParams<T>, vocab: &Vocab) -> Result<ValidationResult> {
    let (encoded, _) = encode_groups(groups, vocab, model.config.max_seq_len);
    evaluate_encoded(&encoded, model)
}

pub fn evaluate_encoded<T: Real>(groups: &[EncodedGroup], model: &ModelParams<T>) -> Result<ValidationResult> {
    let mut loss_sum = 0.0;
    let mut n_groups = 0;
    let (mut correct, mut total) = (0usize, 0usize);
    for g in groups.iter().filter(|g| !g.is_degenerate()) {
        let energies = g.rows.iter().map(|ids| model.energy(ids)).collect::<Result<Vec<T>>>()?;
        let (pos, neg) = g.split(&energies);
        if let Some(v) = bt_loss(&pos, &neg)?.value() {
            loss_sum += v.as_f64();
            n_groups += 1;
        }
        let (c, t) = ordered_pairs(&pos, &neg);
        correct += c;
        total += t;
    }
    Ok(ValidationResult {
        loss: (n_groups > 0).then(|| loss_sum / n_groups as f64),
        ranking_accuracy: (total > 0).then(|| correct as f64 / total as f64),
        groups: n_groups,
        pairs: total,
    })
}
