use serde_json::{json, Value};

use super::answer::{extract_answer, majority_vote};
use crate::dataset::Candidate;
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::real::Real;
use crate::tokenizer::Vocab;

/// Index of the smallest value; the lowest index wins ties.
pub fn argmin(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        if best.map_or(true, |b| v < values[b]) {
            best = Some(i);
        }
    }
    best
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        if best.map_or(true, |b| v > values[b]) {
            best = Some(i);
        }
    }
    best
}

/// `exp(-(E_i - min E)) / sum_j exp(-(E_j - min E))` over the pool only.
pub fn boltzmann(energies: &[f64]) -> Vec<f64> {
    let Some(lo) = argmin(energies).map(|i| energies[i]) else {
        return Vec::new();
    };
    let w: Vec<f64> = energies.iter().map(|&e| (-(e - lo)).exp()).collect();
    let z: f64 = w.iter().sum();
    w.into_iter().map(|x| x / z).collect()
}

/// Scores and selections for one candidate pool.
#[derive(Clone, Debug, PartialEq)]
pub struct EnergyReport {
    pub key: String,
    pub energies: Vec<f64>,
    pub boltzmann_probs: Vec<f64>,
    /// Minimum-energy candidate.
    pub selected_index: usize,
    pub majority_index: Option<usize>,
    pub answers: Vec<Option<String>>,
    /// Labels from the input records.
    pub correct: Option<Vec<bool>>,
}

impl EnergyReport {
    pub fn from_energies(key: impl Into<String>, energies: Vec<f64>, answers: Vec<Option<String>>, correct: Option<Vec<bool>>) -> Result<Self> {
        let selected_index = argmin(&energies).ok_or_else(|| Error::Data("cannot score an empty pool".into()))?;
        Ok(Self {
            key: key.into(),
            boltzmann_probs: boltzmann(&energies),
            selected_index,
            majority_index: majority_vote(&answers),
            energies,
            answers,
            correct,
        })
    }

    pub fn to_json(&self) -> Value {
        json!({
            "key": self.key,
            "selected_index": self.selected_index,
            "majority_index": self.majority_index,
            "energies": self.energies,
            "boltzmann_probs": self.boltzmann_probs,
            "answers": self.answers,
            "correct": self.correct,
        })
    }
}

/// Eval-mode energies of every candidate in a pool.
pub fn pool_energies<T: Real>(model: &ModelParams<T>, vocab: &Vocab, candidates: &[Candidate]) -> Result<Vec<f64>> {
    candidates
        .iter()
        .map(|c| {
            let row = vocab.encode_pair(&c.question, &c.cot_text, model.config.max_seq_len);
            Ok(model.energy(&row.ids)?.as_f64())
        })
        .collect()
}

pub fn score_group<T: Real>(model: &ModelParams<T>, vocab: &Vocab, key: &str, candidates: &[Candidate]) -> Result<EnergyReport> {
    if candidates.is_empty() {
        return Err(Error::Data(format!("group {key:?} has no candidates")));
    }
    let energies = pool_energies(model, vocab, candidates)?;
    let answers = candidates.iter().map(|c| extract_answer(&c.cot_text)).collect();
    let correct = candidates.iter().map(|c| c.label.is_correct()).collect();
    EnergyReport::from_energies(key, energies, answers, Some(correct))
}
