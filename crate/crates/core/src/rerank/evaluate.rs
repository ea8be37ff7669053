use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use super::answer::{majority_vote, normalize_answer};
use super::score::{argmin, score_group, EnergyReport};
use crate::dataset::Group;
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::real::Real;
use crate::tokenizer::Vocab;

/// Dataset name for groups without a `dataset` tag.
pub const DEFAULT_DATASET: &str = "default";
/// Name of the aggregate rows written when more than one dataset is present.
pub const ALL_DATASETS: &str = "ALL";
pub const CSV_HEADER: &str = "dataset,method,n,accuracy,groups_evaluated";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    Eorm,
    MajorityVote,
    RandomPick,
    Oracle,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Eorm, Method::MajorityVote, Method::RandomPick, Method::Oracle];
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Eorm => "eorm",
            Method::MajorityVote => "majority_vote",
            Method::RandomPick => "random_pick",
            Method::Oracle => "oracle",
        })
    }
}

/// A scored pool with its normalized ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredGroup {
    pub key: String,
    pub dataset: String,
    pub truth: String,
    pub energies: Vec<f64>,
    pub answers: Vec<Option<String>>,
}

impl ScoredGroup {
    pub fn from_report(report: &EnergyReport, dataset: impl Into<String>, truth: &str) -> Result<Self> {
        let truth = normalize_answer(truth)
            .ok_or_else(|| Error::Data(format!("group {:?}: ground-truth answer is empty", report.key)))?;
        Ok(Self {
            key: report.key.clone(),
            dataset: dataset.into(),
            truth,
            energies: report.energies.clone(),
            answers: report.answers.clone(),
        })
    }

    fn hit(&self, i: usize) -> bool {
        self.answers[i].as_deref() == Some(self.truth.as_str())
    }

    /// Per-method score of one subsample (indices ascending).
    fn score_subsample(&self, idx: &[usize]) -> [f64; 4] {
        let sub_e: Vec<f64> = idx.iter().map(|&i| self.energies[i]).collect();
        let sub_a: Vec<Option<&str>> = idx.iter().map(|&i| self.answers[i].as_deref()).collect();
        let eorm = argmin(&sub_e).map_or(false, |j| self.hit(idx[j]));
        let majority = majority_vote(&sub_a).map_or(false, |j| self.hit(idx[j]));
        let hits = idx.iter().filter(|&&i| self.hit(i)).count();
        [
            f64::from(u8::from(eorm)),
            f64::from(u8::from(majority)),
            hits as f64 / idx.len() as f64,
            f64::from(u8::from(hits > 0)),
        ]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub dataset: String,
    pub method: Method,
    pub n: usize,
    /// `None` when no group has a pool of at least `n`.
    pub accuracy: Option<f64>,
    pub groups_evaluated: usize,
    /// Groups too small for `n`.
    pub groups_skipped: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalSummary {
    pub n_values: Vec<usize>,
    pub trials: usize,
    pub seed: u64,
    pub rows: Vec<EvalRow>,
}

impl EvalSummary {
    pub fn row(&self, dataset: &str, method: Method, n: usize) -> Option<&EvalRow> {
        self.rows
            .iter()
            .find(|r| r.dataset == dataset && r.method == method && r.n == n)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            let acc = r.accuracy.map_or_else(String::new, |a| format!("{a:.6}"));
            s.push_str(&format!("{},{},{},{},{}\n", r.dataset, r.method, r.n, acc, r.groups_evaluated));
        }
        s
    }

    /// Human-readable accuracy table, one line per (dataset, n).
    pub fn table(&self) -> String {
        let mut s = format!(
            "{:<16} {:>5} {:>10} {:>14} {:>12} {:>10} {:>8} {:>8}\n",
            "dataset", "n", "eorm", "majority_vote", "random_pick", "oracle", "groups", "skipped"
        );
        let mut keys: Vec<(&str, usize)> = Vec::new();
        for r in &self.rows {
            if !keys.contains(&(r.dataset.as_str(), r.n)) {
                keys.push((r.dataset.as_str(), r.n));
            }
        }
        for (d, n) in keys {
            let acc = |m| {
                self.row(d, m, n)
                    .and_then(|r| r.accuracy)
                    .map_or_else(|| "-".to_string(), |a| format!("{a:.4}"))
            };
            let first = self.row(d, Method::Eorm, n).expect("every method has a row");
            s.push_str(&format!(
                "{:<16} {:>5} {:>10} {:>14} {:>12} {:>10} {:>8} {:>8}\n",
                d,
                n,
                acc(Method::Eorm),
                acc(Method::MajorityVote),
                acc(Method::RandomPick),
                acc(Method::Oracle),
                first.groups_evaluated,
                first.groups_skipped
            ));
        }
        s
    }
}

/// Best-of-n accuracy of every method on seeded subsamples of each pool.
///
/// For each n (in the given order) and each group (sorted by key), `trials`
/// subsamples of size n are drawn without replacement from one seeded
/// generator. Random pick is scored by its expected accuracy on the
/// subsample, the fraction of its candidates that are correct. Groups whose
/// pool is smaller than n are skipped for that n and consume no randomness.
pub fn evaluate_scored(groups: &[ScoredGroup], n_values: &[usize], trials: usize, seed: u64) -> Result<EvalSummary> {
    if n_values.is_empty() || n_values.contains(&0) {
        return Err(Error::Config("n values must be a non-empty list of positive integers".into()));
    }
    if trials == 0 {
        return Err(Error::Config("trials must be at least 1".into()));
    }
    let mut order: Vec<&ScoredGroup> = groups.iter().collect();
    order.sort_by(|a, b| a.key.cmp(&b.key));
    let datasets: Vec<&str> = {
        let mut d: Vec<&str> = order.iter().map(|g| g.dataset.as_str()).collect();
        d.sort_unstable();
        d.dedup();
        d
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // (dataset, n) -> (per-method sums of group means, evaluated, skipped)
    let mut acc: BTreeMap<(&str, usize), ([f64; 4], usize, usize)> = BTreeMap::new();
    for &n in n_values {
        for g in &order {
            let entry = acc.entry((g.dataset.as_str(), n)).or_insert(([0.0; 4], 0, 0));
            let pool = g.energies.len();
            if n > pool {
                entry.2 += 1;
                continue;
            }
            let mut sums = [0.0; 4];
            for _ in 0..trials {
                let mut idx = sample(&mut rng, pool, n).into_vec();
                idx.sort_unstable();
                for (s, v) in sums.iter_mut().zip(g.score_subsample(&idx)) {
                    *s += v;
                }
            }
            for (a, s) in entry.0.iter_mut().zip(sums) {
                *a += s / trials as f64;
            }
            entry.1 += 1;
        }
    }

    let mut rows = Vec::new();
    let mut push = |dataset: &str, n: usize, (sums, evaluated, skipped): ([f64; 4], usize, usize)| {
        for (k, method) in Method::ALL.into_iter().enumerate() {
            rows.push(EvalRow {
                dataset: dataset.to_string(),
                method,
                n,
                accuracy: (evaluated > 0).then(|| sums[k] / evaluated as f64),
                groups_evaluated: evaluated,
                groups_skipped: skipped,
            });
        }
    };
    for &d in &datasets {
        for &n in n_values {
            push(d, n, acc[&(d, n)]);
        }
    }
    if datasets.len() > 1 {
        for &n in n_values {
            let mut total = ([0.0; 4], 0, 0);
            for &d in &datasets {
                let (s, e, k) = acc[&(d, n)];
                for (t, v) in total.0.iter_mut().zip(s) {
                    *t += v;
                }
                total.1 += e;
                total.2 += k;
            }
            push(ALL_DATASETS, n, total);
        }
    }
    Ok(EvalSummary {
        n_values: n_values.to_vec(),
        trials,
        seed,
        rows,
    })
}

/// Ground truth for a group: the answers file entry if present, otherwise
/// the inline `answer` field.
pub fn ground_truth<'a>(group: &'a Group, answers: Option<&'a HashMap<String, String>>) -> Result<&'a str> {
    answers
        .and_then(|m| m.get(&group.key).map(String::as_str))
        .or_else(|| group.inline_answer())
        .ok_or_else(|| Error::Data(format!("group {:?} has no ground-truth answer", group.key)))
}

/// Reads an answers file: one JSON object per line with `key` and `answer`.
/// Numeric answers are accepted and stringified.
pub fn load_answers(path: &Path) -> Result<HashMap<String, String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::Load {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let mut out = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| Error::Record { line: i + 1, message };
        let v: Value = serde_json::from_str(line).map_err(|e| bad(format!("{}: {e}", path.display())))?;
        let field = |name: &str| match v.get(name) {
            Some(Value::String(s)) => Ok(s.clone()),
            Some(Value::Number(n)) => Ok(n.to_string()),
            _ => Err(bad(format!("{}: missing or invalid {name:?}", path.display()))),
        };
        out.insert(field("key")?, field("answer")?);
    }
    Ok(out)
}

/// Scores every group and evaluates best-of-n accuracy. Returns the summary
/// and one report per group in key order.
pub fn evaluate<T: Real>(
    groups: &[Group],
    answers: Option<&HashMap<String, String>>,
    model: &ModelParams<T>,
    vocab: &Vocab,
    n_values: &[usize],
    trials: usize,
    seed: u64,
) -> Result<(EvalSummary, Vec<EnergyReport>)> {
    let mut sorted: Vec<&Group> = groups.iter().collect();
    sorted.sort_by(|a, b| a.key.cmp(&b.key));
    let mut reports = Vec::with_capacity(sorted.len());
    let mut scored = Vec::with_capacity(sorted.len());
    for g in sorted {
        let truth = ground_truth(g, answers)?;
        let report = score_group(model, vocab, &g.key, &g.members)?;
        scored.push(ScoredGroup::from_report(&report, g.dataset().unwrap_or(DEFAULT_DATASET), truth)?);
        reports.push(report);
    }
    Ok((evaluate_scored(&scored, n_values, trials, seed)?, reports))
}
