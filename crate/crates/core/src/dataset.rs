//! Line-delimited candidate records, grouping by question and the seeded
//! train/validation split.
//!
//! Each input line is one JSON object:
//!
//! ```text
//! {"label": 1, "question": "...", "gen_text": "...", "qid": "optional", "answer": "optional", "dataset": "optional"}
//! ```

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use serde_json::Value;

use crate::error::{Error, Result};

/// Binary outcome label of a candidate solution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Label {
    Incorrect,
    Correct,
}

impl Label {
    pub fn from_int(v: i64) -> Option<Self> {
        match v {
            0 => Some(Label::Incorrect),
            1 => Some(Label::Correct),
            _ => None,
        }
    }

    pub fn as_int(self) -> u8 {
        match self {
            Label::Incorrect => 0,
            Label::Correct => 1,
        }
    }

    pub fn is_correct(self) -> bool {
        self == Label::Correct
    }
}

/// One (question, chain-of-thought, outcome) record.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Candidate {
    pub question: String,
    pub cot_text: String,
    pub label: Label,
    pub qid: Option<String>,
    /// Ground-truth final answer, when the record carries one inline.
    pub answer: Option<String>,
    pub dataset: Option<String>,
}

impl Candidate {
    pub fn new(question: impl Into<String>, cot_text: impl Into<String>, label: Label) -> Self {
        Self {
            question: question.into(),
            cot_text: cot_text.into(),
            label,
            qid: None,
            answer: None,
            dataset: None,
        }
    }

    pub fn with_qid(mut self, qid: impl Into<String>) -> Self {
        self.qid = Some(qid.into());
        self
    }

    /// Grouping key: the qid when present, else the exact question text.
    pub fn group_key(&self) -> &str {
        self.qid.as_deref().unwrap_or(&self.question)
    }

    pub fn to_json(&self) -> Value {
        let mut obj = serde_json::Map::new();
        obj.insert("label".into(), Value::from(self.label.as_int()));
        obj.insert("question".into(), Value::from(self.question.as_str()));
        obj.insert("gen_text".into(), Value::from(self.cot_text.as_str()));
        if let Some(q) = &self.qid {
            obj.insert("qid".into(), Value::from(q.as_str()));
        }
        if let Some(a) = &self.answer {
            obj.insert("answer".into(), Value::from(a.as_str()));
        }
        if let Some(d) = &self.dataset {
            obj.insert("dataset".into(), Value::from(d.as_str()));
        }
        Value::Object(obj)
    }
}

#[derive(Deserialize)]
struct RawRecord {
    label: Value,
    question: String,
    gen_text: String,
    #[serde(default)]
    qid: Option<Value>,
    #[serde(default)]
    answer: Option<Value>,
    #[serde(default)]
    dataset: Option<String>,
}

fn scalar_text(v: Value, field: &str) -> std::result::Result<Option<String>, String> {
    match v {
        Value::Null => Ok(None),
        Value::String(s) => Ok(Some(s)),
        Value::Number(n) => Ok(Some(n.to_string())),
        other => Err(format!("field {field} must be a string or number, got {other}")),
    }
}

/// Parses one record line.
pub fn parse_record(line: &str) -> std::result::Result<Candidate, String> {
    let raw: RawRecord = serde_json::from_str(line).map_err(|e| format!("malformed record: {e}"))?;
    let label = match raw.label.as_i64() {
        Some(v) => Label::from_int(v).ok_or_else(|| format!("label out of range: {v}"))?,
        None => return Err(format!("label must be the integer 0 or 1, got {}", raw.label)),
    };
    if raw.question.trim().is_empty() {
        return Err("question is empty".into());
    }
    Ok(Candidate {
        question: raw.question,
        cot_text: raw.gen_text,
        label,
        qid: raw.qid.map(|v| scalar_text(v, "qid")).transpose()?.flatten(),
        answer: raw.answer.map(|v| scalar_text(v, "answer")).transpose()?.flatten(),
        dataset: raw.dataset,
    })
}

/// A line that could not be turned into a [`Candidate`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RecordIssue {
    /// 1-based line number.
    pub line: usize,
    pub message: String,
}

#[derive(Clone, Debug, Default)]
pub struct ParsedCorpus {
    pub candidates: Vec<Candidate>,
    pub issues: Vec<RecordIssue>,
}

/// Reads line-delimited records in file order. Blank lines are ignored.
///
/// Bad lines are collected in `issues` and skipped, unless `strict` is set,
/// in which case the first bad line aborts with [`Error::Record`].
pub fn parse_records<R: BufRead>(reader: R, strict: bool) -> Result<ParsedCorpus> {
    let mut out = ParsedCorpus::default();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match parse_record(&line) {
            Ok(c) => out.candidates.push(c),
            Err(message) => {
                let line = idx + 1;
                if strict {
                    return Err(Error::Record { line, message });
                }
                log::warn!("skipping line {line}: {message}");
                out.issues.push(RecordIssue { line, message });
            }
        }
    }
    Ok(out)
}

pub fn load_records(path: &Path, strict: bool) -> Result<ParsedCorpus> {
    let file = File::open(path).map_err(|e| Error::Load {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    parse_records(BufReader::new(file), strict)
}

/// All candidates sharing one group key, in input order.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Group {
    pub key: String,
    pub members: Vec<Candidate>,
}

impl Group {
    pub fn positives(&self) -> impl Iterator<Item = &Candidate> {
        self.members.iter().filter(|c| c.label.is_correct())
    }

    pub fn negatives(&self) -> impl Iterator<Item = &Candidate> {
        self.members.iter().filter(|c| !c.label.is_correct())
    }

    pub fn n_pos(&self) -> usize {
        self.positives().count()
    }

    pub fn n_neg(&self) -> usize {
        self.members.len() - self.n_pos()
    }

    /// No (positive, negative) pair can be formed.
    pub fn is_degenerate(&self) -> bool {
        self.n_pos() == 0 || self.n_neg() == 0
    }

    /// First inline ground-truth answer among the members.
    pub fn inline_answer(&self) -> Option<&str> {
        self.members.iter().find_map(|c| c.answer.as_deref())
    }

    /// First dataset tag among the members.
    pub fn dataset(&self) -> Option<&str> {
        self.members.iter().find_map(|c| c.dataset.as_deref())
    }
}

/// Groups candidates by key; groups appear in order of first appearance and
/// members keep their input order.
pub fn group_candidates(cands: impl IntoIterator<Item = Candidate>) -> Vec<Group> {
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut groups: Vec<Group> = Vec::new();
    for c in cands {
        let key = c.group_key().to_string();
        match index.get(&key) {
            Some(&i) => groups[i].members.push(c),
            None => {
                index.insert(key.clone(), groups.len());
                groups.push(Group { key, members: vec![c] });
            }
        }
    }
    groups
}

#[derive(Clone, Debug)]
pub struct CorpusSplit {
    pub train: Vec<Group>,
    pub validation: Vec<Group>,
    pub seed: u64,
    pub ratio: f64,
}

/// Seeded group-level split: shuffle, then the first `round(ratio * N)` groups
/// (kept within `1..N`) go to train.
pub fn split_corpus(groups: Vec<Group>, ratio: f64, seed: u64) -> Result<CorpusSplit> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::Config(format!("split ratio must lie in (0, 1), got {ratio}")));
    }
    let n = groups.len();
    if n < 2 {
        return Err(Error::Data(format!("split impossible: need at least 2 groups, got {n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((ratio * n as f64).round() as usize).clamp(1, n - 1);
    let mut slots: Vec<Option<Group>> = groups.into_iter().map(Some).collect();
    let mut take = |i: &usize| slots[*i].take().expect("each index once");
    let train = order[..n_train].iter().map(&mut take).collect();
    let validation = order[n_train..].iter().map(&mut take).collect();
    Ok(CorpusSplit {
        train,
        validation,
        seed,
        ratio,
    })
}

/// Group and candidate counts for a text summary.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct GroupStats {
    pub groups: usize,
    pub degenerate: usize,
    pub candidates: usize,
    pub positives: usize,
}

impl GroupStats {
    pub fn of(groups: &[Group]) -> Self {
        let mut s = GroupStats::default();
        for g in groups {
            s.groups += 1;
            s.degenerate += usize::from(g.is_degenerate());
            s.candidates += g.members.len();
            s.positives += g.n_pos();
        }
        s
    }
}

impl fmt::Display for GroupStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} groups ({} degenerate), {} candidates ({} correct)",
            self.groups, self.degenerate, self.candidates, self.positives
        )
    }
}

impl CorpusSplit {
    pub fn summary(&self) -> String {
        format!(
            "split seed={} ratio={}\n  train:      {}\n  validation: {}",
            self.seed,
            self.ratio,
            GroupStats::of(&self.train),
            GroupStats::of(&self.validation)
        )
    }
}
