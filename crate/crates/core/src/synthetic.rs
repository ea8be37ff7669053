//! Seeded synthetic candidate pools with a known perfect verifier.
//!
//! Every group asks `What is a+b?` with two-digit operands. Each candidate
//! solution carries a few filler sentences and a boxed final answer: the true
//! sum for correct candidates, a nearby wrong two-digit number otherwise.
//! Correctness is signalled by a marker:
//!
//! * `planted`: the sentence `Check passed.` (correct) or `Check failed.`
//!   (incorrect) at a random position among the filler;
//! * `ordered`: the solution opens with `Plan: verify then answer.` (correct)
//!   or `Plan: answer then verify.` (incorrect). Both use the same bytes, so
//!   only word order tells them apart.
//!
//! Reading the marker classifies every candidate correctly.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};

use crate::dataset::{Candidate, Label};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pattern {
    Planted,
    Ordered,
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Pattern::Planted => "planted",
            Pattern::Ordered => "ordered",
        })
    }
}

impl FromStr for Pattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "planted" => Ok(Pattern::Planted),
            "ordered" => Ok(Pattern::Ordered),
            other => Err(Error::Config(format!("unknown synthetic pattern {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticConfig {
    pub groups: usize,
    pub pool: usize,
    pub seed: u64,
    pub positive_rate: f64,
    pub pattern: Pattern,
    pub filler_sentences: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            groups: 100,
            pool: 8,
            seed: 1,
            positive_rate: 0.375,
            pattern: Pattern::Planted,
            filler_sentences: 2,
        }
    }
}

const FILLER: [&str; 8] = [
    "Line up the digits.",
    "Add the ones first.",
    "Carry when needed.",
    "Then add the tens.",
    "Write down the total.",
    "Keep the work neat.",
    "Read the question again.",
    "Combine both parts.",
];

fn solution(rng: &mut ChaCha8Rng, cfg: &SyntheticConfig, correct: bool, answer: u32) -> String {
    let mut sentences: Vec<&str> = (0..cfg.filler_sentences)
        .map(|_| *FILLER.choose(rng).expect("non-empty"))
        .collect();
    let mut text = String::new();
    match cfg.pattern {
        Pattern::Planted => {
            let marker = if correct { "Check passed." } else { "Check failed." };
            let at = rng.gen_range(0..=sentences.len());
            sentences.insert(at, marker);
        }
        Pattern::Ordered => {
            text.push_str(if correct {
                "Plan: verify then answer. "
            } else {
                "Plan: answer then verify. "
            });
        }
    }
    text.push_str(&sentences.join(" "));
    text.push_str(&format!(" The answer is \\boxed{{{answer}}}."));
    text
}

fn wrong_answer(rng: &mut ChaCha8Rng, truth: u32) -> u32 {
    loop {
        let delta = rng.gen_range(1..=9) as i64 * if rng.gen_bool(0.5) { 1 } else { -1 };
        let v = truth as i64 + delta;
        if (10..=99).contains(&v) {
            return v as u32;
        }
    }
}

/// Number of correct candidates in a pool: Binomial(pool, rate), kept within
/// `1..pool` whenever the pool has room for both labels.
fn positives(rng: &mut ChaCha8Rng, pool: usize, rate: f64) -> usize {
    let k = Binomial::new(pool as u64, rate).expect("valid binomial").sample(rng) as usize;
    if pool >= 2 {
        k.clamp(1, pool - 1)
    } else {
        k
    }
}

pub fn generate(cfg: &SyntheticConfig) -> Result<Vec<Candidate>> {
    if cfg.groups == 0 || cfg.pool == 0 {
        return Err(Error::Config("groups and pool must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&cfg.positive_rate) {
        return Err(Error::Config(format!("positive rate must lie in [0, 1], got {}", cfg.positive_rate)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::with_capacity(cfg.groups * cfg.pool);
    for i in 0..cfg.groups {
        let (a, b) = (rng.gen_range(10..=49u32), rng.gen_range(10..=49u32));
        let truth = a + b;
        let question = format!("What is {a}+{b}?");
        let n_pos = positives(&mut rng, cfg.pool, cfg.positive_rate);
        let mut labels: Vec<bool> = (0..cfg.pool).map(|j| j < n_pos).collect();
        labels.shuffle(&mut rng);
        for correct in labels {
            let answer = if correct { truth } else { wrong_answer(&mut rng, truth) };
            let cot = solution(&mut rng, cfg, correct, answer);
            let label = if correct { Label::Correct } else { Label::Incorrect };
            let mut c = Candidate::new(question.clone(), cot, label).with_qid(format!("syn-{i:05}"));
            c.answer = Some(truth.to_string());
            c.dataset = Some(format!("synthetic-{}", cfg.pattern));
            out.push(c);
        }
    }
    Ok(out)
}

/// JSONL text of [`generate`]'s output.
pub fn generate_jsonl(cfg: &SyntheticConfig) -> Result<String> {
    let mut s = String::new();
    for c in generate(cfg)? {
        s.push_str(&c.to_json().to_string());
        s.push('\n');
    }
    Ok(s)
}

/// The perfect verifier: reads the marker.
pub fn marker_says_correct(pattern: Pattern, cot: &str) -> bool {
    match pattern {
        Pattern::Planted => cot.contains("Check passed."),
        Pattern::Ordered => cot.starts_with("Plan: verify then answer."),
    }
}
