//! Best-of-N selection by minimum energy, and accuracy evaluation against
//! majority vote, random pick and the pass@n oracle.

mod answer;
mod evaluate;
mod score;

pub use answer::{extract_answer, majority_vote, normalize_answer, NORMALIZATION_VERSION};
pub use evaluate::{
    evaluate, evaluate_scored, ground_truth, load_answers, EvalRow, EvalSummary, Method, ScoredGroup, ALL_DATASETS,
    CSV_HEADER, DEFAULT_DATASET,
};
pub use score::{argmax, argmin, boltzmann, pool_energies, score_group, EnergyReport};
