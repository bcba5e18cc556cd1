//! Transmembrane topology tagging: a biLSTM emits per-state potentials into
//! a linear-chain CRF whose allowed transitions come from a grammar.

pub mod crf;
pub mod grammar;
pub mod scoring;
pub mod tagger;

pub use crf::{crf_log_likelihood, log_partition, states_to_regions, viterbi};
pub use grammar::Grammar;
pub use scoring::{crossvalidate_tm, tm_category_score, TmReport};
pub use tagger::{train_tagger, Tagger, TmConfig};
