//! Decoding with a custom language model: n-gram training and scoring, CTC
//! prefix beam search with shallow fusion, and lexicon-constrained rescoring.

mod beam;
mod lexicon;
mod lm;

pub use beam::{beam_decode, Beam, DecodeConfig, DecodeResult, Hypothesis};
pub use lexicon::{edit_distance, keyword_score, rescore_text, rescore_text_protected, rescore_tokens, KeywordMetrics, Lexicon};
pub use lm::{lm_tokens, train_lm, NgramLm, BOS, EOS, LM_FORMAT};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum DecodeError {
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("invalid language model: {0}")]
    InvalidLm(String),
    #[error("invalid decoder configuration: {0}")]
    InvalidConfig(String),
    #[error("lexicon has no entries")]
    EmptyLexicon,
    #[error("lexicon entry {0:?} is not a single token")]
    MultiTokenEntry(String),
    #[error("keyword list is empty")]
    NoKeywords,
}
