//! Rule-based understanding of paramedic transcripts: sentence splitting,
//! lemmatization and patch-form value extraction.

mod extract;
mod form;
mod lexicon;
mod text;

pub use extract::{extract_fields, extract_with, parse_blood_pressure};
pub use form::{Field, PatchForm};
pub use lexicon::{canonicalize_medication, is_acronym_canonical, Lexicons, MedLexicon, TermLexicon, FUZZY_MIN_LEN, LEXICON_FILES};
pub use text::{is_number, lemmatize, split_sentences, tokenize, LemmaRules, SuffixRule, Token};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NluError {
    #[error("{file}:{line}: {message}")]
    Lexicon { file: String, line: usize, message: String },
    #[error("unknown patch-form field {0:?}")]
    UnknownField(String),
    #[error("invalid patch form: {0}")]
    InvalidForm(String),
    #[error("{0}")]
    Io(String),
}
