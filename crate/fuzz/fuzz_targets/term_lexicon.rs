//! Surface-to-canonical lexicon files.

#![no_main]

use libfuzzer_sys::fuzz_target;
use patchline_core::nlu::TermLexicon;

fuzz_target!(|text: &str| {
    let _ = TermLexicon::from_tsv(text, "fuzz.tsv");
});
