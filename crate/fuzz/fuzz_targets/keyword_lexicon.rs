//! Rescoring lexicons and the text they correct.

#![no_main]

use libfuzzer_sys::fuzz_target;
use patchline_core::decode::{rescore_text, Lexicon};

fuzz_target!(|input: (&str, &str, u8)| {
    let (entries, text, max_edit) = input;
    let Ok(lex) = Lexicon::from_text(entries, usize::from(max_edit % 4)) else { return };
    let once = rescore_text(text, &lex);
    assert_eq!(once.split_whitespace().count(), text.split_whitespace().count());
});
