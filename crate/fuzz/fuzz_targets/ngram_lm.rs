//! Saved language models.

#![no_main]

use libfuzzer_sys::fuzz_target;
use patchline_core::decode::NgramLm;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(lm) = NgramLm::from_json(text) else { return };
    let again = NgramLm::from_json(&lm.to_json()).expect("serialized model parses");
    assert_eq!(again.to_json(), lm.to_json());
    let words: Vec<String> = ["pulse", "is", "<unk>"].iter().map(|s| s.to_string()).collect();
    assert!(!lm.log_prob(&words).is_nan());
});
