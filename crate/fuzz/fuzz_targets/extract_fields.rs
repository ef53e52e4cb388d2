//! Field extraction over arbitrary transcripts.

#![no_main]

use std::sync::LazyLock;

use libfuzzer_sys::fuzz_target;
use patchline_core::nlu::{extract_fields, parse_blood_pressure, Lexicons};

static LEX: LazyLock<Lexicons> = LazyLock::new(Lexicons::bundled);

fuzz_target!(|text: &str| {
    let form = extract_fields(text, &LEX);
    assert!(form.problems().iter().all(|(_, m)| !m.is_empty()));
    if let Some((sys, dia)) = parse_blood_pressure(text) {
        assert!(sys < 1000 && dia < 1000);
    }
});
