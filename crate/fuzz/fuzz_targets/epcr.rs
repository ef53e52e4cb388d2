//! ePCR documents.

#![no_main]

use libfuzzer_sys::fuzz_target;
use patchline_core::report::{generate_epcr, parse_epcr_form, IncidentTimeline};

fuzz_target!(|text: &str| {
    let Ok(form) = parse_epcr_form(text) else { return };
    let doc = generate_epcr(&IncidentTimeline::new(), &form);
    assert_eq!(parse_epcr_form(&doc).unwrap(), form);
});
