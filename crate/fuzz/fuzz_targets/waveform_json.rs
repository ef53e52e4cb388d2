//! Waveform JSON documents.

#![no_main]

use libfuzzer_sys::fuzz_target;
use patchline_core::augment::Waveform;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(w) = Waveform::from_json(text) else { return };
    assert!(w.samples.iter().all(|s| s.is_finite()));
    assert_eq!(Waveform::from_json(&w.to_json()).unwrap(), w);
});
