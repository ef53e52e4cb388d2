//! Patch-form JSON bodies.

#![no_main]

use libfuzzer_sys::fuzz_target;
use patchline_core::nlu::PatchForm;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(form) = PatchForm::from_json(text) else { return };
    let _ = form.problems();
    assert_eq!(PatchForm::from_json(&form.to_json()).unwrap(), form);
});
