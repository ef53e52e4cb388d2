//! OCR text against the bundled drug registry.

#![no_main]

use std::sync::LazyLock;

use libfuzzer_sys::fuzz_target;
use patchline_core::lookup::{match_ocr_text, DinRegistry};

static REGISTRY: LazyLock<DinRegistry> = LazyLock::new(DinRegistry::bundled);

fuzz_target!(|text: &str| {
    let m = match_ocr_text(&REGISTRY, text);
    assert!(m.raw.found_count() <= m.raw.total());
    assert!(m.rescored.found_count() <= m.rescored.total());
});
