//! Historical dispatch records CSV.

#![no_main]

use libfuzzer_sys::fuzz_target;
use patchline_core::orders::load_records;

fuzz_target!(|text: &str| {
    let _ = load_records(text);
});
