//! Drug registry CSV.

#![no_main]

use libfuzzer_sys::fuzz_target;
use patchline_core::lookup::DinRegistry;

fuzz_target!(|text: &str| {
    let Ok(registry) = DinRegistry::from_csv(text) else { return };
    for entry in registry.entries() {
        assert!(registry.lookup(&entry.din).unwrap().is_some());
    }
});
