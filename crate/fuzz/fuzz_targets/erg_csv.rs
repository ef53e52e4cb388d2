//! Hazard placard registry CSV.

#![no_main]

use libfuzzer_sys::fuzz_target;
use patchline_core::lookup::ErgRegistry;

fuzz_target!(|input: (&str, &str)| {
    let Ok(registry) = ErgRegistry::from_csv(input.0) else { return };
    let _ = registry.lookup(input.1);
});
