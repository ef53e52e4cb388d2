//! Gold extraction rows and workflow profiles.

#![no_main]

use libfuzzer_sys::fuzz_target;
use patchline_core::report::{load_gold, workflow_totals, WorkflowProfile};

fuzz_target!(|text: &str| {
    if let Ok(profile) = WorkflowProfile::from_json(text) {
        if let Ok(total) = workflow_totals(&profile) {
            assert!(total.is_finite() && total >= 0.0);
        }
    }
    let _ = load_gold(text);
});
