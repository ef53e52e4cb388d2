//! Dosing rule CSV.

#![no_main]

use libfuzzer_sys::fuzz_target;
use patchline_core::reminders::RuleTable;

fuzz_target!(|text: &str| {
    let Ok(rules) = RuleTable::from_csv(text) else { return };
    for rule in rules.iter() {
        assert!(rule.interval_seconds > 0 && rule.max_doses > 0);
    }
});
