//! Session command logs, parsed and replayed.

#![no_main]

use std::path::Path;
use std::sync::LazyLock;

use libfuzzer_sys::fuzz_target;
use patchline_service::{LogEntry, Pipeline, Session};

// saved models, so no training happens inside the fuzzer
static PIPELINE: LazyLock<Pipeline> =
    LazyLock::new(|| Pipeline::from_dir(&Path::new(env!("CARGO_MANIFEST_DIR")).join("../fixtures")).unwrap());

fuzz_target!(|text: &str| {
    let entries: Result<Vec<LogEntry>, _> =
        text.lines().filter(|l| !l.trim().is_empty()).take(32).map(serde_json::from_str).collect();
    let Ok(entries) = entries else { return };
    let Ok(first) = Session::replay(&PIPELINE, &entries) else { return };
    let second = Session::replay(&PIPELINE, &entries).expect("replay is deterministic");
    assert_eq!(first.summary(), second.summary());
    assert_eq!(first.epcr(), second.epcr());
});
