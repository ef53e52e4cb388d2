//! Labeled sentence corpora.

#![no_main]

use libfuzzer_sys::fuzz_target;
use patchline_core::classify::{LabelSet, LabeledCorpus};

fuzz_target!(|text: &str| {
    let labels = LabelSet::default();
    let Ok(corpus) = LabeledCorpus::from_ndjson(text, &labels) else { return };
    assert!(corpus.examples.iter().all(|(_, label)| *label < labels.len()));
});
