//! Frame-probability documents: parse, score, round trip.

#![no_main]

use libfuzzer_sys::fuzz_target;
use patchline_core::ctc::{ctc_loss, FrameProbs, LabelSeq};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(probs) = FrameProbs::from_json(text) else { return };
    let again = FrameProbs::from_json(&probs.to_json()).expect("serialized frames parse");
    assert_eq!(again, probs);
    let loss = ctc_loss(&probs, &LabelSeq::default()).expect("empty target is valid");
    assert!(loss >= 0.0 || loss.is_infinite());
});
