//! Beam search over lattices built from raw bytes.

#![no_main]

use libfuzzer_sys::fuzz_target;
use patchline_core::ctc::{ctc_loss, Alphabet, FrameProbs};
use patchline_core::decode::{beam_decode, DecodeConfig};

fuzz_target!(|data: &[u8]| {
    let [shape, width, rest @ ..] = data else { return };
    let classes = 2 + usize::from(shape % 3);
    let symbols: Vec<char> = ['a', 'b', ' '][..classes - 1].to_vec();
    let alphabet = Alphabet::new(symbols, '-').unwrap();
    let frames: Vec<Vec<f64>> = rest
        .chunks_exact(classes)
        .take(12)
        .map(|row| {
            let raw: Vec<f64> = row.iter().map(|b| f64::from(*b) + 1.0).collect();
            let sum: f64 = raw.iter().sum();
            raw.into_iter().map(|v| v / sum).collect()
        })
        .collect();
    let Ok(probs) = FrameProbs::new(alphabet, frames) else { return };
    let cfg = DecodeConfig { beam_width: 1 + usize::from(width % 8), lm_weight: 0.0, length_bonus: 0.0 };
    let out = beam_decode(&probs, None, &cfg).expect("valid lattice decodes");
    let loss = ctc_loss(&probs, &out.best.labels).unwrap();
    // pruning can only lose probability mass
    assert!(out.best.score <= -loss + 1e-9, "{} vs {}", out.best.score, -loss);
});
