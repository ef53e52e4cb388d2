//! WAV files.

#![no_main]

use libfuzzer_sys::fuzz_target;
use patchline_core::augment::Waveform;

fuzz_target!(|data: &[u8]| {
    let Ok(w) = Waveform::read_wav(std::io::Cursor::new(data)) else { return };
    assert!(w.samples.iter().all(|s| s.is_finite()));
});
