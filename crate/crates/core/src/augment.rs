//! Waveform augmentation: additive Gaussian noise at a target SNR, speed
//! change by resampling, gain, and corpus expansion with a fixed transform mix.

use std::io::{Read, Seek, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("waveform has zero power; SNR is undefined")]
    ZeroPower,
    #[error("speed factor {0} outside (0.5, 2.0)")]
    SpeedOutOfRange(f64),
    #[error("gain {0} dB outside [-10, 10]")]
    GainOutOfRange(f64),
    #[error("invalid waveform: {0}")]
    InvalidWaveform(String),
    #[error("invalid augmentation plan: {0}")]
    InvalidPlan(String),
    #[error("wav: {0}")]
    Wav(#[from] hound::Error),
    #[error("waveform json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Waveform {
    pub sample_rate: u32,
    pub samples: Vec<f64>,
}

impl Waveform {
    pub fn new(sample_rate: u32, samples: Vec<f64>) -> Result<Self, AugmentError> {
        let w = Self { sample_rate, samples };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), AugmentError> {
        if self.sample_rate == 0 {
            return Err(AugmentError::InvalidWaveform("sample rate must be positive".into()));
        }
        if self.samples.iter().any(|s| !s.is_finite()) {
            return Err(AugmentError::InvalidWaveform("non-finite sample".into()));
        }
        Ok(())
    }

    /// Mean squared amplitude.
    pub fn power(&self) -> f64 {
        power(&self.samples)
    }

    pub fn rms(&self) -> f64 {
        self.power().sqrt()
    }

    pub fn from_json(text: &str) -> Result<Self, AugmentError> {
        let w: Self = serde_json::from_str(text)?;
        w.validate()?;
        Ok(w)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("waveforms always serialize")
    }

    /// Reads mono or multichannel 16-bit PCM; channels are averaged.
    pub fn read_wav<R: Read>(reader: R) -> Result<Self, AugmentError> {
        let mut wav = hound::WavReader::new(reader)?;
        let spec = wav.spec();
        if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
            return Err(AugmentError::InvalidWaveform(format!(
                "expected 16-bit PCM, got {:?} {} bits",
                spec.sample_format, spec.bits_per_sample
            )));
        }
        let channels = usize::from(spec.channels.max(1));
        let raw = wav.samples::<i16>().collect::<Result<Vec<_>, _>>()?;
        let samples = raw
            .chunks(channels)
            .map(|frame| frame.iter().map(|&s| f64::from(s) / 32768.0).sum::<f64>() / frame.len() as f64)
            .collect();
        Self::new(spec.sample_rate, samples)
    }

    /// Writes mono 16-bit PCM, clipping to the representable range.
    pub fn write_wav<W: Write + Seek>(&self, writer: W) -> Result<(), AugmentError> {
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: self.sample_rate,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut out = hound::WavWriter::new(writer, spec)?;
        for &s in &self.samples {
            let q = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
            out.write_sample(q)?;
        }
        out.finalize()?;
        Ok(())
    }
}

fn power(samples: &[f64]) -> f64 {
    if samples.is_empty() {
        0.0
    } else {
        samples.iter().map(|s| s * s).sum::<f64>() / samples.len() as f64
    }
}

/// Signal-to-noise ratio in dB between a signal and an additive noise.
pub fn snr_db(signal: &[f64], noise: &[f64]) -> f64 {
    10.0 * (power(signal) / power(noise)).log10()
}

/// Adds seeded Gaussian noise scaled so the SNR equals `snr_db` exactly.
pub fn add_noise(w: &Waveform, snr_db: f64, seed: u64) -> Result<Waveform, AugmentError> {
    let signal_power = w.power();
    if signal_power <= 0.0 {
        return Err(AugmentError::ZeroPower);
    }
    if snr_db == f64::INFINITY {
        return Ok(w.clone());
    }
    if !snr_db.is_finite() {
        return Err(AugmentError::InvalidPlan(format!("SNR {snr_db} dB")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise: Vec<f64> = (0..w.samples.len()).map(|_| rng.sample(StandardNormal)).collect();
    let raw_power = power(&noise);
    if raw_power <= 0.0 {
        return Err(AugmentError::ZeroPower);
    }
    let scale = (signal_power / (raw_power * 10f64.powf(snr_db / 10.0))).sqrt();
    let samples = w.samples.iter().zip(&noise).map(|(s, n)| s + scale * n).collect();
    Ok(Waveform {
        sample_rate: w.sample_rate,
        samples,
    })
}

/// Linear-interpolation resampling; `factor > 1` plays faster and shortens.
///
/// Output length is `round(len / factor)`. Pitch moves with speed.
pub fn time_stretch(w: &Waveform, factor: f64) -> Result<Waveform, AugmentError> {
    if !(factor > 0.5 && factor < 2.0) {
        return Err(AugmentError::SpeedOutOfRange(factor));
    }
    let n = w.samples.len();
    let out_len = (n as f64 / factor).round() as usize;
    let samples = (0..out_len)
        .map(|i| {
            let pos = i as f64 * factor;
            let lo = pos.floor() as usize;
            if lo + 1 >= n {
                return w.samples[n - 1];
            }
            let frac = pos - lo as f64;
            let (a, b) = (w.samples[lo], w.samples[lo + 1]);
            a + (b - a) * frac
        })
        .collect();
    Ok(Waveform {
        sample_rate: w.sample_rate,
        samples,
    })
}

/// Multiplies every sample by `10^(gain_db / 20)`.
pub fn apply_gain(w: &Waveform, gain_db: f64) -> Result<Waveform, AugmentError> {
    if !(-10.0..=10.0).contains(&gain_db) {
        return Err(AugmentError::GainOutOfRange(gain_db));
    }
    let scale = 10f64.powf(gain_db / 20.0);
    Ok(Waveform {
        sample_rate: w.sample_rate,
        samples: w.samples.iter().map(|s| s * scale).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformMix {
    pub noise: f64,
    pub speed: f64,
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentPlan {
    pub snr_range_db: (f64, f64),
    pub speed_range: (f64, f64),
    pub gain_range_db: (f64, f64),
    pub expansion_factor: usize,
    pub mix: TransformMix,
    pub seed: u64,
}

impl Default for AugmentPlan {
    fn default() -> Self {
        Self {
            snr_range_db: (40.0, 50.0),
            speed_range: (0.9, 1.1),
            gain_range_db: (-10.0, 10.0),
            expansion_factor: 10,
            mix: TransformMix {
                noise: 0.6,
                speed: 0.2,
                gain: 0.2,
            },
            seed: 0,
        }
    }
}

impl AugmentPlan {
    pub fn validate(&self) -> Result<(), AugmentError> {
        let ordered = |(lo, hi): (f64, f64), name: &str| {
            if lo.is_finite() && hi.is_finite() && lo <= hi {
                Ok(())
            } else {
                Err(AugmentError::InvalidPlan(format!("{name} range [{lo}, {hi}] is not ordered")))
            }
        };
        ordered(self.snr_range_db, "snr")?;
        ordered(self.speed_range, "speed")?;
        ordered(self.gain_range_db, "gain")?;
        if !(self.speed_range.0 > 0.5 && self.speed_range.1 < 2.0) {
            return Err(AugmentError::InvalidPlan("speed range must lie inside (0.5, 2.0)".into()));
        }
        if self.gain_range_db.0 < -10.0 || self.gain_range_db.1 > 10.0 {
            return Err(AugmentError::InvalidPlan("gain range must lie inside [-10, 10] dB".into()));
        }
        if self.expansion_factor == 0 {
            return Err(AugmentError::InvalidPlan("expansion factor must be at least 1".into()));
        }
        let m = self.mix;
        if [m.noise, m.speed, m.gain].iter().any(|v| !(*v >= 0.0)) || (m.noise + m.speed + m.gain - 1.0).abs() > 1e-9 {
            return Err(AugmentError::InvalidPlan("mix shares must be non-negative and sum to 1".into()));
        }
        Ok(())
    }

    /// Copies per original: `round(noise·f)` noise, `round(speed·f)` speed, the rest gain.
    pub fn partition(&self) -> CopyCounts {
        let f = self.expansion_factor;
        let noise = ((self.mix.noise * f as f64).round() as usize).min(f);
        let speed = ((self.mix.speed * f as f64).round() as usize).min(f - noise);
        CopyCounts {
            noise,
            speed,
            gain: f - noise - speed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CopyCounts {
    pub noise: usize,
    pub speed: usize,
    pub gain: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "transform", rename_all = "snake_case")]
pub enum Transform {
    Noise { snr_db: f64, seed: u64 },
    Speed { factor: f64 },
    Gain { gain_db: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source_index: usize,
    pub copy_index: usize,
    #[serde(flatten)]
    pub transform: Transform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Augmented {
    pub waveform: Waveform,
    pub provenance: Provenance,
}

fn draw(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

/// Emits `expansion_factor` augmented copies of every original.
///
/// Each original draws its parameters from its own stream seeded with
/// `plan.seed ^ index`, so the output does not depend on corpus order
/// beyond indices.
pub fn expand_corpus(corpus: &[Waveform], plan: &AugmentPlan) -> Result<Vec<Augmented>, AugmentError> {
    plan.validate()?;
    let counts = plan.partition();
    let mut out = Vec::with_capacity(corpus.len() * plan.expansion_factor);
    for (index, original) in corpus.iter().enumerate() {
        original.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(plan.seed ^ index as u64);
        let kinds = std::iter::repeat_n(0u8, counts.noise)
            .chain(std::iter::repeat_n(1u8, counts.speed))
            .chain(std::iter::repeat_n(2u8, counts.gain));
        for (copy_index, kind) in kinds.enumerate() {
            let (waveform, transform) = match kind {
                0 => {
                    let snr = draw(&mut rng, plan.snr_range_db);
                    let seed: u64 = rng.random();
                    (add_noise(original, snr, seed)?, Transform::Noise { snr_db: snr, seed })
                }
                1 => {
                    let factor = draw(&mut rng, plan.speed_range);
                    (time_stretch(original, factor)?, Transform::Speed { factor })
                }
                _ => {
                    let gain = draw(&mut rng, plan.gain_range_db);
                    (apply_gain(original, gain)?, Transform::Gain { gain_db: gain })
                }
            };
            out.push(Augmented {
                waveform,
                provenance: Provenance {
                    source_index: index,
                    copy_index,
                    transform,
                },
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(n: usize) -> Waveform {
        let samples = (0..n).map(|i| 0.3 * (i as f64 * 0.05).sin() + 0.05).collect();
        Waveform::new(16_000, samples).unwrap()
    }

    #[test]
    fn noise_hits_target_snr() {
        let w = tone(4000);
        let noisy = add_noise(&w, 45.0, 9).unwrap();
        let noise: Vec<f64> = noisy.samples.iter().zip(&w.samples).map(|(o, i)| o - i).collect();
        assert!((snr_db(&w.samples, &noise) - 45.0).abs() < 0.01);
        assert_eq!(noisy.samples.len(), w.samples.len());
    }

    #[test]
    fn noise_vanishes_at_infinite_snr_and_is_seeded() {
        let w = tone(100);
        assert_eq!(add_noise(&w, f64::INFINITY, 1).unwrap(), w);
        let far = add_noise(&w, 300.0, 1).unwrap();
        assert!(far.samples.iter().zip(&w.samples).all(|(a, b)| (a - b).abs() < 1e-12));
        assert_eq!(add_noise(&w, 42.0, 5).unwrap(), add_noise(&w, 42.0, 5).unwrap());
        assert_ne!(add_noise(&w, 42.0, 5).unwrap(), add_noise(&w, 42.0, 6).unwrap());
    }

    #[test]
    fn silence_has_no_snr() {
        let w = Waveform::new(8000, vec![0.0; 10]).unwrap();
        assert!(matches!(add_noise(&w, 40.0, 0), Err(AugmentError::ZeroPower)));
    }

    #[test]
    fn stretch_examples() {
        let w = tone(1000);
        assert_eq!(time_stretch(&w, 1.0).unwrap(), w);
        assert_eq!(time_stretch(&w, 1.1).unwrap().samples.len(), 909);
        assert_eq!(time_stretch(&w, 0.9).unwrap().samples.len(), 1111);
        let flat = Waveform::new(8000, vec![0.25; 50]).unwrap();
        for f in [0.6, 0.9, 1.1, 1.9] {
            assert!(time_stretch(&flat, f).unwrap().samples.iter().all(|s| *s == 0.25));
        }
        assert!(time_stretch(&w, 0.5).is_err());
        assert!(time_stretch(&w, 2.0).is_err());
    }

    #[test]
    fn gain_examples() {
        let w = tone(500);
        assert_eq!(apply_gain(&w, 0.0).unwrap(), w);
        let quiet = apply_gain(&w, -10.0).unwrap();
        assert!((quiet.samples[7] - w.samples[7] * 10f64.powf(-0.5)).abs() < 1e-15);
        assert!(apply_gain(&w, -20.0).is_err());
        let doubled = apply_gain(&w, 20.0 * 2f64.log10()).unwrap();
        assert!((doubled.rms() / w.rms() - 2.0).abs() < 1e-9);
        let printed = apply_gain(&w, 6.0206).unwrap();
        assert!((printed.rms() / w.rms() - 2.0).abs() < 1e-5);
    }

    #[test]
    fn ten_fold_expansion_mix() {
        let corpus: Vec<Waveform> = (0..5).map(|i| tone(200 + i * 10)).collect();
        let plan = AugmentPlan { seed: 7, ..AugmentPlan::default() };
        let out = expand_corpus(&corpus, &plan).unwrap();
        assert_eq!(out.len(), 50);
        let count = |pred: fn(&Transform) -> bool| out.iter().filter(|a| pred(&a.provenance.transform)).count();
        assert_eq!(count(|t| matches!(t, Transform::Noise { .. })), 30);
        assert_eq!(count(|t| matches!(t, Transform::Speed { .. })), 10);
        assert_eq!(count(|t| matches!(t, Transform::Gain { .. })), 10);
        assert_eq!(out, expand_corpus(&corpus, &plan).unwrap());
    }

    #[test]
    fn single_copy_is_noise() {
        let plan = AugmentPlan { expansion_factor: 1, ..AugmentPlan::default() };
        let out = expand_corpus(&[tone(64), tone(80)], &plan).unwrap();
        assert_eq!(out.len(), 2);
        assert!(out.iter().all(|a| matches!(a.provenance.transform, Transform::Noise { .. })));
    }

    #[test]
    fn plan_validation() {
        let bad_mix = AugmentPlan {
            mix: TransformMix { noise: 0.5, speed: 0.2, gain: 0.2 },
            ..AugmentPlan::default()
        };
        assert!(bad_mix.validate().is_err());
        let bad_range = AugmentPlan { snr_range_db: (50.0, 40.0), ..AugmentPlan::default() };
        assert!(bad_range.validate().is_err());
        assert!(AugmentPlan { expansion_factor: 0, ..AugmentPlan::default() }.validate().is_err());
    }

    #[test]
    fn wav_round_trip_within_quantization() {
        let w = tone(300);
        let mut buf = std::io::Cursor::new(Vec::new());
        w.write_wav(&mut buf).unwrap();
        let back = Waveform::read_wav(std::io::Cursor::new(buf.into_inner())).unwrap();
        assert_eq!(back.sample_rate, 16_000);
        assert_eq!(back.samples.len(), 300);
        assert!(back.samples.iter().zip(&w.samples).all(|(a, b)| (a - b).abs() <= 1.0 / 32768.0));
    }

    #[test]
    fn waveform_json() {
        let w = Waveform::from_json(r#"{"sample_rate": 8000, "samples": [0.1, -0.2]}"#).unwrap();
        assert_eq!(w.samples.len(), 2);
        assert!(Waveform::from_json(r#"{"sample_rate": 0, "samples": []}"#).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn partition_sums_to_factor(factor in 1usize..200, noise in 0.0f64..1.0, speed_share in 0.0f64..1.0) {
                let speed = (1.0 - noise) * speed_share;
                let plan = AugmentPlan {
                    expansion_factor: factor,
                    mix: TransformMix { noise, speed, gain: 1.0 - noise - speed },
                    ..AugmentPlan::default()
                };
                let c = plan.partition();
                prop_assert_eq!(c.noise + c.speed + c.gain, factor);
            }

            #[test]
            fn drawn_parameters_stay_in_range(seed in any::<u64>()) {
                let plan = AugmentPlan { seed, ..AugmentPlan::default() };
                let out = expand_corpus(&[tone(40)], &plan).unwrap();
                for a in out {
                    match a.provenance.transform {
                        Transform::Noise { snr_db, .. } => prop_assert!((40.0..=50.0).contains(&snr_db)),
                        Transform::Speed { factor } => prop_assert!((0.9..=1.1).contains(&factor)),
                        Transform::Gain { gain_db } => prop_assert!((-10.0..=10.0).contains(&gain_db)),
                    }
                }
            }

            #[test]
            fn measured_snr_within_hundredth_db(snr in 40.0f64..=50.0, seed in any::<u64>()) {
                let w = tone(512);
                let noisy = add_noise(&w, snr, seed).unwrap();
                let noise: Vec<f64> = noisy.samples.iter().zip(&w.samples).map(|(o, i)| o - i).collect();
                prop_assert!((snr_db(&w.samples, &noise) - snr).abs() < 0.01);
            }
        }
    }
}
