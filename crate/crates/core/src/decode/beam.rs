//! CTC prefix beam search with shallow language-model fusion.

use std::cmp::Ordering;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::lm::NgramLm;
use super::DecodeError;
use crate::ctc::{FrameProbs, LabelSeq};
use crate::nn::log_sum_exp;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub beam_width: usize,
    /// Weight on the language-model log probability.
    pub lm_weight: f64,
    /// Bonus per emitted character.
    pub length_bonus: f64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            beam_width: 3,
            lm_weight: 1.0,
            length_bonus: 0.0,
        }
    }
}

/// One hypothesis: path mass ending in blank and in a symbol, in log space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Beam {
    pub blank: f64,
    pub non_blank: f64,
}

impl Beam {
    const EMPTY: Beam = Beam {
        blank: f64::NEG_INFINITY,
        non_blank: f64::NEG_INFINITY,
    };

    pub fn total(&self) -> f64 {
        log_sum_exp(&[self.blank, self.non_blank])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub labels: LabelSeq,
    pub text: String,
    pub ctc_log_prob: f64,
    pub lm_log_prob: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeResult {
    pub best: Hypothesis,
    /// Surviving hypotheses, best first.
    pub hypotheses: Vec<Hypothesis>,
}

fn lex_add(acc: &mut f64, v: f64) {
    *acc = log_sum_exp(&[*acc, v]);
}

/// Descending score, then ascending label sequence.
fn rank(a: &(f64, &Vec<usize>), b: &(f64, &Vec<usize>)) -> Ordering {
    b.0.partial_cmp(&a.0)
        .unwrap_or_else(|| b.0.is_nan().cmp(&a.0.is_nan()))
        .then_with(|| a.1.cmp(b.1))
}

struct Scorer<'a> {
    probs: &'a FrameProbs,
    lm: Option<&'a NgramLm>,
    cfg: DecodeConfig,
    space: Option<usize>,
    cache: HashMap<Vec<usize>, f64>,
}

impl<'a> Scorer<'a> {
    fn words(&self, labels: &[usize]) -> (Vec<String>, bool) {
        let text: String = labels.iter().map(|&i| self.probs.alphabet().symbols()[i]).collect();
        let closed = match (self.space, labels.last()) {
            (Some(s), Some(&l)) => l == s,
            _ => false,
        };
        let words = text.split(' ').filter(|w| !w.is_empty()).map(str::to_lowercase).collect();
        (words, closed)
    }

    /// LM score of the words already terminated by a space.
    fn partial_lm(&mut self, labels: &[usize]) -> f64 {
        let Some(lm) = self.lm else { return 0.0 };
        if self.cfg.lm_weight == 0.0 {
            return 0.0;
        }
        if let Some(v) = self.cache.get(labels) {
            return *v;
        }
        let (mut words, closed) = self.words(labels);
        if !closed {
            words.pop();
        }
        let v = lm.log_prob_prefix(&words);
        self.cache.insert(labels.to_vec(), v);
        v
    }

    fn full_lm(&self, labels: &[usize]) -> f64 {
        match self.lm {
            Some(lm) => lm.log_prob(&self.words(labels).0),
            None => 0.0,
        }
    }

    fn weighted(&self, ctc: f64, lm: f64, len: usize) -> f64 {
        let lm_term = if self.cfg.lm_weight == 0.0 { 0.0 } else { self.cfg.lm_weight * lm };
        ctc + lm_term + self.cfg.length_bonus * len as f64
    }
}

/// Prefix beam search over the lattice.
///
/// Keeps the `beam_width` best prefixes after every frame, ranked by
/// `log P_ctc + α·LM(completed words) + β·length`. The final ranking uses the
/// LM score of the whole transcript including the end marker. The space
/// character, when in the alphabet, separates words for the LM.
pub fn beam_decode(probs: &FrameProbs, lm: Option<&NgramLm>, cfg: &DecodeConfig) -> Result<DecodeResult, DecodeError> {
    if cfg.beam_width == 0 {
        return Err(DecodeError::InvalidConfig("beam width must be at least 1".into()));
    }
    if !(cfg.lm_weight >= 0.0 && cfg.lm_weight.is_finite() && cfg.length_bonus.is_finite()) {
        return Err(DecodeError::InvalidConfig("lm weight must be >= 0 and weights finite".into()));
    }
    let alphabet = probs.alphabet();
    let blank = alphabet.blank_index();
    let mut scorer = Scorer {
        probs,
        lm,
        cfg: *cfg,
        space: alphabet.index_of(' ').filter(|&i| i != blank),
        cache: HashMap::new(),
    };

    let mut beams: Vec<(Vec<usize>, Beam)> = vec![(
        Vec::new(),
        Beam {
            blank: 0.0,
            non_blank: f64::NEG_INFINITY,
        },
    )];

    for t in 0..probs.num_frames() {
        let frame = probs.frame(t);
        let log_blank = frame[blank].ln();
        let mut next: HashMap<Vec<usize>, Beam> = HashMap::new();

        for (prefix, beam) in &beams {
            let total = beam.total();
            if log_blank > f64::NEG_INFINITY {
                lex_add(&mut next.entry(prefix.clone()).or_insert(Beam::EMPTY).blank, total + log_blank);
            }
            for (c, &p) in frame.iter().enumerate().take(blank) {
                if p <= 0.0 {
                    continue;
                }
                let lp = p.ln();
                let mut extended = prefix.clone();
                extended.push(c);
                if prefix.last() == Some(&c) {
                    lex_add(&mut next.entry(prefix.clone()).or_insert(Beam::EMPTY).non_blank, beam.non_blank + lp);
                    lex_add(&mut next.entry(extended).or_insert(Beam::EMPTY).non_blank, beam.blank + lp);
                } else {
                    lex_add(&mut next.entry(extended).or_insert(Beam::EMPTY).non_blank, total + lp);
                }
            }
        }

        let mut scored: Vec<(f64, Vec<usize>, Beam)> = next
            .into_iter()
            .filter(|(_, b)| b.total() > f64::NEG_INFINITY)
            .map(|(prefix, b)| {
                let lm_part = scorer.partial_lm(&prefix);
                (scorer.weighted(b.total(), lm_part, prefix.len()), prefix, b)
            })
            .collect();
        scored.sort_by(|a, b| rank(&(a.0, &a.1), &(b.0, &b.1)));
        scored.truncate(cfg.beam_width);
        beams = scored.into_iter().map(|(_, p, b)| (p, b)).collect();
        if beams.is_empty() {
            break;
        }
    }

    let mut hypotheses: Vec<Hypothesis> = beams
        .iter()
        .map(|(prefix, beam)| {
            let ctc = beam.total();
            let lm_lp = scorer.full_lm(prefix);
            let labels = LabelSeq(prefix.clone());
            Hypothesis {
                text: alphabet.decode(&labels),
                labels,
                ctc_log_prob: ctc,
                lm_log_prob: lm_lp,
                score: scorer.weighted(ctc, lm_lp, prefix.len()),
            }
        })
        .collect();
    hypotheses.sort_by(|a, b| rank(&(a.score, &a.labels.0), &(b.score, &b.labels.0)));
    let best = hypotheses.first().cloned().unwrap_or(Hypothesis {
        labels: LabelSeq::default(),
        text: String::new(),
        ctc_log_prob: f64::NEG_INFINITY,
        lm_log_prob: 0.0,
        score: f64::NEG_INFINITY,
    });
    Ok(DecodeResult { best, hypotheses })
}
