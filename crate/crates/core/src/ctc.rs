//! Connectionist Temporal Classification over per-frame probability lattices.
//!
//! The lattice has one column per alphabet symbol followed by a final blank
//! column. Losses are taken over probabilities (not logits); use
//! [`ctc_grad_logits`] when the lattice comes from a softmax layer.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{log_sum_exp, softmax, Tensor2D};

/// Row sums must be within this distance of one.
pub const ROW_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum CtcError {
    #[error("invalid alphabet: {0}")]
    Alphabet(String),
    #[error("label index {0} is out of range")]
    InvalidLabel(usize),
    #[error("target contains the blank symbol")]
    BlankInTarget,
    #[error("symbol {0:?} is not in the alphabet")]
    UnknownSymbol(char),
    #[error("invalid frames: {0}")]
    InvalidFrames(String),
    #[error("target cannot be emitted in the available frames")]
    InfeasibleTarget,
    #[error("enumeration refused: {classes} classes over {frames} frames exceeds 4 classes / 8 frames")]
    OracleBounds { classes: usize, frames: usize },
    #[error("frame document: {0}")]
    Json(String),
}

/// Ordered output symbols plus a blank that sits after them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Alphabet {
    symbols: Vec<char>,
    blank: char,
}

impl Alphabet {
    pub fn new(symbols: Vec<char>, blank: char) -> Result<Self, CtcError> {
        if symbols.contains(&blank) {
            return Err(CtcError::Alphabet(format!("blank {blank:?} is also a symbol")));
        }
        let mut seen = symbols.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != symbols.len() {
            return Err(CtcError::Alphabet("duplicate symbols".into()));
        }
        Ok(Self { symbols, blank })
    }

    pub fn symbols(&self) -> &[char] {
        &self.symbols
    }

    pub fn blank(&self) -> char {
        self.blank
    }

    pub fn blank_index(&self) -> usize {
        self.symbols.len()
    }

    /// Symbols plus blank.
    pub fn num_classes(&self) -> usize {
        self.symbols.len() + 1
    }

    pub fn index_of(&self, c: char) -> Option<usize> {
        if c == self.blank {
            Some(self.blank_index())
        } else {
            self.symbols.iter().position(|s| *s == c)
        }
    }

    /// Encodes a label string; the blank character is rejected.
    pub fn encode(&self, text: &str) -> Result<LabelSeq, CtcError> {
        let labels = text
            .chars()
            .map(|c| match self.index_of(c) {
                Some(i) if i == self.blank_index() => Err(CtcError::BlankInTarget),
                Some(i) => Ok(i),
                None => Err(CtcError::UnknownSymbol(c)),
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(LabelSeq(labels))
    }

    /// Encodes a frame-level path; the blank character is allowed.
    pub fn encode_path(&self, text: &str) -> Result<Vec<usize>, CtcError> {
        text.chars()
            .map(|c| self.index_of(c).ok_or(CtcError::UnknownSymbol(c)))
            .collect()
    }

    pub fn decode(&self, labels: &LabelSeq) -> String {
        labels.0.iter().map(|&i| self.symbols[i]).collect()
    }
}

/// Target label sequence; never contains the blank.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LabelSeq(pub Vec<usize>);

impl LabelSeq {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn validate(&self, alphabet: &Alphabet) -> Result<(), CtcError> {
        for &l in &self.0 {
            if l == alphabet.blank_index() {
                return Err(CtcError::BlankInTarget);
            }
            if l > alphabet.blank_index() {
                return Err(CtcError::InvalidLabel(l));
            }
        }
        Ok(())
    }
}

/// A validated lattice: `T` rows over `num_classes` columns, rows summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameProbs {
    alphabet: Alphabet,
    probs: Tensor2D,
}

#[derive(Serialize, Deserialize)]
struct FrameDocument {
    alphabet: Vec<String>,
    blank: String,
    frames: Vec<Vec<f64>>,
}

fn single_char(s: &str) -> Result<char, CtcError> {
    let mut it = s.chars();
    match (it.next(), it.next()) {
        (Some(c), None) => Ok(c),
        _ => Err(CtcError::Alphabet(format!("{s:?} is not a single character"))),
    }
}

impl FrameProbs {
    pub fn new(alphabet: Alphabet, frames: Vec<Vec<f64>>) -> Result<Self, CtcError> {
        let classes = alphabet.num_classes();
        for (t, row) in frames.iter().enumerate() {
            if row.len() != classes {
                return Err(CtcError::InvalidFrames(format!(
                    "frame {t} has {} columns, expected {classes}",
                    row.len()
                )));
            }
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(CtcError::InvalidFrames(format!("frame {t} has entries outside [0, 1]")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(CtcError::InvalidFrames(format!("frame {t} sums to {sum}")));
            }
        }
        let probs = Tensor2D::from_rows(&frames, classes)
            .map_err(|e| CtcError::InvalidFrames(e.to_string()))?;
        Ok(Self { alphabet, probs })
    }

    /// Parses `{"alphabet": [...], "blank": "-", "frames": [[...], ...]}`.
    pub fn from_json(text: &str) -> Result<Self, CtcError> {
        let doc: FrameDocument =
            serde_json::from_str(text).map_err(|e| CtcError::Json(e.to_string()))?;
        let symbols = doc
            .alphabet
            .iter()
            .map(|s| single_char(s))
            .collect::<Result<Vec<_>, _>>()?;
        let alphabet = Alphabet::new(symbols, single_char(&doc.blank)?)?;
        Self::new(alphabet, doc.frames)
    }

    pub fn to_json(&self) -> String {
        let doc = FrameDocument {
            alphabet: self.alphabet.symbols.iter().map(|c| c.to_string()).collect(),
            blank: self.alphabet.blank.to_string(),
            frames: (0..self.num_frames()).map(|t| self.frame(t).to_vec()).collect(),
        };
        serde_json::to_string(&doc).expect("frame documents always serialize")
    }

    pub fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    pub fn num_frames(&self) -> usize {
        self.probs.rows()
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        self.probs.row(t)
    }

    pub fn as_tensor(&self) -> &Tensor2D {
        &self.probs
    }
}

/// Merges adjacent duplicates, then drops blanks.
pub fn collapse(path: &[usize], alphabet: &Alphabet) -> Result<LabelSeq, CtcError> {
    let blank = alphabet.blank_index();
    let mut out = Vec::new();
    let mut prev = None;
    for &p in path {
        if p > blank {
            return Err(CtcError::InvalidLabel(p));
        }
        if Some(p) != prev && p != blank {
            out.push(p);
        }
        prev = Some(p);
    }
    Ok(LabelSeq(out))
}

/// Shortest path that collapses to `labels`: a blank only between repeats.
pub fn minimal_path(labels: &LabelSeq, alphabet: &Alphabet) -> Vec<usize> {
    let mut path = Vec::with_capacity(labels.len() * 2);
    for (i, &l) in labels.0.iter().enumerate() {
        if i > 0 && labels.0[i - 1] == l {
            path.push(alphabet.blank_index());
        }
        path.push(l);
    }
    path
}

/// Fewest frames that can emit `target`: one per label plus a blank between repeats.
pub fn min_frames(target: &[usize]) -> usize {
    target.len() + target.windows(2).filter(|w| w[0] == w[1]).count()
}

struct Lattice<'a> {
    probs: &'a [f64],
    classes: usize,
    blank: usize,
    frames: usize,
    extended: Vec<usize>,
}

impl<'a> Lattice<'a> {
    fn new(probs: &'a [f64], classes: usize, blank: usize, target: &[usize]) -> Self {
        let mut extended = Vec::with_capacity(2 * target.len() + 1);
        extended.push(blank);
        for &l in target {
            extended.push(l);
            extended.push(blank);
        }
        Self {
            probs,
            classes,
            blank,
            frames: probs.len() / classes,
            extended,
        }
    }

    fn log_p(&self, t: usize, class: usize) -> f64 {
        self.probs[t * self.classes + class].ln()
    }

    fn can_skip(&self, s: usize) -> bool {
        s >= 2 && self.extended[s] != self.blank && self.extended[s] != self.extended[s - 2]
    }

    /// Log forward variables before the emission at frame t (`alpha_hat`).
    fn forward(&self) -> Vec<Vec<f64>> {
        let states = self.extended.len();
        let mut hat = vec![vec![f64::NEG_INFINITY; states]; self.frames];
        let mut prev = vec![f64::NEG_INFINITY; states];
        for t in 0..self.frames {
            for s in 0..states {
                hat[t][s] = if t == 0 {
                    if s < 2 {
                        0.0
                    } else {
                        f64::NEG_INFINITY
                    }
                } else {
                    let mut terms = [prev[s], f64::NEG_INFINITY, f64::NEG_INFINITY];
                    if s >= 1 {
                        terms[1] = prev[s - 1];
                    }
                    if self.can_skip(s) {
                        terms[2] = prev[s - 2];
                    }
                    log_sum_exp(&terms)
                };
            }
            for s in 0..states {
                prev[s] = hat[t][s] + self.log_p(t, self.extended[s]);
            }
        }
        hat
    }

    /// Log backward variables excluding the emission at frame t (`beta_hat`).
    fn backward(&self) -> Vec<Vec<f64>> {
        let states = self.extended.len();
        let mut hat = vec![vec![f64::NEG_INFINITY; states]; self.frames];
        let mut next = vec![f64::NEG_INFINITY; states];
        for t in (0..self.frames).rev() {
            for s in 0..states {
                hat[t][s] = if t + 1 == self.frames {
                    if s + 2 >= states {
                        0.0
                    } else {
                        f64::NEG_INFINITY
                    }
                } else {
                    let mut terms = [next[s], f64::NEG_INFINITY, f64::NEG_INFINITY];
                    if s + 1 < states {
                        terms[1] = next[s + 1];
                    }
                    if s + 2 < states && self.can_skip(s + 2) {
                        terms[2] = next[s + 2];
                    }
                    log_sum_exp(&terms)
                };
            }
            for s in 0..states {
                next[s] = hat[t][s] + self.log_p(t, self.extended[s]);
            }
        }
        hat
    }

    fn log_likelihood(&self, alpha_hat: &[Vec<f64>]) -> f64 {
        if self.frames == 0 {
            return if self.extended.len() == 1 { 0.0 } else { f64::NEG_INFINITY };
        }
        let t = self.frames - 1;
        let states = self.extended.len();
        let mut terms = vec![alpha_hat[t][states - 1] + self.log_p(t, self.extended[states - 1])];
        if states >= 2 {
            terms.push(alpha_hat[t][states - 2] + self.log_p(t, self.extended[states - 2]));
        }
        log_sum_exp(&terms)
    }
}

fn check_flat(frames: &[f64], classes: usize, blank: usize, target: &[usize]) -> Result<(), CtcError> {
    if classes == 0 || frames.len() % classes != 0 {
        return Err(CtcError::InvalidFrames("lattice is not a whole number of frames".into()));
    }
    if blank >= classes {
        return Err(CtcError::InvalidLabel(blank));
    }
    for &l in target {
        if l == blank {
            return Err(CtcError::BlankInTarget);
        }
        if l >= classes {
            return Err(CtcError::InvalidLabel(l));
        }
    }
    Ok(())
}

/// CTC loss over a flat row-major lattice with no normalization check.
///
/// This is the entry point for gradient harnesses that perturb individual
/// probabilities. Returns `+inf` when the target is infeasible or has zero
/// probability.
pub fn ctc_loss_flat(frames: &[f64], classes: usize, blank: usize, target: &[usize]) -> Result<f64, CtcError> {
    check_flat(frames, classes, blank, target)?;
    let lattice = Lattice::new(frames, classes, blank, target);
    if lattice.frames < min_frames(target) {
        return Ok(f64::INFINITY);
    }
    let alpha = lattice.forward();
    Ok(-lattice.log_likelihood(&alpha))
}

/// `-ln` of the total probability of all paths that collapse to `target`.
///
/// An infeasible target yields `f64::INFINITY` rather than an error.
pub fn ctc_loss(probs: &FrameProbs, target: &LabelSeq) -> Result<f64, CtcError> {
    target.validate(&probs.alphabet)?;
    ctc_loss_flat(
        probs.probs.data(),
        probs.alphabet.num_classes(),
        probs.alphabet.blank_index(),
        target.as_slice(),
    )
}

/// Gradient of the loss with respect to every lattice entry, flat and row-major.
pub fn ctc_grad_flat(frames: &[f64], classes: usize, blank: usize, target: &[usize]) -> Result<Vec<f64>, CtcError> {
    check_flat(frames, classes, blank, target)?;
    let lattice = Lattice::new(frames, classes, blank, target);
    if lattice.frames < min_frames(target) {
        return Err(CtcError::InfeasibleTarget);
    }
    let alpha = lattice.forward();
    let log_total = lattice.log_likelihood(&alpha);
    if log_total == f64::NEG_INFINITY {
        return Err(CtcError::InfeasibleTarget);
    }
    let beta = lattice.backward();

    let mut grad = vec![0.0; frames.len()];
    let mut per_class = vec![Vec::new(); classes];
    for t in 0..lattice.frames {
        per_class.iter_mut().for_each(Vec::clear);
        for (s, &class) in lattice.extended.iter().enumerate() {
            per_class[class].push(alpha[t][s] + beta[t][s]);
        }
        for (class, terms) in per_class.iter().enumerate() {
            if !terms.is_empty() {
                grad[t * classes + class] = -(log_sum_exp(terms) - log_total).exp();
            }
        }
    }
    Ok(grad)
}

/// `∂loss/∂p_t(k)` for every frame and class, as a `T × classes` tensor.
pub fn ctc_grad(probs: &FrameProbs, target: &LabelSeq) -> Result<Tensor2D, CtcError> {
    target.validate(&probs.alphabet)?;
    let classes = probs.alphabet.num_classes();
    let grad = ctc_grad_flat(
        probs.probs.data(),
        classes,
        probs.alphabet.blank_index(),
        target.as_slice(),
    )?;
    Tensor2D::from_vec(probs.num_frames(), classes, grad).map_err(|e| CtcError::InvalidFrames(e.to_string()))
}

/// Loss and gradient with respect to pre-softmax logits (one softmax per frame).
pub fn ctc_grad_logits(logits: &Tensor2D, blank: usize, target: &[usize]) -> Result<(f64, Tensor2D), CtcError> {
    let classes = logits.cols();
    let mut probs = Vec::with_capacity(logits.data().len());
    for t in 0..logits.rows() {
        probs.extend(softmax(logits.row(t)));
    }
    let loss = ctc_loss_flat(&probs, classes, blank, target)?;
    let grad_p = ctc_grad_flat(&probs, classes, blank, target)?;
    let mut grad = Tensor2D::zeros(logits.rows(), classes);
    for t in 0..logits.rows() {
        let p = &probs[t * classes..(t + 1) * classes];
        let g = &grad_p[t * classes..(t + 1) * classes];
        let dot: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
        for j in 0..classes {
            grad.set(t, j, p[j] * (g[j] - dot));
        }
    }
    Ok((loss, grad))
}

/// Brute-force loss: sums every path of the lattice whose collapse equals `target`.
///
/// Refuses lattices with more than 4 classes or 8 frames.
pub fn enumerate_oracle(probs: &FrameProbs, target: &LabelSeq) -> Result<f64, CtcError> {
    target.validate(&probs.alphabet)?;
    let classes = probs.alphabet.num_classes();
    let frames = probs.num_frames();
    if classes > 4 || frames > 8 {
        return Err(CtcError::OracleBounds { classes, frames });
    }
    let total = classes.pow(frames as u32);
    let mut path = vec![0usize; frames];
    let mut mass = 0.0;
    for code in 0..total {
        let mut c = code;
        for slot in path.iter_mut() {
            *slot = c % classes;
            c /= classes;
        }
        if collapse(&path, &probs.alphabet)? == *target {
            mass += path
                .iter()
                .enumerate()
                .map(|(t, &k)| probs.frame(t)[k])
                .product::<f64>();
        }
    }
    Ok(if mass > 0.0 { -mass.ln() } else { f64::INFINITY })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{finite_diff_grad, relative_error};

    fn ab() -> Alphabet {
        Alphabet::new(vec!['a', 'b'], '-').unwrap()
    }

    fn uniform_a() -> FrameProbs {
        let alphabet = Alphabet::new(vec!['a'], '-').unwrap();
        FrameProbs::new(alphabet, vec![vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap()
    }

    #[test]
    fn collapse_examples() {
        let a = ab();
        let c = |s: &str| a.decode(&collapse(&a.encode_path(s).unwrap(), &a).unwrap());
        assert_eq!(c("aa-b"), "ab");
        assert_eq!(c("a-a"), "aa");
        assert_eq!(c(""), "");
        assert_eq!(collapse(&[7], &a), Err(CtcError::InvalidLabel(7)));
    }

    #[test]
    fn loss_on_two_uniform_frames() {
        let probs = uniform_a();
        let target = probs.alphabet().encode("a").unwrap();
        let loss = ctc_loss(&probs, &target).unwrap();
        assert!((loss - (-(0.75f64).ln())).abs() < 1e-12);
        assert!((loss - 0.28768).abs() < 1e-5);
    }

    #[test]
    fn empty_target_is_all_blank_path() {
        let probs = FrameProbs::new(ab(), vec![vec![0.2, 0.3, 0.5], vec![0.1, 0.1, 0.8]]).unwrap();
        let loss = ctc_loss(&probs, &LabelSeq::default()).unwrap();
        assert!((loss - (-(0.5f64 * 0.8).ln())).abs() < 1e-12);
    }

    #[test]
    fn repeated_label_needs_separator_frame() {
        let alphabet = Alphabet::new(vec!['a'], '-').unwrap();
        let probs = FrameProbs::new(alphabet.clone(), vec![vec![0.5, 0.5]]).unwrap();
        let target = alphabet.encode("aa").unwrap();
        assert_eq!(ctc_loss(&probs, &target).unwrap(), f64::INFINITY);
        assert_eq!(ctc_grad(&probs, &target), Err(CtcError::InfeasibleTarget));
        assert_eq!(enumerate_oracle(&probs, &target).unwrap(), f64::INFINITY);
    }

    #[test]
    fn zero_frames() {
        let probs = FrameProbs::new(ab(), vec![]).unwrap();
        assert_eq!(ctc_loss(&probs, &LabelSeq::default()).unwrap(), 0.0);
        assert_eq!(ctc_loss(&probs, &LabelSeq(vec![0])).unwrap(), f64::INFINITY);
    }

    #[test]
    fn gradient_on_uniform_example_matches_finite_differences() {
        let probs = uniform_a();
        let grad = ctc_grad(&probs, &LabelSeq(vec![0])).unwrap();
        let numeric = finite_diff_grad(
            |p| ctc_loss_flat(p, 2, 1, &[0]).unwrap(),
            probs.as_tensor().data(),
            1e-6,
        );
        for (a, n) in grad.data().iter().zip(&numeric) {
            assert!(relative_error(*a, *n, 1e-8) < 1e-6, "{a} vs {n}");
        }
    }

    #[test]
    fn certain_symbol_has_negative_partial() {
        // every path collapsing to "a" in one frame emits 'a' there
        let alphabet = Alphabet::new(vec!['a'], '-').unwrap();
        let probs = FrameProbs::new(alphabet, vec![vec![0.4, 0.6]]).unwrap();
        let grad = ctc_grad(&probs, &LabelSeq(vec![0])).unwrap();
        assert!(grad.get(0, 0) < 0.0);
        assert_eq!(grad.get(0, 1), 0.0);
    }

    #[test]
    fn logit_gradient_matches_finite_differences() {
        let logits = Tensor2D::from_vec(3, 3, vec![0.3, -1.0, 0.2, 1.5, 0.1, -0.4, 0.0, 0.7, 0.9]).unwrap();
        let (_, grad) = ctc_grad_logits(&logits, 2, &[0, 1]).unwrap();
        let numeric = finite_diff_grad(
            |z| {
                let t = Tensor2D::from_vec(3, 3, z.to_vec()).unwrap();
                ctc_grad_logits(&t, 2, &[0, 1]).unwrap().0
            },
            logits.data(),
            1e-5,
        );
        for (a, n) in grad.data().iter().zip(&numeric) {
            assert!(relative_error(*a, *n, 1e-8) < 1e-5, "{a} vs {n}");
        }
    }

    #[test]
    fn oracle_certain_blank() {
        let probs = FrameProbs::new(ab(), vec![vec![0.0, 0.0, 1.0]; 3]).unwrap();
        assert_eq!(enumerate_oracle(&probs, &LabelSeq::default()).unwrap(), 0.0);
        assert_eq!(enumerate_oracle(&probs, &LabelSeq(vec![0])).unwrap(), f64::INFINITY);
    }

    #[test]
    fn oracle_refuses_large_instances() {
        let probs = FrameProbs::new(ab(), vec![vec![0.2, 0.3, 0.5]; 9]).unwrap();
        assert!(matches!(
            enumerate_oracle(&probs, &LabelSeq::default()),
            Err(CtcError::OracleBounds { .. })
        ));
    }

    #[test]
    fn frame_validation() {
        assert!(FrameProbs::new(ab(), vec![vec![0.5, 0.5]]).is_err());
        assert!(FrameProbs::new(ab(), vec![vec![0.5, 0.5, 0.5]]).is_err());
        assert!(FrameProbs::new(ab(), vec![vec![1.5, -0.5, 0.0]]).is_err());
        assert!(Alphabet::new(vec!['a', 'a'], '-').is_err());
        assert!(Alphabet::new(vec!['a', '-'], '-').is_err());
    }

    #[test]
    fn frame_json_round_trip() {
        let text = r#"{"alphabet": ["a","b"], "blank": "-", "frames": [[0.1, 0.2, 0.7], [0.6, 0.3, 0.1]]}"#;
        let probs = FrameProbs::from_json(text).unwrap();
        assert_eq!(probs.num_frames(), 2);
        assert_eq!(probs.alphabet().blank_index(), 2);
        assert_eq!(FrameProbs::from_json(&probs.to_json()).unwrap(), probs);
        assert!(FrameProbs::from_json(r#"{"alphabet": ["ab"], "blank": "-", "frames": []}"#).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn collapse_is_idempotent_on_its_output(path in prop::collection::vec(0usize..3, 0..12)) {
                let a = ab();
                let once = collapse(&path, &a).unwrap();
                let again = collapse(&minimal_path(&once, &a), &a).unwrap();
                prop_assert_eq!(again, once);
            }
        }
    }
}
