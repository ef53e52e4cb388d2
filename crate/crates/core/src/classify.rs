//! Sentence classification with a convolutional network over trained word
//! vectors: embedding lookup, parallel convolutions of several widths,
//! tanh, max-over-time pooling, affine layer and softmax.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{softmax, softmax_cross_entropy, ModelDocument, NnError, Tensor2D, TrainConfig};

#[derive(Debug, Error, PartialEq)]
pub enum ClassifyError {
    #[error("invalid label set: {0}")]
    Labels(String),
    #[error("invalid network config: {0}")]
    Config(String),
    #[error("corpus line {line}: {message}")]
    Corpus { line: usize, message: String },
    #[error("class {0:?} has no training examples")]
    EmptyClass(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSet {
    names: Vec<String>,
}

impl LabelSet {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self, ClassifyError> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.len() < 2 {
            return Err(ClassifyError::Labels("at least two classes are required".into()));
        }
        for (i, n) in names.iter().enumerate() {
            if n.is_empty() || names[..i].contains(n) {
                return Err(ClassifyError::Labels(format!("empty or duplicate class {n:?}")));
            }
        }
        Ok(Self { names })
    }

    /// Basic medical information, vital signs and medication doses.
    pub fn three_class() -> Self {
        Self::new(["basic_medical_information", "vital_signs", "medication_doses"]).expect("valid")
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

impl Default for LabelSet {
    fn default() -> Self {
        Self::new(["patient_status", "medical_history", "treatment_plan", "medication_reminder"]).expect("valid")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CnnConfig {
    pub embedding_dim: usize,
    pub filter_widths: Vec<usize>,
    pub feature_maps: usize,
    pub seed: u64,
}

impl Default for CnnConfig {
    fn default() -> Self {
        Self { embedding_dim: 32, filter_widths: vec![3, 4, 5], feature_maps: 16, seed: 0 }
    }
}

impl CnnConfig {
    pub fn validate(&self) -> Result<(), ClassifyError> {
        if self.embedding_dim == 0 || self.feature_maps == 0 {
            return Err(ClassifyError::Config("dimensions must be at least 1".into()));
        }
        if self.filter_widths.is_empty() || self.filter_widths.contains(&0) {
            return Err(ClassifyError::Config("filter widths must be non-empty and at least 1".into()));
        }
        Ok(())
    }

    pub fn max_width(&self) -> usize {
        self.filter_widths.iter().copied().max().unwrap_or(1)
    }
}

/// Lowercased whitespace tokens with edge punctuation stripped.
pub fn sentence_tokens(sentence: &str) -> Vec<String> {
    sentence
        .split_whitespace()
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
        .filter(|w| !w.is_empty())
        .collect()
}

pub const PAD: usize = 0;
pub const UNK: usize = 1;

/// Word indices; 0 is padding and 1 the unknown word.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocabulary {
    index: BTreeMap<String, usize>,
    words: Vec<String>,
}

impl Vocabulary {
    /// Sorted, so the indexing does not depend on corpus order.
    pub fn build<'a>(sentences: impl IntoIterator<Item = &'a str>) -> Self {
        let mut set: Vec<String> = sentences.into_iter().flat_map(sentence_tokens).collect();
        set.sort();
        set.dedup();
        Self::from_words(set)
    }

    fn from_words(words: Vec<String>) -> Self {
        let index = words.iter().enumerate().map(|(i, w)| (w.clone(), i + 2)).collect();
        Self { index, words }
    }

    /// Rows in the embedding table, padding and unknown included.
    pub fn size(&self) -> usize {
        self.words.len() + 2
    }

    pub fn id(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(UNK)
    }

    pub fn encode(&self, sentence: &str) -> Vec<usize> {
        sentence_tokens(sentence).iter().map(|w| self.id(w)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledCorpus {
    pub labels: LabelSet,
    pub examples: Vec<(String, usize)>,
}

#[derive(Deserialize)]
struct CorpusLine {
    text: String,
    label: String,
}

impl LabeledCorpus {
    /// One `{"text": ..., "label": ...}` object per line; blank lines skipped.
    pub fn from_ndjson(text: &str, labels: &LabelSet) -> Result<Self, ClassifyError> {
        let mut examples = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let err = |message: String| ClassifyError::Corpus { line: i + 1, message };
            let row: CorpusLine = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
            let label = labels.index_of(&row.label).ok_or_else(|| err(format!("unknown label {:?}", row.label)))?;
            examples.push((row.text, label));
        }
        Ok(Self { labels: labels.clone(), examples })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}

/// Trainable parameters. The padding row of the embedding table is never
/// read: padding positions contribute zero vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct CnnParams {
    pub embeddings: Tensor2D,
    /// Per width: `feature_maps × (width · embedding_dim)` filters and biases.
    pub filters: Vec<(Tensor2D, Vec<f64>)>,
    pub output: Tensor2D,
    pub output_bias: Vec<f64>,
}

impl CnnParams {
    pub fn zeros(cfg: &CnnConfig, vocab_size: usize, classes: usize) -> Self {
        let d = cfg.embedding_dim;
        Self {
            embeddings: Tensor2D::zeros(vocab_size, d),
            filters: cfg
                .filter_widths
                .iter()
                .map(|&w| (Tensor2D::zeros(cfg.feature_maps, w * d), vec![0.0; cfg.feature_maps]))
                .collect(),
            output: Tensor2D::zeros(classes, cfg.feature_maps * cfg.filter_widths.len()),
            output_bias: vec![0.0; classes],
        }
    }

    /// Uniform in ±0.1 from a seeded generator; biases start at zero.
    pub fn random(cfg: &CnnConfig, vocab_size: usize, classes: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let d = cfg.embedding_dim;
        let mut p = Self::zeros(cfg, vocab_size, classes);
        p.embeddings = Tensor2D::uniform(vocab_size, d, 0.1, &mut rng);
        p.embeddings.row_mut(PAD).fill(0.0);
        for (i, &w) in cfg.filter_widths.iter().enumerate() {
            p.filters[i].0 = Tensor2D::uniform(cfg.feature_maps, w * d, 0.1, &mut rng);
        }
        p.output = Tensor2D::uniform(classes, cfg.feature_maps * cfg.filter_widths.len(), 0.1, &mut rng);
        p
    }

    pub fn param_count(&self) -> usize {
        self.to_flat().len()
    }

    /// Embeddings, then each width's filters and biases, then the output layer.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = self.embeddings.data().to_vec();
        for (w, b) in &self.filters {
            out.extend_from_slice(w.data());
            out.extend_from_slice(b);
        }
        out.extend_from_slice(self.output.data());
        out.extend_from_slice(&self.output_bias);
        out
    }

    pub fn load_flat(&mut self, flat: &[f64]) -> Result<(), NnError> {
        let expected = self.param_count();
        if flat.len() != expected {
            return Err(NnError::DimensionMismatch { what: "cnn parameters", expected, got: flat.len() });
        }
        let mut rest = flat;
        let mut take = |dst: &mut [f64]| {
            let (head, tail) = rest.split_at(dst.len());
            dst.copy_from_slice(head);
            rest = tail;
        };
        take(self.embeddings.data_mut());
        for (w, b) in &mut self.filters {
            take(w.data_mut());
            take(b);
        }
        take(self.output.data_mut());
        take(&mut self.output_bias);
        Ok(())
    }
}

/// Token ids padded with [`PAD`] up to `min_len`.
fn pad_ids(ids: &[usize], min_len: usize) -> Vec<usize> {
    let mut out = ids.to_vec();
    out.resize(ids.len().max(min_len), PAD);
    out
}

/// Embedding matrix of a sentence, padded to at least the widest filter.
pub fn embed_sentence(sentence: &str, vocab: &Vocabulary, table: &Tensor2D, min_len: usize) -> Tensor2D {
    let ids = pad_ids(&vocab.encode(sentence), min_len);
    let d = table.cols();
    let mut m = Tensor2D::zeros(ids.len(), d);
    for (r, &id) in ids.iter().enumerate() {
        if id != PAD {
            m.row_mut(r).copy_from_slice(table.row(id));
        }
    }
    m
}

struct Pooled {
    /// Concatenated pooled features.
    features: Vec<f64>,
    /// Per width and feature map: winning position and its activation.
    argmax: Vec<Vec<(usize, f64)>>,
    logits: Vec<f64>,
}

fn window(ids: &[usize], table: &Tensor2D, start: usize, width: usize, buf: &mut Vec<f64>) {
    let d = table.cols();
    buf.clear();
    for &id in &ids[start..start + width] {
        if id == PAD {
            buf.extend(std::iter::repeat_n(0.0, d));
        } else {
            buf.extend_from_slice(table.row(id));
        }
    }
}

fn forward_ids(params: &CnnParams, cfg: &CnnConfig, ids: &[usize]) -> Pooled {
    let ids = pad_ids(ids, cfg.max_width());
    let mut features = Vec::with_capacity(cfg.feature_maps * cfg.filter_widths.len());
    let mut argmax = Vec::with_capacity(cfg.filter_widths.len());
    let mut buf = Vec::new();
    let mut z = vec![0.0; cfg.feature_maps];
    for (wi, &w) in cfg.filter_widths.iter().enumerate() {
        let (filt, bias) = &params.filters[wi];
        let mut best = vec![(0usize, f64::NEG_INFINITY); cfg.feature_maps];
        for start in 0..=ids.len() - w {
            window(&ids, &params.embeddings, start, w, &mut buf);
            z.copy_from_slice(bias);
            filt.matvec_acc(&buf, &mut z);
            for (f, zf) in z.iter().enumerate() {
                let h = zf.tanh();
                if h > best[f].1 {
                    best[f] = (start, h);
                }
            }
        }
        features.extend(best.iter().map(|b| b.1));
        argmax.push(best);
    }
    let mut logits = params.output_bias.clone();
    params.output.matvec_acc(&features, &mut logits);
    Pooled { features, argmax, logits }
}

/// Class probabilities for an embedded sentence.
///
/// Rows are taken as given; zero rows behave like padding.
pub fn cnn_forward(matrix: &Tensor2D, params: &CnnParams, cfg: &CnnConfig) -> Result<Vec<f64>, ClassifyError> {
    let d = cfg.embedding_dim;
    if matrix.cols() != d {
        return Err(NnError::DimensionMismatch { what: "embedding width", expected: d, got: matrix.cols() }.into());
    }
    if matrix.rows() < cfg.max_width() {
        return Err(ClassifyError::Config(format!(
            "sentence matrix has {} rows, fewer than the widest filter {}",
            matrix.rows(),
            cfg.max_width()
        )));
    }
    let mut features = Vec::new();
    let mut z = vec![0.0; cfg.feature_maps];
    for (wi, &w) in cfg.filter_widths.iter().enumerate() {
        let (filt, bias) = &params.filters[wi];
        let mut best = vec![f64::NEG_INFINITY; cfg.feature_maps];
        for start in 0..=matrix.rows() - w {
            let x = &matrix.data()[start * d..(start + w) * d];
            z.copy_from_slice(bias);
            filt.matvec_acc(x, &mut z);
            for (b, zf) in best.iter_mut().zip(&z) {
                *b = b.max(zf.tanh());
            }
        }
        features.extend(best);
    }
    let mut logits = params.output_bias.clone();
    params.output.matvec_acc(&features, &mut logits);
    Ok(softmax(&logits))
}

/// Adds `weight ·` the loss gradient for one example into `grad`; returns the loss.
fn backward_ids(params: &CnnParams, cfg: &CnnConfig, ids: &[usize], target: usize, weight: f64, grad: &mut CnnParams) -> f64 {
    let pooled = forward_ids(params, cfg, ids);
    let loss = softmax_cross_entropy(&pooled.logits, target);
    let mut dlogits = softmax(&pooled.logits);
    dlogits[target] -= 1.0;
    for v in &mut dlogits {
        *v *= weight;
    }
    let nf = pooled.features.len();
    let mut dfeat = vec![0.0; nf];
    for (k, dk) in dlogits.iter().enumerate() {
        grad.output_bias[k] += dk;
        let row = params.output.row(k);
        let grow = grad.output.row_mut(k);
        for j in 0..nf {
            grow[j] += dk * pooled.features[j];
            dfeat[j] += dk * row[j];
        }
    }
    let ids = pad_ids(ids, cfg.max_width());
    let d = cfg.embedding_dim;
    let mut buf = Vec::new();
    for (wi, &w) in cfg.filter_widths.iter().enumerate() {
        let (filt, _) = &params.filters[wi];
        for f in 0..cfg.feature_maps {
            let (start, h) = pooled.argmax[wi][f];
            let dz = dfeat[wi * cfg.feature_maps + f] * (1.0 - h * h);
            if dz == 0.0 {
                continue;
            }
            window(&ids, &params.embeddings, start, w, &mut buf);
            let (gfilt, gbias) = &mut grad.filters[wi];
            gbias[f] += dz;
            for (g, x) in gfilt.row_mut(f).iter_mut().zip(&buf) {
                *g += dz * x;
            }
            let frow = filt.row(f);
            for (k, &id) in ids[start..start + w].iter().enumerate() {
                if id == PAD {
                    continue;
                }
                let erow = grad.embeddings.row_mut(id);
                for c in 0..d {
                    erow[c] += dz * frow[k * d + c];
                }
            }
        }
    }
    loss
}

/// Distinct (sentence, label) pairs with their share of the corpus, in a
/// fixed order, so full-batch sums do not depend on corpus order.
fn canonical_batch(corpus: &LabeledCorpus, vocab: &Vocabulary) -> Vec<(Vec<usize>, usize, f64)> {
    let mut counts: BTreeMap<(Vec<usize>, usize), usize> = BTreeMap::new();
    for (text, label) in &corpus.examples {
        *counts.entry((vocab.encode(text), *label)).or_default() += 1;
    }
    let n = corpus.examples.len() as f64;
    counts.into_iter().map(|((ids, label), c)| (ids, label, c as f64 / n)).collect()
}

/// Mean cross-entropy and its gradient over a canonical batch.
fn batch_gradient(params: &CnnParams, cfg: &CnnConfig, batch: &[(Vec<usize>, usize, f64)]) -> (f64, CnnParams) {
    let mut grad = CnnParams::zeros(cfg, params.embeddings.rows(), params.output_bias.len());
    let mut loss = 0.0;
    for (ids, label, weight) in batch {
        loss += weight * backward_ids(params, cfg, ids, *label, *weight, &mut grad);
    }
    (loss, grad)
}

pub const DEFAULT_LEARNING_RATE: f64 = 0.5;
pub const DEFAULT_EPOCHS: usize = 300;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    /// Mean loss before each epoch's update.
    pub losses: Vec<f64>,
    pub final_loss: f64,
    pub train_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextCnn {
    pub labels: LabelSet,
    pub vocab: Vocabulary,
    pub config: CnnConfig,
    pub params: CnnParams,
}

impl TextCnn {
    pub fn new(labels: LabelSet, vocab: Vocabulary, config: CnnConfig, params: CnnParams) -> Self {
        Self { labels, vocab, config, params }
    }

    pub fn probabilities(&self, sentence: &str) -> Vec<f64> {
        softmax(&forward_ids(&self.params, &self.config, &self.vocab.encode(sentence)).logits)
    }

    /// Most probable label; ties go to the lower class index.
    pub fn classify(&self, sentence: &str) -> (String, Vec<f64>) {
        let probs = self.probabilities(sentence);
        let best = probs.iter().enumerate().fold(0, |b, (i, p)| if *p > probs[b] { i } else { b });
        (self.labels.names()[best].clone(), probs)
    }

    /// Mean cross-entropy on a corpus.
    pub fn loss(&self, corpus: &LabeledCorpus) -> f64 {
        batch_gradient(&self.params, &self.config, &canonical_batch(corpus, &self.vocab)).0
    }

    /// Analytic gradient of the mean loss, flattened like [`CnnParams::to_flat`].
    pub fn gradient(&self, corpus: &LabeledCorpus) -> Vec<f64> {
        batch_gradient(&self.params, &self.config, &canonical_batch(corpus, &self.vocab)).1.to_flat()
    }

    pub fn accuracy(&self, corpus: &LabeledCorpus) -> f64 {
        if corpus.is_empty() {
            return 0.0;
        }
        let right = corpus
            .examples
            .iter()
            .filter(|(t, l)| self.labels.index_of(&self.classify(t).0) == Some(*l))
            .count();
        right as f64 / corpus.len() as f64
    }

    pub fn to_document(&self) -> ModelDocument {
        let dims = BTreeMap::from([
            ("embedding_dim".to_string(), self.config.embedding_dim),
            ("feature_maps".to_string(), self.config.feature_maps),
            ("vocab_size".to_string(), self.vocab.size()),
            ("classes".to_string(), self.labels.len()),
        ]);
        let mut doc = ModelDocument::new(dims, self.params.to_flat());
        doc.meta.insert("kind".into(), "text-cnn".into());
        doc.meta.insert("labels".into(), serde_json::json!(self.labels.names()));
        doc.meta.insert("filter_widths".into(), serde_json::json!(self.config.filter_widths));
        doc.meta.insert("vocabulary".into(), serde_json::json!(self.vocab.words));
        doc.meta.insert("seed".into(), serde_json::json!(self.config.seed));
        doc
    }

    pub fn from_document(doc: &ModelDocument) -> Result<Self, ClassifyError> {
        let meta = |k: &str| doc.meta.get(k).ok_or_else(|| NnError::Format(format!("missing meta {k:?}")));
        let parse = |k: &str| -> Result<serde_json::Value, NnError> { Ok(meta(k)?.clone()) };
        if parse("kind")? != "text-cnn" {
            return Err(NnError::Format("not a text-cnn document".into()).into());
        }
        let labels: Vec<String> = serde_json::from_value(parse("labels")?).map_err(|e| NnError::Format(e.to_string()))?;
        let widths: Vec<usize> = serde_json::from_value(parse("filter_widths")?).map_err(|e| NnError::Format(e.to_string()))?;
        let words: Vec<String> = serde_json::from_value(parse("vocabulary")?).map_err(|e| NnError::Format(e.to_string()))?;
        let seed: u64 = serde_json::from_value(parse("seed")?).map_err(|e| NnError::Format(e.to_string()))?;
        let labels = LabelSet::new(labels)?;
        let config = CnnConfig {
            embedding_dim: doc.dim("embedding_dim")?,
            filter_widths: widths,
            feature_maps: doc.dim("feature_maps")?,
            seed,
        };
        config.validate()?;
        let vocab = Vocabulary::from_words(words);
        if vocab.size() != doc.dim("vocab_size")? || labels.len() != doc.dim("classes")? {
            return Err(NnError::Format("vocabulary or label count disagrees with dims".into()).into());
        }
        let mut params = CnnParams::zeros(&config, vocab.size(), labels.len());
        params.load_flat(&doc.weights)?;
        Ok(Self { labels, vocab, config, params })
    }
}

/// Full-batch gradient descent on mean cross-entropy, embeddings included.
///
/// Parameters start from `cfg.seed`; the updates themselves are
/// deterministic and independent of corpus order.
pub fn train_classifier(corpus: &LabeledCorpus, cfg: &CnnConfig, tc: &TrainConfig) -> Result<(TextCnn, TrainingReport), ClassifyError> {
    cfg.validate()?;
    tc.validate()?;
    for (i, name) in corpus.labels.names().iter().enumerate() {
        if !corpus.examples.iter().any(|(_, l)| *l == i) {
            return Err(ClassifyError::EmptyClass(name.clone()));
        }
    }
    let vocab = Vocabulary::build(corpus.examples.iter().map(|(t, _)| t.as_str()));
    let mut params = CnnParams::random(cfg, vocab.size(), corpus.labels.len());
    let batch = canonical_batch(corpus, &vocab);
    let mut losses = Vec::with_capacity(tc.epochs);
    for _ in 0..tc.epochs {
        let (loss, grad) = batch_gradient(&params, cfg, &batch);
        if !loss.is_finite() {
            return Err(NnError::NonFinite("training loss").into());
        }
        losses.push(loss);
        let mut flat = params.to_flat();
        for (p, g) in flat.iter_mut().zip(grad.to_flat()) {
            *p -= tc.learning_rate * g;
        }
        params.load_flat(&flat)?;
    }
    let model = TextCnn::new(corpus.labels.clone(), vocab, cfg.clone(), params);
    let final_loss = model.loss(corpus);
    let train_accuracy = model.accuracy(corpus);
    Ok((model, TrainingReport { losses, final_loss, train_accuracy }))
}
