//! Word n-gram language model with add-k smoothing.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::DecodeError;

pub const LM_FORMAT: &str = "patchline-lm/1";
pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";

/// Add-k smoothed n-gram model.
///
/// `P(w | h) = (c(h w) + k) / (c(h) + k·V)` where `V` counts the training
/// words plus the end marker. When the full context was never observed the
/// estimate falls back to the next shorter context, down to unigrams, so
/// every context still yields a proper distribution over the vocabulary.
/// Words outside the vocabulary get the mass of an unseen word.
#[derive(Debug, Clone, PartialEq)]
pub struct NgramLm {
    order: usize,
    k: f64,
    counts: BTreeMap<Vec<String>, u64>,
    context_counts: HashMap<Vec<String>, u64>,
    vocab: BTreeSet<String>,
}

#[derive(Serialize, Deserialize)]
struct LmDocument {
    format: String,
    n: usize,
    k: f64,
    counts: BTreeMap<String, u64>,
}

/// Lowercased whitespace tokens.
pub fn lm_tokens(sentence: &str) -> Vec<String> {
    sentence.split_whitespace().map(str::to_lowercase).collect()
}

impl NgramLm {
    fn from_counts(order: usize, k: f64, counts: BTreeMap<Vec<String>, u64>) -> Result<Self, DecodeError> {
        if order == 0 {
            return Err(DecodeError::InvalidLm("order must be at least 1".into()));
        }
        if !(k >= 0.0 && k.is_finite()) {
            return Err(DecodeError::InvalidLm(format!("smoothing constant must be >= 0, got {k}")));
        }
        let mut context_counts: HashMap<Vec<String>, u64> = HashMap::new();
        let mut vocab = BTreeSet::new();
        for (gram, &c) in &counts {
            if gram.is_empty() || gram.len() > order {
                return Err(DecodeError::InvalidLm(format!("n-gram of length {} in order-{order} model", gram.len())));
            }
            let (last, context) = gram.split_last().expect("non-empty");
            if last == BOS {
                return Err(DecodeError::InvalidLm("begin marker cannot be predicted".into()));
            }
            if gram.len() == 1 {
                vocab.insert(last.clone());
            }
            let entry = context_counts.entry(context.to_vec()).or_default();
            *entry = entry
                .checked_add(c)
                .ok_or_else(|| DecodeError::InvalidLm("count overflow".into()))?;
        }
        if vocab.is_empty() {
            return Err(DecodeError::InvalidLm("no unigram counts".into()));
        }
        Ok(Self {
            order,
            k,
            counts,
            context_counts,
            vocab,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn smoothing(&self) -> f64 {
        self.k
    }

    /// Training words plus the end marker.
    pub fn vocabulary(&self) -> &BTreeSet<String> {
        &self.vocab
    }

    fn count(&self, gram: &[String]) -> u64 {
        self.counts.get(gram).copied().unwrap_or(0)
    }

    /// `P(word | history)`; only the last `n - 1` history tokens matter.
    /// The history should already include begin markers where relevant.
    pub fn prob(&self, history: &[String], word: &str) -> f64 {
        let vocab_size = self.vocab.len() as f64;
        let keep = history.len().min(self.order - 1);
        let mut context = &history[history.len() - keep..];
        loop {
            let c_ctx = self.context_counts.get(context).copied().unwrap_or(0);
            if c_ctx > 0 || context.is_empty() {
                let mut gram = context.to_vec();
                gram.push(word.to_string());
                let c = self.count(&gram) as f64;
                let denom = c_ctx as f64 + self.k * vocab_size;
                return if denom > 0.0 { (c + self.k) / denom } else { 0.0 };
            }
            context = &context[1..];
        }
    }

    fn padded(&self, tokens: &[String]) -> Vec<String> {
        let mut out = vec![BOS.to_string(); self.order - 1];
        out.extend(tokens.iter().cloned());
        out
    }

    /// Natural-log probability of the token sequence followed by the end marker.
    pub fn log_prob(&self, tokens: &[String]) -> f64 {
        let padded = self.padded(tokens);
        let start = self.order - 1;
        let mut total = 0.0;
        for i in start..padded.len() {
            total += self.prob(&padded[..i], &padded[i]).ln();
        }
        total + self.prob(&padded, EOS).ln()
    }

    /// Log probability of the words only, without the end marker.
    pub fn log_prob_prefix(&self, tokens: &[String]) -> f64 {
        let padded = self.padded(tokens);
        (self.order - 1..padded.len())
            .map(|i| self.prob(&padded[..i], &padded[i]).ln())
            .sum()
    }

    pub fn perplexity(&self, sentences: &[Vec<String>]) -> f64 {
        let mut log_sum = 0.0;
        let mut n = 0usize;
        for s in sentences {
            log_sum += self.log_prob(s);
            n += s.len() + 1;
        }
        (-log_sum / n.max(1) as f64).exp()
    }

    pub fn to_json(&self) -> String {
        let doc = LmDocument {
            format: LM_FORMAT.to_string(),
            n: self.order,
            k: self.k,
            counts: self.counts.iter().map(|(g, c)| (g.join(" "), *c)).collect(),
        };
        serde_json::to_string_pretty(&doc).expect("lm documents always serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, DecodeError> {
        let doc: LmDocument = serde_json::from_str(text).map_err(|e| DecodeError::InvalidLm(e.to_string()))?;
        if doc.format != LM_FORMAT {
            return Err(DecodeError::InvalidLm(format!("unsupported format {:?}", doc.format)));
        }
        let counts = doc
            .counts
            .into_iter()
            .map(|(k, c)| (k.split(' ').map(str::to_string).collect::<Vec<_>>(), c))
            .collect::<BTreeMap<_, _>>();
        if counts.keys().any(|g| g.iter().any(String::is_empty)) {
            return Err(DecodeError::InvalidLm("empty token in n-gram key".into()));
        }
        Self::from_counts(doc.n, doc.k, counts)
    }
}

/// Counts every n-gram of order 1..=n over `<s>`-padded, `</s>`-terminated sentences.
pub fn train_lm<S: AsRef<str>>(corpus: &[S], n: usize, k: f64) -> Result<NgramLm, DecodeError> {
    if corpus.is_empty() {
        return Err(DecodeError::EmptyCorpus);
    }
    if n == 0 {
        return Err(DecodeError::InvalidLm("order must be at least 1".into()));
    }
    let mut counts: BTreeMap<Vec<String>, u64> = BTreeMap::new();
    for sentence in corpus {
        let mut padded = vec![BOS.to_string(); n - 1];
        padded.extend(lm_tokens(sentence.as_ref()));
        padded.push(EOS.to_string());
        for i in n - 1..padded.len() {
            for m in 1..=n {
                *counts.entry(padded[i + 1 - m..=i].to_vec()).or_default() += 1;
            }
        }
    }
    NgramLm::from_counts(n, k, counts)
}
