//! Keyword lexicons, edit-distance token rescoring and keyword metrics.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::DecodeError;

/// Unit-cost Levenshtein distance over Unicode scalar values.
pub fn edit_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut row: Vec<usize> = (0..=b.len()).collect();
    for (i, ca) in a.iter().enumerate() {
        let mut diag = row[0];
        row[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let above = row[j + 1];
            row[j + 1] = (above + 1).min(row[j] + 1).min(diag + usize::from(ca != cb));
            diag = above;
        }
    }
    row[b.len()]
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Entry {
    canonical: String,
    key: String,
}

/// Canonical keyword strings, compared case-insensitively.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lexicon {
    entries: Vec<Entry>,
    max_edit: usize,
}

impl Lexicon {
    pub fn new<I, S>(entries: I, max_edit: usize) -> Result<Self, DecodeError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut out: Vec<Entry> = Vec::new();
        for e in entries {
            let canonical = e.as_ref().trim();
            if canonical.is_empty() {
                continue;
            }
            // rescoring replaces one token with one entry
            if canonical.contains(char::is_whitespace) {
                return Err(DecodeError::MultiTokenEntry(canonical.to_string()));
            }
            let key = canonical.to_lowercase();
            if !out.iter().any(|x| x.key == key) {
                out.push(Entry {
                    canonical: canonical.to_string(),
                    key,
                });
            }
        }
        if out.is_empty() {
            return Err(DecodeError::EmptyLexicon);
        }
        Ok(Self { entries: out, max_edit })
    }

    /// One single-token entry per line; blank lines and `#` comments are skipped.
    pub fn from_text(text: &str, max_edit: usize) -> Result<Self, DecodeError> {
        Self::new(
            text.lines().filter(|l| !l.trim_start().starts_with('#')),
            max_edit,
        )
    }

    pub fn max_edit(&self) -> usize {
        self.max_edit
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.canonical.as_str())
    }

    pub fn contains(&self, token: &str) -> bool {
        let key = token.to_lowercase();
        self.entries.iter().any(|e| e.key == key)
    }

    /// The unique nearest entry within `max_edit`, or `None` on a tie or a miss.
    pub fn nearest(&self, token: &str) -> Option<&str> {
        let key = token.to_lowercase();
        let mut best: Option<(usize, &Entry)> = None;
        let mut tied = false;
        for e in &self.entries {
            let d = edit_distance(&key, &e.key);
            match best {
                Some((bd, _)) if d > bd => {}
                Some((bd, _)) if d == bd => tied = true,
                _ => {
                    best = Some((d, e));
                    tied = false;
                }
            }
        }
        match best {
            Some((d, e)) if d <= self.max_edit && !tied => Some(e.canonical.as_str()),
            _ => None,
        }
    }
}

/// Replaces each token by its unique nearest lexicon entry within `max_edit`.
///
/// Tokens already in the lexicon (ignoring case) are returned unchanged, as
/// are tokens with no entry in range or with two or more equally near entries.
pub fn rescore_tokens<S: AsRef<str>>(tokens: &[S], lexicon: &Lexicon) -> Vec<String> {
    tokens
        .iter()
        .map(|t| {
            let t = t.as_ref();
            if lexicon.contains(t) {
                return t.to_string();
            }
            lexicon.nearest(t).map_or_else(|| t.to_string(), str::to_string)
        })
        .collect()
}

fn split_punct(token: &str) -> (&str, &str, &str) {
    let is_edge = |c: char| matches!(c, ',' | ';' | ':' | '(' | ')' | '"' | '\'' | '[' | ']');
    let start = token.len() - token.trim_start_matches(is_edge).len();
    let core_and_tail = &token[start..];
    let core = core_and_tail.trim_end_matches(is_edge);
    (&token[..start], core, &core_and_tail[core.len()..])
}

/// Rescores whitespace tokens line by line, keeping surrounding punctuation.
pub fn rescore_text(text: &str, lexicon: &Lexicon) -> String {
    rescore_text_protected(text, lexicon, &[])
}

/// Byte offsets of whitespace-separated tokens.
fn token_spans(text: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut start = None;
    for (i, c) in text.char_indices() {
        match (c.is_whitespace(), start) {
            (true, Some(s)) => {
                spans.push((s, i));
                start = None;
            }
            (false, None) => start = Some(i),
            _ => {}
        }
    }
    if let Some(s) = start {
        spans.push((s, text.len()));
    }
    spans
}

/// Like [`rescore_text`], but tokens overlapping any protected byte range of
/// `text` are copied through unchanged.
pub fn rescore_text_protected(text: &str, lexicon: &Lexicon, protected: &[(usize, usize)]) -> String {
    let mut out = String::with_capacity(text.len());
    let mut line_start = 0;
    for (n, raw) in text.split('\n').enumerate() {
        if n > 0 {
            out.push('\n');
        }
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        let words: Vec<String> = token_spans(line)
            .into_iter()
            .map(|(a, b)| {
                let tok = &line[a..b];
                let (abs_a, abs_b) = (line_start + a, line_start + b);
                if protected.iter().any(|&(pa, pb)| abs_a < pb && pa < abs_b) {
                    return tok.to_string();
                }
                let (lead, core, tail) = split_punct(tok);
                if core.is_empty() {
                    return tok.to_string();
                }
                let fixed = rescore_tokens(&[core], lexicon).pop().unwrap_or_default();
                format!("{lead}{fixed}{tail}")
            })
            .collect();
        out.push_str(&words.join(" "));
        line_start += raw.len() + 1;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeywordMetrics {
    pub keywords: Vec<String>,
    pub found: Vec<String>,
    pub missed: Vec<String>,
    /// Found share in percent, rounded to two decimals.
    pub percent: f64,
}

impl KeywordMetrics {
    pub fn found_count(&self) -> usize {
        self.found.len()
    }

    pub fn total(&self) -> usize {
        self.keywords.len()
    }

    pub fn empty() -> Self {
        Self {
            keywords: Vec::new(),
            found: Vec::new(),
            missed: Vec::new(),
            percent: 0.0,
        }
    }
}

fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

fn py_list(items: &[String]) -> String {
    let quoted: Vec<String> = items.iter().map(|s| format!("'{s}'")).collect();
    format!("[{}]", quoted.join(", "))
}

impl fmt::Display for KeywordMetrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let missed_pct = if self.keywords.is_empty() {
            0.0
        } else {
            round2(100.0 * self.missed.len() as f64 / self.keywords.len() as f64)
        };
        writeln!(f, "Searching for keywords: {}", py_list(&self.keywords))?;
        writeln!(f, "{}/{} correct keywords: {:.2} %", self.found.len(), self.keywords.len(), self.percent)?;
        writeln!(f, "{} missed keywords: {:.2} %", self.missed.len(), missed_pct)?;
        writeln!(f, "Correctly identified keywords: {}", py_list(&self.found))?;
        write!(f, "Missed keywords: {}", py_list(&self.missed))
    }
}

/// Case-insensitive containment of each keyword in `text`.
pub fn keyword_score<S: AsRef<str>>(text: &str, keywords: &[S]) -> Result<KeywordMetrics, DecodeError> {
    if keywords.is_empty() {
        return Err(DecodeError::NoKeywords);
    }
    let haystack = text.to_lowercase();
    let mut metrics = KeywordMetrics::empty();
    for k in keywords {
        let k = k.as_ref().to_string();
        if haystack.contains(&k.to_lowercase()) {
            metrics.found.push(k.clone());
        } else {
            metrics.missed.push(k.clone());
        }
        metrics.keywords.push(k);
    }
    metrics.percent = round2(100.0 * metrics.found.len() as f64 / metrics.keywords.len() as f64);
    Ok(metrics)
}
