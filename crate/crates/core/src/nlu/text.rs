//! Sentence splitting, tokenization and rule-based lemmatization.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// Splits on `.`, `!` and `?`, except a `.` between two digits.
///
/// Fragments are trimmed and empty ones dropped, so the leading dots left by
/// the speech recognizer disappear.
pub fn split_sentences(transcript: &str) -> Vec<String> {
    let chars: Vec<char> = transcript.chars().collect();
    let mut out = Vec::new();
    let mut current = String::new();
    for (i, &c) in chars.iter().enumerate() {
        let decimal_point = c == '.'
            && i > 0
            && chars[i - 1].is_ascii_digit()
            && chars.get(i + 1).is_some_and(char::is_ascii_digit);
        if matches!(c, '.' | '!' | '?') && !decimal_point {
            push_trimmed(&mut out, &current);
            current.clear();
        } else {
            current.push(c);
        }
    }
    push_trimmed(&mut out, &current);
    out
}

fn push_trimmed(out: &mut Vec<String>, s: &str) {
    let t = s.trim();
    if !t.is_empty() {
        out.push(t.to_string());
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    /// Lowercased surface form without edge punctuation.
    pub raw: String,
    pub lemma: String,
}

impl Token {
    pub fn is_number(&self) -> bool {
        is_number(&self.raw)
    }

    pub fn is(&self, word: &str) -> bool {
        self.raw == word || self.lemma == word
    }
}

pub fn is_number(s: &str) -> bool {
    !s.is_empty() && s.parse::<f64>().is_ok_and(f64::is_finite) && s.chars().all(|c| c.is_ascii_digit() || c == '.')
}

fn strip_edges(word: &str) -> &str {
    word.trim_matches(|c: char| matches!(c, ',' | ';' | ':' | '(' | ')' | '"' | '\'' | '[' | ']' | '!' | '?' | '.'))
}

/// Lowercased whitespace tokens with edge punctuation removed, each lemmatized.
pub fn tokenize(sentence: &str, rules: &LemmaRules) -> Vec<Token> {
    sentence
        .split_whitespace()
        .map(|w| strip_edges(w).to_lowercase())
        .filter(|w| !w.is_empty())
        .map(|raw| Token {
            lemma: rules.lemmatize(&raw),
            raw,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuffixRule {
    pub suffix: String,
    pub replacement: String,
    /// Minimum number of characters left before the replacement.
    pub min_stem: usize,
    /// Undo consonant doubling (`stopp` to `stop`) after stripping.
    pub undouble: bool,
    /// Word endings that block the rule, such as `ss` for `-s`.
    pub blocked_by: Vec<String>,
}

impl SuffixRule {
    fn apply(&self, token: &str) -> Option<String> {
        if self.blocked_by.iter().any(|b| token.ends_with(b.as_str())) {
            return None;
        }
        let stem = token.strip_suffix(self.suffix.as_str())?;
        if stem.chars().count() < self.min_stem {
            return None;
        }
        let mut stem = stem.to_string();
        if self.undouble {
            let tail: Vec<char> = stem.chars().rev().take(2).collect();
            if let [a, b] = tail[..] {
                if a == b && !"aeiouylsfz".contains(a) {
                    stem.pop();
                }
            }
        }
        stem.push_str(&self.replacement);
        Some(stem)
    }
}

/// Exception table consulted first, then the longest matching suffix rule.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LemmaRules {
    pub exceptions: BTreeMap<String, String>,
    pub rules: Vec<SuffixRule>,
}

impl Default for LemmaRules {
    fn default() -> Self {
        let rule = |suffix: &str, replacement: &str, min_stem, undouble, blocked_by: &[&str]| SuffixRule {
            suffix: suffix.into(),
            replacement: replacement.into(),
            min_stem,
            undouble,
            blocked_by: blocked_by.iter().map(|s| s.to_string()).collect(),
        };
        let exceptions = [
            ("diabetes", "diabetes"),
            ("ctas", "ctas"),
            ("lasix", "lasix"),
            ("does", "do"),
            ("taking", "take"),
            ("having", "have"),
            ("giving", "give"),
            ("morning", "morning"),
            ("evening", "evening"),
            ("nothing", "nothing"),
            ("something", "something"),
            ("during", "during"),
            ("was", "be"),
            ("is", "be"),
            ("are", "be"),
            ("were", "be"),
            ("been", "be"),
            ("feet", "foot"),
            ("teeth", "tooth"),
            ("men", "man"),
            ("women", "woman"),
            ("children", "child"),
        ]
        .into_iter()
        .map(|(a, b)| (a.to_string(), b.to_string()))
        .collect();
        Self {
            exceptions,
            rules: vec![
                rule("ies", "y", 2, false, &[]),
                rule("ing", "", 3, true, &[]),
                rule("ed", "", 3, true, &["eed"]),
                rule("s", "", 3, false, &["ss", "us", "is"]),
            ],
        }
    }
}

impl LemmaRules {
    /// Rewrites once; every rule strictly shortens its input.
    pub fn lemmatize(&self, token: &str) -> String {
        if let Some(e) = self.exceptions.get(token) {
            return e.clone();
        }
        let mut best: Option<&SuffixRule> = None;
        for r in &self.rules {
            if token.ends_with(r.suffix.as_str()) && best.is_none_or(|b| r.suffix.len() > b.suffix.len()) {
                best = Some(r);
            }
        }
        best.and_then(|r| r.apply(token)).unwrap_or_else(|| token.to_string())
    }
}

/// Lemmatizes with the default rule table.
pub fn lemmatize(token: &str) -> String {
    LemmaRules::default().lemmatize(token)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sentences() {
        assert_eq!(split_sentences("a. b."), vec!["a", "b"]);
        assert!(split_sentences("").is_empty());
        assert_eq!(
            split_sentences(".abdomen is rigid abdomen is distended."),
            vec!["abdomen is rigid abdomen is distended"]
        );
        assert_eq!(split_sentences("temp 37.5. ok?"), vec!["temp 37.5", "ok"]);
        assert_eq!(split_sentences(". . !"), Vec::<String>::new());
    }

    #[test]
    fn lemma_examples() {
        // hand-derived from the rule table
        let table = [
            ("respirations", "respiration"),
            ("complaining", "complain"),
            ("pain", "pain"),
            ("requesting", "request"),
            ("allergies", "allergy"),
            ("running", "run"),
            ("falling", "fall"),
            ("stopped", "stop"),
            ("needed", "need"),
            ("illness", "illness"),
            ("has", "has"),
            ("thing", "thing"),
            ("taking", "take"),
            ("finds", "find"),
            ("ctas", "ctas"),
        ];
        for (word, lemma) in table {
            assert_eq!(lemmatize(word), lemma, "{word}");
        }
    }

    #[test]
    fn tokens_strip_punctuation() {
        let toks = tokenize("Belleville, Ontario (home)", &LemmaRules::default());
        let raws: Vec<&str> = toks.iter().map(|t| t.raw.as_str()).collect();
        assert_eq!(raws, vec!["belleville", "ontario", "home"]);
        assert!(tokenize("37.5", &LemmaRules::default())[0].is_number());
        assert!(!tokenize("90%", &LemmaRules::default())[0].is_number());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn rules_never_lengthen_outside_exceptions(word in "[a-z]{1,12}") {
                let rules = LemmaRules::default();
                let lemma = rules.lemmatize(&word);
                if !rules.exceptions.contains_key(&word) {
                    prop_assert!(lemma.len() <= word.len());
                    if lemma != word {
                        prop_assert!(lemma.len() < word.len());
                    }
                }
            }

            #[test]
            fn fragments_are_trimmed_and_nonempty(text in "[a-z .!?0-9]{0,40}") {
                for s in split_sentences(&text) {
                    prop_assert!(!s.is_empty());
                    prop_assert_eq!(s.trim(), s.as_str());
                    prop_assert!(!s.contains('!') && !s.contains('?'));
                }
            }
        }
    }
}
