//! Hazard-placard (ERG) and drug-identification-number (DIN) registries, and
//! matching of OCR text from medicine labels against the DIN registry.

use std::collections::BTreeMap;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decode::{keyword_score, rescore_text_protected, KeywordMetrics, Lexicon};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LookupError {
    #[error("malformed {what}: {input:?}")]
    Format { what: &'static str, input: String },
    #[error("registry: {0}")]
    Registry(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErgEntry {
    #[serde(rename = "placard")]
    pub placard_number: String,
    #[serde(rename = "guide")]
    pub guide_number: String,
    pub material: String,
    pub guidance: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DinEntry {
    pub din: String,
    pub drug: String,
    pub strength: String,
    pub package: String,
    pub keywords: Vec<String>,
}

#[derive(Deserialize)]
struct DinRow {
    din: String,
    drug: String,
    strength: String,
    package: String,
    keywords: String,
}

fn digits(s: &str, n: usize) -> bool {
    s.len() == n && s.bytes().all(|b| b.is_ascii_digit())
}

fn read_rows<T: for<'de> Deserialize<'de>>(csv_text: &str) -> Result<Vec<T>, LookupError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(csv_text.as_bytes());
    reader
        .deserialize()
        .enumerate()
        .map(|(i, r)| r.map_err(|e| LookupError::Registry(format!("row {}: {e}", i + 1))))
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ErgRegistry {
    entries: BTreeMap<String, ErgEntry>,
}

impl ErgRegistry {
    /// Columns `placard,guide,material,guidance`.
    pub fn from_csv(text: &str) -> Result<Self, LookupError> {
        let mut entries = BTreeMap::new();
        for e in read_rows::<ErgEntry>(text)? {
            if !digits(&e.placard_number, 4) {
                return Err(LookupError::Registry(format!("placard {:?} is not four digits", e.placard_number)));
            }
            if entries.contains_key(&e.placard_number) {
                return Err(LookupError::Registry(format!("duplicate placard {}", e.placard_number)));
            }
            entries.insert(e.placard_number.clone(), e);
        }
        Ok(Self { entries })
    }

    pub fn bundled() -> Self {
        Self::from_csv(include_str!("../../../fixtures/erg.csv")).expect("bundled ERG registry is valid")
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `Ok(None)` when the number is well formed but not listed.
    pub fn lookup(&self, placard_number: &str) -> Result<Option<&ErgEntry>, LookupError> {
        let n = placard_number.trim();
        if !digits(n, 4) {
            return Err(LookupError::Format { what: "placard number", input: placard_number.to_string() });
        }
        Ok(self.entries.get(n))
    }
}

pub fn erg_lookup<'a>(registry: &'a ErgRegistry, placard_number: &str) -> Result<Option<&'a ErgEntry>, LookupError> {
    registry.lookup(placard_number)
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DinRegistry {
    entries: BTreeMap<String, DinEntry>,
}

/// Strips an optional `DIN` prefix and checks for eight digits.
pub fn normalize_din(input: &str) -> Result<String, LookupError> {
    let t = input.trim();
    let bare = t
        .strip_prefix("DIN")
        .or_else(|| t.strip_prefix("din"))
        .map(|r| r.trim_start_matches([' ', ':', '#']))
        .unwrap_or(t);
    if digits(bare, 8) {
        Ok(bare.to_string())
    } else {
        Err(LookupError::Format { what: "DIN", input: input.to_string() })
    }
}

impl DinRegistry {
    /// Columns `din,drug,strength,package,keywords` with `|`-separated keywords.
    pub fn from_csv(text: &str) -> Result<Self, LookupError> {
        let mut entries = BTreeMap::new();
        for row in read_rows::<DinRow>(text)? {
            if !digits(&row.din, 8) {
                return Err(LookupError::Registry(format!("DIN {:?} is not eight digits", row.din)));
            }
            let keywords: Vec<String> =
                row.keywords.split('|').map(str::trim).filter(|k| !k.is_empty()).map(str::to_string).collect();
            if keywords.is_empty() {
                return Err(LookupError::Registry(format!("DIN {} has no keywords", row.din)));
            }
            if entries.contains_key(&row.din) {
                return Err(LookupError::Registry(format!("duplicate DIN {}", row.din)));
            }
            entries.insert(
                row.din.clone(),
                DinEntry { din: row.din, drug: row.drug, strength: row.strength, package: row.package, keywords },
            );
        }
        Ok(Self { entries })
    }

    pub fn bundled() -> Self {
        Self::from_csv(include_str!("../../../fixtures/din.csv")).expect("bundled DIN registry is valid")
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = &DinEntry> {
        self.entries.values()
    }

    pub fn lookup(&self, din: &str) -> Result<Option<&DinEntry>, LookupError> {
        Ok(self.entries.get(&normalize_din(din)?))
    }

    /// Word-like keyword tokens of every entry, the vocabulary for rescoring.
    ///
    /// Only tokens with at least four letters are kept: numbers, units and
    /// short abbreviations are within two edits of too many OCR fragments.
    pub fn keyword_lexicon(&self, max_edit: usize) -> Option<Lexicon> {
        let words = self
            .entries
            .values()
            .flat_map(|e| e.keywords.iter())
            .flat_map(|k| k.split_whitespace())
            .filter(|w| w.chars().filter(|c| c.is_alphabetic()).count() >= 4);
        Lexicon::new(words, max_edit).ok()
    }
}

pub fn din_lookup<'a>(registry: &'a DinRegistry, din: &str) -> Result<Option<&'a DinEntry>, LookupError> {
    registry.lookup(din)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcrMatch {
    pub entry: Option<DinEntry>,
    /// Keyword metrics of the chosen entry on the text as recognized.
    pub raw: KeywordMetrics,
    /// The same after lexicon rescoring.
    pub rescored: KeywordMetrics,
    pub rescored_text: String,
}

/// Edit distance allowed when rescoring OCR tokens against DIN keywords.
pub const OCR_MAX_EDIT: usize = 2;

static DIN_CANDIDATE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\b(\d{8})\b").expect("valid regex"));

/// Byte ranges of case-insensitive keyword occurrences.
fn keyword_spans(text: &str, keywords: &[&str]) -> Vec<(usize, usize)> {
    let lower = text.to_lowercase();
    if lower.len() != text.len() {
        // Lowercasing changed byte offsets; protect everything that matches at all.
        return if keywords.iter().any(|k| lower.contains(&k.to_lowercase())) { vec![(0, text.len())] } else { vec![] };
    }
    let mut spans = Vec::new();
    for k in keywords {
        let k = k.to_lowercase();
        if k.is_empty() {
            continue;
        }
        spans.extend(lower.match_indices(&k).map(|(i, m)| (i, i + m.len())));
    }
    spans
}

fn hits(text: &str, entry: &DinEntry) -> usize {
    keyword_score(text, &entry.keywords).map_or(0, |m| m.found_count())
}

/// Identifies the medicine in OCR text.
///
/// An eight-digit number that is a registered DIN decides the entry.
/// Otherwise the text is rescored against the keyword lexicon and the entry
/// with the most keyword hits wins, ties going to the lower DIN. Tokens that
/// already take part in an exact keyword match are never rewritten.
pub fn match_ocr_text(registry: &DinRegistry, ocr_text: &str) -> OcrMatch {
    let all_keywords: Vec<&str> = registry.entries().flat_map(|e| e.keywords.iter().map(String::as_str)).collect();
    let protected = keyword_spans(ocr_text, &all_keywords);
    let rescored_text = match registry.keyword_lexicon(OCR_MAX_EDIT) {
        Some(lex) => rescore_text_protected(ocr_text, &lex, &protected),
        None => ocr_text.to_string(),
    };

    let by_din = DIN_CANDIDATE
        .captures_iter(ocr_text)
        .find_map(|c| registry.entries.get(&c[1]));
    let entry = by_din.or_else(|| {
        registry
            .entries()
            .map(|e| (hits(&rescored_text, e), e))
            .filter(|(h, _)| *h > 0)
            .fold(None, |best: Option<(usize, &DinEntry)>, (h, e)| match best {
                Some((bh, _)) if bh >= h => best,
                _ => Some((h, e)),
            })
            .map(|(_, e)| e)
    });

    match entry {
        Some(e) => OcrMatch {
            raw: keyword_score(ocr_text, &e.keywords).expect("entries have keywords"),
            rescored: keyword_score(&rescored_text, &e.keywords).expect("entries have keywords"),
            entry: Some(e.clone()),
            rescored_text,
        },
        None => OcrMatch { entry: None, raw: KeywordMetrics::empty(), rescored: KeywordMetrics::empty(), rescored_text },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn erg_examples() {
        let erg = ErgRegistry::bundled();
        assert_eq!(erg.lookup("1203").unwrap().unwrap().guide_number, "128");
        assert_eq!(erg.lookup("0000").unwrap(), None);
        assert!(matches!(erg.lookup("12a3"), Err(LookupError::Format { .. })));
        assert!(erg.lookup("12030").is_err());
    }

    #[test]
    fn din_examples() {
        let din = DinRegistry::bundled();
        let e = din.lookup("DIN 00261998").unwrap().unwrap();
        assert_eq!(e.keywords, vec!["DIN 00261998", "8.4%", "Sodium", "Bicarbonate", "50 mEq", "50 ml"]);
        assert_eq!(din.lookup("00261998").unwrap(), Some(e));
        assert_eq!(din.lookup("00000000").unwrap(), None);
        assert!(matches!(din.lookup("123"), Err(LookupError::Format { .. })));
    }

    #[test]
    fn registry_validation() {
        assert!(DinRegistry::from_csv("din,drug,strength,package,keywords\n1234,x,y,z,a\n").is_err());
        assert!(DinRegistry::from_csv("din,drug,strength,package,keywords\n12345678,x,y,z,\n").is_err());
        assert!(ErgRegistry::from_csv("placard,guide,material,guidance\n1203,1,a,b\n1203,2,c,d\n").is_err());
    }

    #[test]
    fn label_text_recovers_misread_keyword() {
        let din = DinRegistry::bundled();
        let m = match_ocr_text(&din, include_str!("../../../fixtures/fig5_ocr_raw.txt"));
        assert_eq!(m.entry.as_ref().unwrap().din, "00261998");
        assert_eq!((m.raw.found_count(), m.raw.total()), (5, 6));
        assert_eq!(m.raw.missed, vec!["Bicarbonate"]);
        assert_eq!((m.rescored.found_count(), m.rescored.total()), (6, 6));
        assert!(m.rescored_text.contains("Sodium Bicarbonate"));
        assert!(m.rescored_text.contains("Injection USP"));
    }

    #[test]
    fn entry_chosen_by_keywords_without_a_din() {
        let m = match_ocr_text(&DinRegistry::bundled(), "Naloxon Hydrochloride 0.4 mg");
        assert_eq!(m.entry.unwrap().drug, "Naloxone Hydrochloride");
        assert!(m.rescored.found_count() > m.raw.found_count());
    }

    #[test]
    fn empty_text_matches_nothing() {
        let m = match_ocr_text(&DinRegistry::bundled(), "");
        assert!(m.entry.is_none());
        assert_eq!(m.raw.total(), 0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn lookups_are_total(s in "\\PC{0,12}") {
                let erg = ErgRegistry::bundled();
                let ok = erg.lookup(&s).is_ok();
                prop_assert_eq!(ok, digits(s.trim(), 4));
                let _ = DinRegistry::bundled().lookup(&s);
            }

            #[test]
            fn rescoring_never_loses_keywords(words in prop::collection::vec(
                prop::sample::select(vec!["Sodium", "Sodiumm", "Bicarbonete", "Bicarbonate", "50", "mEq", "ml", "8.4%",
                                          "DIN", "00261998", "Naloxon", "Dextrose", "Dextrosee", "xx", "\n"]), 0..16)) {
                let text = words.join(" ");
                let m = match_ocr_text(&DinRegistry::bundled(), &text);
                prop_assert!(m.raw.found_count() <= m.rescored.found_count());
            }
        }
    }
}
