//! Extraction lexicons loaded from `surface<TAB>canonical` files.

use std::collections::BTreeMap;
use std::path::Path;

use super::text::Token;
use super::NluError;
use crate::decode::edit_distance;

/// Shortest token eligible for edit-distance matching. Shorter tokens are
/// within one edit of too many unrelated words.
pub const FUZZY_MIN_LEN: usize = 4;

/// Phrase lexicon mapping lowercase surface forms (one or more words) to
/// canonical names.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TermLexicon {
    surfaces: BTreeMap<String, String>,
    /// Surface forms split into words, longest first.
    phrases: Vec<(Vec<String>, String)>,
}

impl TermLexicon {
    pub fn from_pairs<I, A, B>(pairs: I) -> Result<Self, NluError>
    where
        I: IntoIterator<Item = (A, B)>,
        A: AsRef<str>,
        B: AsRef<str>,
    {
        let mut lex = Self::default();
        for (i, (surface, canonical)) in pairs.into_iter().enumerate() {
            lex.insert(surface.as_ref(), canonical.as_ref())
                .map_err(|message| NluError::Lexicon { file: "<pairs>".into(), line: i + 1, message })?;
        }
        Ok(lex)
    }

    /// Parses `surface<TAB>canonical` lines; `#` comments and blank lines are skipped.
    pub fn from_tsv(text: &str, source: &str) -> Result<Self, NluError> {
        let mut lex = Self::default();
        for (i, line) in text.lines().enumerate() {
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let err = |message: String| NluError::Lexicon { file: source.to_string(), line: i + 1, message };
            let (surface, canonical) = line.split_once('\t').ok_or_else(|| err("expected surface<TAB>canonical".into()))?;
            if canonical.contains('\t') {
                return Err(err("more than two columns".into()));
            }
            lex.insert(surface, canonical).map_err(err)?;
        }
        Ok(lex)
    }

    fn insert(&mut self, surface: &str, canonical: &str) -> Result<(), String> {
        let surface = surface.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
        let canonical = canonical.trim();
        if surface.is_empty() || canonical.is_empty() {
            return Err("empty surface or canonical form".into());
        }
        match self.surfaces.get(&surface) {
            Some(existing) if existing != canonical => {
                return Err(format!("surface {surface:?} maps to both {existing:?} and {canonical:?}"))
            }
            Some(_) => return Ok(()),
            None => {}
        }
        self.surfaces.insert(surface.clone(), canonical.to_string());
        self.phrases.push((surface.split(' ').map(str::to_string).collect(), canonical.to_string()));
        self.phrases.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then_with(|| a.0.cmp(&b.0)));
        Ok(())
    }

    pub fn get(&self, surface: &str) -> Option<&str> {
        self.surfaces.get(surface).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.surfaces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.surfaces.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.surfaces.iter().map(|(s, c)| (s.as_str(), c.as_str()))
    }

    pub fn has_canonical(&self, canonical: &str) -> bool {
        self.surfaces.values().any(|c| c == canonical)
    }

    /// Longest phrase starting at `tokens[at]`, matching each word by surface or lemma.
    pub fn match_at(&self, tokens: &[Token], at: usize) -> Option<(usize, &str)> {
        self.phrases.iter().find_map(|(words, canonical)| {
            let window = tokens.get(at..at + words.len())?;
            window
                .iter()
                .zip(words)
                .all(|(t, w)| t.raw == *w || t.lemma == *w)
                .then_some((words.len(), canonical.as_str()))
        })
    }

    /// Every non-overlapping longest match, left to right.
    pub fn scan<'a>(&'a self, tokens: &[Token]) -> Vec<(usize, &'a str)> {
        let mut out = Vec::new();
        let mut i = 0;
        while i < tokens.len() {
            match self.match_at(tokens, i) {
                Some((len, c)) => {
                    out.push((i, c));
                    i += len;
                }
                None => i += 1,
            }
        }
        out
    }
}

/// Medication surface forms to canonical drug names.
pub type MedLexicon = TermLexicon;

/// Exact lexicon hit, else the unique canonical name within one edit.
///
/// Edit-distance matching applies only to tokens of at least
/// [`FUZZY_MIN_LEN`] characters and only to single-word surface forms.
pub fn canonicalize_medication<'a>(token: &str, lex: &'a MedLexicon) -> Option<&'a str> {
    if let Some(c) = lex.get(token) {
        return Some(c);
    }
    if token.chars().count() < FUZZY_MIN_LEN {
        return None;
    }
    let mut found: Option<&str> = None;
    for (surface, canonical) in lex.iter() {
        if surface.contains(' ') || edit_distance(token, surface) > 1 {
            continue;
        }
        match found {
            Some(c) if c != canonical => return None,
            _ => found = Some(canonical),
        }
    }
    found
}

/// Spelled-out acronym names such as `A_S_A`. Their surface forms are
/// matched inside words in a medication list, where recognition glues
/// letters to neighbouring words ("rasa", "has a").
pub fn is_acronym_canonical(canonical: &str) -> bool {
    canonical.contains('_') && canonical.split('_').all(|p| p.len() == 1 && p.chars().all(|c| c.is_ascii_uppercase()))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lexicons {
    pub medications: MedLexicon,
    /// Past-medical-history conditions; entries whose canonical name is
    /// also a medication are listed after the conditions.
    pub conditions: TermLexicon,
    /// Chief complaints following "complaining of".
    pub complaints: TermLexicon,
    pub abdomen: TermLexicon,
    pub skin_color: TermLexicon,
    pub skin_condition: TermLexicon,
    /// Words dropped from the free-text medication comment.
    pub stopwords: Vec<String>,
}

pub const LEXICON_FILES: [&str; 7] = [
    "medications.tsv",
    "conditions.tsv",
    "complaints.tsv",
    "abdomen.tsv",
    "skin_color.tsv",
    "skin_condition.tsv",
    "stopwords.txt",
];

const BUNDLED: [&str; 7] = [
    include_str!("../../../../fixtures/lexicons/medications.tsv"),
    include_str!("../../../../fixtures/lexicons/conditions.tsv"),
    include_str!("../../../../fixtures/lexicons/complaints.tsv"),
    include_str!("../../../../fixtures/lexicons/abdomen.tsv"),
    include_str!("../../../../fixtures/lexicons/skin_color.tsv"),
    include_str!("../../../../fixtures/lexicons/skin_condition.tsv"),
    include_str!("../../../../fixtures/lexicons/stopwords.txt"),
];

impl Lexicons {
    /// The lexicons shipped with the crate.
    pub fn bundled() -> Self {
        Self::from_texts(&BUNDLED).expect("bundled lexicons are valid")
    }

    /// Reads every file in [`LEXICON_FILES`] from `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self, NluError> {
        let mut texts = Vec::with_capacity(LEXICON_FILES.len());
        for name in LEXICON_FILES {
            let path = dir.join(name);
            let text = std::fs::read_to_string(&path).map_err(|e| NluError::Io(format!("{}: {e}", path.display())))?;
            texts.push(text);
        }
        let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
        Self::from_texts(&refs)
    }

    fn from_texts(texts: &[&str]) -> Result<Self, NluError> {
        let tsv = |i: usize| TermLexicon::from_tsv(texts[i], LEXICON_FILES[i]);
        let stopwords = texts[6]
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(str::to_lowercase)
            .collect();
        Ok(Self {
            medications: tsv(0)?,
            conditions: tsv(1)?,
            complaints: tsv(2)?,
            abdomen: tsv(3)?,
            skin_color: tsv(4)?,
            skin_condition: tsv(5)?,
            stopwords,
        })
    }

    pub fn is_stopword(&self, word: &str) -> bool {
        self.stopwords.iter().any(|s| s == word)
    }
}

impl Default for Lexicons {
    fn default() -> Self {
        Self::bundled()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nlu::text::{tokenize, LemmaRules};

    #[test]
    fn medication_examples() {
        let lex = Lexicons::bundled().medications;
        assert_eq!(canonicalize_medication("lasix", &lex), Some("furosemide"));
        assert_eq!(canonicalize_medication("rasa", &lex), Some("A_S_A"));
        assert_eq!(canonicalize_medication("banana", &lex), None);
        assert_eq!(canonicalize_medication("insulin", &lex), Some("insulin"));
        assert_eq!(canonicalize_medication("insulen", &lex), Some("insulin"));
        assert_eq!(canonicalize_medication("is", &lex), None);
    }

    #[test]
    fn fuzzy_ties_between_drugs_give_nothing() {
        let lex = TermLexicon::from_pairs([("abcd", "one"), ("abce", "two")]).unwrap();
        assert_eq!(canonicalize_medication("abcf", &lex), None);
        let same = TermLexicon::from_pairs([("abcd", "one"), ("abce", "one")]).unwrap();
        assert_eq!(canonicalize_medication("abcf", &same), Some("one"));
    }

    #[test]
    fn tsv_parsing() {
        let lex = TermLexicon::from_tsv("# meds\nLasix\tfurosemide\n\nas a\tA_S_A\n", "m.tsv").unwrap();
        assert_eq!(lex.get("lasix"), Some("furosemide"));
        assert_eq!(lex.len(), 2);
        let err = TermLexicon::from_tsv("a\tb\na\tc\n", "m.tsv").unwrap_err();
        assert!(matches!(err, NluError::Lexicon { line: 2, .. }));
        assert!(TermLexicon::from_tsv("no tab here\n", "m.tsv").is_err());
    }

    #[test]
    fn phrases_match_longest_first() {
        let lex = TermLexicon::from_pairs([("chest pain", "chest_pain"), ("substernal chest pain", "substernal_chest_pain")]).unwrap();
        let toks = tokenize("substernal chest pain 0", &LemmaRules::default());
        assert_eq!(lex.match_at(&toks, 0), Some((3, "substernal_chest_pain")));
        assert_eq!(lex.match_at(&toks, 1), Some((2, "chest_pain")));
        assert_eq!(lex.scan(&toks), vec![(0, "substernal_chest_pain")]);
    }

    #[test]
    fn acronym_names() {
        assert!(is_acronym_canonical("A_S_A"));
        assert!(!is_acronym_canonical("substernal_chest_pain"));
        assert!(!is_acronym_canonical("IV"));
    }

    #[test]
    fn bundled_files_load_from_disk() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/lexicons");
        assert_eq!(Lexicons::load_dir(&dir).unwrap(), Lexicons::bundled());
    }
}
