//! Pattern rules that turn a transcript into patch-form values.

use std::sync::LazyLock;

use regex::Regex;

use super::form::{Field, PatchForm};
use super::lexicon::{canonicalize_medication, is_acronym_canonical, Lexicons, MedLexicon};
use super::text::{split_sentences, tokenize, LemmaRules, Token};

const NITROGLYCERIN: &str = "nitroglycerin";

static BP: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"\b(?:bp|blood pressure)\s+(?:(?:is|was)\s+)?(\d{1,3})\s+over\s+(\d{1,3})\b").expect("valid regex")
});

/// Matches "(bp|blood pressure) [is|was] N over M".
pub fn parse_blood_pressure(text: &str) -> Option<(u32, u32)> {
    let lower = text.to_lowercase();
    let caps = BP.captures(&lower)?;
    Some((caps[1].parse().ok()?, caps[2].parse().ok()?))
}

fn is_integer(t: &Token) -> bool {
    !t.raw.is_empty() && t.raw.chars().all(|c| c.is_ascii_digit())
}

fn small_int(t: Option<&Token>, lo: u32, hi: u32) -> Option<&str> {
    let t = t.filter(|t| is_integer(t))?;
    let v: u32 = t.raw.parse().ok()?;
    (lo..=hi).contains(&v).then_some(t.raw.as_str())
}

fn push_unique(list: &mut Vec<String>, v: &str) {
    if !list.iter().any(|x| x == v) {
        list.push(v.to_string());
    }
}

fn joined(tokens: &[Token]) -> String {
    tokens.iter().map(|t| t.raw.as_str()).collect::<Vec<_>>().join(" ")
}

struct Sentence<'a> {
    text: &'a str,
    tokens: Vec<Token>,
}

impl Sentence<'_> {
    fn at(&self, i: usize) -> Option<&Token> {
        self.tokens.get(i)
    }

    fn positions(&self, pred: impl Fn(&Token) -> bool) -> Vec<usize> {
        self.tokens.iter().enumerate().filter(|(_, t)| pred(t)).map(|(i, _)| i).collect()
    }

    fn skip_copula(&self, i: usize) -> usize {
        match self.at(i) {
            Some(t) if t.lemma == "be" || t.raw == "of" => i + 1,
            _ => i,
        }
    }
}

fn age_gender(s: &Sentence, form: &mut PatchForm) {
    for i in s.positions(is_integer) {
        let (Some(year), Some(old)) = (s.at(i + 1), s.at(i + 2)) else { continue };
        if year.lemma != "year" || old.raw != "old" {
            continue;
        }
        form.fill(Field::Age, s.tokens[i].raw.clone());
        match s.at(i + 3).map(|t| t.raw.as_str()) {
            Some("male" | "man" | "boy") => form.fill(Field::Gender, "M"),
            Some("female" | "woman" | "girl") => form.fill(Field::Gender, "F"),
            _ => false,
        };
        return;
    }
}

fn pain(s: &Sentence, form: &mut PatchForm) {
    for i in s.positions(|t| t.lemma == "pain") {
        if let Some(v) = small_int(s.at(s.skip_copula(i + 1)), 0, 10) {
            form.fill(Field::Pain, v);
            return;
        }
    }
}

fn ctas(s: &Sentence, form: &mut PatchForm) {
    for i in s.positions(|t| t.raw == "ctas") {
        let mut j = i + 1;
        if s.at(j).is_some_and(|t| matches!(t.raw.as_str(), "assessment" | "level" | "score")) {
            j += 1;
        }
        j = s.skip_copula(j);
        if let Some(v) = small_int(s.at(j), 1, 5) {
            form.fill(Field::Ctas, v);
            return;
        }
    }
}

fn vitals(s: &Sentence, form: &mut PatchForm) {
    for (i, t) in s.tokens.iter().enumerate() {
        let (field, j) = match t.raw.as_str() {
            "pulse" => (Field::Pulse, i + 1),
            "heart" if s.at(i + 1).is_some_and(|n| n.raw == "rate") => (Field::Pulse, i + 2),
            "temperature" | "temp" => (Field::Temperature, i + 1),
            _ => continue,
        };
        let j = s.skip_copula(j);
        if let Some(v) = s.at(j).filter(|v| v.is_number()) {
            if field == Field::Pulse && !is_integer(v) {
                continue;
            }
            form.fill(field, v.raw.clone());
        }
    }
}

fn blood_pressure(s: &Sentence, form: &mut PatchForm) {
    if form.contains(Field::Bp) {
        return;
    }
    if let Some((sys, dia)) = parse_blood_pressure(s.text) {
        form.set(Field::Bp, format!("{sys} / {dia}"));
        form.set(Field::Systolic, sys.to_string());
        form.set(Field::Diastolic, dia.to_string());
    }
}

fn pupils(s: &Sentence, form: &mut PatchForm) {
    for i in s.positions(|t| t.lemma == "pupil") {
        let j = s.skip_copula(i + 1);
        let Some(size) = small_int(s.at(j), 1, 9) else { continue };
        form.fill(Field::PupilLeft, size);
        form.fill(Field::PupilRight, size);
        let reactive = s.tokens[j + 1..].iter().take(2).any(|t| t.raw == "reactive");
        if reactive {
            form.fill(Field::PupilReactiveLeft, "1");
            form.fill(Field::PupilReactiveRight, "1");
        }
        return;
    }
}

fn allergies(s: &Sentence, lex: &Lexicons, form: &mut PatchForm) {
    if s.tokens.iter().any(|t| t.raw == "nka") {
        form.fill(Field::Allergies, "NKA");
        return;
    }
    for i in s.positions(|t| t.lemma == "allergy") {
        let negated = s.tokens[i.saturating_sub(2)..i].iter().any(|t| t.raw == "no");
        if negated {
            form.fill(Field::Allergies, "NKA");
            return;
        }
        let mut found = Vec::new();
        for t in &s.tokens[i + 1..] {
            if let Some(c) = canonicalize_medication(&t.raw, &lex.medications) {
                push_unique(&mut found, c);
            }
        }
        if !found.is_empty() {
            form.fill(Field::Allergies, found.join(", "));
            return;
        }
    }
}

fn abdomen(s: &Sentence, lex: &Lexicons, form: &mut PatchForm) {
    let mut found = Vec::new();
    for i in s.positions(|t| t.lemma == "abdomen") {
        let j = s.skip_copula(i + 1);
        if let Some((_, c)) = lex.abdomen.match_at(&s.tokens, j) {
            push_unique(&mut found, c);
        }
    }
    if !found.is_empty() {
        form.fill(Field::Abdomen, found.join(", "));
    }
}

fn skin(s: &Sentence, lex: &Lexicons, form: &mut PatchForm) {
    if let Some(i) = s.positions(|t| t.lemma == "skin").first().copied() {
        let rest = &s.tokens[i + 1..];
        let colors: Vec<String> = lex.skin_color.scan(rest).into_iter().fold(Vec::new(), |mut acc, (_, c)| {
            push_unique(&mut acc, c);
            acc
        });
        let conditions: Vec<String> = lex.skin_condition.scan(rest).into_iter().fold(Vec::new(), |mut acc, (_, c)| {
            push_unique(&mut acc, c);
            acc
        });
        if !colors.is_empty() {
            form.fill(Field::SkinColor, colors.join(", "));
        }
        if !conditions.is_empty() {
            form.fill(Field::SkinCondition, conditions.join(", "));
        }
    }
    if lex.skin_color.scan(&s.tokens).iter().any(|(_, c)| *c == "pale") {
        form.fill(Field::Pale, "1");
    }
    if lex.skin_condition.scan(&s.tokens).iter().any(|(_, c)| *c == "sweaty") {
        form.fill(Field::Sweaty, "1");
    }
}

fn physical_exam(s: &Sentence, form: &mut PatchForm) {
    for i in s.positions(|t| t.raw == "physical") {
        if !s.at(i + 1).is_some_and(|t| matches!(t.lemma.as_str(), "exam" | "examination")) {
            continue;
        }
        let mut j = i + 2;
        if s.at(j).is_some_and(|t| matches!(t.lemma.as_str(), "find" | "show" | "reveal")) {
            j += 1;
        }
        let rest = joined(&s.tokens[j.min(s.tokens.len())..]);
        if !rest.is_empty() {
            form.fill(Field::PhysicalExam, rest);
            return;
        }
    }
}

fn medication_name(tokens: &[Token], at: usize, lex: &MedLexicon) -> Option<String> {
    if let Some((_, c)) = lex.match_at(tokens, at) {
        return Some(c.to_string());
    }
    let t = tokens.get(at)?;
    Some(canonicalize_medication(&t.raw, lex).map_or_else(|| t.raw.clone(), str::to_string))
}

fn treatment(s: &Sentence, lex: &Lexicons, form: &mut PatchForm) {
    for i in s.positions(|t| t.lemma == "treatment") {
        if i == 0 || s.tokens[i - 1].lemma != "request" {
            continue;
        }
        let mut j = i + 1;
        if s.at(j).is_some_and(|t| matches!(t.raw.as_str(), "of" | "with")) {
            j += 1;
        }
        let additional = s.at(j).is_some_and(|t| t.raw == "additional");
        if additional {
            j += 1;
        }
        if let Some(name) = medication_name(&s.tokens, j, &lex.medications) {
            let value = if additional { format!("additional, {name}") } else { name };
            form.fill(Field::Treatment, value);
            return;
        }
    }
}

/// Chief complaint or "history of ...", whichever comes first in the sentence.
fn history(s: &Sentence, lex: &Lexicons, form: &mut PatchForm) {
    let follows_of = |i: usize| s.at(i + 1).is_some_and(|t| t.raw == "of");
    for (i, t) in s.tokens.iter().enumerate() {
        if t.lemma == "complain" && follows_of(i) {
            if let Some((_, c)) = lex.complaints.match_at(&s.tokens, i + 2) {
                form.fill(Field::History, c);
                return;
            }
        }
        if t.lemma == "history" && follows_of(i) {
            let rest: Vec<Token> = s.tokens[i + 2..].iter().take_while(|t| !t.is_number()).cloned().collect();
            if !rest.is_empty() {
                form.fill(Field::History, joined(&rest));
                return;
            }
        }
    }
}

fn past_medical_history(s: &Sentence, lex: &Lexicons, form: &mut PatchForm) {
    if !s.tokens.iter().any(|t| t.lemma == "history" || t.lemma == "medication") {
        return;
    }
    let mut conditions = Vec::new();
    let mut drugs = Vec::new();
    for (_, c) in lex.conditions.scan(&s.tokens) {
        if lex.medications.has_canonical(c) {
            push_unique(&mut drugs, c);
        } else {
            push_unique(&mut conditions, c);
        }
    }
    if drugs.iter().any(|d| d == NITROGLYCERIN) {
        form.fill(Field::NtgPrior, "1");
    }
    conditions.extend(drugs);
    if !conditions.is_empty() {
        form.fill(Field::PastMedicalHistory, conditions.join(", "));
    }
}

enum Piece<'a> {
    Text(&'a str),
    Drug(&'a str),
}

/// Cuts acronym surface forms out of a medication list, even when glued to
/// the end of a longer word ("rasa" leaves "r").
fn splice_acronyms<'a>(segment: &'a str, lex: &'a MedLexicon) -> Vec<Piece<'a>> {
    let forms: Vec<(&str, &str)> = lex.iter().filter(|(_, c)| is_acronym_canonical(c)).collect();
    let mut out = Vec::new();
    let mut rest = segment;
    loop {
        let mut hit: Option<(usize, usize, &str)> = None;
        for (surface, canonical) in &forms {
            for (p, _) in rest.match_indices(surface) {
                let end = p + surface.len();
                let at_boundary = end == rest.len() || rest[end..].starts_with(' ');
                if !at_boundary {
                    continue;
                }
                let better = match hit {
                    None => true,
                    Some((hp, hl, _)) => p < hp || (p == hp && surface.len() > hl),
                };
                if better {
                    hit = Some((p, surface.len(), canonical));
                }
                break;
            }
        }
        match hit {
            Some((p, len, canonical)) => {
                out.push(Piece::Text(&rest[..p]));
                out.push(Piece::Drug(canonical));
                rest = &rest[p + len..];
            }
            None => {
                out.push(Piece::Text(rest));
                return out;
            }
        }
    }
}

fn medications(s: &Sentence, lex: &Lexicons, form: &mut PatchForm) {
    let Some(i) = s.positions(|t| t.lemma == "medication").first().copied() else { return };
    let segment = joined(&s.tokens[i + 1..]);
    let mut drugs = Vec::new();
    let mut residue: Vec<&str> = Vec::new();
    let mut ntg = false;
    for piece in splice_acronyms(&segment, &lex.medications) {
        match piece {
            Piece::Drug(c) => push_unique(&mut drugs, c),
            Piece::Text(text) => {
                for word in text.split_whitespace() {
                    if super::text::is_number(word) || lex.is_stopword(word) {
                        continue;
                    }
                    match canonicalize_medication(word, &lex.medications) {
                        Some(NITROGLYCERIN) => ntg = true,
                        Some(c) => push_unique(&mut drugs, c),
                        None => residue.push(word),
                    }
                }
            }
        }
    }
    if ntg {
        form.fill(Field::NtgPrior, "1");
    }
    if !drugs.is_empty() {
        form.fill(Field::Medications, drugs.join(", "));
    }
    if !residue.is_empty() {
        form.fill(Field::MedicationsComment, residue.join(" "));
    }
}

/// Chest-pain patients on a home medication list are presumed to be on
/// acetylsalicylic acid; it is listed first when recognition missed it.
fn implicit_asa(sentences: &[Sentence], lex: &Lexicons, form: &mut PatchForm) {
    let Some(asa) = lex.medications.get("asa") else { return };
    let Some(meds) = form.get(Field::Medications) else { return };
    if meds.split(", ").any(|m| m == asa) {
        return;
    }
    let chest_pain = sentences
        .iter()
        .any(|s| lex.complaints.scan(&s.tokens).iter().any(|(_, c)| c.contains("chest_pain")));
    if chest_pain {
        let value = format!("{asa}, {meds}");
        form.set(Field::Medications, value);
    }
}

/// Applies every rule to each sentence; earlier sentences keep their values.
pub fn extract_with(transcript: &str, lex: &Lexicons, rules: &LemmaRules) -> PatchForm {
    let texts = split_sentences(transcript);
    let sentences: Vec<Sentence> = texts
        .iter()
        .map(|t| Sentence {
            text: t,
            tokens: tokenize(t, rules),
        })
        .collect();
    let mut form = PatchForm::new();
    for s in &sentences {
        let mut local = PatchForm::new();
        age_gender(s, &mut local);
        pain(s, &mut local);
        ctas(s, &mut local);
        vitals(s, &mut local);
        blood_pressure(s, &mut local);
        pupils(s, &mut local);
        allergies(s, lex, &mut local);
        abdomen(s, lex, &mut local);
        skin(s, lex, &mut local);
        physical_exam(s, &mut local);
        treatment(s, lex, &mut local);
        history(s, lex, &mut local);
        past_medical_history(s, lex, &mut local);
        medications(s, lex, &mut local);
        merge_sentence(&mut form, &local);
    }
    implicit_asa(&sentences, lex, &mut form);
    form.set(Field::Transcript, transcript);
    form
}

/// First-wins merge that keeps the blood-pressure triple together.
fn merge_sentence(form: &mut PatchForm, local: &PatchForm) {
    let has_bp = form.contains(Field::Bp);
    for (f, v) in local.iter() {
        if has_bp && matches!(f, Field::Bp | Field::Systolic | Field::Diastolic) {
            continue;
        }
        form.fill(f, v);
    }
}

/// Extracts with the default lemma rules.
pub fn extract_fields(transcript: &str, lex: &Lexicons) -> PatchForm {
    extract_with(transcript, lex, &LemmaRules::default())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn extract(text: &str) -> PatchForm {
        let mut f = extract_fields(text, &Lexicons::bundled());
        f.remove(Field::Transcript);
        f
    }

    fn form(pairs: &[(Field, &str)]) -> PatchForm {
        pairs.iter().map(|(f, v)| (*f, v.to_string())).collect()
    }

    #[test]
    fn blood_pressure_examples() {
        assert_eq!(parse_blood_pressure("blood pressure is 120 over 80"), Some((120, 80)));
        assert_eq!(parse_blood_pressure("bp is 154 over 90"), Some((154, 90)));
        assert_eq!(parse_blood_pressure("blood pressure 110 over 70"), Some((110, 70)));
        assert_eq!(parse_blood_pressure("bp is high"), None);
        assert_eq!(parse_blood_pressure("bp is 1540 over 90"), None);
    }

    #[test]
    fn pain_score_after_copula() {
        assert_eq!(extract("pain is 7 out of 10").get(Field::Pain), Some("7"));
        assert_eq!(extract("chest pain 0 shortness of breath").get(Field::Pain), Some("0"));
        assert_eq!(extract("pain is severe").get(Field::Pain), None);
    }

    #[test]
    fn treatment_request() {
        assert_eq!(
            extract(".requesting treatment of additional nitroglycerin"),
            form(&[(Field::Treatment, "additional, nitroglycerin")])
        );
        assert_eq!(
            extract(".paramedic request treatment of additional iv of saline"),
            form(&[(Field::Treatment, "additional, IV")])
        );
    }

    #[test]
    fn allergy_skin_history() {
        assert_eq!(
            extract(".allergies penicillin skin condition clammy history of mental illness "),
            form(&[
                (Field::Allergies, "Penicillin"),
                (Field::SkinCondition, "clammy"),
                (Field::History, "mental illness"),
            ])
        );
        assert_eq!(extract("patient has no allergies").get(Field::Allergies), Some("NKA"));
    }

    #[test]
    fn medication_list_with_glued_acronym() {
        let f = extract("patient current medications rasa nitro slow k lasix");
        assert_eq!(f.get(Field::Medications), Some("A_S_A, furosemide"));
        assert_eq!(f.get(Field::MedicationsComment), Some("r slow k"));
        assert_eq!(f.get(Field::NtgPrior), Some("1"));
        let f = extract("current medications nasal spray");
        assert_eq!(f.get(Field::Medications), None);
        assert_eq!(f.get(Field::MedicationsComment), Some("nasal spray"));
    }

    #[test]
    fn vitals_and_pupils() {
        let f = extract("pulse is 90 strong. temperature is 37.5. pupil is 3 + reactive. ctas 2");
        assert_eq!(f.get(Field::Pulse), Some("90"));
        assert_eq!(f.get(Field::Temperature), Some("37.5"));
        assert_eq!(f.get(Field::PupilLeft), Some("3"));
        assert_eq!(f.get(Field::PupilReactiveRight), Some("1"));
        assert_eq!(f.get(Field::Ctas), Some("2"));
    }

    #[test]
    fn earlier_sentences_win() {
        let f = extract("bp is 150 over 90. bp is 15 over 9. pulse is 80. pulse is 8");
        assert_eq!(f.get(Field::Bp), Some("150 / 90"));
        assert_eq!(f.get(Field::Systolic), Some("150"));
        assert_eq!(f.get(Field::Pulse), Some("80"));
    }

    #[test]
    fn nothing_to_extract() {
        assert!(extract("").is_empty());
        assert!(extract("the quick brown fox").is_empty());
        assert_eq!(extract_fields("", &Lexicons::bundled()).get(Field::Transcript), Some(""));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn transcript() -> impl Strategy<Value = String> {
            let words = vec![
                "bp", "is", "over", "blood", "pressure", "pulse", "pupil", "+", "reactive", "allergies", "no",
                "penicillin", "history", "of", "medications", "rasa", "as", "a", "lasix", "nitro", "skin", "pale",
                "sweaty", "abdomen", "rigid", "ctas", "assessment", "year", "old", "male", "pain", "chest",
                "complaining", "physical", "exam", "finds", "request", "treatment", "additional", "iv", ".", "120",
                "80", "3", "0", "37.5",
            ];
            prop::collection::vec(prop::sample::select(words), 0..40).prop_map(|w| w.join(" "))
        }

        proptest! {
            #[test]
            fn outputs_are_valid_and_deterministic(text in transcript()) {
                let lex = Lexicons::bundled();
                let a = extract_fields(&text, &lex);
                prop_assert!(a.validate().is_ok(), "{:?}", a);
                prop_assert_eq!(&a, &extract_fields(&text, &lex));
                let json = a.to_json();
                prop_assert_eq!(PatchForm::from_json(&json).unwrap(), a);
            }

            #[test]
            fn arbitrary_text_never_panics(text in "\\PC{0,200}") {
                let f = extract_fields(&text, &Lexicons::bundled());
                prop_assert!(f.validate().is_ok());
            }
        }
    }
}
