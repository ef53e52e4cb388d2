//! The patch form: the flat record sent ahead to the receiving physician.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::de::{self, Deserializer, MapAccess, Visitor};
use serde::ser::{SerializeMap, Serializer};
use serde::{Deserialize, Serialize};

use super::NluError;

macro_rules! fields {
    ($($variant:ident => $name:literal),+ $(,)?) => {
        /// Patch-form keys, in display order.
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub enum Field {
            $($variant),+
        }

        impl Field {
            pub const ALL: &'static [Field] = &[$(Field::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $(Field::$variant => $name),+
                }
            }
        }

        impl FromStr for Field {
            type Err = NluError;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s {
                    $($name => Ok(Field::$variant),)+
                    other => Err(NluError::UnknownField(other.to_string())),
                }
            }
        }
    };
}

fields! {
    Transcript => "transcript",
    Age => "age",
    Gender => "gender",
    Ctas => "CTAS",
    Bp => "BP",
    Systolic => "systolic",
    Diastolic => "diastolic",
    Pain => "pain",
    Medications => "medications",
    MedicationsComment => "medications_comment",
    PupilLeft => "pupil_left",
    PupilRight => "pupil_right",
    PupilReactiveLeft => "pupil_reactive_left",
    PupilReactiveRight => "pupil_reactive_right",
    Temperature => "temperature",
    Pulse => "pulse",
    PhysicalExam => "physical_exam",
    Allergies => "allergies",
    Abdomen => "physical_findings_abdomen",
    SkinCondition => "physical_findings_skin_condition",
    SkinColor => "physical_findings_skin_color",
    History => "history",
    PastMedicalHistory => "past_medical_history",
    NtgPrior => "NTG_prior",
    Treatment => "treatment",
    Pale => "pale",
    Sweaty => "sweaty",
}

impl Field {
    /// Fields whose only legal value is `"1"`.
    pub fn is_flag(self) -> bool {
        matches!(
            self,
            Field::NtgPrior | Field::Pale | Field::Sweaty | Field::PupilReactiveLeft | Field::PupilReactiveRight
        )
    }
}

impl fmt::Display for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A sparse patch form. Serializes as a JSON object with fields in display order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PatchForm {
    values: BTreeMap<Field, String>,
}

impl PatchForm {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, field: Field) -> Option<&str> {
        self.values.get(&field).map(String::as_str)
    }

    pub fn set(&mut self, field: Field, value: impl Into<String>) -> Option<String> {
        self.values.insert(field, value.into())
    }

    pub fn remove(&mut self, field: Field) -> Option<String> {
        self.values.remove(&field)
    }

    /// Sets the field only if it is still empty; returns whether it was set.
    pub fn fill(&mut self, field: Field, value: impl Into<String>) -> bool {
        if self.values.contains_key(&field) {
            return false;
        }
        self.values.insert(field, value.into());
        true
    }

    pub fn contains(&self, field: Field) -> bool {
        self.values.contains_key(&field)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Field, &str)> {
        self.values.iter().map(|(f, v)| (*f, v.as_str()))
    }

    /// Fills every empty field of `self` from `other`. Existing values win.
    pub fn merge_from(&mut self, other: &PatchForm) {
        for (f, v) in other.iter() {
            self.fill(f, v);
        }
    }

    /// Every value-level invariant the form violates, in field order.
    pub fn problems(&self) -> Vec<(Field, String)> {
        let mut out = Vec::new();
        if let Some(bp) = self.get(Field::Bp) {
            match (self.get(Field::Systolic), self.get(Field::Diastolic)) {
                (Some(sys), Some(dia)) if bp != format!("{sys} / {dia}") => {
                    out.push((Field::Bp, "does not match systolic / diastolic".to_string()))
                }
                (Some(_), Some(_)) => {}
                _ => out.push((Field::Bp, "present without systolic and diastolic".to_string())),
            }
        }
        if let Some(g) = self.get(Field::Gender) {
            if g != "M" && g != "F" {
                out.push((Field::Gender, "must be M or F".to_string()));
            }
        }
        if let Some(c) = self.get(Field::Ctas) {
            if !matches!(c, "1" | "2" | "3" | "4" | "5") {
                out.push((Field::Ctas, "must be 1 to 5".to_string()));
            }
        }
        for (f, v) in self.iter() {
            if f.is_flag() && v != "1" {
                out.push((f, "flag fields hold \"1\"".to_string()));
            }
        }
        out.sort_by_key(|p| p.0);
        out
    }

    /// Checks the value-level invariants of the form.
    pub fn validate(&self) -> Result<(), NluError> {
        match self.problems().into_iter().next() {
            Some((field, why)) => Err(NluError::InvalidForm(format!("{field}: {why}"))),
            None => Ok(()),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, NluError> {
        serde_json::from_str(text).map_err(|e| NluError::InvalidForm(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("patch forms always serialize")
    }
}

impl FromIterator<(Field, String)> for PatchForm {
    fn from_iter<I: IntoIterator<Item = (Field, String)>>(iter: I) -> Self {
        Self {
            values: iter.into_iter().collect(),
        }
    }
}

impl Serialize for PatchForm {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(self.values.len()))?;
        for (f, v) in &self.values {
            map.serialize_entry(f.as_str(), v)?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for PatchForm {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct FormVisitor;

        impl<'de> Visitor<'de> for FormVisitor {
            type Value = PatchForm;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("an object of patch-form fields with string values")
            }

            fn visit_map<A: MapAccess<'de>>(self, mut access: A) -> Result<PatchForm, A::Error> {
                let mut form = PatchForm::new();
                while let Some((key, value)) = access.next_entry::<String, String>()? {
                    let field = key.parse::<Field>().map_err(de::Error::custom)?;
                    if form.set(field, value).is_some() {
                        return Err(de::Error::custom(format!("duplicate field {key}")));
                    }
                }
                Ok(form)
            }
        }

        deserializer.deserialize_map(FormVisitor)
    }
}
