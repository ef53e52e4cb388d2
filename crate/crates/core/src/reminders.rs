//! Medication dosing reminders driven by a rule table, and order validation
//! against the same table (right drug, dose, route and time).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nlu::{canonicalize_medication, MedLexicon};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReminderError {
    #[error("no dosing rule for {0:?}")]
    UnknownDrug(String),
    #[error("no reminder with id {0}")]
    UnknownReminder(u64),
    #[error("reminder {id} is {status:?}; only fired reminders can be acknowledged")]
    NotFired { id: u64, status: ReminderStatus },
    #[error("invalid time {0}")]
    InvalidTime(f64),
    #[error("dosing rules: {0}")]
    Rules(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DosingRule {
    pub drug: String,
    pub dose_amount: f64,
    pub dose_unit: String,
    pub route: String,
    pub interval_seconds: u64,
    pub max_doses: u32,
}

impl DosingRule {
    fn validate(&self) -> Result<(), String> {
        if self.drug.trim().is_empty() {
            return Err("empty drug name".into());
        }
        if !(self.dose_amount > 0.0 && self.dose_amount.is_finite()) {
            return Err(format!("{}: dose must be positive", self.drug));
        }
        if self.interval_seconds == 0 {
            return Err(format!("{}: interval must be positive", self.drug));
        }
        if self.max_doses == 0 {
            return Err(format!("{}: max_doses must be at least 1", self.drug));
        }
        Ok(())
    }
}

/// Dosing rules keyed by canonical drug name.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RuleTable {
    rules: BTreeMap<String, DosingRule>,
}

impl RuleTable {
    pub fn new(rules: impl IntoIterator<Item = DosingRule>) -> Result<Self, ReminderError> {
        let mut out = BTreeMap::new();
        for r in rules {
            r.validate().map_err(ReminderError::Rules)?;
            if out.contains_key(&r.drug) {
                return Err(ReminderError::Rules(format!("duplicate rule for {}", r.drug)));
            }
            out.insert(r.drug.clone(), r);
        }
        Ok(Self { rules: out })
    }

    /// Columns `drug,dose_amount,dose_unit,route,interval_seconds,max_doses`.
    pub fn from_csv(text: &str) -> Result<Self, ReminderError> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let rows: Result<Vec<DosingRule>, _> = reader.deserialize().collect();
        Self::new(rows.map_err(|e| ReminderError::Rules(e.to_string()))?)
    }

    pub fn bundled() -> Self {
        Self::from_csv(include_str!("../../../fixtures/dosing_rules.csv")).expect("bundled dosing rules are valid")
    }

    pub fn get(&self, drug: &str) -> Option<&DosingRule> {
        self.rules.get(drug)
    }

    pub fn iter(&self) -> impl Iterator<Item = &DosingRule> {
        self.rules.values()
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdministrationEvent {
    pub drug: String,
    pub dose_amount: f64,
    pub dose_unit: String,
    pub route: String,
    /// Seconds since the incident started.
    pub time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReminderStatus {
    Pending,
    Fired,
    Acknowledged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reminder {
    pub id: u64,
    pub drug: String,
    pub dose_amount: f64,
    pub dose_unit: String,
    pub route: String,
    /// Earliest time the next dose may be given.
    pub due_time: f64,
    pub status: ReminderStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Violation {
    WrongDrug,
    WrongDose,
    WrongRoute,
}

/// Compares an order with the rule table; an empty list means the order is right.
pub fn validate_order(rules: &RuleTable, drug: &str, dose_amount: f64, dose_unit: &str, route: &str) -> Vec<Violation> {
    let Some(rule) = rules.get(drug) else {
        return vec![Violation::WrongDrug];
    };
    let mut out = Vec::new();
    let same_amount = (dose_amount - rule.dose_amount).abs() <= 1e-9 * rule.dose_amount.abs().max(1.0);
    if !same_amount || !dose_unit.eq_ignore_ascii_case(&rule.dose_unit) {
        out.push(Violation::WrongDose);
    }
    if !route.eq_ignore_ascii_case(&rule.route) {
        out.push(Violation::WrongRoute);
    }
    out
}

/// Next-dose reminders for one incident.
///
/// Each administration cancels the drug's pending reminder and, while the
/// dose count is below the rule's maximum, schedules the next one at
/// `time + interval`. All times are supplied by the caller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    rules: RuleTable,
    doses: BTreeMap<String, u32>,
    reminders: Vec<Reminder>,
    next_id: u64,
}

impl Schedule {
    pub fn new(rules: RuleTable) -> Self {
        Self { rules, doses: BTreeMap::new(), reminders: Vec::new(), next_id: 1 }
    }

    pub fn rules(&self) -> &RuleTable {
        &self.rules
    }

    pub fn reminders(&self) -> &[Reminder] {
        &self.reminders
    }

    pub fn doses_given(&self, drug: &str) -> u32 {
        self.doses.get(drug).copied().unwrap_or(0)
    }

    /// Records a dose; returns the reminder it scheduled, if any.
    pub fn record_administration(&mut self, event: &AdministrationEvent) -> Result<Option<Reminder>, ReminderError> {
        if !(event.time.is_finite() && event.time >= 0.0) {
            return Err(ReminderError::InvalidTime(event.time));
        }
        let rule = self.rules.get(&event.drug).ok_or_else(|| ReminderError::UnknownDrug(event.drug.clone()))?.clone();
        let count = self.doses.entry(event.drug.clone()).or_default();
        *count += 1;
        let count = *count;
        self.reminders.retain(|r| !(r.drug == event.drug && r.status == ReminderStatus::Pending));
        if count >= rule.max_doses {
            return Ok(None);
        }
        let reminder = Reminder {
            id: self.next_id,
            drug: rule.drug.clone(),
            dose_amount: rule.dose_amount,
            dose_unit: rule.dose_unit.clone(),
            route: rule.route.clone(),
            due_time: event.time + rule.interval_seconds as f64,
            status: ReminderStatus::Pending,
        };
        self.next_id += 1;
        self.reminders.push(reminder.clone());
        Ok(Some(reminder))
    }

    /// Fires every pending reminder due at or before `now`, ordered by due time then drug.
    pub fn due_reminders(&mut self, now: f64) -> Vec<Reminder> {
        let mut fired = Vec::new();
        for r in &mut self.reminders {
            if r.status == ReminderStatus::Pending && r.due_time <= now {
                r.status = ReminderStatus::Fired;
                fired.push(r.clone());
            }
        }
        fired.sort_by(|a, b| a.due_time.total_cmp(&b.due_time).then_with(|| a.drug.cmp(&b.drug)));
        fired
    }

    pub fn acknowledge(&mut self, id: u64) -> Result<Reminder, ReminderError> {
        let r = self.reminders.iter_mut().find(|r| r.id == id).ok_or(ReminderError::UnknownReminder(id))?;
        if r.status != ReminderStatus::Fired {
            return Err(ReminderError::NotFired { id, status: r.status });
        }
        r.status = ReminderStatus::Acknowledged;
        Ok(r.clone())
    }
}

/// Turns a treatment value such as `"additional, nitroglycerin"` into an
/// administration of the drug at its rule dose and route.
pub fn administration_from_treatment(
    treatment: &str,
    meds: &MedLexicon,
    rules: &RuleTable,
    time: f64,
) -> Option<AdministrationEvent> {
    let name = treatment.rsplit(',').next()?.trim().to_lowercase();
    let canonical = canonicalize_medication(&name, meds)?;
    let rule = rules.get(canonical)?;
    Some(AdministrationEvent {
        drug: rule.drug.clone(),
        dose_amount: rule.dose_amount,
        dose_unit: rule.dose_unit.clone(),
        route: rule.route.clone(),
        time,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rule(drug: &str, interval: u64, max: u32) -> DosingRule {
        DosingRule {
            drug: drug.into(),
            dose_amount: 0.4,
            dose_unit: "mg".into(),
            route: "SL".into(),
            interval_seconds: interval,
            max_doses: max,
        }
    }

    fn give(drug: &str, time: f64) -> AdministrationEvent {
        AdministrationEvent { drug: drug.into(), dose_amount: 0.4, dose_unit: "mg".into(), route: "SL".into(), time }
    }

    fn schedule() -> Schedule {
        Schedule::new(RuleTable::new([rule("ntg", 300, 3), rule("asa", 300, 2)]).unwrap())
    }

    #[test]
    fn interval_and_cap() {
        let mut s = schedule();
        let r = s.record_administration(&give("ntg", 0.0)).unwrap().unwrap();
        assert_eq!(r.due_time, 300.0);
        assert!(s.record_administration(&give("ntg", 300.0)).unwrap().is_some());
        assert!(s.record_administration(&give("ntg", 600.0)).unwrap().is_none());
        assert!(s.reminders().iter().all(|r| r.status != ReminderStatus::Pending));
        assert!(matches!(s.record_administration(&give("x", 0.0)), Err(ReminderError::UnknownDrug(_))));
    }

    #[test]
    fn firing_boundary_and_order() {
        let mut s = schedule();
        s.record_administration(&give("ntg", 0.0)).unwrap();
        s.record_administration(&give("asa", 0.0)).unwrap();
        assert!(s.due_reminders(299.0).is_empty());
        let fired = s.due_reminders(300.0);
        let drugs: Vec<&str> = fired.iter().map(|r| r.drug.as_str()).collect();
        assert_eq!(drugs, vec!["asa", "ntg"]);
        assert!(s.due_reminders(1000.0).is_empty());
    }

    #[test]
    fn acknowledge_only_fired() {
        let mut s = schedule();
        let r = s.record_administration(&give("ntg", 0.0)).unwrap().unwrap();
        assert!(matches!(s.acknowledge(r.id), Err(ReminderError::NotFired { .. })));
        s.due_reminders(300.0);
        assert_eq!(s.acknowledge(r.id).unwrap().status, ReminderStatus::Acknowledged);
        assert!(s.acknowledge(r.id).is_err());
        assert!(matches!(s.acknowledge(99), Err(ReminderError::UnknownReminder(99))));
    }

    #[test]
    fn order_validation() {
        let rules = RuleTable::new([rule("ntg", 300, 3)]).unwrap();
        assert!(validate_order(&rules, "ntg", 0.4, "mg", "SL").is_empty());
        assert_eq!(validate_order(&rules, "ntg", 0.4, "mg", "PO"), vec![Violation::WrongRoute]);
        assert_eq!(validate_order(&rules, "ntg", 0.8, "mg", "PO"), vec![Violation::WrongDose, Violation::WrongRoute]);
        assert_eq!(validate_order(&rules, "ntg", 0.4, "mcg", "SL"), vec![Violation::WrongDose]);
        assert_eq!(validate_order(&rules, "zzz", 0.4, "mg", "SL"), vec![Violation::WrongDrug]);
    }

    #[test]
    fn rule_table_validation() {
        assert!(RuleTable::new([rule("a", 0, 1)]).is_err());
        assert!(RuleTable::new([rule("a", 1, 0)]).is_err());
        assert!(RuleTable::new([rule("a", 1, 1), rule("a", 2, 2)]).is_err());
        assert!(RuleTable::bundled().get("nitroglycerin").is_some());
    }

    #[test]
    fn treatment_becomes_administration() {
        let meds = crate::nlu::Lexicons::bundled().medications;
        let ev = administration_from_treatment("additional, nitroglycerin", &meds, &RuleTable::bundled(), 12.0).unwrap();
        assert_eq!(ev.drug, "nitroglycerin");
        assert_eq!(ev.time, 12.0);
        assert!(administration_from_treatment("additional, banana", &meds, &RuleTable::bundled(), 0.0).is_none());
    }
}
