//! Incident sessions as a pure state machine over logged commands.
//!
//! Every accepted command is stored with the clock reading it ran under, so
//! replaying a log rebuilds the same state byte for byte.

use chrono::{NaiveDateTime, TimeDelta};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use patchline_core::lookup::{erg_lookup, match_ocr_text, LookupError};
use patchline_core::nlu::{extract_fields, split_sentences, Field, PatchForm};
use patchline_core::orders::{recommend, Correction, DispatchInfo, FixedClock, OrdersError, Recommendation};
use patchline_core::reminders::{administration_from_treatment, Reminder, ReminderError, ReminderStatus, Schedule};
use patchline_core::report::{epcr_sidecar, generate_epcr, EventKind, IncidentTimeline};

use crate::error::{ApiError, FieldProblem};
use crate::pipeline::Pipeline;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ClockMode {
    /// Clock readings are `base` plus the event time.
    Simulated { base: NaiveDateTime },
    Real,
}

impl ClockMode {
    /// The reading for an event at `time` seconds; `None` means wall time.
    pub fn simulated_reading(&self, time: f64) -> Option<NaiveDateTime> {
        match self {
            ClockMode::Simulated { base } => Some(*base + TimeDelta::microseconds((time * 1e6).round() as i64)),
            ClockMode::Real => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum Command {
    Create { id: String, dispatch: DispatchInfo, clock: ClockMode },
    UpdateDispatch { dispatch: DispatchInfo, time: f64 },
    Transcript { line: String, time: f64 },
    FireReminders { now: f64 },
    Acknowledge { reminder_id: u64, time: f64 },
    Ocr { text: String, time: f64 },
    Placard { number: String, time: f64 },
    Confirm { form: PatchForm, time: f64 },
}

impl Command {
    pub fn time(&self) -> f64 {
        match self {
            Command::Create { .. } => 0.0,
            Command::FireReminders { now } => *now,
            Command::UpdateDispatch { time, .. }
            | Command::Transcript { time, .. }
            | Command::Acknowledge { time, .. }
            | Command::Ocr { time, .. }
            | Command::Placard { time, .. }
            | Command::Confirm { time, .. } => *time,
        }
    }
}

/// One line of a session's NDJSON log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub seq: u64,
    pub at: NaiveDateTime,
    #[serde(flatten)]
    pub command: Command,
}

/// Pushed to subscribers; timeline events plus lookup results.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeedEvent {
    pub seq: u64,
    pub kind: String,
    pub time: f64,
    pub payload: Value,
}

/// Result of applying a command. Unchanged sessions are not logged.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub response: Value,
    pub changed: bool,
}

#[derive(Debug, Clone)]
pub struct Session {
    pub id: String,
    pub clock: ClockMode,
    pub dispatch: DispatchInfo,
    pub form: PatchForm,
    pub timeline: IncidentTimeline,
    pub schedule: Schedule,
    pub recommendation: Option<Recommendation>,
    pub confirmed: Option<String>,
    pub feed: Vec<FeedEvent>,
    pub log: Vec<LogEntry>,
    lines: Vec<String>,
}

fn wire(rec: &Recommendation) -> Value {
    serde_json::to_value(rec.to_wire()).expect("serializable")
}

fn form_value(form: &PatchForm) -> Value {
    serde_json::to_value(form).expect("serializable")
}

fn reminder_value(r: &Reminder) -> Value {
    serde_json::to_value(r).expect("serializable")
}

impl Session {
    /// Starts a session from its `Create` entry.
    pub fn create(pipeline: &Pipeline, entry: &LogEntry) -> Result<(Session, Value), ApiError> {
        let Command::Create { id, dispatch, clock } = &entry.command else {
            return Err(ApiError::bad_request("a session log must start with create"));
        };
        let mut s = Session {
            id: id.clone(),
            clock: *clock,
            dispatch: dispatch.normalized(),
            form: PatchForm::default(),
            timeline: IncidentTimeline::new(),
            schedule: Schedule::new(pipeline.rules.clone()),
            recommendation: None,
            confirmed: None,
            feed: Vec::new(),
            log: Vec::new(),
            lines: Vec::new(),
        };
        let clock_at = FixedClock(entry.at);
        let response = match recommend(&pipeline.orders, &s.dispatch, &clock_at) {
            Ok(rec) => {
                s.record(0.0, EventKind::StandingOrder, json!({ "dispatch": s.dispatch, "recommendation": wire(&rec) }));
                let body = json!({ "id": s.id, "recommendation": wire(&rec) });
                s.recommendation = Some(rec);
                body
            }
            Err(OrdersError::InsufficientInformation(why)) => {
                s.record(0.0, EventKind::Dispatch, json!({ "dispatch": s.dispatch, "gate": why }));
                json!({ "id": s.id })
            }
            Err(e) => return Err(ApiError::internal(e.to_string())),
        };
        s.log.push(entry.clone());
        Ok((s, response))
    }

    /// Rebuilds a session from its full log.
    pub fn replay(pipeline: &Pipeline, entries: &[LogEntry]) -> Result<Session, ApiError> {
        let (first, rest) = entries.split_first().ok_or_else(|| ApiError::bad_request("empty session log"))?;
        let (mut s, _) = Session::create(pipeline, first)?;
        for e in rest {
            s.apply(pipeline, e)?;
        }
        Ok(s)
    }

    pub fn last_time(&self) -> f64 {
        self.timeline.last_time().unwrap_or(0.0)
    }

    pub fn next_seq(&self) -> u64 {
        self.log.len() as u64
    }

    pub fn transcript(&self) -> &[String] {
        &self.lines
    }

    fn record(&mut self, time: f64, kind: EventKind, payload: Value) {
        self.timeline.push(time, kind, payload.clone()).expect("times are checked before recording");
        self.push_feed(kind.as_str(), time, payload);
    }

    fn push_feed(&mut self, kind: &str, time: f64, payload: Value) {
        let seq = self.feed.len() as u64 + 1;
        self.feed.push(FeedEvent { seq, kind: kind.to_string(), time, payload });
    }

    fn ensure_open(&self) -> Result<(), ApiError> {
        if self.confirmed.is_some() {
            return Err(ApiError::conflict("session is confirmed and frozen"));
        }
        Ok(())
    }

    fn check_time(&self, time: f64) -> Result<(), ApiError> {
        if !(time.is_finite() && time >= 0.0) {
            return Err(ApiError::bad_request(format!("time must be a non-negative number, got {time}")));
        }
        if time < self.last_time() {
            return Err(ApiError::conflict(format!("time {time} is earlier than the last event at {}", self.last_time())));
        }
        Ok(())
    }

    /// Applies a logged command. On error the session may be partly
    /// updated, so callers apply to a copy and keep it only on success.
    pub fn apply(&mut self, pipeline: &Pipeline, entry: &LogEntry) -> Result<Outcome, ApiError> {
        if entry.seq != self.next_seq() {
            return Err(ApiError::conflict(format!("expected sequence {}, got {}", self.next_seq(), entry.seq)));
        }
        let clock = FixedClock(entry.at);
        let outcome = match &entry.command {
            Command::Create { .. } => return Err(ApiError::conflict("session already exists")),
            Command::UpdateDispatch { dispatch, time } => self.update_dispatch(pipeline, dispatch, *time, &clock)?,
            Command::Transcript { line, time } => self.transcript_line(pipeline, line, *time, &clock)?,
            Command::FireReminders { now } => self.fire_reminders(*now)?,
            Command::Acknowledge { reminder_id, time } => self.acknowledge(*reminder_id, *time)?,
            Command::Ocr { text, time } => self.ocr(pipeline, text, *time)?,
            Command::Placard { number, time } => self.placard(pipeline, number, *time)?,
            Command::Confirm { form, time } => self.confirm(form, *time)?,
        };
        if outcome.changed {
            self.log.push(entry.clone());
        }
        Ok(outcome)
    }

    fn update_dispatch(&mut self, pipeline: &Pipeline, dispatch: &DispatchInfo, time: f64, clock: &FixedClock) -> Result<Outcome, ApiError> {
        self.ensure_open()?;
        self.check_time(time)?;
        let dispatch = dispatch.normalized();
        let rec = match recommend(&pipeline.orders, &dispatch, clock) {
            Ok(r) => r,
            Err(OrdersError::InsufficientInformation(why)) => return Err(ApiError::insufficient(why)),
            Err(e) => return Err(ApiError::internal(e.to_string())),
        };
        let correction = self.correction(&rec);
        self.dispatch = dispatch;
        let payload = json!({ "dispatch": self.dispatch, "recommendation": wire(&rec), "correction": correction });
        self.record(time, EventKind::StandingOrder, payload);
        self.recommendation = Some(rec.clone());
        Ok(Outcome { response: json!({ "recommendation": wire(&rec), "correction": correction }), changed: true })
    }

    fn correction(&self, next: &Recommendation) -> Option<Correction> {
        let prior = self.recommendation.as_ref()?;
        match (prior.top_order(), next.top_order()) {
            (Some(from), Some(to)) if from != to => {
                Some(Correction { from: from.to_string(), to: to.to_string(), timestamp: next.timestamp.clone() })
            }
            _ => None,
        }
    }

    fn transcript_line(&mut self, pipeline: &Pipeline, line: &str, time: f64, clock: &FixedClock) -> Result<Outcome, ApiError> {
        self.ensure_open()?;
        self.check_time(time)?;
        let line = line.trim();
        if line.is_empty() {
            return Err(ApiError::bad_request("transcript line is empty"));
        }

        let classification: Vec<Value> = split_sentences(line)
            .iter()
            .map(|sentence| {
                let (label, probs) = pipeline.classifier.classify(sentence);
                let confidence = probs.iter().copied().fold(0.0, f64::max);
                json!({ "sentence": sentence, "label": label, "confidence": confidence })
            })
            .collect();

        let extracted = extract_fields(line, &pipeline.lexicons);
        let mut delta = PatchForm::default();
        for (f, v) in extracted.iter() {
            if f != Field::Transcript && !self.form.contains(f) {
                delta.set(f, v);
            }
        }
        self.form.merge_from(&delta);
        self.lines.push(line.to_string());
        self.form.set(Field::Transcript, self.lines.join(" "));

        let administration = extracted
            .get(Field::Treatment)
            .and_then(|t| administration_from_treatment(t, &pipeline.lexicons.medications, &pipeline.rules, time));
        let mut new_reminders = Vec::new();
        if let Some(event) = &administration {
            if let Some(r) = self.schedule.record_administration(event).map_err(|e| ApiError::bad_request(e.to_string()))? {
                new_reminders.push(reminder_value(&r));
            }
        }

        let mut comment = self.dispatch.comment.clone().unwrap_or_default();
        if !comment.is_empty() {
            comment.push(' ');
        }
        comment.push_str(line);
        self.dispatch.comment = Some(comment);
        let mut recommendation_update = Value::Null;
        if let Ok(rec) = recommend(&pipeline.orders, &self.dispatch, clock) {
            let fresh = self.recommendation.is_none();
            let correction = self.correction(&rec);
            if fresh || correction.is_some() {
                recommendation_update = json!({ "recommendation": wire(&rec), "correction": correction });
            }
            self.recommendation = Some(rec);
        }

        // one timeline event per line; an administration or order update rides on it
        let mut payload = json!({ "line": line, "classification": classification, "patch_form_delta": form_value(&delta) });
        let mut kind = EventKind::TranscriptLine;
        if let Some(a) = &administration {
            kind = EventKind::Administration;
            payload["drug"] = json!(a.drug);
            payload["dose_amount"] = json!(a.dose_amount);
            payload["dose_unit"] = json!(a.dose_unit);
            payload["route"] = json!(a.route);
            payload["reminder"] = json!(new_reminders.first());
        }
        if !recommendation_update.is_null() {
            payload["recommendation"] = recommendation_update["recommendation"].clone();
            payload["correction"] = recommendation_update["correction"].clone();
        }
        self.record(time, kind, payload);

        let mut response = json!({
            "classification": classification,
            "patch_form_delta": form_value(&delta),
            "new_reminders": new_reminders,
        });
        if !recommendation_update.is_null() {
            response["recommendation_update"] = recommendation_update;
        }
        Ok(Outcome { response, changed: true })
    }

    /// Reminders fired and not yet acknowledged.
    pub fn open_reminders(&self) -> Vec<Value> {
        self.schedule.reminders().iter().filter(|r| r.status == ReminderStatus::Fired).map(reminder_value).collect()
    }

    fn fire_reminders(&mut self, now: f64) -> Result<Outcome, ApiError> {
        if !(now.is_finite() && now >= 0.0) {
            return Err(ApiError::bad_request(format!("now must be a non-negative number, got {now}")));
        }
        if self.confirmed.is_some() || now < self.last_time() {
            return Ok(Outcome { response: json!({ "due": self.open_reminders() }), changed: false });
        }
        let fired = self.schedule.due_reminders(now);
        if !fired.is_empty() {
            let reminders: Vec<Value> = fired.iter().map(reminder_value).collect();
            self.record(now, EventKind::ReminderFired, json!({ "reminders": reminders }));
        }
        Ok(Outcome { response: json!({ "due": self.open_reminders() }), changed: !fired.is_empty() })
    }

    fn acknowledge(&mut self, id: u64, time: f64) -> Result<Outcome, ApiError> {
        self.ensure_open()?;
        self.check_time(time)?;
        let r = self.schedule.acknowledge(id).map_err(|e| match e {
            ReminderError::UnknownReminder(_) => ApiError::not_found(e.to_string()),
            other => ApiError::conflict(other.to_string()),
        })?;
        let value = reminder_value(&r);
        self.record(time, EventKind::ReminderAcknowledged, value.clone());
        Ok(Outcome { response: value, changed: true })
    }

    fn ocr(&mut self, pipeline: &Pipeline, text: &str, time: f64) -> Result<Outcome, ApiError> {
        self.ensure_open()?;
        self.check_time(time)?;
        let m = serde_json::to_value(match_ocr_text(&pipeline.din, text)).expect("serializable");
        self.push_feed("ocr_match", time, m.clone());
        Ok(Outcome { response: m, changed: true })
    }

    fn placard(&mut self, pipeline: &Pipeline, number: &str, time: f64) -> Result<Outcome, ApiError> {
        self.ensure_open()?;
        self.check_time(time)?;
        let entry = match erg_lookup(&pipeline.erg, number.trim()) {
            Ok(Some(e)) => serde_json::to_value(e).expect("serializable"),
            Ok(None) => return Err(ApiError::not_found(format!("placard {number:?} is not in the registry"))),
            Err(e @ LookupError::Format { .. }) => return Err(ApiError::bad_request(e.to_string())),
            Err(e) => return Err(ApiError::internal(e.to_string())),
        };
        self.push_feed("hazard_warning", time, entry.clone());
        Ok(Outcome { response: entry, changed: true })
    }

    fn confirm(&mut self, form: &PatchForm, time: f64) -> Result<Outcome, ApiError> {
        self.ensure_open()?;
        self.check_time(time)?;
        let problems = form.problems();
        if !problems.is_empty() {
            let mut e = ApiError::bad_request("submitted patch form is invalid");
            e.fields = problems.into_iter().map(|(f, m)| FieldProblem { field: f.as_str().to_string(), message: m }).collect();
            return Err(e);
        }
        self.form = form.clone();
        self.record(time, EventKind::EpcrConfirmed, json!({ "fields": form.len() }));
        let doc = generate_epcr(&self.timeline, &self.form);
        self.confirmed = Some(doc.clone());
        let sidecar = epcr_sidecar(&self.timeline, &self.form);
        Ok(Outcome { response: json!({ "epcr": doc, "sidecar": sidecar }), changed: true })
    }

    /// The confirmed document, or a draft from the current state.
    pub fn epcr(&self) -> (bool, String) {
        match &self.confirmed {
            Some(doc) => (true, doc.clone()),
            None => (false, generate_epcr(&self.timeline, &self.form)),
        }
    }

    pub fn summary(&self) -> Value {
        json!({
            "id": self.id,
            "clock": self.clock,
            "dispatch": self.dispatch,
            "patch_form": form_value(&self.form),
            "recommendation": self.recommendation.as_ref().map(wire),
            "reminders": self.schedule.reminders().iter().map(reminder_value).collect::<Vec<_>>(),
            "events": self.timeline.len(),
            "confirmed": self.confirmed.is_some(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use patchline_core::orders::{example_dispatch, reference_time};

    fn entry(seq: u64, command: Command) -> LogEntry {
        let clock = ClockMode::Simulated { base: reference_time() };
        LogEntry { seq, at: clock.simulated_reading(command.time()).unwrap(), command }
    }

    fn start(dispatch: DispatchInfo) -> (Session, Value) {
        let clock = ClockMode::Simulated { base: reference_time() };
        Session::create(&Pipeline::bundled(), &entry(0, Command::Create { id: "s1".into(), dispatch, clock })).unwrap()
    }

    #[test]
    fn example_dispatch_gets_a_recommendation() {
        let (s, body) = start(example_dispatch());
        let levels = body["recommendation"]["confidence_levels"].as_array().unwrap();
        assert_eq!(levels.len(), 3);
        assert_eq!(body["recommendation"]["timestamp"], "20190101T010101-000000");
        assert_eq!(s.timeline.len(), 1);
    }

    #[test]
    fn gated_dispatch_has_no_recommendation() {
        let (s, body) = start(DispatchInfo { gender: Some("F".into()), ..Default::default() });
        assert!(body.get("recommendation").is_none());
        assert!(s.recommendation.is_none());
    }

    #[test]
    fn treatment_line_schedules_a_reminder_and_duplicates_add_nothing() {
        let p = Pipeline::bundled();
        let (mut s, _) = start(DispatchInfo::default());
        let line = "Requesting treatment of additional nitroglycerin.";
        let out = s.apply(&p, &entry(1, Command::Transcript { line: line.into(), time: 10.0 })).unwrap();
        assert_eq!(out.response["patch_form_delta"], json!({ "treatment": "additional, nitroglycerin" }));
        let reminders = out.response["new_reminders"].as_array().unwrap();
        assert_eq!(reminders.len(), 1);
        assert_eq!(reminders[0]["drug"], "nitroglycerin");
        assert_eq!(reminders[0]["due_time"], 310.0);
        let again = s.apply(&p, &entry(2, Command::Transcript { line: line.into(), time: 20.0 })).unwrap();
        assert_eq!(again.response["patch_form_delta"], json!({}));
    }

    #[test]
    fn times_may_not_go_backwards() {
        let p = Pipeline::bundled();
        let (mut s, _) = start(DispatchInfo::default());
        s.apply(&p, &entry(1, Command::Transcript { line: "pulse is 90".into(), time: 30.0 })).unwrap();
        let err = s.apply(&p, &entry(2, Command::Transcript { line: "pulse is 80".into(), time: 5.0 })).unwrap_err();
        assert_eq!(err.code, crate::error::ErrorCode::Conflict);
    }

    #[test]
    fn confirm_freezes_the_session() {
        let p = Pipeline::bundled();
        let (mut s, _) = start(DispatchInfo::default());
        s.apply(&p, &entry(1, Command::Transcript { line: "pain is 7".into(), time: 1.0 })).unwrap();
        let mut bad = s.form.clone();
        bad.set(Field::Ctas, "9");
        let err = s.apply(&p, &entry(2, Command::Confirm { form: bad, time: 2.0 })).unwrap_err();
        assert_eq!(err.fields[0].field, "CTAS");
        let form = s.form.clone();
        let out = s.apply(&p, &entry(2, Command::Confirm { form: form.clone(), time: 2.0 })).unwrap();
        assert!(out.response["epcr"].as_str().unwrap().contains("pain: \"7\""));
        let again = s.apply(&p, &entry(3, Command::Confirm { form, time: 3.0 })).unwrap_err();
        assert_eq!(again.code, crate::error::ErrorCode::Conflict);
    }

    #[test]
    fn log_entries_round_trip() {
        let e = entry(4, Command::Transcript { line: "x".into(), time: 1.5 });
        let text = serde_json::to_string(&e).unwrap();
        assert_eq!(serde_json::from_str::<LogEntry>(&text).unwrap(), e);
    }
}
