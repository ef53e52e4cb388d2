//! Incident timelines, ePCR generation, extraction scoring and workflow totals.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::nlu::{Field, NluError, PatchForm};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReportError {
    #[error("event at {time}s is earlier than the previous event at {last}s")]
    TimeWentBackwards { time: f64, last: f64 },
    #[error("invalid event time {0}")]
    InvalidTime(f64),
    #[error("workflow profile {column:?}: {message}")]
    Workflow { column: String, message: String },
    #[error("no scores to aggregate")]
    NothingToAggregate,
    #[error("malformed ePCR: {0}")]
    MalformedEpcr(String),
    #[error("json: {0}")]
    Json(String),
    #[error(transparent)]
    Form(#[from] NluError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Dispatch,
    TranscriptLine,
    StandingOrder,
    Administration,
    ReminderFired,
    ReminderAcknowledged,
    PatchSent,
    PhysicianOrder,
    EpcrConfirmed,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Dispatch => "dispatch",
            EventKind::TranscriptLine => "transcript_line",
            EventKind::StandingOrder => "standing_order",
            EventKind::Administration => "administration",
            EventKind::ReminderFired => "reminder_fired",
            EventKind::ReminderAcknowledged => "reminder_acknowledged",
            EventKind::PatchSent => "patch_sent",
            EventKind::PhysicianOrder => "physician_order",
            EventKind::EpcrConfirmed => "epcr_confirmed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelineEvent {
    /// Seconds since the incident started.
    pub time: f64,
    pub kind: EventKind,
    pub payload: Value,
}

/// Events in non-decreasing time order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IncidentTimeline {
    events: Vec<TimelineEvent>,
}

impl IncidentTimeline {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, time: f64, kind: EventKind, payload: Value) -> Result<(), ReportError> {
        if !(time.is_finite() && time >= 0.0) {
            return Err(ReportError::InvalidTime(time));
        }
        if let Some(last) = self.last_time() {
            if time < last {
                return Err(ReportError::TimeWentBackwards { time, last });
            }
        }
        self.events.push(TimelineEvent { time, kind, payload });
        Ok(())
    }

    pub fn last_time(&self) -> Option<f64> {
        self.events.last().map(|e| e.time)
    }

    pub fn events(&self) -> &[TimelineEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn of_kind(&self, kind: EventKind) -> impl Iterator<Item = &TimelineEvent> {
        self.events.iter().filter(move |e| e.kind == kind)
    }
}

const HEADER: &str = "== ePCR ==";
const FORM_SECTION: &str = "== PATCH FORM ==";
const LOG_SECTION: &str = "== EVENT LOG ==";
const MEDS_SECTION: &str = "== ADMINISTERED MEDICATIONS ==";
const ORDERS_SECTION: &str = "== STANDING ORDERS ==";

fn stamp(t: f64) -> String {
    format!("[{t:>9.3}s]")
}

fn text_of(v: &Value, key: &str) -> String {
    match v.get(key) {
        Some(Value::String(s)) => s.clone(),
        Some(Value::Null) | None => String::new(),
        Some(other) => other.to_string(),
    }
}

fn administration_line(e: &TimelineEvent) -> String {
    let p = &e.payload;
    let parts: Vec<String> = ["drug", "dose_amount", "dose_unit", "route"]
        .iter()
        .map(|k| text_of(p, k))
        .filter(|s| !s.is_empty())
        .collect();
    format!("{} {}", stamp(e.time), parts.join(" "))
}

/// The highest-confidence order of a recommendation, which lists confidences
/// in ascending order. The recommendation is the payload itself or its
/// `recommendation` member.
fn order_line(e: &TimelineEvent) -> String {
    let rec = e.payload.get("recommendation").unwrap_or(&e.payload);
    let top = rec
        .get("confidence_levels")
        .and_then(Value::as_array)
        .and_then(|levels| levels.last())
        .map(|l| format!("{} ({})", text_of(l, "order"), text_of(l, "confidence")));
    format!("{} {}", stamp(e.time), top.unwrap_or_else(|| "unresolved".to_string()))
}

/// Renders the report as section-delimited text.
///
/// Sections without content are omitted, so an empty timeline and form give
/// a header-only document. Patch-form values are written as JSON strings so
/// the section parses back losslessly.
pub fn generate_epcr(timeline: &IncidentTimeline, form: &PatchForm) -> String {
    let mut doc = String::new();
    doc.push_str(HEADER);
    doc.push('\n');
    let _ = writeln!(doc, "events: {}", timeline.len());
    if let (Some(first), Some(last)) = (timeline.events().first(), timeline.events().last()) {
        let _ = writeln!(doc, "span: {:.3}s to {:.3}s", first.time, last.time);
    }
    if !form.is_empty() {
        let _ = write!(doc, "\n{FORM_SECTION}\n");
        for (f, v) in form.iter() {
            let quoted = serde_json::to_string(v).expect("strings serialize");
            let _ = writeln!(doc, "{}: {quoted}", f.as_str());
        }
    }
    if !timeline.is_empty() {
        let _ = write!(doc, "\n{LOG_SECTION}\n");
        for e in timeline.events() {
            let payload = serde_json::to_string(&e.payload).expect("json values serialize");
            let _ = writeln!(doc, "{} {} {payload}", stamp(e.time), e.kind.as_str());
        }
    }
    let meds: Vec<String> = timeline.of_kind(EventKind::Administration).map(administration_line).collect();
    if !meds.is_empty() {
        let _ = write!(doc, "\n{MEDS_SECTION}\n");
        for m in meds {
            doc.push_str(&m);
            doc.push('\n');
        }
    }
    let orders: Vec<String> = timeline
        .events()
        .iter()
        .filter(|e| e.kind == EventKind::StandingOrder || e.payload.get("recommendation").is_some_and(|r| !r.is_null()))
        .map(order_line)
        .collect();
    if !orders.is_empty() {
        let _ = write!(doc, "\n{ORDERS_SECTION}\n");
        for o in orders {
            doc.push_str(&o);
            doc.push('\n');
        }
    }
    doc
}

/// Reads the patch-form section back out of an ePCR document.
pub fn parse_epcr_form(doc: &str) -> Result<PatchForm, ReportError> {
    let mut lines = doc.lines();
    if lines.next() != Some(HEADER) {
        return Err(ReportError::MalformedEpcr("missing header".into()));
    }
    let mut form = PatchForm::new();
    let mut in_form = false;
    for line in lines {
        if line.starts_with("== ") {
            in_form = line == FORM_SECTION;
            continue;
        }
        if !in_form || line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once(": ")
            .ok_or_else(|| ReportError::MalformedEpcr(format!("form line without separator: {line:?}")))?;
        let field: Field = key.parse()?;
        let value: String =
            serde_json::from_str(value).map_err(|e| ReportError::MalformedEpcr(format!("{key}: {e}")))?;
        if form.set(field, value).is_some() {
            return Err(ReportError::MalformedEpcr(format!("duplicate field {key}")));
        }
    }
    Ok(form)
}

/// Machine-readable companion to the text report.
pub fn epcr_sidecar(timeline: &IncidentTimeline, form: &PatchForm) -> Value {
    let pick = |kind| timeline.of_kind(kind).cloned().collect::<Vec<_>>();
    serde_json::json!({
        "patch_form": form,
        "events": timeline.events(),
        "administrations": pick(EventKind::Administration),
        "standing_orders": pick(EventKind::StandingOrder),
    })
}

/// Lowercase, collapse internal whitespace, strip punctuation at the ends.
pub fn normalize_value(v: &str) -> String {
    let collapsed = v.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
    collapsed.trim_matches(|c: char| c.is_ascii_punctuation() || c.is_whitespace()).to_string()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldScore {
    pub correct: usize,
    pub total: usize,
}

/// Counts the gold keys (the transcript excluded) whose normalized values match.
pub fn score_extraction(predicted: &PatchForm, gold: &PatchForm) -> FieldScore {
    let mut score = FieldScore { correct: 0, total: 0 };
    for (f, v) in gold.iter() {
        if f == Field::Transcript {
            continue;
        }
        score.total += 1;
        if predicted.get(f).is_some_and(|p| normalize_value(p) == normalize_value(v)) {
            score.correct += 1;
        }
    }
    score
}

/// `100 · Σcorrect / Σtotal`, rounded to one decimal.
pub fn aggregate_accuracy(results: &[FieldScore]) -> Result<f64, ReportError> {
    let correct: usize = results.iter().map(|r| r.correct).sum();
    let total: usize = results.iter().map(|r| r.total).sum();
    if total == 0 {
        return Err(ReportError::NothingToAggregate);
    }
    Ok((1000.0 * correct as f64 / total as f64).round() / 10.0)
}

/// One gold transcript with its expected fields and printed counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldEntry {
    pub transcript: String,
    pub fields: PatchForm,
    /// The per-row counts as printed alongside the example.
    pub printed_correct: usize,
    pub printed_total: usize,
}

pub fn load_gold(json: &str) -> Result<Vec<GoldEntry>, ReportError> {
    serde_json::from_str(json).map_err(|e| ReportError::Json(e.to_string()))
}

/// The twelve response steps of the workflow comparison, in order.
pub const WORKFLOW_STEPS: [&str; 12] = [
    "Dispatch",
    "Standing orders",
    "Paramedic arrival to incident",
    "Status",
    "History",
    "Treatment",
    "Medication dosage reminder",
    "Paramedic call physician",
    "Patch form",
    "Request to physician",
    "Physician order",
    "ePCR (ACP) data input",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkflowStep {
    pub step: String,
    /// `None` for capability rows that carry no duration.
    pub minutes: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capability: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkflowProfile {
    pub column: String,
    pub steps: Vec<WorkflowStep>,
}

impl WorkflowProfile {
    pub fn from_json(text: &str) -> Result<Self, ReportError> {
        serde_json::from_str(text).map_err(|e| ReportError::Json(e.to_string()))
    }
}

/// Sum of step durations; steps without a duration count as zero.
pub fn workflow_totals(profile: &WorkflowProfile) -> Result<f64, ReportError> {
    let err = |message: String| ReportError::Workflow { column: profile.column.clone(), message };
    for s in &profile.steps {
        if !WORKFLOW_STEPS.contains(&s.step.as_str()) {
            return Err(err(format!("unknown step {:?}", s.step)));
        }
    }
    let mut total = 0.0;
    for name in WORKFLOW_STEPS {
        let mut matching = profile.steps.iter().filter(|s| s.step == name);
        let step = matching.next().ok_or_else(|| err(format!("missing step {name:?}")))?;
        if matching.next().is_some() {
            return Err(err(format!("duplicate step {name:?}")));
        }
        match step.minutes {
            Some(m) if m.is_finite() && m >= 0.0 => total += m,
            Some(m) => return Err(err(format!("step {name:?} has invalid duration {m}"))),
            None => {}
        }
    }
    Ok(total)
}
