//! Standing-order recommendation from dispatch information: sparse features,
//! multinomial softmax regression, an information gate and timestamped,
//! ascending confidence lists.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Mutex;

use chrono::{NaiveDate, NaiveDateTime, TimeDelta};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nlu::{tokenize, LemmaRules};
use crate::nn::{softmax, softmax_cross_entropy, ModelDocument, NnError, TrainConfig};

pub const TIMESTAMP_FORMAT: &str = "%Y%m%dT%H%M%S-%6f";

pub const DEFAULT_CATALOG: [&str; 3] = ["ACPE-ACP-2019", "CSMD-2019", "CIMD-ACP-2019"];

#[derive(Debug, Error, PartialEq)]
pub enum OrdersError {
    #[error("insufficient information: {0}")]
    InsufficientInformation(String),
    #[error("order catalog is empty or has duplicates")]
    InvalidCatalog,
    #[error("order {0:?} is not in the catalog")]
    UnknownOrder(String),
    #[error("catalog order {0:?} has no training records")]
    EmptyClass(String),
    #[error("records line {line}: {message}")]
    Records { line: usize, message: String },
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// Dispatcher-collected information about a call.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DispatchInfo {
    #[serde(default)]
    pub problem_nature_type: Option<String>,
    #[serde(default)]
    pub problem_nature: Option<String>,
    #[serde(default)]
    pub gender: Option<String>,
    #[serde(default)]
    pub comment: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub age: Option<u32>,
}

fn clean(s: &Option<String>) -> Option<String> {
    s.as_deref().map(|v| v.split_whitespace().collect::<Vec<_>>().join(" ")).filter(|v| !v.is_empty())
}

impl DispatchInfo {
    /// Whitespace collapsed, blanks dropped, type and gender uppercased.
    pub fn normalized(&self) -> Self {
        Self {
            problem_nature_type: clean(&self.problem_nature_type).map(|v| v.to_uppercase()),
            problem_nature: clean(&self.problem_nature),
            gender: clean(&self.gender).map(|v| v.to_uppercase()),
            comment: clean(&self.comment),
            age: self.age,
        }
    }

    /// Feature names with their counts; categorical values are matched
    /// case-insensitively, comment words by lemma.
    pub fn feature_counts(&self) -> BTreeMap<String, f64> {
        let d = self.normalized();
        let mut out = BTreeMap::new();
        if let Some(t) = &d.problem_nature_type {
            out.insert(format!("type={t}"), 1.0);
        }
        if let Some(n) = &d.problem_nature {
            out.insert(format!("nature={}", n.to_lowercase()), 1.0);
        }
        if let Some(g) = &d.gender {
            out.insert(format!("gender={g}"), 1.0);
        }
        if let Some(a) = d.age {
            out.insert(format!("age={}", (a / 10) * 10), 1.0);
        }
        if let Some(c) = &d.comment {
            let rules = LemmaRules::default();
            for tok in tokenize(c, &rules) {
                *out.entry(format!("word={}", tok.lemma)).or_insert(0.0) += 1.0;
            }
        }
        out
    }
}

/// Which parts of a dispatch must be present before recommending.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InformationGate {
    pub require_type: bool,
    pub require_comment_or_nature: bool,
}

impl Default for InformationGate {
    fn default() -> Self {
        Self { require_type: true, require_comment_or_nature: true }
    }
}

impl InformationGate {
    pub fn check(&self, d: &DispatchInfo) -> Result<(), OrdersError> {
        let d = d.normalized();
        if self.require_type && d.problem_nature_type.is_none() {
            return Err(OrdersError::InsufficientInformation("problem_nature_type is missing".into()));
        }
        if self.require_comment_or_nature && d.comment.is_none() && d.problem_nature.is_none() {
            return Err(OrdersError::InsufficientInformation("need a comment or problem_nature".into()));
        }
        Ok(())
    }
}

/// Feature names frozen at training time, in sorted order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FeatureMap {
    names: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl FeatureMap {
    pub fn from_names(names: impl IntoIterator<Item = String>) -> Self {
        let names: Vec<String> = names.into_iter().collect::<BTreeSet<_>>().into_iter().collect();
        let index = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        Self { names, index }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }
}

/// Sparse vector as sorted (index, value) pairs; unknown features dropped.
pub fn featurize(d: &DispatchInfo, map: &FeatureMap) -> Vec<(usize, f64)> {
    let mut v: Vec<(usize, f64)> = d.feature_counts().into_iter().filter_map(|(k, x)| map.get(&k).map(|i| (i, x))).collect();
    v.sort_by_key(|p| p.0);
    v
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoricalRecord {
    #[serde(flatten)]
    pub dispatch: DispatchInfo,
    pub order: String,
}

#[derive(Deserialize)]
struct RecordRow {
    problem_nature_type: String,
    problem_nature: String,
    gender: String,
    comment: String,
    order: String,
    #[serde(default)]
    age: Option<u32>,
}

fn opt(s: String) -> Option<String> {
    if s.trim().is_empty() {
        None
    } else {
        Some(s)
    }
}

/// Records CSV: problem_nature_type, problem_nature, gender, comment, order
/// and an optional age column. Empty cells are absent values.
pub fn load_records(text: &str) -> Result<Vec<HistoricalRecord>, OrdersError> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<RecordRow>().enumerate() {
        let row = row.map_err(|e| OrdersError::Records { line: i + 2, message: e.to_string() })?;
        out.push(HistoricalRecord {
            dispatch: DispatchInfo {
                problem_nature_type: opt(row.problem_nature_type),
                problem_nature: opt(row.problem_nature),
                gender: opt(row.gender),
                comment: opt(row.comment),
                age: row.age,
            },
            order: row.order,
        });
    }
    Ok(out)
}

pub fn bundled_records() -> Vec<HistoricalRecord> {
    load_records(include_str!("../../../fixtures/orders_records.csv")).expect("bundled records parse")
}

pub fn default_catalog() -> Vec<String> {
    DEFAULT_CATALOG.iter().map(|s| s.to_string()).collect()
}

/// Source of the current time; the core never reads the wall clock.
pub trait Clock: Send + Sync {
    fn now(&self) -> NaiveDateTime;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FixedClock(pub NaiveDateTime);

impl Clock for FixedClock {
    fn now(&self) -> NaiveDateTime {
        self.0
    }
}

/// 2019-01-01 01:01:01.000000.
pub fn reference_time() -> NaiveDateTime {
    NaiveDate::from_ymd_opt(2019, 1, 1).and_then(|d| d.and_hms_micro_opt(1, 1, 1, 0)).expect("valid date")
}

/// Starts at a given instant and advances by a fixed step on every read.
#[derive(Debug)]
pub struct SteppingClock {
    next: Mutex<NaiveDateTime>,
    step: TimeDelta,
}

impl SteppingClock {
    pub fn new(start: NaiveDateTime, step: TimeDelta) -> Self {
        Self { next: Mutex::new(start), step }
    }
}

impl Clock for SteppingClock {
    fn now(&self) -> NaiveDateTime {
        let mut next = self.next.lock().expect("clock lock");
        let now = *next;
        *next = now + self.step;
        now
    }
}

pub fn format_timestamp(t: NaiveDateTime) -> String {
    t.format(TIMESTAMP_FORMAT).to_string()
}

pub fn is_timestamp(s: &str) -> bool {
    let b = s.as_bytes();
    b.len() == 22
        && b.iter().enumerate().all(|(i, c)| match i {
            8 => *c == b'T',
            15 => *c == b'-',
            _ => c.is_ascii_digit(),
        })
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrderConfidence {
    pub order: String,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recommendation {
    /// Ascending by confidence; equal confidences keep catalog order.
    pub confidence_levels: Vec<OrderConfidence>,
    pub timestamp: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireConfidence {
    pub order: String,
    pub confidence: String,
}

/// JSON shape with confidences as 3-decimal strings.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireRecommendation {
    pub confidence_levels: Vec<WireConfidence>,
    pub timestamp: String,
}

/// Rounds probabilities to `decimals` places so the rounded values still sum
/// to exactly one: floors, then hands leftover units to the largest
/// remainders, earlier entries first on ties.
pub fn largest_remainder(probs: &[f64], decimals: u32) -> Vec<u64> {
    let scale = 10u64.pow(decimals);
    let scaled: Vec<f64> = probs.iter().map(|p| p.clamp(0.0, 1.0) * scale as f64).collect();
    let mut units: Vec<u64> = scaled.iter().map(|s| s.floor() as u64).collect();
    let assigned: u64 = units.iter().sum();
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (scaled[a] - scaled[a].floor(), scaled[b] - scaled[b].floor());
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(scale.saturating_sub(assigned) as usize) {
        units[i] += 1;
    }
    units
}

impl Recommendation {
    pub fn top(&self) -> Option<&OrderConfidence> {
        self.confidence_levels.last()
    }

    pub fn top_order(&self) -> Option<&str> {
        self.top().map(|c| c.order.as_str())
    }

    pub fn to_wire(&self) -> WireRecommendation {
        let probs: Vec<f64> = self.confidence_levels.iter().map(|c| c.confidence).collect();
        let units = largest_remainder(&probs, 3);
        WireRecommendation {
            confidence_levels: self
                .confidence_levels
                .iter()
                .zip(units)
                .map(|(c, u)| WireConfidence { order: c.order.clone(), confidence: format!("{}.{:03}", u / 1000, u % 1000) })
                .collect(),
            timestamp: self.timestamp.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_wire()).expect("serializable")
    }

    /// Sum, range, order and timestamp checks.
    pub fn check_invariants(&self) -> Result<(), String> {
        let sum: f64 = self.confidence_levels.iter().map(|c| c.confidence).sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(format!("confidences sum to {sum}"));
        }
        if self.confidence_levels.iter().any(|c| !(0.0..=1.0).contains(&c.confidence)) {
            return Err("confidence outside [0, 1]".into());
        }
        if self.confidence_levels.windows(2).any(|w| w[0].confidence > w[1].confidence) {
            return Err("confidences not ascending".into());
        }
        if !is_timestamp(&self.timestamp) {
            return Err(format!("bad timestamp {:?}", self.timestamp));
        }
        Ok(())
    }
}

/// Argmax order changed between two recommendations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Correction {
    pub from: String,
    pub to: String,
    pub timestamp: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecommendationUpdate {
    pub recommendation: Recommendation,
    pub correction: Option<Correction>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrderModel {
    pub catalog: Vec<String>,
    pub features: FeatureMap,
    /// Row-major `catalog × features`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub gate: InformationGate,
}

fn validate_catalog(catalog: &[String]) -> Result<(), OrdersError> {
    let unique: BTreeSet<&String> = catalog.iter().collect();
    if catalog.is_empty() || unique.len() != catalog.len() || catalog.iter().any(|c| c.is_empty()) {
        return Err(OrdersError::InvalidCatalog);
    }
    Ok(())
}

impl OrderModel {
    pub fn zeros(catalog: Vec<String>, features: FeatureMap) -> Self {
        let k = catalog.len();
        let f = features.len();
        Self { catalog, features, weights: vec![0.0; k * f], bias: vec![0.0; k], gate: InformationGate::default() }
    }

    pub fn logits(&self, x: &[(usize, f64)]) -> Vec<f64> {
        let f = self.features.len();
        (0..self.catalog.len())
            .map(|k| self.bias[k] + x.iter().map(|(i, v)| self.weights[k * f + i] * v).sum::<f64>())
            .collect()
    }

    /// Probabilities in catalog order, ignoring the gate.
    pub fn probabilities(&self, d: &DispatchInfo) -> Vec<f64> {
        softmax(&self.logits(&featurize(d, &self.features)))
    }

    pub fn predict(&self, d: &DispatchInfo) -> &str {
        let p = self.probabilities(d);
        let best = p.iter().enumerate().fold(0, |b, (i, v)| if *v > p[b] { i } else { b });
        &self.catalog[best]
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = self.weights.clone();
        v.extend_from_slice(&self.bias);
        v
    }

    pub fn load_flat(&mut self, flat: &[f64]) -> Result<(), NnError> {
        if flat.len() != self.param_count() {
            return Err(NnError::DimensionMismatch { what: "order model parameters", expected: self.param_count(), got: flat.len() });
        }
        let (w, b) = flat.split_at(self.weights.len());
        self.weights.copy_from_slice(w);
        self.bias.copy_from_slice(b);
        Ok(())
    }

    /// Mean cross-entropy over records and its gradient in flat layout.
    pub fn loss_and_gradient(&self, records: &[HistoricalRecord]) -> Result<(f64, Vec<f64>), OrdersError> {
        let f = self.features.len();
        let mut grad = vec![0.0; self.param_count()];
        let mut loss = 0.0;
        let n = records.len().max(1) as f64;
        for r in records {
            let target = self.catalog.iter().position(|c| *c == r.order).ok_or_else(|| OrdersError::UnknownOrder(r.order.clone()))?;
            let x = featurize(&r.dispatch, &self.features);
            let logits = self.logits(&x);
            loss += softmax_cross_entropy(&logits, target) / n;
            let mut delta = softmax(&logits);
            delta[target] -= 1.0;
            for (k, dk) in delta.iter().enumerate() {
                let dk = dk / n;
                for (i, v) in &x {
                    grad[k * f + i] += dk * v;
                }
                grad[self.weights.len() + k] += dk;
            }
        }
        Ok((loss, grad))
    }

    pub fn accuracy(&self, records: &[HistoricalRecord]) -> f64 {
        if records.is_empty() {
            return 0.0;
        }
        records.iter().filter(|r| self.predict(&r.dispatch) == r.order).count() as f64 / records.len() as f64
    }

    pub fn to_document(&self) -> ModelDocument {
        let dims = BTreeMap::from([("classes".to_string(), self.catalog.len()), ("features".to_string(), self.features.len())]);
        let mut doc = ModelDocument::new(dims, self.to_flat());
        doc.meta.insert("kind".into(), "order-softmax".into());
        doc.meta.insert("catalog".into(), serde_json::json!(self.catalog));
        doc.meta.insert("features".into(), serde_json::json!(self.features.names()));
        doc.meta.insert("gate".into(), serde_json::to_value(self.gate).expect("serializable"));
        doc
    }

    pub fn from_document(doc: &ModelDocument) -> Result<Self, OrdersError> {
        let get = |k: &str| doc.meta.get(k).cloned().ok_or_else(|| NnError::Format(format!("missing meta {k:?}")));
        if get("kind")? != "order-softmax" {
            return Err(NnError::Format("not an order model document".into()).into());
        }
        let fmt = |e: serde_json::Error| NnError::Format(e.to_string());
        let catalog: Vec<String> = serde_json::from_value(get("catalog")?).map_err(fmt)?;
        let names: Vec<String> = serde_json::from_value(get("features")?).map_err(fmt)?;
        let gate: InformationGate = serde_json::from_value(get("gate")?).map_err(fmt)?;
        validate_catalog(&catalog)?;
        let features = FeatureMap::from_names(names);
        if catalog.len() != doc.dim("classes")? || features.len() != doc.dim("features")? {
            return Err(NnError::Format("catalog or feature count disagrees with dims".into()).into());
        }
        let mut model = Self::zeros(catalog, features);
        model.gate = gate;
        model.load_flat(&doc.weights)?;
        Ok(model)
    }
}

/// Softmax regression by full-batch gradient descent from zero weights.
pub fn train_orders(records: &[HistoricalRecord], catalog: &[String], tc: &TrainConfig) -> Result<OrderModel, OrdersError> {
    tc.validate()?;
    validate_catalog(catalog)?;
    for r in records {
        if !catalog.contains(&r.order) {
            return Err(OrdersError::UnknownOrder(r.order.clone()));
        }
    }
    for c in catalog {
        if !records.iter().any(|r| &r.order == c) {
            return Err(OrdersError::EmptyClass(c.clone()));
        }
    }
    let features = FeatureMap::from_names(records.iter().flat_map(|r| r.dispatch.feature_counts().into_keys()));
    let mut model = OrderModel::zeros(catalog.to_vec(), features);
    for _ in 0..tc.epochs {
        let (loss, grad) = model.loss_and_gradient(records)?;
        if !loss.is_finite() {
            return Err(NnError::NonFinite("order training loss").into());
        }
        let mut flat = model.to_flat();
        for (p, g) in flat.iter_mut().zip(&grad) {
            *p -= tc.learning_rate * g;
        }
        model.load_flat(&flat)?;
    }
    Ok(model)
}

pub const DEFAULT_ORDER_TRAINING: TrainConfig = TrainConfig { learning_rate: 1.0, epochs: 300, seed: 0 };

/// Ranked orders for a dispatch that passes the model's gate.
pub fn recommend(model: &OrderModel, d: &DispatchInfo, clock: &dyn Clock) -> Result<Recommendation, OrdersError> {
    model.gate.check(d)?;
    let probs = model.probabilities(d);
    let mut levels: Vec<OrderConfidence> =
        model.catalog.iter().zip(probs).map(|(order, confidence)| OrderConfidence { order: order.clone(), confidence }).collect();
    levels.sort_by(|a, b| a.confidence.total_cmp(&b.confidence));
    Ok(Recommendation { confidence_levels: levels, timestamp: format_timestamp(clock.now()) })
}

/// Recomputes from the updated dispatch; the prior only decides whether a
/// correction is reported.
pub fn update_recommendation(
    model: &OrderModel,
    prior: &Recommendation,
    d: &DispatchInfo,
    clock: &dyn Clock,
) -> Result<RecommendationUpdate, OrdersError> {
    let next = recommend(model, d, clock)?;
    let correction = match (prior.top_order(), next.top_order()) {
        (Some(from), Some(to)) if from != to => {
            Some(Correction { from: from.to_string(), to: to.to_string(), timestamp: next.timestamp.clone() })
        }
        _ => None,
    };
    Ok(RecommendationUpdate { recommendation: next, correction })
}

/// The dispatch printed as the worked example.
pub fn example_dispatch() -> DispatchInfo {
    DispatchInfo {
        problem_nature_type: Some("CHEST".into()),
        problem_nature: Some("Ischemic Chest Pain-(51)".into()),
        gender: Some("M".into()),
        comment: Some("50YOM, SOB, pale diaphoretic, history of cardiac".into()),
        age: None,
    }
}
