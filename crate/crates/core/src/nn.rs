//! Dense numerical kernel: LSTM cells, bidirectional encoding, softmax and
//! cross-entropy, plain gradient descent, and a central-difference gradient
//! oracle.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Format tag written into every serialized model document.
pub const MODEL_FORMAT: &str = "patchline-nn/1";

#[derive(Debug, Error, PartialEq)]
pub enum NnError {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("model document: {0}")]
    Format(String),
}

fn check_dim(what: &'static str, expected: usize, got: usize) -> Result<(), NnError> {
    if expected == got {
        Ok(())
    } else {
        Err(NnError::DimensionMismatch {
            what,
            expected,
            got,
        })
    }
}

/// Row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor2D {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor2D {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, NnError> {
        check_dim("tensor data", rows * cols, data.len())?;
        if data.iter().any(|v| !v.is_finite()) {
            return Err(NnError::NonFinite("tensor data"));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a tensor from equally sized rows. An empty slice gives a 0×`cols` tensor.
    pub fn from_rows(rows: &[Vec<f64>], cols: usize) -> Result<Self, NnError> {
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            check_dim("tensor row", cols, row.len())?;
            data.extend_from_slice(row);
        }
        Self::from_vec(rows.len(), cols, data)
    }

    pub fn uniform<R: Rng + ?Sized>(rows: usize, cols: usize, scale: f64, rng: &mut R) -> Self {
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-scale..=scale))
            .collect();
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    /// `out += self · x`
    pub fn matvec_acc(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (r, o) in out.iter_mut().enumerate() {
            *o += self.row(r).iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Weights of one LSTM gate: `W·x + U·h + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateParams {
    pub input: Tensor2D,
    pub recurrent: Tensor2D,
    pub bias: Vec<f64>,
}

impl GateParams {
    fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        Self {
            input: Tensor2D::zeros(hidden_dim, input_dim),
            recurrent: Tensor2D::zeros(hidden_dim, hidden_dim),
            bias: vec![0.0; hidden_dim],
        }
    }

    fn pre_activation(&self, x: &[f64], h: &[f64]) -> Vec<f64> {
        let mut out = self.bias.clone();
        self.input.matvec_acc(x, &mut out);
        self.recurrent.matvec_acc(h, &mut out);
        out
    }

    fn param_count(input_dim: usize, hidden_dim: usize) -> usize {
        hidden_dim * input_dim + hidden_dim * hidden_dim + hidden_dim
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmParams {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub input_gate: GateParams,
    pub forget_gate: GateParams,
    pub output_gate: GateParams,
    pub candidate: GateParams,
}

impl LstmParams {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_dim,
            input_gate: GateParams::zeros(input_dim, hidden_dim),
            forget_gate: GateParams::zeros(input_dim, hidden_dim),
            output_gate: GateParams::zeros(input_dim, hidden_dim),
            candidate: GateParams::zeros(input_dim, hidden_dim),
        }
    }

    /// Uniform initialization in `[-0.1, 0.1]`.
    pub fn random<R: Rng + ?Sized>(input_dim: usize, hidden_dim: usize, rng: &mut R) -> Self {
        let mut params = Self::zeros(input_dim, hidden_dim);
        let mut flat = params.to_flat();
        for v in flat.iter_mut() {
            *v = rng.random_range(-0.1..=0.1);
        }
        params.load_flat(&flat).expect("length matches by construction");
        params
    }

    fn gates(&self) -> [&GateParams; 4] {
        [
            &self.input_gate,
            &self.forget_gate,
            &self.output_gate,
            &self.candidate,
        ]
    }

    fn gates_mut(&mut self) -> [&mut GateParams; 4] {
        [
            &mut self.input_gate,
            &mut self.forget_gate,
            &mut self.output_gate,
            &mut self.candidate,
        ]
    }

    pub fn param_count(&self) -> usize {
        4 * GateParams::param_count(self.input_dim, self.hidden_dim)
    }

    /// Flattens gates in order input, forget, output, candidate; each as W, U, b.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for gate in self.gates() {
            out.extend_from_slice(gate.input.data());
            out.extend_from_slice(gate.recurrent.data());
            out.extend_from_slice(&gate.bias);
        }
        out
    }

    pub fn load_flat(&mut self, flat: &[f64]) -> Result<(), NnError> {
        check_dim("lstm parameters", self.param_count(), flat.len())?;
        let mut it = flat.iter().copied();
        for gate in self.gates_mut() {
            for v in gate.input.data_mut() {
                *v = it.next().unwrap_or_default();
            }
            for v in gate.recurrent.data_mut() {
                *v = it.next().unwrap_or_default();
            }
            for v in gate.bias.iter_mut() {
                *v = it.next().unwrap_or_default();
            }
        }
        Ok(())
    }

    pub fn to_document(&self) -> ModelDocument {
        let mut dims = BTreeMap::new();
        dims.insert("input_dim".to_string(), self.input_dim);
        dims.insert("hidden_dim".to_string(), self.hidden_dim);
        ModelDocument::new(dims, self.to_flat())
    }

    pub fn from_document(doc: &ModelDocument) -> Result<Self, NnError> {
        let input_dim = doc.dim("input_dim")?;
        let hidden_dim = doc.dim("hidden_dim")?;
        let mut params = Self::zeros(input_dim, hidden_dim);
        params.load_flat(&doc.weights)?;
        Ok(params)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub hidden: Vec<f64>,
    pub cell: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden_dim: usize) -> Self {
        Self {
            hidden: vec![0.0; hidden_dim],
            cell: vec![0.0; hidden_dim],
        }
    }
}

pub fn lstm_step(params: &LstmParams, state: &LstmState, x: &[f64]) -> Result<LstmState, NnError> {
    check_dim("lstm input", params.input_dim, x.len())?;
    check_dim("lstm hidden state", params.hidden_dim, state.hidden.len())?;
    check_dim("lstm cell state", params.hidden_dim, state.cell.len())?;

    let h = &state.hidden;
    let i = params.input_gate.pre_activation(x, h);
    let f = params.forget_gate.pre_activation(x, h);
    let o = params.output_gate.pre_activation(x, h);
    let g = params.candidate.pre_activation(x, h);

    let mut next = LstmState::zeros(params.hidden_dim);
    for k in 0..params.hidden_dim {
        let cell = sigmoid(f[k]) * state.cell[k] + sigmoid(i[k]) * g[k].tanh();
        next.cell[k] = cell;
        next.hidden[k] = sigmoid(o[k]) * cell.tanh();
    }
    if next.cell.iter().chain(&next.hidden).any(|v| !v.is_finite()) {
        return Err(NnError::NonFinite("lstm state"));
    }
    Ok(next)
}

/// Runs `fwd` left to right and `bwd` right to left over the rows of `seq`
/// and concatenates the hidden states per time step.
pub fn birnn_encode(fwd: &LstmParams, bwd: &LstmParams, seq: &Tensor2D) -> Result<Tensor2D, NnError> {
    check_dim("forward input", fwd.input_dim, seq.cols())?;
    check_dim("backward input", bwd.input_dim, seq.cols())?;
    let steps = seq.rows();
    let width = fwd.hidden_dim + bwd.hidden_dim;
    let mut out = Tensor2D::zeros(steps, width);

    let mut state = LstmState::zeros(fwd.hidden_dim);
    for t in 0..steps {
        state = lstm_step(fwd, &state, seq.row(t))?;
        out.row_mut(t)[..fwd.hidden_dim].copy_from_slice(&state.hidden);
    }
    let mut state = LstmState::zeros(bwd.hidden_dim);
    for t in (0..steps).rev() {
        state = lstm_step(bwd, &state, seq.row(t))?;
        out.row_mut(t)[fwd.hidden_dim..].copy_from_slice(&state.hidden);
    }
    Ok(out)
}

/// Max-shifted softmax.
pub fn softmax(v: &[f64]) -> Vec<f64> {
    if v.is_empty() {
        return Vec::new();
    }
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// `-ln softmax(logits)[target]`, computed without forming the probabilities.
pub fn softmax_cross_entropy(logits: &[f64], target: usize) -> f64 {
    log_sum_exp(logits) - logits[target]
}

/// Gradient of [`softmax_cross_entropy`] with respect to the logits.
pub fn softmax_cross_entropy_grad(logits: &[f64], target: usize) -> Vec<f64> {
    let mut g = softmax(logits);
    g[target] -= 1.0;
    g
}

/// Central-difference gradient `(f(p+h) - f(p-h)) / 2h`, one coordinate at a time.
pub fn finite_diff_grad<F>(loss: F, params: &[f64], h: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    assert!(h > 0.0, "finite difference step must be positive");
    let mut p = params.to_vec();
    (0..p.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + h;
            let up = loss(&p);
            p[i] = orig - h;
            let down = loss(&p);
            p[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `p - lr·g`, elementwise.
pub fn sgd_step(params: &[f64], grads: &[f64], learning_rate: f64) -> Result<Vec<f64>, NnError> {
    let mut out = params.to_vec();
    sgd_update(&mut out, grads, learning_rate)?;
    Ok(out)
}

pub fn sgd_update(params: &mut [f64], grads: &[f64], learning_rate: f64) -> Result<(), NnError> {
    check_dim("gradient", params.len(), grads.len())?;
    for (p, g) in params.iter_mut().zip(grads) {
        *p -= learning_rate * g;
    }
    Ok(())
}

/// Relative error used by gradient checks: `|a-b| / max(|a|, |b|, floor)`.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(NnError::InvalidConfig(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(NnError::InvalidConfig("epochs must be at least 1".into()));
        }
        Ok(())
    }
}

/// Versioned JSON container for flat parameter vectors.
///
/// `meta` carries model-specific data that is not a dimension (vocabularies,
/// label names); it is omitted from the document when empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub format: String,
    pub dims: BTreeMap<String, usize>,
    pub weights: Vec<f64>,
    #[serde(default, skip_serializing_if = "serde_json::Map::is_empty")]
    pub meta: serde_json::Map<String, serde_json::Value>,
}

impl ModelDocument {
    pub fn new(dims: BTreeMap<String, usize>, weights: Vec<f64>) -> Self {
        Self {
            format: MODEL_FORMAT.to_string(),
            dims,
            weights,
            meta: serde_json::Map::new(),
        }
    }

    pub fn dim(&self, name: &str) -> Result<usize, NnError> {
        self.dims
            .get(name)
            .copied()
            .ok_or_else(|| NnError::Format(format!("missing dimension {name:?}")))
    }

    pub fn from_json(text: &str) -> Result<Self, NnError> {
        let doc: Self = serde_json::from_str(text).map_err(|e| NnError::Format(e.to_string()))?;
        if doc.format != MODEL_FORMAT {
            return Err(NnError::Format(format!(
                "unsupported format {:?}, expected {MODEL_FORMAT:?}",
                doc.format
            )));
        }
        if doc.weights.iter().any(|w| !w.is_finite()) {
            return Err(NnError::NonFinite("model weights"));
        }
        Ok(doc)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model documents always serialize")
    }
}
