//! Deterministic logistic regression with optional L2, fairness-gap and
//! misclassification-cost terms.
//!
//! Training minimizes
//!
//! ```text
//! L = Σ wᵢcᵢ·nll(pᵢ, yᵢ) / Σ wᵢcᵢ  +  λ‖w‖²  +  η·(p̄₁ − p̄₀)²
//! ```
//!
//! where `cᵢ` is `cost_fn` for positive rows and `cost_fp` for negative rows
//! and `p̄ₛ` is the weighted mean predicted probability over group `s`.
//! Optimization is full-batch gradient descent from all-zero parameters with
//! a backtracking step so large fairness weights cannot diverge.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Column, Dataset, DatasetError, Outcome, Row, Value};
use crate::metrics::{self, MetricError, MetricResult};

pub const MODEL_FORMAT_VERSION: u64 = 1;

/// Name of the encoded input carrying S when `include_protected` is set.
pub const PROTECTED_INPUT: &str = "__protected__";

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Data(#[from] DatasetError),
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparams(String),
    #[error("training labels contain a single class")]
    SingleClassLabel,
    #[error("training needs at least 2 rows, have {0}")]
    TooFewRows(usize),
    #[error("loss became non-finite (learning rate {learning_rate}); lower the learning rate")]
    NonFiniteLoss { learning_rate: f64 },
    #[error("feature `{feature}` has level `{level}` unseen during training")]
    UnknownLevel { feature: String, level: String },
    #[error("missing feature `{0}`")]
    MissingFeature(String),
    #[error("feature `{0}` has the wrong kind for this model")]
    KindMismatch(String),
    #[error("threshold {0} outside [0, 1]")]
    InvalidThreshold(f64),
    #[error("misclassification costs must be positive")]
    NonPositiveCost,
    #[error("unsupported model format version {0}")]
    UnsupportedVersion(String),
    #[error("model document: {0}")]
    Format(#[from] serde_json::Error),
    #[error("cannot read {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Metric(#[from] Box<MetricError>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparams {
    pub l2: f64,
    pub fairness: f64,
    pub cost_fp: f64,
    pub cost_fn: f64,
    pub include_protected: bool,
    pub learning_rate: f64,
    pub max_iters: usize,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            l2: 1e-4,
            fairness: 0.0,
            cost_fp: 1.0,
            cost_fn: 1.0,
            include_protected: false,
            learning_rate: 0.1,
            max_iters: 2000,
            tolerance: 1e-8,
            seed: 0,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: &str| Err(ModelError::InvalidHyperparams(msg.to_string()));
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return bad("l2 must be a finite value >= 0");
        }
        if !(self.fairness >= 0.0 && self.fairness.is_finite()) {
            return bad("fairness must be a finite value >= 0");
        }
        if !(self.cost_fp > 0.0 && self.cost_fn > 0.0) || !self.cost_fp.is_finite() || !self.cost_fn.is_finite() {
            return Err(ModelError::NonPositiveCost);
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be > 0");
        }
        if !(self.tolerance > 0.0) {
            return bad("tolerance must be > 0");
        }
        Ok(())
    }
}

/// How one schema feature maps onto model inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EncodedFeature {
    /// Standardized with training mean and standard deviation.
    Numeric { name: String, mean: f64, scale: f64 },
    /// One-hot over `levels[1..]`; the first level is the reference.
    Categorical { name: String, levels: Vec<String> },
}

impl EncodedFeature {
    pub fn name(&self) -> &str {
        match self {
            EncodedFeature::Numeric { name, .. } | EncodedFeature::Categorical { name, .. } => name,
        }
    }

    fn width(&self) -> usize {
        match self {
            EncodedFeature::Numeric { .. } => 1,
            EncodedFeature::Categorical { levels, .. } => levels.len().saturating_sub(1),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Encoding {
    pub features: Vec<EncodedFeature>,
    pub include_protected: bool,
}

impl Encoding {
    fn fit(d: &Dataset, include_protected: bool) -> Self {
        let features = d
            .schema()
            .features
            .iter()
            .zip(d.columns())
            .map(|(spec, column)| match column {
                Column::Numeric(v) => {
                    let n = v.len() as f64;
                    let mean = v.iter().sum::<f64>() / n;
                    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
                    let sd = var.sqrt();
                    EncodedFeature::Numeric {
                        name: spec.name.clone(),
                        mean,
                        scale: if sd > 0.0 { sd } else { 1.0 },
                    }
                }
                Column::Categorical { levels, .. } => EncodedFeature::Categorical {
                    name: spec.name.clone(),
                    levels: levels.clone(),
                },
            })
            .collect();
        Self {
            features,
            include_protected,
        }
    }

    pub fn width(&self) -> usize {
        self.features.iter().map(EncodedFeature::width).sum::<usize>()
            + usize::from(self.include_protected)
    }

    /// Input names in weight order.
    pub fn input_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.width());
        for f in &self.features {
            match f {
                EncodedFeature::Numeric { name, .. } => names.push(name.clone()),
                EncodedFeature::Categorical { name, levels } => {
                    names.extend(levels.iter().skip(1).map(|l| format!("{name}={l}")))
                }
            }
        }
        if self.include_protected {
            names.push(PROTECTED_INPUT.to_string());
        }
        names
    }

    /// Row-major design matrix for every row of `d`. `s_override` forces the
    /// protected input for all rows.
    pub fn encode(&self, d: &Dataset, s_override: Option<u8>) -> Result<Vec<f64>, ModelError> {
        let p = self.width();
        let n = d.n();
        let mut x = vec![0.0; n * p];
        let mut offset = 0;
        for f in &self.features {
            let column = d
                .feature(f.name())
                .ok_or_else(|| ModelError::MissingFeature(f.name().to_string()))?;
            match (f, column) {
                (EncodedFeature::Numeric { mean, scale, .. }, Column::Numeric(v)) => {
                    for i in 0..n {
                        x[i * p + offset] = (v[i] - mean) / scale;
                    }
                }
                (EncodedFeature::Categorical { name, levels }, Column::Categorical { levels: data_levels, codes }) => {
                    let map = data_levels
                        .iter()
                        .map(|l| levels.iter().position(|m| m == l))
                        .collect::<Vec<_>>();
                    for i in 0..n {
                        let lvl = map[codes[i] as usize].ok_or_else(|| ModelError::UnknownLevel {
                            feature: name.clone(),
                            level: data_levels[codes[i] as usize].clone(),
                        })?;
                        if lvl > 0 {
                            x[i * p + offset + lvl - 1] = 1.0;
                        }
                    }
                }
                _ => return Err(ModelError::KindMismatch(f.name().to_string())),
            }
            offset += f.width();
        }
        if self.include_protected {
            for i in 0..n {
                x[i * p + offset] = f64::from(s_override.unwrap_or(d.s()[i]));
            }
        }
        Ok(x)
    }

    fn encode_row(&self, row: &Row) -> Result<Vec<f64>, ModelError> {
        let mut x = Vec::with_capacity(self.width());
        for f in &self.features {
            let value = row
                .values
                .get(f.name())
                .ok_or_else(|| ModelError::MissingFeature(f.name().to_string()))?;
            match (f, value) {
                (EncodedFeature::Numeric { mean, scale, .. }, Value::Numeric(v)) => {
                    x.push((v - mean) / scale)
                }
                (EncodedFeature::Categorical { name, levels }, Value::Categorical(level)) => {
                    let lvl = levels.iter().position(|l| l == level).ok_or_else(|| {
                        ModelError::UnknownLevel {
                            feature: name.clone(),
                            level: level.clone(),
                        }
                    })?;
                    x.extend((1..levels.len()).map(|k| if k == lvl { 1.0 } else { 0.0 }));
                }
                _ => return Err(ModelError::KindMismatch(f.name().to_string())),
            }
        }
        if self.include_protected {
            x.push(f64::from(row.protected));
        }
        Ok(x)
    }
}

/// Unscaled penalty values at the final parameters: the cost-weighted mean
/// negative log-likelihood, `‖w‖²`, and the squared group-mean gap.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub nll: f64,
    pub l2: f64,
    pub fairness: f64,
}

fn sigmoid(z: f64) -> f64 {
    let p = if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    };
    p.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

/// `−[y·ln σ(z) + (1−y)·ln(1−σ(z))]` without overflow.
fn log_loss(z: f64, y: u8) -> f64 {
    let softplus = z.max(0.0) + (-z.abs()).exp().ln_1p();
    softplus - if y == 1 { z } else { 0.0 }
}

/// The training objective over an encoded design matrix. Parameters are the
/// input weights followed by the bias.
pub struct Objective<'a> {
    x: &'a [f64],
    p: usize,
    target: &'a [u8],
    s: &'a [u8],
    w: &'a [f64],
    cost_fp: f64,
    cost_fn: f64,
    l2: f64,
    fairness: f64,
}

impl<'a> Objective<'a> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        x: &'a [f64],
        p: usize,
        target: &'a [u8],
        s: &'a [u8],
        w: &'a [f64],
        h: &Hyperparams,
    ) -> Self {
        debug_assert_eq!(x.len(), target.len() * p);
        Self {
            x,
            p,
            target,
            s,
            w,
            cost_fp: h.cost_fp,
            cost_fn: h.cost_fn,
            l2: h.l2,
            fairness: h.fairness,
        }
    }

    pub fn dimension(&self) -> usize {
        self.p + 1
    }

    fn score(&self, params: &[f64], i: usize) -> f64 {
        let row = &self.x[i * self.p..(i + 1) * self.p];
        row.iter().zip(params).map(|(a, b)| a * b).sum::<f64>() + params[self.p]
    }

    fn cost(&self, i: usize) -> f64 {
        if self.target[i] == 1 {
            self.cost_fn
        } else {
            self.cost_fp
        }
    }

    /// Total loss and its components.
    pub fn loss(&self, params: &[f64]) -> (f64, LossComponents) {
        let n = self.target.len();
        let (mut nll, mut wc) = (0.0, 0.0);
        let (mut m1, mut m0, mut w1, mut w0) = (0.0, 0.0, 0.0, 0.0);
        for i in 0..n {
            let z = self.score(params, i);
            let c = self.w[i] * self.cost(i);
            nll += c * log_loss(z, self.target[i]);
            wc += c;
            let prob = sigmoid(z);
            if self.s[i] == 1 {
                m1 += self.w[i] * prob;
                w1 += self.w[i];
            } else {
                m0 += self.w[i] * prob;
                w0 += self.w[i];
            }
        }
        let nll = if wc > 0.0 { nll / wc } else { 0.0 };
        let norm2: f64 = params[..self.p].iter().map(|v| v * v).sum();
        let gap = if w1 > 0.0 && w0 > 0.0 {
            m1 / w1 - m0 / w0
        } else {
            0.0
        };
        let comps = LossComponents {
            nll,
            l2: norm2,
            fairness: gap * gap,
        };
        (
            nll + self.l2 * norm2 + self.fairness * gap * gap,
            comps,
        )
    }

    /// Analytic gradient of [`Objective::loss`].
    pub fn gradient(&self, params: &[f64]) -> Vec<f64> {
        let n = self.target.len();
        let dim = self.p + 1;
        let mut g_nll = vec![0.0; dim];
        let mut g1 = vec![0.0; dim];
        let mut g0 = vec![0.0; dim];
        let (mut wc, mut m1, mut m0, mut w1, mut w0) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for i in 0..n {
            let z = self.score(params, i);
            let prob = sigmoid(z);
            let c = self.w[i] * self.cost(i);
            wc += c;
            let resid = c * (prob - f64::from(self.target[i]));
            let slope = self.w[i] * prob * (1.0 - prob);
            let (gs, m, ws) = if self.s[i] == 1 {
                (&mut g1, &mut m1, &mut w1)
            } else {
                (&mut g0, &mut m0, &mut w0)
            };
            *m += self.w[i] * prob;
            *ws += self.w[i];
            let row = &self.x[i * self.p..(i + 1) * self.p];
            for j in 0..self.p {
                g_nll[j] += resid * row[j];
                gs[j] += slope * row[j];
            }
            g_nll[self.p] += resid;
            gs[self.p] += slope;
        }
        let mut grad = vec![0.0; dim];
        let has_groups = w1 > 0.0 && w0 > 0.0;
        let gap = if has_groups { m1 / w1 - m0 / w0 } else { 0.0 };
        for j in 0..dim {
            let mut v = if wc > 0.0 { g_nll[j] / wc } else { 0.0 };
            if j < self.p {
                v += 2.0 * self.l2 * params[j];
            }
            if has_groups {
                v += 2.0 * self.fairness * gap * (g1[j] / w1 - g0[j] / w0);
            }
            grad[j] = v;
        }
        grad
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub version: u64,
    pub encoding: Encoding,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub hyperparams: Hyperparams,
    pub converged: bool,
    pub iterations: usize,
    pub loss_components: LossComponents,
}

/// Trains on the dataset's labels.
pub fn train(d: &Dataset, h: &Hyperparams) -> Result<LogisticModel, ModelError> {
    fit_target(d, d.y(), h)
}

/// Trains on an arbitrary binary target over the dataset's features (used
/// for propensity scores and rankers).
pub fn fit_target(d: &Dataset, target: &[u8], h: &Hyperparams) -> Result<LogisticModel, ModelError> {
    h.validate()?;
    if target.len() != d.n() {
        return Err(DatasetError::LengthMismatch {
            expected: d.n(),
            found: target.len(),
        }
        .into());
    }
    if d.n() < 2 {
        return Err(ModelError::TooFewRows(d.n()));
    }
    let positives = target.iter().filter(|&&t| t == 1).count();
    if positives == 0 || positives == target.len() {
        return Err(ModelError::SingleClassLabel);
    }
    let encoding = Encoding::fit(d, h.include_protected);
    let x = encoding.encode(d, None)?;
    let p = encoding.width();
    let objective = Objective::new(&x, p, target, d.s(), d.weights(), h);

    let mut params = vec![0.0; p + 1];
    let (mut loss, mut comps) = objective.loss(&params);
    if !loss.is_finite() {
        return Err(ModelError::NonFiniteLoss {
            learning_rate: h.learning_rate,
        });
    }
    let mut converged = false;
    let mut iterations = 0;
    let mut candidate = vec![0.0; p + 1];
    'outer: while iterations < h.max_iters {
        let grad = objective.gradient(&params);
        let norm2: f64 = grad.iter().map(|g| g * g).sum();
        if !norm2.is_finite() {
            return Err(ModelError::NonFiniteLoss {
                learning_rate: h.learning_rate,
            });
        }
        if norm2.sqrt() < h.tolerance {
            converged = true;
            break;
        }
        iterations += 1;
        // Armijo backtracking from the configured rate.
        let mut step = h.learning_rate;
        loop {
            for j in 0..=p {
                candidate[j] = params[j] - step * grad[j];
            }
            let (next, next_comps) = objective.loss(&candidate);
            if next.is_finite() && next <= loss - 1e-4 * step * norm2 {
                params.copy_from_slice(&candidate);
                loss = next;
                comps = next_comps;
                break;
            }
            step *= 0.5;
            if step < h.learning_rate * 1e-12 {
                break 'outer;
            }
        }
    }
    Ok(LogisticModel {
        version: MODEL_FORMAT_VERSION,
        encoding,
        bias: params[p],
        weights: params[..p].to_vec(),
        hyperparams: h.clone(),
        converged,
        iterations,
        loss_components: comps,
    })
}

impl LogisticModel {
    /// Hand-built model, mainly for tests and fixtures.
    pub fn from_parts(encoding: Encoding, weights: Vec<f64>, bias: f64) -> Self {
        assert_eq!(encoding.width(), weights.len(), "one weight per encoded input");
        Self {
            version: MODEL_FORMAT_VERSION,
            encoding,
            weights,
            bias,
            hyperparams: Hyperparams::default(),
            converged: true,
            iterations: 0,
            loss_components: LossComponents::default(),
        }
    }

    pub fn uses_protected(&self) -> bool {
        self.encoding.include_protected
    }

    fn prob_from(&self, x: &[f64]) -> f64 {
        sigmoid(x.iter().zip(&self.weights).map(|(a, b)| a * b).sum::<f64>() + self.bias)
    }

    pub fn predict_proba(&self, row: &Row) -> Result<f64, ModelError> {
        Ok(self.prob_from(&self.encoding.encode_row(row)?))
    }

    pub fn decide(&self, row: &Row, threshold: f64) -> Result<u8, ModelError> {
        check_threshold(threshold)?;
        Ok(u8::from(self.predict_proba(row)? >= threshold))
    }

    /// Probabilities for every row; `s_override` forces the protected input.
    pub fn predict_dataset(&self, d: &Dataset, s_override: Option<u8>) -> Result<Vec<f64>, ModelError> {
        let p = self.encoding.width();
        let x = self.encoding.encode(d, s_override)?;
        Ok((0..d.n())
            .map(|i| {
                if p == 0 {
                    sigmoid(self.bias)
                } else {
                    self.prob_from(&x[i * p..(i + 1) * p])
                }
            })
            .collect())
    }

    pub fn decide_dataset(&self, d: &Dataset, threshold: f64) -> Result<Vec<u8>, ModelError> {
        check_threshold(threshold)?;
        Ok(self
            .predict_dataset(d, None)?
            .into_iter()
            .map(|p| u8::from(p >= threshold))
            .collect())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let raw: serde_json::Value = serde_json::from_str(text)?;
        match raw.get("version").and_then(serde_json::Value::as_u64) {
            Some(MODEL_FORMAT_VERSION) => Ok(serde_json::from_value(raw)?),
            Some(v) => Err(ModelError::UnsupportedVersion(v.to_string())),
            None => Err(ModelError::UnsupportedVersion(
                raw.get("version").map_or("missing".into(), |v| v.to_string()),
            )),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ModelError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }
}

fn check_threshold(threshold: f64) -> Result<(), ModelError> {
    if (0.0..=1.0).contains(&threshold) {
        Ok(())
    } else {
        Err(ModelError::InvalidThreshold(threshold))
    }
}

/// Probability above which accepting has the lower expected cost.
pub fn cost_threshold(cost_fp: f64, cost_fn: f64) -> Result<f64, ModelError> {
    if !(cost_fp > 0.0 && cost_fn > 0.0) {
        return Err(ModelError::NonPositiveCost);
    }
    Ok(cost_fp / (cost_fp + cost_fn))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: f64,
    pub fp: f64,
    pub tn: f64,
    #[serde(rename = "fn")]
    pub fn_: f64,
}

impl Confusion {
    fn add(&mut self, y: u8, a: u8, w: f64) {
        match (y, a) {
            (1, 1) => self.tp += w,
            (0, 1) => self.fp += w,
            (0, _) => self.tn += w,
            _ => self.fn_ += w,
        }
    }

    fn total(&self) -> f64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    fn ratio(num: f64, den: f64) -> Option<f64> {
        (den > 0.0).then(|| num / den)
    }

    pub fn tpr(&self) -> Option<f64> {
        Self::ratio(self.tp, self.tp + self.fn_)
    }

    pub fn fpr(&self) -> Option<f64> {
        Self::ratio(self.fp, self.fp + self.tn)
    }

    pub fn acceptance_rate(&self) -> Option<f64> {
        Self::ratio(self.tp + self.fp, self.total())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupEvaluation {
    pub confusion: Confusion,
    pub tpr: Option<f64>,
    pub fpr: Option<f64>,
    pub acceptance_rate: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub confusion: Confusion,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub protected: GroupEvaluation,
    pub favored: GroupEvaluation,
    pub mean_difference: MetricResult,
    pub normalized_mean_difference: MetricResult,
    pub caveats: Vec<String>,
}

impl Evaluation {
    pub fn tpr_gap(&self) -> Option<f64> {
        Some(self.protected.tpr? - self.favored.tpr?)
    }

    pub fn fpr_gap(&self) -> Option<f64> {
        Some(self.protected.fpr? - self.favored.fpr?)
    }
}

/// Scores a decision vector against the dataset's labels (weighted counts).
pub fn evaluate_decisions(d: &Dataset, decisions: &[u8]) -> Result<Evaluation, MetricError> {
    let outcome = Outcome::Vector(decisions);
    d.outcome(&outcome)?;
    let mut all = Confusion::default();
    let mut groups = [Confusion::default(), Confusion::default()];
    for i in 0..d.n() {
        all.add(d.y()[i], decisions[i], d.weights()[i]);
        groups[usize::from(d.s()[i])].add(d.y()[i], decisions[i], d.weights()[i]);
    }
    let mut caveats = Vec::new();
    let group = |c: &Confusion, label: &str, caveats: &mut Vec<String>| {
        if c.tpr().is_none() {
            caveats.push(format!("{label} group has no positives; TPR absent"));
        }
        if c.fpr().is_none() {
            caveats.push(format!("{label} group has no negatives; FPR absent"));
        }
        GroupEvaluation {
            confusion: *c,
            tpr: c.tpr(),
            fpr: c.fpr(),
            acceptance_rate: c.acceptance_rate(),
        }
    };
    let protected = group(&groups[1], "protected", &mut caveats);
    let favored = group(&groups[0], "favored", &mut caveats);
    Ok(Evaluation {
        accuracy: Confusion::ratio(all.tp + all.tn, all.total()).unwrap_or(0.0),
        confusion: all,
        precision: Confusion::ratio(all.tp, all.tp + all.fp),
        recall: all.tpr(),
        protected,
        favored,
        mean_difference: metrics::mean_difference(d, outcome)?,
        normalized_mean_difference: metrics::normalized_mean_difference(d, outcome)?,
        caveats,
    })
}

pub fn evaluate(m: &LogisticModel, d: &Dataset, threshold: f64) -> Result<Evaluation, ModelError> {
    let decisions = m.decide_dataset(d, threshold)?;
    evaluate_decisions(d, &decisions).map_err(|e| ModelError::Metric(Box::new(e)))
}

/// Grid of weights keyed by input name; handy for reports.
pub fn named_weights(m: &LogisticModel) -> BTreeMap<String, f64> {
    m.encoding
        .input_names()
        .into_iter()
        .zip(m.weights.iter().copied())
        .collect()
}
