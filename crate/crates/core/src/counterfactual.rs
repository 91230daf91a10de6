//! Disparate-treatment detection by flipping the protected attribute.
//!
//! Every row is scored twice, once with S forced to 1 and once with S forced
//! to 0, holding all other fields fixed. Only the declared protected column
//! is flipped; proxies that leak S through features are left untouched.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{stratify, Dataset, DatasetError, Row, Stratification};
use crate::metrics::MetricResult;
use crate::model::{LogisticModel, ModelError};

#[derive(Debug, Error)]
pub enum CounterfactualError {
    #[error(transparent)]
    Data(#[from] DatasetError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("evaluation rows have zero total weight")]
    ZeroWeight,
}

/// A probabilistic decision function whose protected input can be overridden.
pub trait DecisionFunction: Sync {
    /// Probability of a positive decision for every row of `d` with S forced
    /// to `s`.
    fn probabilities(&self, d: &Dataset, s: u8) -> Result<Vec<f64>, ModelError>;
}

impl DecisionFunction for LogisticModel {
    fn probabilities(&self, d: &Dataset, s: u8) -> Result<Vec<f64>, ModelError> {
        self.predict_dataset(d, Some(s))
    }
}

/// Adapts a per-row scoring closure.
pub struct RowFunction<F>(pub F);

impl<F> DecisionFunction for RowFunction<F>
where
    F: Fn(&Row) -> f64 + Sync,
{
    fn probabilities(&self, d: &Dataset, s: u8) -> Result<Vec<f64>, ModelError> {
        Ok((0..d.n())
            .map(|i| {
                let mut row = d.row(i);
                row.protected = s;
                (self.0)(&row)
            })
            .collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionFlip {
    pub decisions: f64,
    pub probabilities: f64,
    pub weight: f64,
    pub rows_affected: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlipAuditResult {
    pub causal_mean_difference_decisions: f64,
    pub causal_mean_difference_probabilities: f64,
    pub per_partition: Option<BTreeMap<String, PartitionFlip>>,
    pub rows_affected: usize,
    pub n: usize,
}

impl FlipAuditResult {
    pub fn to_metric(&self, group_sizes: (usize, usize)) -> MetricResult {
        let mut r = MetricResult::new("causal_mean_difference", group_sizes);
        r.value = Some(self.causal_mean_difference_decisions);
        r.set("decisions", self.causal_mean_difference_decisions);
        r.set("probabilities", self.causal_mean_difference_probabilities);
        r.set("rows_affected", self.rows_affected as f64);
        if let Some(parts) = &self.per_partition {
            for (key, p) in parts {
                r.set(format!("partition[{key}].decisions"), p.decisions);
                r.set(format!("partition[{key}].probabilities"), p.probabilities);
            }
        }
        r
    }
}

fn weighted_mean(values: &[f64], w: &[f64], rows: impl Iterator<Item = usize> + Clone) -> (f64, f64) {
    let total: f64 = rows.clone().map(|i| w[i]).sum();
    let sum: f64 = rows.map(|i| w[i] * values[i]).sum();
    (sum / total, total)
}

/// Scores the rows of `d` with S forced to `first` and then `second` and
/// averages `a(first) − a(second)`.
pub fn flip_audit_ordered(
    f: &dyn DecisionFunction,
    d: &Dataset,
    threshold: f64,
    spec: Option<&Stratification>,
    first: u8,
    second: u8,
) -> Result<FlipAuditResult, CounterfactualError> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(ModelError::InvalidThreshold(threshold).into());
    }
    let w = d.weights();
    if w.iter().sum::<f64>() <= 0.0 {
        return Err(CounterfactualError::ZeroWeight);
    }
    let p_first = f.probabilities(d, first)?;
    let p_second = f.probabilities(d, second)?;
    let decide = |p: f64| f64::from(u8::from(p >= threshold));
    let dec_diff: Vec<f64> = p_first
        .iter()
        .zip(&p_second)
        .map(|(&a, &b)| decide(a) - decide(b))
        .collect();
    let prob_diff: Vec<f64> = p_first.iter().zip(&p_second).map(|(a, b)| a - b).collect();
    let affected = |rows: &mut dyn Iterator<Item = usize>| rows.filter(|&i| dec_diff[i] != 0.0).count();

    let (decisions, _) = weighted_mean(&dec_diff, w, 0..d.n());
    let (probabilities, _) = weighted_mean(&prob_diff, w, 0..d.n());
    let per_partition = match spec {
        None => None,
        Some(spec) => {
            let mut parts = BTreeMap::new();
            for st in stratify(d, spec)? {
                let rows = st.rows.iter().copied();
                let (dec, weight) = weighted_mean(&dec_diff, w, rows.clone());
                let (prob, _) = weighted_mean(&prob_diff, w, rows.clone());
                if weight > 0.0 {
                    parts.insert(
                        st.key.clone(),
                        PartitionFlip {
                            decisions: dec,
                            probabilities: prob,
                            weight,
                            rows_affected: affected(&mut rows.clone()),
                        },
                    );
                }
            }
            Some(parts)
        }
    };
    Ok(FlipAuditResult {
        causal_mean_difference_decisions: decisions,
        causal_mean_difference_probabilities: probabilities,
        per_partition,
        rows_affected: affected(&mut (0..d.n())),
        n: d.n(),
    })
}

/// Causal mean difference `E[A | S←1] − E[A | S←0]` over the rows of `d`,
/// overall and per stratum when `spec` is given.
pub fn flip_audit(
    f: &dyn DecisionFunction,
    d: &Dataset,
    threshold: f64,
    spec: Option<&Stratification>,
) -> Result<FlipAuditResult, CounterfactualError> {
    flip_audit_ordered(f, d, threshold, spec, 1, 0)
}
