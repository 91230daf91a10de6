//! Discrimination removal before training (reweighting, resampling,
//! massaging), after training (per-group thresholds), and selection of the
//! fairness weight for the penalized learner.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Dataset, DatasetError, Outcome};
use crate::metrics::{self, MetricError, MetricResult};
use crate::model::{self, Hyperparams, LogisticModel, ModelError};

#[derive(Debug, Error)]
pub enum MitigateError {
    #[error(transparent)]
    Data(#[from] DatasetError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("cell (s={s}, y={y}) is empty")]
    EmptyCell { s: u8, y: u8 },
    #[error("massaging needs {need} candidates but only {have} are available")]
    NotEnoughCandidates { need: usize, have: usize },
    #[error("group S={group} has no rows")]
    EmptyGroup { group: u8 },
    #[error("group S={group} has no positive labels")]
    MissingPositives { group: u8 },
    #[error("grid step {0} outside (0, 0.5]")]
    InvalidGridStep(f64),
    #[error("epsilon must be a finite value >= 0, got {0}")]
    InvalidEpsilon(f64),
    #[error("the fairness-weight grid is empty")]
    EmptyGrid,
}

/// What a mitigation call did, with the same metric measured before and
/// after.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MitigationRecord {
    pub method: String,
    pub parameters: BTreeMap<String, f64>,
    pub before: MetricResult,
    pub after: MetricResult,
    pub changed: usize,
    pub seed: Option<u64>,
    pub notes: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdTarget {
    DemographicParity,
    EqualOpportunity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPair {
    /// Threshold for the protected group.
    pub theta_protected: f64,
    /// Threshold for the favored group.
    pub theta_favored: f64,
    pub target: ThresholdTarget,
    pub epsilon: f64,
    /// Signed gap `rate(S=1) − rate(S=0)` of the target quantity.
    pub disparity: f64,
    pub accuracy: f64,
    pub feasible: bool,
}

/// Weighted mass of the four (s, y) cells, indexed `[s][y]`.
fn cell_mass(d: &Dataset) -> ([[f64; 2]; 2], [[usize; 2]; 2]) {
    let mut mass = [[0.0; 2]; 2];
    let mut count = [[0usize; 2]; 2];
    for i in 0..d.n() {
        let (s, y) = (usize::from(d.s()[i]), usize::from(d.y()[i]));
        mass[s][y] += d.weights()[i];
        count[s][y] += 1;
    }
    (mass, count)
}

fn check_cells(mass: &[[f64; 2]; 2], count: &[[usize; 2]; 2]) -> Result<(), MitigateError> {
    for s in 0..2 {
        for y in 0..2 {
            if count[s][y] == 0 || mass[s][y] <= 0.0 {
                return Err(MitigateError::EmptyCell {
                    s: s as u8,
                    y: y as u8,
                });
            }
        }
    }
    Ok(())
}

fn label_md(d: &Dataset) -> Result<MetricResult, MitigateError> {
    Ok(metrics::mean_difference(d, Outcome::Label)?)
}

/// Multiplies each row's weight by `P(S=s)·P(Y=y) / P(S=s, Y=y)` so the
/// weighted labels are independent of S.
pub fn reweight(d: &Dataset) -> Result<(Dataset, MitigationRecord), MitigateError> {
    let (mass, count) = cell_mass(d);
    check_cells(&mass, &count)?;
    let total: f64 = mass.iter().flatten().sum();
    let mut mult = [[0.0; 2]; 2];
    let mut parameters = BTreeMap::new();
    for s in 0..2 {
        for y in 0..2 {
            let ps = (mass[s][0] + mass[s][1]) / total;
            let py = (mass[0][y] + mass[1][y]) / total;
            mult[s][y] = ps * py / (mass[s][y] / total);
            parameters.insert(format!("w({s},{y})"), mult[s][y]);
        }
    }
    let weights: Vec<f64> = (0..d.n())
        .map(|i| d.weights()[i] * mult[usize::from(d.s()[i])][usize::from(d.y()[i])])
        .collect();
    let changed = (0..d.n())
        .filter(|&i| mult[usize::from(d.s()[i])][usize::from(d.y()[i])] != 1.0)
        .count();
    let out = d.with_weights(weights)?;
    let record = MitigationRecord {
        method: "pre:reweight".into(),
        parameters,
        before: label_md(d)?,
        after: label_md(&out)?,
        changed,
        seed: None,
        notes: Vec::new(),
    };
    Ok((out, record))
}

/// Resamples each (s, y) cell with replacement to its independence-expected
/// size `round(n·P(s)·P(y))`. Output weights are all 1.
pub fn resample(d: &Dataset, seed: u64) -> Result<(Dataset, MitigationRecord), MitigateError> {
    let (mass, count) = cell_mass(d);
    check_cells(&mass, &count)?;
    let total: f64 = mass.iter().flatten().sum();
    let n = d.n() as f64;
    let mut cells: [[Vec<usize>; 2]; 2] = Default::default();
    for i in 0..d.n() {
        cells[usize::from(d.s()[i])][usize::from(d.y()[i])].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    let mut parameters = BTreeMap::new();
    for s in 0..2 {
        for y in 0..2 {
            let ps = (mass[s][0] + mass[s][1]) / total;
            let py = (mass[0][y] + mass[1][y]) / total;
            let target = (n * ps * py).round() as usize;
            parameters.insert(format!("count({s},{y})"), target as f64);
            let cell = &cells[s][y];
            rows.extend((0..target).map(|_| cell[rng.random_range(0..cell.len())]));
        }
    }
    let out = d.subset(&rows).with_weights(vec![1.0; rows.len()])?;
    let record = MitigationRecord {
        method: "pre:resample".into(),
        parameters,
        before: label_md(d)?,
        after: label_md(&out)?,
        changed: rows.len(),
        seed: Some(seed),
        notes: Vec::new(),
    };
    Ok((out, record))
}

/// Number of label swaps that best equalizes the two groups' positive
/// counts: the integer nearest to `(n_d·pos_f − n_f·pos_d)/(n_d + n_f)`,
/// halves rounded up.
pub fn massage_count(n_deprived: usize, pos_deprived: usize, n_favored: usize, pos_favored: usize) -> usize {
    let num = (n_deprived * pos_favored) as i128 - (n_favored * pos_deprived) as i128;
    if num <= 0 {
        return 0;
    }
    let den = (n_deprived + n_favored) as i128;
    ((2 * num + den) / (2 * den)) as usize
}

/// Promotes the `M` highest-scored negatives of the deprived group and
/// demotes the `M` lowest-scored positives of the favored group. Without a
/// ranker a plain logistic model is trained on the features.
pub fn massage(
    d: &Dataset,
    ranker: Option<&LogisticModel>,
) -> Result<(Dataset, MitigationRecord), MitigateError> {
    let before = label_md(d)?;
    let mut counts = [[0usize; 2]; 2];
    for i in 0..d.n() {
        counts[usize::from(d.s()[i])][usize::from(d.y()[i])] += 1;
    }
    let n = |s: usize| counts[s][0] + counts[s][1];
    // p1 < p0 (protected disadvantaged) in integer form
    let protected_deprived = counts[1][1] * n(0) <= counts[0][1] * n(1);
    let (dep, fav) = if protected_deprived { (1, 0) } else { (0, 1) };
    let m = massage_count(n(dep), counts[dep][1], n(fav), counts[fav][1]);

    let mut notes = Vec::new();
    if !protected_deprived {
        notes.push("protected group is favored; roles mirrored".into());
    }
    if d.weights().iter().any(|&w| w != 1.0) {
        notes.push("swap count uses row counts; row weights are ignored".into());
    }
    let mut y = d.y().to_vec();
    if m > 0 {
        let trained;
        let ranker = match ranker {
            Some(r) => r,
            None => {
                trained = model::train(d, &Hyperparams::default())?;
                notes.push("ranker: internal plain logistic model".into());
                &trained
            }
        };
        let scores = ranker.predict_dataset(d, None)?;
        let mut promote: Vec<usize> = (0..d.n())
            .filter(|&i| usize::from(d.s()[i]) == dep && d.y()[i] == 0)
            .collect();
        let mut demote: Vec<usize> = (0..d.n())
            .filter(|&i| usize::from(d.s()[i]) == fav && d.y()[i] == 1)
            .collect();
        let have = promote.len().min(demote.len());
        if have < m {
            return Err(MitigateError::NotEnoughCandidates { need: m, have });
        }
        promote.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        demote.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
        for &i in &promote[..m] {
            y[i] = 1;
        }
        for &i in &demote[..m] {
            y[i] = 0;
        }
    }
    let out = d.with_labels(y)?;
    let mut parameters = BTreeMap::new();
    parameters.insert("m".into(), m as f64);
    let record = MitigationRecord {
        method: "pre:massage".into(),
        parameters,
        before,
        after: label_md(&out)?,
        changed: 2 * m,
        seed: None,
        notes,
    };
    Ok((out, record))
}

/// Threshold grid `{0, step, 2·step, …}` with 1 appended when the step does
/// not land on it.
pub fn threshold_grid(step: f64) -> Vec<f64> {
    let k = (1.0 / step + 1e-9).floor() as usize;
    let mut grid: Vec<f64> = (0..=k).map(|j| (j as f64 * step).min(1.0)).collect();
    if *grid.last().unwrap() < 1.0 - 1e-12 {
        grid.push(1.0);
    } else {
        *grid.last_mut().unwrap() = 1.0;
    }
    grid
}

/// Per-group weighted tallies at every grid threshold.
struct GroupCurve {
    weight: f64,
    positives: f64,
    accepted: Vec<f64>,
    true_pos: Vec<f64>,
    true_neg: Vec<f64>,
}

fn group_curve(probs: &[f64], d: &Dataset, group: u8, grid: &[f64]) -> GroupCurve {
    let rows: Vec<usize> = (0..d.n()).filter(|&i| d.s()[i] == group).collect();
    let w = d.weights();
    let mut c = GroupCurve {
        weight: rows.iter().map(|&i| w[i]).sum(),
        positives: rows.iter().filter(|&&i| d.y()[i] == 1).map(|&i| w[i]).sum(),
        accepted: Vec::with_capacity(grid.len()),
        true_pos: Vec::with_capacity(grid.len()),
        true_neg: Vec::with_capacity(grid.len()),
    };
    for &theta in grid {
        let (mut acc, mut tp, mut tn) = (0.0, 0.0, 0.0);
        for &i in &rows {
            let a = probs[i] >= theta;
            if a {
                acc += w[i];
                if d.y()[i] == 1 {
                    tp += w[i];
                }
            } else if d.y()[i] == 0 {
                tn += w[i];
            }
        }
        c.accepted.push(acc);
        c.true_pos.push(tp);
        c.true_neg.push(tn);
    }
    c
}

fn disparity_metric(
    d: &Dataset,
    decisions: &[u8],
    target: ThresholdTarget,
) -> Result<MetricResult, MitigateError> {
    match target {
        ThresholdTarget::DemographicParity => {
            Ok(metrics::mean_difference(d, Outcome::Vector(decisions))?)
        }
        ThresholdTarget::EqualOpportunity => {
            let e = model::evaluate_decisions(d, decisions)?;
            let mut r = MetricResult::new("tpr_gap", d.group_sizes());
            r.value = e.tpr_gap();
            if let (Some(t1), Some(t0)) = (e.protected.tpr, e.favored.tpr) {
                r.set("tpr1", t1);
                r.set("tpr0", t0);
            }
            Ok(r)
        }
    }
}

/// Exhaustive search for per-group thresholds meeting a parity target on a
/// holdout set while maximizing weighted accuracy.
pub fn group_thresholds(
    m: &LogisticModel,
    holdout: &Dataset,
    target: ThresholdTarget,
    epsilon: f64,
    grid_step: f64,
) -> Result<(ThresholdPair, MitigationRecord), MitigateError> {
    if !(grid_step > 0.0 && grid_step <= 0.5) {
        return Err(MitigateError::InvalidGridStep(grid_step));
    }
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(MitigateError::InvalidEpsilon(epsilon));
    }
    let probs = m.predict_dataset(holdout, None)?;
    let grid = threshold_grid(grid_step);
    let curves = [
        group_curve(&probs, holdout, 0, &grid),
        group_curve(&probs, holdout, 1, &grid),
    ];
    for g in 0..2u8 {
        if curves[usize::from(g)].weight <= 0.0 {
            return Err(MitigateError::EmptyGroup { group: g });
        }
        if target == ThresholdTarget::EqualOpportunity && curves[usize::from(g)].positives <= 0.0 {
            return Err(MitigateError::MissingPositives { group: g });
        }
    }
    let [c0, c1] = &curves;
    let total = c0.weight + c1.weight;
    let rate = |c: &GroupCurve, j: usize| match target {
        ThresholdTarget::DemographicParity => c.accepted[j] / c.weight,
        ThresholdTarget::EqualOpportunity => c.true_pos[j] / c.positives,
    };

    // (accuracy, disparity, j1, j0)
    let mut best_feasible: Option<(f64, f64, usize, usize)> = None;
    let mut best_any: Option<(f64, f64, usize, usize)> = None;
    let gap = |j1: usize, j0: usize| j1.abs_diff(j0);
    for j1 in 0..grid.len() {
        for j0 in 0..grid.len() {
            let disparity = rate(c1, j1) - rate(c0, j0);
            let accuracy = (c1.true_pos[j1] + c1.true_neg[j1] + c0.true_pos[j0] + c0.true_neg[j0]) / total;
            let cand = (accuracy, disparity, j1, j0);
            if disparity.abs() <= epsilon {
                let better = match best_feasible {
                    None => true,
                    Some((a, _, b1, b0)) => {
                        accuracy > a || (accuracy == a && (gap(j1, j0), j1) < (gap(b1, b0), b1))
                    }
                };
                if better {
                    best_feasible = Some(cand);
                }
            }
            let better = match best_any {
                None => true,
                Some((a, dsp, b1, b0)) => {
                    let (x, y) = (disparity.abs(), dsp.abs());
                    x < y || (x == y && (accuracy > a || (accuracy == a && (gap(j1, j0), j1) < (gap(b1, b0), b1))))
                }
            };
            if better {
                best_any = Some(cand);
            }
        }
    }
    let feasible = best_feasible.is_some();
    let (accuracy, disparity, j1, j0) = best_feasible.or(best_any).expect("grid is nonempty");
    let pair = ThresholdPair {
        theta_protected: grid[j1],
        theta_favored: grid[j0],
        target,
        epsilon,
        disparity,
        accuracy,
        feasible,
    };

    let single: Vec<u8> = probs.iter().map(|&p| u8::from(p >= 0.5)).collect();
    let adjusted: Vec<u8> = (0..holdout.n())
        .map(|i| {
            let theta = if holdout.s()[i] == 1 { pair.theta_protected } else { pair.theta_favored };
            u8::from(probs[i] >= theta)
        })
        .collect();
    let mut parameters = BTreeMap::new();
    parameters.insert("theta_protected".into(), pair.theta_protected);
    parameters.insert("theta_favored".into(), pair.theta_favored);
    parameters.insert("epsilon".into(), epsilon);
    parameters.insert("grid_step".into(), grid_step);
    parameters.insert("accuracy".into(), accuracy);
    let mut notes = Vec::new();
    if !feasible {
        notes.push(format!("no grid pair meets epsilon {epsilon}; returned the minimal-disparity pair"));
    }
    let record = MitigationRecord {
        method: "post:thresholds".into(),
        parameters,
        before: disparity_metric(holdout, &single, target)?,
        after: disparity_metric(holdout, &adjusted, target)?,
        changed: single.iter().zip(&adjusted).filter(|(a, b)| a != b).count(),
        seed: None,
        notes,
    };
    Ok((pair, record))
}

/// Options for [`tune_fairness_weight`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TuneOptions {
    pub grid: Vec<f64>,
    /// Allowed drop from the best validation accuracy.
    pub max_accuracy_loss: f64,
    /// Decision MDs within this distance of the smallest are treated as tied,
    /// and ties go to the smaller fairness weight.
    pub md_tolerance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub fairness: f64,
    pub accuracy: f64,
    pub decision_md: f64,
}

/// Trains one model per fairness weight and keeps the least discriminating
/// model whose validation accuracy is within `max_accuracy_loss` of the best.
pub fn tune_fairness_weight(
    train: &Dataset,
    validation: &Dataset,
    base: &Hyperparams,
    options: &TuneOptions,
) -> Result<(Hyperparams, Vec<GridPoint>, MitigationRecord), MitigateError> {
    if options.grid.is_empty() {
        return Err(MitigateError::EmptyGrid);
    }
    let mut grid = options.grid.clone();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let fitted: Vec<Result<(GridPoint, MetricResult), MitigateError>> = grid
        .par_iter()
        .map(|&eta| {
            let h = Hyperparams {
                fairness: eta,
                ..base.clone()
            };
            let m = model::train(train, &h)?;
            let e = model::evaluate(&m, validation, 0.5)?;
            let md = e.mean_difference.value.unwrap_or(0.0);
            Ok((
                GridPoint {
                    fairness: eta,
                    accuracy: e.accuracy,
                    decision_md: md,
                },
                e.mean_difference,
            ))
        })
        .collect();
    let fitted = fitted.into_iter().collect::<Result<Vec<_>, _>>()?;
    let best_acc = fitted.iter().map(|(p, _)| p.accuracy).fold(f64::NEG_INFINITY, f64::max);
    let eligible: Vec<usize> = (0..fitted.len())
        .filter(|&i| fitted[i].0.accuracy >= best_acc - options.max_accuracy_loss)
        .collect();
    let min_md = eligible
        .iter()
        .map(|&i| fitted[i].0.decision_md.abs())
        .fold(f64::INFINITY, f64::min);
    let chosen = *eligible
        .iter()
        .find(|&&i| fitted[i].0.decision_md.abs() <= min_md + options.md_tolerance)
        .expect("the best-accuracy model is always eligible");

    let mut parameters = BTreeMap::new();
    parameters.insert("fairness".into(), grid[chosen]);
    parameters.insert("max_accuracy_loss".into(), options.max_accuracy_loss);
    parameters.insert("md_tolerance".into(), options.md_tolerance);
    for (p, _) in &fitted {
        parameters.insert(format!("grid[{}].accuracy", p.fairness), p.accuracy);
        parameters.insert(format!("grid[{}].decision_md", p.fairness), p.decision_md);
    }
    let h = Hyperparams {
        fairness: grid[chosen],
        ..base.clone()
    };
    let record = MitigationRecord {
        method: "in:tune".into(),
        parameters,
        before: fitted[0].1.clone(),
        after: fitted[chosen].1.clone(),
        changed: 0,
        seed: Some(base.seed),
        notes: vec!["before: smallest fairness weight in the grid; after: chosen weight".into()],
    };
    Ok((h, fitted.into_iter().map(|(p, _)| p).collect(), record))
}
