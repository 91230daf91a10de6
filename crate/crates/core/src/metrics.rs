//! Observational discrimination measures.
//!
//! Every estimator takes an [`Outcome`] selector so the same code audits
//! labels (Y) and decisions (A). Difference metrics follow the order
//! `E[· | S=1] − E[· | S=0]`: a negative value means the protected group
//! receives the positive outcome less often.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use thiserror::Error;

use crate::dataset::{
    quantile_bins, stratify, Column, Dataset, DatasetError, Outcome, Stratification, Stratum,
};
use crate::model::{self, Hyperparams, ModelError};

/// Significance level of the regression test.
pub const SIGNIFICANCE_LEVEL: f64 = 0.05;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error(transparent)]
    Data(#[from] DatasetError),
    #[error("group S={group} has no rows")]
    EmptyGroup { group: u8 },
    #[error("every stratum lacks one of the two groups")]
    AllStrataSkipped,
    #[error("design matrix is rank deficient")]
    RankDeficientDesign,
    #[error("group S={group} has {have} candidate neighbors, need {need}")]
    InsufficientNeighbors { group: u8, have: usize, need: usize },
    #[error("k must be at least 1")]
    InvalidK,
    #[error("threshold t={0} outside [0, 1]")]
    InvalidThreshold(f64),
    #[error("propensity stratification needs at least one feature")]
    NoFeatures,
    #[error("propensity stratification needs at least 2 bins, got {0}")]
    InvalidBins(usize),
    #[error("propensity model: {0}")]
    Model(#[from] Box<ModelError>),
}

/// A named discrimination measurement.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricResult {
    pub name: String,
    /// Absent when a zero denominator prevents a value.
    pub value: Option<f64>,
    pub components: BTreeMap<String, f64>,
    /// Row counts `(n1, n0)` of the protected and favored groups.
    pub group_sizes: (usize, usize),
    pub caveats: Vec<String>,
}

impl MetricResult {
    pub fn new(name: impl Into<String>, group_sizes: (usize, usize)) -> Self {
        Self {
            name: name.into(),
            value: None,
            components: BTreeMap::new(),
            group_sizes,
            caveats: Vec::new(),
        }
    }

    pub fn component(&self, key: &str) -> Option<f64> {
        self.components.get(key).copied()
    }

    pub fn set(&mut self, key: impl Into<String>, v: f64) {
        self.components.insert(key.into(), v);
    }
}

/// Weighted sums for the two groups over some set of rows.
#[derive(Clone, Copy, Debug, Default)]
struct Tally {
    n1: usize,
    n0: usize,
    w1: f64,
    w0: f64,
    pos1: f64,
    pos0: f64,
}

impl Tally {
    fn over(s: &[u8], o: &[u8], w: &[f64], rows: impl Iterator<Item = usize>) -> Self {
        let mut t = Tally::default();
        for i in rows {
            let pos = if o[i] == 1 { w[i] } else { 0.0 };
            if s[i] == 1 {
                t.n1 += 1;
                t.w1 += w[i];
                t.pos1 += pos;
            } else {
                t.n0 += 1;
                t.w0 += w[i];
                t.pos0 += pos;
            }
        }
        t
    }

    fn rates(&self) -> Option<(f64, f64)> {
        (self.w1 > 0.0 && self.w0 > 0.0).then(|| (self.pos1 / self.w1, self.pos0 / self.w0))
    }
}

fn tally_all(d: &Dataset, outcome: &Outcome) -> Result<Tally, MetricError> {
    let o = d.outcome(outcome)?;
    let t = Tally::over(d.s(), o, d.weights(), 0..d.n());
    if t.n1 == 0 {
        return Err(MetricError::EmptyGroup { group: 1 });
    }
    if t.n0 == 0 {
        return Err(MetricError::EmptyGroup { group: 0 });
    }
    Ok(t)
}

const ZERO_WEIGHT: &str = "a group has zero total weight; value omitted";

/// `P(O=1 | S=1) − P(O=1 | S=0)` with row weights.
pub fn mean_difference(d: &Dataset, outcome: Outcome) -> Result<MetricResult, MetricError> {
    let t = tally_all(d, &outcome)?;
    let mut r = MetricResult::new("mean_difference", (t.n1, t.n0));
    match t.rates() {
        Some((p1, p0)) => {
            r.set("p1", p1);
            r.set("p0", p0);
            r.value = Some(p1 - p0);
        }
        None => r.caveats.push(ZERO_WEIGHT.into()),
    }
    Ok(r)
}

/// Mean difference divided by `C = min(P(O=1)/P(S=0), P(O=0)/P(S=1))`, which
/// scales the extreme attainable difference to magnitude 1.
pub fn normalized_mean_difference(
    d: &Dataset,
    outcome: Outcome,
) -> Result<MetricResult, MetricError> {
    let t = tally_all(d, &outcome)?;
    let mut r = MetricResult::new("normalized_mean_difference", (t.n1, t.n0));
    let Some((p1, p0)) = t.rates() else {
        r.caveats.push(ZERO_WEIGHT.into());
        return Ok(r);
    };
    let total = t.w1 + t.w0;
    let p_a1 = (t.pos1 + t.pos0) / total;
    let p_a0 = 1.0 - p_a1;
    let p_s1 = t.w1 / total;
    let p_s0 = t.w0 / total;
    let c = (p_a1 / p_s0).min(p_a0 / p_s1);
    let md = p1 - p0;
    r.set("p1", p1);
    r.set("p0", p0);
    r.set("md", md);
    r.set("c", c);
    r.set("p_a1", p_a1);
    r.set("p_s1", p_s1);
    if c > 0.0 {
        r.value = Some(md / c);
    } else {
        r.caveats
            .push("normalization constant C is 0 (outcome constant); value omitted".into());
    }
    Ok(r)
}

struct StratumTally<'a> {
    stratum: &'a Stratum,
    tally: Tally,
}

fn tally_strata<'a>(
    d: &Dataset,
    o: &[u8],
    strata: &'a [Stratum],
    r: &mut MetricResult,
) -> Result<Vec<StratumTally<'a>>, MetricError> {
    let mut included = Vec::new();
    let mut skipped = Vec::new();
    for st in strata {
        let tally = Tally::over(d.s(), o, d.weights(), st.rows.iter().copied());
        if tally.rates().is_some() {
            included.push(StratumTally { stratum: st, tally });
        } else {
            skipped.push(st.key.as_str());
        }
    }
    if !skipped.is_empty() {
        r.caveats.push(format!(
            "skipped {} strata lacking one group: {}",
            skipped.len(),
            skipped.join("; ")
        ));
    }
    if included.is_empty() {
        return Err(MetricError::AllStrataSkipped);
    }
    Ok(included)
}

/// Weighted average of within-stratum mean differences over the given
/// strata. Shared by the exact/quantile and propensity variants.
fn conditional_over(
    d: &Dataset,
    outcome: &Outcome,
    strata: &[Stratum],
    name: &str,
) -> Result<MetricResult, MetricError> {
    let all = tally_all(d, outcome)?;
    let o = d.outcome(outcome)?;
    let mut r = MetricResult::new(name, (all.n1, all.n0));
    if let Some((p1, p0)) = all.rates() {
        r.set("p1", p1);
        r.set("p0", p0);
    }
    let included = tally_strata(d, o, strata, &mut r)?;
    let total_weight: f64 = included.iter().map(|s| s.tally.w1 + s.tally.w0).sum();
    let mut aggregate = 0.0;
    for st in &included {
        let (p1, p0) = st.tally.rates().expect("included strata have both groups");
        let md = p1 - p0;
        let w = st.tally.w1 + st.tally.w0;
        aggregate += (w / total_weight) * md;
        r.set(format!("stratum[{}].md", st.stratum.key), md);
        r.set(format!("stratum[{}].weight", st.stratum.key), w);
    }
    r.set("strata_used", included.len() as f64);
    r.value = Some(aggregate);
    Ok(r)
}

/// Mean difference controlling for the stratifying attributes.
pub fn conditional_mean_difference(
    d: &Dataset,
    outcome: Outcome,
    spec: &Stratification,
) -> Result<MetricResult, MetricError> {
    let strata = stratify(d, spec)?;
    conditional_over(d, &outcome, &strata, "conditional_mean_difference")
}

/// Splits the raw mean difference into a part explained by differing
/// stratum membership and an unexplained remainder.
///
/// `explained = Σᵢ (P(i|S=1) − P(i|S=0)) · p*ᵢ` with `p*ᵢ` the unweighted mean
/// of the two group rates in stratum `i`; `unexplained = total − explained`.
pub fn unexplained_difference(
    d: &Dataset,
    outcome: Outcome,
    spec: &Stratification,
) -> Result<MetricResult, MetricError> {
    let strata = stratify(d, spec)?;
    let all = tally_all(d, &outcome)?;
    let o = d.outcome(&outcome)?;
    let mut r = MetricResult::new("unexplained_difference", (all.n1, all.n0));
    let Some((p1, p0)) = all.rates() else {
        r.caveats.push(ZERO_WEIGHT.into());
        return Ok(r);
    };
    let included = tally_strata(d, o, &strata, &mut r)?;
    let total = p1 - p0;
    let mut explained = 0.0;
    for st in &included {
        let (q1, q0) = st.tally.rates().expect("included strata have both groups");
        let share1 = st.tally.w1 / all.w1;
        let share0 = st.tally.w0 / all.w0;
        explained += (share1 - share0) * (q1 + q0) / 2.0;
    }
    let unexplained = total - explained;
    r.set("p1", p1);
    r.set("p0", p0);
    r.set("total", total);
    r.set("explained", explained);
    r.set("unexplained", unexplained);
    r.caveats.push(
        "decomposition uses the midpoint of group rates per stratum (reconstructed formula)".into(),
    );
    r.value = Some(unexplained);
    Ok(r)
}

/// Design matrix: intercept, numeric features, one-hot categoricals (first
/// level dropped), then S in the last column.
fn regression_design(d: &Dataset) -> (Vec<Vec<f64>>, Vec<String>) {
    let mut names = vec!["intercept".to_string()];
    let mut cols: Vec<Vec<f64>> = vec![vec![1.0; d.n()]];
    for (spec, column) in d.schema().features.iter().zip(d.columns()) {
        match column {
            Column::Numeric(v) => {
                names.push(spec.name.clone());
                cols.push(v.clone());
            }
            Column::Categorical { levels, codes } => {
                for (lvl, level) in levels.iter().enumerate().skip(1) {
                    names.push(format!("{}={}", spec.name, level));
                    cols.push(
                        codes
                            .iter()
                            .map(|&c| if c as usize == lvl { 1.0 } else { 0.0 })
                            .collect(),
                    );
                }
            }
        }
    }
    names.push("s".into());
    cols.push(d.s().iter().map(|&s| f64::from(s)).collect());
    (cols, names)
}

/// Linear-probability regression `O = α + β·X + φ·S + ε` fitted by weighted
/// least squares; reports φ with classical standard errors and a two-sided
/// normal-approximation p-value.
pub fn regression_test(d: &Dataset, outcome: Outcome) -> Result<MetricResult, MetricError> {
    let t = tally_all(d, &outcome)?;
    let o = d.outcome(&outcome)?;
    let w = d.weights();
    let (cols, _) = regression_design(d);
    let p = cols.len();

    let mut xtx = DMatrix::<f64>::zeros(p, p);
    let mut xty = DVector::<f64>::zeros(p);
    for a in 0..p {
        for b in a..p {
            let v: f64 = (0..d.n()).map(|i| w[i] * cols[a][i] * cols[b][i]).sum();
            xtx[(a, b)] = v;
            xtx[(b, a)] = v;
        }
        xty[a] = (0..d.n()).map(|i| w[i] * cols[a][i] * f64::from(o[i])).sum();
    }

    // Rank check on the diagonally scaled Gram matrix.
    let diag: Vec<f64> = (0..p).map(|a| xtx[(a, a)]).collect();
    if diag.iter().any(|&v| v <= 0.0) {
        return Err(MetricError::RankDeficientDesign);
    }
    let scaled = DMatrix::from_fn(p, p, |a, b| xtx[(a, b)] / (diag[a] * diag[b]).sqrt());
    let eig = scaled.symmetric_eigenvalues();
    let (lo, hi) = eig
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &e| (lo.min(e), hi.max(e)));
    if !(lo > 1e-10 * hi) {
        return Err(MetricError::RankDeficientDesign);
    }
    let chol = xtx
        .clone()
        .cholesky()
        .ok_or(MetricError::RankDeficientDesign)?;
    let beta = chol.solve(&xty);
    let inverse = chol.inverse();

    let mut rss = 0.0;
    for i in 0..d.n() {
        let fit: f64 = (0..p).map(|a| beta[a] * cols[a][i]).sum();
        let e = f64::from(o[i]) - fit;
        rss += w[i] * e * e;
    }
    let total_weight: f64 = w.iter().sum();
    let dof = total_weight - p as f64;
    let phi = beta[p - 1];

    let mut r = MetricResult::new("regression_test", (t.n1, t.n0));
    if let Some((p1, p0)) = t.rates() {
        r.set("p1", p1);
        r.set("p0", p0);
    }
    r.set("phi", phi);
    r.set("intercept", beta[0]);
    r.set("alpha_level", SIGNIFICANCE_LEVEL);
    r.set("residual_sum_squares", rss);
    r.value = Some(phi);

    if dof <= 0.0 {
        r.caveats
            .push("no residual degrees of freedom; significance not assessed".into());
        return Ok(r);
    }
    let sigma2 = rss / dof;
    let se = (sigma2 * inverse[(p - 1, p - 1)]).max(0.0).sqrt();
    r.set("std_error", se);
    let p_value = if se > 0.0 {
        let z = phi / se;
        r.set("t_statistic", z);
        erfc(z.abs() / std::f64::consts::SQRT_2)
    } else {
        r.caveats
            .push("zero residual variance; t statistic undefined".into());
        if phi == 0.0 {
            1.0
        } else {
            0.0
        }
    };
    r.set("p_value", p_value);
    r.set(
        "significant",
        if p_value < SIGNIFICANCE_LEVEL { 1.0 } else { 0.0 },
    );
    Ok(r)
}

/// Gower-style distance: numeric features scaled by range, categorical 0/1
/// mismatch, averaged over features.
struct Gower {
    numeric: Vec<Vec<f64>>,
    categorical: Vec<Vec<u32>>,
}

impl Gower {
    fn new(d: &Dataset) -> Self {
        let mut numeric = Vec::new();
        let mut categorical = Vec::new();
        for column in d.columns() {
            match column {
                Column::Numeric(v) => {
                    let (lo, hi) = v
                        .iter()
                        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
                            (lo.min(x), hi.max(x))
                        });
                    let range = hi - lo;
                    numeric.push(if range > 0.0 {
                        v.iter().map(|x| (x - lo) / range).collect()
                    } else {
                        vec![0.0; v.len()]
                    });
                }
                Column::Categorical { codes, .. } => categorical.push(codes.clone()),
            }
        }
        Self {
            numeric,
            categorical,
        }
    }

    fn distance(&self, a: usize, b: usize) -> f64 {
        let features = self.numeric.len() + self.categorical.len();
        if features == 0 {
            return 0.0;
        }
        let num: f64 = self.numeric.iter().map(|c| (c[a] - c[b]).abs()).sum();
        let cat = self.categorical.iter().filter(|c| c[a] != c[b]).count() as f64;
        (num + cat) / features as f64
    }
}

fn nearest_positive_count(
    gower: &Gower,
    row: usize,
    candidates: &[usize],
    o: &[u8],
    k: usize,
) -> usize {
    let mut scored: Vec<(f64, usize)> = candidates
        .iter()
        .filter(|&&c| c != row)
        .map(|&c| (gower.distance(row, c), c))
        .collect();
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if scored.len() > k {
        scored.select_nth_unstable_by(k - 1, cmp);
        scored.truncate(k);
    }
    scored.iter().filter(|(_, c)| o[*c] == 1).count()
}

/// Situation testing: for each protected row with a negative outcome,
/// compares the positive rate among its `k` nearest favored neighbors with
/// that among its `k` nearest protected neighbors. Ties in distance are
/// broken by ascending row index.
pub fn knn_situation_test(
    d: &Dataset,
    outcome: Outcome,
    k: usize,
    t: f64,
) -> Result<MetricResult, MetricError> {
    if k == 0 {
        return Err(MetricError::InvalidK);
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(MetricError::InvalidThreshold(t));
    }
    let o = d.outcome(&outcome)?;
    let protected: Vec<usize> = (0..d.n()).filter(|&i| d.s()[i] == 1).collect();
    let favored: Vec<usize> = (0..d.n()).filter(|&i| d.s()[i] == 0).collect();
    if favored.len() < k {
        return Err(MetricError::InsufficientNeighbors {
            group: 0,
            have: favored.len(),
            need: k,
        });
    }
    if protected.len() < k + 1 {
        return Err(MetricError::InsufficientNeighbors {
            group: 1,
            have: protected.len().saturating_sub(1),
            need: k,
        });
    }
    let mut r = MetricResult::new("knn_situation_test", (protected.len(), favored.len()));
    r.set("k", k as f64);
    r.set("t", t);
    let population: Vec<usize> = protected.iter().copied().filter(|&i| o[i] == 0).collect();
    r.set("test_population", population.len() as f64);
    if population.is_empty() {
        r.caveats.push("no test population".into());
        r.set("mean_diff", 0.0);
        r.set("flagged", 0.0);
        r.value = Some(0.0);
        return Ok(r);
    }

    let gower = Gower::new(d);
    let diffs: Vec<f64> = population
        .par_iter()
        .map(|&row| {
            let fav = nearest_positive_count(&gower, row, &favored, o, k);
            let pro = nearest_positive_count(&gower, row, &protected, o, k);
            (fav as f64 - pro as f64) / k as f64
        })
        .collect();
    let flagged = diffs.iter().filter(|&&x| x >= t).count();
    r.set("mean_diff", diffs.iter().sum::<f64>() / diffs.len() as f64);
    r.set("flagged", flagged as f64);
    r.value = Some(flagged as f64 / population.len() as f64);
    Ok(r)
}

/// Fits `P(S=1 | X)` with the internal logistic learner, bins rows at
/// quantiles of the fitted score and aggregates within-bin differences.
pub fn propensity_stratified_difference(
    d: &Dataset,
    outcome: Outcome,
    bins: usize,
) -> Result<MetricResult, MetricError> {
    if d.schema().features.is_empty() {
        return Err(MetricError::NoFeatures);
    }
    if bins < 2 {
        return Err(MetricError::InvalidBins(bins));
    }
    let propensity = model::fit_target(d, d.s(), &Hyperparams::default()).map_err(Box::new)?;
    let scores = propensity.predict_dataset(d, None).map_err(Box::new)?;
    let qb = quantile_bins(&scores, bins);
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (row, &b) in qb.assignment.iter().enumerate() {
        groups.entry(b).or_default().push(row);
    }
    let strata: Vec<Stratum> = groups
        .into_iter()
        .map(|(b, rows)| Stratum {
            key: format!("bin{b}"),
            rows,
        })
        .collect();
    let mut r = conditional_over(d, &outcome, &strata, "propensity_stratified_difference")?;
    for (i, cut) in qb.cuts.iter().enumerate() {
        r.set(format!("boundary[{}]", i + 1), *cut);
    }
    Ok(r)
}

fn weighted_pearson(x: &[f64], s: &[u8], w: &[f64]) -> Option<f64> {
    let total: f64 = w.iter().sum();
    if total <= 0.0 {
        return None;
    }
    let mx = x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / total;
    let ms = s.iter().zip(w).map(|(&a, b)| f64::from(a) * b).sum::<f64>() / total;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for i in 0..x.len() {
        let dx = x[i] - mx;
        let ds = f64::from(s[i]) - ms;
        sxy += w[i] * dx * ds;
        sxx += w[i] * dx * dx;
        syy += w[i] * ds * ds;
    }
    (sxx > 0.0 && syy > 0.0).then(|| (sxy / (sxx * syy).sqrt()).abs().min(1.0))
}

fn cramers_v(codes: &[u32], levels: usize, s: &[u8], w: &[f64]) -> Option<f64> {
    let mut table = vec![[0.0f64; 2]; levels];
    for i in 0..codes.len() {
        table[codes[i] as usize][usize::from(s[i])] += w[i];
    }
    let total: f64 = table.iter().map(|r| r[0] + r[1]).sum();
    let rows: Vec<f64> = table.iter().map(|r| r[0] + r[1]).collect();
    let cols = [
        table.iter().map(|r| r[0]).sum::<f64>(),
        table.iter().map(|r| r[1]).sum::<f64>(),
    ];
    let occupied = rows.iter().filter(|&&r| r > 0.0).count();
    if occupied < 2 || cols[0] <= 0.0 || cols[1] <= 0.0 {
        return None;
    }
    let mut chi2 = 0.0;
    for (r, row) in table.iter().enumerate() {
        if rows[r] <= 0.0 {
            continue;
        }
        for c in 0..2 {
            let expected = rows[r] * cols[c] / total;
            chi2 += (row[c] - expected).powi(2) / expected;
        }
    }
    // min(r − 1, c − 1) = 1 for a binary S.
    Some((chi2 / total).sqrt().min(1.0))
}

/// Association of each feature with S: absolute point-biserial correlation
/// for numeric features, Cramér's V for categorical ones.
pub fn feature_protected_correlation(d: &Dataset) -> Vec<MetricResult> {
    let sizes = d.group_sizes();
    d.schema()
        .features
        .iter()
        .zip(d.columns())
        .map(|(spec, column)| {
            let (measure, value) = match column {
                Column::Numeric(x) => ("point_biserial", weighted_pearson(x, d.s(), d.weights())),
                Column::Categorical { levels, codes } => (
                    "cramers_v",
                    cramers_v(codes, levels.len(), d.s(), d.weights()),
                ),
            };
            let mut r = MetricResult::new(format!("feature_protected_correlation[{}]", spec.name), sizes);
            r.set(measure, value.unwrap_or(0.0));
            match value {
                Some(v) => r.value = Some(v),
                None => {
                    r.caveats
                        .push(format!("constant feature `{}`; reported as 0", spec.name));
                    r.value = Some(0.0);
                }
            }
            r
        })
        .collect()
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::new(), &mut out);
    out
}

/// Group support `P(S=s)` and the share of every conjunction of `S=1` with
/// up to `conjunction_depth` categorical feature levels. The value is the
/// smaller of the two group shares.
pub fn support_report(d: &Dataset, conjunction_depth: usize) -> MetricResult {
    let (n1, n0) = d.group_sizes();
    let mut r = MetricResult::new("support_report", (n1, n0));
    let w = d.weights();
    let total: f64 = w.iter().sum();
    let w1: f64 = (0..d.n()).filter(|&i| d.s()[i] == 1).map(|i| w[i]).sum();
    let share1 = if total > 0.0 { w1 / total } else { 0.0 };
    r.set("share[S=1]", share1);
    r.set("share[S=0]", 1.0 - share1);
    r.set("count[S=1]", n1 as f64);
    r.set("count[S=0]", n0 as f64);
    r.value = Some(share1.min(1.0 - share1));

    let categorical: Vec<(&str, &Vec<String>, &Vec<u32>)> = d
        .schema()
        .features
        .iter()
        .zip(d.columns())
        .filter_map(|(spec, c)| match c {
            Column::Categorical { levels, codes } => Some((spec.name.as_str(), levels, codes)),
            Column::Numeric(_) => None,
        })
        .collect();
    let depth = if conjunction_depth > categorical.len() {
        r.caveats.push(format!(
            "conjunction depth {conjunction_depth} exceeds {} categorical features; clamped",
            categorical.len()
        ));
        categorical.len()
    } else {
        conjunction_depth
    };

    let mut min_share = f64::INFINITY;
    for size in 1..=depth {
        for combo in combinations(categorical.len(), size) {
            let radix: Vec<usize> = combo.iter().map(|&f| categorical[f].1.len()).collect();
            let cells: usize = radix.iter().product();
            let mut counts = vec![0usize; cells];
            let mut weights = vec![0.0f64; cells];
            for i in (0..d.n()).filter(|&i| d.s()[i] == 1) {
                let mut idx = 0;
                for (pos, &f) in combo.iter().enumerate() {
                    idx = idx * radix[pos] + categorical[f].2[i] as usize;
                }
                counts[idx] += 1;
                weights[idx] += w[i];
            }
            for cell in 0..cells {
                let mut rem = cell;
                let mut parts = Vec::with_capacity(size);
                for (pos, &f) in combo.iter().enumerate().rev() {
                    let lvl = rem % radix[pos];
                    rem /= radix[pos];
                    parts.push(format!("{}={}", categorical[f].0, categorical[f].1[lvl]));
                }
                parts.reverse();
                let key = format!("S=1&{}", parts.join("&"));
                let share = if total > 0.0 { weights[cell] / total } else { 0.0 };
                min_share = min_share.min(share);
                r.set(format!("share[{key}]"), share);
                r.set(format!("count[{key}]"), counts[cell] as f64);
            }
        }
    }
    if min_share.is_finite() {
        r.set("min_conjunction_share", min_share);
    }
    r
}
