//! Synthetic datasets with planted discrimination mechanisms, and a
//! two-stage patrol-allocation feedback simulator.
//!
//! Every generator draws a latent merit score per row. Merit drives the
//! label but is never exported as a feature; it is written to the ground
//! truth sidecar instead.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use thiserror::Error;

use crate::dataset::{Dataset, DatasetError, FeatureSpec, Schema};

pub const PROTECTED_COLUMN: &str = "group";
pub const PROTECTED_VALUE: &str = "A";
pub const OTHER_VALUE: &str = "B";
pub const LABEL_COLUMN: &str = "outcome";
pub const REGIONS: [&str; 3] = ["east", "north", "south"];

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid scenario parameter: {0}")]
    InvalidParam(String),
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Data(#[from] DatasetError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    CleanIndependent,
    DirectDiscrimination,
    Redlining,
    OverObservation,
    LowSupport,
    ProxyTarget,
    CensoredFeedback,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 7] = [
        ScenarioKind::CleanIndependent,
        ScenarioKind::DirectDiscrimination,
        ScenarioKind::Redlining,
        ScenarioKind::OverObservation,
        ScenarioKind::LowSupport,
        ScenarioKind::ProxyTarget,
        ScenarioKind::CensoredFeedback,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::CleanIndependent => "clean_independent",
            ScenarioKind::DirectDiscrimination => "direct_discrimination",
            ScenarioKind::Redlining => "redlining",
            ScenarioKind::OverObservation => "over_observation",
            ScenarioKind::LowSupport => "low_support",
            ScenarioKind::ProxyTarget => "proxy_target",
            ScenarioKind::CensoredFeedback => "censored_feedback",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }

    /// Prefix of the audit test ids expected to fail for this kind under the
    /// example thresholds. `Some("")` means no test should fail.
    pub fn designated_failure(self) -> Option<&'static str> {
        match self {
            ScenarioKind::CleanIndependent => Some(""),
            ScenarioKind::DirectDiscrimination | ScenarioKind::OverObservation => {
                Some("D1.outcome.")
            }
            ScenarioKind::Redlining => Some("D2."),
            ScenarioKind::LowSupport => Some("D3."),
            ScenarioKind::ProxyTarget => Some("D1.nuisance_event."),
            ScenarioKind::CensoredFeedback => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioParams {
    /// Planted gap in positive rates (direct, proxy target) or in the
    /// screening score (censored feedback).
    pub gap: f64,
    pub proxy_strength: f64,
    pub protected_share: f64,
    pub observation_multiplier: f64,
    pub mix_ratio: f64,
    pub hire_threshold: f64,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        Self {
            gap: 0.3,
            proxy_strength: 0.9,
            protected_share: 0.5,
            observation_multiplier: 2.0,
            mix_ratio: 0.1,
            hire_threshold: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    pub n: usize,
    pub seed: u64,
    pub params: ScenarioParams,
}

impl ScenarioSpec {
    /// Spec with the documented defaults for `kind`.
    pub fn new(kind: ScenarioKind, n: usize, seed: u64) -> Self {
        let mut params = ScenarioParams::default();
        match kind {
            ScenarioKind::LowSupport => params.protected_share = 0.02,
            ScenarioKind::ProxyTarget => params.gap = 0.2,
            ScenarioKind::CensoredFeedback => params.gap = 0.5,
            _ => {}
        }
        Self {
            kind,
            n,
            seed,
            params,
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let p = &self.params;
        let bad = |m: &str| Err(ScenarioError::InvalidParam(m.to_string()));
        if self.n < 4 {
            return bad("n must be at least 4");
        }
        if !(0.0..=1.0).contains(&p.gap) {
            return bad("gap must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&p.proxy_strength) {
            return bad("proxy_strength must lie in [0, 1]");
        }
        if !(p.protected_share > 0.0 && p.protected_share < 1.0) {
            return bad("protected_share must lie in (0, 1)");
        }
        if !(p.observation_multiplier >= 1.0 && p.observation_multiplier.is_finite()) {
            return bad("observation_multiplier must be >= 1");
        }
        if !(0.0..=1.0).contains(&p.mix_ratio) {
            return bad("mix_ratio must lie in [0, 1]");
        }
        if !(p.hire_threshold > 0.0 && p.hire_threshold < 1.0) {
            return bad("hire_threshold must lie in (0, 1)");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CensoredTruth {
    /// Indexed by S (0 = favored, 1 = protected).
    pub applicants: [usize; 2],
    pub hired: [usize; 2],
    /// Rejected applicants whose latent merit is above zero.
    pub overlooked_good: [usize; 2],
}

/// Planted parameters and latent values accompanying a generated dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub spec: ScenarioSpec,
    pub latent_merit: Vec<f64>,
    pub planted: BTreeMap<String, f64>,
    pub designated_failure: Option<String>,
    pub sub_target_columns: Vec<String>,
    pub censored: Option<CensoredTruth>,
}

#[derive(Clone, Debug)]
pub struct Scenario {
    pub dataset: Dataset,
    pub truth: GroundTruth,
}

fn phi(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Baseline positive-label probability given latent merit, in [0.3, 0.7].
pub fn base_rate(merit: f64) -> f64 {
    0.3 + 0.4 * phi(merit)
}

fn num(x: f64) -> String {
    format!("{x:.6}")
}

struct Latent {
    s: u8,
    merit: f64,
    region: &'static str,
    score: f64,
    experience: f64,
}

fn draw_latent(rng: &mut ChaCha8Rng, share: f64) -> Latent {
    let s = u8::from(rng.random::<f64>() < share);
    let merit: f64 = rng.sample(StandardNormal);
    let region = REGIONS[rng.random_range(0..REGIONS.len())];
    let noise: f64 = rng.sample(StandardNormal);
    let exp_noise: f64 = rng.sample(StandardNormal);
    Latent {
        s,
        merit,
        region,
        score: merit + 0.5 * noise,
        experience: 0.3 * merit + exp_noise,
    }
}

fn bern(rng: &mut ChaCha8Rng, p: f64) -> u8 {
    u8::from(rng.random::<f64>() < p.clamp(0.0, 1.0))
}

/// Generates the dataset and its ground truth. Deterministic in the spec.
pub fn generate(spec: &ScenarioSpec) -> Result<Scenario, ScenarioError> {
    spec.validate()?;
    let p = &spec.params;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut planted = BTreeMap::new();
    let mut sub_targets = Vec::new();
    let mut censored = None;

    let standard = vec![
        FeatureSpec::numeric("score"),
        FeatureSpec::numeric("experience"),
        FeatureSpec::categorical("region"),
    ];
    let mut features = standard.clone();
    let mut extras: Vec<&str> = Vec::new();
    // (s, label, feature cells, extra cells, merit)
    let mut rows: Vec<(u8, u8, Vec<String>, Vec<String>, f64)> = Vec::with_capacity(spec.n);

    match spec.kind {
        ScenarioKind::CleanIndependent | ScenarioKind::DirectDiscrimination => {
            let gap = if spec.kind == ScenarioKind::DirectDiscrimination { p.gap } else { 0.0 };
            planted.insert("gap".into(), gap);
            for _ in 0..spec.n {
                let l = draw_latent(&mut rng, p.protected_share);
                let y = bern(&mut rng, base_rate(l.merit) - gap * f64::from(l.s));
                rows.push((l.s, y, vec![num(l.score), num(l.experience), l.region.into()], vec![], l.merit));
            }
        }
        ScenarioKind::Redlining => {
            let ps = p.proxy_strength;
            let gamma = if ps >= 1.0 { 1e6 } else { ps / (1.0 - ps * ps).sqrt() };
            planted.insert("proxy_strength".into(), ps);
            planted.insert("shift".into(), gamma);
            features = vec![
                FeatureSpec::numeric("neighborhood"),
                FeatureSpec::numeric("experience"),
                FeatureSpec::categorical("region"),
            ];
            for _ in 0..spec.n {
                let l = draw_latent(&mut rng, p.protected_share);
                let y = bern(&mut rng, base_rate(l.merit));
                let neighborhood = l.merit - gamma * (2.0 * f64::from(l.s) - 1.0);
                rows.push((l.s, y, vec![num(neighborhood), num(l.experience), l.region.into()], vec![], l.merit));
            }
        }
        ScenarioKind::OverObservation => {
            let record0 = 0.5;
            let record1 = (0.5 * p.observation_multiplier).min(1.0);
            planted.insert("record_rate_favored".into(), record0);
            planted.insert("record_rate_protected".into(), record1);
            for _ in 0..spec.n {
                let l = draw_latent(&mut rng, p.protected_share);
                let event = bern(&mut rng, 1.0 - base_rate(l.merit));
                let recorded = event == 1 && bern(&mut rng, if l.s == 1 { record1 } else { record0 }) == 1;
                rows.push((l.s, u8::from(!recorded), vec![num(l.score), num(l.experience), l.region.into()], vec![], l.merit));
            }
        }
        ScenarioKind::LowSupport => {
            planted.insert("protected_share".into(), p.protected_share);
            let latents: Vec<Latent> = (0..spec.n).map(|_| draw_latent(&mut rng, p.protected_share)).collect();
            // top half by merit within every (S, region) cell is positive
            let mut y = vec![0u8; spec.n];
            let mut cells: BTreeMap<(u8, &str), Vec<usize>> = BTreeMap::new();
            for (i, l) in latents.iter().enumerate() {
                cells.entry((l.s, l.region)).or_default().push(i);
            }
            for idx in cells.values_mut() {
                idx.sort_by(|&a, &b| latents[b].merit.total_cmp(&latents[a].merit).then(a.cmp(&b)));
                for &i in &idx[..idx.len() / 2] {
                    y[i] = 1;
                }
            }
            for (l, y) in latents.iter().zip(y) {
                rows.push((l.s, y, vec![num(l.score), num(l.experience), l.region.into()], vec![], l.merit));
            }
        }
        ScenarioKind::ProxyTarget => {
            planted.insert("mix_ratio".into(), p.mix_ratio);
            planted.insert("gap".into(), p.gap);
            extras = vec!["nuisance_event", "primary_event"];
            sub_targets = extras.iter().map(|s| s.to_string()).collect();
            for _ in 0..spec.n {
                let l = draw_latent(&mut rng, p.protected_share);
                let nuisance = bern(&mut rng, 0.5 - p.gap * f64::from(l.s));
                let primary = bern(&mut rng, base_rate(l.merit));
                let y = if rng.random::<f64>() < p.mix_ratio { nuisance } else { primary };
                rows.push((
                    l.s,
                    y,
                    vec![num(l.score), num(l.experience), l.region.into()],
                    vec![nuisance.to_string(), primary.to_string()],
                    l.merit,
                ));
            }
        }
        ScenarioKind::CensoredFeedback => {
            planted.insert("gap".into(), p.gap);
            planted.insert("hire_threshold".into(), p.hire_threshold);
            let mut truth = CensoredTruth::default();
            for _ in 0..spec.n {
                let l = draw_latent(&mut rng, p.protected_share);
                let noise: f64 = rng.sample(StandardNormal);
                let screen = phi(l.merit + 0.5 * noise - p.gap * f64::from(l.s));
                let y = bern(&mut rng, base_rate(l.merit));
                let g = usize::from(l.s);
                truth.applicants[g] += 1;
                if screen >= p.hire_threshold {
                    truth.hired[g] += 1;
                    rows.push((l.s, y, vec![num(l.score), num(l.experience), l.region.into()], vec![], l.merit));
                } else if l.merit > 0.0 {
                    truth.overlooked_good[g] += 1;
                }
            }
            censored = Some(truth);
        }
    }

    let schema = Schema::new(
        (PROTECTED_COLUMN, PROTECTED_VALUE),
        (LABEL_COLUMN, "1"),
        features.clone(),
    )?;
    let mut header = vec![PROTECTED_COLUMN.to_string(), LABEL_COLUMN.to_string()];
    header.extend(features.iter().map(|f| f.name.clone()));
    header.extend(extras.iter().map(|s| s.to_string()));
    let mut merit = Vec::with_capacity(rows.len());
    let records: Vec<Vec<String>> = rows
        .into_iter()
        .map(|(s, y, f, e, m)| {
            merit.push(m);
            let mut r = vec![
                if s == 1 { PROTECTED_VALUE } else { OTHER_VALUE }.to_string(),
                y.to_string(),
            ];
            r.extend(f);
            r.extend(e);
            r
        })
        .collect();
    let dataset = Dataset::from_table(schema, &header, &records)?;
    Ok(Scenario {
        dataset,
        truth: GroundTruth {
            spec: spec.clone(),
            latent_merit: merit,
            planted,
            designated_failure: spec.kind.designated_failure().map(str::to_string),
            sub_target_columns: sub_targets,
            censored,
        },
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservationRule {
    /// Nuisance events are recorded in proportion to a zone's patrol share.
    OnlyWhenPatrolled,
    /// Every event is recorded.
    Always,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeedbackSimConfig {
    pub zones: usize,
    pub latent_violent_rates: Vec<f64>,
    pub latent_nuisance_rates: Vec<f64>,
    pub patrol_budget: f64,
    pub rounds: usize,
    pub observation: ObservationRule,
    /// Minimum patrols per zone.
    #[serde(default)]
    pub floor: f64,
    /// Patrols per zone in the first round; uniform when absent.
    #[serde(default)]
    pub initial_allocation: Option<Vec<f64>>,
    #[serde(default = "default_smoothing")]
    pub smoothing: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_smoothing() -> f64 {
    1.0
}

impl FeedbackSimConfig {
    pub fn validate(&self) -> Result<Vec<f64>, ScenarioError> {
        let bad = |m: String| Err(ScenarioError::InvalidConfig(m));
        if self.zones == 0 {
            return bad("zones must be at least 1".into());
        }
        if self.latent_violent_rates.len() != self.zones || self.latent_nuisance_rates.len() != self.zones {
            return bad("one violent and one nuisance rate per zone".into());
        }
        let rates_ok = |r: &[f64]| r.iter().all(|v| v.is_finite() && *v >= 0.0);
        if !rates_ok(&self.latent_violent_rates) || !rates_ok(&self.latent_nuisance_rates) {
            return bad("rates must be finite and >= 0".into());
        }
        if !(self.patrol_budget > 0.0 && self.patrol_budget.is_finite()) {
            return bad("patrol_budget must be > 0".into());
        }
        let uniform = self.patrol_budget / self.zones as f64;
        if !(self.floor >= 0.0 && self.floor <= uniform) {
            return bad(format!("floor must lie in [0, budget/zones = {uniform}]"));
        }
        if !(self.smoothing >= 0.0 && self.smoothing.is_finite()) {
            return bad("smoothing must be >= 0".into());
        }
        let initial = match &self.initial_allocation {
            None => vec![uniform; self.zones],
            Some(a) => {
                if a.len() != self.zones || a.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                    return bad("initial_allocation needs one nonnegative value per zone".into());
                }
                let total: f64 = a.iter().sum();
                if (total - self.patrol_budget).abs() > 1e-9 * self.patrol_budget {
                    return bad(format!("initial_allocation sums to {total}, budget is {}", self.patrol_budget));
                }
                a.clone()
            }
        };
        Ok(initial)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimRound {
    pub round: usize,
    /// Patrols per zone used this round.
    pub allocation: Vec<f64>,
    pub shares: Vec<f64>,
    pub crimes: Vec<u64>,
    pub recorded: Vec<u64>,
    /// Smoothed cumulative recorded counts after this round.
    pub predicted: Vec<f64>,
    /// Largest minus smallest allocation share.
    pub disparity: f64,
}

fn poisson(rng: &mut ChaCha8Rng, rate: f64) -> u64 {
    if rate <= 0.0 {
        return 0;
    }
    Poisson::new(rate).expect("rate validated").sample(rng) as u64
}

/// Allocation proportional to predicted counts, with every zone receiving
/// at least `floor` patrols.
pub fn allocate(predicted: &[f64], budget: f64, floor: f64) -> Vec<f64> {
    let zones = predicted.len() as f64;
    let free = budget - zones * floor;
    let total: f64 = predicted.iter().sum();
    predicted
        .iter()
        .map(|p| {
            let share = if total > 0.0 { p / total } else { 1.0 / zones };
            floor + free * share
        })
        .collect()
}

/// Runs the allocate / observe / re-estimate loop for `rounds` rounds.
pub fn run_feedback_sim(cfg: &FeedbackSimConfig) -> Result<Vec<SimRound>, ScenarioError> {
    let mut allocation = cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut counts = vec![0u64; cfg.zones];
    let mut series = Vec::with_capacity(cfg.rounds);
    for round in 0..cfg.rounds {
        let shares: Vec<f64> = allocation.iter().map(|a| a / cfg.patrol_budget).collect();
        let mut crimes = Vec::with_capacity(cfg.zones);
        let mut recorded = Vec::with_capacity(cfg.zones);
        for z in 0..cfg.zones {
            let violent = poisson(&mut rng, cfg.latent_violent_rates[z]);
            let nuisance = poisson(&mut rng, cfg.latent_nuisance_rates[z]);
            let seen = match cfg.observation {
                ObservationRule::Always => nuisance,
                ObservationRule::OnlyWhenPatrolled => {
                    let p = shares[z].clamp(0.0, 1.0);
                    if nuisance == 0 || p == 0.0 {
                        0
                    } else {
                        Binomial::new(nuisance, p).expect("p in [0, 1]").sample(&mut rng)
                    }
                }
            };
            crimes.push(violent + nuisance);
            recorded.push(violent + seen);
            counts[z] += violent + seen;
        }
        let predicted: Vec<f64> = counts.iter().map(|&c| c as f64 + cfg.smoothing).collect();
        let max = shares.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = shares.iter().cloned().fold(f64::INFINITY, f64::min);
        let next = allocate(&predicted, cfg.patrol_budget, cfg.floor);
        series.push(SimRound {
            round,
            allocation: std::mem::replace(&mut allocation, next),
            shares,
            crimes,
            recorded,
            predicted,
            disparity: max - min,
        });
    }
    Ok(series)
}
