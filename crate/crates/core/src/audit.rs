//! Staged audit: data tests (D1-D3) and pre-deployment model tests (M1-M4)
//! checked against configured thresholds, plus report rendering.
//!
//! A failed metric computation never aborts an audit. It becomes a
//! `skipped` test carrying the error text.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value as Json;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::counterfactual::flip_audit;
use crate::dataset::{Dataset, Outcome, Stratification};
use crate::metrics::{self, MetricResult};
use crate::model::{self, LogisticModel};

pub const CONFIG_VERSION: u32 = 1;
pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum AuditError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("config document: {0}")]
    ConfigFormat(#[from] serde_json::Error),
    #[error("cannot read {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("unknown report format `{0}` (expected json or markdown)")]
    UnknownFormat(String),
    #[error("invalid report: {0}")]
    InvalidReport(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KnnThreshold {
    pub k: usize,
    pub t: f64,
    pub max_flagged: f64,
}

/// Every limit is optional; an omitted limit skips its test.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub max_abs_data_md: Option<f64>,
    pub max_abs_normalized_md: Option<f64>,
    pub max_abs_unexplained: Option<f64>,
    pub max_feature_correlation: Option<f64>,
    pub min_group_support: Option<f64>,
    pub min_conjunction_support: Option<f64>,
    pub max_abs_causal_md: Option<f64>,
    pub max_abs_decision_md: Option<f64>,
    pub max_group_tpr_gap: Option<f64>,
    pub max_group_fpr_gap: Option<f64>,
    pub knn: Option<KnnThreshold>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditConfig {
    #[serde(default = "config_version")]
    pub version: u32,
    #[serde(default)]
    pub thresholds: Thresholds,
    #[serde(default)]
    pub stratification: Option<Stratification>,
    /// Extra columns holding component events of the label; each is audited
    /// like the label, with the label's positive literal.
    #[serde(default)]
    pub sub_target_columns: Vec<String>,
    #[serde(default = "default_warn_fraction")]
    pub warn_fraction: f64,
    #[serde(default = "default_depth")]
    pub conjunction_depth: usize,
    #[serde(default)]
    pub seed: u64,
}

fn config_version() -> u32 {
    CONFIG_VERSION
}

fn default_warn_fraction() -> f64 {
    1.0
}

fn default_depth() -> usize {
    1
}

impl AuditConfig {
    /// Illustrative limits used by the bundled examples. They are not legal
    /// standards.
    pub fn example() -> Self {
        Self {
            version: CONFIG_VERSION,
            thresholds: Thresholds {
                max_abs_data_md: Some(0.05),
                max_abs_normalized_md: Some(0.1),
                max_abs_unexplained: Some(0.05),
                max_feature_correlation: Some(0.1),
                min_group_support: Some(0.05),
                min_conjunction_support: Some(0.01),
                max_abs_causal_md: Some(0.05),
                max_abs_decision_md: Some(0.05),
                max_group_tpr_gap: Some(0.1),
                max_group_fpr_gap: Some(0.1),
                knn: Some(KnnThreshold {
                    k: 10,
                    t: 0.3,
                    max_flagged: 0.1,
                }),
            },
            stratification: Some(Stratification::Exact {
                columns: vec!["region".into()],
            }),
            sub_target_columns: Vec::new(),
            warn_fraction: 0.8,
            conjunction_depth: 1,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), AuditError> {
        let bad = |m: String| Err(AuditError::InvalidConfig(m));
        if self.version != CONFIG_VERSION {
            return bad(format!("unsupported config version {}", self.version));
        }
        if !(self.warn_fraction > 0.0 && self.warn_fraction <= 1.0) {
            return bad("warn_fraction must lie in (0, 1]".into());
        }
        let t = &self.thresholds;
        let named = [
            ("max_abs_data_md", t.max_abs_data_md),
            ("max_abs_normalized_md", t.max_abs_normalized_md),
            ("max_abs_unexplained", t.max_abs_unexplained),
            ("max_feature_correlation", t.max_feature_correlation),
            ("min_group_support", t.min_group_support),
            ("min_conjunction_support", t.min_conjunction_support),
            ("max_abs_causal_md", t.max_abs_causal_md),
            ("max_abs_decision_md", t.max_abs_decision_md),
            ("max_group_tpr_gap", t.max_group_tpr_gap),
            ("max_group_fpr_gap", t.max_group_fpr_gap),
            ("knn.max_flagged", t.knn.as_ref().map(|k| k.max_flagged)),
        ];
        for (name, v) in named {
            if let Some(v) = v {
                if !(v >= 0.0 && v.is_finite()) {
                    return bad(format!("{name} must be a finite value >= 0"));
                }
            }
        }
        if let Some(k) = &t.knn {
            if k.k == 0 || !(0.0..=1.0).contains(&k.t) {
                return bad("knn needs k >= 1 and t in [0, 1]".into());
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, AuditError> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, AuditError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| AuditError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// SHA-256 over the canonical JSON form.
    pub fn hash(&self) -> String {
        sha256_hex(canonical_json(&serde_json::to_value(self).expect("config serializes")).as_bytes())
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Warn,
    Fail,
    Skipped,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Warn,
    Fail,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Pass => "pass",
            Verdict::Warn => "warn",
            Verdict::Fail => "fail",
        }
    }
}

/// Fail if any test fails, else warn if any warns, else pass.
pub fn verdict(statuses: impl IntoIterator<Item = Status>) -> Verdict {
    let mut v = Verdict::Pass;
    for s in statuses {
        match s {
            Status::Fail => return Verdict::Fail,
            Status::Warn => v = Verdict::Warn,
            _ => {}
        }
    }
    v
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "bound", content = "value")]
pub enum Limit {
    /// Fails when the absolute observed value exceeds the limit.
    Max(f64),
    /// Fails when the observed value falls below the limit.
    Min(f64),
}

impl Limit {
    pub fn judge(self, observed: f64, warn_fraction: f64) -> Status {
        match self {
            Limit::Max(t) => {
                let a = observed.abs();
                if a > t {
                    Status::Fail
                } else if a > t * warn_fraction {
                    Status::Warn
                } else {
                    Status::Pass
                }
            }
            Limit::Min(t) => {
                if observed < t {
                    Status::Fail
                } else if observed < t / warn_fraction {
                    Status::Warn
                } else {
                    Status::Pass
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditTest {
    pub id: String,
    pub name: String,
    pub metric: Option<MetricResult>,
    /// The number compared against the limit.
    pub observed: Option<f64>,
    pub threshold: Option<Limit>,
    pub status: Status,
    /// For signed difference tests: whether the protected group receives
    /// the positive outcome less often.
    pub protected_disadvantaged: Option<bool>,
    pub error: Option<String>,
    pub notes: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub dataset_fingerprint: String,
    pub config_hash: String,
    pub model_hash: Option<String>,
    pub decision_threshold: Option<f64>,
    pub tool_version: String,
    /// Seconds since the Unix epoch from `SOURCE_DATE_EPOCH`, else absent so
    /// that replays stay byte-identical.
    pub timestamp: Option<u64>,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub version: u32,
    pub stage: String,
    pub tests: Vec<AuditTest>,
    pub verdict: Verdict,
    pub metadata: Metadata,
    pub caveats: Vec<String>,
}

const UNOBSERVED_CAVEAT: &str =
    "attributes that were never recorded cannot be controlled for; conditional results assume the stratifying columns capture the legitimate differences";

struct Builder<'a> {
    cfg: &'a AuditConfig,
    tests: Vec<AuditTest>,
}

impl<'a> Builder<'a> {
    fn push(
        &mut self,
        id: String,
        name: &str,
        result: Result<MetricResult, String>,
        limit: Option<Limit>,
        pick: impl Fn(&MetricResult) -> Option<f64>,
        signed: bool,
    ) {
        let mut t = AuditTest {
            id,
            name: name.to_string(),
            metric: None,
            observed: None,
            threshold: limit,
            status: Status::Skipped,
            protected_disadvantaged: None,
            error: None,
            notes: Vec::new(),
        };
        match result {
            Err(e) => t.error = Some(e),
            Ok(m) => {
                t.observed = pick(&m);
                if signed {
                    t.protected_disadvantaged = t.observed.map(|v| v < 0.0);
                }
                match (limit, t.observed) {
                    (None, _) => t.notes.push("no threshold configured; test disabled".into()),
                    (Some(_), None) => t.notes.push("metric produced no value".into()),
                    (Some(l), Some(v)) => t.status = l.judge(v, self.cfg.warn_fraction),
                }
                t.metric = Some(m);
            }
        }
        self.tests.push(t);
    }

    fn finish(self, stage: &str, metadata: Metadata, mut caveats: Vec<String>) -> AuditReport {
        caveats.push(UNOBSERVED_CAVEAT.into());
        AuditReport {
            version: REPORT_VERSION,
            stage: stage.into(),
            verdict: verdict(self.tests.iter().map(|t| t.status)),
            tests: self.tests,
            metadata,
            caveats,
        }
    }
}

fn value(m: &MetricResult) -> Option<f64> {
    m.value
}

fn err_text(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn source_date_epoch() -> Option<u64> {
    std::env::var("SOURCE_DATE_EPOCH").ok()?.trim().parse().ok()
}

fn metadata(d: &Dataset, cfg: &AuditConfig) -> Metadata {
    Metadata {
        dataset_fingerprint: d.fingerprint(),
        config_hash: cfg.hash(),
        model_hash: None,
        decision_threshold: None,
        tool_version: env!("CARGO_PKG_VERSION").into(),
        timestamp: source_date_epoch(),
        seed: cfg.seed,
    }
}

/// D1 tests for one binary target.
fn difference_tests(b: &mut Builder, d: &Dataset, target: &str, outcome: Result<Outcome, String>) {
    let th = b.cfg.thresholds.clone();
    let id = |s: &str| format!("D1.{target}.{s}");
    let run = |f: &dyn Fn(Outcome) -> Result<MetricResult, metrics::MetricError>| match &outcome {
        Ok(o) => f(*o).map_err(err_text),
        Err(e) => Err(e.clone()),
    };
    b.push(id("mean"), "mean difference", run(&|o| metrics::mean_difference(d, o)), th.max_abs_data_md.map(Limit::Max), value, true);
    b.push(
        id("normalized"),
        "normalized mean difference",
        run(&|o| metrics::normalized_mean_difference(d, o)),
        th.max_abs_normalized_md.map(Limit::Max),
        value,
        true,
    );
    let strat = b.cfg.stratification.clone();
    let stratified = |f: &dyn Fn(Outcome, &Stratification) -> Result<MetricResult, metrics::MetricError>| match &strat {
        None => Err("no stratification configured".to_string()),
        Some(s) => run(&|o| f(o, s)),
    };
    b.push(
        id("conditional"),
        "conditional mean difference",
        stratified(&|o, s| metrics::conditional_mean_difference(d, o, s)),
        th.max_abs_data_md.map(Limit::Max),
        value,
        true,
    );
    b.push(
        id("unexplained"),
        "unexplained difference",
        stratified(&|o, s| metrics::unexplained_difference(d, o, s)),
        th.max_abs_unexplained.map(Limit::Max),
        value,
        true,
    );
}

/// Data-stage tests on the labels (and configured sub-targets) of `d`.
pub fn audit_data(d: &Dataset, cfg: &AuditConfig) -> AuditReport {
    let mut b = Builder { cfg, tests: Vec::new() };
    let label = d.schema().label.clone();
    difference_tests(&mut b, d, &label.column, Ok(Outcome::Label));
    for col in &cfg.sub_target_columns {
        match d.binary_extra(col, &label.positive) {
            Ok(v) => difference_tests(&mut b, d, col, Ok(Outcome::Vector(&v))),
            Err(e) => difference_tests(&mut b, d, col, Err(e.to_string())),
        }
    }
    let th = &cfg.thresholds;
    for m in metrics::feature_protected_correlation(d) {
        let feature = m.name.trim_start_matches("feature_protected_correlation[").trim_end_matches(']').to_string();
        b.push(format!("D2.{feature}"), "feature-protected correlation", Ok(m), th.max_feature_correlation.map(Limit::Max), value, false);
    }
    let support = metrics::support_report(d, cfg.conjunction_depth);
    b.push("D3.group_support".into(), "protected group support", Ok(support.clone()), th.min_group_support.map(Limit::Min), value, false);
    b.push(
        "D3.conjunction_support".into(),
        "smallest protected conjunction support",
        Ok(support),
        th.min_conjunction_support.map(Limit::Min),
        |m| m.component("min_conjunction_share"),
        false,
    );
    b.finish("data", metadata(d, cfg), Vec::new())
}

/// Pre-deployment tests of a model's decisions at `threshold` on a holdout.
pub fn audit_model(m: &LogisticModel, holdout: &Dataset, threshold: f64, cfg: &AuditConfig) -> AuditReport {
    let mut b = Builder { cfg, tests: Vec::new() };
    let th = cfg.thresholds.clone();
    let sizes = holdout.group_sizes();
    let flip = flip_audit(m, holdout, threshold, cfg.stratification.as_ref())
        .map(|r| r.to_metric(sizes))
        .map_err(err_text);
    b.push("M1.flip_audit".into(), "counterfactual flip audit", flip, th.max_abs_causal_md.map(Limit::Max), value, true);

    let decisions = m.decide_dataset(holdout, threshold).map_err(err_text);
    let with_decisions = |f: &dyn Fn(Outcome) -> Result<MetricResult, metrics::MetricError>| match &decisions {
        Ok(a) => f(Outcome::Vector(a)).map_err(err_text),
        Err(e) => Err(e.clone()),
    };
    b.push(
        "M2.decision_mean".into(),
        "decision mean difference",
        with_decisions(&|o| metrics::mean_difference(holdout, o)),
        th.max_abs_decision_md.map(Limit::Max),
        value,
        true,
    );
    b.push(
        "M2.decision_normalized".into(),
        "decision normalized mean difference",
        with_decisions(&|o| metrics::normalized_mean_difference(holdout, o)),
        th.max_abs_decision_md.map(Limit::Max),
        value,
        true,
    );

    let gaps = decisions.clone().and_then(|a| model::evaluate_decisions(holdout, &a).map_err(err_text));
    let gap_metric = |name: &str, pick: fn(&model::Evaluation) -> (Option<f64>, Option<f64>)| {
        gaps.clone().map(|e| {
            let (p, f) = pick(&e);
            let mut r = MetricResult::new(name, sizes);
            if let (Some(p), Some(f)) = (p, f) {
                r.set("protected", p);
                r.set("favored", f);
                r.value = Some(p - f);
            } else {
                r.caveats.extend(e.caveats.iter().cloned());
            }
            r
        })
    };
    b.push(
        "M3.tpr_gap".into(),
        "true positive rate gap",
        gap_metric("tpr_gap", |e| (e.protected.tpr, e.favored.tpr)),
        th.max_group_tpr_gap.map(Limit::Max),
        value,
        true,
    );
    b.push(
        "M3.fpr_gap".into(),
        "false positive rate gap",
        gap_metric("fpr_gap", |e| (e.protected.fpr, e.favored.fpr)),
        th.max_group_fpr_gap.map(Limit::Max),
        value,
        true,
    );

    match &th.knn {
        Some(k) => b.push(
            "M4.knn".into(),
            "k-NN situation test on decisions",
            with_decisions(&|o| metrics::knn_situation_test(holdout, o, k.k, k.t)),
            Some(Limit::Max(k.max_flagged)),
            value,
            false,
        ),
        None => b.push(
            "M4.knn".into(),
            "k-NN situation test on decisions",
            Err("no knn settings configured".into()),
            None,
            value,
            false,
        ),
    }
    let mut meta = metadata(holdout, cfg);
    meta.model_hash = Some(sha256_hex(m.to_json().as_bytes()));
    meta.decision_threshold = Some(threshold);
    let mut caveats = Vec::new();
    if m.uses_protected() {
        caveats.push("the model takes the protected attribute as an input (disparate treatment risk)".into());
    }
    b.finish("model", meta, caveats)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Markdown,
}

impl std::str::FromStr for ReportFormat {
    type Err = AuditError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(Self::Json),
            "md" | "markdown" => Ok(Self::Markdown),
            other => Err(AuditError::UnknownFormat(other.into())),
        }
    }
}

/// Float text with 12 significant digits.
pub fn format_float(x: f64) -> Option<String> {
    if !x.is_finite() {
        return None;
    }
    let rounded: f64 = format!("{x:.11e}").parse().expect("formatted float parses");
    if rounded == 0.0 {
        return Some("0".into());
    }
    let a = rounded.abs();
    Some(if !(1e-6..1e15).contains(&a) {
        format!("{rounded:e}")
    } else {
        format!("{rounded}")
    })
}

fn write_canonical(v: &Json, indent: usize, out: &mut String) {
    let pad = |n: usize| "  ".repeat(n);
    match v {
        Json::Null => out.push_str("null"),
        Json::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Json::Number(n) => {
            if n.is_f64() {
                match format_float(n.as_f64().expect("f64 number")) {
                    Some(s) => out.push_str(&s),
                    None => out.push_str("null"),
                }
            } else {
                out.push_str(&n.to_string());
            }
        }
        Json::String(s) => out.push_str(&serde_json::to_string(s).expect("string serializes")),
        Json::Array(items) => {
            if items.is_empty() {
                out.push_str("[]");
                return;
            }
            out.push_str("[\n");
            for (i, item) in items.iter().enumerate() {
                out.push_str(&pad(indent + 1));
                write_canonical(item, indent + 1, out);
                out.push_str(if i + 1 < items.len() { ",\n" } else { "\n" });
            }
            out.push_str(&pad(indent));
            out.push(']');
        }
        Json::Object(map) => {
            if map.is_empty() {
                out.push_str("{}");
                return;
            }
            let sorted: BTreeMap<&String, &Json> = map.iter().collect();
            out.push_str("{\n");
            for (i, (k, item)) in sorted.iter().enumerate() {
                out.push_str(&pad(indent + 1));
                out.push_str(&serde_json::to_string(k).expect("key serializes"));
                out.push_str(": ");
                write_canonical(item, indent + 1, out);
                out.push_str(if i + 1 < sorted.len() { ",\n" } else { "\n" });
            }
            out.push_str(&pad(indent));
            out.push('}');
        }
    }
}

/// Sorted keys, two-space indent, floats at 12 significant digits.
pub fn canonical_json(v: &Json) -> String {
    let mut out = String::new();
    write_canonical(v, 0, &mut out);
    out.push('\n');
    out
}

fn fmt_opt(v: Option<f64>) -> String {
    v.and_then(format_float).unwrap_or_else(|| "-".into())
}

fn render_markdown(r: &AuditReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# Audit report ({} stage)\n", r.stage);
    let _ = writeln!(s, "**Overall verdict: {}**\n", r.verdict.as_str().to_uppercase());
    s.push_str("| id | test | observed | limit | protected disadvantaged | status |\n");
    s.push_str("|---|---|---|---|---|---|\n");
    for t in &r.tests {
        let limit = match t.threshold {
            Some(Limit::Max(v)) => format!("abs <= {}", fmt_opt(Some(v))),
            Some(Limit::Min(v)) => format!(">= {}", fmt_opt(Some(v))),
            None => "-".into(),
        };
        let disadvantaged = match t.protected_disadvantaged {
            Some(true) => "yes",
            Some(false) => "no",
            None => "-",
        };
        let status = match t.status {
            Status::Pass => "pass",
            Status::Warn => "WARN",
            Status::Fail => "FAIL",
            Status::Skipped => "skipped",
        };
        let _ = writeln!(s, "| {} | {} | {} | {} | {} | {} |", t.id, t.name, fmt_opt(t.observed), limit, disadvantaged, status);
    }
    s.push_str("\n## Caveats\n\n");
    for c in &r.caveats {
        let _ = writeln!(s, "- {c}");
    }
    for t in &r.tests {
        if let Some(e) = &t.error {
            let _ = writeln!(s, "- {}: error: {e}", t.id);
        }
        for n in &t.notes {
            let _ = writeln!(s, "- {}: {n}", t.id);
        }
        if let Some(m) = &t.metric {
            for c in &m.caveats {
                let _ = writeln!(s, "- {}: {c}", t.id);
            }
        }
    }
    let m = &r.metadata;
    s.push_str("\n## Metadata\n\n");
    let _ = writeln!(s, "- dataset fingerprint: `{}`", m.dataset_fingerprint);
    let _ = writeln!(s, "- config hash: `{}`", m.config_hash);
    if let Some(h) = &m.model_hash {
        let _ = writeln!(s, "- model hash: `{h}`");
    }
    if let Some(t) = m.decision_threshold {
        let _ = writeln!(s, "- decision threshold: {}", fmt_opt(Some(t)));
    }
    let _ = writeln!(s, "- tool version: {}", m.tool_version);
    let _ = writeln!(s, "- seed: {}", m.seed);
    if let Some(ts) = m.timestamp {
        let _ = writeln!(s, "- timestamp (unix): {ts}");
    }
    s
}

pub fn render_report(r: &AuditReport, format: ReportFormat) -> Result<Vec<u8>, AuditError> {
    if r.tests.is_empty() {
        return Err(AuditError::InvalidReport("report has no tests".into()));
    }
    let expected = verdict(r.tests.iter().map(|t| t.status));
    if expected != r.verdict {
        return Err(AuditError::InvalidReport(format!(
            "verdict {} disagrees with test statuses ({})",
            r.verdict.as_str(),
            expected.as_str()
        )));
    }
    Ok(match format {
        ReportFormat::Json => canonical_json(&serde_json::to_value(r).expect("report serializes")).into_bytes(),
        ReportFormat::Markdown => render_markdown(r).into_bytes(),
    })
}

pub fn parse_report(text: &str) -> Result<AuditReport, AuditError> {
    Ok(serde_json::from_str(text)?)
}
