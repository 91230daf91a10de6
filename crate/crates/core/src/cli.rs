//! Command-line front end.
//!
//! Exit codes: 0 success or audit pass, 1 operational error, 2 audit fail,
//! 3 audit warn.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::audit::{self, AuditConfig, AuditReport, ReportFormat, Status, Verdict};
use crate::dataset::{self, Dataset, Schema};
use crate::mitigate::{self, ThresholdTarget, TuneOptions};
use crate::model::{self, Hyperparams, LogisticModel};
use crate::scenarios::{self, FeedbackSimConfig, ScenarioKind, ScenarioParams, ScenarioSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_FAIL: i32 = 2;
pub const EXIT_WARN: i32 = 3;

const LEGAL_NOTICE: &str = "\
WARNING: --include-protected feeds the protected attribute to the model.
Decisions that depend directly on protected-class membership are disparate
treatment and carry a serious risk of legal liability. Use such a model only
to demonstrate or test the counterfactual flip audit.";

#[derive(Parser, Debug)]
#[command(name = "fairaudit", version, about = "Discrimination metrics, mitigation and staged audits for binary decisions")]
struct Cli {
    /// Dataset schema (JSON)
    #[arg(long, global = true)]
    schema: Option<PathBuf>,
    /// Audit configuration (JSON)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random choice
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Primary output file (written atomically)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Report format
    #[arg(long, global = true, value_enum)]
    format: Option<FormatArg>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FormatArg {
    Json,
    #[value(alias = "markdown")]
    Md,
}

impl From<FormatArg> for ReportFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Json => ReportFormat::Json,
            FormatArg::Md => ReportFormat::Markdown,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the data-stage audit on a CSV file
    AuditData { csv: PathBuf },
    /// Train the logistic model
    Train(TrainArgs),
    /// Run the model-stage audit on a holdout CSV
    AuditModel {
        model: PathBuf,
        csv: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
    },
    /// Apply a mitigation method
    Mitigate(MitigateArgs),
    /// Run the patrol-allocation feedback simulation
    Simulate {
        sim_config: PathBuf,
        /// Also write a per-round CSV table here
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Generate a synthetic scenario dataset
    GenScenario {
        kind: String,
        #[arg(long, default_value_t = 10_000)]
        n: usize,
        /// Scenario parameters as inline JSON or a path to a JSON file
        #[arg(long)]
        params: Option<String>,
    },
    /// Re-render a JSON report
    Render { report: PathBuf },
}

#[derive(Args, Debug)]
struct TrainArgs {
    csv: PathBuf,
    #[arg(long)]
    l2: Option<f64>,
    #[arg(long)]
    fairness: Option<f64>,
    #[arg(long)]
    cost_fp: Option<f64>,
    #[arg(long)]
    cost_fn: Option<f64>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    include_protected: bool,
    /// Where to write the model; defaults to --out
    #[arg(long)]
    model_out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum TargetArg {
    DemographicParity,
    EqualOpportunity,
}

#[derive(Args, Debug)]
struct MitigateArgs {
    /// pre:reweight | pre:resample | pre:massage | post:thresholds | in:tune
    method: String,
    csv: PathBuf,
    /// Trained model (post:thresholds) or ranker (pre:massage)
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "demographic-parity")]
    target: TargetArg,
    #[arg(long, default_value_t = 0.02)]
    epsilon: f64,
    #[arg(long, default_value_t = 0.01)]
    grid_step: f64,
    /// Validation CSV for in:tune; a stratified 30% split of the input otherwise
    #[arg(long)]
    validation: Option<PathBuf>,
    /// Comma-separated fairness weights for in:tune
    #[arg(long, value_delimiter = ',', default_value = "0,1,10,100")]
    grid: Vec<f64>,
    #[arg(long, default_value_t = 0.05)]
    max_accuracy_loss: f64,
    #[arg(long, default_value_t = 0.0)]
    md_tolerance: f64,
    /// Where to write the mitigation record for pre: methods
    #[arg(long)]
    record: Option<PathBuf>,
}

/// Writes `bytes` to a temporary file beside `path` and renames it into
/// place, so a failure never leaves a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)
        .with_context(|| format!("cannot create a temporary file in {}", dir.display()))?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path)
        .map_err(|e| anyhow!("cannot write {}: {}", path.display(), e.error))?;
    Ok(())
}

fn json_bytes<T: Serialize>(v: &T) -> Vec<u8> {
    audit::canonical_json(&serde_json::to_value(v).expect("value serializes")).into_bytes()
}

struct Ctx {
    schema: Option<PathBuf>,
    config: Option<PathBuf>,
    seed: u64,
    out: Option<PathBuf>,
    format: Option<FormatArg>,
}

impl Ctx {
    fn schema(&self) -> Result<Schema> {
        let path = self.schema.as_ref().ok_or_else(|| anyhow!("--schema is required"))?;
        Ok(Schema::from_path(path)?)
    }

    fn load(&self, csv: &Path) -> Result<Dataset> {
        let schema = self.schema()?;
        dataset::load_csv(csv, &schema).with_context(|| format!("loading {}", csv.display()))
    }

    fn config(&self) -> Result<AuditConfig> {
        let path = self.config.as_ref().ok_or_else(|| anyhow!("--config is required"))?;
        let mut cfg = AuditConfig::from_path(path)?;
        cfg.seed = self.seed;
        Ok(cfg)
    }

    fn require_out(&self) -> Result<&Path> {
        self.out.as_deref().ok_or_else(|| anyhow!("--out is required"))
    }

    /// Writes to --out when given, otherwise to standard output.
    fn emit(&self, bytes: &[u8]) -> Result<bool> {
        match &self.out {
            Some(p) => {
                write_atomic(p, bytes)?;
                Ok(true)
            }
            None => {
                std::io::stdout().write_all(bytes)?;
                Ok(false)
            }
        }
    }
}

fn summary(r: &AuditReport) -> String {
    let count = |s: Status| r.tests.iter().filter(|t| t.status == s).count();
    format!(
        "verdict: {} ({} tests: {} pass, {} warn, {} fail, {} skipped)",
        r.verdict.as_str(),
        r.tests.len(),
        count(Status::Pass),
        count(Status::Warn),
        count(Status::Fail),
        count(Status::Skipped)
    )
}

pub fn verdict_exit_code(v: Verdict) -> i32 {
    match v {
        Verdict::Pass => EXIT_OK,
        Verdict::Fail => EXIT_FAIL,
        Verdict::Warn => EXIT_WARN,
    }
}

fn finish_report(ctx: &Ctx, r: &AuditReport) -> Result<i32> {
    let format = ctx.format.map_or(ReportFormat::Json, ReportFormat::from);
    let bytes = audit::render_report(r, format)?;
    if ctx.emit(&bytes)? {
        println!("{}", summary(r));
    } else {
        eprintln!("{}", summary(r));
    }
    Ok(verdict_exit_code(r.verdict))
}

fn parse_params(raw: Option<&str>, base: ScenarioParams) -> Result<ScenarioParams> {
    let Some(raw) = raw else { return Ok(base) };
    let text = if raw.trim_start().starts_with('{') {
        raw.to_string()
    } else {
        std::fs::read_to_string(raw).with_context(|| format!("reading params {raw}"))?
    };
    let overrides: serde_json::Value = serde_json::from_str(&text).context("parsing --params")?;
    let mut merged = serde_json::to_value(base)?;
    let (Some(m), Some(o)) = (merged.as_object_mut(), overrides.as_object()) else {
        bail!("--params must be a JSON object");
    };
    for (k, v) in o {
        m.insert(k.clone(), v.clone());
    }
    serde_json::from_value(merged).context("invalid --params")
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn dispatch(cli: Cli) -> Result<i32> {
    let ctx = Ctx {
        schema: cli.schema,
        config: cli.config,
        seed: cli.seed,
        out: cli.out,
        format: cli.format,
    };
    match cli.command {
        Command::AuditData { csv } => {
            let cfg = ctx.config()?;
            let d = ctx.load(&csv)?;
            finish_report(&ctx, &audit::audit_data(&d, &cfg))
        }
        Command::AuditModel { model, csv, threshold } => {
            if !(0.0..=1.0).contains(&threshold) {
                bail!("--threshold must lie in [0, 1]");
            }
            let cfg = ctx.config()?;
            let m = LogisticModel::load(&model)?;
            let d = ctx.load(&csv)?;
            finish_report(&ctx, &audit::audit_model(&m, &d, threshold, &cfg))
        }
        Command::Train(a) => {
            let out = a.model_out.clone().or(ctx.out.clone()).ok_or_else(|| anyhow!("--model-out or --out is required"))?;
            let defaults = Hyperparams::default();
            let h = Hyperparams {
                l2: a.l2.unwrap_or(defaults.l2),
                fairness: a.fairness.unwrap_or(defaults.fairness),
                cost_fp: a.cost_fp.unwrap_or(defaults.cost_fp),
                cost_fn: a.cost_fn.unwrap_or(defaults.cost_fn),
                learning_rate: a.learning_rate.unwrap_or(defaults.learning_rate),
                max_iters: a.max_iters.unwrap_or(defaults.max_iters),
                include_protected: a.include_protected,
                seed: ctx.seed,
                ..defaults
            };
            h.validate()?;
            if h.include_protected {
                eprintln!("{LEGAL_NOTICE}");
            }
            let d = ctx.load(&a.csv)?;
            let m = model::train(&d, &h)?;
            let threshold = model::cost_threshold(h.cost_fp, h.cost_fn)?;
            let e = model::evaluate(&m, &d, threshold)?;
            write_atomic(&out, m.to_json().as_bytes())?;
            println!(
                "trained: converged={} iterations={} training accuracy={} at threshold {}",
                m.converged,
                m.iterations,
                audit::format_float(e.accuracy).unwrap_or_default(),
                audit::format_float(threshold).unwrap_or_default()
            );
            Ok(EXIT_OK)
        }
        Command::Mitigate(a) => mitigate_cmd(&ctx, a),
        Command::Simulate { sim_config, csv } => {
            let text = std::fs::read_to_string(&sim_config).with_context(|| format!("reading {}", sim_config.display()))?;
            let mut cfg: FeedbackSimConfig = serde_json::from_str(&text).context("parsing simulation config")?;
            cfg.seed = ctx.seed;
            let series = scenarios::run_feedback_sim(&cfg)?;
            let table = csv.as_ref().map(|_| sim_table(&series));
            let bytes = json_bytes(&series);
            if let (Some(path), Some(t)) = (&csv, &table) {
                write_atomic(path, t.as_bytes())?;
            }
            if ctx.emit(&bytes)? {
                if let Some(last) = series.last() {
                    println!("simulated {} rounds; final shares {:?}", series.len(), last.shares);
                }
            }
            Ok(EXIT_OK)
        }
        Command::GenScenario { kind, n, params } => {
            let kind = ScenarioKind::parse(&kind).ok_or_else(|| {
                let names: Vec<_> = ScenarioKind::ALL.iter().map(|k| k.name()).collect();
                anyhow!("unknown scenario kind `{kind}` (one of {})", names.join(", "))
            })?;
            let out = ctx.require_out()?.to_path_buf();
            let mut spec = ScenarioSpec::new(kind, n, ctx.seed);
            spec.params = parse_params(params.as_deref(), spec.params)?;
            let s = scenarios::generate(&spec)?;
            let csv = s.dataset.to_csv_bytes();
            let truth = json_bytes(&s.truth);
            let schema = serde_json::to_string_pretty(s.dataset.schema())? + "\n";
            write_atomic(&sibling(&out, ".truth.json"), &truth)?;
            write_atomic(&sibling(&out, ".schema.json"), schema.as_bytes())?;
            write_atomic(&out, &csv)?;
            println!("generated {} rows of {}", s.dataset.n(), kind.name());
            Ok(EXIT_OK)
        }
        Command::Render { report } => {
            let text = std::fs::read_to_string(&report).with_context(|| format!("reading {}", report.display()))?;
            let r = audit::parse_report(&text)?;
            let format = ctx.format.map_or(ReportFormat::Markdown, ReportFormat::from);
            ctx.emit(&audit::render_report(&r, format)?)?;
            Ok(verdict_exit_code(r.verdict))
        }
    }
}

fn sim_table(series: &[scenarios::SimRound]) -> String {
    let zones = series.first().map_or(0, |r| r.allocation.len());
    let mut header = vec!["round".to_string()];
    for z in 0..zones {
        header.push(format!("allocation_{z}"));
        header.push(format!("recorded_{z}"));
    }
    header.push("disparity".into());
    let mut s = header.join(",") + "\n";
    for r in series {
        let mut row = vec![r.round.to_string()];
        for z in 0..zones {
            row.push(audit::format_float(r.allocation[z]).unwrap_or_default());
            row.push(r.recorded[z].to_string());
        }
        row.push(audit::format_float(r.disparity).unwrap_or_default());
        s += &(row.join(",") + "\n");
    }
    s
}

fn mitigate_cmd(ctx: &Ctx, a: MitigateArgs) -> Result<i32> {
    let out = ctx.require_out()?.to_path_buf();
    let d = ctx.load(&a.csv)?;
    let load_model = || -> Result<Option<LogisticModel>> {
        a.model.as_ref().map(LogisticModel::load).transpose().map_err(Into::into)
    };
    let pre = |result: (Dataset, mitigate::MitigationRecord)| -> Result<i32> {
        let (data, record) = result;
        let rec = json_bytes(&record);
        if let Some(p) = &a.record {
            write_atomic(p, &rec)?;
        }
        write_atomic(&out, &data.to_csv_bytes())?;
        if a.record.is_none() {
            std::io::stdout().write_all(&rec)?;
        }
        Ok(EXIT_OK)
    };
    match a.method.as_str() {
        "pre:reweight" => pre(mitigate::reweight(&d)?),
        "pre:resample" => pre(mitigate::resample(&d, ctx.seed)?),
        "pre:massage" => pre(mitigate::massage(&d, load_model()?.as_ref())?),
        "post:thresholds" => {
            let m = load_model()?.ok_or_else(|| anyhow!("post:thresholds needs --model"))?;
            let target = match a.target {
                TargetArg::DemographicParity => ThresholdTarget::DemographicParity,
                TargetArg::EqualOpportunity => ThresholdTarget::EqualOpportunity,
            };
            let (pair, record) = mitigate::group_thresholds(&m, &d, target, a.epsilon, a.grid_step)?;
            write_atomic(&out, &json_bytes(&serde_json::json!({ "thresholds": pair, "record": record })))?;
            println!(
                "thresholds: protected {} favored {} feasible={}",
                pair.theta_protected, pair.theta_favored, pair.feasible
            );
            Ok(EXIT_OK)
        }
        "in:tune" => {
            let (train, validation) = match &a.validation {
                Some(p) => (d, ctx.load(p)?),
                None => dataset::split(&d, 0.3, ctx.seed)?,
            };
            let base = Hyperparams {
                seed: ctx.seed,
                ..Hyperparams::default()
            };
            let options = TuneOptions {
                grid: a.grid.clone(),
                max_accuracy_loss: a.max_accuracy_loss,
                md_tolerance: a.md_tolerance,
            };
            let (h, points, record) = mitigate::tune_fairness_weight(&train, &validation, &base, &options)?;
            write_atomic(
                &out,
                &json_bytes(&serde_json::json!({ "hyperparams": h, "grid": points, "record": record })),
            )?;
            println!("chosen fairness weight: {}", h.fairness);
            Ok(EXIT_OK)
        }
        other => bail!("unknown mitigation method `{other}`"),
    }
}

/// Parses `argv` (including the program name) and runs the command,
/// returning the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    EXIT_OK
                }
                _ => {
                    eprint!("{e}");
                    EXIT_ERROR
                }
            };
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_ERROR
        }
    }
}
