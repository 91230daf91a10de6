use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fairaudit::audit::{self, AuditConfig};
use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_fairaudit"));
    c.env("SOURCE_DATE_EPOCH", "0");
    c
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

struct Workspace {
    dir: TempDir,
}

impl Workspace {
    fn new() -> Self {
        let dir = TempDir::new().unwrap();
        let cfg = serde_json::to_string_pretty(&AuditConfig::example()).unwrap();
        std::fs::write(dir.path().join("config.json"), cfg).unwrap();
        Self { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn run(&self, args: &[&str]) -> Output {
        run(self.dir.path(), args)
    }

    /// Generates `<kind>.csv` and its sidecars.
    fn scenario(&self, kind: &str, n: usize) {
        let o = self.run(&["gen-scenario", kind, "--n", &n.to_string(), "--out", &format!("{kind}.csv")]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }

    fn audit_data(&self, kind: &str, out: &str) -> Output {
        self.run(&[
            "audit-data",
            &format!("{kind}.csv"),
            "--schema",
            &format!("{kind}.csv.schema.json"),
            "--config",
            "config.json",
            "--out",
            out,
        ])
    }
}

#[test]
fn help_and_version_exit_zero() {
    let ws = Workspace::new();
    assert_eq!(code(&ws.run(&["--help"])), 0);
    assert_eq!(code(&ws.run(&["--version"])), 0);
}

#[test]
fn usage_errors_exit_one() {
    let ws = Workspace::new();
    assert_eq!(code(&ws.run(&[])), 1);
    assert_eq!(code(&ws.run(&["no-such-command"])), 1);
    assert_eq!(code(&ws.run(&["audit-data", "x.csv", "--bogus"])), 1);
    let o = ws.run(&["gen-scenario", "unknown_kind", "--out", "x.csv"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("clean_independent"));
}

#[test]
fn verdicts_map_to_exit_codes() {
    let ws = Workspace::new();
    ws.scenario("clean_independent", 5000);
    ws.scenario("direct_discrimination", 5000);
    assert_eq!(code(&ws.audit_data("clean_independent", "clean.json")), 0);
    assert_eq!(code(&ws.audit_data("direct_discrimination", "direct.json")), 2);
    let report = audit::parse_report(&std::fs::read_to_string(ws.path("direct.json")).unwrap()).unwrap();
    assert!(report.tests.iter().any(|t| t.id == "D1.outcome.mean"));
}

#[test]
fn failed_run_leaves_no_output() {
    let ws = Workspace::new();
    ws.scenario("clean_independent", 200);
    let o = ws.run(&[
        "audit-data",
        "missing.csv",
        "--schema",
        "clean_independent.csv.schema.json",
        "--config",
        "config.json",
        "--out",
        "report.json",
    ]);
    assert_eq!(code(&o), 1);
    assert!(!ws.path("report.json").exists());
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing.csv"));

    std::fs::write(ws.path("bad.json"), "{\"thresholds\": {\"max_abs_data_md\": -1}}").unwrap();
    let o = ws.run(&[
        "audit-data",
        "clean_independent.csv",
        "--schema",
        "clean_independent.csv.schema.json",
        "--config",
        "bad.json",
        "--out",
        "report.json",
    ]);
    assert_eq!(code(&o), 1);
    assert!(!ws.path("report.json").exists());
}

#[test]
fn existing_output_survives_failure() {
    let ws = Workspace::new();
    std::fs::write(ws.path("report.json"), "previous").unwrap();
    let o = ws.run(&["audit-data", "missing.csv", "--schema", "none.json", "--config", "config.json", "--out", "report.json"]);
    assert_eq!(code(&o), 1);
    assert_eq!(std::fs::read_to_string(ws.path("report.json")).unwrap(), "previous");
}

#[test]
fn runs_are_byte_identical() {
    let a = Workspace::new();
    let b = Workspace::new();
    for ws in [&a, &b] {
        ws.scenario("redlining", 3000);
        ws.audit_data("redlining", "report.json");
    }
    for f in ["redlining.csv", "redlining.csv.truth.json", "redlining.csv.schema.json", "report.json"] {
        assert_eq!(std::fs::read(a.path(f)).unwrap(), std::fs::read(b.path(f)).unwrap(), "{f}");
    }
}

#[test]
fn seed_changes_generated_data() {
    let ws = Workspace::new();
    assert_eq!(code(&ws.run(&["gen-scenario", "clean_independent", "--n", "100", "--out", "a.csv"])), 0);
    assert_eq!(code(&ws.run(&["gen-scenario", "clean_independent", "--n", "100", "--seed", "1", "--out", "b.csv"])), 0);
    assert_ne!(std::fs::read(ws.path("a.csv")).unwrap(), std::fs::read(ws.path("b.csv")).unwrap());
}

#[test]
fn scenario_params_override_defaults() {
    let ws = Workspace::new();
    let o = ws.run(&["gen-scenario", "direct_discrimination", "--n", "100", "--params", "{\"gap\": 0.1}", "--out", "d.csv"]);
    assert_eq!(code(&o), 0);
    let truth: serde_json::Value = serde_json::from_slice(&std::fs::read(ws.path("d.csv.truth.json")).unwrap()).unwrap();
    assert_eq!(truth["planted"]["gap"], 0.1);
    let o = ws.run(&["gen-scenario", "direct_discrimination", "--n", "100", "--params", "{\"gap\": 2}", "--out", "e.csv"]);
    assert_eq!(code(&o), 1);
    assert!(!ws.path("e.csv").exists());
}

#[test]
fn train_audit_and_mitigate() {
    let ws = Workspace::new();
    ws.scenario("redlining", 3000);
    let schema = "redlining.csv.schema.json";

    let o = ws.run(&["train", "redlining.csv", "--schema", schema, "--model-out", "blind.json"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).is_empty());
    let o = ws.run(&["audit-model", "blind.json", "redlining.csv", "--schema", schema, "--config", "config.json", "--out", "m.json"]);
    assert_eq!(code(&o), 2);
    let r = audit::parse_report(&std::fs::read_to_string(ws.path("m.json")).unwrap()).unwrap();
    let flip = r.tests.iter().find(|t| t.id == "M1.flip_audit").unwrap();
    assert_eq!(flip.observed, Some(0.0));
    assert!(r.metadata.model_hash.is_some());

    let o = ws.run(&["train", "redlining.csv", "--schema", schema, "--include-protected", "--model-out", "aware.json"]);
    assert_eq!(code(&o), 0);
    assert!(!String::from_utf8_lossy(&o.stderr).is_empty());

    let o = ws.run(&["mitigate", "pre:reweight", "redlining.csv", "--schema", schema, "--out", "rw.csv", "--record", "rw.json"]);
    assert_eq!(code(&o), 0);
    let rec: serde_json::Value = serde_json::from_slice(&std::fs::read(ws.path("rw.json")).unwrap()).unwrap();
    assert_eq!(rec["method"], "pre:reweight");

    let o = ws.run(&["mitigate", "pre:massage", "redlining.csv", "--schema", schema, "--model", "blind.json", "--out", "ms.csv"]);
    assert_eq!(code(&o), 0);
    let rec: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(rec["parameters"]["m"].as_f64().unwrap() >= 0.0);

    let o = ws.run(&["mitigate", "pre:resample", "redlining.csv", "--schema", schema, "--out", "rs.csv", "--record", "rs.json"]);
    assert_eq!(code(&o), 0);

    let o = ws.run(&[
        "mitigate", "post:thresholds", "redlining.csv", "--schema", schema, "--model", "blind.json", "--epsilon", "0.02", "--out", "th.json",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let th: serde_json::Value = serde_json::from_slice(&std::fs::read(ws.path("th.json")).unwrap()).unwrap();
    assert_eq!(th["thresholds"]["feasible"], true);

    let o = ws.run(&["mitigate", "post:thresholds", "redlining.csv", "--schema", schema, "--out", "th2.json"]);
    assert_eq!(code(&o), 1);
    let o = ws.run(&["mitigate", "pre:unknown", "redlining.csv", "--schema", schema, "--out", "x.csv"]);
    assert_eq!(code(&o), 1);
    assert!(!ws.path("x.csv").exists());
}

#[test]
fn tune_writes_chosen_weight() {
    let ws = Workspace::new();
    ws.scenario("redlining", 2000);
    let o = ws.run(&[
        "mitigate", "in:tune", "redlining.csv", "--schema", "redlining.csv.schema.json", "--grid", "0,100", "--max-accuracy-loss", "0.2",
        "--out", "tune.json",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let t: serde_json::Value = serde_json::from_slice(&std::fs::read(ws.path("tune.json")).unwrap()).unwrap();
    assert_eq!(t["grid"].as_array().unwrap().len(), 2);
    assert_eq!(t["hyperparams"]["fairness"], 100.0);
}

#[test]
fn render_markdown_and_json() {
    let ws = Workspace::new();
    ws.scenario("direct_discrimination", 3000);
    ws.audit_data("direct_discrimination", "report.json");
    let o = ws.run(&["render", "report.json", "--out", "report.md"]);
    assert_eq!(code(&o), 2);
    let md = std::fs::read_to_string(ws.path("report.md")).unwrap();
    assert!(md.contains("D1.outcome.mean"));
    assert!(md.to_lowercase().contains("fail"));
    let o = ws.run(&["render", "report.json", "--format", "json"]);
    assert_eq!(o.stdout, std::fs::read(ws.path("report.json")).unwrap());

    std::fs::write(ws.path("junk.json"), "{}").unwrap();
    assert_eq!(code(&ws.run(&["render", "junk.json"])), 1);
}

#[test]
fn simulate_writes_series_and_table() {
    let ws = Workspace::new();
    let cfg = serde_json::json!({
        "zones": 2,
        "latent_violent_rates": [5.0, 5.0],
        "latent_nuisance_rates": [50.0, 5.0],
        "patrol_budget": 100.0,
        "rounds": 10,
        "observation": "only_when_patrolled",
    });
    std::fs::write(ws.path("sim.json"), cfg.to_string()).unwrap();
    let o = ws.run(&["simulate", "sim.json", "--csv", "sim.csv", "--out", "series.json", "--seed", "3"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let series: serde_json::Value = serde_json::from_slice(&std::fs::read(ws.path("series.json")).unwrap()).unwrap();
    assert_eq!(series.as_array().unwrap().len(), 10);
    let table = std::fs::read_to_string(ws.path("sim.csv")).unwrap();
    assert_eq!(table.lines().count(), 11);
    assert!(table.starts_with("round,allocation_0,recorded_0"));

    let again = ws.run(&["simulate", "sim.json", "--seed", "3"]);
    assert_eq!(again.stdout, std::fs::read(ws.path("series.json")).unwrap());

    std::fs::write(ws.path("bad.json"), "{\"zones\": 0}").unwrap();
    assert_eq!(code(&ws.run(&["simulate", "bad.json"])), 1);
}
