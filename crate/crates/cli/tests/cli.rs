use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gridgauntlet::adversary::{read_trace, write_trace};
use gridgauntlet::dispatch::read_settlements;
use gridgauntlet::pipeline::{RunLayout, SettlementKind};

const TOY: &str = r#"
[synthetic]
days = 30
[train]
epochs = 5
hidden_size = 8
batch_size = 64
[attack]
iterations = 5
[battery]
capacity_mwh = 4000.0
[sweep]
eps = [0.0, 0.03]
battery_mwh = [0.0, 4000.0]
jobs = 2
"#;

fn gridgauntlet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gridgauntlet"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = gridgauntlet(args);
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn failing(args: &[&str]) -> String {
    let out = gridgauntlet(args);
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    String::from_utf8(out.stderr).unwrap()
}

struct Workspace {
    _dir: tempfile::TempDir,
    root: PathBuf,
    config: String,
}

impl Workspace {
    fn new(extra: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let config = root.join("toy.toml");
        std::fs::write(&config, format!("{extra}\n{TOY}")).unwrap();
        Self {
            _dir: dir,
            config: config.display().to_string(),
            root,
        }
    }

    fn out(&self, name: &str) -> String {
        self.root.join(name).display().to_string()
    }

    /// Trains into `name` and returns the run layout.
    fn trained(&self, name: &str) -> RunLayout {
        ok(&["train", "--config", &self.config, "--out", &self.out(name)]);
        RunLayout::new(self.root.join(name))
    }
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn train_writes_checkpoint_metrics_and_config() {
    let ws = Workspace::new("");
    let run = ws.trained("run");
    assert!(run.checkpoint().is_file());
    let metrics: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(run.train_metrics()).unwrap()).unwrap();
    assert!(metrics["final_mse"].as_f64().unwrap() > 0.0);
    assert!(metrics["test_mape"].as_f64().unwrap() > 0.0);
    let recorded = std::fs::read_to_string(run.config()).unwrap();
    assert!(recorded.contains("out_dir = \".\""), "{recorded}");
}

#[test]
fn missing_data_file_is_named() {
    let ws = Workspace::new("data = \"nowhere/demand.csv\"");
    let err = failing(&["train", "--config", &ws.config, "--out", &ws.out("run")]);
    assert!(err.contains("nowhere/demand.csv"), "{err}");
}

#[test]
fn corrupt_checkpoint_is_reported() {
    let ws = Workspace::new("");
    let run = ws.trained("run");
    std::fs::write(run.checkpoint(), "{\"format\": \"something else\"}").unwrap();
    let err = failing(&["attack", "--out", &ws.out("run")]);
    assert!(err.contains("checkpoint format error"), "{err}");
}

#[test]
fn same_seed_gives_identical_checkpoints() {
    let ws = Workspace::new("");
    let a = ws.trained("a");
    let b = ws.trained("b");
    assert_eq!(std::fs::read(a.checkpoint()).unwrap(), std::fs::read(b.checkpoint()).unwrap());
    ok(&["train", "--config", &ws.config, "--out", &ws.out("c"), "--seed", "5"]);
    assert_ne!(
        std::fs::read(a.checkpoint()).unwrap(),
        std::fs::read(RunLayout::new(ws.root.join("c")).checkpoint()).unwrap()
    );
}

#[test]
fn zero_budget_trace_is_clean_and_three_percent_hurts() {
    let ws = Workspace::new("");
    let run = ws.trained("run");
    ok(&["attack", "--out", &ws.out("run"), "--eps", "0"]);
    let trace = read_trace(run.trace()).unwrap();
    assert!(trace.iter().all(|r| r.forecast_attacked_mw == r.forecast_clean_mw));

    ok(&["attack", "--out", &ws.out("run"), "--eps", "0.03"]);
    let trace = read_trace(run.trace()).unwrap();
    let mean = |f: fn(&gridgauntlet::adversary::AttackRecord) -> f64| trace.iter().map(f).sum::<f64>() / trace.len() as f64;
    assert!(mean(|r| r.mape_attacked) > mean(|r| r.mape_clean));
}

#[test]
fn perfect_forecast_settles_without_waste_or_premium() {
    let ws = Workspace::new("");
    let run = ws.trained("run");
    ok(&["attack", "--out", &ws.out("run"), "--eps", "0"]);
    let mut trace = read_trace(run.trace()).unwrap();
    for r in &mut trace {
        r.forecast_clean_mw = r.actual_mw;
        r.forecast_attacked_mw = r.actual_mw;
    }
    let perfect = ws.root.join("perfect.csv");
    write_trace(&perfect, &trace).unwrap();
    ok(&["simulate", "--out", &ws.out("run"), "--trace", path(&perfect), "--battery-mwh", "0"]);
    let slots = read_settlements(run.settlement(SettlementKind::AttackedNoStorage)).unwrap().slots;
    assert!(slots.iter().all(|s| s.waste_cost == 0.0 && s.premium_cost == 0.0 && s.shortfall_mw == 0.0));
}

#[test]
fn empty_battery_matches_no_storage() {
    let ws = Workspace::new("");
    let run = ws.trained("run");
    ok(&["attack", "--out", &ws.out("run"), "--eps", "0.03"]);
    ok(&["simulate", "--out", &ws.out("run"), "--battery-mwh", "0"]);
    for (with, without) in [
        (SettlementKind::CleanStorage, SettlementKind::CleanNoStorage),
        (SettlementKind::AttackedStorage, SettlementKind::AttackedNoStorage),
    ] {
        assert_eq!(
            std::fs::read(run.settlement(with)).unwrap(),
            std::fs::read(run.settlement(without)).unwrap()
        );
    }
}

#[test]
fn settlements_balance_and_stages_validate() {
    let ws = Workspace::new("");
    let run = ws.trained("run");
    ok(&["attack", "--out", &ws.out("run")]);
    ok(&["simulate", "--out", &ws.out("run")]);
    ok(&["analyze", "--out", &ws.out("run")]);
    for kind in SettlementKind::ALL {
        for s in read_settlements(run.settlement(kind)).unwrap().slots {
            assert!(s.balance_residual().abs() < 1e-9);
        }
    }
    let report = ok(&["validate", &ws.out("run")]);
    assert!(report.contains("14 files valid"), "{report}");

    std::fs::write(run.heatmap(false), "date,h00\n").unwrap();
    let err = failing(&["validate", &ws.out("run")]);
    assert!(err.contains("heatmap.csv"), "{err}");
    assert!(failing(&["validate", &ws.out("nothing")]).contains("not a directory"));
}

#[test]
fn analyze_compares_two_penetration_levels() {
    let ws = Workspace::new("");
    for (name, coeff) in [("low", "4"), ("high", "6.5")] {
        ws.trained(name);
        ok(&["attack", "--out", &ws.out(name)]);
        ok(&["simulate", "--out", &ws.out(name), "--penetration-coeff", coeff]);
        ok(&["analyze", "--out", &ws.out(name)]);
    }
    ok(&["analyze", "--out", &ws.out("high"), "--compare", &ws.out("low")]);
    let text = std::fs::read_to_string(RunLayout::new(ws.root.join("high")).comparison()).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["low_coeff"], 4.0);
    assert_eq!(v["high_coeff"], 6.5);
    assert!(v["no_storage"]["fit"]["slope"].is_f64());
    let err = failing(&["analyze", "--out", &ws.out("low"), "--compare", &ws.out("low")]);
    assert!(err.contains("both runs"), "{err}");
}

#[test]
fn generated_data_feeds_training() {
    let ws = Workspace::new("");
    let data = ws.root.join("data").join("hourly.csv");
    ok(&["generate", "--config", &ws.config, "--out", path(&data)]);
    let config = ws.root.join("from_file.toml");
    std::fs::write(&config, format!("data = \"data/hourly.csv\"\n{TOY}")).unwrap();
    ok(&["train", "--config", path(&config), "--out", &ws.out("file")]);
    let from_synth = ws.trained("synth");
    assert_eq!(
        std::fs::read(from_synth.checkpoint()).unwrap(),
        std::fs::read(RunLayout::new(ws.root.join("file")).checkpoint()).unwrap()
    );
}

#[test]
fn sweep_reports_resume_and_guards_its_tree() {
    let ws = Workspace::new("");
    let out = ws.out("sweep");
    assert!(ok(&["sweep", "--config", &ws.config, "--out", &out]).contains("8 cells computed, 0 skipped"));
    assert!(ok(&["sweep", "--out", &out]).contains("0 cells computed, 8 skipped"));
    assert!(failing(&["sweep", "--out", &out, "--seed", "9"]).contains("different configuration"));
    assert!(failing(&["train", "--out", &out]).contains("holds a sweep"));
    let report = ok(&["validate", &out]);
    assert!(report.contains("ok manifest.json") && report.contains("ok curves.csv"), "{report}");
}
