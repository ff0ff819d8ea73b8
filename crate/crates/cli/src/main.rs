use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use gridgauntlet::adversary::{read_trace, write_trace};
use gridgauntlet::analysis::{penetration_comparison, read_heatmap, read_hour_records};
use gridgauntlet::config::ExperimentConfig;
use gridgauntlet::data::write_csv;
use gridgauntlet::dispatch::read_settlements;
use gridgauntlet::forecaster::Forecaster;
use gridgauntlet::pipeline::{
    horizon, load_dataset, read_json, read_simulation, recorded_config, run_all, run_analyze, run_attack,
    run_simulate, run_train, write_analysis, write_atomic, write_json, write_simulation, AnalysisSummary,
    RunLayout, Scenario, SettlementKind, SimulationCosts, TrainMetrics,
};
use gridgauntlet::sweep::{run_sweep, ComparisonEntry, Manifest, SweepLayout};
use gridgauntlet::synth::synthetic_dataset;

const LOG_ENV: &str = "GRIDGAUNTLET_LOG";

/// Largest power-balance residual `validate` accepts in a settlement file, MW.
const BALANCE_TOLERANCE_MW: f64 = 1e-9;

#[derive(Parser)]
#[command(name = "gridgauntlet", version, about = "Adversarial load-forecast attacks and their dispatch cost")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Experiment config (TOML); falls back to <out>/config.toml, then defaults
    #[arg(long)]
    config: Option<PathBuf>,
    /// Results directory; defaults to the config's out_dir
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Clone, Default)]
struct ScenarioArgs {
    /// Relative attack budget for demand (and temperature unless fixed)
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long = "battery-mwh")]
    battery_mwh: Option<f64>,
    /// Joint renewable scaling coefficient
    #[arg(long = "penetration-coeff")]
    penetration_coeff: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Train the forecaster and write its checkpoint
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Attack every held-out window and write the trace
    Attack {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        eps: Option<f64>,
        /// Defaults to <out>/model/checkpoint.json
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Settle clean and attacked forecasts with and without storage
    Simulate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Defaults to <out>/attack/trace.csv
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Label hours by cost-loss ratio and write heat maps
    Analyze {
        #[command(flatten)]
        common: Common,
        /// Another analyzed run of the same attack at a different penetration
        #[arg(long)]
        compare: Option<PathBuf>,
    },
    /// Run train, attack, simulate and analyze in one go
    Run {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        scenario: ScenarioArgs,
    },
    /// Run the budget × penetration × battery grid, resuming finished cells
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Worker threads; 0 uses all cores
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Check every known result file under a directory
    Validate { dir: PathBuf },
    /// Write the synthetic hourly dataset as CSV
    Generate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(path: Option<&Path>, out: Option<&Path>) -> Result<ExperimentConfig> {
    let path = match (path, out) {
        (Some(p), _) => Some(p.to_path_buf()),
        (None, Some(out)) if RunLayout::new(out).config().is_file() => Some(RunLayout::new(out).config()),
        _ => None,
    };
    match path {
        Some(p) => {
            let p = fs::canonicalize(&p).with_context(|| format!("config file {}", p.display()))?;
            Ok(ExperimentConfig::load(&p)?)
        }
        None => Ok(ExperimentConfig::default()),
    }
}

/// Config with command-line overrides applied, and the output directory.
fn resolve(common: &Common, scenario: &ScenarioArgs) -> Result<(ExperimentConfig, RunLayout)> {
    let mut config = load_config(common.config.as_deref(), common.out.as_deref())?;
    if let Some(seed) = common.seed {
        config = config.with_seed(seed);
    }
    if let Some(eps) = scenario.eps {
        config.attack = config.budget_for(eps);
    }
    if let Some(b) = scenario.battery_mwh {
        config.battery.capacity_mwh = b;
    }
    if let Some(c) = scenario.penetration_coeff {
        config.scaling.joint_coeff = c;
    }
    if let Some(out) = &common.out {
        config.out_dir = out.clone();
    }
    config.validate()?;
    let layout = RunLayout::new(config.out_dir.clone());
    Ok((config, layout))
}

fn record_config(config: &ExperimentConfig, layout: &RunLayout) -> Result<()> {
    if SweepLayout::new(&layout.root).manifest().is_file() {
        bail!("{} holds a sweep; single-run stages need their own directory", layout.root.display());
    }
    write_atomic(&layout.config(), recorded_config(config)?.as_bytes())?;
    Ok(())
}

fn cmd_train(common: &Common) -> Result<()> {
    let (config, layout) = resolve(common, &ScenarioArgs::default())?;
    record_config(&config, &layout)?;
    let raw = load_dataset(&config)?;
    let (model, metrics) = run_train(&config, &raw)?;
    fs::create_dir_all(layout.checkpoint().parent().expect("nested path"))?;
    model.save(layout.checkpoint())?;
    write_json(&layout.train_metrics(), &metrics)?;
    println!(
        "trained {} epochs: final MSE {:.6}, test MAPE {:.3}% → {}",
        metrics.epochs,
        metrics.final_mse,
        metrics.test_mape,
        layout.checkpoint().display()
    );
    Ok(())
}

fn cmd_attack(common: &Common, eps: Option<f64>, checkpoint: Option<&Path>) -> Result<()> {
    let scenario = ScenarioArgs {
        eps,
        ..ScenarioArgs::default()
    };
    let (config, layout) = resolve(common, &scenario)?;
    let checkpoint = checkpoint.map(Path::to_path_buf).unwrap_or_else(|| layout.checkpoint());
    let model = Forecaster::load(&checkpoint)?;
    record_config(&config, &layout)?;
    let raw = load_dataset(&config)?;
    let trace = run_attack(&config, &raw, &model, &config.attack)?;
    fs::create_dir_all(layout.trace().parent().expect("nested path"))?;
    write_trace(layout.trace(), &trace)?;
    let n = trace.len() as f64;
    println!(
        "attacked {} windows at ε = {}: mean MAPE {:.3}% → {:.3}%",
        trace.len(),
        config.attack.eps_demand,
        trace.iter().map(|r| r.mape_clean).sum::<f64>() / n,
        trace.iter().map(|r| r.mape_attacked).sum::<f64>() / n
    );
    Ok(())
}

fn cmd_simulate(common: &Common, scenario: &ScenarioArgs, trace: Option<&Path>) -> Result<()> {
    let (config, layout) = resolve(common, scenario)?;
    let trace_path = trace.map(Path::to_path_buf).unwrap_or_else(|| layout.trace());
    let trace = read_trace(&trace_path)?;
    record_config(&config, &layout)?;
    let s = Scenario::load(&config)?;
    let h = horizon(&s.scaled, &trace)?;
    let (sim, costs) = run_simulate(&s.fleet, &config.battery, &h)?;
    write_simulation(&layout, &s.fleet, &h, &sim, &costs)?;
    println!(
        "settled {} hours: no storage ${:.0} → ${:.0}, storage ${:.0} → ${:.0}",
        h.actual.len(),
        costs.clean_no_storage.total,
        costs.attacked_no_storage.total,
        costs.clean_storage.total,
        costs.attacked_storage.total
    );
    Ok(())
}

fn cmd_analyze(common: &Common, compare: Option<&Path>) -> Result<()> {
    let (config, layout) = resolve(common, &ScenarioArgs::default())?;
    let (timestamps, sim) = read_simulation(&layout)?;
    record_config(&config, &layout)?;
    let analysis = run_analyze(&config.analysis, &timestamps, &sim)?;
    write_analysis(&layout, &analysis)?;
    let c = &analysis.summary.no_storage.counts;
    println!(
        "labeled {} hours: {} benefit, {} unchanged, {} loss, {} extremely vulnerable",
        c.total(),
        c.benefit,
        c.unchanged,
        c.loss,
        c.extremely_vulnerable
    );
    if let Some(other_dir) = compare {
        let other = RunLayout::new(other_dir);
        let other_config = load_config(Some(&other.config()), None)?;
        let (this_coeff, other_coeff) = (config.scaling.joint_coeff, other_config.scaling.joint_coeff);
        let ((low, low_coeff), (high, high_coeff)) = match this_coeff.total_cmp(&other_coeff) {
            std::cmp::Ordering::Less => ((&layout, this_coeff), (&other, other_coeff)),
            std::cmp::Ordering::Greater => ((&other, other_coeff), (&layout, this_coeff)),
            std::cmp::Ordering::Equal => bail!("both runs use penetration coefficient {this_coeff}"),
        };
        let a = &config.analysis;
        let compare = |storage: bool| -> Result<_> {
            Ok(penetration_comparison(
                &read_hour_records(low.hour_records(storage))?,
                &read_hour_records(high.hour_records(storage))?,
                a.unchanged_band,
                a.tolerance,
            )?)
        };
        let entry = ComparisonEntry {
            eps: config.attack.eps_demand,
            battery_mwh: config.battery.capacity_mwh,
            low_coeff,
            high_coeff,
            no_storage: compare(false)?,
            storage: compare(true)?,
        };
        write_json(&layout.comparison(), &entry)?;
        println!(
            "mean positive ratio {:.4} at coefficient {low_coeff}, {:.4} at {high_coeff}",
            entry.no_storage.mean_positive_ratio_low, entry.no_storage.mean_positive_ratio_high
        );
    }
    Ok(())
}

fn cmd_run(common: &Common, scenario: &ScenarioArgs) -> Result<()> {
    let (config, layout) = resolve(common, scenario)?;
    run_all(&config, &layout)?;
    let summary: AnalysisSummary = read_json(&layout.summary())?;
    println!(
        "attack raises cost by {:.2}% without storage, {:.2}% with storage",
        100.0 * summary.no_storage.totals.relative_increase,
        100.0 * summary.storage.totals.relative_increase
    );
    Ok(())
}

fn cmd_sweep(common: &Common, jobs: Option<usize>) -> Result<()> {
    let (mut config, layout) = resolve(common, &ScenarioArgs::default())?;
    if let Some(jobs) = jobs {
        config.sweep.jobs = jobs;
    }
    let report = run_sweep(&config, &layout.root)?;
    println!(
        "sweep: {} cells computed, {} skipped, {} failed",
        report.computed.len(),
        report.skipped.len(),
        report.failed.len()
    );
    for (id, err) in &report.failed {
        eprintln!("cell {id} failed: {err}");
    }
    if !report.failed.is_empty() {
        bail!("{} sweep cells failed; rerun to retry them", report.failed.len());
    }
    Ok(())
}

fn cmd_generate(config: Option<&Path>, out: &Path) -> Result<()> {
    let config = load_config(config, None)?;
    let ds = synthetic_dataset(&config.synthetic)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let file = fs::File::create(out).with_context(|| format!("creating {}", out.display()))?;
    write_csv(&ds, std::io::BufWriter::new(file))?;
    println!("wrote {} hours to {}", ds.len(), out.display());
    Ok(())
}

/// Checks files that exist; missing ones are not an error.
struct Validator {
    root: PathBuf,
    checked: usize,
}

impl Validator {
    fn file(&mut self, path: PathBuf, check: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
        if !path.is_file() {
            return Ok(());
        }
        check(&path).with_context(|| format!("{} is invalid", path.display()))?;
        println!("ok {}", path.strip_prefix(&self.root).unwrap_or(&path).display());
        self.checked += 1;
        Ok(())
    }

    fn run(&mut self, layout: &RunLayout) -> Result<()> {
        self.file(layout.config(), |p| {
            ExperimentConfig::load(p)?;
            Ok(())
        })?;
        self.file(layout.checkpoint(), |p| {
            Forecaster::load(p)?;
            Ok(())
        })?;
        self.file(layout.train_metrics(), |p| {
            read_json::<TrainMetrics>(p)?;
            Ok(())
        })?;
        self.file(layout.trace(), |p| {
            read_trace(p)?;
            Ok(())
        })?;
        for kind in SettlementKind::ALL {
            self.file(layout.settlement(kind), check_settlements)?;
        }
        self.file(layout.costs(), |p| {
            read_json::<SimulationCosts>(p)?;
            Ok(())
        })?;
        for storage in [false, true] {
            self.file(layout.hour_records(storage), |p| {
                read_hour_records(p)?;
                Ok(())
            })?;
            self.file(layout.heatmap(storage), |p| {
                read_heatmap(p)?;
                Ok(())
            })?;
        }
        self.file(layout.summary(), |p| {
            read_json::<AnalysisSummary>(p)?;
            Ok(())
        })?;
        self.file(layout.comparison(), |p| {
            read_json::<ComparisonEntry>(p)?;
            Ok(())
        })
    }

    fn sweep(&mut self, layout: &SweepLayout) -> Result<()> {
        self.file(layout.manifest(), |p| {
            read_json::<Manifest>(p)?;
            Ok(())
        })?;
        self.file(layout.comparisons(), |p| {
            read_json::<Vec<ComparisonEntry>>(p)?;
            Ok(())
        })?;
        self.file(layout.curves(), |p| {
            let mut rdr = csv::Reader::from_path(p)?;
            for row in rdr.records() {
                for field in row?.iter() {
                    field.parse::<f64>().with_context(|| format!("non-numeric field `{field}`"))?;
                }
            }
            Ok(())
        })?;
        for sub in ["attacks", "cells"] {
            for dir in sorted_subdirs(&layout.root.join(sub))? {
                if sub == "attacks" {
                    self.file(dir.join("trace.csv"), |p| {
                        read_trace(p)?;
                        Ok(())
                    })?;
                } else {
                    self.run(&RunLayout::new(dir))?;
                }
            }
        }
        Ok(())
    }
}

fn check_settlements(path: &Path) -> Result<()> {
    let table = read_settlements(path)?;
    for (k, slot) in table.slots.iter().enumerate() {
        let r = slot.balance_residual();
        if !(r.abs() < BALANCE_TOLERANCE_MW) {
            bail!("hour {k}: power-balance residual {r:e} MW");
        }
    }
    Ok(())
}

fn sorted_subdirs(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry?.path();
        if path.is_dir() {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

fn cmd_validate(dir: &Path) -> Result<()> {
    if !dir.is_dir() {
        bail!("{} is not a directory", dir.display());
    }
    let mut v = Validator {
        root: dir.to_path_buf(),
        checked: 0,
    };
    v.run(&RunLayout::new(dir))?;
    v.sweep(&SweepLayout::new(dir))?;
    if v.checked == 0 {
        bail!("no result files found under {}", dir.display());
    }
    println!("{} files valid", v.checked);
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { common } => cmd_train(&common),
        Command::Attack { common, eps, checkpoint } => cmd_attack(&common, eps, checkpoint.as_deref()),
        Command::Simulate { common, scenario, trace } => cmd_simulate(&common, &scenario, trace.as_deref()),
        Command::Analyze { common, compare } => cmd_analyze(&common, compare.as_deref()),
        Command::Run { common, scenario } => cmd_run(&common, &scenario),
        Command::Sweep { common, jobs } => cmd_sweep(&common, jobs),
        Command::Validate { dir } => cmd_validate(&dir),
        Command::Generate { config, out } => cmd_generate(config.as_deref(), &out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, "warn")).init();
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
