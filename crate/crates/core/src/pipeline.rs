//! End-to-end stages: train, attack, simulate, analyze.
//!
//! Every stage reads and writes plain files under a run directory so the
//! stages can be run one at a time from the command line.

use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use crate::adversary::{attack_series, read_trace, write_trace, AttackBudget, AttackRecord};
use crate::analysis::{
    classify_hours, cost_loss_ratio, emit_heatmap, summarize, vulnerable_threshold, write_hour_records, CostTotals,
    HourRecord, HourSummary,
};
use crate::config::{AnalysisConfig, ExperimentConfig};
use crate::data::{load_csv, make_windows, split_windows, CsvSchema, ForecastWindow, TimeSeriesDataset};
use crate::dispatch::{audit_soc, simulate, total_cost, write_settlements, CostBreakdown, SlotSettlement, ThermalFleet};
use crate::error::{Error, Result};
use crate::forecaster::{mean_mape, train, Forecaster};
use crate::storage::BatterySpec;
use crate::synth::synthetic_dataset;

/// File names inside a run directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunLayout {
    pub root: PathBuf,
}

impl RunLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.toml")
    }

    pub fn checkpoint(&self) -> PathBuf {
        self.root.join("model").join("checkpoint.json")
    }

    pub fn train_metrics(&self) -> PathBuf {
        self.root.join("model").join("metrics.json")
    }

    pub fn trace(&self) -> PathBuf {
        self.root.join("attack").join("trace.csv")
    }

    pub fn settlement(&self, kind: SettlementKind) -> PathBuf {
        self.root.join("simulate").join(format!("{}.csv", kind.name()))
    }

    pub fn costs(&self) -> PathBuf {
        self.root.join("simulate").join("costs.json")
    }

    pub fn hour_records(&self, storage: bool) -> PathBuf {
        self.root.join("analysis").join(suffixed("hour_records", storage, "csv"))
    }

    pub fn heatmap(&self, storage: bool) -> PathBuf {
        self.root.join("analysis").join(suffixed("heatmap", storage, "csv"))
    }

    pub fn summary(&self) -> PathBuf {
        self.root.join("analysis").join("summary.json")
    }

    pub fn comparison(&self) -> PathBuf {
        self.root.join("analysis").join("comparison.json")
    }
}

fn suffixed(stem: &str, storage: bool, ext: &str) -> String {
    if storage {
        format!("{stem}_storage.{ext}")
    } else {
        format!("{stem}.{ext}")
    }
}

/// The four settlement runs of one scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SettlementKind {
    CleanNoStorage,
    CleanStorage,
    AttackedNoStorage,
    AttackedStorage,
}

impl SettlementKind {
    pub const ALL: [SettlementKind; 4] = [
        SettlementKind::CleanNoStorage,
        SettlementKind::CleanStorage,
        SettlementKind::AttackedNoStorage,
        SettlementKind::AttackedStorage,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SettlementKind::CleanNoStorage => "settlement_clean_no_storage",
            SettlementKind::CleanStorage => "settlement_clean_storage",
            SettlementKind::AttackedNoStorage => "settlement_attacked_no_storage",
            SettlementKind::AttackedStorage => "settlement_attacked_storage",
        }
    }

    pub fn attacked(self) -> bool {
        matches!(self, SettlementKind::AttackedNoStorage | SettlementKind::AttackedStorage)
    }

    pub fn storage(self) -> bool {
        matches!(self, SettlementKind::CleanStorage | SettlementKind::AttackedStorage)
    }
}

/// Writes through a temporary sibling so readers never see partial files.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub(crate) fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) => fs::create_dir_all(dir).map_err(|e| Error::io(dir, e)),
        None => Ok(()),
    }
}

/// Config text copied into a results tree. The output directory is left
/// out so trees written to different places stay byte-identical.
pub fn recorded_config(config: &ExperimentConfig) -> Result<String> {
    let mut copy = config.clone();
    copy.out_dir = PathBuf::from(".");
    copy.to_toml()
}

/// Raw (unscaled) hourly data from the configured file or the generator.
pub fn load_dataset(config: &ExperimentConfig) -> Result<TimeSeriesDataset> {
    match &config.data {
        Some(path) => load_csv(path, &CsvSchema::default()),
        None => synthetic_dataset(&config.synthetic),
    }
}

/// Training and held-out windows, split chronologically.
pub fn windows(
    config: &ExperimentConfig,
    ds: &TimeSeriesDataset,
) -> Result<(Vec<ForecastWindow>, Vec<ForecastWindow>)> {
    split_windows(make_windows(ds, config.history_hours)?, ds.len(), config.train_fraction)
}

fn model_mape(model: &Forecaster, windows: &[ForecastWindow]) -> Result<f64> {
    let preds = model.predict_batch(windows)?;
    let actual: Vec<f64> = windows.iter().map(|w| w.target_demand()).collect();
    mean_mape(&preds, &actual)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMetrics {
    pub epochs: usize,
    pub train_windows: usize,
    pub test_windows: usize,
    /// Normalized units.
    pub initial_mse: f64,
    pub final_mse: f64,
    /// Percent.
    pub train_mape: f64,
    pub test_mape: f64,
}

pub fn run_train(config: &ExperimentConfig, ds: &TimeSeriesDataset) -> Result<(Forecaster, TrainMetrics)> {
    let (train_set, test_set) = windows(config, ds)?;
    let outcome = train(&train_set, &config.train)?;
    let metrics = TrainMetrics {
        epochs: outcome.loss_history.len(),
        train_windows: train_set.len(),
        test_windows: test_set.len(),
        initial_mse: outcome.loss_history[0],
        final_mse: *outcome.loss_history.last().expect("at least one epoch"),
        train_mape: model_mape(&outcome.model, &train_set)?,
        test_mape: model_mape(&outcome.model, &test_set)?,
    };
    log::info!(
        "trained {} epochs: mse {:.5} → {:.5}, test MAPE {:.3}%",
        metrics.epochs,
        metrics.initial_mse,
        metrics.final_mse,
        metrics.test_mape
    );
    Ok((outcome.model, metrics))
}

/// Attacks every held-out window.
pub fn run_attack(
    config: &ExperimentConfig,
    ds: &TimeSeriesDataset,
    model: &Forecaster,
    budget: &AttackBudget,
) -> Result<Vec<AttackRecord>> {
    if model.history_hours() != config.history_hours {
        return Err(Error::Config(format!(
            "checkpoint expects {} history hours, config has {}",
            model.history_hours(),
            config.history_hours
        )));
    }
    let (_, test_set) = windows(config, ds)?;
    attack_series(model, &test_set, budget)
}

/// Hours covered by an attack trace with their realized inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Horizon {
    pub timestamps: Vec<NaiveDateTime>,
    pub actual: Vec<f64>,
    pub renewable: Vec<f64>,
    pub forecast_clean: Vec<f64>,
    pub forecast_attacked: Vec<f64>,
}

/// Lines a trace up with the (scaled) dataset it was computed on.
pub fn horizon(ds: &TimeSeriesDataset, trace: &[AttackRecord]) -> Result<Horizon> {
    if trace.is_empty() {
        return Err(Error::Size("attack trace is empty".into()));
    }
    let renewable = ds.renewable();
    let mut h = Horizon {
        timestamps: Vec::with_capacity(trace.len()),
        actual: Vec::with_capacity(trace.len()),
        renewable: Vec::with_capacity(trace.len()),
        forecast_clean: Vec::with_capacity(trace.len()),
        forecast_attacked: Vec::with_capacity(trace.len()),
    };
    for (k, r) in trace.iter().enumerate() {
        let t = r.target_index;
        if t >= ds.len() || ds.demand()[t] != r.actual_mw {
            return Err(Error::Consistency(format!(
                "trace row {k} (hour {t}) does not match the dataset demand"
            )));
        }
        if k > 0 && t != trace[k - 1].target_index + 1 {
            return Err(Error::Consistency(format!("trace skips from hour {} to {t}", trace[k - 1].target_index)));
        }
        h.timestamps.push(ds.timestamps()[t]);
        h.actual.push(r.actual_mw);
        h.renewable.push(renewable[t]);
        h.forecast_clean.push(r.forecast_clean_mw);
        h.forecast_attacked.push(r.forecast_attacked_mw);
    }
    Ok(h)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub clean_no_storage: Vec<SlotSettlement>,
    pub clean_storage: Vec<SlotSettlement>,
    pub attacked_no_storage: Vec<SlotSettlement>,
    pub attacked_storage: Vec<SlotSettlement>,
}

impl Simulation {
    pub fn get(&self, kind: SettlementKind) -> &[SlotSettlement] {
        match kind {
            SettlementKind::CleanNoStorage => &self.clean_no_storage,
            SettlementKind::CleanStorage => &self.clean_storage,
            SettlementKind::AttackedNoStorage => &self.attacked_no_storage,
            SettlementKind::AttackedStorage => &self.attacked_storage,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationCosts {
    pub battery_mwh: f64,
    pub clean_no_storage: CostBreakdown,
    pub clean_storage: CostBreakdown,
    pub attacked_no_storage: CostBreakdown,
    pub attacked_storage: CostBreakdown,
}

/// Settles clean and attacked forecasts with and without the battery.
pub fn run_simulate(fleet: &ThermalFleet, battery: &BatterySpec, h: &Horizon) -> Result<(Simulation, SimulationCosts)> {
    let peak = h
        .actual
        .iter()
        .chain(&h.forecast_attacked)
        .chain(&h.forecast_clean)
        .fold(0.0_f64, |m, v| m.max(*v));
    fleet.check_adequacy(peak);
    let bare = BatterySpec::none();
    let run = |forecast: &[f64], spec: &BatterySpec, label: &str| {
        let slots = simulate(fleet, forecast, &h.actual, &h.renewable, spec).map_err(|e| e.in_scenario(label))?;
        audit_soc(&slots, spec.capacity_mwh)?;
        Ok::<_, Error>(slots)
    };
    let sim = Simulation {
        clean_no_storage: run(&h.forecast_clean, &bare, "clean without storage")?,
        clean_storage: run(&h.forecast_clean, battery, "clean with storage")?,
        attacked_no_storage: run(&h.forecast_attacked, &bare, "attacked without storage")?,
        attacked_storage: run(&h.forecast_attacked, battery, "attacked with storage")?,
    };
    let costs = SimulationCosts {
        battery_mwh: battery.capacity_mwh,
        clean_no_storage: total_cost(&sim.clean_no_storage)?,
        clean_storage: total_cost(&sim.clean_storage)?,
        attacked_no_storage: total_cost(&sim.attacked_no_storage)?,
        attacked_storage: total_cost(&sim.attacked_storage)?,
    };
    Ok((sim, costs))
}

pub fn write_simulation(
    layout: &RunLayout,
    fleet: &ThermalFleet,
    h: &Horizon,
    sim: &Simulation,
    costs: &SimulationCosts,
) -> Result<()> {
    for kind in SettlementKind::ALL {
        let path = layout.settlement(kind);
        ensure_parent(&path)?;
        write_settlements(&path, fleet, sim.get(kind), &h.timestamps)?;
    }
    write_json(&layout.costs(), costs)
}

/// Labeled hour tables with and without storage.
#[derive(Debug, Clone, PartialEq)]
pub struct Analysis {
    pub records: Vec<HourRecord>,
    pub records_storage: Vec<HourRecord>,
    pub summary: AnalysisSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisSummary {
    pub no_storage: HourSummary,
    pub storage: HourSummary,
}

fn label_hours(
    attacked: &[SlotSettlement],
    clean: &[SlotSettlement],
    timestamps: &[NaiveDateTime],
    config: &AnalysisConfig,
) -> Result<(Vec<HourRecord>, HourSummary)> {
    let mut records = cost_loss_ratio(attacked, clean, timestamps)?;
    let threshold = config
        .vulnerable_threshold
        .unwrap_or_else(|| vulnerable_threshold(&records, config.vulnerable_percentile, config.tolerance));
    let counts = classify_hours(&mut records, threshold, config.tolerance)?;
    let totals = CostTotals::new(&total_cost(attacked)?, &total_cost(clean)?);
    let summary = summarize(&records, counts, threshold, totals, config.tolerance);
    Ok((records, summary))
}

/// Cost-loss ratios of the attacked runs against their clean counterparts.
pub fn run_analyze(
    config: &AnalysisConfig,
    timestamps: &[NaiveDateTime],
    sim: &Simulation,
) -> Result<Analysis> {
    let (records, no_storage) = label_hours(&sim.attacked_no_storage, &sim.clean_no_storage, timestamps, config)?;
    let (records_storage, storage) = label_hours(&sim.attacked_storage, &sim.clean_storage, timestamps, config)?;
    Ok(Analysis {
        records,
        records_storage,
        summary: AnalysisSummary { no_storage, storage },
    })
}

pub fn write_analysis(layout: &RunLayout, analysis: &Analysis) -> Result<()> {
    for (storage, records) in [(false, &analysis.records), (true, &analysis.records_storage)] {
        let path = layout.hour_records(storage);
        ensure_parent(&path)?;
        write_hour_records(&path, records)?;
        emit_heatmap(layout.heatmap(storage), records)?;
    }
    write_json(&layout.summary(), &analysis.summary)
}

/// Reads the four settlement files of a run.
pub fn read_simulation(layout: &RunLayout) -> Result<(Vec<NaiveDateTime>, Simulation)> {
    let mut tables = Vec::new();
    for kind in SettlementKind::ALL {
        tables.push(crate::dispatch::read_settlements(layout.settlement(kind))?);
    }
    let timestamps = tables[0].timestamps.clone();
    if tables.iter().any(|t| t.timestamps != timestamps) {
        return Err(Error::Consistency("settlement files cover different hours".into()));
    }
    let mut slots = tables.into_iter().map(|t| t.slots);
    let mut next = || slots.next().expect("four tables");
    let sim = Simulation {
        clean_no_storage: next(),
        clean_storage: next(),
        attacked_no_storage: next(),
        attacked_storage: next(),
    };
    Ok((timestamps, sim))
}

/// One point of the attack-degree curves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub eps: f64,
    pub cost_no_storage: f64,
    pub cost_storage: f64,
}

/// Total attacked cost with and without storage for each budget.
pub fn attack_degree_sweep(
    config: &ExperimentConfig,
    raw: &TimeSeriesDataset,
    scaled: &TimeSeriesDataset,
    model: &Forecaster,
    fleet: &ThermalFleet,
    battery: &BatterySpec,
    eps_list: &[f64],
) -> Result<Vec<CurvePoint>> {
    if eps_list.windows(2).any(|p| p[0] >= p[1]) {
        return Err(Error::Value("budgets must be strictly ascending".into()));
    }
    eps_list
        .iter()
        .map(|&eps| {
            let context = format!("eps {eps}");
            let trace = run_attack(config, raw, model, &config.budget_for(eps)).map_err(|e| e.in_scenario(&context))?;
            let h = horizon(scaled, &trace)?;
            let (_, costs) = run_simulate(fleet, battery, &h).map_err(|e| e.in_scenario(&context))?;
            Ok(CurvePoint {
                eps,
                cost_no_storage: costs.attacked_no_storage.total,
                cost_storage: costs.attacked_storage.total,
            })
        })
        .collect()
}

/// Everything a single run needs besides its outputs.
pub struct Scenario {
    pub raw: TimeSeriesDataset,
    pub scaled: TimeSeriesDataset,
    pub fleet: ThermalFleet,
}

impl Scenario {
    pub fn load(config: &ExperimentConfig) -> Result<Self> {
        Self::with_coeff(config, config.scaling.joint_coeff)
    }

    pub fn with_coeff(config: &ExperimentConfig, joint_coeff: f64) -> Result<Self> {
        let raw = load_dataset(config)?;
        let scaled = raw.scale_renewables(config.scaling.solar_coeff, joint_coeff)?;
        Ok(Self {
            raw,
            scaled,
            fleet: config.fleet()?,
        })
    }
}

/// Runs every stage for `config` into `layout`.
pub fn run_all(config: &ExperimentConfig, layout: &RunLayout) -> Result<()> {
    config.validate()?;
    let scenario = Scenario::load(config)?;
    write_atomic(&layout.config(), recorded_config(config)?.as_bytes())?;
    let (model, metrics) = run_train(config, &scenario.raw)?;
    ensure_parent(&layout.checkpoint())?;
    model.save(layout.checkpoint())?;
    write_json(&layout.train_metrics(), &metrics)?;
    let trace = run_attack(config, &scenario.raw, &model, &config.attack)?;
    ensure_parent(&layout.trace())?;
    write_trace(layout.trace(), &trace)?;
    let h = horizon(&scenario.scaled, &read_trace(layout.trace())?)?;
    let (sim, costs) = run_simulate(&scenario.fleet, &config.battery, &h)?;
    write_simulation(layout, &scenario.fleet, &h, &sim, &costs)?;
    let analysis = run_analyze(&config.analysis, &h.timestamps, &sim)?;
    write_analysis(layout, &analysis)
}
