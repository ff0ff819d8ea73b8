//! Grid runs over attack budget × penetration coefficient × battery size.
//!
//! One results tree holds the shared model, one attack trace per budget and
//! one cell directory per grid point. Cells use the same file names as a
//! single run so the two can be compared directly. A manifest records each
//! cell's status; finished cells are skipped when the sweep is restarted.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adversary::{read_trace, write_trace};
use crate::analysis::{penetration_comparison, read_hour_records, PenetrationComparison};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::forecaster::Forecaster;
use crate::pipeline::{
    ensure_parent, horizon, read_json, recorded_config, run_analyze, run_attack, run_simulate, run_train,
    write_analysis, write_atomic, write_json, write_simulation, RunLayout, Scenario, SimulationCosts,
};
use crate::storage::BatterySpec;

/// One grid point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub eps: f64,
    pub coeff: f64,
    pub battery_mwh: f64,
}

impl Cell {
    pub fn id(&self) -> String {
        format!("eps_{}__coeff_{}__battery_{}", self.eps, self.coeff, self.battery_mwh)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "state", content = "message")]
pub enum CellStatus {
    Pending,
    Done,
    Failed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub cell: Cell,
    pub status: CellStatus,
}

/// Cell statuses keyed by cell id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub cells: BTreeMap<String, ManifestEntry>,
}

/// File names of a sweep tree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SweepLayout {
    pub root: PathBuf,
}

impl SweepLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    /// Config, model and cell-independent files share the single-run names.
    pub fn run(&self) -> RunLayout {
        RunLayout::new(&self.root)
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    pub fn trace(&self, eps: f64) -> PathBuf {
        self.root.join("attacks").join(format!("eps_{eps}")).join("trace.csv")
    }

    pub fn cell(&self, cell: &Cell) -> RunLayout {
        RunLayout::new(self.root.join("cells").join(cell.id()))
    }

    pub fn curves(&self) -> PathBuf {
        self.root.join("curves.csv")
    }

    pub fn comparisons(&self) -> PathBuf {
        self.root.join("comparisons.json")
    }
}

/// What a sweep invocation did.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SweepReport {
    pub computed: Vec<String>,
    pub skipped: Vec<String>,
    pub failed: Vec<(String, String)>,
}

/// Cells in grid order: coefficient, then battery, then budget.
pub fn grid(config: &ExperimentConfig) -> Vec<Cell> {
    let s = &config.sweep;
    let mut cells = Vec::new();
    for &coeff in &s.penetration_coeffs {
        for &battery_mwh in &s.battery_mwh {
            for &eps in &s.eps {
                cells.push(Cell { eps, coeff, battery_mwh });
            }
        }
    }
    cells
}

/// Low-versus-high penetration comparison for one budget and battery size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonEntry {
    pub eps: f64,
    pub battery_mwh: f64,
    pub low_coeff: f64,
    pub high_coeff: f64,
    pub no_storage: PenetrationComparison,
    pub storage: PenetrationComparison,
}

fn check_recorded_config(layout: &SweepLayout, expected: &str) -> Result<()> {
    let path = layout.run().config();
    match std::fs::read_to_string(&path) {
        Ok(existing) if existing == expected => Ok(()),
        Ok(_) => Err(Error::Config(format!(
            "{} was written by a different configuration; use a fresh output directory",
            path.display()
        ))),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => write_atomic(&path, expected.as_bytes()),
        Err(e) => Err(Error::io(path, e)),
    }
}

fn load_manifest(path: &Path) -> Result<Manifest> {
    if path.is_file() {
        read_json(path)
    } else {
        Ok(Manifest::default())
    }
}

fn cell_finished(layout: &SweepLayout, cell: &Cell, manifest: &Manifest) -> bool {
    let run = layout.cell(cell);
    manifest
        .cells
        .get(&cell.id())
        .is_some_and(|e| e.status == CellStatus::Done)
        && run.costs().is_file()
        && run.summary().is_file()
}

fn model_for(config: &ExperimentConfig, layout: &RunLayout, raw: &crate::data::TimeSeriesDataset) -> Result<Forecaster> {
    if layout.checkpoint().is_file() {
        return Forecaster::load(layout.checkpoint());
    }
    let (model, metrics) = run_train(config, raw)?;
    ensure_parent(&layout.checkpoint())?;
    model.save(layout.checkpoint())?;
    write_json(&layout.train_metrics(), &metrics)?;
    Ok(model)
}

fn run_cell(
    config: &ExperimentConfig,
    layout: &SweepLayout,
    cell: &Cell,
    scenarios: &BTreeMap<String, Scenario>,
) -> Result<()> {
    let scenario = &scenarios[&cell.coeff.to_string()];
    let trace = read_trace(layout.trace(cell.eps))?;
    let h = horizon(&scenario.scaled, &trace)?;
    let battery = BatterySpec {
        capacity_mwh: cell.battery_mwh,
        ..config.battery
    };
    let (sim, costs) = run_simulate(&scenario.fleet, &battery, &h)?;
    let run = layout.cell(cell);
    let analysis = run_analyze(&config.analysis, &h.timestamps, &sim)?;
    write_simulation(&run, &scenario.fleet, &h, &sim, &costs)?;
    write_analysis(&run, &analysis)
}

/// Runs (or resumes) the full grid into `root`.
pub fn run_sweep(config: &ExperimentConfig, root: &Path) -> Result<SweepReport> {
    config.validate()?;
    let layout = SweepLayout::new(root);
    check_recorded_config(&layout, &recorded_config(config)?)?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.sweep.jobs)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    pool.install(|| sweep_in_pool(config, &layout))
}

fn sweep_in_pool(config: &ExperimentConfig, layout: &SweepLayout) -> Result<SweepReport> {
    let mut scenarios = BTreeMap::new();
    for &coeff in &config.sweep.penetration_coeffs {
        scenarios.insert(coeff.to_string(), Scenario::with_coeff(config, coeff)?);
    }
    let raw = &scenarios.values().next().expect("coefficient list is non-empty").raw;

    let cells = grid(config);
    let mut manifest = load_manifest(&layout.manifest())?;
    let (todo, done): (Vec<Cell>, Vec<Cell>) = cells
        .iter()
        .partition(|c| !cell_finished(layout, c, &manifest));
    manifest.cells = cells
        .iter()
        .map(|c| {
            let status = if todo.contains(c) { CellStatus::Pending } else { CellStatus::Done };
            (c.id(), ManifestEntry { cell: *c, status })
        })
        .collect();
    write_json(&layout.manifest(), &manifest)?;

    if !todo.is_empty() {
        let model = model_for(config, &layout.run(), raw)?;
        let mut budgets: Vec<f64> = todo.iter().map(|c| c.eps).collect();
        budgets.sort_by(f64::total_cmp);
        budgets.dedup();
        for eps in budgets {
            let path = layout.trace(eps);
            if path.is_file() {
                continue;
            }
            let trace = run_attack(config, raw, &model, &config.budget_for(eps))
                .map_err(|e| e.in_scenario(format!("eps {eps}")))?;
            ensure_parent(&path)?;
            write_trace(&path, &trace)?;
        }
    }

    let manifest = Mutex::new(manifest);
    let outcomes: Vec<(String, Result<()>)> = todo
        .par_iter()
        .map(|cell| {
            let id = cell.id();
            let result = run_cell(config, layout, cell, &scenarios).map_err(|e| e.in_scenario(&id));
            let status = match &result {
                Ok(()) => CellStatus::Done,
                Err(e) => CellStatus::Failed(e.to_string()),
            };
            let mut m = manifest.lock().expect("manifest lock");
            m.cells.get_mut(&id).expect("cell listed").status = status;
            let written = write_json(&layout.manifest(), &*m);
            (id, result.and(written))
        })
        .collect();

    let mut report = SweepReport {
        skipped: done.iter().map(Cell::id).collect(),
        ..SweepReport::default()
    };
    for (id, result) in outcomes {
        match result {
            Ok(()) => report.computed.push(id),
            Err(e) => report.failed.push((id, e.to_string())),
        }
    }
    if report.failed.is_empty() {
        write_curves(layout, &cells)?;
        write_json(&layout.comparisons(), &comparisons(config, layout)?)?;
    }
    Ok(report)
}

fn write_curves(layout: &SweepLayout, cells: &[Cell]) -> Result<()> {
    let path = layout.curves();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "coeff",
        "battery_mwh",
        "eps",
        "clean_no_storage",
        "attacked_no_storage",
        "clean_storage",
        "attacked_storage",
    ])?;
    for cell in cells {
        let c: SimulationCosts = read_json(&layout.cell(cell).costs())?;
        w.write_record([
            cell.coeff.to_string(),
            cell.battery_mwh.to_string(),
            cell.eps.to_string(),
            c.clean_no_storage.total.to_string(),
            c.attacked_no_storage.total.to_string(),
            c.clean_storage.total.to_string(),
            c.attacked_storage.total.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::io(&path, e.into_error()))?;
    write_atomic(&path, &bytes)
}

/// Compares the lowest and highest coefficient for every budget and battery.
pub fn comparisons(config: &ExperimentConfig, layout: &SweepLayout) -> Result<Vec<ComparisonEntry>> {
    let s = &config.sweep;
    let low = s.penetration_coeffs.iter().cloned().fold(f64::INFINITY, f64::min);
    let high = s.penetration_coeffs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if low == high {
        return Ok(Vec::new());
    }
    let a = &config.analysis;
    let mut out = Vec::new();
    for &battery_mwh in &s.battery_mwh {
        for &eps in &s.eps {
            let run = |coeff| layout.cell(&Cell { eps, coeff, battery_mwh });
            let compare = |storage: bool| {
                penetration_comparison(
                    &read_hour_records(run(low).hour_records(storage))?,
                    &read_hour_records(run(high).hour_records(storage))?,
                    a.unchanged_band,
                    a.tolerance,
                )
            };
            // A zero budget leaves every ratio at zero, which admits no fit.
            let (no_storage, storage) = match (compare(false), compare(true)) {
                (Ok(n), Ok(s)) => (n, s),
                (Err(Error::Fit(_)), _) | (_, Err(Error::Fit(_))) => continue,
                (Err(e), _) | (_, Err(e)) => return Err(e),
            };
            out.push(ComparisonEntry {
                eps,
                battery_mwh,
                low_coeff: low,
                high_coeff: high,
                no_storage,
                storage,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cell_ids_are_stable() {
        let cell = Cell {
            eps: 0.03,
            coeff: 6.5,
            battery_mwh: 16_000.0,
        };
        assert_eq!(cell.id(), "eps_0.03__coeff_6.5__battery_16000");
    }

    #[test]
    fn grid_covers_every_combination() {
        let config = ExperimentConfig::default();
        let cells = grid(&config);
        assert_eq!(cells.len(), 4 * 2 * 2);
        let mut ids: Vec<String> = cells.iter().map(Cell::id).collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), cells.len());
    }

    #[test]
    fn manifest_status_round_trips() {
        let mut m = Manifest::default();
        for (k, status) in [CellStatus::Pending, CellStatus::Done, CellStatus::Failed("boom".into())]
            .into_iter()
            .enumerate()
        {
            let cell = Cell {
                eps: k as f64,
                coeff: 4.0,
                battery_mwh: 0.0,
            };
            m.cells.insert(cell.id(), ManifestEntry { cell, status });
        }
        let text = serde_json::to_string(&m).unwrap();
        assert!(text.contains(r#""state":"failed","message":"boom""#), "{text}");
        assert_eq!(serde_json::from_str::<Manifest>(&text).unwrap(), m);
    }

    #[test]
    fn foreign_config_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let layout = SweepLayout::new(dir.path());
        check_recorded_config(&layout, "seed = 1\n").unwrap();
        check_recorded_config(&layout, "seed = 1\n").unwrap();
        let err = check_recorded_config(&layout, "seed = 2\n").unwrap_err();
        assert!(err.to_string().contains("different configuration"), "{err}");
    }
}
