//! Experiment configuration, read from and written to TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adversary::AttackBudget;
use crate::analysis::{DEFAULT_TOLERANCE, DEFAULT_UNCHANGED_BAND, DEFAULT_VULNERABLE_PERCENTILE};
use crate::data::{DEFAULT_HISTORY_HOURS, DEFAULT_TRAIN_FRACTION};
use crate::dispatch::{ThermalFleet, UnitSpec};
use crate::error::{Error, Result};
use crate::forecaster::TrainConfig;
use crate::storage::BatterySpec;
use crate::synth::{synthetic_fleet, SynthConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScalingConfig {
    /// Applied to solar only, before the joint coefficient.
    pub solar_coeff: f64,
    /// Applied to wind and scaled solar.
    pub joint_coeff: f64,
}

impl Default for ScalingConfig {
    fn default() -> Self {
        Self {
            solar_coeff: 16_000.0,
            joint_coeff: 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// Demand budgets ε₁.
    pub eps: Vec<f64>,
    /// Fixed temperature budget ε₂; when unset ε₂ follows ε₁.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps_temp: Option<f64>,
    pub penetration_coeffs: Vec<f64>,
    pub battery_mwh: Vec<f64>,
    /// Worker threads; 0 uses all cores.
    pub jobs: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            eps: vec![0.0, 0.01, 0.03, 0.05],
            eps_temp: None,
            penetration_coeffs: vec![4.0, 6.5],
            battery_mwh: vec![0.0, 16_000.0],
            jobs: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub tolerance: f64,
    pub vulnerable_percentile: f64,
    /// Absolute cut overriding the percentile.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vulnerable_threshold: Option<f64>,
    pub unchanged_band: f64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            tolerance: DEFAULT_TOLERANCE,
            vulnerable_percentile: DEFAULT_VULNERABLE_PERCENTILE,
            vulnerable_threshold: None,
            unchanged_band: DEFAULT_UNCHANGED_BAND,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub history_hours: usize,
    pub train_fraction: f64,
    /// Hourly input CSV. The synthetic generator is used when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    pub out_dir: PathBuf,
    /// JSON list of units; takes precedence over inline `fleet`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fleet_file: Option<PathBuf>,
    pub synthetic: SynthConfig,
    pub train: TrainConfig,
    pub attack: AttackBudget,
    pub battery: BatterySpec,
    pub scaling: ScalingConfig,
    pub sweep: SweepConfig,
    pub analysis: AnalysisConfig,
    /// Inline units; the synthetic stack is used when empty.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub fleet: Vec<UnitSpec>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            history_hours: DEFAULT_HISTORY_HOURS,
            train_fraction: DEFAULT_TRAIN_FRACTION,
            data: None,
            out_dir: PathBuf::from("results"),
            fleet_file: None,
            synthetic: SynthConfig::default(),
            train: TrainConfig {
                epochs: 40,
                learning_rate: 0.02,
                batch_size: Some(64),
                ..TrainConfig::default()
            },
            attack: AttackBudget::default(),
            battery: BatterySpec::ideal(16_000.0),
            scaling: ScalingConfig::default(),
            sweep: SweepConfig::default(),
            analysis: AnalysisConfig::default(),
            fleet: Vec::new(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a config file; relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::from_toml(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = config.data.as_mut() {
            resolve(p);
        }
        if let Some(p) = config.fleet_file.as_mut() {
            resolve(p);
        }
        resolve(&mut config.out_dir);
        Ok(config)
    }

    /// Seeds model initialization, batch order and attack random starts.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.train.seed = seed;
        self.attack.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.history_hours == 0 {
            return fail("history_hours must be positive".into());
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return fail(format!("train_fraction must lie in (0, 1), got {}", self.train_fraction));
        }
        for (name, path) in [("data", &self.data), ("fleet_file", &self.fleet_file)] {
            if let Some(p) = path {
                if !p.is_file() {
                    return fail(format!("{name} file {} does not exist", p.display()));
                }
            }
        }
        self.train.validate()?;
        self.attack
            .validate()
            .map_err(|e| Error::Config(format!("attack: {e}")))?;
        self.battery
            .validate()
            .map_err(|e| Error::Config(format!("battery: {e}")))?;
        for (name, c) in [
            ("scaling.solar_coeff", self.scaling.solar_coeff),
            ("scaling.joint_coeff", self.scaling.joint_coeff),
        ] {
            if !(c.is_finite() && c > 0.0) {
                return fail(format!("{name} must be positive, got {c}"));
            }
        }
        let s = &self.sweep;
        if s.eps.is_empty() || s.penetration_coeffs.is_empty() || s.battery_mwh.is_empty() {
            return fail("sweep lists must not be empty".into());
        }
        if s.eps.windows(2).any(|p| p[0] >= p[1]) || s.eps.iter().any(|e| !(*e >= 0.0)) {
            return fail("sweep.eps must be ascending, distinct and ≥ 0".into());
        }
        if s.penetration_coeffs.iter().any(|c| !(c.is_finite() && *c > 0.0)) {
            return fail("sweep.penetration_coeffs must be positive".into());
        }
        if s.battery_mwh.iter().any(|b| !(b.is_finite() && *b >= 0.0)) {
            return fail("sweep.battery_mwh must be ≥ 0".into());
        }
        if let Some(e) = s.eps_temp {
            if !(e.is_finite() && e >= 0.0) {
                return fail(format!("sweep.eps_temp must be ≥ 0, got {e}"));
            }
        }
        let a = &self.analysis;
        if !(a.vulnerable_percentile > 0.0 && a.vulnerable_percentile <= 1.0) {
            return fail("analysis.vulnerable_percentile must lie in (0, 1]".into());
        }
        if a.vulnerable_threshold.is_some_and(|t| !(t > 0.0)) {
            return fail("analysis.vulnerable_threshold must be positive".into());
        }
        if !(a.tolerance >= 0.0 && a.unchanged_band >= 0.0) {
            return fail("analysis tolerances must be ≥ 0".into());
        }
        self.fleet()?;
        Ok(())
    }

    pub fn fleet(&self) -> Result<ThermalFleet> {
        match (&self.fleet_file, self.fleet.is_empty()) {
            (Some(path), _) => ThermalFleet::load(path),
            (None, false) => ThermalFleet::new(self.fleet.clone()),
            (None, true) => Ok(synthetic_fleet()),
        }
    }

    /// Attack settings for demand budget `eps`.
    pub fn budget_for(&self, eps: f64) -> AttackBudget {
        AttackBudget {
            eps_demand: eps,
            eps_temp: self.sweep.eps_temp.unwrap_or(eps),
            ..self.attack.clone()
        }
    }
}
