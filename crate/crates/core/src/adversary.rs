//! White-box projected-gradient attack on the forecaster's inputs.
//!
//! The attacker perturbs the demand and temperature histories of a window,
//! each element staying inside a relative ball
//! `|x' − x| ≤ ε·|x|`, to maximize the absolute percentage error of the
//! forecast. Iterates take a signed-gradient ascent step in normalized
//! feature space and are projected back onto the ball, which is defined in
//! raw units. The best iterate seen (the unperturbed window included) is
//! returned, so an attack never reports less error than doing nothing.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::sign;
use crate::data::{ChannelStats, ForecastWindow};
use crate::error::{Error, Result};
use crate::forecaster::{mape, Forecaster};

/// Attack strength and PGD settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackBudget {
    /// Relative bound ε₁ on each demand element.
    pub eps_demand: f64,
    /// Relative bound ε₂ on each temperature element.
    pub eps_temp: f64,
    /// Fixed step α in normalized units. When unset, each channel steps by
    /// `step_fraction` times its mean ball radius (normalized units).
    pub step_size: Option<f64>,
    pub step_fraction: f64,
    pub iterations: usize,
    pub random_start: bool,
    pub seed: u64,
}

impl Default for AttackBudget {
    fn default() -> Self {
        Self {
            eps_demand: 0.03,
            eps_temp: 0.03,
            step_size: None,
            step_fraction: 0.1,
            iterations: 20,
            random_start: false,
            seed: 0,
        }
    }
}

impl AttackBudget {
    /// Same settings with both relative bounds set to `eps`.
    pub fn with_eps(&self, eps: f64) -> Self {
        Self {
            eps_demand: eps,
            eps_temp: eps,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, eps) in [("eps_demand", self.eps_demand), ("eps_temp", self.eps_temp)] {
            if !(eps.is_finite() && eps >= 0.0) {
                return Err(Error::Value(format!("{name} must be ≥ 0, got {eps}")));
            }
        }
        if let Some(alpha) = self.step_size {
            if !(alpha.is_finite() && alpha > 0.0) {
                return Err(Error::Value(format!("step size must be > 0, got {alpha}")));
            }
        }
        if !(self.step_fraction.is_finite() && self.step_fraction > 0.0) {
            return Err(Error::Value(format!(
                "step fraction must be > 0, got {}",
                self.step_fraction
            )));
        }
        if self.iterations < 1 {
            return Err(Error::Value("attack needs at least one iteration".into()));
        }
        Ok(())
    }

    fn is_zero(&self) -> bool {
        self.eps_demand == 0.0 && self.eps_temp == 0.0
    }
}

/// Elementwise box `[lower_i, upper_i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Ball {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Ball {
    /// Relative ball `[c − ε|c|, c + ε|c|]` around `center`.
    pub fn relative(center: &[f64], eps: f64) -> Result<Self> {
        if !(eps.is_finite() && eps >= 0.0) {
            return Err(Error::Value(format!("ball radius must be ≥ 0, got {eps}")));
        }
        Ok(Self {
            lower: center.iter().map(|c| c - eps * c.abs()).collect(),
            upper: center.iter().map(|c| c + eps * c.abs()).collect(),
        })
    }

    /// The same box expressed in normalized units of `stats`.
    fn normalized(&self, stats: &ChannelStats) -> Self {
        Self {
            lower: self.lower.iter().map(|v| stats.normalize(*v)).collect(),
            upper: self.upper.iter().map(|v| stats.normalize(*v)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    pub fn project(&self, candidate: &[f64]) -> Result<Vec<f64>> {
        if candidate.len() != self.len() {
            return Err(Error::Shape(format!(
                "cannot project a vector of length {} onto a ball of length {}",
                candidate.len(),
                self.len()
            )));
        }
        Ok(candidate
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(x, (lo, hi))| x.clamp(*lo, *hi))
            .collect())
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.len()
            && x
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (lo, hi))| lo <= v && v <= hi)
    }

    fn mean_radius(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        let total: f64 = self
            .lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| (hi - lo) / 2.0)
            .sum();
        total / self.len() as f64
    }
}

/// Clamps each element of `candidate` to `[c − ε|c|, c + ε|c|]`.
pub fn project_ball(candidate: &[f64], center: &[f64], eps: f64) -> Result<Vec<f64>> {
    if candidate.len() != center.len() {
        return Err(Error::Shape(format!(
            "candidate length {} differs from center length {}",
            candidate.len(),
            center.len()
        )));
    }
    Ball::relative(center, eps)?.project(candidate)
}

/// One ascent step `Π[x + α·sign(∇)]`.
pub fn pgd_step(current: &[f64], grad: &[f64], step: f64, ball: &Ball) -> Result<Vec<f64>> {
    if grad.len() != current.len() {
        return Err(Error::Shape(format!(
            "gradient length {} differs from iterate length {}",
            grad.len(),
            current.len()
        )));
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numeric("attack gradient is not finite".into()));
    }
    let moved: Vec<f64> = current
        .iter()
        .zip(grad)
        .map(|(x, g)| x + step * sign(*g))
        .collect();
    ball.project(&moved)
}

/// Outcome of attacking one window.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackedWindow<'a> {
    pub original: &'a ForecastWindow,
    /// Demand history fed to the model, MW.
    pub perturbed_demand: Vec<f64>,
    /// Temperature history fed to the model, °C.
    pub perturbed_temperature: Vec<f64>,
    pub forecast_clean: f64,
    pub forecast_attacked: f64,
    pub clean_mape: f64,
    pub achieved_mape: f64,
}

impl AttackedWindow<'_> {
    /// The attacked model input: original extras and target, perturbed
    /// histories.
    pub fn perturbed_window(&self) -> ForecastWindow {
        self.original
            .with_history(
                self.perturbed_demand.clone(),
                self.perturbed_temperature.clone(),
            )
            .expect("perturbed histories keep the window length")
    }

    /// Checks both relative bounds element-wise in raw units, allowing
    /// `rel_tol·|x|` slack.
    pub fn is_feasible(&self, eps_demand: f64, eps_temp: f64, rel_tol: f64) -> bool {
        let within = |perturbed: &[f64], original: &[f64], eps: f64| {
            perturbed.len() == original.len()
                && perturbed
                    .iter()
                    .zip(original)
                    .all(|(p, x)| (p - x).abs() <= (eps + rel_tol) * x.abs())
        };
        within(
            &self.perturbed_demand,
            self.original.history_demand(),
            eps_demand,
        ) && within(
            &self.perturbed_temperature,
            self.original.history_temperature(),
            eps_temp,
        )
    }
}

fn window_rng(seed: u64, target_index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (target_index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Runs PGD on one window and returns the best feasible perturbation found.
pub fn attack_window<'a>(
    model: &Forecaster,
    window: &'a ForecastWindow,
    budget: &AttackBudget,
) -> Result<AttackedWindow<'a>> {
    budget.validate()?;
    let actual = window.target_demand();
    if actual == 0.0 {
        return Err(Error::Value(format!(
            "target demand at hour {} is zero; MAPE is undefined",
            window.target_index()
        )));
    }
    let forecast_clean = model.predict(window)?;
    let clean_mape = mape(forecast_clean, actual)?;
    let untouched = AttackedWindow {
        original: window,
        perturbed_demand: window.history_demand().to_vec(),
        perturbed_temperature: window.history_temperature().to_vec(),
        forecast_clean,
        forecast_attacked: forecast_clean,
        clean_mape,
        achieved_mape: clean_mape,
    };
    if budget.is_zero() {
        return Ok(untouched);
    }

    let norm = model.normalizer();
    let mut rows = norm.apply(window)?.rows;
    let raw_demand = Ball::relative(window.history_demand(), budget.eps_demand)?;
    let raw_temp = Ball::relative(window.history_temperature(), budget.eps_temp)?;
    let z_demand = raw_demand.normalized(&norm.demand);
    let z_temp = raw_temp.normalized(&norm.temperature);
    let step_demand = budget
        .step_size
        .unwrap_or(budget.step_fraction * z_demand.mean_radius());
    let step_temp = budget
        .step_size
        .unwrap_or(budget.step_fraction * z_temp.mean_radius());

    let mut x_demand: Vec<f64> = rows.iter().map(|r| r[0]).collect();
    let mut x_temp: Vec<f64> = rows.iter().map(|r| r[1]).collect();
    if budget.random_start {
        let mut rng = window_rng(budget.seed, window.target_index());
        let mut sample = |ball: &Ball| -> Vec<f64> {
            ball.lower
                .iter()
                .zip(&ball.upper)
                .map(|(lo, hi)| if hi > lo { rng.random_range(*lo..=*hi) } else { *lo })
                .collect()
        };
        x_demand = sample(&z_demand);
        x_temp = sample(&z_temp);
    }

    let mut best = untouched;
    for k in 0..=budget.iterations {
        // Emitted values live in raw units; snap the iterate onto exactly
        // what the model will see for them.
        let demand_mw = raw_demand.project(
            &x_demand
                .iter()
                .map(|z| norm.demand.denormalize(*z))
                .collect::<Vec<_>>(),
        )?;
        let temp_c = raw_temp.project(
            &x_temp
                .iter()
                .map(|z| norm.temperature.denormalize(*z))
                .collect::<Vec<_>>(),
        )?;
        for (j, row) in rows.iter_mut().enumerate() {
            row[0] = norm.demand.normalize(demand_mw[j]);
            row[1] = norm.temperature.normalize(temp_c[j]);
        }

        let last = k == budget.iterations;
        let (z_pred, grads) = if last {
            (model.predict_normalized(&rows)?, Vec::new())
        } else {
            model.mape_input_gradient(&rows, actual)?
        };
        let forecast = norm.invert_demand(z_pred);
        let achieved = mape(forecast, actual)?;
        if achieved > best.achieved_mape {
            best.perturbed_demand = demand_mw;
            best.perturbed_temperature = temp_c;
            best.forecast_attacked = forecast;
            best.achieved_mape = achieved;
        }
        if last {
            break;
        }

        let current_demand: Vec<f64> = rows.iter().map(|r| r[0]).collect();
        let current_temp: Vec<f64> = rows.iter().map(|r| r[1]).collect();
        let grad_demand: Vec<f64> = grads.iter().map(|g| g[0]).collect();
        let grad_temp: Vec<f64> = grads.iter().map(|g| g[1]).collect();
        x_demand = pgd_step(&current_demand, &grad_demand, step_demand, &z_demand)?;
        x_temp = pgd_step(&current_temp, &grad_temp, step_temp, &z_temp)?;
    }
    Ok(best)
}

/// One row of an attack trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackRecord {
    pub target_index: usize,
    pub actual_mw: f64,
    pub forecast_clean_mw: f64,
    pub forecast_attacked_mw: f64,
    pub mape_clean: f64,
    pub mape_attacked: f64,
}

/// Attacks every window independently against its own clean history.
/// Windows run in parallel; output order follows input order.
pub fn attack_series(
    model: &Forecaster,
    windows: &[ForecastWindow],
    budget: &AttackBudget,
) -> Result<Vec<AttackRecord>> {
    budget.validate()?;
    windows
        .par_iter()
        .enumerate()
        .map(|(i, w)| {
            let attacked = attack_window(model, w, budget).map_err(|e| e.in_window(i))?;
            Ok(AttackRecord {
                target_index: w.target_index(),
                actual_mw: w.target_demand(),
                forecast_clean_mw: attacked.forecast_clean,
                forecast_attacked_mw: attacked.forecast_attacked,
                mape_clean: attacked.clean_mape,
                mape_attacked: attacked.achieved_mape,
            })
        })
        .collect()
}

pub const TRACE_HEADER: [&str; 6] = [
    "target_index",
    "actual_mw",
    "forecast_clean_mw",
    "forecast_attacked_mw",
    "mape_clean",
    "mape_attacked",
];

pub fn write_trace(path: impl AsRef<Path>, records: &[AttackRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut wtr = csv::Writer::from_path(path)?;
    for r in records {
        wtr.serialize(r)?;
    }
    wtr.flush().map_err(|e| Error::io(path, e))
}

pub fn read_trace(path: impl AsRef<Path>) -> Result<Vec<AttackRecord>> {
    let path = path.as_ref();
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    if headers.iter().ne(TRACE_HEADER) {
        return Err(Error::Schema(format!(
            "{}: attack trace header must be `{}`",
            path.display(),
            TRACE_HEADER.join(",")
        )));
    }
    let records = rdr
        .deserialize()
        .collect::<std::result::Result<Vec<AttackRecord>, _>>()?;
    if records
        .windows(2)
        .any(|p| p[0].target_index >= p[1].target_index)
    {
        return Err(Error::Consistency(format!(
            "{}: target indices must be strictly increasing",
            path.display()
        )));
    }
    Ok(records)
}
