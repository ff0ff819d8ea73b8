//! Greedy battery control: discharge before buying thermal power, store
//! whatever would otherwise be wasted.
//!
//! Each slot runs in two phases. Scheduling covers the forecast net load,
//! settlement corrects against the realized demand. Flows from both phases
//! are netted into one charge or discharge per slot so the state of charge
//! follows `B_t = B_{t−1} + g_t − b_t`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatterySpec {
    pub capacity_mwh: f64,
    /// Per-slot cap on gross charge and on gross discharge. Unlimited when
    /// unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub power_limit_mw: Option<f64>,
    /// Fraction of charged energy that reaches the store.
    #[serde(default = "unit_efficiency")]
    pub efficiency: f64,
}

fn unit_efficiency() -> f64 {
    1.0
}

impl BatterySpec {
    /// Ideal battery: lossless, no power limit.
    pub fn ideal(capacity_mwh: f64) -> Self {
        Self {
            capacity_mwh,
            power_limit_mw: None,
            efficiency: 1.0,
        }
    }

    pub fn none() -> Self {
        Self::ideal(0.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.capacity_mwh.is_finite() && self.capacity_mwh >= 0.0) {
            return Err(Error::Value(format!(
                "battery capacity must be ≥ 0, got {}",
                self.capacity_mwh
            )));
        }
        if let Some(p) = self.power_limit_mw {
            if !(p.is_finite() && p >= 0.0) {
                return Err(Error::Value(format!("power limit must be ≥ 0, got {p}")));
            }
        }
        if !(self.efficiency > 0.0 && self.efficiency <= 1.0) {
            return Err(Error::Value(format!(
                "efficiency must lie in (0, 1], got {}",
                self.efficiency
            )));
        }
        Ok(())
    }

    fn power(&self) -> f64 {
        self.power_limit_mw.unwrap_or(f64::INFINITY)
    }
}

/// Everything the controller decides for one slot. Quantities are MW over
/// a one-hour slot; `charge`, `discharge` and `soc` are on the store side.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SlotControl {
    /// Thermal output bought in scheduling.
    pub thermal_need: f64,
    /// Over-procurement that could not be stored.
    pub waste_over: f64,
    /// Surplus renewable left unused.
    pub spilled: f64,
    /// Deficit bought in real time.
    pub shortfall: f64,
    /// Net flows, at most one of them nonzero.
    pub charge: f64,
    pub discharge: f64,
    /// Charged energy lost to conversion.
    pub loss: f64,
    pub soc: f64,
}

impl SlotControl {
    pub fn wasted(&self) -> f64 {
        self.spilled + self.waste_over
    }
}

fn check_input(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(Error::Value(format!("{name} must be finite and ≥ 0, got {v}")))
    }
}

/// Runs both control phases for one slot starting from `soc_prev`.
pub fn control_slot(
    forecast: f64,
    actual: f64,
    renewable: f64,
    soc_prev: f64,
    spec: &BatterySpec,
) -> Result<SlotControl> {
    spec.validate()?;
    check_input("forecast demand", forecast)?;
    check_input("actual demand", actual)?;
    check_input("renewable output", renewable)?;
    check_input("state of charge", soc_prev)?;
    if soc_prev > spec.capacity_mwh {
        return Err(Error::Value(format!(
            "state of charge {soc_prev} exceeds capacity {}",
            spec.capacity_mwh
        )));
    }
    let eta = spec.efficiency;
    let cap = spec.capacity_mwh;
    let power = spec.power();
    // Grid-side energy the store can still take.
    let room = |soc: f64| ((cap - soc) / eta).max(0.0);

    // Scheduling against the forecast.
    let (mut discharged, mut charged) = (0.0, 0.0);
    let mut out = SlotControl::default();
    let soc_mid;
    if renewable < forecast {
        let gap = forecast - renewable;
        discharged = soc_prev.min(gap).min(power);
        out.thermal_need = gap - discharged;
        soc_mid = soc_prev - discharged;
    } else {
        let surplus = renewable - forecast;
        charged = room(soc_prev).min(surplus).min(power);
        out.spilled = surplus - charged;
        soc_mid = soc_prev + eta * charged;
    }

    // Settlement against the realized demand.
    if forecast > actual {
        let over = forecast - actual;
        let stored = room(soc_mid).min(over).min(power - charged);
        charged += stored;
        out.waste_over = over - stored;
    } else {
        let mut deficit = actual - forecast;
        let from_spill = out.spilled.min(deficit);
        out.spilled -= from_spill;
        deficit -= from_spill;
        let from_store = soc_mid.min(deficit).min(power - discharged);
        discharged += from_store;
        out.shortfall = deficit - from_store;
    }

    let net = eta * charged - discharged;
    if net >= 0.0 {
        out.charge = net;
        // Keep the rounded state of charge inside [0, capacity].
        while soc_prev + out.charge > cap {
            out.charge = out.charge.next_down();
        }
    } else {
        out.discharge = -net;
        while soc_prev - out.discharge < 0.0 {
            out.discharge = out.discharge.next_down();
        }
    }
    out.soc = soc_prev + out.charge - out.discharge;
    out.loss = (1.0 - eta) * charged;
    Ok(out)
}
