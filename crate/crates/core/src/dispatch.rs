//! Merit-order dispatch and per-slot cost settlement.
//!
//! Thermal power is scheduled against the forecast net load, cheapest unit
//! first. Realized demand is then settled with the storage controller:
//! over-procurement that cannot be stored is wasted at the schedule's
//! marginal price, and any remaining deficit is bought at the real-time
//! marginal price of the thermal stack.

use std::collections::BTreeSet;
use std::path::Path;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use crate::data::{format_timestamp, TimeSeriesDataset};
use crate::error::{Error, Result};
use crate::storage::{control_slot, BatterySpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnitSpec {
    pub id: String,
    pub capacity_mw: f64,
    pub marginal_cost_per_mwh: f64,
}

impl UnitSpec {
    pub fn new(id: impl Into<String>, capacity_mw: f64, marginal_cost_per_mwh: f64) -> Self {
        Self {
            id: id.into(),
            capacity_mw,
            marginal_cost_per_mwh,
        }
    }
}

/// Thermal units in merit order (ascending marginal cost).
#[derive(Debug, Clone, PartialEq)]
pub struct ThermalFleet {
    units: Vec<UnitSpec>,
    capacity: f64,
}

impl ThermalFleet {
    /// Validates the units and sorts them into merit order. Ties keep their
    /// input order.
    pub fn new(mut units: Vec<UnitSpec>) -> Result<Self> {
        if units.is_empty() {
            return Err(Error::Value("fleet has no units".into()));
        }
        let mut ids = BTreeSet::new();
        for u in &units {
            if u.id.is_empty() || !ids.insert(u.id.as_str()) {
                return Err(Error::Value(format!("unit id `{}` is empty or repeated", u.id)));
            }
            if !(u.capacity_mw.is_finite() && u.capacity_mw > 0.0) {
                return Err(Error::Value(format!(
                    "unit {} capacity must be > 0, got {}",
                    u.id, u.capacity_mw
                )));
            }
            if !u.marginal_cost_per_mwh.is_finite() || u.marginal_cost_per_mwh < 0.0 {
                return Err(Error::Value(format!(
                    "unit {} marginal cost must be ≥ 0, got {}",
                    u.id, u.marginal_cost_per_mwh
                )));
            }
        }
        units.sort_by(|a, b| a.marginal_cost_per_mwh.total_cmp(&b.marginal_cost_per_mwh));
        let capacity = units.iter().map(|u| u.capacity_mw).sum();
        Ok(Self { units, capacity })
    }

    /// Reads a JSON list of units.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::new(serde_json::from_str(&text)?)
    }

    pub fn units(&self) -> &[UnitSpec] {
        &self.units
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn capacity(&self) -> f64 {
        self.capacity
    }

    pub fn cheapest_price(&self) -> f64 {
        self.units[0].marginal_cost_per_mwh
    }

    /// Logs a warning when the fleet cannot cover `max_need`.
    pub fn check_adequacy(&self, max_need: f64) -> bool {
        let ok = max_need <= self.capacity;
        if !ok {
            log::warn!(
                "fleet capacity {:.1} MW is below the peak net demand {:.1} MW",
                self.capacity,
                max_need
            );
        }
        ok
    }

    pub fn thermal_cost(&self, outputs: &[f64]) -> f64 {
        self.units
            .iter()
            .zip(outputs)
            .map(|(u, p)| u.marginal_cost_per_mwh * p)
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dispatch {
    /// Output per unit in merit order.
    pub outputs: Vec<f64>,
    /// Cost of the most expensive unit running; the cheapest unit's cost
    /// when nothing runs.
    pub marginal_price: f64,
}

/// Fills `need` MW cheapest unit first.
pub fn merit_dispatch(fleet: &ThermalFleet, need: f64) -> Result<Dispatch> {
    if !(need.is_finite() && need >= 0.0) {
        return Err(Error::Value(format!("need must be finite and ≥ 0, got {need}")));
    }
    if need > fleet.capacity {
        return Err(Error::Infeasible {
            need,
            capacity: fleet.capacity,
            deficit: need - fleet.capacity,
        });
    }
    let mut remaining = need;
    let mut marginal_price = fleet.cheapest_price();
    let outputs = fleet
        .units
        .iter()
        .map(|u| {
            let p = remaining.min(u.capacity_mw);
            if p > 0.0 {
                marginal_price = u.marginal_cost_per_mwh;
            }
            remaining -= p;
            p
        })
        .collect();
    Ok(Dispatch {
        outputs,
        marginal_price,
    })
}

/// Ratio of renewable surplus to renewable gap over a horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rho {
    pub value: f64,
    /// True when the gap is zero and `value` is the +∞ sentinel.
    pub degenerate: bool,
}

pub fn rho_indicator(ds: &TimeSeriesDataset) -> Rho {
    rho_from_series(&ds.renewable(), ds.demand())
}

pub fn rho_from_series(renewable: &[f64], demand: &[f64]) -> Rho {
    let (surplus, gap) = renewable
        .iter()
        .zip(demand)
        .fold((0.0, 0.0), |(s, g), (w, d)| {
            (s + (w - d).max(0.0), g + (d - w).max(0.0))
        });
    if gap == 0.0 {
        Rho {
            value: f64::INFINITY,
            degenerate: true,
        }
    } else {
        Rho {
            value: surplus / gap,
            degenerate: false,
        }
    }
}

/// Outcome of one settled hour. Power figures are MW over the hour, storage
/// figures MWh.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotSettlement {
    pub hour: usize,
    pub forecast_mw: f64,
    pub actual_mw: f64,
    pub renewable_mw: f64,
    /// Thermal output bought in scheduling.
    pub scheduled_mw: f64,
    /// Physical output per unit in merit order, real-time purchases included.
    pub outputs: Vec<f64>,
    pub charge_mw: f64,
    pub discharge_mw: f64,
    pub soc_prev_mwh: f64,
    pub soc_mwh: f64,
    pub wasted_mw: f64,
    pub shortfall_mw: f64,
    pub loss_mw: f64,
    pub thermal_cost: f64,
    pub waste_cost: f64,
    pub premium_cost: f64,
    pub price_schedule: f64,
    pub price_realtime: f64,
}

impl SlotSettlement {
    pub fn total_cost(&self) -> f64 {
        self.thermal_cost + self.waste_cost + self.premium_cost
    }

    /// `ΣP + w − D − g + b − wasted − loss`; zero up to rounding.
    pub fn balance_residual(&self) -> f64 {
        let generated: f64 = self.outputs.iter().sum();
        generated + self.renewable_mw
            - self.actual_mw
            - self.charge_mw
            + self.discharge_mw
            - self.wasted_mw
            - self.loss_mw
    }
}

/// Schedules and settles one hour starting from state of charge `soc`.
pub fn settle_slot(
    fleet: &ThermalFleet,
    forecast: f64,
    actual: f64,
    renewable: f64,
    soc: f64,
    battery: &BatterySpec,
) -> Result<SlotSettlement> {
    let control = control_slot(forecast, actual, renewable, soc, battery)?;
    let schedule = merit_dispatch(fleet, control.thermal_need)?;
    let (outputs, price_realtime) = if control.shortfall > 0.0 {
        let realtime = merit_dispatch(fleet, control.thermal_need + control.shortfall)?;
        (realtime.outputs, realtime.marginal_price)
    } else {
        (schedule.outputs.clone(), schedule.marginal_price)
    };
    Ok(SlotSettlement {
        hour: 0,
        forecast_mw: forecast,
        actual_mw: actual,
        renewable_mw: renewable,
        scheduled_mw: control.thermal_need,
        outputs,
        charge_mw: control.charge,
        discharge_mw: control.discharge,
        soc_prev_mwh: soc,
        soc_mwh: control.soc,
        wasted_mw: control.wasted(),
        shortfall_mw: control.shortfall,
        loss_mw: control.loss,
        thermal_cost: fleet.thermal_cost(&schedule.outputs),
        waste_cost: schedule.marginal_price * control.waste_over,
        premium_cost: price_realtime * control.shortfall,
        price_schedule: schedule.marginal_price,
        price_realtime,
    })
}

/// Settles a horizon hour by hour from an empty battery.
pub fn simulate(
    fleet: &ThermalFleet,
    forecast: &[f64],
    actual: &[f64],
    renewable: &[f64],
    battery: &BatterySpec,
) -> Result<Vec<SlotSettlement>> {
    if forecast.len() != actual.len() || actual.len() != renewable.len() {
        return Err(Error::Shape(format!(
            "series lengths differ: forecast {}, actual {}, renewable {}",
            forecast.len(),
            actual.len(),
            renewable.len()
        )));
    }
    let mut soc = 0.0;
    let mut out = Vec::with_capacity(actual.len());
    for t in 0..actual.len() {
        let mut slot = settle_slot(fleet, forecast[t], actual[t], renewable[t], soc, battery)
            .map_err(|e| e.in_scenario(format!("hour {t}")))?;
        slot.hour = t;
        soc = slot.soc_mwh;
        out.push(slot);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub thermal: f64,
    pub waste: f64,
    pub premium: f64,
    pub total: f64,
}

/// Sums the cost components of a chained settlement sequence.
pub fn total_cost(settlements: &[SlotSettlement]) -> Result<CostBreakdown> {
    if settlements.is_empty() {
        return Err(Error::Value("no settlements to total".into()));
    }
    check_chain(settlements)?;
    let mut c = CostBreakdown::default();
    for s in settlements {
        c.thermal += s.thermal_cost;
        c.waste += s.waste_cost;
        c.premium += s.premium_cost;
    }
    c.total = c.thermal + c.waste + c.premium;
    Ok(c)
}

fn check_chain(settlements: &[SlotSettlement]) -> Result<()> {
    for (t, pair) in settlements.windows(2).enumerate() {
        if pair[0].soc_mwh != pair[1].soc_prev_mwh {
            return Err(Error::Consistency(format!(
                "state of charge chain breaks between slots {t} and {}: {} vs {}",
                t + 1,
                pair[0].soc_mwh,
                pair[1].soc_prev_mwh
            )));
        }
    }
    Ok(())
}

/// Checks an empty start, the exact recurrence, and `0 ≤ B_t ≤ capacity`.
pub fn audit_soc(settlements: &[SlotSettlement], capacity: f64) -> Result<()> {
    if let Some(first) = settlements.first() {
        if first.soc_prev_mwh != 0.0 {
            return Err(Error::Consistency(format!(
                "horizon starts at state of charge {}",
                first.soc_prev_mwh
            )));
        }
    }
    check_chain(settlements)?;
    for s in settlements {
        if s.soc_mwh != s.soc_prev_mwh + s.charge_mw - s.discharge_mw {
            return Err(Error::Consistency(format!(
                "hour {}: state of charge {} does not follow from {} + {} − {}",
                s.hour, s.soc_mwh, s.soc_prev_mwh, s.charge_mw, s.discharge_mw
            )));
        }
        if !(0.0..=capacity).contains(&s.soc_mwh) {
            return Err(Error::Consistency(format!(
                "hour {}: state of charge {} outside [0, {capacity}]",
                s.hour, s.soc_mwh
            )));
        }
    }
    Ok(())
}

/// Writes one CSV row per slot. `timestamps` must align with the slots.
pub fn write_settlements(
    path: impl AsRef<Path>,
    fleet: &ThermalFleet,
    settlements: &[SlotSettlement],
    timestamps: &[NaiveDateTime],
) -> Result<()> {
    let path = path.as_ref();
    if timestamps.len() != settlements.len() {
        return Err(Error::Shape(format!(
            "{} timestamps for {} settlements",
            timestamps.len(),
            settlements.len()
        )));
    }
    let mut wtr = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = SETTLEMENT_COLUMNS[..6].iter().map(|s| s.to_string()).collect();
    header.extend(fleet.units().iter().map(|u| format!("p_{}", u.id)));
    header.extend(SETTLEMENT_COLUMNS[6..].iter().map(|s| s.to_string()));
    wtr.write_record(&header)?;
    for (s, ts) in settlements.iter().zip(timestamps) {
        let mut row = vec![s.hour.to_string(), format_timestamp(ts)];
        let numbers = [s.forecast_mw, s.actual_mw, s.renewable_mw, s.scheduled_mw]
            .into_iter()
            .chain(s.outputs.iter().copied())
            .chain([
                s.charge_mw,
                s.discharge_mw,
                s.soc_prev_mwh,
                s.soc_mwh,
                s.wasted_mw,
                s.shortfall_mw,
                s.loss_mw,
                s.thermal_cost,
                s.waste_cost,
                s.premium_cost,
                s.total_cost(),
                s.price_schedule,
                s.price_realtime,
                s.balance_residual(),
            ]);
        row.extend(numbers.map(|v| v.to_string()));
        wtr.write_record(&row)?;
    }
    wtr.flush().map_err(|e| Error::io(path, e))
}

/// Settlements read back from CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct SettlementTable {
    pub unit_ids: Vec<String>,
    pub timestamps: Vec<NaiveDateTime>,
    pub slots: Vec<SlotSettlement>,
}

/// Columns every settlement file carries besides the per-unit outputs.
pub const SETTLEMENT_COLUMNS: [&str; 20] = [
    "hour",
    "timestamp",
    "forecast_mw",
    "actual_mw",
    "renewable_mw",
    "scheduled_mw",
    "charge_mw",
    "discharge_mw",
    "soc_prev_mwh",
    "soc_mwh",
    "wasted_mw",
    "shortfall_mw",
    "loss_mw",
    "thermal_cost",
    "waste_cost",
    "premium_cost",
    "total_cost",
    "price_schedule",
    "price_realtime",
    "balance_residual_mw",
];

pub fn read_settlements(path: impl AsRef<Path>) -> Result<SettlementTable> {
    let path = path.as_ref();
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    let column = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| {
            Error::Schema(format!("{}: missing column `{name}`", path.display()))
        })
    };
    let idx: Vec<usize> = SETTLEMENT_COLUMNS
        .iter()
        .map(|c| column(c))
        .collect::<Result<_>>()?;
    let units: Vec<(String, usize)> = headers
        .iter()
        .enumerate()
        .filter_map(|(i, h)| h.strip_prefix("p_").map(|id| (id.to_string(), i)))
        .collect();
    let mut table = SettlementTable {
        unit_ids: units.iter().map(|(id, _)| id.clone()).collect(),
        timestamps: Vec::new(),
        slots: Vec::new(),
    };
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        let bad = |message: String| Error::Integrity { row: row + 1, message };
        let num = |i: usize| -> Result<f64> {
            record[i]
                .parse::<f64>()
                .map_err(|_| bad(format!("`{}` is not a number", &record[i])))
        };
        let hour = record[idx[0]]
            .parse::<usize>()
            .map_err(|_| bad(format!("bad hour `{}`", &record[idx[0]])))?;
        let ts = crate::data::parse_timestamp(&record[idx[1]])
            .ok_or_else(|| bad(format!("bad timestamp `{}`", &record[idx[1]])))?;
        let v: Vec<f64> = idx[2..].iter().map(|i| num(*i)).collect::<Result<_>>()?;
        let outputs = units.iter().map(|(_, i)| num(*i)).collect::<Result<_>>()?;
        table.timestamps.push(ts);
        table.slots.push(SlotSettlement {
            hour,
            forecast_mw: v[0],
            actual_mw: v[1],
            renewable_mw: v[2],
            scheduled_mw: v[3],
            outputs,
            charge_mw: v[4],
            discharge_mw: v[5],
            soc_prev_mwh: v[6],
            soc_mwh: v[7],
            wasted_mw: v[8],
            shortfall_mw: v[9],
            loss_mw: v[10],
            thermal_cost: v[11],
            waste_cost: v[12],
            premium_cost: v[13],
            price_schedule: v[15],
            price_realtime: v[16],
        });
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fleet(units: &[(&str, f64, f64)]) -> ThermalFleet {
        ThermalFleet::new(units.iter().map(|(id, c, p)| UnitSpec::new(*id, *c, *p)).collect()).unwrap()
    }

    #[test]
    fn merit_order_fill() {
        let f = fleet(&[("B", 100.0, 30.0), ("A", 100.0, 10.0)]);
        assert_eq!(f.units()[0].id, "A");
        let d = merit_dispatch(&f, 150.0).unwrap();
        assert_eq!(d.outputs, vec![100.0, 50.0]);
        assert_eq!(d.marginal_price, 30.0);
        let d = merit_dispatch(&f, 0.0).unwrap();
        assert_eq!(d.outputs, vec![0.0, 0.0]);
        assert_eq!(d.marginal_price, 10.0);
        match merit_dispatch(&f, 250.0) {
            Err(Error::Infeasible { deficit, .. }) => assert_eq!(deficit, 50.0),
            other => panic!("expected infeasibility, got {other:?}"),
        }
    }

    #[test]
    fn invalid_fleets_rejected() {
        assert!(ThermalFleet::new(vec![]).is_err());
        assert!(ThermalFleet::new(vec![UnitSpec::new("a", 0.0, 1.0)]).is_err());
        assert!(ThermalFleet::new(vec![UnitSpec::new("a", 1.0, 1.0), UnitSpec::new("a", 1.0, 2.0)]).is_err());
        assert!(ThermalFleet::new(vec![UnitSpec::new("a", 1.0, f64::NAN)]).is_err());
    }

    #[test]
    fn rho_examples() {
        let r = rho_from_series(&[5.0, 1.0], &[3.0, 4.0]);
        assert_eq!(r.value, 2.0 / 3.0);
        assert!(!r.degenerate);
        assert_eq!(rho_from_series(&[1.0, 2.0], &[1.0, 3.0]).value, 0.0);
        let r = rho_from_series(&[2.0, 2.0], &[2.0, 2.0]);
        assert!(r.degenerate && r.value.is_infinite());
    }

    #[test]
    fn perfect_forecast_slot() {
        let f = fleet(&[("A", 200.0, 10.0)]);
        let s = settle_slot(&f, 100.0, 100.0, 0.0, 0.0, &BatterySpec::none()).unwrap();
        assert_eq!(s.total_cost(), 1000.0);
        assert_eq!((s.charge_mw, s.discharge_mw), (0.0, 0.0));
        assert_eq!((s.waste_cost, s.premium_cost), (0.0, 0.0));
    }

    #[test]
    fn over_forecast_charges_battery() {
        let f = fleet(&[("A", 200.0, 10.0)]);
        let s = settle_slot(&f, 120.0, 100.0, 0.0, 0.0, &BatterySpec::ideal(1e6)).unwrap();
        assert_eq!(s.outputs, vec![120.0]);
        assert_eq!(s.charge_mw, 20.0);
        assert_eq!(s.soc_mwh, 20.0);
        assert_eq!(s.total_cost(), 1200.0);
        assert_eq!(s.waste_cost, 0.0);
        // Without storage the same 20 MW is wasted at the schedule price.
        let s = settle_slot(&f, 120.0, 100.0, 0.0, 0.0, &BatterySpec::none()).unwrap();
        assert_eq!(s.waste_cost, 200.0);
        assert_eq!(s.wasted_mw, 20.0);
    }

    #[test]
    fn under_forecast_pays_premium() {
        let f = fleet(&[("A", 90.0, 10.0), ("B", 100.0, 30.0)]);
        let s = settle_slot(&f, 80.0, 100.0, 0.0, 0.0, &BatterySpec::none()).unwrap();
        assert_eq!(s.scheduled_mw, 80.0);
        assert_eq!(s.shortfall_mw, 20.0);
        assert_eq!(s.price_realtime, 30.0);
        assert_eq!(s.outputs, vec![90.0, 10.0]);
        assert_eq!(s.total_cost(), 1400.0);
        assert_eq!(s.balance_residual(), 0.0);
    }

    #[test]
    fn infeasible_slot_reports_hour() {
        let f = fleet(&[("A", 50.0, 10.0)]);
        let err = simulate(&f, &[10.0, 80.0], &[10.0, 80.0], &[0.0, 0.0], &BatterySpec::none()).unwrap_err();
        assert!(err.to_string().contains("hour 1"), "{err}");
    }

    #[test]
    fn totals_and_chain() {
        let f = fleet(&[("A", 500.0, 10.0), ("B", 500.0, 40.0)]);
        let fc = [120.0, 80.0, 300.0, 0.0];
        let ac = [100.0, 110.0, 250.0, 0.0];
        let w = [0.0, 50.0, 20.0, 0.0];
        let slots = simulate(&f, &fc, &ac, &w, &BatterySpec::ideal(30.0)).unwrap();
        audit_soc(&slots, 30.0).unwrap();
        let total = total_cost(&slots).unwrap();
        let manual: f64 = slots.iter().map(|s| s.total_cost()).sum();
        assert!((total.total - manual).abs() < 1e-9);
        let mut broken = slots.clone();
        broken[2].soc_prev_mwh += 1.0;
        assert!(matches!(total_cost(&broken), Err(Error::Consistency(_))));

        let zeros = simulate(&f, &[0.0; 3], &[0.0; 3], &[0.0; 3], &BatterySpec::ideal(10.0)).unwrap();
        assert_eq!(total_cost(&zeros).unwrap().total, 0.0);
    }

    #[test]
    fn perfect_forecast_never_cycles() {
        let f = fleet(&[("A", 500.0, 10.0), ("B", 500.0, 40.0)]);
        let d = [100.0, 400.0, 700.0, 50.0];
        let slots = simulate(&f, &d, &d, &[0.0; 4], &BatterySpec::ideal(100.0)).unwrap();
        for s in &slots {
            assert_eq!((s.charge_mw, s.discharge_mw, s.waste_cost, s.premium_cost), (0.0, 0.0, 0.0, 0.0));
        }
    }

    #[test]
    fn settlement_csv_has_unit_columns() {
        let f = fleet(&[("A", 200.0, 10.0), ("B", 100.0, 30.0)]);
        let slots = simulate(&f, &[100.0], &[120.0], &[0.0], &BatterySpec::none()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        let ts = [chrono::NaiveDate::from_ymd_opt(2012, 9, 1)
            .unwrap()
            .and_hms_opt(0, 0, 0)
            .unwrap()];
        write_settlements(&path, &f, &slots, &ts).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let table = read_settlements(&path).unwrap();
        assert_eq!(table.slots, slots);
        assert_eq!(table.unit_ids, vec!["A", "B"]);
        assert_eq!(table.timestamps, ts);
        let header = text.lines().next().unwrap();
        assert!(header.contains(",p_A,p_B,"));
        assert!(text.lines().nth(1).unwrap().starts_with("0,2012-09-01T00:00:00,100,120,0,100,120,0,"));
    }

    proptest! {
        #[test]
        fn balance_holds(
            slots in proptest::collection::vec((0.0f64..300.0, 0.0f64..300.0, 0.0f64..300.0), 1..30),
            cap in 0.0f64..200.0,
        ) {
            let f = fleet(&[("A", 200.0, 10.0), ("B", 200.0, 25.0), ("C", 400.0, 90.0)]);
            let fc: Vec<f64> = slots.iter().map(|s| s.0).collect();
            let ac: Vec<f64> = slots.iter().map(|s| s.1).collect();
            let w: Vec<f64> = slots.iter().map(|s| s.2).collect();
            let out = simulate(&f, &fc, &ac, &w, &BatterySpec::ideal(cap)).unwrap();
            audit_soc(&out, cap).unwrap();
            for s in &out {
                prop_assert!(s.balance_residual().abs() < 1e-9);
                prop_assert!(s.charge_mw * s.discharge_mw == 0.0);
                for (p, u) in s.outputs.iter().zip(f.units()) {
                    prop_assert!(*p >= 0.0 && *p <= u.capacity_mw);
                }
            }
        }
    }
}
