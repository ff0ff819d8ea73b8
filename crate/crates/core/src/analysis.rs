//! Hour-level comparison of attacked and clean operation.
//!
//! The cost-loss ratio of an hour is its attacked-minus-clean cost divided
//! by the mean hourly clean cost of the horizon. Hours are then labeled as
//! benefit, loss or extremely vulnerable, compared across penetration
//! levels, and laid out as a day × hour matrix.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{Datelike, NaiveDate, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};

use crate::dispatch::{CostBreakdown, SlotSettlement};
use crate::error::{Error, Result};

/// Ratios within `±DEFAULT_TOLERANCE` count as unchanged.
pub const DEFAULT_TOLERANCE: f64 = 1e-6;
/// Percentile of positive ratios used as the default vulnerability cut.
pub const DEFAULT_VULNERABLE_PERCENTILE: f64 = 0.95;
/// Relative band inside which a ratio is "unchanged" across penetrations.
pub const DEFAULT_UNCHANGED_BAND: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Benefit,
    Unchanged,
    Loss,
    ExtremelyVulnerable,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Benefit => "benefit",
            Label::Unchanged => "unchanged",
            Label::Loss => "loss",
            Label::ExtremelyVulnerable => "extremely_vulnerable",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HourRecord {
    pub hour: usize,
    #[serde(with = "timestamp_format")]
    pub timestamp: NaiveDateTime,
    pub month: u32,
    pub day: u32,
    pub hour_of_day: u32,
    pub cost_attacked: f64,
    pub cost_clean: f64,
    pub cost_loss_ratio: f64,
    /// `Unchanged` until [`classify_hours`] runs.
    pub label: Label,
}

mod timestamp_format {
    use chrono::NaiveDateTime;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(ts: &NaiveDateTime, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&crate::data::format_timestamp(ts))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<NaiveDateTime, D::Error> {
        let raw = String::deserialize(d)?;
        crate::data::parse_timestamp(&raw)
            .ok_or_else(|| serde::de::Error::custom(format!("bad timestamp `{raw}`")))
    }
}

/// Per-hour cost-loss ratios of `attacked` against `clean`.
pub fn cost_loss_ratio(
    attacked: &[SlotSettlement],
    clean: &[SlotSettlement],
    timestamps: &[NaiveDateTime],
) -> Result<Vec<HourRecord>> {
    if attacked.len() != clean.len() || clean.len() != timestamps.len() {
        return Err(Error::Consistency(format!(
            "misaligned inputs: {} attacked slots, {} clean slots, {} timestamps",
            attacked.len(),
            clean.len(),
            timestamps.len()
        )));
    }
    if clean.is_empty() {
        return Ok(Vec::new());
    }
    if let Some((a, c)) = attacked.iter().zip(clean).find(|(a, c)| a.hour != c.hour) {
        return Err(Error::Consistency(format!(
            "attacked hour {} is aligned with clean hour {}",
            a.hour, c.hour
        )));
    }
    let mean_clean = clean.iter().map(|s| s.total_cost()).sum::<f64>() / clean.len() as f64;
    if mean_clean == 0.0 {
        return Err(Error::Value("mean hourly clean cost is zero".into()));
    }
    Ok(attacked
        .iter()
        .zip(clean)
        .zip(timestamps)
        .map(|((a, c), ts)| {
            let (cost_attacked, cost_clean) = (a.total_cost(), c.total_cost());
            HourRecord {
                hour: c.hour,
                timestamp: *ts,
                month: ts.month(),
                day: ts.day(),
                hour_of_day: ts.hour(),
                cost_attacked,
                cost_clean,
                cost_loss_ratio: (cost_attacked - cost_clean) / mean_clean,
                label: Label::Unchanged,
            }
        })
        .collect())
}

pub fn classify(ratio: f64, vulnerable_threshold: f64, tol: f64) -> Label {
    if ratio < -tol {
        Label::Benefit
    } else if ratio <= tol {
        Label::Unchanged
    } else if ratio > vulnerable_threshold {
        Label::ExtremelyVulnerable
    } else {
        Label::Loss
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelCounts {
    pub benefit: usize,
    pub unchanged: usize,
    pub loss: usize,
    pub extremely_vulnerable: usize,
}

impl LabelCounts {
    pub fn total(&self) -> usize {
        self.benefit + self.unchanged + self.loss + self.extremely_vulnerable
    }
}

/// Labels every record in place.
pub fn classify_hours(records: &mut [HourRecord], vulnerable_threshold: f64, tol: f64) -> Result<LabelCounts> {
    if !(vulnerable_threshold > 0.0) {
        return Err(Error::Value(format!(
            "vulnerability threshold must be > 0, got {vulnerable_threshold}"
        )));
    }
    let mut counts = LabelCounts::default();
    for r in records.iter_mut() {
        r.label = classify(r.cost_loss_ratio, vulnerable_threshold, tol);
        match r.label {
            Label::Benefit => counts.benefit += 1,
            Label::Unchanged => counts.unchanged += 1,
            Label::Loss => counts.loss += 1,
            Label::ExtremelyVulnerable => counts.extremely_vulnerable += 1,
        }
    }
    Ok(counts)
}

/// Linear-interpolated `q`-quantile of `values` (`q` in [0, 1]).
fn quantile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    Some(sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64))
}

/// Percentile of the ratios above `tol`; +∞ when no hour is a loss hour.
pub fn vulnerable_threshold(records: &[HourRecord], percentile: f64, tol: f64) -> f64 {
    let positive: Vec<f64> = records
        .iter()
        .map(|r| r.cost_loss_ratio)
        .filter(|r| *r > tol)
        .collect();
    quantile(&positive, percentile).unwrap_or(f64::INFINITY)
}

pub fn mean_positive_ratio(records: &[HourRecord], tol: f64) -> f64 {
    let positive: Vec<f64> = records
        .iter()
        .map(|r| r.cost_loss_ratio)
        .filter(|r| *r > tol)
        .collect();
    if positive.is_empty() {
        0.0
    } else {
        positive.iter().sum::<f64>() / positive.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Ordinary least squares `y ≈ slope·x + intercept`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!("{} x values for {} y values", x.len(), y.len())));
    }
    let mut distinct = x.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Error::Fit("need at least two distinct x values".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(LinearFit {
        slope,
        intercept: my - slope * mx,
        r_squared,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChangeCounts {
    pub unchange: usize,
    pub increasing: usize,
    pub reducing: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenetrationComparison {
    /// High-penetration ratio regressed on low-penetration ratio.
    pub fit: LinearFit,
    pub counts: ChangeCounts,
    pub mean_positive_ratio_low: f64,
    pub mean_positive_ratio_high: f64,
    /// Mean of `ratio_high − ratio_low` over hours that are loss hours at
    /// either level.
    pub mean_loss_hour_ratio_change: f64,
}

/// Compares the same attack at two penetration levels, hour by hour.
pub fn penetration_comparison(
    low: &[HourRecord],
    high: &[HourRecord],
    band: f64,
    tol: f64,
) -> Result<PenetrationComparison> {
    if low.len() != high.len() || low.iter().zip(high).any(|(l, h)| l.hour != h.hour) {
        return Err(Error::Consistency(
            "penetration record sets are not aligned hour by hour".into(),
        ));
    }
    let x: Vec<f64> = low.iter().map(|r| r.cost_loss_ratio).collect();
    let y: Vec<f64> = high.iter().map(|r| r.cost_loss_ratio).collect();
    let fit = linear_fit(&x, &y)?;
    let mut counts = ChangeCounts::default();
    for (l, h) in x.iter().zip(&y) {
        let (a, b) = (l.abs(), h.abs());
        if (b - a).abs() <= band * a.max(b) {
            counts.unchange += 1;
        } else if b > a {
            counts.increasing += 1;
        } else {
            counts.reducing += 1;
        }
    }
    let changes: Vec<f64> = low
        .iter()
        .zip(high)
        .filter(|(l, h)| l.cost_loss_ratio > tol || h.cost_loss_ratio > tol)
        .map(|(l, h)| h.cost_loss_ratio - l.cost_loss_ratio)
        .collect();
    let mean_loss_hour_ratio_change = if changes.is_empty() {
        0.0
    } else {
        changes.iter().sum::<f64>() / changes.len() as f64
    };
    Ok(PenetrationComparison {
        fit,
        counts,
        mean_positive_ratio_low: mean_positive_ratio(low, tol),
        mean_positive_ratio_high: mean_positive_ratio(high, tol),
        mean_loss_hour_ratio_change,
    })
}

/// Day × hour matrix of ratios; `None` where no record exists.
pub fn heatmap(records: &[HourRecord]) -> BTreeMap<NaiveDate, [Option<f64>; 24]> {
    let mut grid: BTreeMap<NaiveDate, [Option<f64>; 24]> = BTreeMap::new();
    for r in records {
        grid.entry(r.timestamp.date()).or_insert([None; 24])[r.hour_of_day as usize] =
            Some(r.cost_loss_ratio);
    }
    grid
}

/// Writes the heat map as CSV `date,h00,…,h23`.
pub fn emit_heatmap(path: impl AsRef<Path>, records: &[HourRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut wtr = csv::Writer::from_path(path)?;
    let mut header = vec!["date".to_string()];
    header.extend((0..24).map(|h| format!("h{h:02}")));
    wtr.write_record(&header)?;
    for (date, row) in heatmap(records) {
        let mut fields = vec![date.format("%Y-%m-%d").to_string()];
        fields.extend(row.iter().map(|c| c.map(|v| v.to_string()).unwrap_or_default()));
        wtr.write_record(&fields)?;
    }
    wtr.flush().map_err(|e| Error::io(path, e))
}

/// Reads a heat map written by [`emit_heatmap`].
pub fn read_heatmap(path: impl AsRef<Path>) -> Result<BTreeMap<NaiveDate, [Option<f64>; 24]>> {
    let path = path.as_ref();
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    let expected: Vec<String> = std::iter::once("date".to_string())
        .chain((0..24).map(|h| format!("h{h:02}")))
        .collect();
    if headers.iter().ne(expected.iter().map(String::as_str)) {
        return Err(Error::Schema(format!("{}: unexpected heat map header", path.display())));
    }
    let mut grid = BTreeMap::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let bad = |message: String| Error::Integrity { row: i + 1, message };
        let date = NaiveDate::parse_from_str(&row[0], "%Y-%m-%d").map_err(|e| bad(format!("date: {e}")))?;
        let mut cells = [None; 24];
        for (h, cell) in cells.iter_mut().enumerate() {
            let field = &row[h + 1];
            if !field.is_empty() {
                *cell = Some(field.parse::<f64>().map_err(|e| bad(format!("h{h:02}: {e}")))?);
            }
        }
        if grid.insert(date, cells).is_some() {
            return Err(bad(format!("duplicate date {date}")));
        }
    }
    Ok(grid)
}

pub fn write_hour_records(path: impl AsRef<Path>, records: &[HourRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut wtr = csv::Writer::from_path(path)?;
    for r in records {
        wtr.serialize(r)?;
    }
    wtr.flush().map_err(|e| Error::io(path, e))
}

pub fn read_hour_records(path: impl AsRef<Path>) -> Result<Vec<HourRecord>> {
    let mut rdr = csv::Reader::from_path(path.as_ref())?;
    Ok(rdr
        .deserialize()
        .collect::<std::result::Result<Vec<HourRecord>, _>>()?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostTotals {
    pub attacked: f64,
    pub clean: f64,
    pub difference: f64,
    pub relative_increase: f64,
}

impl CostTotals {
    pub fn new(attacked: &CostBreakdown, clean: &CostBreakdown) -> Self {
        let difference = attacked.total - clean.total;
        Self {
            attacked: attacked.total,
            clean: clean.total,
            difference,
            relative_increase: difference / clean.total,
        }
    }
}

/// Labeled-hour summary written next to the hour table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HourSummary {
    pub counts: LabelCounts,
    /// Cut above which loss hours are extremely vulnerable; `None` when no
    /// hour is a loss hour.
    pub vulnerable_threshold: Option<f64>,
    pub mean_positive_ratio: f64,
    pub totals: CostTotals,
    /// Extremely vulnerable hours counted per hour of day.
    pub vulnerable_by_hour: Vec<usize>,
}

pub fn summarize(records: &[HourRecord], counts: LabelCounts, threshold: f64, totals: CostTotals, tol: f64) -> HourSummary {
    let mut vulnerable_by_hour = vec![0; 24];
    for r in records.iter().filter(|r| r.label == Label::ExtremelyVulnerable) {
        vulnerable_by_hour[r.hour_of_day as usize] += 1;
    }
    HourSummary {
        counts,
        vulnerable_threshold: threshold.is_finite().then_some(threshold),
        mean_positive_ratio: mean_positive_ratio(records, tol),
        totals,
        vulnerable_by_hour,
    }
}
