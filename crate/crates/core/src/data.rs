//! Hourly grid data: CSV ingestion, validation, renewable scaling, forecast
//! windows and z-score normalization.
//!
//! A [`TimeSeriesDataset`] holds aligned hourly traces of demand, temperature,
//! wind and solar output plus a block of auxiliary features (calendar
//! encodings and optional weather covariates). Datasets are immutable once
//! built; every transformation returns a new value.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use chrono::{DateTime, Datelike, NaiveDateTime, TimeDelta, Timelike};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default number of lagged hours in a forecast window (the window holds
/// `H + 1` hours of history).
pub const DEFAULT_HISTORY_HOURS: usize = 24;

/// Share of the horizon used for training; the rest is evaluated/attacked.
pub const DEFAULT_TRAIN_FRACTION: f64 = 2.0 / 3.0;

/// Weather covariates recognised in the input file, in feature order.
pub const WEATHER_COLUMNS: [&str; 3] = ["precip", "air_density", "cloud_cover"];

/// Calendar features always present at the front of the extras block.
pub const CALENDAR_FEATURES: [&str; 4] = ["hour_sin", "hour_cos", "dow_sin", "dow_cos"];

/// Column names of the hourly input file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub timestamp: String,
    pub demand: String,
    pub temperature: String,
    pub wind: String,
    pub solar: String,
    /// Optional weather columns, used when present in the header.
    pub weather: Vec<String>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            timestamp: "timestamp".into(),
            demand: "demand_mw".into(),
            temperature: "temperature_c".into(),
            wind: "wind_mw".into(),
            solar: "solar_mw".into(),
            weather: WEATHER_COLUMNS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

/// A named auxiliary trace supplied alongside the core columns.
#[derive(Debug, Clone, PartialEq)]
pub struct WeatherTrace {
    pub name: String,
    pub values: Vec<f64>,
}

/// Aligned, validated hourly traces.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesDataset {
    timestamps: Vec<NaiveDateTime>,
    demand: Vec<f64>,
    temperature: Vec<f64>,
    wind: Vec<f64>,
    solar: Vec<f64>,
    weather: Vec<WeatherTrace>,
    extra_names: Vec<String>,
    extras: Vec<Vec<f64>>,
}

impl TimeSeriesDataset {
    /// Builds a dataset from already-ordered columns.
    ///
    /// Rows must be contiguous hours; integrity errors report the 1-based
    /// row position.
    pub fn from_columns(
        timestamps: Vec<NaiveDateTime>,
        demand: Vec<f64>,
        temperature: Vec<f64>,
        wind: Vec<f64>,
        solar: Vec<f64>,
        weather: Vec<WeatherTrace>,
    ) -> Result<Self> {
        let rows: Vec<usize> = (1..=timestamps.len()).collect();
        Self::build(timestamps, &rows, demand, temperature, wind, solar, weather)
    }

    fn build(
        timestamps: Vec<NaiveDateTime>,
        source_rows: &[usize],
        demand: Vec<f64>,
        temperature: Vec<f64>,
        wind: Vec<f64>,
        solar: Vec<f64>,
        weather: Vec<WeatherTrace>,
    ) -> Result<Self> {
        let n = timestamps.len();
        if n == 0 {
            return Err(Error::Size("dataset has no rows".into()));
        }
        let lengths = [
            ("demand", demand.len()),
            ("temperature", temperature.len()),
            ("wind", wind.len()),
            ("solar", solar.len()),
        ];
        for (name, len) in lengths
            .into_iter()
            .chain(weather.iter().map(|w| (w.name.as_str(), w.values.len())))
        {
            if len != n {
                return Err(Error::Size(format!(
                    "trace `{name}` has {len} values, expected {n}"
                )));
            }
        }

        let hour = TimeDelta::hours(1);
        for i in 1..n {
            let step = timestamps[i] - timestamps[i - 1];
            if step != hour {
                let message = if step.is_zero() {
                    format!("duplicate timestamp {}", timestamps[i])
                } else {
                    format!(
                        "timestamp {} does not follow {} by exactly one hour",
                        timestamps[i],
                        timestamps[i - 1]
                    )
                };
                return Err(Error::Integrity {
                    row: source_rows[i],
                    message,
                });
            }
        }

        for (name, trace, nonneg) in [
            ("demand", &demand, true),
            ("wind", &wind, true),
            ("solar", &solar, true),
            ("temperature", &temperature, false),
        ] {
            for (i, &v) in trace.iter().enumerate() {
                if !v.is_finite() || (nonneg && v < 0.0) {
                    return Err(Error::Value(format!(
                        "{name} = {v} at row {} ({})",
                        source_rows[i], timestamps[i]
                    )));
                }
            }
        }
        for w in &weather {
            if let Some(i) = w.values.iter().position(|v| !v.is_finite()) {
                return Err(Error::Value(format!(
                    "{} = {} at row {}",
                    w.name, w.values[i], source_rows[i]
                )));
            }
        }

        let mut extra_names: Vec<String> =
            CALENDAR_FEATURES.iter().map(|s| s.to_string()).collect();
        extra_names.extend(weather.iter().map(|w| w.name.clone()));
        let extras = timestamps
            .iter()
            .enumerate()
            .map(|(i, ts)| {
                let mut row = calendar_features(ts).to_vec();
                row.extend(weather.iter().map(|w| w.values[i]));
                row
            })
            .collect();

        Ok(Self {
            timestamps,
            demand,
            temperature,
            wind,
            solar,
            weather,
            extra_names,
            extras,
        })
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn timestamps(&self) -> &[NaiveDateTime] {
        &self.timestamps
    }

    pub fn demand(&self) -> &[f64] {
        &self.demand
    }

    pub fn temperature(&self) -> &[f64] {
        &self.temperature
    }

    pub fn wind(&self) -> &[f64] {
        &self.wind
    }

    pub fn solar(&self) -> &[f64] {
        &self.solar
    }

    pub fn weather(&self) -> &[WeatherTrace] {
        &self.weather
    }

    /// Names of the auxiliary feature columns, in order.
    pub fn extra_names(&self) -> &[String] {
        &self.extra_names
    }

    /// Auxiliary features of one hour.
    pub fn extras_at(&self, index: usize) -> &[f64] {
        &self.extras[index]
    }

    pub fn extras_dim(&self) -> usize {
        self.extra_names.len()
    }

    /// Total renewable output `wind + solar` at every hour.
    pub fn renewable(&self) -> Vec<f64> {
        self.wind
            .iter()
            .zip(&self.solar)
            .map(|(w, s)| w + s)
            .collect()
    }

    /// Share of total demand covered by total renewable output, `Σw / ΣD`.
    pub fn penetration(&self) -> f64 {
        let renewable: f64 = self.wind.iter().chain(&self.solar).sum();
        let demand: f64 = self.demand.iter().sum();
        renewable / demand
    }

    /// Scales renewable traces: `solar' = solar · solar_coeff · joint_coeff`
    /// and `wind' = wind · joint_coeff`. Everything else is copied.
    pub fn scale_renewables(&self, solar_coeff: f64, joint_coeff: f64) -> Result<Self> {
        for (name, c) in [("solar_coeff", solar_coeff), ("joint_coeff", joint_coeff)] {
            if !(c.is_finite() && c > 0.0) {
                return Err(Error::Value(format!("{name} must be positive, got {c}")));
            }
        }
        let mut scaled = self.clone();
        let solar_factor = solar_coeff * joint_coeff;
        scaled.solar.iter_mut().for_each(|s| *s *= solar_factor);
        scaled.wind.iter_mut().for_each(|w| *w *= joint_coeff);
        Ok(scaled)
    }

    /// Copy covering hours `range`, keeping calendar alignment.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Result<Self> {
        if range.start >= range.end || range.end > self.len() {
            return Err(Error::Size(format!(
                "slice {:?} out of bounds for dataset of length {}",
                range,
                self.len()
            )));
        }
        let weather = self
            .weather
            .iter()
            .map(|w| WeatherTrace {
                name: w.name.clone(),
                values: w.values[range.clone()].to_vec(),
            })
            .collect();
        Self::from_columns(
            self.timestamps[range.clone()].to_vec(),
            self.demand[range.clone()].to_vec(),
            self.temperature[range.clone()].to_vec(),
            self.wind[range.clone()].to_vec(),
            self.solar[range].to_vec(),
            weather,
        )
    }
}

fn calendar_features(ts: &NaiveDateTime) -> [f64; 4] {
    let hour = 2.0 * PI * f64::from(ts.hour()) / 24.0;
    let dow = 2.0 * PI * f64::from(ts.weekday().num_days_from_monday()) / 7.0;
    [hour.sin(), hour.cos(), dow.sin(), dow.cos()]
}

/// Parses the ISO-8601 forms found in grid exports. Offsets are converted to
/// UTC and dropped.
pub fn parse_timestamp(raw: &str) -> Option<NaiveDateTime> {
    let raw = raw.trim();
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"] {
        if let Ok(ts) = NaiveDateTime::parse_from_str(raw, fmt) {
            return Some(ts);
        }
    }
    DateTime::parse_from_rfc3339(raw)
        .ok()
        .map(|dt| dt.naive_utc())
}

/// Formats a timestamp the way [`parse_timestamp`] reads it back.
pub fn format_timestamp(ts: &NaiveDateTime) -> String {
    ts.format("%Y-%m-%dT%H:%M:%S").to_string()
}

/// Loads an hourly CSV file. Rows are sorted by timestamp before the
/// contiguity check; errors name the offending data row.
pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<TimeSeriesDataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, schema)
}

/// Reader-based variant of [`load_csv`].
pub fn read_csv<R: std::io::Read>(reader: R, schema: &CsvSchema) -> Result<TimeSeriesDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let column = |name: &str| headers.iter().position(|h| h == name);
    let required = |name: &str| {
        column(name).ok_or_else(|| Error::Schema(format!("missing required column `{name}`")))
    };
    let ts_col = required(&schema.timestamp)?;
    let core_cols = [
        required(&schema.demand)?,
        required(&schema.temperature)?,
        required(&schema.wind)?,
        required(&schema.solar)?,
    ];
    let weather_cols: Vec<(String, usize)> = schema
        .weather
        .iter()
        .filter_map(|name| column(name).map(|c| (name.clone(), c)))
        .collect();

    struct Row {
        source: usize,
        ts: NaiveDateTime,
        core: [f64; 4],
        weather: Vec<f64>,
    }

    let mut rows = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let source = i + 1;
        let record = record?;
        let field = |col: usize| record.get(col).unwrap_or("");
        let ts = parse_timestamp(field(ts_col)).ok_or_else(|| Error::Integrity {
            row: source,
            message: format!("unparseable timestamp `{}`", field(ts_col)),
        })?;
        let number = |col: usize, name: &str| -> Result<f64> {
            field(col).parse::<f64>().map_err(|_| {
                Error::Value(format!(
                    "row {source}: column `{name}` is not a number: `{}`",
                    field(col)
                ))
            })
        };
        let names = [
            &schema.demand,
            &schema.temperature,
            &schema.wind,
            &schema.solar,
        ];
        let mut core = [0.0; 4];
        for k in 0..4 {
            core[k] = number(core_cols[k], names[k])?;
        }
        let weather = weather_cols
            .iter()
            .map(|(name, col)| number(*col, name))
            .collect::<Result<Vec<_>>>()?;
        rows.push(Row {
            source,
            ts,
            core,
            weather,
        });
    }
    rows.sort_by_key(|r| r.ts);

    let source_rows: Vec<usize> = rows.iter().map(|r| r.source).collect();
    let weather = weather_cols
        .iter()
        .enumerate()
        .map(|(k, (name, _))| WeatherTrace {
            name: name.clone(),
            values: rows.iter().map(|r| r.weather[k]).collect(),
        })
        .collect();
    TimeSeriesDataset::build(
        rows.iter().map(|r| r.ts).collect(),
        &source_rows,
        rows.iter().map(|r| r.core[0]).collect(),
        rows.iter().map(|r| r.core[1]).collect(),
        rows.iter().map(|r| r.core[2]).collect(),
        rows.iter().map(|r| r.core[3]).collect(),
        weather,
    )
}

/// Writes a dataset in the input CSV layout.
pub fn write_csv<W: std::io::Write>(ds: &TimeSeriesDataset, writer: W) -> Result<()> {
    let schema = CsvSchema::default();
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec![
        schema.timestamp.clone(),
        schema.demand.clone(),
        schema.temperature.clone(),
        schema.wind.clone(),
        schema.solar.clone(),
    ];
    header.extend(ds.weather.iter().map(|w| w.name.clone()));
    wtr.write_record(&header)?;
    for i in 0..ds.len() {
        let mut record = vec![
            format_timestamp(&ds.timestamps[i]),
            ds.demand[i].to_string(),
            ds.temperature[i].to_string(),
            ds.wind[i].to_string(),
            ds.solar[i].to_string(),
        ];
        record.extend(ds.weather.iter().map(|w| w.values[i].to_string()));
        wtr.write_record(&record)?;
    }
    wtr.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

/// The model input for forecasting hour `target_index`: the `H + 1` hours
/// immediately before it.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastWindow {
    history_demand: Vec<f64>,
    history_temperature: Vec<f64>,
    history_extras: Vec<Vec<f64>>,
    target_demand: f64,
    target_index: usize,
}

impl ForecastWindow {
    pub fn history_demand(&self) -> &[f64] {
        &self.history_demand
    }

    pub fn history_temperature(&self) -> &[f64] {
        &self.history_temperature
    }

    pub fn history_extras(&self) -> &[Vec<f64>] {
        &self.history_extras
    }

    pub fn target_demand(&self) -> f64 {
        self.target_demand
    }

    pub fn target_index(&self) -> usize {
        self.target_index
    }

    /// Number of history hours, `H + 1`.
    pub fn history_len(&self) -> usize {
        self.history_demand.len()
    }

    /// Index of the first history hour in the source dataset.
    pub fn first_history_index(&self) -> usize {
        self.target_index - self.history_len()
    }

    /// Same window with the demand and temperature histories replaced.
    /// Extras and target are carried over unchanged.
    pub fn with_history(&self, demand: Vec<f64>, temperature: Vec<f64>) -> Result<Self> {
        let n = self.history_len();
        if demand.len() != n || temperature.len() != n {
            return Err(Error::Shape(format!(
                "replacement history lengths [{}] and [{}] do not match window length [{n}]",
                demand.len(),
                temperature.len()
            )));
        }
        Ok(Self {
            history_demand: demand,
            history_temperature: temperature,
            history_extras: self.history_extras.clone(),
            target_demand: self.target_demand,
            target_index: self.target_index,
        })
    }
}

/// Cuts one window per valid target hour: `len − (H + 1)` windows ordered by
/// target index.
pub fn make_windows(ds: &TimeSeriesDataset, history_hours: usize) -> Result<Vec<ForecastWindow>> {
    if history_hours < 1 {
        return Err(Error::Size("history length H must be at least 1".into()));
    }
    let span = history_hours + 1;
    if ds.len() < history_hours + 2 {
        return Err(Error::Size(format!(
            "dataset of {} hours is too short for H = {history_hours} (needs at least {})",
            ds.len(),
            history_hours + 2
        )));
    }
    Ok((span..ds.len())
        .map(|target| {
            let hist = target - span..target;
            ForecastWindow {
                history_demand: ds.demand[hist.clone()].to_vec(),
                history_temperature: ds.temperature[hist.clone()].to_vec(),
                history_extras: ds.extras[hist].to_vec(),
                target_demand: ds.demand[target],
                target_index: target,
            }
        })
        .collect())
}

/// Chronological split: windows whose target falls in the first
/// `train_fraction` of the dataset train, the rest evaluate.
pub fn split_windows(
    windows: Vec<ForecastWindow>,
    dataset_len: usize,
    train_fraction: f64,
) -> Result<(Vec<ForecastWindow>, Vec<ForecastWindow>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Value(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let boundary = (dataset_len as f64 * train_fraction).round() as usize;
    let (train, eval): (Vec<_>, Vec<_>) = windows
        .into_iter()
        .partition(|w| w.target_index < boundary);
    if train.is_empty() || eval.is_empty() {
        return Err(Error::Size(format!(
            "split at hour {boundary} leaves {} training and {} evaluation windows",
            train.len(),
            eval.len()
        )));
    }
    Ok((train, eval))
}

/// Mean and standard deviation of one feature channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: f64,
    pub std: f64,
}

impl ChannelStats {
    /// Population statistics of `values`. A constant channel gets `std = 1`
    /// and a warning.
    pub fn fit(values: &[f64], name: &str) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Size(format!("no values to fit channel `{name}`")));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let mut std = var.sqrt();
        if !std.is_finite() || std <= 1e-12 * mean.abs().max(1.0) {
            log::warn!("feature `{name}` is constant on the training split; using std = 1");
            std = 1.0;
        }
        Ok(Self { mean, std })
    }

    pub fn normalize(&self, raw: f64) -> f64 {
        (raw - self.mean) / self.std
    }

    pub fn denormalize(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

/// Per-feature z-score statistics fitted on the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub demand: ChannelStats,
    pub temperature: ChannelStats,
    pub extras: Vec<ChannelStats>,
}

/// A window mapped into model units: one row of `2 + d_E` features per
/// history hour, ordered demand, temperature, extras.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedWindow {
    pub rows: Vec<Vec<f64>>,
    pub target: f64,
}

impl Normalizer {
    /// Fits on the distinct history hours covered by `train_windows`;
    /// overlapping windows do not weight shared hours twice.
    pub fn fit(train_windows: &[ForecastWindow]) -> Result<Self> {
        let first = train_windows
            .first()
            .ok_or_else(|| Error::Size("cannot fit a normalizer on zero windows".into()))?;
        let d_e = first.history_extras.first().map_or(0, Vec::len);
        let mut hours: BTreeMap<usize, (f64, f64, &[f64])> = BTreeMap::new();
        for w in train_windows {
            let start = w.first_history_index();
            for j in 0..w.history_len() {
                hours.entry(start + j).or_insert((
                    w.history_demand[j],
                    w.history_temperature[j],
                    &w.history_extras[j],
                ));
            }
        }
        let demand: Vec<f64> = hours.values().map(|h| h.0).collect();
        let temperature: Vec<f64> = hours.values().map(|h| h.1).collect();
        let extras = (0..d_e)
            .map(|k| {
                let column: Vec<f64> = hours.values().map(|h| h.2[k]).collect();
                ChannelStats::fit(&column, &format!("extra[{k}]"))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            demand: ChannelStats::fit(&demand, "demand")?,
            temperature: ChannelStats::fit(&temperature, "temperature")?,
            extras,
        })
    }

    /// Model input width `2 + d_E`.
    pub fn input_dim(&self) -> usize {
        2 + self.extras.len()
    }

    pub fn apply(&self, window: &ForecastWindow) -> Result<NormalizedWindow> {
        let d_e = self.extras.len();
        let rows = (0..window.history_len())
            .map(|j| {
                let extras = &window.history_extras[j];
                if extras.len() != d_e {
                    return Err(Error::Shape(format!(
                        "window has {} extra features, normalizer expects {d_e}",
                        extras.len()
                    )));
                }
                let mut row = Vec::with_capacity(2 + d_e);
                row.push(self.demand.normalize(window.history_demand[j]));
                row.push(self.temperature.normalize(window.history_temperature[j]));
                row.extend(
                    extras
                        .iter()
                        .zip(&self.extras)
                        .map(|(v, stats)| stats.normalize(*v)),
                );
                Ok(row)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(NormalizedWindow {
            rows,
            target: self.demand.normalize(window.target_demand),
        })
    }

    /// Maps a model-unit demand value back to MW.
    pub fn invert_demand(&self, z: f64) -> f64 {
        self.demand.denormalize(z)
    }
}
