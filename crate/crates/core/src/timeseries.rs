//! Exogenous time series: electricity price, outdoor temperature and
//! appliance activation events, all indexed by a fixed-resolution grid.
//!
//! CSV schemas (header row required):
//!
//! | file          | columns                        |
//! |---------------|--------------------------------|
//! | `prices.csv`  | `timestamp,unit,price`         |
//! | `weather.csv` | `timestamp,temp_c`             |
//! | `events.csv`  | `appliance_id,activation_step` |
//!
//! `unit` is `USD_per_kWh` or `USD_per_MWh`; prices are held in $/kWh.
//! Row `i` of a series file must carry the timestamp `origin + i * step`.

use std::collections::HashMap;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use chrono::{DateTime, NaiveDateTime, TimeDelta};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

/// Uniform time grid shared by every series in a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub step_minutes: u32,
    pub steps_per_episode: usize,
    #[serde(with = "iso_timestamp")]
    pub origin: NaiveDateTime,
}

impl Default for TimeGrid {
    fn default() -> Self {
        Self {
            step_minutes: 15,
            steps_per_episode: 192,
            origin: NaiveDateTime::parse_from_str("2022-07-01T00:00:00", TIMESTAMP_FORMAT)
                .expect("valid literal"),
        }
    }
}

impl TimeGrid {
    pub fn validate(&self) -> Result<()> {
        if self.step_minutes == 0 || 60 % self.step_minutes != 0 {
            return Err(Error::Parameter(format!(
                "step_minutes must be a positive divisor of 60, got {}",
                self.step_minutes
            )));
        }
        if self.steps_per_episode == 0 {
            return Err(Error::Parameter("steps_per_episode must be positive".into()));
        }
        Ok(())
    }

    /// Step length in hours.
    pub fn dt_hours(&self) -> f64 {
        f64::from(self.step_minutes) / 60.0
    }

    pub fn steps_per_hour(&self) -> usize {
        (60 / self.step_minutes) as usize
    }

    pub fn steps_per_day(&self) -> usize {
        24 * self.steps_per_hour()
    }

    /// Number of whole steps covering `hours`.
    pub fn hours_to_steps(&self, hours: f64) -> usize {
        (hours * self.steps_per_hour() as f64).round() as usize
    }

    pub fn timestamp(&self, step: usize) -> NaiveDateTime {
        self.origin + TimeDelta::minutes(i64::from(self.step_minutes) * step as i64)
    }

    pub fn format_timestamp(&self, step: usize) -> String {
        self.timestamp(step).format(TIMESTAMP_FORMAT).to_string()
    }
}

/// Energy price in $/kWh per grid step.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceSeries {
    values: Vec<f64>,
}

impl PriceSeries {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Parameter(format!("non-finite price at step {i}")));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }
}

/// Outdoor temperature in °C per grid step.
#[derive(Debug, Clone, PartialEq)]
pub struct WeatherSeries {
    values: Vec<f64>,
}

impl WeatherSeries {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Parameter(format!("non-finite temperature at step {i}")));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApplianceEvent {
    pub appliance_id: String,
    /// Activation step for shiftable loads, arrival step for the EV.
    pub step: usize,
}

/// Validation rules for an event file: which ids exist, how long an event
/// keeps its appliance occupied, and how long the data series are.
#[derive(Debug, Clone, Default)]
pub struct EventRules {
    pub occupancy_steps: HashMap<String, usize>,
    pub series_len: Option<usize>,
}

/// Activation events sorted by step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ApplianceEventLog {
    events: Vec<ApplianceEvent>,
}

impl ApplianceEventLog {
    pub fn new(mut events: Vec<ApplianceEvent>) -> Self {
        events.sort_by(|a, b| a.step.cmp(&b.step).then_with(|| a.appliance_id.cmp(&b.appliance_id)));
        Self { events }
    }

    pub fn events(&self) -> &[ApplianceEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Events of one appliance with steps in `[start, end)`, in step order.
    pub fn for_appliance<'a>(
        &'a self,
        id: &'a str,
        start: usize,
        end: usize,
    ) -> impl Iterator<Item = usize> + 'a {
        self.events
            .iter()
            .filter(move |e| e.appliance_id == id && e.step >= start && e.step < end)
            .map(|e| e.step)
    }
}

fn open_reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file))
}

fn check_header(path: &Path, reader: &mut csv::Reader<File>, expected: &[&str]) -> Result<()> {
    let header = reader.headers().map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        row: 0,
        message: e.to_string(),
    })?;
    if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            row: 0,
            message: "empty file".into(),
        });
    }
    let actual: Vec<&str> = header.iter().collect();
    if actual != expected {
        return Err(Error::Schema {
            path: path.to_path_buf(),
            row: 0,
            message: format!("expected header {expected:?}, found {actual:?}"),
        });
    }
    Ok(())
}

fn parse_timestamp(raw: &str) -> Option<NaiveDateTime> {
    NaiveDateTime::parse_from_str(raw, TIMESTAMP_FORMAT)
        .or_else(|_| NaiveDateTime::parse_from_str(raw, "%Y-%m-%d %H:%M:%S"))
        .ok()
        .or_else(|| DateTime::parse_from_rfc3339(raw).ok().map(|t| t.naive_utc()))
}

/// Reads `timestamp,<value columns...>` rows checking grid alignment, and
/// hands the remaining fields to `value`.
fn load_aligned<F>(path: &Path, grid: &TimeGrid, header: &[&str], mut value: F) -> Result<Vec<f64>>
where
    F: FnMut(&csv::StringRecord, usize) -> std::result::Result<f64, String>,
{
    grid.validate()?;
    let mut reader = open_reader(path)?;
    check_header(path, &mut reader, header)?;
    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            row,
            message: e.to_string(),
        })?;
        let ts = parse_timestamp(&record[0]).ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            row,
            message: format!("invalid timestamp {:?}", &record[0]),
        })?;
        let expected = grid.timestamp(i);
        if ts != expected {
            return Err(Error::Alignment {
                path: path.to_path_buf(),
                row,
                message: format!(
                    "expected timestamp {}, found {}",
                    expected.format(TIMESTAMP_FORMAT),
                    ts.format(TIMESTAMP_FORMAT)
                ),
            });
        }
        let v = value(&record, row).map_err(|message| Error::Parse {
            path: path.to_path_buf(),
            row,
            message,
        })?;
        if !v.is_finite() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                row,
                message: "non-finite value".into(),
            });
        }
        out.push(v);
    }
    if out.is_empty() {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            row: 1,
            message: "no data rows".into(),
        });
    }
    Ok(out)
}

fn parse_f64(raw: &str, what: &str) -> std::result::Result<f64, String> {
    raw.parse::<f64>()
        .map_err(|_| format!("non-numeric {what} {raw:?}"))
}

pub fn load_price_csv(path: impl AsRef<Path>, grid: &TimeGrid) -> Result<PriceSeries> {
    let path = path.as_ref();
    let values = load_aligned(path, grid, &["timestamp", "unit", "price"], |rec, _| {
        let scale = match &rec[1] {
            "USD_per_kWh" => 1.0,
            "USD_per_MWh" => 1e-3,
            other => return Err(format!("unknown price unit {other:?}")),
        };
        Ok(parse_f64(&rec[2], "price")? * scale)
    })?;
    PriceSeries::new(values)
}

pub fn load_weather_csv(path: impl AsRef<Path>, grid: &TimeGrid) -> Result<WeatherSeries> {
    let path = path.as_ref();
    let values = load_aligned(path, grid, &["timestamp", "temp_c"], |rec, _| {
        parse_f64(&rec[1], "temperature")
    })?;
    WeatherSeries::new(values)
}

/// Loads and validates an activation log. An empty file (header only or zero
/// bytes) yields an empty log.
pub fn load_events_csv(
    path: impl AsRef<Path>,
    _grid: &TimeGrid,
    rules: &EventRules,
) -> Result<ApplianceEventLog> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if text.trim().is_empty() {
        return Ok(ApplianceEventLog::default());
    }
    let mut reader = open_reader(path)?;
    check_header(path, &mut reader, &["appliance_id", "activation_step"])?;
    let mut events = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            row,
            message: e.to_string(),
        })?;
        let id = record[0].to_string();
        if !rules.occupancy_steps.contains_key(&id) {
            return Err(Error::Schema {
                path: path.to_path_buf(),
                row,
                message: format!("unknown appliance id {id:?}"),
            });
        }
        let step: usize = record[1].parse().map_err(|_| Error::Parse {
            path: path.to_path_buf(),
            row,
            message: format!("invalid activation step {:?}", &record[1]),
        })?;
        if let Some(len) = rules.series_len {
            if step >= len {
                return Err(Error::Schema {
                    path: path.to_path_buf(),
                    row,
                    message: format!("step {step} outside series of length {len}"),
                });
            }
        }
        events.push(ApplianceEvent {
            appliance_id: id,
            step,
        });
    }
    let log = ApplianceEventLog::new(events);

    let mut open_until: HashMap<&str, usize> = HashMap::new();
    let mut last_step: HashMap<&str, usize> = HashMap::new();
    for e in log.events() {
        let span = rules.occupancy_steps[&e.appliance_id];
        if let Some(&until) = open_until.get(e.appliance_id.as_str()) {
            if e.step < until {
                return Err(Error::EventConflict {
                    path: path.to_path_buf(),
                    appliance: e.appliance_id.clone(),
                    first: last_step[e.appliance_id.as_str()],
                    second: e.step,
                });
            }
        }
        open_until.insert(&e.appliance_id, e.step + span);
        last_step.insert(&e.appliance_id, e.step);
    }
    Ok(log)
}

fn create(path: &Path) -> Result<csv::Writer<File>> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse {
            path: path.to_path_buf(),
            row: 0,
            message: format!("{other:?}"),
        },
    }
}

/// Writes prices in $/MWh, the usual wholesale-market unit.
pub fn write_price_csv(path: impl AsRef<Path>, grid: &TimeGrid, prices: &PriceSeries) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    w.write_record(["timestamp", "unit", "price"]).map_err(|e| csv_err(path, e))?;
    for (i, v) in prices.values().iter().enumerate() {
        w.write_record([grid.format_timestamp(i), "USD_per_MWh".into(), format!("{:.6}", v * 1e3)])
            .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_weather_csv(path: impl AsRef<Path>, grid: &TimeGrid, weather: &WeatherSeries) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    w.write_record(["timestamp", "temp_c"]).map_err(|e| csv_err(path, e))?;
    for (i, v) in weather.values().iter().enumerate() {
        w.write_record([grid.format_timestamp(i), format!("{v}")])
            .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_events_csv(path: impl AsRef<Path>, log: &ApplianceEventLog) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    w.write_record(["appliance_id", "activation_step"]).map_err(|e| csv_err(path, e))?;
    for e in log.events() {
        w.write_record([e.appliance_id.clone(), e.step.to_string()])
            .map_err(|e| csv_err(path, e))?;
    }
    let mut inner = w.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
    inner.flush().map_err(|e| Error::io(path, e))
}

/// Mean of `values[start .. start + window_steps)`.
pub fn forward_average_price(prices: &PriceSeries, start: usize, window_steps: usize) -> Result<f64> {
    let end = start + window_steps;
    if window_steps == 0 || end > prices.len() {
        return Err(Error::Bounds {
            start,
            end,
            len: prices.len(),
        });
    }
    Ok(mean(&prices.values()[start..end]))
}

/// As [`forward_average_price`], but a window running past the end of the
/// series is truncated to the available steps.
pub fn forward_average_price_clamped(prices: &PriceSeries, start: usize, window_steps: usize) -> Result<f64> {
    if start >= prices.len() {
        return Err(Error::Bounds {
            start,
            end: start + window_steps,
            len: prices.len(),
        });
    }
    let end = (start + window_steps.max(1)).min(prices.len());
    Ok(mean(&prices.values()[start..end]))
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

mod iso_timestamp {
    use chrono::NaiveDateTime;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(t: &NaiveDateTime, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&t.format(super::TIMESTAMP_FORMAT).to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<NaiveDateTime, D::Error> {
        let raw = String::deserialize(d)?;
        super::parse_timestamp(&raw)
            .ok_or_else(|| serde::de::Error::custom(format!("invalid ISO-8601 timestamp {raw:?}")))
    }
}
