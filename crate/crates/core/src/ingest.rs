//! Hourly generation / weather ingestion, merging and a synthetic domain
//! generator.
//!
//! Generation files follow the EMHIRES layout: a `timestamp` column followed by
//! one capacity-factor column per country. Weather files carry a `timestamp`
//! column plus any subset of the Visual Crossing hourly parameters; blank cells
//! are missing values.

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use chrono::{NaiveDate, NaiveDateTime, Timelike};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The 21 hourly weather parameters of the source dataset, in table order.
pub const WEATHER_FEATURES: [&str; 21] = [
    "temp",
    "feelslike",
    "dew",
    "humidity",
    "precip",
    "precipprob",
    "preciptype",
    "snow",
    "snowdepth",
    "windgust",
    "windspeed",
    "winddir",
    "sealevelpressure",
    "cloudcover",
    "visibility",
    "solarradiation",
    "solarenergy",
    "uvindex",
    "severerisk",
    "conditions",
    "icon",
];

/// String-typed parameters; never used as model inputs.
pub const STRING_FEATURES: [&str; 3] = ["preciptype", "conditions", "icon"];

/// Numeric weather parameters in table order (the 21 minus the string ones).
pub fn numeric_weather_features() -> Vec<&'static str> {
    WEATHER_FEATURES
        .iter()
        .copied()
        .filter(|f| !STRING_FEATURES.contains(f))
        .collect()
}

const TIMESTAMP_COLUMN: &str = "timestamp";

/// A UTC hour, counted from 1970-01-01T00:00.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Hour(pub i64);

impl Hour {
    /// Parses `YYYY-MM-DDThh:00` (optionally `:00` seconds, or a space instead
    /// of `T`). Timestamps that are not on the hour are rejected.
    pub fn parse(s: &str) -> std::result::Result<Hour, String> {
        let s = s.trim();
        let dt = ["%Y-%m-%dT%H:%M", "%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M", "%Y-%m-%d %H:%M:%S"]
            .iter()
            .find_map(|fmt| NaiveDateTime::parse_from_str(s, fmt).ok())
            .ok_or_else(|| format!("malformed timestamp `{s}`"))?;
        if dt.minute() != 0 || dt.second() != 0 {
            return Err(format!("sub-hourly timestamp `{s}`"));
        }
        let secs = dt.and_utc().timestamp();
        Ok(Hour(secs.div_euclid(3600)))
    }

    pub fn from_ymdh(year: i32, month: u32, day: u32, hour: u32) -> Hour {
        let dt = NaiveDate::from_ymd_opt(year, month, day)
            .and_then(|d| d.and_hms_opt(hour, 0, 0))
            .expect("valid calendar hour");
        Hour(dt.and_utc().timestamp().div_euclid(3600))
    }

    pub fn next(self) -> Hour {
        Hour(self.0 + 1)
    }
}

impl fmt::Display for Hour {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let dt = chrono::DateTime::from_timestamp(self.0 * 3600, 0).ok_or(fmt::Error)?;
        write!(f, "{}", dt.format("%Y-%m-%dT%H:00"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationSeries {
    pub country_id: String,
    pub rows: Vec<(Hour, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeatherRow {
    pub timestamp: Hour,
    pub values: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeatherSeries {
    pub location_id: String,
    pub feature_names: Vec<String>,
    pub rows: Vec<WeatherRow>,
    /// Columns dropped while parsing, with the reason.
    pub notices: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignedSample {
    pub timestamp: Hour,
    pub features: Vec<f64>,
    pub capacity_factor: f64,
}

/// Merged hourly samples of one domain together with their feature names.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedSeries {
    pub feature_names: Vec<String>,
    pub samples: Vec<AlignedSample>,
    /// Intersected rows removed by the imputation policy.
    pub dropped: usize,
}

impl AlignedSeries {
    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.feature_names.iter().position(|f| f == name)
    }
}

fn open_csv(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: e.to_string(),
    }
}

fn column_of(headers: &csv::StringRecord, path: &Path, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::MissingColumn {
            path: path.to_path_buf(),
            column: name.to_string(),
        })
}

fn sort_strict<T>(rows: &mut [T], key: impl Fn(&T) -> Hour) -> Result<()> {
    rows.sort_by_key(|r| key(r));
    for pair in rows.windows(2) {
        if key(&pair[0]) == key(&pair[1]) {
            return Err(Error::DuplicateTimestamp(key(&pair[0]).to_string()));
        }
    }
    Ok(())
}

/// Reads one country column of a generation CSV. Rows are returned sorted by
/// timestamp.
pub fn parse_generation_csv(path: &Path, country_id: &str) -> Result<GenerationSeries> {
    let mut rdr = open_csv(path)?;
    let headers = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    let ts_col = column_of(&headers, path, TIMESTAMP_COLUMN)?;
    let val_col = column_of(&headers, path, country_id)?;

    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let parse_err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let ts = Hour::parse(&rec[ts_col]).map_err(parse_err)?;
        let raw = &rec[val_col];
        let value: f64 = raw
            .parse()
            .map_err(|_| parse_err(format!("capacity factor `{raw}` is not a number")))?;
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::OutOfRange {
                path: path.to_path_buf(),
                line,
                value,
            });
        }
        rows.push((ts, value));
    }
    if rows.is_empty() {
        return Err(Error::EmptyFile {
            path: path.to_path_buf(),
        });
    }
    sort_strict(&mut rows, |r| r.0)?;
    Ok(GenerationSeries {
        country_id: country_id.to_string(),
        rows,
    })
}

/// Reads a weather CSV. String-typed columns (the known categorical
/// parameters, and any other column holding a non-numeric cell) are dropped
/// and listed in `notices`.
pub fn parse_weather_csv(path: &Path) -> Result<WeatherSeries> {
    let mut rdr = open_csv(path)?;
    let headers = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    let ts_col = column_of(&headers, path, TIMESTAMP_COLUMN)?;

    let mut candidates: Vec<(usize, String)> = Vec::new();
    let mut notices = Vec::new();
    for (i, h) in headers.iter().enumerate() {
        if i == ts_col {
            continue;
        }
        if STRING_FEATURES.contains(&h) {
            notices.push(format!("dropped string-typed column `{h}`"));
        } else {
            candidates.push((i, h.to_string()));
        }
    }

    let mut stamps = Vec::new();
    let mut raw: Vec<Vec<Option<f64>>> = Vec::new();
    let mut numeric = vec![true; candidates.len()];
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let ts = Hour::parse(&rec[ts_col]).map_err(|msg| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        })?;
        stamps.push(ts);
        let values = candidates
            .iter()
            .enumerate()
            .map(|(j, (col, _))| {
                let cell = rec.get(*col).unwrap_or("");
                if cell.is_empty() {
                    return None;
                }
                match cell.parse::<f64>() {
                    Ok(v) if v.is_finite() => Some(v),
                    Ok(_) => None,
                    Err(_) => {
                        numeric[j] = false;
                        None
                    }
                }
            })
            .collect();
        raw.push(values);
    }
    if stamps.is_empty() {
        return Err(Error::EmptyFile {
            path: path.to_path_buf(),
        });
    }

    for (j, (_, name)) in candidates.iter().enumerate() {
        if !numeric[j] {
            notices.push(format!("dropped non-numeric column `{name}`"));
        }
    }
    let keep: Vec<usize> = (0..candidates.len()).filter(|&j| numeric[j]).collect();
    let feature_names = keep.iter().map(|&j| candidates[j].1.clone()).collect();
    let mut rows: Vec<WeatherRow> = stamps
        .into_iter()
        .zip(raw)
        .map(|(timestamp, values)| WeatherRow {
            timestamp,
            values: keep.iter().map(|&j| values[j]).collect(),
        })
        .collect();
    sort_strict(&mut rows, |r| r.timestamp)?;

    let location_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(WeatherSeries {
        location_id,
        feature_names,
        rows,
        notices,
    })
}

/// How missing weather values are resolved during a merge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImputePolicy {
    /// Carry the last observed value forward when it is at most
    /// `max_gap_hours` old; otherwise drop the row.
    ForwardFill { max_gap_hours: i64 },
    /// Drop every row with a missing value.
    DropRow,
}

impl Default for ImputePolicy {
    fn default() -> Self {
        ImputePolicy::ForwardFill { max_gap_hours: 3 }
    }
}

/// Resolves missing values in place; returns a per-row flag telling whether
/// every value of that row could be resolved.
fn impute(rows: &[WeatherRow], n_features: usize, policy: ImputePolicy) -> Vec<Option<Vec<f64>>> {
    let mut last: Vec<Option<(Hour, f64)>> = vec![None; n_features];
    rows.iter()
        .map(|row| {
            let mut out = Vec::with_capacity(n_features);
            let mut complete = true;
            for (j, v) in row.values.iter().enumerate() {
                match v {
                    Some(x) => {
                        last[j] = Some((row.timestamp, *x));
                        out.push(*x);
                    }
                    None => {
                        let filled = match (policy, last[j]) {
                            (ImputePolicy::ForwardFill { max_gap_hours }, Some((h, x)))
                                if row.timestamp.0 - h.0 <= max_gap_hours =>
                            {
                                Some(x)
                            }
                            _ => None,
                        };
                        match filled {
                            Some(x) => out.push(x),
                            None => complete = false,
                        }
                    }
                }
            }
            complete.then_some(out)
        })
        .collect()
}

/// Joins generation and weather on their shared hourly timestamps.
pub fn merge_hourly(
    gen: &GenerationSeries,
    weather: &WeatherSeries,
    policy: ImputePolicy,
) -> Result<AlignedSeries> {
    if gen.rows.is_empty() {
        return Err(Error::EmptyInput("generation series"));
    }
    if weather.rows.is_empty() {
        return Err(Error::EmptyInput("weather series"));
    }
    let nf = weather.feature_names.len();
    let resolved = impute(&weather.rows, nf, policy);

    let mut samples = Vec::new();
    let mut matched = 0usize;
    let (mut i, mut j) = (0, 0);
    while i < gen.rows.len() && j < weather.rows.len() {
        let (tg, cf) = gen.rows[i];
        let tw = weather.rows[j].timestamp;
        match tg.cmp(&tw) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                matched += 1;
                if let Some(features) = &resolved[j] {
                    samples.push(AlignedSample {
                        timestamp: tg,
                        features: features.clone(),
                        capacity_factor: cf,
                    });
                }
                i += 1;
                j += 1;
            }
        }
    }
    if matched == 0 {
        return Err(Error::EmptyIntersection);
    }
    Ok(AlignedSeries {
        feature_names: weather.feature_names.clone(),
        dropped: matched - samples.len(),
        samples,
    })
}

/// Parameters of the ground-truth wind-speed to capacity-factor mapping.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerCurve {
    pub cut_in: f64,
    pub rated: f64,
}

impl Default for PowerCurve {
    fn default() -> Self {
        PowerCurve {
            cut_in: 3.0,
            rated: 12.0,
        }
    }
}

impl PowerCurve {
    /// Logistic ramp rescaled to hit exactly 0 at cut-in and 1 at rated
    /// speed; flat outside that interval.
    pub fn capacity_factor(&self, wind_speed: f64) -> f64 {
        if wind_speed <= self.cut_in {
            return 0.0;
        }
        if wind_speed >= self.rated {
            return 1.0;
        }
        let sigmoid = |x: f64| 1.0 / (1.0 + (-x).exp());
        let mid = 0.5 * (self.cut_in + self.rated);
        let k = 10.0 / (self.rated - self.cut_in);
        let lo = sigmoid(-5.0);
        let hi = sigmoid(5.0);
        ((sigmoid(k * (wind_speed - mid)) - lo) / (hi - lo)).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_hours: usize,
    pub n_features: usize,
    pub shift: f64,
    pub noise_sd: f64,
    pub power_curve: PowerCurve,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            // five years of hourly data
            n_hours: 43_824,
            n_features: 18,
            shift: 0.0,
            noise_sd: 0.05,
            power_curve: PowerCurve::default(),
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_hours == 0 {
            return Err(Error::InvalidConfig("n_hours must be positive".into()));
        }
        if self.n_features < 6 {
            return Err(Error::InvalidConfig("n_features must be at least 6".into()));
        }
        if !(self.shift >= 0.0 && self.noise_sd >= 0.0) {
            return Err(Error::InvalidConfig("shift and noise_sd must be non-negative".into()));
        }
        if !(self.power_curve.cut_in < self.power_curve.rated) {
            return Err(Error::InvalidConfig("cut_in must be below rated".into()));
        }
        Ok(())
    }
}

/// Hour-to-hour autocorrelation of the latent weather processes.
const SYNTH_PERSISTENCE: f64 = 0.9;
const SYNTH_START: (i32, u32, u32) = (2015, 1, 1);

/// Feature names and the planted causal subset of a synthetic domain.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthLayout {
    pub feature_names: Vec<String>,
    /// Index of the wind-speed feature that drives the power curve.
    pub wind_speed: usize,
    /// The five features that derate the effective wind speed.
    pub modulators: [usize; 5],
}

impl SynthLayout {
    pub fn new(n_features: usize) -> SynthLayout {
        if n_features >= 18 {
            let mut names: Vec<String> =
                numeric_weather_features().iter().map(|s| s.to_string()).collect();
            names.extend((18..n_features).map(|i| format!("extra{}", i - 18)));
            let idx = |n: &str| names.iter().position(|f| f == n).unwrap();
            let modulators = [
                idx("temp"),
                idx("dew"),
                idx("snow"),
                idx("snowdepth"),
                idx("cloudcover"),
            ];
            let wind_speed = idx("windspeed");
            SynthLayout {
                feature_names: names,
                wind_speed,
                modulators,
            }
        } else {
            SynthLayout {
                feature_names: (0..n_features).map(|i| format!("f{i}")).collect(),
                wind_speed: 0,
                modulators: [1, 2, 3, 4, 5],
            }
        }
    }

    /// The six features that influence the capacity factor, ascending.
    pub fn causal(&self) -> Vec<usize> {
        let mut c: Vec<usize> = self.modulators.to_vec();
        c.push(self.wind_speed);
        c.sort_unstable();
        c
    }
}

/// Source-unit location and scale of a synthetic feature.
fn feature_scale(name: &str) -> (f64, f64) {
    match name {
        "temp" => (10.0, 7.0),
        "feelslike" => (8.0, 8.0),
        "dew" => (5.0, 6.0),
        "humidity" => (75.0, 12.0),
        "precip" => (0.1, 0.3),
        "precipprob" => (20.0, 15.0),
        "snow" => (0.2, 0.4),
        "snowdepth" => (1.0, 2.0),
        "windgust" => (30.0, 10.0),
        "windspeed" => (7.0, 3.0),
        "winddir" => (200.0, 80.0),
        "sealevelpressure" => (1013.0, 9.0),
        "cloudcover" => (60.0, 25.0),
        "visibility" => (20.0, 8.0),
        "solarradiation" => (120.0, 90.0),
        "solarenergy" => (0.4, 0.3),
        "uvindex" => (1.5, 1.5),
        "severerisk" => (10.0, 5.0),
        _ => (0.0, 1.0),
    }
}

/// Deterministic per-feature shift direction: (mean offset in standard
/// deviations, log scale factor), both multiplied by `SynthConfig::shift`.
fn shift_direction(j: usize) -> (f64, f64) {
    let offset = if j.is_multiple_of(2) { 0.8 } else { -0.8 };
    let log_scale = if (j / 2).is_multiple_of(2) { 0.1 } else { -0.1 };
    (offset, log_scale)
}

const MODULATOR_WEIGHTS: [f64; 5] = [-0.9, 0.8, -0.9, -0.8, 0.9];

/// Generates one synthetic domain. Latent weather processes are AR(1) with
/// standard-normal marginals; the capacity factor follows the power curve of
/// the latent wind speed derated by the five modulator latents. `shift`
/// moves the observed features away from the latents (mean offset and scale
/// change), so the observed-feature to power relation differs between
/// domains with different shifts.
pub fn synth_domain(cfg: &SynthConfig) -> Result<AlignedSeries> {
    cfg.validate()?;
    let layout = SynthLayout::new(cfg.n_features);
    let nf = cfg.n_features;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let innovation = (1.0 - SYNTH_PERSISTENCE * SYNTH_PERSISTENCE).sqrt();

    let mut latent: Vec<f64> = (0..nf).map(|_| StandardNormal.sample(&mut rng)).collect();
    let scales: Vec<(f64, f64)> = layout.feature_names.iter().map(|n| feature_scale(n)).collect();
    let transforms: Vec<(f64, f64)> = (0..nf)
        .map(|j| {
            let (off, log_scale) = shift_direction(j);
            (cfg.shift * off, (cfg.shift * log_scale).exp())
        })
        .collect();

    let start = Hour::from_ymdh(SYNTH_START.0, SYNTH_START.1, SYNTH_START.2, 0);
    let (ws_mu, ws_sd) = scales[layout.wind_speed];
    let mut samples = Vec::with_capacity(cfg.n_hours);
    for t in 0..cfg.n_hours {
        if t > 0 {
            for z in latent.iter_mut() {
                let e: f64 = StandardNormal.sample(&mut rng);
                *z = SYNTH_PERSISTENCE * *z + innovation * e;
            }
        }
        let features: Vec<f64> = (0..nf)
            .map(|j| {
                let (mu, sd) = scales[j];
                let (off, scale) = transforms[j];
                mu + sd * (off + scale * latent[j])
            })
            .collect();

        let wind_speed = ws_mu + ws_sd * latent[layout.wind_speed];
        let drive: f64 = layout
            .modulators
            .iter()
            .zip(MODULATOR_WEIGHTS)
            .map(|(&j, w)| w * latent[j])
            .sum();
        // derating factor in (0.5, 1]
        let derate = 1.0 - 0.5 / (1.0 + (-drive).exp());
        let noise: f64 = if cfg.noise_sd > 0.0 {
            cfg.noise_sd * Distribution::<f64>::sample(&StandardNormal, &mut rng)
        } else {
            0.0
        };
        let capacity_factor =
            (cfg.power_curve.capacity_factor(wind_speed * derate) + noise).clamp(0.0, 1.0);
        samples.push(AlignedSample {
            timestamp: Hour(start.0 + t as i64),
            features,
            capacity_factor,
        });
    }
    Ok(AlignedSeries {
        feature_names: layout.feature_names,
        samples,
        dropped: 0,
    })
}

fn create(path: &Path) -> Result<std::io::BufWriter<File>> {
    File::create(path)
        .map(std::io::BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

/// Writes the capacity factors as a single-country generation CSV.
pub fn write_generation_csv(path: &Path, country_id: &str, series: &AlignedSeries) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "{TIMESTAMP_COLUMN},{country_id}").map_err(io)?;
    for s in &series.samples {
        writeln!(w, "{},{}", s.timestamp, s.capacity_factor).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Writes the weather features as a weather CSV.
pub fn write_weather_csv(path: &Path, series: &AlignedSeries) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "{TIMESTAMP_COLUMN},{}", series.feature_names.join(",")).map_err(io)?;
    for s in &series.samples {
        write!(w, "{}", s.timestamp).map_err(io)?;
        for v in &s.features {
            write!(w, ",{v}").map_err(io)?;
        }
        writeln!(w).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Writes merged samples: `timestamp,<features...>,capacity_factor`.
pub fn write_aligned_csv(path: &Path, series: &AlignedSeries) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(
        w,
        "{TIMESTAMP_COLUMN},{},capacity_factor",
        series.feature_names.join(",")
    )
    .map_err(io)?;
    for s in &series.samples {
        write!(w, "{}", s.timestamp).map_err(io)?;
        for v in &s.features {
            write!(w, ",{v}").map_err(io)?;
        }
        writeln!(w, ",{}", s.capacity_factor).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Reads a file produced by [`write_aligned_csv`].
pub fn read_aligned_csv(path: &Path) -> Result<AlignedSeries> {
    let mut rdr = open_csv(path)?;
    let headers = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    let ts_col = column_of(&headers, path, TIMESTAMP_COLUMN)?;
    let cf_col = column_of(&headers, path, "capacity_factor")?;
    let feat_cols: Vec<usize> = (0..headers.len()).filter(|&i| i != ts_col && i != cf_col).collect();
    let feature_names = feat_cols.iter().map(|&i| headers[i].to_string()).collect();

    let mut samples = Vec::new();
    let mut seen = HashSet::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let parse_err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let num = |i: usize| -> Result<f64> {
            rec[i]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| parse_err(format!("`{}` is not a finite number", &rec[i])))
        };
        let timestamp = Hour::parse(&rec[ts_col]).map_err(parse_err)?;
        if !seen.insert(timestamp) {
            return Err(Error::DuplicateTimestamp(timestamp.to_string()));
        }
        let capacity_factor = num(cf_col)?;
        if !(0.0..=1.0).contains(&capacity_factor) {
            return Err(Error::OutOfRange {
                path: path.to_path_buf(),
                line,
                value: capacity_factor,
            });
        }
        let features = feat_cols.iter().map(|&i| num(i)).collect::<Result<_>>()?;
        samples.push(AlignedSample {
            timestamp,
            features,
            capacity_factor,
        });
    }
    if samples.is_empty() {
        return Err(Error::EmptyFile {
            path: path.to_path_buf(),
        });
    }
    samples.sort_by_key(|s| s.timestamp);
    Ok(AlignedSeries {
        feature_names,
        samples,
        dropped: 0,
    })
}
