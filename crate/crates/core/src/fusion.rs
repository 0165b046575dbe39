//! Multi-source feature fusion.
//!
//! Each gridded trajectory is joined with its pilotage booking and the
//! local weather series, turned into per-minute feature rows, and cut into
//! sliding windows of `m` rows that end strictly before the labelled
//! arrival. Targets are minutes-to-arrival divided by a fixed horizon.
//!
//! Column layout of a full window row:
//!
//! | # | feature                     | scaling                    |
//! |---|-----------------------------|----------------------------|
//! | 0 | latitude                    | min-max (train)            |
//! | 1 | longitude                   | min-max (train)            |
//! | 2 | speed over ground           | min-max (train)            |
//! | 3 | course over ground          | `c / 360`                  |
//! | 4 | minutes until CST (signed)  | min-max (train)            |
//! | 5 | rainfall                    | binary, or min-max         |
//! | 6 | wind speed                  | binary, or min-max         |
//! | 7 | wind direction, sine part   | `(sin θ + 1) / 2`          |
//! | 8 | wind direction, cosine part | `(cos θ + 1) / 2`          |
//!
//! Ablation variants drop the CST column or the four weather columns.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::contour::ArrivalContour;
use crate::geo::normalize_degrees;
use crate::ingest::{PilotageBooking, Trajectory, WeatherRecord};

/// Longest allowed staleness of a carried-forward weather observation.
pub const WEATHER_TOLERANCE_S: i64 = 2 * 3600;

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("negative rainfall {0}")]
    NegativeRainfall(f64),
    #[error("negative wind speed {0}")]
    NegativeWindSpeed(f64),
    #[error("no booking for voyage {0}")]
    MissingBooking(String),
    #[error("no weather observation within {WEATHER_TOLERANCE_S} s before t={0}")]
    WeatherGap(i64),
    #[error("dataset has no windows")]
    EmptyDataset,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("malformed dataset file: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingMode {
    Discrete,
    Continuous,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingConfig {
    /// Rainfall threshold, mm.
    pub eps_rain: f64,
    /// Wind-speed threshold, knots.
    pub eps_wind: f64,
    pub mode: EmbeddingMode,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self {
            eps_rain: 7.6,
            eps_wind: 22.0,
            mode: EmbeddingMode::Discrete,
        }
    }
}

impl EmbeddingConfig {
    pub fn validate(&self) -> Result<(), FusionError> {
        if self.eps_rain > 0.0 && self.eps_wind > 0.0 {
            Ok(())
        } else {
            Err(FusionError::InvalidConfig(format!(
                "embedding thresholds must be positive (rain {}, wind {})",
                self.eps_rain, self.eps_wind
            )))
        }
    }
}

/// In discrete mode returns 0/1 against the threshold; in continuous mode
/// returns the raw value, which the dataset scaler later min-max scales.
pub fn embed_rainfall(r: f64, cfg: &EmbeddingConfig) -> Result<f64, FusionError> {
    if r < 0.0 {
        return Err(FusionError::NegativeRainfall(r));
    }
    Ok(match cfg.mode {
        EmbeddingMode::Discrete => f64::from(u8::from(r >= cfg.eps_rain)),
        EmbeddingMode::Continuous => r,
    })
}

pub fn embed_wind_speed(w: f64, cfg: &EmbeddingConfig) -> Result<f64, FusionError> {
    if w < 0.0 {
        return Err(FusionError::NegativeWindSpeed(w));
    }
    Ok(match cfg.mode {
        EmbeddingMode::Discrete => f64::from(u8::from(w >= cfg.eps_wind)),
        EmbeddingMode::Continuous => w,
    })
}

/// Cyclic encoding of a direction in degrees onto two [0, 1] components.
pub fn embed_wind_direction(theta_deg: f64) -> (f64, f64) {
    let (s, c) = sin_cos_deg(normalize_degrees(theta_deg));
    ((s + 1.0) / 2.0, (c + 1.0) / 2.0)
}

/// Sine and cosine of an angle in degrees, reduced by quarter turns first so
/// the cardinal directions come out exact.
fn sin_cos_deg(deg: f64) -> (f64, f64) {
    let q = (deg / 90.0).round();
    let (s, c) = (deg - 90.0 * q).to_radians().sin_cos();
    match (q as i64).rem_euclid(4) {
        0 => (s, c),
        1 => (c, -s),
        2 => (-s, -c),
        _ => (-c, s),
    }
}

/// Signed minutes from `now` until the confirmed service time.
pub fn time_to_cst(now: i64, booking: Option<&PilotageBooking>, voyage_id: &str) -> Result<f64, FusionError> {
    let b = booking.ok_or_else(|| FusionError::MissingBooking(voyage_id.to_string()))?;
    Ok((b.cst - now) as f64 / 60.0)
}

/// Pairs every trajectory sample with the latest observation at or before
/// its timestamp.
pub fn join_weather(traj: &Trajectory, weather: &[WeatherRecord]) -> Result<Vec<WeatherRecord>, FusionError> {
    traj.samples
        .iter()
        .map(|s| {
            let idx = weather.partition_point(|w| w.timestamp <= s.timestamp);
            match idx.checked_sub(1).map(|i| weather[i]) {
                Some(w) if s.timestamp - w.timestamp <= WEATHER_TOLERANCE_S => Ok(w),
                _ => Err(FusionError::WeatherGap(s.timestamp)),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    Lat,
    Lon,
    Speed,
    Course,
    TimeToCst,
    Rainfall,
    WindSpeed,
    WindDirSin,
    WindDirCos,
}

impl Feature {
    pub const ALL: [Feature; 9] = [
        Feature::Lat,
        Feature::Lon,
        Feature::Speed,
        Feature::Course,
        Feature::TimeToCst,
        Feature::Rainfall,
        Feature::WindSpeed,
        Feature::WindDirSin,
        Feature::WindDirCos,
    ];

    pub fn is_weather(self) -> bool {
        matches!(
            self,
            Feature::Rainfall | Feature::WindSpeed | Feature::WindDirSin | Feature::WindDirCos
        )
    }

    fn min_max_scaled(self, mode: EmbeddingMode) -> bool {
        match self {
            Feature::Lat | Feature::Lon | Feature::Speed | Feature::TimeToCst => true,
            Feature::Rainfall | Feature::WindSpeed => mode == EmbeddingMode::Continuous,
            Feature::Course | Feature::WindDirSin | Feature::WindDirCos => false,
        }
    }
}

/// Which source groups feed the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSet {
    pub cst: bool,
    pub weather: bool,
}

impl Default for FeatureSet {
    fn default() -> Self {
        Self {
            cst: true,
            weather: true,
        }
    }
}

impl FeatureSet {
    pub fn columns(&self) -> Vec<Feature> {
        Feature::ALL
            .into_iter()
            .filter(|f| (self.cst || *f != Feature::TimeToCst) && (self.weather || !f.is_weather()))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    /// Window length in minutes (rows).
    pub m: usize,
    /// Target horizon in minutes.
    pub t_max_min: f64,
    pub train_fraction: f64,
    pub embedding: EmbeddingConfig,
    pub features: FeatureSet,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            m: 10,
            t_max_min: 120.0,
            train_fraction: 0.8,
            embedding: EmbeddingConfig::default(),
            features: FeatureSet::default(),
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<(), FusionError> {
        self.embedding.validate()?;
        if self.m == 0 {
            return Err(FusionError::InvalidConfig("window length m must be positive".into()));
        }
        if !(self.t_max_min > 0.0) {
            return Err(FusionError::InvalidConfig("t_max must be positive".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(FusionError::InvalidConfig(format!(
                "train fraction {} outside (0, 1)",
                self.train_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnScale {
    pub feature: Feature,
    pub min: f64,
    pub max: f64,
}

impl ColumnScale {
    fn identity(feature: Feature) -> Self {
        Self {
            feature,
            min: 0.0,
            max: 1.0,
        }
    }

    pub fn apply(&self, v: f64) -> f64 {
        let span = self.max - self.min;
        let s = if span > 0.0 { (v - self.min) / span } else { 0.0 };
        s.clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub columns: Vec<ColumnScale>,
    /// Target horizon, minutes.
    pub t_max_min: f64,
}

impl Scaler {
    pub fn normalize_target(&self, minutes: f64) -> f64 {
        (minutes / self.t_max_min).clamp(0.0, 1.0)
    }

    pub fn denormalize_target(&self, target: f64) -> f64 {
        target * self.t_max_min
    }
}

/// Raw kinematic state at the last row of a window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnchorState {
    pub lat: f64,
    pub lon: f64,
    pub sog: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureWindow {
    pub voyage_id: String,
    pub anchor_time: i64,
    pub anchor: AnchorState,
    /// `m` rows by `channels` columns, row-major, oldest row first.
    pub matrix: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BuildStats {
    pub trajectories: usize,
    pub not_arrived: usize,
    /// Arrived, but fewer pre-arrival samples than the window length.
    pub too_short: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusedDataset {
    pub m: usize,
    pub channels: Vec<Feature>,
    pub mode: EmbeddingMode,
    pub windows: Vec<FeatureWindow>,
    pub targets: Vec<f64>,
    pub scaler: Scaler,
    /// Position of the first test window; windows are in anchor-time order.
    pub split_index: usize,
    pub stats: BuildStats,
}

impl FusedDataset {
    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn train_range(&self) -> std::ops::Range<usize> {
        0..self.split_index
    }

    pub fn test_range(&self) -> std::ops::Range<usize> {
        self.split_index..self.windows.len()
    }

    pub fn target_minutes(&self, i: usize) -> f64 {
        self.scaler.denormalize_target(self.targets[i])
    }
}

struct RawWindow {
    voyage_order: usize,
    anchor_index: usize,
    voyage_id: String,
    anchor_time: i64,
    anchor: AnchorState,
    target_minutes: f64,
    /// `m` rows of all nine raw columns.
    rows: Vec<[f64; 9]>,
}

fn raw_rows(
    traj: &Trajectory,
    upto: usize,
    booking: Option<&PilotageBooking>,
    weather: Option<&[WeatherRecord]>,
    emb: &EmbeddingConfig,
) -> Result<Vec<[f64; 9]>, FusionError> {
    let joined = match weather {
        Some(w) => Some(join_weather(traj, w)?),
        None => None,
    };
    traj.samples[..upto]
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let cst = match booking {
                Some(_) => time_to_cst(s.timestamp, booking, &traj.voyage_id)?,
                None => 0.0,
            };
            let (rain, wind, ws, wc) = match &joined {
                Some(j) => {
                    let w = &j[i];
                    let (ws, wc) = embed_wind_direction(w.wind_dir);
                    (embed_rainfall(w.rainfall, emb)?, embed_wind_speed(w.wind_speed, emb)?, ws, wc)
                }
                None => (0.0, 0.0, 0.0, 0.0),
            };
            Ok([s.lat, s.lon, s.sog, s.cog / 360.0, cst, rain, wind, ws, wc])
        })
        .collect()
}

/// Builds the windowed, normalized and chronologically split dataset.
pub fn build_dataset(
    trajs: &[Trajectory],
    contour: &ArrivalContour,
    bookings: &HashMap<String, PilotageBooking>,
    weather: &[WeatherRecord],
    cfg: &DatasetConfig,
) -> Result<FusedDataset, FusionError> {
    cfg.validate()?;
    let m = cfg.m;
    let mut stats = BuildStats {
        trajectories: trajs.len(),
        ..Default::default()
    };
    let mut raw: Vec<RawWindow> = Vec::new();

    for (order, traj) in trajs.iter().enumerate() {
        let Some(hit) = contour.label_arrival(traj) else {
            stats.not_arrived += 1;
            continue;
        };
        if hit.index < m {
            stats.too_short += 1;
            continue;
        }
        let booking = if cfg.features.cst {
            Some(
                bookings
                    .get(&traj.voyage_id)
                    .ok_or_else(|| FusionError::MissingBooking(traj.voyage_id.clone()))?,
            )
        } else {
            None
        };
        let weather = cfg.features.weather.then_some(weather);
        let rows = raw_rows(traj, hit.index, booking, weather, &cfg.embedding)?;
        for anchor_index in (m - 1)..hit.index {
            let s = &traj.samples[anchor_index];
            raw.push(RawWindow {
                voyage_order: order,
                anchor_index,
                voyage_id: traj.voyage_id.clone(),
                anchor_time: s.timestamp,
                anchor: AnchorState {
                    lat: s.lat,
                    lon: s.lon,
                    sog: s.sog,
                },
                target_minutes: (hit.timestamp - s.timestamp) as f64 / 60.0,
                rows: rows[anchor_index + 1 - m..=anchor_index].to_vec(),
            });
        }
    }
    if raw.is_empty() {
        return Err(FusionError::EmptyDataset);
    }

    raw.sort_by(|a, b| {
        a.anchor_time
            .cmp(&b.anchor_time)
            .then(a.voyage_order.cmp(&b.voyage_order))
            .then(a.anchor_index.cmp(&b.anchor_index))
    });
    let split_index = chronological_split(&raw, cfg.train_fraction);
    if split_index == 0 || split_index == raw.len() {
        return Err(FusionError::InvalidConfig(format!(
            "split of {} windows leaves an empty train or test side",
            raw.len()
        )));
    }

    let channels = cfg.features.columns();
    let scales: Vec<ColumnScale> = channels
        .iter()
        .map(|&f| {
            if !f.min_max_scaled(cfg.embedding.mode) {
                return ColumnScale::identity(f);
            }
            let col = Feature::ALL.iter().position(|x| *x == f).unwrap();
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for w in &raw[..split_index] {
                for r in &w.rows {
                    lo = lo.min(r[col]);
                    hi = hi.max(r[col]);
                }
            }
            ColumnScale {
                feature: f,
                min: lo,
                max: hi,
            }
        })
        .collect();
    let col_idx: Vec<usize> = channels
        .iter()
        .map(|f| Feature::ALL.iter().position(|x| x == f).unwrap())
        .collect();
    let scaler = Scaler {
        columns: scales,
        t_max_min: cfg.t_max_min,
    };

    let mut windows = Vec::with_capacity(raw.len());
    let mut targets = Vec::with_capacity(raw.len());
    for w in raw {
        let mut matrix = Vec::with_capacity(m * channels.len());
        for r in &w.rows {
            for (sc, &ci) in scaler.columns.iter().zip(&col_idx) {
                matrix.push(sc.apply(r[ci]));
            }
        }
        targets.push(scaler.normalize_target(w.target_minutes));
        windows.push(FeatureWindow {
            voyage_id: w.voyage_id,
            anchor_time: w.anchor_time,
            anchor: w.anchor,
            matrix,
        });
    }

    Ok(FusedDataset {
        m,
        channels,
        mode: cfg.embedding.mode,
        windows,
        targets,
        scaler,
        split_index,
        stats,
    })
}

/// First test position: windows sharing the boundary anchor time all go to
/// the test side so that every train anchor precedes every test anchor.
fn chronological_split(sorted: &[RawWindow], train_fraction: f64) -> usize {
    let n = sorted.len();
    let cut = ((n as f64) * train_fraction).floor() as usize;
    if cut >= n {
        return n;
    }
    let boundary = sorted[cut].anchor_time;
    sorted.partition_point(|w| w.anchor_time < boundary)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Sidecar {
    format_version: u32,
    config_hash: String,
    m: usize,
    channels: Vec<Feature>,
    mode: EmbeddingMode,
    t_max_min: f64,
    split_index: usize,
    n_windows: usize,
    scaler: Scaler,
    stats: BuildStats,
}

const DATASET_FORMAT_VERSION: u32 = 1;

impl FusedDataset {
    /// Writes `<stem>.csv` (one window per line) and `<stem>.json` (scaler
    /// and layout). Floats are written in shortest round-trip form.
    pub fn save(&self, dir: &Path, stem: &str, config_hash: &str) -> Result<(), FusionError> {
        fs::create_dir_all(dir)?;
        let mut out = BufWriter::new(fs::File::create(dir.join(format!("{stem}.csv")))?);
        write!(out, "voyage_id,anchor_time,anchor_lat,anchor_lon,anchor_sog,target")?;
        for r in 0..self.m {
            for f in &self.channels {
                let name = serde_json::to_value(f)?;
                write!(out, ",r{r}_{}", name.as_str().unwrap_or("x"))?;
            }
        }
        writeln!(out)?;
        for (w, t) in self.windows.iter().zip(&self.targets) {
            write!(
                out,
                "{},{},{},{},{},{}",
                w.voyage_id, w.anchor_time, w.anchor.lat, w.anchor.lon, w.anchor.sog, t
            )?;
            for v in &w.matrix {
                write!(out, ",{v}")?;
            }
            writeln!(out)?;
        }
        out.flush()?;

        let side = Sidecar {
            format_version: DATASET_FORMAT_VERSION,
            config_hash: config_hash.to_string(),
            m: self.m,
            channels: self.channels.clone(),
            mode: self.mode,
            t_max_min: self.scaler.t_max_min,
            split_index: self.split_index,
            n_windows: self.windows.len(),
            scaler: self.scaler.clone(),
            stats: self.stats.clone(),
        };
        fs::write(dir.join(format!("{stem}.json")), serde_json::to_string_pretty(&side)?)?;
        Ok(())
    }

    /// Loads a dataset written by [`FusedDataset::save`]; returns it with
    /// the config hash recorded in the sidecar.
    pub fn load(dir: &Path, stem: &str) -> Result<(Self, String), FusionError> {
        let side: Sidecar = serde_json::from_str(&fs::read_to_string(dir.join(format!("{stem}.json")))?)?;
        if side.format_version != DATASET_FORMAT_VERSION {
            return Err(FusionError::Malformed(format!(
                "unsupported dataset format version {}",
                side.format_version
            )));
        }
        let width = side.m * side.channels.len();
        let file = fs::File::open(dir.join(format!("{stem}.csv")))?;
        let mut windows = Vec::with_capacity(side.n_windows);
        let mut targets = Vec::with_capacity(side.n_windows);
        for (lineno, line) in BufReader::new(file).lines().enumerate().skip(1) {
            let line = line?;
            let bad = |what: &str| FusionError::Malformed(format!("line {}: {what}", lineno + 1));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 + width {
                return Err(bad("wrong field count"));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad("bad number"));
            let anchor_time = f[1].parse::<i64>().map_err(|_| bad("bad anchor_time"))?;
            let anchor = AnchorState {
                lat: num(f[2])?,
                lon: num(f[3])?,
                sog: num(f[4])?,
            };
            targets.push(num(f[5])?);
            let matrix = f[6..].iter().map(|s| num(s)).collect::<Result<Vec<_>, _>>()?;
            windows.push(FeatureWindow {
                voyage_id: f[0].to_string(),
                anchor_time,
                anchor,
                matrix,
            });
        }
        if windows.len() != side.n_windows || side.split_index > windows.len() {
            return Err(FusionError::Malformed(format!(
                "expected {} windows, found {}",
                side.n_windows,
                windows.len()
            )));
        }
        Ok((
            FusedDataset {
                m: side.m,
                channels: side.channels,
                mode: side.mode,
                windows,
                targets,
                scaler: side.scaler,
                split_index: side.split_index,
                stats: side.stats,
            },
            side.config_hash,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::GeoPoint;
    use crate::ingest::AisRecord;

    fn disc() -> EmbeddingConfig {
        EmbeddingConfig::default()
    }

    #[test]
    fn rainfall_threshold_is_inclusive() {
        assert_eq!(embed_rainfall(7.6, &disc()).unwrap(), 1.0);
        assert_eq!(embed_rainfall(0.0, &disc()).unwrap(), 0.0);
        assert_eq!(embed_rainfall(20.0, &disc()).unwrap(), 1.0);
        assert!(matches!(embed_rainfall(-0.1, &disc()), Err(FusionError::NegativeRainfall(_))));
    }

    #[test]
    fn wind_threshold_is_inclusive() {
        assert_eq!(embed_wind_speed(22.0, &disc()).unwrap(), 1.0);
        assert_eq!(embed_wind_speed(5.0, &disc()).unwrap(), 0.0);
        assert_eq!(embed_wind_speed(40.0, &disc()).unwrap(), 1.0);
        assert!(matches!(embed_wind_speed(-3.0, &disc()), Err(FusionError::NegativeWindSpeed(_))));
    }

    #[test]
    fn continuous_mode_passes_raw_values() {
        let cfg = EmbeddingConfig {
            mode: EmbeddingMode::Continuous,
            ..disc()
        };
        assert_eq!(embed_rainfall(3.25, &cfg).unwrap(), 3.25);
        assert_eq!(embed_wind_speed(17.0, &cfg).unwrap(), 17.0);
    }

    #[test]
    fn wind_direction_cardinal_points() {
        assert_eq!(embed_wind_direction(0.0), (0.5, 1.0));
        assert_eq!(embed_wind_direction(90.0), (1.0, 0.5));
        assert_eq!(embed_wind_direction(180.0), (0.5, 0.0));
        assert_eq!(embed_wind_direction(270.0), (0.0, 0.5));
        assert_eq!(embed_wind_direction(-90.0), (0.0, 0.5));
        assert_eq!(embed_wind_direction(360.0), (0.5, 1.0));
    }

    #[test]
    fn cst_minutes_signed() {
        let b = PilotageBooking { cst: 12 * 3600 };
        assert_eq!(time_to_cst(10 * 3600 + 1800, Some(&b), "V").unwrap(), 90.0);
        assert_eq!(time_to_cst(12 * 3600, Some(&b), "V").unwrap(), 0.0);
        assert_eq!(time_to_cst(12 * 3600 + 1800, Some(&b), "V").unwrap(), -30.0);
        assert!(matches!(time_to_cst(0, None, "V"), Err(FusionError::MissingBooking(_))));
    }

    fn wx(t: i64, rain: f64) -> WeatherRecord {
        WeatherRecord {
            timestamp: t,
            rainfall: rain,
            wind_speed: 10.0,
            wind_dir: 45.0,
        }
    }

    fn straight_traj(id: &str, t0: i64, n: usize) -> Trajectory {
        let samples = (0..n)
            .map(|i| AisRecord {
                voyage_id: id.into(),
                timestamp: t0 + 60 * i as i64,
                lat: 1.0,
                lon: 2.0 - 0.01 * i as f64,
                sog: 10.0 + i as f64 * 0.01,
                cog: 270.0,
            })
            .collect();
        Trajectory::new(id, "P", samples).unwrap()
    }

    #[test]
    fn weather_carried_forward() {
        let t = Trajectory::new(
            "V",
            "P",
            (0..31)
                .map(|i| AisRecord {
                    voyage_id: "V".into(),
                    timestamp: 60 * i,
                    lat: 0.0,
                    lon: 0.0,
                    sog: 1.0,
                    cog: 0.0,
                })
                .collect(),
        )
        .unwrap();
        let w = [wx(0, 1.0), wx(3600, 2.0)];
        let j = join_weather(&t, &w).unwrap();
        assert_eq!(j[30].timestamp, 0, "t=1800 takes the t=0 record");
        assert_eq!(j[0].timestamp, 0, "exact match");
    }

    #[test]
    fn weather_gap_detected() {
        let t = straight_traj("V", 4 * 3600, 3);
        assert!(matches!(join_weather(&t, &[wx(3600, 0.0)]), Err(FusionError::WeatherGap(_))));
        assert!(matches!(join_weather(&t, &[wx(5 * 3600, 0.0)]), Err(FusionError::WeatherGap(_))));
    }

    fn band_contour(lon_min: f64, lon_max: f64) -> ArrivalContour {
        ArrivalContour {
            pbg_id: "P".into(),
            polygon: vec![
                GeoPoint::new(0.0, lon_min),
                GeoPoint::new(0.0, lon_max),
                GeoPoint::new(2.0, lon_max),
                GeoPoint::new(2.0, lon_min),
            ],
            kept_points: vec![],
            main_cluster_size: 0,
        }
    }

    #[test]
    fn window_count_and_targets() {
        // arrival at index 60: lon = 2.0 - 0.6 = 1.4
        let traj = straight_traj("V", 0, 80);
        let contour = band_contour(1.0, 1.4000000001);
        let bookings = HashMap::from([("V".to_string(), PilotageBooking { cst: 3600 })]);
        let weather: Vec<_> = (0..3).map(|h| wx(h * 3600, h as f64 * 5.0)).collect();
        let cfg = DatasetConfig::default();
        let ds = build_dataset(&[traj], &contour, &bookings, &weather, &cfg).unwrap();
        assert_eq!(ds.len(), 51);
        assert_eq!(ds.n_channels(), 9);
        // the window anchored 30 minutes before arrival
        let i = ds.windows.iter().position(|w| w.anchor_time == 30 * 60).unwrap();
        assert_eq!(ds.targets[i], 0.25);
        assert!(ds.windows.iter().all(|w| w.matrix.iter().all(|v| (0.0..=1.0).contains(v))));
        for w in &ds.windows[..ds.split_index] {
            assert!(w.anchor_time < ds.windows[ds.split_index].anchor_time);
        }
    }

    #[test]
    fn voyage_spanning_split_goes_partly_to_test() {
        let a = straight_traj("A", 0, 80);
        let b = straight_traj("B", 40 * 60, 80);
        let contour = band_contour(1.0, 1.4000000001);
        let bookings = HashMap::from([
            ("A".to_string(), PilotageBooking { cst: 3600 }),
            ("B".to_string(), PilotageBooking { cst: 6000 }),
        ]);
        let weather: Vec<_> = (0..5).map(|h| wx(h * 3600, 0.0)).collect();
        let ds = build_dataset(&[a, b], &contour, &bookings, &weather, &DatasetConfig::default()).unwrap();
        assert_eq!(ds.len(), 102);
        let b_train = ds.windows[..ds.split_index].iter().filter(|w| w.voyage_id == "B").count();
        let b_test = ds.windows[ds.split_index..].iter().filter(|w| w.voyage_id == "B").count();
        assert!(b_train > 0 && b_test > 0);
        let last_train = ds.windows[ds.split_index - 1].anchor_time;
        assert!(ds.windows[ds.split_index..].iter().all(|w| w.anchor_time > last_train));
    }

    #[test]
    fn ablations_drop_columns() {
        let traj = straight_traj("V", 0, 80);
        let contour = band_contour(1.0, 1.4000000001);
        let bookings = HashMap::new();
        let cfg = DatasetConfig {
            features: FeatureSet {
                cst: false,
                weather: false,
            },
            ..Default::default()
        };
        // neither bookings nor weather are consulted
        let ds = build_dataset(&[traj], &contour, &bookings, &[], &cfg).unwrap();
        assert_eq!(ds.channels, vec![Feature::Lat, Feature::Lon, Feature::Speed, Feature::Course]);
        assert_eq!(ds.windows[0].matrix.len(), 10 * 4);
    }

    #[test]
    fn never_arriving_voyage_is_counted() {
        let a = straight_traj("A", 0, 80);
        let b = Trajectory {
            voyage_id: "B".into(),
            ..straight_traj("B", 0, 5)
        };
        let contour = band_contour(1.0, 1.4000000001);
        let bookings = HashMap::from([("A".to_string(), PilotageBooking { cst: 3600 })]);
        let weather = vec![wx(0, 0.0), wx(3600, 0.0), wx(7200, 0.0)];
        let ds = build_dataset(&[a, b], &contour, &bookings, &weather, &DatasetConfig::default()).unwrap();
        assert_eq!(ds.stats.not_arrived, 1);
    }

    #[test]
    fn missing_booking_is_an_error() {
        let a = straight_traj("A", 0, 80);
        let contour = band_contour(1.0, 1.4000000001);
        let weather = vec![wx(0, 0.0), wx(3600, 0.0), wx(7200, 0.0)];
        assert!(matches!(
            build_dataset(&[a], &contour, &HashMap::new(), &weather, &DatasetConfig::default()),
            Err(FusionError::MissingBooking(_))
        ));
    }

    #[test]
    fn save_load_round_trip() {
        let traj = straight_traj("V", 0, 80);
        let contour = band_contour(1.0, 1.4000000001);
        let bookings = HashMap::from([("V".to_string(), PilotageBooking { cst: 3600 })]);
        let weather: Vec<_> = (0..3).map(|h| wx(h * 3600, h as f64 * 5.0)).collect();
        let ds = build_dataset(&[traj], &contour, &bookings, &weather, &DatasetConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        ds.save(dir.path(), "dataset", "h1").unwrap();
        let (back, hash) = FusedDataset::load(dir.path(), "dataset").unwrap();
        assert_eq!(hash, "h1");
        assert_eq!(back, ds);
    }

    use proptest::prelude::*;

    proptest! {
        #[test]
        fn wind_direction_on_unit_circle(theta in 0.0f64..360.0) {
            let (s, c) = embed_wind_direction(theta);
            let r = (2.0 * s - 1.0).powi(2) + (2.0 * c - 1.0).powi(2);
            prop_assert!((r - 1.0).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&s) && (0.0..=1.0).contains(&c));
        }

        #[test]
        fn discrete_embedding_idempotent(bit in 0u8..=1) {
            // thresholds below 1 so that an already-binary 1 maps to 1
            let cfg = EmbeddingConfig { eps_rain: 0.5, eps_wind: 0.5, mode: EmbeddingMode::Discrete };
            let v = f64::from(bit);
            prop_assert_eq!(embed_rainfall(v, &cfg).unwrap(), v);
            prop_assert_eq!(embed_wind_speed(v, &cfg).unwrap(), v);
        }

        #[test]
        fn target_round_trip(minutes in 0i64..=240, t_max in 30i64..=600) {
            let s = Scaler { columns: vec![], t_max_min: t_max as f64 };
            let t = s.normalize_target(minutes as f64);
            prop_assert_eq!(s.normalize_target(s.denormalize_target(t)), t);
        }
    }
}
