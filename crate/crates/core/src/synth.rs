//! Synthetic approach traffic with known arrival times.
//!
//! Each voyage runs a great circle from a start point towards a boarding
//! point scattered around the boarding-ground centre, in three constant-speed
//! legs (cruise, approach, final), then holds station while the pilot boards.
//! Speed is held constant within each minute and is cut by strong wind or
//! heavy rain, mostly while manoeuvring on the approach. The true arrival is
//! the exact moment the track enters a disc around the centre, from
//! closed-form spherical along-track geometry; voyages that stop short of
//! the disc have none. The booked arrival (CST) scatters around either that
//! arrival or the calm-weather schedule.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{normalize_degrees, GeoPoint, EARTH_RADIUS_KM, KM_PER_NM};
use crate::ingest::{AisRecord, WeatherRecord, AIS_HEADER, BOOKING_HEADER, WEATHER_HEADER};

pub const TRUTH_HEADER: [&str; 2] = ["voyage_id", "arrival_timestamp"];

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scenario: {0}")]
    InvalidConfig(String),
    #[error("unknown voyage {0}")]
    UnknownVoyage(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeatherRegime {
    /// Rain spells started per day (hourly two-state chain).
    pub rain_events_per_day: f64,
    pub rain_mean_hours: f64,
    /// Rainfall per hourly report during a spell, mm.
    pub rain_mm: [f64; 2],
    pub wind_events_per_day: f64,
    pub wind_mean_hours: f64,
    pub calm_wind_kn: [f64; 2],
    pub strong_wind_kn: [f64; 2],
    /// Wind direction wanders hourly around a prevailing direction: each
    /// hour it closes `wind_dir_reversion` of the gap and takes a Gaussian
    /// step of this many degrees.
    pub wind_dir_step_deg: f64,
    pub prevailing_wind_dir_deg: f64,
    pub wind_dir_reversion: f64,
    /// Wind at or above this speed slows vessels by `wind_slowdown`.
    pub wind_threshold_kn: f64,
    pub wind_slowdown: f64,
    pub rain_threshold_mm: f64,
    pub rain_slowdown: f64,
    /// Share of the slowdowns felt on the open-water cruise leg; the
    /// approach and final legs, manoeuvring for the pilot, feel them fully.
    pub cruise_exposure: f64,
}

impl Default for WeatherRegime {
    fn default() -> Self {
        Self {
            rain_events_per_day: 1.0,
            rain_mean_hours: 4.0,
            rain_mm: [2.0, 14.0],
            wind_events_per_day: 1.5,
            wind_mean_hours: 8.0,
            calm_wind_kn: [4.0, 16.0],
            strong_wind_kn: [22.0, 34.0],
            wind_dir_step_deg: 20.0,
            prevailing_wind_dir_deg: 45.0,
            wind_dir_reversion: 0.2,
            wind_threshold_kn: 22.0,
            wind_slowdown: 0.3,
            rain_threshold_mm: 7.6,
            rain_slowdown: 0.2,
            cruise_exposure: 0.0,
        }
    }
}

/// What the booked arrival time is scattered around.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CstBasis {
    /// The realised arrival, weather delays included.
    Truth,
    /// The arrival the voyage would make at its leg speeds in calm weather,
    /// as a booking made ahead of time would plan it.
    Schedule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub n_voyages: usize,
    pub pbg_id: String,
    pub pbg_center: GeoPoint,
    /// Radius of the disc whose first entry defines the true arrival.
    pub arrival_radius_nm: f64,
    /// Bearing from the centre towards where traffic comes from.
    pub corridor_bearing_deg: f64,
    pub corridor_spread_deg: f64,
    /// Start distance from the boarding point, nm.
    pub start_distance_nm: [f64; 2],
    /// Boarding-point scatter around the centre, nm: along-track and
    /// cross-track standard deviation.
    pub endpoint_sigma_nm: [f64; 2],
    /// The pilot-station reference that closest approaches are measured
    /// against lies this far past the centre, away from the corridor.
    pub reference_offset_nm: f64,
    pub cruise_speed_kn: [f64; 2],
    /// The approach leg starts this far (nm) before the boarding point.
    pub approach_start_nm: [f64; 2],
    pub approach_speed_kn: [f64; 2],
    pub final_leg_nm: f64,
    pub final_speed_kn: [f64; 2],
    /// Per-minute Gaussian speed jitter, knots.
    pub speed_noise_kn: f64,
    pub drift_minutes: usize,
    pub drift_speed_kn: f64,
    pub cst_basis: CstBasis,
    /// CST minus its basis, minutes.
    pub cst_offset_mean_min: f64,
    pub cst_offset_std_min: f64,
    pub weather: WeatherRegime,
    pub duration_days: f64,
    /// Scenario start, epoch seconds.
    pub start_epoch: i64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            n_voyages: 300,
            pbg_id: "PBG-E".into(),
            pbg_center: GeoPoint::new(1.20, 103.95),
            arrival_radius_nm: 0.3,
            corridor_bearing_deg: 90.0,
            corridor_spread_deg: 25.0,
            start_distance_nm: [9.0, 14.0],
            endpoint_sigma_nm: [0.4, 0.4],
            reference_offset_nm: 2.0,
            cruise_speed_kn: [10.0, 18.0],
            approach_start_nm: [2.0, 5.0],
            approach_speed_kn: [6.0, 9.0],
            final_leg_nm: 0.5,
            final_speed_kn: [4.0, 6.0],
            speed_noise_kn: 0.5,
            drift_minutes: 15,
            drift_speed_kn: 0.0,
            cst_basis: CstBasis::Schedule,
            cst_offset_mean_min: 0.0,
            cst_offset_std_min: 2.0,
            weather: WeatherRegime::default(),
            duration_days: 14.0,
            start_epoch: 1_700_000_000 / 3600 * 3600,
        }
    }
}

fn check_range(name: &str, r: [f64; 2], min: f64) -> Result<(), SynthError> {
    if !(r[0].is_finite() && r[1].is_finite() && r[0] >= min && r[0] <= r[1]) {
        return Err(SynthError::InvalidConfig(format!("{name} = {r:?}")));
    }
    Ok(())
}

fn check_nonneg(name: &str, v: f64) -> Result<(), SynthError> {
    if !(v.is_finite() && v >= 0.0) {
        return Err(SynthError::InvalidConfig(format!("{name} = {v}")));
    }
    Ok(())
}

impl ScenarioConfig {
    pub fn pbg_reference(&self) -> GeoPoint {
        self.pbg_center
            .destination(self.corridor_bearing_deg + 180.0, self.reference_offset_nm)
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.n_voyages == 0 {
            return Err(SynthError::InvalidConfig("n_voyages must be at least 1".into()));
        }
        if !self.pbg_center.is_valid() {
            return Err(SynthError::InvalidConfig("pbg_center out of range".into()));
        }
        check_nonneg("arrival_radius_nm", self.arrival_radius_nm)?;
        check_nonneg("corridor_spread_deg", self.corridor_spread_deg)?;
        check_range("start_distance_nm", self.start_distance_nm, 0.0)?;
        check_nonneg("endpoint_sigma_nm[0]", self.endpoint_sigma_nm[0])?;
        check_nonneg("endpoint_sigma_nm[1]", self.endpoint_sigma_nm[1])?;
        check_nonneg("reference_offset_nm", self.reference_offset_nm)?;
        check_range("cruise_speed_kn", self.cruise_speed_kn, f64::MIN_POSITIVE)?;
        check_range("approach_start_nm", self.approach_start_nm, 0.0)?;
        check_range("approach_speed_kn", self.approach_speed_kn, f64::MIN_POSITIVE)?;
        check_range("final_speed_kn", self.final_speed_kn, f64::MIN_POSITIVE)?;
        check_nonneg("final_leg_nm", self.final_leg_nm)?;
        check_nonneg("speed_noise_kn", self.speed_noise_kn)?;
        check_nonneg("drift_speed_kn", self.drift_speed_kn)?;
        check_nonneg("cst_offset_std_min", self.cst_offset_std_min)?;
        if !self.cst_offset_mean_min.is_finite() {
            return Err(SynthError::InvalidConfig("cst_offset_mean_min".into()));
        }
        check_nonneg("duration_days", self.duration_days)?;
        if self.start_distance_nm[0] <= self.arrival_radius_nm {
            return Err(SynthError::InvalidConfig(
                "voyages must start outside the arrival disc".into(),
            ));
        }
        let w = &self.weather;
        for (name, v) in [
            ("rain_events_per_day", w.rain_events_per_day),
            ("wind_events_per_day", w.wind_events_per_day),
            ("wind_dir_step_deg", w.wind_dir_step_deg),
            ("wind_threshold_kn", w.wind_threshold_kn),
            ("rain_threshold_mm", w.rain_threshold_mm),
        ] {
            check_nonneg(name, v)?;
        }
        for (name, v) in [("rain_mean_hours", w.rain_mean_hours), ("wind_mean_hours", w.wind_mean_hours)] {
            if !(v.is_finite() && v >= 1.0) {
                return Err(SynthError::InvalidConfig(format!("{name} = {v} (must be ≥ 1 h)")));
            }
        }
        if !w.prevailing_wind_dir_deg.is_finite() {
            return Err(SynthError::InvalidConfig("prevailing_wind_dir_deg".into()));
        }
        for (name, v) in [
            ("wind_slowdown", w.wind_slowdown),
            ("rain_slowdown", w.rain_slowdown),
            ("wind_dir_reversion", w.wind_dir_reversion),
        ] {
            if !(0.0..1.0).contains(&v) {
                return Err(SynthError::InvalidConfig(format!("{name} = {v}")));
            }
        }
        if !(0.0..=1.0).contains(&w.cruise_exposure) {
            return Err(SynthError::InvalidConfig(format!("cruise_exposure = {}", w.cruise_exposure)));
        }
        check_range("rain_mm", w.rain_mm, 0.0)?;
        check_range("calm_wind_kn", w.calm_wind_kn, 0.0)?;
        check_range("strong_wind_kn", w.strong_wind_kn, 0.0)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthArrival {
    pub start_timestamp: i64,
    /// Epoch seconds, rounded to the nearest second.
    pub arrival_timestamp: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub ais: Vec<AisRecord>,
    /// `(voyage_id, cst)` in voyage order.
    pub bookings: Vec<(String, i64)>,
    pub weather: Vec<WeatherRecord>,
    pub truth: BTreeMap<String, TruthArrival>,
}

fn uniform<R: Rng>(rng: &mut R, r: [f64; 2]) -> f64 {
    if r[1] > r[0] {
        rng.random_range(r[0]..r[1])
    } else {
        r[0]
    }
}

fn gaussian<R: Rng>(rng: &mut R, mean: f64, std: f64) -> f64 {
    if std > 0.0 {
        Normal::new(mean, std).expect("finite std").sample(rng)
    } else {
        mean
    }
}

/// Hourly weather: independent two-state chains for rain and wind, with a
/// mean-reverting wind direction.
fn generate_weather(cfg: &ScenarioConfig, rng: &mut ChaCha8Rng, from: i64, to: i64) -> Vec<WeatherRecord> {
    let w = &cfg.weather;
    let p_rain_on = (w.rain_events_per_day / 24.0).min(1.0);
    let p_rain_off = 1.0 / w.rain_mean_hours;
    let p_wind_on = (w.wind_events_per_day / 24.0).min(1.0);
    let p_wind_off = 1.0 / w.wind_mean_hours;
    let mut raining = false;
    let mut windy = false;
    let mut dir = w.prevailing_wind_dir_deg;
    let mut out = Vec::new();
    let mut t = from;
    while t <= to {
        raining = if raining {
            rng.random::<f64>() >= p_rain_off
        } else {
            rng.random::<f64>() < p_rain_on
        };
        windy = if windy {
            rng.random::<f64>() >= p_wind_off
        } else {
            rng.random::<f64>() < p_wind_on
        };
        let rainfall = if raining { uniform(rng, w.rain_mm) } else { 0.0 };
        let wind_speed = uniform(rng, if windy { w.strong_wind_kn } else { w.calm_wind_kn });
        let gap = normalize_degrees(dir - w.prevailing_wind_dir_deg + 180.0) - 180.0;
        dir = normalize_degrees(dir - w.wind_dir_reversion * gap + gaussian(rng, 0.0, w.wind_dir_step_deg));
        out.push(WeatherRecord {
            timestamp: t,
            rainfall,
            wind_speed,
            wind_dir: dir,
        });
        t += 3600;
    }
    out
}

/// Speed multiplier from the report in force at `t` (last one at or before),
/// with the slowdowns scaled by `exposure`.
fn weather_factor(cfg: &ScenarioConfig, weather: &[WeatherRecord], t: i64, exposure: f64) -> f64 {
    let i = weather.partition_point(|w| w.timestamp <= t);
    let Some(w) = i.checked_sub(1).map(|i| &weather[i]) else {
        return 1.0;
    };
    let r = &cfg.weather;
    let mut f = 1.0;
    if w.wind_speed >= r.wind_threshold_kn {
        f *= 1.0 - exposure * r.wind_slowdown;
    }
    if w.rainfall >= r.rain_threshold_mm {
        f *= 1.0 - exposure * r.rain_slowdown;
    }
    f
}

/// Along-track distance (nm) from `start` on initial bearing `bearing` at
/// which the great circle first comes within `radius_nm` of `center`, or
/// `None` if it never does ahead of the start.
pub fn disc_entry_distance_nm(start: &GeoPoint, bearing: f64, center: &GeoPoint, radius_nm: f64) -> Option<f64> {
    let to_rad = KM_PER_NM / EARTH_RADIUS_KM;
    let d13 = start.distance_nm(center) * to_rad;
    let r = radius_nm * to_rad;
    if d13 <= r {
        return Some(0.0);
    }
    let dtheta = (start.bearing_to(center) - bearing).to_radians();
    let xt = (d13.sin() * dtheta.sin()).asin();
    if xt.abs() > r + 1e-12 {
        return None;
    }
    let at = (d13.cos() / xt.cos()).clamp(-1.0, 1.0).acos() * dtheta.cos().signum();
    let half_chord = (r.cos() / xt.cos()).clamp(-1.0, 1.0).acos();
    let entry = at - half_chord;
    (entry >= 0.0).then(|| entry / to_rad)
}

struct Voyage {
    records: Vec<AisRecord>,
    /// Disc entry, or `None` when the voyage stops short of the disc.
    arrival: Option<f64>,
    /// When the voyage reaches the disc, or else its stop point.
    reached: f64,
    scheduled: f64,
}

/// Hours to cover the first `upto` nm of a `dist` nm voyage at the base
/// speed of each leg.
fn scheduled_hours(cfg: &ScenarioConfig, dist: f64, upto: f64, speeds: [f64; 3], approach_at: f64) -> f64 {
    let s1 = (dist - approach_at).max(0.0);
    let s2 = (dist - cfg.final_leg_nm).max(s1);
    let part = |a: f64, b: f64| (upto.min(b) - a).max(0.0);
    part(0.0, s1) / speeds[0] + part(s1, s2) / speeds[1] + part(s2, f64::INFINITY) / speeds[2]
}

fn simulate_voyage(
    cfg: &ScenarioConfig,
    rng: &mut ChaCha8Rng,
    id: &str,
    t0: i64,
    weather: &[WeatherRecord],
) -> Result<Voyage, SynthError> {
    let c = cfg.pbg_center;
    let from = cfg.corridor_bearing_deg + uniform(rng, [-cfg.corridor_spread_deg, cfg.corridor_spread_deg]);
    let travel = normalize_degrees(from + 180.0);
    let along = gaussian(rng, 0.0, cfg.endpoint_sigma_nm[0]);
    let cross = gaussian(rng, 0.0, cfg.endpoint_sigma_nm[1]);
    let endpoint = c.destination(travel, along).destination(travel + 90.0, cross);
    let dist = uniform(rng, cfg.start_distance_nm);
    let start = endpoint.destination(from, dist);
    let heading = start.bearing_to(&endpoint);
    let cruise = uniform(rng, cfg.cruise_speed_kn);
    let approach_at = uniform(rng, cfg.approach_start_nm);
    let approach = uniform(rng, cfg.approach_speed_kn);
    let final_speed = uniform(rng, cfg.final_speed_kn);
    // the slack absorbs rounding when the endpoint sits on the rim
    let entry = disc_entry_distance_nm(&start, heading, &c, cfg.arrival_radius_nm)
        .filter(|&e| e <= dist + 1e-9)
        .map(|e| e.min(dist));
    let target = entry.unwrap_or(dist);

    let mut records = Vec::new();
    let mut travelled = 0.0;
    let mut reached = None;
    let mut drift_left = cfg.drift_minutes;
    let mut k: i64 = 0;
    loop {
        let t = t0 + 60 * k;
        let remaining = dist - travelled;
        let moving = remaining > 0.0;
        let speed = if moving {
            let (base, exposure) = if remaining > approach_at {
                (cruise, cfg.weather.cruise_exposure)
            } else if remaining > cfg.final_leg_nm {
                (approach, 1.0)
            } else {
                (final_speed, 1.0)
            };
            let v = base * weather_factor(cfg, weather, t, exposure) + gaussian(rng, 0.0, cfg.speed_noise_kn);
            v.max(0.5)
        } else {
            cfg.drift_speed_kn
        };
        let pos = start.destination(heading, travelled);
        let ahead = start.destination(heading, travelled + 1.0);
        records.push(AisRecord {
            voyage_id: id.to_string(),
            timestamp: t,
            lat: pos.lat,
            lon: pos.lon,
            sog: speed,
            cog: pos.bearing_to(&ahead),
        });
        if !moving {
            if drift_left == 0 {
                break;
            }
            drift_left -= 1;
        }
        let step = speed / 60.0;
        if reached.is_none() && step > 0.0 && travelled + step >= target {
            reached = Some(t as f64 + 60.0 * (target - travelled) / step);
        }
        travelled += step;
        k += 1;
    }
    let reached = reached.expect("moving steps cover the whole track");
    Ok(Voyage {
        records,
        arrival: entry.map(|_| reached),
        reached,
        scheduled: t0 as f64 + 3600.0 * scheduled_hours(cfg, dist, target, [cruise, approach, final_speed], approach_at),
    })
}

pub fn generate_scenario(cfg: &ScenarioConfig) -> Result<Scenario, SynthError> {
    cfg.validate()?;
    let span = (cfg.duration_days * 86_400.0) as i64;
    let mut wrng = ChaCha8Rng::seed_from_u64(cfg.seed);
    wrng.set_stream(u64::MAX);
    // cover the longest plausible voyage past the last start
    let weather = generate_weather(cfg, &mut wrng, cfg.start_epoch - 3 * 3600, cfg.start_epoch + span + 86_400);

    let mut ais = Vec::new();
    let mut bookings = Vec::with_capacity(cfg.n_voyages);
    let mut truth = BTreeMap::new();
    let width = cfg.n_voyages.to_string().len().max(4);
    for i in 0..cfg.n_voyages {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(i as u64);
        let id = format!("V{i:0width$}");
        let t0 = cfg.start_epoch + if span > 0 { rng.random_range(0..=span / 60) * 60 } else { 0 };
        let voyage = simulate_voyage(cfg, &mut rng, &id, t0, &weather)?;
        let offset = gaussian(&mut rng, cfg.cst_offset_mean_min, cfg.cst_offset_std_min);
        let basis = match cfg.cst_basis {
            CstBasis::Truth => voyage.reached,
            CstBasis::Schedule => voyage.scheduled,
        };
        bookings.push((id.clone(), (basis + 60.0 * offset).round() as i64));
        if let Some(arrival) = voyage.arrival {
            truth.insert(
                id,
                TruthArrival {
                    start_timestamp: t0,
                    arrival_timestamp: arrival.round() as i64,
                },
            );
        }
        ais.extend(voyage.records);
    }
    Ok(Scenario {
        ais,
        bookings,
        weather,
        truth,
    })
}

/// Minutes until the true arrival at time `t`; `true` flags a time at or
/// after arrival, where the result is clamped to zero.
pub fn truth_eta(truth: &BTreeMap<String, TruthArrival>, voyage_id: &str, t: i64) -> Result<(f64, bool), SynthError> {
    let a = truth
        .get(voyage_id)
        .ok_or_else(|| SynthError::UnknownVoyage(voyage_id.to_string()))?;
    let minutes = (a.arrival_timestamp - t) as f64 / 60.0;
    Ok((minutes.max(0.0), minutes <= 0.0))
}

pub const AIS_FILE: &str = "ais.csv";
pub const BOOKINGS_FILE: &str = "bookings.csv";
pub const WEATHER_FILE: &str = "weather.csv";
pub const TRUTH_FILE: &str = "truth.csv";

impl Scenario {
    pub fn write_ais<W: Write>(&self, w: W) -> Result<(), SynthError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(AIS_HEADER)?;
        for r in &self.ais {
            out.write_record([
                r.voyage_id.clone(),
                r.timestamp.to_string(),
                r.lat.to_string(),
                r.lon.to_string(),
                r.sog.to_string(),
                r.cog.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_bookings<W: Write>(&self, w: W) -> Result<(), SynthError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(BOOKING_HEADER)?;
        for (id, cst) in &self.bookings {
            out.write_record([id.clone(), cst.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_weather<W: Write>(&self, w: W) -> Result<(), SynthError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(WEATHER_HEADER)?;
        for r in &self.weather {
            out.write_record([
                r.timestamp.to_string(),
                r.rainfall.to_string(),
                r.wind_speed.to_string(),
                r.wind_dir.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_truth<W: Write>(&self, w: W) -> Result<(), SynthError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(TRUTH_HEADER)?;
        for (id, a) in &self.truth {
            out.write_record([id.clone(), a.arrival_timestamp.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }

    /// Writes the four CSV files into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<(), SynthError> {
        fs::create_dir_all(dir)?;
        self.write_ais(fs::File::create(dir.join(AIS_FILE))?)?;
        self.write_bookings(fs::File::create(dir.join(BOOKINGS_FILE))?)?;
        self.write_weather(fs::File::create(dir.join(WEATHER_FILE))?)?;
        self.write_truth(fs::File::create(dir.join(TRUTH_FILE))?)?;
        Ok(())
    }
}

pub fn read_truth<R: std::io::Read>(r: R) -> Result<BTreeMap<String, i64>, SynthError> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut out = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let id = rec.get(0).unwrap_or_default().to_string();
        let t = rec
            .get(1)
            .and_then(|s| s.parse::<i64>().ok())
            .ok_or_else(|| SynthError::InvalidConfig(format!("bad truth row for {id}")))?;
        out.insert(id, t);
    }
    Ok(out)
}
