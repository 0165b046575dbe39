//! AIS, booking and weather ingestion, plus trajectory assembly on a
//! uniform one-minute grid.
//!
//! Input files are plain CSV with fixed headers:
//!
//! | file     | header                                              |
//! |----------|-----------------------------------------------------|
//! | AIS      | `voyage_id,timestamp,lat,lon,sog,cog`               |
//! | bookings | `voyage_id,cst`                                     |
//! | weather  | `timestamp,rainfall_mm,wind_speed_kn,wind_dir_deg`  |
//!
//! Timestamps are integer UTC epoch seconds. Rows that fail to parse or
//! violate a range constraint are reported with their 1-based line number
//! rather than skipped.

use std::collections::{BTreeMap, HashMap};
use std::io::Read;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{lerp_angle, normalize_degrees, GeoPoint};

/// Resampling step in seconds.
pub const GRID_STEP_S: i64 = 60;
/// A gap longer than this splits a voyage into separate trajectories.
pub const MAX_GAP_S: i64 = 30 * 60;

pub const AIS_HEADER: [&str; 6] = ["voyage_id", "timestamp", "lat", "lon", "sog", "cog"];
pub const BOOKING_HEADER: [&str; 2] = ["voyage_id", "cst"];
pub const WEATHER_HEADER: [&str; 4] = ["timestamp", "rainfall_mm", "wind_speed_kn", "wind_dir_deg"];

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("line {line}: malformed row: {reason}")]
    MalformedRow { line: u64, reason: String },
    #[error("line {line}: {field} = {value} out of range")]
    RangeViolation {
        line: u64,
        field: &'static str,
        value: f64,
    },
    #[error("unexpected header {found:?}, expected {expected:?}")]
    BadHeader {
        found: Vec<String>,
        expected: Vec<&'static str>,
    },
    #[error("voyage {voyage_id}: need at least 2 samples, got {count}")]
    TooFewSamples { voyage_id: String, count: usize },
    #[error("voyage {voyage_id}: timestamp {timestamp} does not increase")]
    NonMonotonicTime { voyage_id: String, timestamp: i64 },
    #[error("trajectory has no samples")]
    EmptyTrajectory,
    #[error("voyage {0} has more than one booking")]
    DuplicateBooking(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AisRecord {
    pub voyage_id: String,
    pub timestamp: i64,
    pub lat: f64,
    pub lon: f64,
    /// Speed over ground, knots.
    pub sog: f64,
    /// Course over ground, degrees in [0, 360).
    pub cog: f64,
}

impl AisRecord {
    pub fn position(&self) -> GeoPoint {
        GeoPoint::new(self.lat, self.lon)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PilotageBooking {
    pub cst: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeatherRecord {
    pub timestamp: i64,
    pub rainfall: f64,
    pub wind_speed: f64,
    pub wind_dir: f64,
}

/// A voyage resampled onto a 60 s grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub voyage_id: String,
    /// Index of this piece when a voyage was split at a long gap.
    pub segment: u32,
    pub pbg_id: String,
    pub samples: Vec<AisRecord>,
}

impl Trajectory {
    /// Wraps already-gridded samples, checking the grid invariants.
    pub fn new(
        voyage_id: impl Into<String>,
        pbg_id: impl Into<String>,
        samples: Vec<AisRecord>,
    ) -> Result<Self, IngestError> {
        let voyage_id = voyage_id.into();
        if samples.len() < 2 {
            return Err(IngestError::TooFewSamples {
                voyage_id,
                count: samples.len(),
            });
        }
        for w in samples.windows(2) {
            if w[1].timestamp - w[0].timestamp != GRID_STEP_S {
                return Err(IngestError::NonMonotonicTime {
                    voyage_id,
                    timestamp: w[1].timestamp,
                });
            }
        }
        Ok(Self {
            voyage_id,
            segment: 0,
            pbg_id: pbg_id.into(),
            samples,
        })
    }

    pub fn start_time(&self) -> i64 {
        self.samples.first().map_or(0, |s| s.timestamp)
    }

    pub fn end_time(&self) -> i64 {
        self.samples.last().map_or(0, |s| s.timestamp)
    }
}

fn parse_f64(field: &str, line: u64, name: &str) -> Result<f64, IngestError> {
    let v: f64 = field.trim().parse().map_err(|_| IngestError::MalformedRow {
        line,
        reason: format!("{name}: cannot parse {field:?} as a number"),
    })?;
    if !v.is_finite() {
        return Err(IngestError::MalformedRow {
            line,
            reason: format!("{name}: non-finite value"),
        });
    }
    Ok(v)
}

fn parse_i64(field: &str, line: u64, name: &str) -> Result<i64, IngestError> {
    let t = field.trim();
    if let Ok(v) = t.parse::<i64>() {
        return Ok(v);
    }
    // fractional seconds are accepted and truncated
    let v = parse_f64(t, line, name)?;
    Ok(v.trunc() as i64)
}

/// Accepts [0, 360], folding 360 onto 0.
fn parse_bearing(field: &str, line: u64, name: &'static str) -> Result<f64, IngestError> {
    let v = parse_f64(field, line, name)?;
    if !(0.0..=360.0).contains(&v) {
        return Err(IngestError::RangeViolation {
            line,
            field: name,
            value: v,
        });
    }
    Ok(normalize_degrees(v))
}

fn check_nonneg(v: f64, line: u64, field: &'static str) -> Result<f64, IngestError> {
    if v < 0.0 {
        Err(IngestError::RangeViolation {
            line,
            field,
            value: v,
        })
    } else {
        Ok(v)
    }
}

fn expect_fields<'a>(fields: &'a [&'a str], n: usize, line: u64) -> Result<(), IngestError> {
    if fields.len() != n {
        return Err(IngestError::MalformedRow {
            line,
            reason: format!("expected {n} fields, found {}", fields.len()),
        });
    }
    Ok(())
}

/// Parses one AIS data row (no header). `line` is used for diagnostics.
pub fn parse_ais_row(fields: &[&str], line: u64) -> Result<AisRecord, IngestError> {
    expect_fields(fields, 6, line)?;
    let voyage_id = fields[0].trim();
    if voyage_id.is_empty() {
        return Err(IngestError::MalformedRow {
            line,
            reason: "empty voyage_id".into(),
        });
    }
    let timestamp = parse_i64(fields[1], line, "timestamp")?;
    let lat = parse_f64(fields[2], line, "lat")?;
    if !(-90.0..=90.0).contains(&lat) {
        return Err(IngestError::RangeViolation {
            line,
            field: "lat",
            value: lat,
        });
    }
    let lon = parse_f64(fields[3], line, "lon")?;
    if !(-180.0..=180.0).contains(&lon) {
        return Err(IngestError::RangeViolation {
            line,
            field: "lon",
            value: lon,
        });
    }
    let sog = check_nonneg(parse_f64(fields[4], line, "sog")?, line, "sog")?;
    let cog = parse_bearing(fields[5], line, "cog")?;
    Ok(AisRecord {
        voyage_id: voyage_id.to_string(),
        timestamp,
        lat,
        lon,
        sog,
        cog,
    })
}

fn read_rows<R: Read>(
    reader: R,
    header: &[&'static str],
    mut each: impl FnMut(&[&str], u64) -> Result<(), IngestError>,
) -> Result<(), IngestError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let found: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if found.len() != header.len() || found.iter().zip(header).any(|(a, b)| a != b) {
        return Err(IngestError::BadHeader {
            found,
            expected: header.to_vec(),
        });
    }
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let fields: Vec<&str> = row.iter().collect();
        each(&fields, line)?;
    }
    Ok(())
}

pub fn parse_ais<R: Read>(reader: R) -> Result<Vec<AisRecord>, IngestError> {
    let mut out = Vec::new();
    read_rows(reader, &AIS_HEADER, |f, line| {
        out.push(parse_ais_row(f, line)?);
        Ok(())
    })?;
    Ok(out)
}

pub fn parse_bookings<R: Read>(reader: R) -> Result<HashMap<String, PilotageBooking>, IngestError> {
    let mut out = HashMap::new();
    read_rows(reader, &BOOKING_HEADER, |f, line| {
        expect_fields(f, 2, line)?;
        let id = f[0].trim().to_string();
        let cst = parse_i64(f[1], line, "cst")?;
        if out.insert(id.clone(), PilotageBooking { cst }).is_some() {
            return Err(IngestError::DuplicateBooking(id));
        }
        Ok(())
    })?;
    Ok(out)
}

/// Parses weather rows and returns them sorted by timestamp.
pub fn parse_weather<R: Read>(reader: R) -> Result<Vec<WeatherRecord>, IngestError> {
    let mut out = Vec::new();
    read_rows(reader, &WEATHER_HEADER, |f, line| {
        expect_fields(f, 4, line)?;
        let timestamp = parse_i64(f[0], line, "timestamp")?;
        let rainfall = check_nonneg(parse_f64(f[1], line, "rainfall_mm")?, line, "rainfall_mm")?;
        let wind_speed = check_nonneg(
            parse_f64(f[2], line, "wind_speed_kn")?,
            line,
            "wind_speed_kn",
        )?;
        let wind_dir = parse_bearing(f[3], line, "wind_dir_deg")?;
        out.push(WeatherRecord {
            timestamp,
            rainfall,
            wind_speed,
            wind_dir,
        });
        Ok(())
    })?;
    out.sort_by_key(|w| w.timestamp);
    Ok(out)
}

/// Groups records by voyage, each group sorted by timestamp.
pub fn group_by_voyage(records: Vec<AisRecord>) -> BTreeMap<String, Vec<AisRecord>> {
    let mut groups: BTreeMap<String, Vec<AisRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(r.voyage_id.clone()).or_default().push(r);
    }
    for g in groups.values_mut() {
        g.sort_by_key(|r| r.timestamp);
    }
    groups
}

/// Resamples a time-ordered record sequence onto a 60 s grid starting at
/// the first timestamp. Positions and speed are linearly interpolated,
/// course along the shorter arc.
pub fn resample_trajectory(records: &[AisRecord], pbg_id: &str) -> Result<Trajectory, IngestError> {
    let voyage_id = records
        .first()
        .map(|r| r.voyage_id.clone())
        .unwrap_or_default();
    if records.len() < 2 {
        return Err(IngestError::TooFewSamples {
            voyage_id,
            count: records.len(),
        });
    }
    for w in records.windows(2) {
        if w[1].timestamp <= w[0].timestamp {
            return Err(IngestError::NonMonotonicTime {
                voyage_id,
                timestamp: w[1].timestamp,
            });
        }
    }

    let t0 = records[0].timestamp;
    let t_end = records[records.len() - 1].timestamp;
    let mut samples = Vec::with_capacity(((t_end - t0) / GRID_STEP_S + 1) as usize);
    let mut seg = 0;
    let mut t = t0;
    while t <= t_end {
        while records[seg + 1].timestamp < t {
            seg += 1;
        }
        let (a, b) = (&records[seg], &records[seg + 1]);
        let frac = (t - a.timestamp) as f64 / (b.timestamp - a.timestamp) as f64;
        let sample = if frac == 0.0 {
            AisRecord {
                timestamp: t,
                ..a.clone()
            }
        } else if frac == 1.0 {
            AisRecord {
                timestamp: t,
                ..b.clone()
            }
        } else {
            AisRecord {
                voyage_id: voyage_id.clone(),
                timestamp: t,
                lat: a.lat + (b.lat - a.lat) * frac,
                lon: a.lon + (b.lon - a.lon) * frac,
                sog: a.sog + (b.sog - a.sog) * frac,
                cog: lerp_angle(a.cog, b.cog, frac),
            }
        };
        samples.push(sample);
        t += GRID_STEP_S;
    }
    Trajectory::new(voyage_id, pbg_id, samples)
}

/// Splits one voyage's sorted records at gaps longer than [`MAX_GAP_S`].
pub fn split_at_gaps(records: &[AisRecord]) -> Vec<&[AisRecord]> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..records.len() {
        if records[i].timestamp - records[i - 1].timestamp > MAX_GAP_S {
            out.push(&records[start..i]);
            start = i;
        }
    }
    if start < records.len() {
        out.push(&records[start..]);
    }
    out
}

/// Builds gridded trajectories for every voyage. Pieces too short to
/// resample are returned in the second vector rather than dropped silently.
pub fn assemble_trajectories(
    records: Vec<AisRecord>,
    pbg_id: &str,
) -> Result<(Vec<Trajectory>, Vec<IngestError>), IngestError> {
    let mut trajs = Vec::new();
    let mut skipped = Vec::new();
    for (_, group) in group_by_voyage(records) {
        for (segment, piece) in split_at_gaps(&group).into_iter().enumerate() {
            match resample_trajectory(piece, pbg_id) {
                Ok(mut t) => {
                    t.segment = segment as u32;
                    trajs.push(t);
                }
                Err(e @ IngestError::TooFewSamples { .. }) => skipped.push(e),
                Err(e) => return Err(e),
            }
        }
    }
    Ok((trajs, skipped))
}

/// The sample nearest to `pbg_ref` by great-circle distance; earliest wins ties.
pub fn closest_sample<'a>(traj: &'a Trajectory, pbg_ref: &GeoPoint) -> Result<&'a AisRecord, IngestError> {
    let mut best: Option<(&AisRecord, f64)> = None;
    for s in &traj.samples {
        let d = s.position().distance_km(pbg_ref);
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((s, d));
        }
    }
    best.map(|(s, _)| s).ok_or(IngestError::EmptyTrajectory)
}

pub fn closest_point_to_pbg(traj: &Trajectory, pbg_ref: &GeoPoint) -> Result<GeoPoint, IngestError> {
    closest_sample(traj, pbg_ref).map(AisRecord::position)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, t: i64, lat: f64, lon: f64, sog: f64, cog: f64) -> AisRecord {
        AisRecord {
            voyage_id: id.into(),
            timestamp: t,
            lat,
            lon,
            sog,
            cog,
        }
    }

    fn row(s: &str) -> Result<AisRecord, IngestError> {
        let fields: Vec<&str> = s.split(',').collect();
        parse_ais_row(&fields, 2)
    }

    #[test]
    fn parses_plain_row() {
        let r = row("V1,1000,1.20,103.80,12.0,90.0").unwrap();
        assert_eq!(r, rec("V1", 1000, 1.20, 103.80, 12.0, 90.0));
    }

    #[test]
    fn latitude_out_of_range() {
        assert!(matches!(
            row("V1,1000,95.0,103.80,12.0,90.0"),
            Err(IngestError::RangeViolation { field: "lat", .. })
        ));
    }

    #[test]
    fn cog_360_folds_to_zero() {
        assert_eq!(row("V1,1000,1.2,103.8,12.0,360.0").unwrap().cog, 0.0);
        assert!(matches!(
            row("V1,1000,1.2,103.8,12.0,361.0"),
            Err(IngestError::RangeViolation { field: "cog", .. })
        ));
    }

    #[test]
    fn malformed_number_reports_line() {
        let csv = "voyage_id,timestamp,lat,lon,sog,cog\nV1,0,1.0,104.0,10,0\nV1,60,abc,104.0,10,0\n";
        match parse_ais(csv.as_bytes()) {
            Err(IngestError::MalformedRow { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn wrong_header_rejected() {
        let csv = "id,timestamp,lat,lon,sog,cog\n";
        assert!(matches!(parse_ais(csv.as_bytes()), Err(IngestError::BadHeader { .. })));
    }

    #[test]
    fn duplicate_booking_rejected() {
        let csv = "voyage_id,cst\nA,100\nA,200\n";
        assert!(matches!(
            parse_bookings(csv.as_bytes()),
            Err(IngestError::DuplicateBooking(_))
        ));
    }

    #[test]
    fn weather_sorted_and_validated() {
        let csv = "timestamp,rainfall_mm,wind_speed_kn,wind_dir_deg\n3600,0,10,360\n0,1.5,5,90\n";
        let w = parse_weather(csv.as_bytes()).unwrap();
        assert_eq!(w[0].timestamp, 0);
        assert_eq!(w[1].wind_dir, 0.0);
        let bad = "timestamp,rainfall_mm,wind_speed_kn,wind_dir_deg\n0,-1,5,90\n";
        assert!(parse_weather(bad.as_bytes()).is_err());
    }

    #[test]
    fn linear_midpoint() {
        let recs = [rec("V", 0, 1.0, 104.0, 10.0, 90.0), rec("V", 120, 1.2, 104.0, 12.0, 90.0)];
        let t = resample_trajectory(&recs, "P").unwrap();
        assert_eq!(t.samples.len(), 3);
        assert_eq!(t.samples[1].timestamp, 60);
        assert!((t.samples[1].lat - 1.1).abs() < 1e-12);
        assert!((t.samples[1].sog - 11.0).abs() < 1e-12);
    }

    #[test]
    fn course_interpolates_across_north() {
        let recs = [rec("V", 0, 1.0, 104.0, 10.0, 350.0), rec("V", 120, 1.0, 104.0, 10.0, 10.0)];
        let t = resample_trajectory(&recs, "P").unwrap();
        let c = t.samples[1].cog;
        assert!(c.min(360.0 - c) < 1e-9, "cog {c}");
    }

    #[test]
    fn single_record_is_too_few() {
        let recs = [rec("V", 0, 1.0, 104.0, 10.0, 0.0)];
        assert!(matches!(
            resample_trajectory(&recs, "P"),
            Err(IngestError::TooFewSamples { count: 1, .. })
        ));
    }

    #[test]
    fn non_monotonic_rejected() {
        let recs = [rec("V", 60, 1.0, 104.0, 10.0, 0.0), rec("V", 60, 1.0, 104.0, 10.0, 0.0)];
        assert!(matches!(
            resample_trajectory(&recs, "P"),
            Err(IngestError::NonMonotonicTime { .. })
        ));
    }

    #[test]
    fn long_gap_splits_voyage() {
        let recs = vec![
            rec("V", 0, 1.0, 104.0, 10.0, 0.0),
            rec("V", 60, 1.0, 104.0, 10.0, 0.0),
            rec("V", 60 + MAX_GAP_S + 60, 1.0, 104.0, 10.0, 0.0),
            rec("V", 60 + MAX_GAP_S + 120, 1.0, 104.0, 10.0, 0.0),
        ];
        let (trajs, skipped) = assemble_trajectories(recs, "P").unwrap();
        assert_eq!(trajs.len(), 2);
        assert!(skipped.is_empty());
        assert_eq!(trajs[1].segment, 1);
    }

    fn line_traj(lats: &[f64]) -> Trajectory {
        let samples = lats
            .iter()
            .enumerate()
            .map(|(i, &lat)| rec("V", i as i64 * 60, lat, 104.0, 10.0, 0.0))
            .collect();
        Trajectory::new("V", "P", samples).unwrap()
    }

    #[test]
    fn closest_is_exact_hit() {
        let t = line_traj(&[1.0, 1.1, 1.2, 1.3]);
        let p = closest_point_to_pbg(&t, &GeoPoint::new(1.2, 104.0)).unwrap();
        assert_eq!(p, GeoPoint::new(1.2, 104.0));
    }

    #[test]
    fn closest_is_argmin() {
        // distances of roughly 5, 1 and 3 km from the reference
        let km = 1.0 / 111.2;
        let t = line_traj(&[1.0 + 5.0 * km, 1.0 + km, 1.0 + 3.0 * km]);
        let s = closest_sample(&t, &GeoPoint::new(1.0, 104.0)).unwrap();
        assert_eq!(s.timestamp, 60);
    }

    #[test]
    fn closest_tie_goes_to_earlier_sample() {
        // mirror images across the reference meridian
        let samples = vec![rec("V", 0, 1.0, 103.5, 1.0, 0.0), rec("V", 60, 1.0, 104.5, 1.0, 0.0)];
        let t = Trajectory::new("V", "P", samples).unwrap();
        let pbg = GeoPoint::new(1.0, 104.0);
        assert_eq!(
            t.samples[0].position().distance_km(&pbg),
            t.samples[1].position().distance_km(&pbg)
        );
        assert_eq!(closest_sample(&t, &pbg).unwrap().timestamp, 0);
    }
}
