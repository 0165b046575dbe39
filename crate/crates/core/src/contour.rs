//! Arrival contour extraction.
//!
//! The closest-approach points of historical voyages are scored with a
//! product-Gaussian kernel density estimate, the points above the k-th
//! percentile of their own densities are kept, DBSCAN isolates the main
//! cluster among them, and the convex hull of that cluster becomes the
//! polygon whose entry marks a vessel as arrived.
//!
//! All geometry is done in raw degree space with `x = lon`, `y = lat`.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::io::Write;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::geo::GeoPoint;
use crate::ingest::Trajectory;

/// Points within this many degrees of an edge count as on the boundary.
pub const BOUNDARY_TOL_DEG: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ContourError {
    #[error("empty point set")]
    EmptyPointSet,
    #[error("empty input")]
    EmptyInput,
    #[error("percentile {0} outside (0, 100)")]
    BadPercentile(f64),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("every point was labelled noise")]
    NoClusterFound,
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
    #[error("malformed contour file: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KdeConfig {
    /// Per-dimension bandwidth in degrees, `[lon, lat]`.
    pub bandwidth: [f64; 2],
}

impl KdeConfig {
    pub fn isotropic(h: f64) -> Self {
        Self { bandwidth: [h, h] }
    }

    pub fn validate(&self) -> Result<(), ContourError> {
        if self.bandwidth.iter().all(|h| h.is_finite() && *h > 0.0) {
            Ok(())
        } else {
            Err(ContourError::InvalidConfig(format!(
                "bandwidth {:?} must be positive",
                self.bandwidth
            )))
        }
    }
}

impl Default for KdeConfig {
    fn default() -> Self {
        Self::isotropic(0.001)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DbscanConfig {
    /// Neighbourhood radius, degrees.
    pub eps: f64,
    pub min_pts: usize,
}

impl DbscanConfig {
    pub fn validate(&self) -> Result<(), ContourError> {
        if !(self.eps.is_finite() && self.eps > 0.0) || self.min_pts < 1 {
            return Err(ContourError::InvalidConfig(format!(
                "dbscan eps {} / min_pts {}",
                self.eps, self.min_pts
            )));
        }
        Ok(())
    }
}

impl Default for DbscanConfig {
    fn default() -> Self {
        Self {
            eps: 0.005,
            min_pts: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensitySample {
    pub point: GeoPoint,
    /// Density per squared degree.
    pub density: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    Noise,
    Cluster(usize),
}

impl Label {
    pub fn cluster(self) -> Option<usize> {
        match self {
            Label::Cluster(c) => Some(c),
            Label::Noise => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrivalContour {
    pub pbg_id: String,
    /// Counter-clockwise vertices; the ring closes implicitly from the
    /// last vertex back to the first.
    pub polygon: Vec<GeoPoint>,
    pub kept_points: Vec<GeoPoint>,
    pub main_cluster_size: usize,
}

/// Everything produced along the way, for plotting and reports.
#[derive(Debug, Clone)]
pub struct ContourExtraction {
    pub contour: ArrivalContour,
    pub densities: Vec<DensitySample>,
    pub threshold: f64,
    pub labels: Vec<Label>,
    pub main_cluster: Vec<GeoPoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContourConfig {
    pub kde: KdeConfig,
    /// Percentile in (0, 100) that a point's density must strictly exceed.
    pub percentile: f64,
    pub dbscan: DbscanConfig,
}

impl Default for ContourConfig {
    fn default() -> Self {
        Self {
            kde: KdeConfig::default(),
            percentile: 75.0,
            dbscan: DbscanConfig::default(),
        }
    }
}

#[inline]
fn gaussian_product(u: f64, v: f64) -> f64 {
    (-(u * u + v * v) / 2.0).exp() / (2.0 * PI)
}

/// Product-Gaussian kernel density estimate at `query`.
pub fn mkde_density(points: &[GeoPoint], query: GeoPoint, cfg: &KdeConfig) -> Result<f64, ContourError> {
    if points.is_empty() {
        return Err(ContourError::EmptyPointSet);
    }
    cfg.validate()?;
    let [h1, h2] = cfg.bandwidth;
    let norm = 1.0 / (h1 * h2);
    let sum: f64 = points
        .iter()
        .map(|p| gaussian_product((query.lon - p.lon) / h1, (query.lat - p.lat) / h2))
        .sum();
    Ok(norm * sum / points.len() as f64)
}

/// Density of every point evaluated against the whole set.
pub fn self_densities(points: &[GeoPoint], cfg: &KdeConfig) -> Result<Vec<DensitySample>, ContourError> {
    points
        .iter()
        .map(|&p| {
            Ok(DensitySample {
                point: p,
                density: mkde_density(points, p, cfg)?,
            })
        })
        .collect()
}

/// Nearest-rank percentile: the smallest value with at least `k`% of the
/// sample at or below it.
pub fn nearest_rank_percentile(values: &[f64], k: f64) -> Result<f64, ContourError> {
    if values.is_empty() {
        return Err(ContourError::EmptyInput);
    }
    if !(k > 0.0 && k < 100.0) {
        return Err(ContourError::BadPercentile(k));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((k / 100.0) * sorted.len() as f64).ceil() as usize;
    Ok(sorted[rank.clamp(1, sorted.len()) - 1])
}

/// Keeps the points whose density strictly exceeds the k-th percentile,
/// preserving input order. Returns the kept points and the threshold.
pub fn filter_by_percentile(
    samples: &[DensitySample],
    k: f64,
) -> Result<(Vec<GeoPoint>, f64), ContourError> {
    let densities: Vec<f64> = samples.iter().map(|s| s.density).collect();
    let threshold = nearest_rank_percentile(&densities, k)?;
    let kept = samples
        .iter()
        .filter(|s| s.density > threshold)
        .map(|s| s.point)
        .collect();
    Ok((kept, threshold))
}

struct GridIndex {
    cell: f64,
    cells: HashMap<(i64, i64), Vec<usize>>,
}

impl GridIndex {
    fn new(points: &[GeoPoint], cell: f64) -> Self {
        let mut cells: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(Self::key(p, cell)).or_default().push(i);
        }
        Self { cell, cells }
    }

    fn key(p: &GeoPoint, cell: f64) -> (i64, i64) {
        ((p.lon / cell).floor() as i64, (p.lat / cell).floor() as i64)
    }

    fn neighbours(&self, points: &[GeoPoint], i: usize, eps: f64, out: &mut Vec<usize>) {
        out.clear();
        let p = points[i];
        let (cx, cy) = Self::key(&p, self.cell);
        let eps2 = eps * eps;
        for dx in -1..=1 {
            for dy in -1..=1 {
                if let Some(bucket) = self.cells.get(&(cx + dx, cy + dy)) {
                    for &j in bucket {
                        if within(&p, &points[j], eps2) {
                            out.push(j);
                        }
                    }
                }
            }
        }
    }
}

#[inline]
pub(crate) fn within(a: &GeoPoint, b: &GeoPoint, eps2: f64) -> bool {
    let dx = a.lon - b.lon;
    let dy = a.lat - b.lat;
    dx * dx + dy * dy <= eps2
}

/// Classic DBSCAN over Euclidean degree distance. Neighbourhoods are
/// inclusive and count the point itself. Cluster ids follow the input
/// order of the first core point that seeds each cluster.
pub fn dbscan(points: &[GeoPoint], cfg: &DbscanConfig) -> Result<Vec<Label>, ContourError> {
    if points.is_empty() {
        return Err(ContourError::EmptyPointSet);
    }
    cfg.validate()?;
    let index = GridIndex::new(points, cfg.eps);
    let mut labels: Vec<Option<Label>> = vec![None; points.len()];
    let mut neigh = Vec::new();
    let mut inner = Vec::new();
    let mut next_id = 0;

    for i in 0..points.len() {
        if labels[i].is_some() {
            continue;
        }
        index.neighbours(points, i, cfg.eps, &mut neigh);
        if neigh.len() < cfg.min_pts {
            labels[i] = Some(Label::Noise);
            continue;
        }
        let id = next_id;
        next_id += 1;
        labels[i] = Some(Label::Cluster(id));
        let mut queue: Vec<usize> = neigh.clone();
        while let Some(j) = queue.pop() {
            match labels[j] {
                Some(Label::Cluster(_)) => continue,
                // border point previously marked noise; never expanded
                Some(Label::Noise) => {
                    labels[j] = Some(Label::Cluster(id));
                    continue;
                }
                None => labels[j] = Some(Label::Cluster(id)),
            }
            index.neighbours(points, j, cfg.eps, &mut inner);
            if inner.len() >= cfg.min_pts {
                queue.extend(inner.iter().copied().filter(|&q| !matches!(labels[q], Some(Label::Cluster(_)))));
            }
        }
    }
    Ok(labels.into_iter().map(|l| l.unwrap_or(Label::Noise)).collect())
}

/// Points of the largest cluster; the lowest id wins ties.
pub fn main_cluster(labels: &[Label], points: &[GeoPoint]) -> Result<Vec<GeoPoint>, ContourError> {
    let mut sizes: HashMap<usize, usize> = HashMap::new();
    for c in labels.iter().filter_map(|l| l.cluster()) {
        *sizes.entry(c).or_default() += 1;
    }
    let best = sizes
        .iter()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
        .map(|(&c, _)| c)
        .ok_or(ContourError::NoClusterFound)?;
    Ok(labels
        .iter()
        .zip(points)
        .filter(|(l, _)| **l == Label::Cluster(best))
        .map(|(_, p)| *p)
        .collect())
}

#[inline]
fn cross(o: &GeoPoint, a: &GeoPoint, b: &GeoPoint) -> f64 {
    (a.lon - o.lon) * (b.lat - o.lat) - (a.lat - o.lat) * (b.lon - o.lon)
}

/// Convex hull (Andrew's monotone chain), counter-clockwise, collinear
/// boundary points dropped.
pub fn bounding_polygon(points: &[GeoPoint]) -> Result<Vec<GeoPoint>, ContourError> {
    if points.len() < 3 {
        return Err(ContourError::DegenerateGeometry(format!(
            "{} points, need at least 3",
            points.len()
        )));
    }
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.lon.total_cmp(&b.lon).then(a.lat.total_cmp(&b.lat)));
    pts.dedup();

    let mut hull: Vec<GeoPoint> = Vec::with_capacity(2 * pts.len());
    for p in pts.iter() {
        while hull.len() >= 2 && cross(&hull[hull.len() - 2], &hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(*p);
    }
    let lower_len = hull.len() + 1;
    for p in pts.iter().rev().skip(1) {
        while hull.len() >= lower_len && cross(&hull[hull.len() - 2], &hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(*p);
    }
    hull.pop();
    if hull.len() < 3 {
        return Err(ContourError::DegenerateGeometry("points are collinear".into()));
    }
    Ok(hull)
}

fn distance_to_segment(p: &GeoPoint, a: &GeoPoint, b: &GeoPoint) -> f64 {
    let (abx, aby) = (b.lon - a.lon, b.lat - a.lat);
    let (apx, apy) = (p.lon - a.lon, p.lat - a.lat);
    let len2 = abx * abx + aby * aby;
    let t = if len2 > 0.0 {
        ((apx * abx + apy * aby) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (dx, dy) = (apx - t * abx, apy - t * aby);
    (dx * dx + dy * dy).sqrt()
}

/// Inside-or-on test for any simple polygon.
pub fn polygon_contains(polygon: &[GeoPoint], p: &GeoPoint) -> bool {
    let n = polygon.len();
    if n < 3 {
        return false;
    }
    for i in 0..n {
        if distance_to_segment(p, &polygon[i], &polygon[(i + 1) % n]) <= BOUNDARY_TOL_DEG {
            return true;
        }
    }
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (&polygon[i], &polygon[j]);
        if (a.lat > p.lat) != (b.lat > p.lat) {
            let x = a.lon + (p.lat - a.lat) * (b.lon - a.lon) / (b.lat - a.lat);
            if p.lon < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArrivalHit {
    pub index: usize,
    pub timestamp: i64,
}

impl ArrivalContour {
    /// True when `p` is inside or on the boundary.
    pub fn contains(&self, p: &GeoPoint) -> bool {
        polygon_contains(&self.polygon, p)
    }

    /// First grid sample inside the contour, or `None` if the voyage never
    /// enters it.
    pub fn label_arrival(&self, traj: &Trajectory) -> Option<ArrivalHit> {
        traj.samples
            .iter()
            .position(|s| self.contains(&s.position()))
            .map(|index| ArrivalHit {
                index,
                timestamp: traj.samples[index].timestamp,
            })
    }

    pub fn vertex_distance_nm(&self, p: &GeoPoint) -> f64 {
        self.polygon
            .iter()
            .map(|v| v.distance_nm(p))
            .fold(f64::INFINITY, f64::min)
    }

    /// GeoJSON `Feature` with a `Polygon` geometry.
    pub fn to_geojson(&self, cfg: &ContourConfig, config_hash: &str) -> Value {
        let mut ring: Vec<[f64; 2]> = self.polygon.iter().map(|p| [p.lon, p.lat]).collect();
        if let Some(first) = ring.first().copied() {
            ring.push(first);
        }
        json!({
            "type": "Feature",
            "geometry": { "type": "Polygon", "coordinates": [ring] },
            "properties": {
                "pbg_id": self.pbg_id,
                "k": cfg.percentile,
                "bandwidth": cfg.kde.bandwidth,
                "eps": cfg.dbscan.eps,
                "min_pts": cfg.dbscan.min_pts,
                "main_cluster_size": self.main_cluster_size,
                "kept_points": self.kept_points.len(),
                "config_hash": config_hash,
            }
        })
    }

    /// Reads back a contour written by [`ArrivalContour::to_geojson`].
    /// Kept points are not part of the file and come back empty.
    pub fn from_geojson(v: &Value) -> Result<(Self, String), ContourError> {
        let bad = |m: &str| ContourError::Malformed(m.to_string());
        if v.get("type").and_then(Value::as_str) != Some("Feature") {
            return Err(bad("not a GeoJSON Feature"));
        }
        let geom = v.get("geometry").ok_or_else(|| bad("missing geometry"))?;
        if geom.get("type").and_then(Value::as_str) != Some("Polygon") {
            return Err(bad("geometry is not a Polygon"));
        }
        let ring = geom
            .get("coordinates")
            .and_then(|c| c.get(0))
            .and_then(Value::as_array)
            .ok_or_else(|| bad("missing exterior ring"))?;
        let mut polygon = Vec::with_capacity(ring.len());
        for c in ring {
            let pair = c.as_array().filter(|a| a.len() == 2).ok_or_else(|| bad("bad position"))?;
            let lon = pair[0].as_f64().ok_or_else(|| bad("bad lon"))?;
            let lat = pair[1].as_f64().ok_or_else(|| bad("bad lat"))?;
            polygon.push(GeoPoint::new(lat, lon));
        }
        if polygon.len() > 1 && polygon.first() == polygon.last() {
            polygon.pop();
        }
        if polygon.len() < 3 {
            return Err(ContourError::DegenerateGeometry("ring has fewer than 3 vertices".into()));
        }
        let props = v.get("properties").ok_or_else(|| bad("missing properties"))?;
        let pbg_id = props
            .get("pbg_id")
            .and_then(Value::as_str)
            .ok_or_else(|| bad("missing pbg_id"))?
            .to_string();
        let main_cluster_size = props
            .get("main_cluster_size")
            .and_then(Value::as_u64)
            .unwrap_or(0) as usize;
        let hash = props
            .get("config_hash")
            .and_then(Value::as_str)
            .unwrap_or_default()
            .to_string();
        Ok((
            ArrivalContour {
                pbg_id,
                polygon,
                kept_points: Vec::new(),
                main_cluster_size,
            },
            hash,
        ))
    }
}

/// Runs the full extraction over per-voyage closest-approach points.
pub fn extract_contour(
    closest_points: &[GeoPoint],
    cfg: &ContourConfig,
    pbg_id: &str,
) -> Result<ContourExtraction, ContourError> {
    let densities = self_densities(closest_points, &cfg.kde)?;
    let (kept, threshold) = filter_by_percentile(&densities, cfg.percentile)?;
    if kept.is_empty() {
        return Err(ContourError::NoClusterFound);
    }
    let labels = dbscan(&kept, &cfg.dbscan)?;
    let main = main_cluster(&labels, &kept)?;
    let polygon = bounding_polygon(&main)?;
    Ok(ContourExtraction {
        contour: ArrivalContour {
            pbg_id: pbg_id.to_string(),
            polygon,
            main_cluster_size: main.len(),
            kept_points: kept,
        },
        densities,
        threshold,
        labels,
        main_cluster: main,
    })
}

impl ContourExtraction {
    /// CSV of every closest point with its density, whether it passed the
    /// percentile filter and its cluster label (`-1` for noise, empty when
    /// filtered out).
    pub fn write_points_csv<W: Write>(&self, w: W) -> Result<(), ContourError> {
        let mut out = csv::Writer::from_writer(w);
        let io = |e: csv::Error| ContourError::Io(std::io::Error::other(e));
        out.write_record(["lat", "lon", "density", "kept", "label"]).map_err(io)?;
        let mut kept_iter = self.labels.iter();
        for s in &self.densities {
            let kept = s.density > self.threshold;
            let label = if kept {
                match kept_iter.next() {
                    Some(Label::Cluster(c)) => c.to_string(),
                    _ => "-1".to_string(),
                }
            } else {
                String::new()
            };
            out.write_record([
                s.point.lat.to_string(),
                s.point.lon.to_string(),
                s.density.to_string(),
                (kept as u8).to_string(),
                label,
            ])
            .map_err(io)?;
        }
        out.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{AisRecord, Trajectory};

    fn p(lon: f64, lat: f64) -> GeoPoint {
        GeoPoint::new(lat, lon)
    }

    fn unit_square() -> ArrivalContour {
        ArrivalContour {
            pbg_id: "P".into(),
            polygon: vec![p(0.0, 0.0), p(1.0, 0.0), p(1.0, 1.0), p(0.0, 1.0)],
            kept_points: vec![],
            main_cluster_size: 0,
        }
    }

    #[test]
    fn single_point_density_at_center() {
        let cfg = KdeConfig::isotropic(0.001);
        let d = mkde_density(&[p(104.0, 1.3)], p(104.0, 1.3), &cfg).unwrap();
        let expected = 1.0 / (2.0 * PI * 1e-6);
        assert!((d - expected).abs() / expected < 1e-12);
        assert!((d - 1.591549e5).abs() < 0.1);
    }

    #[test]
    fn density_one_bandwidth_away() {
        let cfg = KdeConfig::isotropic(0.001);
        let at = mkde_density(&[p(0.0, 0.0)], p(0.0, 0.0), &cfg).unwrap();
        let off = mkde_density(&[p(0.0, 0.0)], p(0.001, 0.0), &cfg).unwrap();
        assert!((off - at * (-0.5f64).exp()).abs() / off < 1e-12);
        assert!((off - 9.6532e4).abs() < 1.0);
    }

    #[test]
    fn duplicate_points_average_to_single() {
        let cfg = KdeConfig::isotropic(0.002);
        let q = p(104.0005, 1.3001);
        let one = mkde_density(&[p(104.0, 1.3)], q, &cfg).unwrap();
        let two = mkde_density(&[p(104.0, 1.3), p(104.0, 1.3)], q, &cfg).unwrap();
        assert_eq!(one, two);
    }

    #[test]
    fn empty_density_input() {
        assert!(matches!(
            mkde_density(&[], p(0.0, 0.0), &KdeConfig::default()),
            Err(ContourError::EmptyPointSet)
        ));
    }

    fn samples(ds: &[f64]) -> Vec<DensitySample> {
        ds.iter()
            .enumerate()
            .map(|(i, &d)| DensitySample {
                point: p(i as f64, 0.0),
                density: d,
            })
            .collect()
    }

    #[test]
    fn percentile_of_one_to_hundred() {
        let ds: Vec<f64> = (1..=100).map(f64::from).collect();
        let (kept, thr) = filter_by_percentile(&samples(&ds), 75.0).unwrap();
        assert_eq!(thr, 75.0);
        assert_eq!(kept.len(), 25);
    }

    #[test]
    fn percentile_all_equal_keeps_nothing() {
        let (kept, _) = filter_by_percentile(&samples(&[2.0; 17]), 75.0).unwrap();
        assert!(kept.is_empty());
    }

    #[test]
    fn percentile_of_four() {
        let (kept, thr) = filter_by_percentile(&samples(&[1.0, 2.0, 3.0, 4.0]), 75.0).unwrap();
        assert_eq!(thr, 3.0);
        assert_eq!(kept, vec![p(3.0, 0.0)]);
    }

    #[test]
    fn percentile_errors() {
        assert!(matches!(filter_by_percentile(&[], 75.0), Err(ContourError::EmptyInput)));
        assert!(matches!(
            filter_by_percentile(&samples(&[1.0]), 100.0),
            Err(ContourError::BadPercentile(_))
        ));
    }

    #[test]
    fn dbscan_triangle_plus_outlier() {
        let eps = 0.01;
        let pts = [p(0.0, 0.0), p(0.005, 0.0), p(0.0, 0.005), p(1.0, 1.0)];
        let labels = dbscan(&pts, &DbscanConfig { eps, min_pts: 3 }).unwrap();
        assert_eq!(
            labels,
            vec![Label::Cluster(0), Label::Cluster(0), Label::Cluster(0), Label::Noise]
        );
    }

    #[test]
    fn dbscan_identical_points() {
        let pts = vec![p(1.0, 1.0); 12];
        let labels = dbscan(&pts, &DbscanConfig { eps: 0.001, min_pts: 12 }).unwrap();
        assert!(labels.iter().all(|l| *l == Label::Cluster(0)));
    }

    #[test]
    fn dbscan_border_point_joins_cluster() {
        // chain of 3 core points with a border point hanging off the end
        let pts = [p(0.0, 0.0), p(1.0, 0.0), p(2.0, 0.0), p(3.0, 0.0)];
        let labels = dbscan(&pts, &DbscanConfig { eps: 1.0, min_pts: 3 }).unwrap();
        assert!(labels.iter().all(|l| *l == Label::Cluster(0)));
        // the border point seen first is noise until a core point reaches it
        let pts = [p(3.0, 0.0), p(0.0, 0.0), p(1.0, 0.0), p(2.0, 0.0)];
        let labels = dbscan(&pts, &DbscanConfig { eps: 1.0, min_pts: 3 }).unwrap();
        assert!(labels.iter().all(|l| *l == Label::Cluster(0)));
    }

    #[test]
    fn main_cluster_picks_largest() {
        let mut labels = vec![Label::Cluster(1); 7];
        labels.extend(vec![Label::Cluster(0); 40]);
        labels.extend(vec![Label::Noise; 3]);
        let pts: Vec<GeoPoint> = (0..labels.len()).map(|i| p(i as f64, 0.0)).collect();
        let main = main_cluster(&labels, &pts).unwrap();
        assert_eq!(main.len(), 40);
        assert_eq!(main[0], p(7.0, 0.0));
    }

    #[test]
    fn main_cluster_all_noise() {
        assert!(matches!(
            main_cluster(&[Label::Noise; 4], &[p(0.0, 0.0); 4]),
            Err(ContourError::NoClusterFound)
        ));
    }

    #[test]
    fn main_cluster_tie_prefers_lower_id() {
        let mut labels = vec![Label::Cluster(1); 10];
        labels.extend(vec![Label::Cluster(0); 10]);
        let pts: Vec<GeoPoint> = (0..20).map(|i| p(i as f64, 0.0)).collect();
        let main = main_cluster(&labels, &pts).unwrap();
        assert_eq!(main[0], p(10.0, 0.0));
    }

    #[test]
    fn hull_of_square_with_interior() {
        let pts = [
            p(0.5, 0.5),
            p(1.0, 1.0),
            p(0.0, 0.0),
            p(0.2, 0.7),
            p(1.0, 0.0),
            p(0.0, 1.0),
            p(0.5, 0.0),
        ];
        let hull = bounding_polygon(&pts).unwrap();
        assert_eq!(hull, vec![p(0.0, 0.0), p(1.0, 0.0), p(1.0, 1.0), p(0.0, 1.0)]);
    }

    #[test]
    fn hull_of_triangle() {
        let pts = [p(0.0, 0.0), p(2.0, 1.0), p(0.0, 3.0)];
        let hull = bounding_polygon(&pts).unwrap();
        assert_eq!(hull.len(), 3);
        let area2: f64 = (0..3).map(|i| cross(&hull[0], &hull[i], &hull[(i + 1) % 3])).sum();
        assert!(area2 > 0.0, "counter-clockwise");
    }

    #[test]
    fn hull_degenerate() {
        assert!(matches!(
            bounding_polygon(&[p(0.0, 0.0), p(1.0, 1.0)]),
            Err(ContourError::DegenerateGeometry(_))
        ));
        assert!(matches!(
            bounding_polygon(&[p(0.0, 0.0), p(1.0, 1.0), p(2.0, 2.0), p(1.0, 1.0)]),
            Err(ContourError::DegenerateGeometry(_))
        ));
    }

    #[test]
    fn unit_square_membership() {
        let sq = unit_square();
        assert!(sq.contains(&p(0.5, 0.5)));
        assert!(!sq.contains(&p(1.5, 0.5)));
        assert!(sq.contains(&p(1.0, 0.5)));
        assert!(sq.contains(&p(0.0, 0.0)));
    }

    fn traj_through(lons: &[f64]) -> Trajectory {
        let samples = lons
            .iter()
            .enumerate()
            .map(|(i, &lon)| AisRecord {
                voyage_id: "V".into(),
                timestamp: 1000 + 60 * i as i64,
                lat: 0.5,
                lon,
                sog: 10.0,
                cog: 270.0,
            })
            .collect();
        Trajectory::new("V", "P", samples).unwrap()
    }

    #[test]
    fn arrival_first_hit() {
        let mut lons: Vec<f64> = (0..37).map(|i| 5.0 - i as f64 * 0.1).collect();
        lons.push(0.9);
        lons.push(0.5);
        let t = traj_through(&lons);
        let hit = unit_square().label_arrival(&t).unwrap();
        assert_eq!(hit.index, 37);
        assert_eq!(hit.timestamp, 1000 + 60 * 37);
    }

    #[test]
    fn arrival_never() {
        let t = traj_through(&[5.0, 4.0, 3.0]);
        assert_eq!(unit_square().label_arrival(&t), None);
    }

    #[test]
    fn arrival_starting_inside() {
        let t = traj_through(&[0.5, 0.4, 3.0]);
        let hit = unit_square().label_arrival(&t).unwrap();
        let scan = t.samples.iter().position(|s| s.lon >= 0.0 && s.lon <= 1.0).unwrap();
        assert_eq!(hit.index, scan);
        assert_eq!(hit.timestamp, t.samples[0].timestamp);
    }

    #[test]
    fn geojson_round_trip() {
        let sq = unit_square();
        let v = sq.to_geojson(&ContourConfig::default(), "abc");
        let ring = v["geometry"]["coordinates"][0].as_array().unwrap();
        assert_eq!(ring.len(), 5);
        assert_eq!(ring[0], ring[4]);
        let (back, hash) = ArrivalContour::from_geojson(&v).unwrap();
        assert_eq!(back.polygon, sq.polygon);
        assert_eq!(hash, "abc");
        assert_eq!(v["properties"]["min_pts"], 10);
    }
}
