//! Road segmentation between gates, point snapping, section containment and the
//! bulk spatial join of vehicle observations.

use std::io::{Read, Write};

use chrono::{DateTime, SecondsFormat, Utc};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geodata::{
    haversine, polyline_length, Campus, GeoPoint, ParkingSection, EARTH_RADIUS_M,
};

const METERS_PER_DEGREE: f64 = EARTH_RADIUS_M * std::f64::consts::PI / 180.0;
const DEGENERATE_GATE_M: f64 = 1e-6;

fn wrap_lon(d: f64) -> f64 {
    if d > 180.0 {
        d - 360.0
    } else if d < -180.0 {
        d + 360.0
    } else {
        d
    }
}

/// Equirectangular coordinates in meters of `q` around `origin`.
fn local_xy(origin: GeoPoint, q: GeoPoint) -> (f64, f64) {
    let x = wrap_lon(q.lon - origin.lon) * origin.lat.to_radians().cos() * METERS_PER_DEGREE;
    let y = (q.lat - origin.lat) * METERS_PER_DEGREE;
    (x, y)
}

fn lerp(a: GeoPoint, b: GeoPoint, t: f64) -> GeoPoint {
    GeoPoint {
        lon: a.lon + t * wrap_lon(b.lon - a.lon),
        lat: a.lat + t * (b.lat - a.lat),
    }
}

/// Foot of the perpendicular from `p` onto the straight edge `a`-`b`, as an edge
/// parameter in `[0, 1]`.
fn edge_parameter(p: GeoPoint, a: GeoPoint, b: GeoPoint) -> f64 {
    let (ax, ay) = local_xy(p, a);
    let (bx, by) = local_xy(p, b);
    let (dx, dy) = (bx - ax, by - ay);
    let len2 = dx * dx + dy * dy;
    if len2 == 0.0 {
        0.0
    } else {
        (-(ax * dx + ay * dy) / len2).clamp(0.0, 1.0)
    }
}

/// Nearest location on a polyline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolylineProjection {
    /// Index of the polyline edge holding the projected point.
    pub edge: usize,
    /// Position along that edge in `[0, 1]`.
    pub t: f64,
    pub point: GeoPoint,
    /// Haversine distance from the query point to `point`.
    pub distance_m: f64,
    /// Arc length from the polyline start to `point`.
    pub offset_m: f64,
}

/// Projects `p` onto the polyline `pts`; ties go to the earliest edge.
pub fn project_onto_polyline(p: GeoPoint, pts: &[GeoPoint]) -> PolylineProjection {
    assert!(!pts.is_empty(), "cannot project onto an empty polyline");
    if pts.len() == 1 {
        return PolylineProjection {
            edge: 0,
            t: 0.0,
            point: pts[0],
            distance_m: haversine(p, pts[0]),
            offset_m: 0.0,
        };
    }
    let mut best: Option<PolylineProjection> = None;
    let mut along = 0.0;
    for (i, w) in pts.windows(2).enumerate() {
        let edge_len = haversine(w[0], w[1]);
        let t = edge_parameter(p, w[0], w[1]);
        let q = lerp(w[0], w[1], t);
        let d = haversine(p, q);
        if best.is_none_or(|b| d < b.distance_m) {
            best = Some(PolylineProjection {
                edge: i,
                t,
                point: q,
                distance_m: d,
                offset_m: along + t * edge_len,
            });
        }
        along += edge_len;
    }
    best.expect("polyline has at least one edge")
}

/// Portion of the perimeter road between two consecutive gates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    /// Equal to the id of the gate this segment terminates at.
    pub id: u32,
    pub polyline: Vec<GeoPoint>,
    pub start_gate: u32,
    pub end_gate: u32,
    pub length_m: f64,
}

struct LoopPosition {
    gate: u32,
    edge: usize,
    t: f64,
    s: f64,
}

/// Splits the boundary loop at the gate projections. Segment `k` runs from the gate
/// preceding gate `k` along the loop direction up to gate `k`.
pub fn segment_roads(c: &Campus) -> Result<Vec<Segment>> {
    let ring = &c.boundary;
    if ring.len() < 4 || ring.first() != ring.last() {
        return Err(Error::Geometry("boundary is not a closed loop".into()));
    }
    if c.gates.len() < 2 {
        return Err(Error::Geometry(format!(
            "need at least 2 gates to partition the boundary, found {}",
            c.gates.len()
        )));
    }
    let mut cum = vec![0.0];
    for w in ring.windows(2) {
        cum.push(cum.last().unwrap() + haversine(w[0], w[1]));
    }
    let perimeter = *cum.last().unwrap();
    if perimeter <= 0.0 {
        return Err(Error::Geometry("boundary has zero length".into()));
    }

    let mut positions = Vec::with_capacity(c.gates.len());
    for g in &c.gates {
        let proj = project_onto_polyline(g.location, ring);
        if proj.distance_m > c.gate_tolerance_m {
            return Err(Error::Geometry(format!(
                "gate {} is {:.2} m from the boundary",
                g.id, proj.distance_m
            )));
        }
        positions.push(LoopPosition {
            gate: g.id,
            edge: proj.edge,
            t: proj.t,
            s: cum[proj.edge] + proj.t * (cum[proj.edge + 1] - cum[proj.edge]),
        });
    }
    positions.sort_by(|a, b| a.s.total_cmp(&b.s).then(a.gate.cmp(&b.gate)));

    let n = positions.len();
    for i in 0..n {
        let (a, b) = (&positions[i], &positions[(i + 1) % n]);
        let gap = if i + 1 < n {
            b.s - a.s
        } else {
            b.s + perimeter - a.s
        };
        if gap <= DEGENERATE_GATE_M {
            return Err(Error::DegenerateGate {
                first: a.gate.min(b.gate),
                second: a.gate.max(b.gate),
            });
        }
        if b.gate as usize != (a.gate as usize % n) + 1 {
            return Err(Error::Geometry(format!(
                "gate {} follows gate {} along the boundary; gate ids must increase along the loop",
                b.gate, a.gate
            )));
        }
    }

    let edges = ring.len() - 1;
    let mut segments = Vec::with_capacity(n);
    for i in 0..n {
        let from = &positions[(i + n - 1) % n];
        let to = &positions[i];
        let end_s = if to.s > from.s {
            to.s
        } else {
            to.s + perimeter
        };
        let mut polyline = vec![lerp(ring[from.edge], ring[from.edge + 1], from.t)];
        // interior vertices over two unrolled laps
        for lap in 0..2 {
            for j in 1..=edges {
                let s = cum[j] + lap as f64 * perimeter;
                if s > from.s + 1e-9 && s < end_s - 1e-9 {
                    polyline.push(ring[j]);
                }
            }
        }
        polyline.push(lerp(ring[to.edge], ring[to.edge + 1], to.t));
        segments.push(Segment {
            id: to.gate,
            length_m: polyline_length(&polyline),
            polyline,
            start_gate: from.gate,
            end_gate: to.gate,
        });
    }
    segments.sort_by_key(|s| s.id);
    Ok(segments)
}

/// Result of snapping a point onto the nearest segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Snap {
    pub segment_id: u32,
    /// Arc length from the segment start to the projected point.
    pub offset_m: f64,
    pub distance_m: f64,
}

/// Nearest segment regardless of distance; ties go to the lowest segment id.
pub fn nearest_segment(p: GeoPoint, segments: &[Segment]) -> Option<Snap> {
    let mut best: Option<Snap> = None;
    let mut ordered: Vec<&Segment> = segments.iter().collect();
    ordered.sort_by_key(|s| s.id);
    for seg in ordered {
        let proj = project_onto_polyline(p, &seg.polyline);
        if best.is_none_or(|b| proj.distance_m < b.distance_m) {
            best = Some(Snap {
                segment_id: seg.id,
                offset_m: proj.offset_m.clamp(0.0, seg.length_m),
                distance_m: proj.distance_m,
            });
        }
    }
    best
}

/// Snaps `p` onto the nearest segment when it lies within `threshold_m`.
pub fn snap_to_segment(p: GeoPoint, segments: &[Segment], threshold_m: f64) -> Option<Snap> {
    nearest_segment(p, segments).filter(|s| s.distance_m <= threshold_m)
}

fn on_edge(p: GeoPoint, a: GeoPoint, b: GeoPoint) -> bool {
    let (dx, dy) = (b.lon - a.lon, b.lat - a.lat);
    let (px, py) = (p.lon - a.lon, p.lat - a.lat);
    let len = dx.hypot(dy);
    if len == 0.0 {
        return px == 0.0 && py == 0.0;
    }
    let cross = dx * py - dy * px;
    let along = dx * px + dy * py;
    cross.abs() <= 1e-12 * len && along >= -1e-12 * len && along <= len * len + 1e-12 * len
}

/// Crossing-number containment in lon/lat space; points on the ring count as inside.
pub fn ring_contains(ring: &[GeoPoint], p: GeoPoint) -> bool {
    if ring.windows(2).any(|w| on_edge(p, w[0], w[1])) {
        return true;
    }
    let mut inside = false;
    for w in ring.windows(2) {
        let (a, b) = (w[0], w[1]);
        if (a.lat > p.lat) != (b.lat > p.lat) {
            let x = a.lon + (p.lat - a.lat) * (b.lon - a.lon) / (b.lat - a.lat);
            if p.lon < x {
                inside = !inside;
            }
        }
    }
    inside
}

/// The parking section containing `p`, if any.
pub fn point_in_section(p: GeoPoint, sections: &[ParkingSection]) -> Result<Option<u32>> {
    let mut hits: Vec<u32> = sections
        .iter()
        .filter(|s| ring_contains(&s.polygon, p))
        .map(|s| s.id)
        .collect();
    match hits.len() {
        0 => Ok(None),
        1 => Ok(hits.pop()),
        _ => {
            hits.sort_unstable();
            Err(Error::AmbiguousSection(hits))
        }
    }
}

/// Gate a vehicle on segment `segment_id` is expected to enter.
pub fn expected_gate(segments: &[Segment], segment_id: u32) -> Result<u32> {
    segments
        .iter()
        .find(|s| s.id == segment_id)
        .map(|s| s.end_gate)
        .ok_or(Error::Lookup {
            kind: "segment",
            id: segment_id,
        })
}

/// A timestamped vehicle position, before any join.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleObservation {
    pub vehicle_key: String,
    pub point: GeoPoint,
    pub timestamp: DateTime<Utc>,
    pub speed_kmh: Option<f64>,
}

impl VehicleObservation {
    pub fn check(&self) -> std::result::Result<(), String> {
        if !self.point.is_valid() {
            return Err(format!(
                "coordinate ({}, {}) out of range",
                self.point.lon, self.point.lat
            ));
        }
        if let Some(s) = self.speed_kmh {
            if !s.is_finite() || s < 0.0 {
                return Err(format!("speed {s} must be finite and non-negative"));
            }
        }
        Ok(())
    }
}

/// A vehicle observation annotated with its segment, section and expected gate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JoinedObservation {
    pub observation: VehicleObservation,
    /// Present iff `snap_distance_m` is within the join threshold.
    pub segment_id: Option<u32>,
    /// Zero when unsnapped.
    pub offset_m: f64,
    /// Distance to the nearest segment, whether or not it snapped.
    pub snap_distance_m: f64,
    pub section_id: Option<u32>,
    pub expected_gate: Option<u32>,
}

/// Precomputed segmentation for repeated joins against one campus.
#[derive(Debug, Clone)]
pub struct SpatialJoiner {
    pub segments: Vec<Segment>,
    pub sections: Vec<ParkingSection>,
    pub threshold_m: f64,
}

impl SpatialJoiner {
    pub fn new(campus: &Campus, threshold_m: f64) -> Result<Self> {
        if !(threshold_m > 0.0) {
            return Err(Error::Argument(format!(
                "snap threshold {threshold_m} must be positive"
            )));
        }
        Ok(Self {
            segments: segment_roads(campus)?,
            sections: campus.sections.clone(),
            threshold_m,
        })
    }

    pub fn join_one(&self, obs: &VehicleObservation) -> Result<JoinedObservation> {
        let nearest = nearest_segment(obs.point, &self.segments);
        let snapped = nearest.filter(|s| s.distance_m <= self.threshold_m);
        let expected = match snapped {
            Some(s) => Some(expected_gate(&self.segments, s.segment_id)?),
            None => None,
        };
        Ok(JoinedObservation {
            observation: obs.clone(),
            segment_id: snapped.map(|s| s.segment_id),
            offset_m: snapped.map_or(0.0, |s| s.offset_m),
            snap_distance_m: nearest.map_or(f64::INFINITY, |s| s.distance_m),
            section_id: point_in_section(obs.point, &self.sections)?,
            expected_gate: expected,
        })
    }

    /// Joins every observation; output order matches input order.
    pub fn join(&self, obs: &[VehicleObservation]) -> Result<Vec<JoinedObservation>> {
        obs.par_iter().map(|o| self.join_one(o)).collect()
    }
}

/// Annotates observations with segment, section and expected gate.
pub fn spatial_join(
    obs: &[VehicleObservation],
    campus: &Campus,
    threshold_m: f64,
) -> Result<Vec<JoinedObservation>> {
    SpatialJoiner::new(campus, threshold_m)?.join(obs)
}

#[derive(Debug, Serialize, Deserialize)]
struct ObservationRecord {
    vehicle_key: String,
    lon: f64,
    lat: f64,
    timestamp_iso8601: String,
    speed_kmh: Option<f64>,
}

pub(crate) fn format_timestamp(t: &DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::AutoSi, true)
}

pub(crate) fn parse_timestamp(s: &str) -> std::result::Result<DateTime<Utc>, String> {
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Ok(t.with_timezone(&Utc));
    }
    for fmt in ["%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M"] {
        if let Ok(t) = chrono::NaiveDateTime::parse_from_str(s, fmt) {
            return Ok(t.and_utc());
        }
    }
    Err(format!("unparseable timestamp `{s}`"))
}

/// Reads `vehicle_key,lon,lat,timestamp_iso8601,speed_kmh` rows (header required).
pub fn read_observations_csv<R: Read>(reader: R) -> Result<Vec<VehicleObservation>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for (i, rec) in rdr.deserialize::<ObservationRecord>().enumerate() {
        let rec = rec.map_err(|e| Error::Schema(format!("observation row {i}: {e}")))?;
        let timestamp = parse_timestamp(&rec.timestamp_iso8601)
            .map_err(|e| Error::Schema(format!("observation row {i}: {e}")))?;
        let obs = VehicleObservation {
            vehicle_key: rec.vehicle_key,
            point: GeoPoint {
                lon: rec.lon,
                lat: rec.lat,
            },
            timestamp,
            speed_kmh: rec.speed_kmh,
        };
        obs.check()
            .map_err(|e| Error::Schema(format!("observation row {i}: {e}")))?;
        out.push(obs);
    }
    Ok(out)
}

pub fn write_observations_csv<W: Write>(writer: W, obs: &[VehicleObservation]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for o in obs {
        w.serialize(ObservationRecord {
            vehicle_key: o.vehicle_key.clone(),
            lon: o.point.lon,
            lat: o.point.lat,
            timestamp_iso8601: format_timestamp(&o.timestamp),
            speed_kmh: o.speed_kmh,
        })?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct JoinedRecord {
    vehicle_key: String,
    lon: f64,
    lat: f64,
    timestamp_iso8601: String,
    speed_kmh: Option<f64>,
    segment_id: Option<u32>,
    offset_m: f64,
    snap_distance_m: f64,
    section_id: Option<u32>,
    expected_gate: Option<u32>,
}

pub fn write_joined_csv<W: Write>(writer: W, joined: &[JoinedObservation]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for j in joined {
        let o = &j.observation;
        w.serialize(JoinedRecord {
            vehicle_key: o.vehicle_key.clone(),
            lon: o.point.lon,
            lat: o.point.lat,
            timestamp_iso8601: format_timestamp(&o.timestamp),
            speed_kmh: o.speed_kmh,
            segment_id: j.segment_id,
            offset_m: j.offset_m,
            snap_distance_m: j.snap_distance_m,
            section_id: j.section_id,
            expected_gate: j.expected_gate,
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_joined_csv<R: Read>(reader: R) -> Result<Vec<JoinedObservation>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for (i, rec) in rdr.deserialize::<JoinedRecord>().enumerate() {
        let rec = rec.map_err(|e| Error::Schema(format!("joined row {i}: {e}")))?;
        let timestamp = parse_timestamp(&rec.timestamp_iso8601)
            .map_err(|e| Error::Schema(format!("joined row {i}: {e}")))?;
        out.push(JoinedObservation {
            observation: VehicleObservation {
                vehicle_key: rec.vehicle_key,
                point: GeoPoint {
                    lon: rec.lon,
                    lat: rec.lat,
                },
                timestamp,
                speed_kmh: rec.speed_kmh,
            },
            segment_id: rec.segment_id,
            offset_m: rec.offset_m,
            snap_distance_m: rec.snap_distance_m,
            section_id: rec.section_id,
            expected_gate: rec.expected_gate,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::geodata::{Gate, RoadNetwork};

    fn pt(lon: f64, lat: f64) -> GeoPoint {
        GeoPoint { lon, lat }
    }

    /// Square loop at the equator with 0.001 degree sides, starting at the origin.
    fn square_campus(gates: &[(u32, GeoPoint)]) -> Campus {
        let s = 0.001;
        Campus {
            network: RoadNetwork::default(),
            gates: gates
                .iter()
                .map(|&(id, location)| Gate {
                    id,
                    location,
                    name: format!("g{id}"),
                    sections: vec![],
                })
                .collect(),
            sections: vec![],
            boundary: vec![pt(0.0, 0.0), pt(s, 0.0), pt(s, s), pt(0.0, s), pt(0.0, 0.0)],
            declared_capacity: None,
            gate_tolerance_m: 30.0,
        }
    }

    #[test]
    fn fixture_has_five_segments_partitioning_the_loop() {
        let campus = fixtures::campus();
        let segs = segment_roads(&campus).unwrap();
        assert_eq!(segs.len(), 5);
        let total: f64 = segs.iter().map(|s| s.length_m).sum();
        let perimeter = polyline_length(&campus.boundary);
        assert!(((total - perimeter) / perimeter).abs() < 1e-6);
        for (i, s) in segs.iter().enumerate() {
            assert_eq!(s.id, i as u32 + 1);
            assert_eq!(s.end_gate, s.id);
            let next = &segs[(i + 1) % segs.len()];
            assert_eq!(s.polyline.last(), next.polyline.first());
            assert_eq!(next.start_gate, s.end_gate);
        }
    }

    #[test]
    fn two_gates_on_square_split_at_loop_parameters() {
        // loop parameter 0.2 -> 0.8 along the first side; 0.6 -> 0.4 along the third side
        let campus = square_campus(&[(1, pt(0.0008, 0.0)), (2, pt(0.0006, 0.001))]);
        let segs = segment_roads(&campus).unwrap();
        let perimeter = polyline_length(&campus.boundary);
        let mut fractions: Vec<f64> = segs.iter().map(|s| s.length_m / perimeter).collect();
        assert!((fractions[0] - 0.6).abs() < 1e-6, "{fractions:?}");
        assert!((fractions[1] - 0.4).abs() < 1e-6, "{fractions:?}");
        fractions.sort_by(f64::total_cmp);
        assert!((fractions.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn single_gate_cannot_partition() {
        let campus = square_campus(&[(1, pt(0.0008, 0.0))]);
        assert!(matches!(segment_roads(&campus), Err(Error::Geometry(_))));
    }

    #[test]
    fn open_boundary_is_rejected() {
        let mut campus = square_campus(&[(1, pt(0.0008, 0.0)), (2, pt(0.0006, 0.001))]);
        campus.boundary.pop();
        assert!(matches!(segment_roads(&campus), Err(Error::Geometry(_))));
    }

    #[test]
    fn coincident_gates_are_degenerate() {
        let campus = square_campus(&[(1, pt(0.0008, 0.0)), (2, pt(0.0008, 0.0))]);
        assert!(matches!(
            segment_roads(&campus),
            Err(Error::DegenerateGate {
                first: 1,
                second: 2
            })
        ));
    }

    #[test]
    fn point_on_segment_snaps_with_zero_distance() {
        let segs = segment_roads(&fixtures::campus()).unwrap();
        let seg2 = &segs[1];
        let mid = lerp(seg2.polyline[0], seg2.polyline[1], 0.5);
        let snap = snap_to_segment(mid, &segs, 30.0).unwrap();
        assert_eq!(snap.segment_id, 2);
        assert!(snap.distance_m < 1e-6);
        let expected = haversine(seg2.polyline[0], seg2.polyline[1]) / 2.0;
        assert!((snap.offset_m - expected).abs() < 1e-6);
    }

    #[test]
    fn far_point_does_not_snap() {
        let segs = segment_roads(&fixtures::campus()).unwrap();
        // roughly 500 m south of the southern road
        let p = pt(55.484, 25.2755);
        assert!(snap_to_segment(p, &segs, 50.0).is_none());
    }

    #[test]
    fn expected_gate_is_terminal_gate() {
        let segs = segment_roads(&fixtures::campus()).unwrap();
        assert_eq!(expected_gate(&segs, 1).unwrap(), 1);
        assert_eq!(expected_gate(&segs, 2).unwrap(), 2);
        assert_eq!(expected_gate(&segs, 5).unwrap(), 5);
        assert!(matches!(
            expected_gate(&segs, 9),
            Err(Error::Lookup { id: 9, .. })
        ));
    }

    #[test]
    fn unit_square_containment() {
        let sq = ParkingSection {
            id: 1,
            name: "sq".into(),
            polygon: vec![
                pt(0.0, 0.0),
                pt(1.0, 0.0),
                pt(1.0, 1.0),
                pt(0.0, 1.0),
                pt(0.0, 0.0),
            ],
            capacity: 10,
        };
        let sections = vec![sq];
        assert_eq!(point_in_section(pt(0.5, 0.5), &sections).unwrap(), Some(1));
        assert_eq!(point_in_section(pt(2.0, 2.0), &sections).unwrap(), None);
        assert_eq!(point_in_section(pt(1.0, 0.5), &sections).unwrap(), Some(1));
        assert_eq!(point_in_section(pt(0.0, 0.0), &sections).unwrap(), Some(1));
    }

    #[test]
    fn overlapping_sections_are_ambiguous() {
        let ring = vec![
            pt(0.0, 0.0),
            pt(1.0, 0.0),
            pt(1.0, 1.0),
            pt(0.0, 1.0),
            pt(0.0, 0.0),
        ];
        let sections: Vec<ParkingSection> = [3, 1]
            .iter()
            .map(|&id| ParkingSection {
                id,
                name: String::new(),
                polygon: ring.clone(),
                capacity: 1,
            })
            .collect();
        assert!(matches!(
            point_in_section(pt(0.5, 0.5), &sections),
            Err(Error::AmbiguousSection(ids)) if ids == vec![1, 3]
        ));
    }

    #[test]
    fn empty_join_is_empty() {
        let out = spatial_join(&[], &fixtures::campus(), 30.0).unwrap();
        assert!(out.is_empty());
    }

    #[test]
    fn trace_along_segment_three_joins_to_gate_three() {
        let campus = fixtures::campus();
        let segs = segment_roads(&campus).unwrap();
        let seg = &segs[2];
        let t0: DateTime<Utc> = "2022-09-05T08:00:00Z".parse().unwrap();
        let obs: Vec<VehicleObservation> = (0..5)
            .map(|i| VehicleObservation {
                vehicle_key: "car".into(),
                point: lerp(
                    seg.polyline[seg.polyline.len() - 2],
                    *seg.polyline.last().unwrap(),
                    0.1 + 0.2 * i as f64,
                ),
                timestamp: t0 + chrono::Duration::seconds(10 * i),
                speed_kmh: Some(20.0),
            })
            .collect();
        let joined = spatial_join(&obs, &campus, 30.0).unwrap();
        assert_eq!(joined.len(), 5);
        for (j, o) in joined.iter().zip(&obs) {
            assert_eq!(&j.observation, o);
            assert_eq!(j.segment_id, Some(3));
            assert_eq!(j.expected_gate, Some(3));
            assert!(j.offset_m >= 0.0 && j.offset_m <= seg.length_m);
            assert_eq!(j.section_id, None);
        }
        assert!(joined.windows(2).all(|w| w[0].offset_m < w[1].offset_m));
    }

    #[test]
    fn joined_csv_round_trips() {
        let campus = fixtures::campus();
        let t0: DateTime<Utc> = "2022-09-05T08:00:00Z".parse().unwrap();
        let obs = vec![
            VehicleObservation {
                vehicle_key: "a".into(),
                point: pt(55.4850, 25.2800),
                timestamp: t0,
                speed_kmh: Some(12.5),
            },
            VehicleObservation {
                vehicle_key: "b".into(),
                point: pt(55.4850, 25.2815),
                timestamp: t0,
                speed_kmh: None,
            },
        ];
        let joined = spatial_join(&obs, &campus, 30.0).unwrap();
        let mut buf = Vec::new();
        write_joined_csv(&mut buf, &joined).unwrap();
        assert_eq!(read_joined_csv(buf.as_slice()).unwrap(), joined);
        let mut buf = Vec::new();
        write_observations_csv(&mut buf, &obs).unwrap();
        assert_eq!(read_observations_csv(buf.as_slice()).unwrap(), obs);
    }

    #[test]
    fn observation_csv_rejects_negative_speed_with_row_index() {
        let csv = "vehicle_key,lon,lat,timestamp_iso8601,speed_kmh\n\
                   a,55.48,25.28,2022-09-05T08:00:00Z,\n\
                   b,55.48,25.28,2022-09-05T08:00:00Z,-3\n";
        let err = read_observations_csv(csv.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("row 1"), "{err}");
    }
}
