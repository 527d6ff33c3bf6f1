//! Campus geometry: road network, gates, parking sections and the perimeter road.
//!
//! Geometry enters as a GeoJSON `FeatureCollection` whose features carry a `kind`
//! property (`road`, `boundary`, `gate` or `parking`). Distances use a spherical
//! Earth of radius [`EARTH_RADIUS_M`].

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::error::{Error, Result, Violation};

/// Mean Earth radius in meters.
pub const EARTH_RADIUS_M: f64 = 6_371_008.8;

/// Default distance within which a gate must sit from the perimeter road, and within
/// which observations snap onto segments.
pub const DEFAULT_SNAP_THRESHOLD_M: f64 = 30.0;

const EDGE_LENGTH_RTOL: f64 = 1e-6;

/// A WGS84 longitude/latitude pair in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lon: f64,
    pub lat: f64,
}

impl GeoPoint {
    /// Checked constructor.
    pub fn new(lon: f64, lat: f64) -> Result<Self> {
        let p = Self { lon, lat };
        if p.is_valid() {
            Ok(p)
        } else {
            Err(Error::Domain(format!(
                "coordinate ({lon}, {lat}) out of range"
            )))
        }
    }

    pub fn is_valid(&self) -> bool {
        self.lon.is_finite()
            && self.lat.is_finite()
            && (-180.0..=180.0).contains(&self.lon)
            && (-90.0..=90.0).contains(&self.lat)
    }
}

/// Great-circle distance in meters between two points.
pub fn haversine(a: GeoPoint, b: GeoPoint) -> f64 {
    let (lat1, lat2) = (a.lat.to_radians(), b.lat.to_radians());
    let dlat = (b.lat - a.lat).to_radians();
    let dlon = (b.lon - a.lon).to_radians();
    let s_lat = (dlat / 2.0).sin();
    let s_lon = (dlon / 2.0).sin();
    let h = (s_lat * s_lat + lat1.cos() * lat2.cos() * s_lon * s_lon).clamp(0.0, 1.0);
    2.0 * EARTH_RADIUS_M * h.sqrt().atan2((1.0 - h).sqrt())
}

/// Sum of haversine distances between consecutive points.
pub fn polyline_length(points: &[GeoPoint]) -> f64 {
    points.windows(2).map(|w| haversine(w[0], w[1])).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoadEdge {
    pub from: u64,
    pub to: u64,
    pub polyline: Vec<GeoPoint>,
    pub length_m: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RoadNetwork {
    pub nodes: BTreeMap<u64, GeoPoint>,
    pub edges: Vec<RoadEdge>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gate {
    pub id: u32,
    pub location: GeoPoint,
    pub name: String,
    /// Sections reachable through this gate, in preference order.
    pub sections: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParkingSection {
    pub id: u32,
    pub name: String,
    /// Closed ring: first point equals last point.
    pub polygon: Vec<GeoPoint>,
    pub capacity: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Campus {
    pub network: RoadNetwork,
    pub gates: Vec<Gate>,
    pub sections: Vec<ParkingSection>,
    /// Perimeter road on which the gates sit; a closed loop.
    pub boundary: Vec<GeoPoint>,
    /// Declared total capacity; when present the section capacities must sum to it.
    pub declared_capacity: Option<u32>,
    pub gate_tolerance_m: f64,
}

impl Campus {
    pub fn total_capacity(&self) -> u32 {
        self.sections.iter().map(|s| s.capacity).sum()
    }

    pub fn gate(&self, id: u32) -> Option<&Gate> {
        self.gates.iter().find(|g| g.id == id)
    }

    pub fn section(&self, id: u32) -> Option<&ParkingSection> {
        self.sections.iter().find(|s| s.id == id)
    }

    /// Sections served by a gate, falling back to every section when the gate lists none.
    pub fn sections_for_gate(&self, gate_id: u32) -> Vec<u32> {
        match self.gate(gate_id) {
            Some(g) if !g.sections.is_empty() => g.sections.clone(),
            _ => {
                let mut ids: Vec<u32> = self.sections.iter().map(|s| s.id).collect();
                ids.sort_unstable();
                ids
            }
        }
    }
}

/// Parses and validates a campus GeoJSON document.
pub fn load_campus(bytes: &[u8]) -> Result<Campus> {
    let doc: Value = serde_json::from_slice(bytes).map_err(|e| Error::Parse {
        offset: byte_offset(bytes, e.line(), e.column()),
        message: e.to_string(),
    })?;
    let campus = campus_from_geojson(&doc)?;
    let violations = validate_campus(&campus);
    if violations.is_empty() {
        Ok(campus)
    } else {
        Err(Error::Validation(violations))
    }
}

fn byte_offset(bytes: &[u8], line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let line_start: usize = bytes
        .split(|&b| b == b'\n')
        .take(line - 1)
        .map(|l| l.len() + 1)
        .sum();
    (line_start + column.saturating_sub(1)).min(bytes.len())
}

/// Builds a campus from a parsed document without validating invariants.
pub fn campus_from_geojson(doc: &Value) -> Result<Campus> {
    if doc.get("type").and_then(Value::as_str) != Some("FeatureCollection") {
        return Err(Error::Schema("document is not a FeatureCollection".into()));
    }
    let features = doc
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::Schema("FeatureCollection has no `features` array".into()))?;

    let mut campus = Campus {
        network: RoadNetwork::default(),
        gates: Vec::new(),
        sections: Vec::new(),
        boundary: Vec::new(),
        declared_capacity: None,
        gate_tolerance_m: DEFAULT_SNAP_THRESHOLD_M,
    };
    let mut node_conflicts = Vec::new();

    for (idx, feature) in features.iter().enumerate() {
        let props = feature.get("properties").and_then(Value::as_object);
        let kind = props
            .and_then(|p| p.get("kind"))
            .and_then(Value::as_str)
            .ok_or_else(|| Error::Schema(format!("feature {idx}: missing `kind` property")))?;
        let props = props.expect("kind was found in properties");
        let geometry = feature
            .get("geometry")
            .ok_or_else(|| Error::Schema(format!("feature {idx}: missing geometry")))?;
        match kind {
            "road" => {
                let polyline = line_string(geometry, idx)?;
                let from = u64_prop(props, "from", idx)?;
                let to = u64_prop(props, "to", idx)?;
                let computed = polyline_length(&polyline);
                let length_m = match props.get("length_m").and_then(Value::as_f64) {
                    Some(l) => l,
                    None => computed,
                };
                for (id, p) in [(from, polyline.first()), (to, polyline.last())] {
                    let Some(&p) = p else { continue };
                    match campus.network.nodes.get(&id) {
                        Some(existing) if *existing != p => node_conflicts.push(id),
                        Some(_) => {}
                        None => {
                            campus.network.nodes.insert(id, p);
                        }
                    }
                }
                campus.network.edges.push(RoadEdge {
                    from,
                    to,
                    polyline,
                    length_m,
                });
            }
            "boundary" => {
                if !campus.boundary.is_empty() {
                    return Err(Error::Schema(format!(
                        "feature {idx}: second boundary feature"
                    )));
                }
                campus.boundary = line_string(geometry, idx)?;
                if let Some(total) = props.get("total_capacity") {
                    campus.declared_capacity = Some(as_u32(total).ok_or_else(|| {
                        Error::Schema(format!("feature {idx}: `total_capacity` is not an integer"))
                    })?);
                }
                if let Some(tol) = props.get("gate_tolerance_m").and_then(Value::as_f64) {
                    campus.gate_tolerance_m = tol;
                }
            }
            "gate" => {
                let location = point(geometry, idx)?;
                let id = u32_prop(props, "gate_id", idx)?;
                let name = props
                    .get("name")
                    .and_then(Value::as_str)
                    .map(str::to_owned)
                    .unwrap_or_else(|| format!("Gate {id}"));
                let sections = match props.get("sections") {
                    None | Some(Value::Null) => Vec::new(),
                    Some(Value::Array(a)) => a
                        .iter()
                        .map(|v| {
                            as_u32(v).ok_or_else(|| {
                                Error::Schema(format!(
                                    "feature {idx}: `sections` must hold integers"
                                ))
                            })
                        })
                        .collect::<Result<_>>()?,
                    Some(_) => {
                        return Err(Error::Schema(format!(
                            "feature {idx}: `sections` must be an array"
                        )))
                    }
                };
                campus.gates.push(Gate {
                    id,
                    location,
                    name,
                    sections,
                });
            }
            "parking" => {
                let polygon = polygon_ring(geometry, idx)?;
                let id = u32_prop(props, "section_id", idx)?;
                let capacity = u32_prop(props, "capacity", idx)?;
                let name = props
                    .get("name")
                    .and_then(Value::as_str)
                    .map(str::to_owned)
                    .unwrap_or_else(|| format!("Section {id}"));
                campus.sections.push(ParkingSection {
                    id,
                    name,
                    polygon,
                    capacity,
                });
            }
            other => {
                return Err(Error::Schema(format!(
                    "feature {idx}: unknown kind `{other}`"
                )));
            }
        }
    }
    if let Some(id) = node_conflicts.first() {
        return Err(Error::Schema(format!(
            "road node {id} appears with two different coordinates"
        )));
    }
    Ok(campus)
}

fn as_u32(v: &Value) -> Option<u32> {
    v.as_u64().and_then(|x| u32::try_from(x).ok())
}

fn u64_prop(props: &Map<String, Value>, key: &str, idx: usize) -> Result<u64> {
    props
        .get(key)
        .and_then(Value::as_u64)
        .ok_or_else(|| Error::Schema(format!("feature {idx}: missing integer property `{key}`")))
}

fn u32_prop(props: &Map<String, Value>, key: &str, idx: usize) -> Result<u32> {
    props
        .get(key)
        .and_then(as_u32)
        .ok_or_else(|| Error::Schema(format!("feature {idx}: missing integer property `{key}`")))
}

fn geometry_of<'a>(geometry: &'a Value, expected: &str, idx: usize) -> Result<&'a Value> {
    let ty = geometry.get("type").and_then(Value::as_str);
    if ty != Some(expected) {
        return Err(Error::Schema(format!(
            "feature {idx}: expected {expected} geometry, found {}",
            ty.unwrap_or("none")
        )));
    }
    geometry
        .get("coordinates")
        .ok_or_else(|| Error::Schema(format!("feature {idx}: geometry has no coordinates")))
}

fn position(v: &Value, idx: usize) -> Result<GeoPoint> {
    let arr = v.as_array().filter(|a| a.len() >= 2);
    let coords = arr.and_then(|a| Some((a[0].as_f64()?, a[1].as_f64()?)));
    // range problems are left to validation so they can be reported together
    coords
        .map(|(lon, lat)| GeoPoint { lon, lat })
        .ok_or_else(|| Error::Schema(format!("feature {idx}: malformed position {v}")))
}

fn positions(v: &Value, idx: usize) -> Result<Vec<GeoPoint>> {
    v.as_array()
        .ok_or_else(|| Error::Schema(format!("feature {idx}: expected a position array")))?
        .iter()
        .map(|p| position(p, idx))
        .collect()
}

fn point(geometry: &Value, idx: usize) -> Result<GeoPoint> {
    position(geometry_of(geometry, "Point", idx)?, idx)
}

fn line_string(geometry: &Value, idx: usize) -> Result<Vec<GeoPoint>> {
    positions(geometry_of(geometry, "LineString", idx)?, idx)
}

fn polygon_ring(geometry: &Value, idx: usize) -> Result<Vec<GeoPoint>> {
    let rings = geometry_of(geometry, "Polygon", idx)?
        .as_array()
        .ok_or_else(|| Error::Schema(format!("feature {idx}: polygon has no rings")))?;
    let outer = rings
        .first()
        .ok_or_else(|| Error::Schema(format!("feature {idx}: polygon has no rings")))?;
    positions(outer, idx)
}

/// Serializes a campus back into the GeoJSON layout accepted by [`load_campus`].
pub fn campus_to_geojson(campus: &Campus) -> Value {
    let coords = |pts: &[GeoPoint]| -> Value {
        Value::Array(pts.iter().map(|p| json!([p.lon, p.lat])).collect())
    };
    let mut features = Vec::new();
    let mut boundary_props =
        json!({ "kind": "boundary", "gate_tolerance_m": campus.gate_tolerance_m });
    if let Some(total) = campus.declared_capacity {
        boundary_props["total_capacity"] = json!(total);
    }
    features.push(json!({
        "type": "Feature",
        "properties": boundary_props,
        "geometry": { "type": "LineString", "coordinates": coords(&campus.boundary) },
    }));
    for e in &campus.network.edges {
        features.push(json!({
            "type": "Feature",
            "properties": { "kind": "road", "from": e.from, "to": e.to, "length_m": e.length_m },
            "geometry": { "type": "LineString", "coordinates": coords(&e.polyline) },
        }));
    }
    for g in &campus.gates {
        features.push(json!({
            "type": "Feature",
            "properties": { "kind": "gate", "gate_id": g.id, "name": g.name, "sections": g.sections },
            "geometry": { "type": "Point", "coordinates": [g.location.lon, g.location.lat] },
        }));
    }
    for s in &campus.sections {
        features.push(json!({
            "type": "Feature",
            "properties": { "kind": "parking", "section_id": s.id, "name": s.name, "capacity": s.capacity },
            "geometry": { "type": "Polygon", "coordinates": [coords(&s.polygon)] },
        }));
    }
    json!({ "type": "FeatureCollection", "features": features })
}

/// Lists every broken campus invariant. Empty means the campus is valid.
pub fn validate_campus(c: &Campus) -> Vec<Violation> {
    let mut out = Vec::new();

    // coordinates
    let mut bad_points = Vec::new();
    if c.boundary.iter().any(|p| !p.is_valid()) {
        bad_points.push("boundary".to_string());
    }
    for (i, e) in c.network.edges.iter().enumerate() {
        if e.polyline.iter().any(|p| !p.is_valid()) {
            bad_points.push(format!("network.edges[{i}]"));
        }
    }
    for (i, g) in c.gates.iter().enumerate() {
        if !g.location.is_valid() {
            bad_points.push(format!("gates[{i}]"));
        }
    }
    for (i, s) in c.sections.iter().enumerate() {
        if s.polygon.iter().any(|p| !p.is_valid()) {
            bad_points.push(format!("sections[{i}]"));
        }
    }
    for field in bad_points {
        out.push(Violation::new(
            field,
            "coordinate range",
            "non-finite or out-of-range coordinate",
        ));
    }

    // boundary loop
    if c.boundary.is_empty() {
        out.push(Violation::new(
            "boundary",
            "no boundary",
            "campus has no boundary road",
        ));
    } else if c.boundary.len() < 4 || c.boundary.first() != c.boundary.last() {
        out.push(Violation::new(
            "boundary",
            "closed loop",
            "boundary must have at least 4 points with first point equal to last",
        ));
    }

    // road network
    for (i, e) in c.network.edges.iter().enumerate() {
        for end in [e.from, e.to] {
            if !c.network.nodes.contains_key(&end) {
                out.push(Violation::new(
                    format!("network.edges[{i}]"),
                    "edge endpoints",
                    format!("node {end} missing"),
                ));
            }
        }
        let computed = polyline_length(&e.polyline);
        let scale = computed.abs().max(e.length_m.abs()).max(f64::MIN_POSITIVE);
        if e.polyline.len() < 2 || (computed - e.length_m).abs() > EDGE_LENGTH_RTOL * scale {
            out.push(Violation::new(
                format!("network.edges[{i}]"),
                "edge length",
                format!("stored {} m, polyline {} m", e.length_m, computed),
            ));
        }
    }

    // gates
    let mut ids: Vec<u32> = c.gates.iter().map(|g| g.id).collect();
    ids.sort_unstable();
    let contiguous = ids.iter().enumerate().all(|(i, &id)| id as usize == i + 1);
    if !contiguous {
        out.push(Violation::new(
            "gates",
            "gate ids",
            format!("ids {ids:?} are not unique and contiguous from 1"),
        ));
    }
    let section_ids: BTreeSet<u32> = c.sections.iter().map(|s| s.id).collect();
    let boundary_ok = c.boundary.len() >= 2;
    for (i, g) in c.gates.iter().enumerate() {
        if boundary_ok && g.location.is_valid() {
            let d = crate::spatial::project_onto_polyline(g.location, &c.boundary).distance_m;
            if d > c.gate_tolerance_m {
                out.push(Violation::new(
                    format!("gates[{i}]"),
                    "gate on boundary",
                    format!(
                        "gate {} is {d:.2} m from the boundary (tolerance {} m)",
                        g.id, c.gate_tolerance_m
                    ),
                ));
            }
        }
        for s in &g.sections {
            if !section_ids.contains(s) {
                out.push(Violation::new(
                    format!("gates[{i}]"),
                    "gate sections",
                    format!("gate {} references unknown section {s}", g.id),
                ));
            }
        }
    }

    // sections
    if section_ids.len() != c.sections.len() {
        out.push(Violation::new(
            "sections",
            "section ids",
            "section ids are not unique",
        ));
    }
    for (i, s) in c.sections.iter().enumerate() {
        let field = format!("sections[{i}] (section {})", s.id);
        if s.polygon.len() < 4 {
            out.push(Violation::new(
                &field,
                "ring size",
                format!("ring has {} points, need 4", s.polygon.len()),
            ));
        }
        if s.polygon.first() != s.polygon.last() {
            out.push(Violation::new(
                &field,
                "ring closed",
                "first point differs from last point",
            ));
        }
        if s.capacity == 0 {
            out.push(Violation::new(
                &field,
                "capacity",
                "capacity must be positive",
            ));
        }
    }
    if let Some(declared) = c.declared_capacity {
        let sum: u64 = c.sections.iter().map(|s| u64::from(s.capacity)).sum();
        if sum != u64::from(declared) {
            out.push(Violation::new(
                "sections",
                "capacity sum",
                format!("capacities sum to {sum}, declared total is {declared}"),
            ));
        }
    }
    out
}
