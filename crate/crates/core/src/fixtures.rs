//! Bundled synthetic campus: a rectangular perimeter road with five gates and three
//! parking sections of 315 spaces each (945 in total).

use serde_json::{json, Value};

use crate::geodata::{campus_from_geojson, Campus};

const A: [f64; 2] = [55.480, 25.280];
const B: [f64; 2] = [55.488, 25.280];
const C: [f64; 2] = [55.488, 25.2855];
const D: [f64; 2] = [55.480, 25.2855];

fn rect(lon0: f64, lat0: f64, lon1: f64, lat1: f64) -> Value {
    json!([[
        [lon0, lat0],
        [lon1, lat0],
        [lon1, lat1],
        [lon0, lat1],
        [lon0, lat0]
    ]])
}

/// Capacity split used by [`campus_geojson`]; the total is 945.
pub const SECTION_CAPACITIES: [u32; 3] = [315, 315, 315];

/// The fixture campus as a GeoJSON document.
pub fn campus_geojson() -> Value {
    campus_geojson_with_capacities(SECTION_CAPACITIES)
}

/// Same geometry with a caller-chosen capacity split; the declared total follows the split.
pub fn campus_geojson_with_capacities(capacities: [u32; 3]) -> Value {
    let m1 = [55.484, 25.280];
    let m2 = [55.488, 25.28275];
    let m3 = [55.484, 25.2855];
    let road = |from: u64, to: u64, pts: Vec<[f64; 2]>| {
        json!({
            "type": "Feature",
            "properties": { "kind": "road", "from": from, "to": to },
            "geometry": { "type": "LineString", "coordinates": pts },
        })
    };
    let gate = |id: u32, name: &str, at: [f64; 2], sections: &[u32]| {
        json!({
            "type": "Feature",
            "properties": { "kind": "gate", "gate_id": id, "name": name, "sections": sections },
            "geometry": { "type": "Point", "coordinates": at },
        })
    };
    let parking = |id: u32, name: &str, cap: u32, ring: Value| {
        json!({
            "type": "Feature",
            "properties": { "kind": "parking", "section_id": id, "name": name, "capacity": cap },
            "geometry": { "type": "Polygon", "coordinates": ring },
        })
    };
    let total: u32 = capacities.iter().sum();
    json!({
        "type": "FeatureCollection",
        "features": [
            {
                "type": "Feature",
                "properties": { "kind": "boundary", "total_capacity": total },
                "geometry": { "type": "LineString", "coordinates": [A, m1, B, m2, C, m3, D, A] },
            },
            road(1, 2, vec![A, m1, B]),
            road(2, 3, vec![B, m2, C]),
            road(3, 4, vec![C, m3, D]),
            road(4, 1, vec![D, A]),
            gate(1, "South Gate", [55.4825, 25.2800], &[1]),
            gate(2, "East Gate", [55.4880, 25.2820], &[1, 2]),
            gate(3, "North-East Gate", [55.4860, 25.2855], &[2]),
            gate(4, "North-West Gate", [55.4820, 25.2855], &[2, 3]),
            gate(5, "West Gate", [55.4800, 25.2830], &[3]),
            parking(1, "South Lots", capacities[0], rect(55.4835, 25.2808, 55.4865, 25.2822)),
            parking(2, "North Lots", capacities[1], rect(55.4840, 25.2832, 55.4870, 25.2845)),
            parking(3, "West Lots", capacities[2], rect(55.4808, 25.2815, 55.4830, 25.2840)),
        ],
    })
}

/// The fixture campus, parsed.
pub fn campus() -> Campus {
    campus_from_geojson(&campus_geojson()).expect("fixture campus parses")
}
