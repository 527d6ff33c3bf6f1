//! Modeling dataset: hourly influx/outflux aggregation, cleaning, attribute
//! selection, encoding and correlation analysis.

mod aggregate;
mod clean;
mod encode;
mod stats;

use std::collections::BTreeMap;
use std::io::{Read, Write};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spatial::{format_timestamp, parse_timestamp};

pub use aggregate::{
    aggregate_hourly, classify_movements, Aggregation, AggregationOptions, Direction, Movement,
    SectionOccupancy, StudyWindow,
};
pub use clean::{clean, CleanReport};
pub use encode::{
    encode_and_scale, encode_with_segments, DataSplit, Dataset, DatasetSidecar, FeatureEncoder,
    FeatureLayout, Scaler, NUMERIC_COLUMNS,
};
pub use stats::{average_ranks, correlate, pearson, spearman, spearman_p_value, CorrelationReport};

/// One (hour, segment) observation of the eight retained attributes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    /// Mean road distance from snapped observations to the segment's terminal gate.
    pub distance_m: f64,
    /// Start of the hour bucket.
    pub timestamp: DateTime<Utc>,
    pub travel_speed_kmh: f64,
    /// Influx: vehicles classified inbound in this hour.
    pub n_vehicles: u32,
    /// Outflux: vehicles classified outbound in this hour.
    pub n_vehicles_exit: u32,
    pub segment_no: u32,
    pub total_parking_space: u32,
    /// Vacant fraction in `[0, 1]`; NaN marks a missing target.
    pub availability: f64,
}

/// Attribute names of the raw records, in the order they are kept.
pub const RETAINED_ATTRIBUTES: [&str; 8] = [
    "Distance",
    "Timestamp",
    "Travel Speed",
    "No. of Vehicles",
    "No. of Vehicles exit",
    "No. Segment",
    "Total Parking Space",
    "Availability",
];

/// Projects a raw attribute record onto the eight retained attributes.
///
/// Extra attributes are ignored. An empty `Availability` value yields a missing
/// (NaN) target rather than an error.
pub fn select_features(raw: &BTreeMap<String, String>) -> Result<FeatureRow> {
    let get = |name: &str| -> Result<&str> {
        raw.get(name)
            .map(|s| s.trim())
            .ok_or_else(|| Error::Schema(format!("missing attribute `{name}`")))
    };
    let num = |name: &str| -> Result<f64> {
        let v = get(name)?;
        v.parse::<f64>()
            .map_err(|_| Error::Schema(format!("attribute `{name}` is not numeric: `{v}`")))
    };
    let count = |name: &str| -> Result<u32> {
        let v = num(name)?;
        if v < 0.0 || v.fract() != 0.0 || v > f64::from(u32::MAX) {
            return Err(Error::Schema(format!(
                "attribute `{name}` is not a count: {v}"
            )));
        }
        Ok(v as u32)
    };
    for name in RETAINED_ATTRIBUTES {
        get(name)?;
    }
    let availability = match get("Availability")? {
        "" => f64::NAN,
        _ => num("Availability")?,
    };
    Ok(FeatureRow {
        distance_m: num("Distance")?,
        timestamp: parse_timestamp(get("Timestamp")?).map_err(Error::Schema)?,
        travel_speed_kmh: num("Travel Speed")?,
        n_vehicles: count("No. of Vehicles")?,
        n_vehicles_exit: count("No. of Vehicles exit")?,
        segment_no: count("No. Segment")?,
        total_parking_space: count("Total Parking Space")?,
        availability,
    })
}

/// Vacant fraction of a section.
pub fn availability(capacity: u32, occupied: u32) -> Result<f64> {
    if capacity == 0 {
        return Err(Error::Domain("capacity must be positive".into()));
    }
    if occupied > capacity {
        return Err(Error::Domain(format!(
            "occupied {occupied} exceeds capacity {capacity}"
        )));
    }
    Ok(f64::from(capacity - occupied) / f64::from(capacity))
}

#[derive(Debug, Serialize, Deserialize)]
struct RowRecord {
    distance_m: f64,
    timestamp: String,
    travel_speed_kmh: f64,
    n_vehicles: u32,
    n_vehicles_exit: u32,
    segment_no: u32,
    total_parking_space: u32,
    availability: Option<f64>,
}

pub fn write_rows_csv<W: Write>(writer: W, rows: &[FeatureRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(RowRecord {
            distance_m: r.distance_m,
            timestamp: format_timestamp(&r.timestamp),
            travel_speed_kmh: r.travel_speed_kmh,
            n_vehicles: r.n_vehicles,
            n_vehicles_exit: r.n_vehicles_exit,
            segment_no: r.segment_no,
            total_parking_space: r.total_parking_space,
            availability: (!r.availability.is_nan()).then_some(r.availability),
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows_csv<R: Read>(reader: R) -> Result<Vec<FeatureRow>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for (i, rec) in rdr.deserialize::<RowRecord>().enumerate() {
        let rec = rec.map_err(|e| Error::Schema(format!("dataset row {i}: {e}")))?;
        out.push(FeatureRow {
            distance_m: rec.distance_m,
            timestamp: parse_timestamp(&rec.timestamp)
                .map_err(|e| Error::Schema(format!("dataset row {i}: {e}")))?,
            travel_speed_kmh: rec.travel_speed_kmh,
            n_vehicles: rec.n_vehicles,
            n_vehicles_exit: rec.n_vehicles_exit,
            segment_no: rec.segment_no,
            total_parking_space: rec.total_parking_space,
            availability: rec.availability.unwrap_or(f64::NAN),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw_record() -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let retained = [
            ("Distance", "120.5"),
            ("Timestamp", "2022-09-05 07:00:00"),
            ("Travel Speed", "23.1"),
            ("No. of Vehicles", "14"),
            ("No. of Vehicles exit", "3"),
            ("No. Segment", "2"),
            ("Total Parking Space", "315"),
            ("Availability", "0.62"),
        ];
        for (k, v) in retained {
            m.insert(k.to_string(), v.to_string());
        }
        let dropped = [
            "Road Distance",
            "Query Origin",
            "Query Destination",
            "Query",
            "Duration",
            "Duration In Traffic",
            "Route Name",
            "Origin Lat",
            "Origin Lon",
            "Destination Lat",
            "Destination Lon",
            "Departure Time",
            "Arrival Time",
            "Traffic Level",
            "Weather",
            "Temperature",
            "Day Name",
        ];
        for k in dropped {
            m.insert(k.to_string(), "x".to_string());
        }
        m
    }

    #[test]
    fn selects_eight_of_twenty_five() {
        let raw = raw_record();
        assert_eq!(raw.len(), 25);
        let row = select_features(&raw).unwrap();
        assert_eq!(row.segment_no, 2);
        assert_eq!(row.n_vehicles, 14);
        assert_eq!(row.n_vehicles_exit, 3);
        assert_eq!(row.total_parking_space, 315);
        assert_eq!(row.availability, 0.62);
        assert_eq!(
            row.timestamp,
            "2022-09-05T07:00:00Z".parse::<DateTime<Utc>>().unwrap()
        );
    }

    #[test]
    fn exactly_retained_attributes_is_identity() {
        let full = raw_record();
        let only: BTreeMap<String, String> = full
            .iter()
            .filter(|(k, _)| RETAINED_ATTRIBUTES.contains(&k.as_str()))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        assert_eq!(only.len(), 8);
        assert_eq!(
            select_features(&only).unwrap(),
            select_features(&full).unwrap()
        );
    }

    #[test]
    fn missing_availability_is_schema_error() {
        let mut raw = raw_record();
        raw.remove("Availability");
        let err = select_features(&raw).unwrap_err();
        assert!(
            matches!(&err, Error::Schema(m) if m.contains("Availability")),
            "{err}"
        );
    }

    #[test]
    fn availability_arithmetic() {
        assert_eq!(availability(945, 945).unwrap(), 0.0);
        assert_eq!(availability(945, 0).unwrap(), 1.0);
        let a = availability(315, 94).unwrap();
        assert!((a - 221.0 / 315.0).abs() < 1e-15);
        assert!((a - 0.701_587).abs() < 1e-6);
        assert!(matches!(availability(315, 316), Err(Error::Domain(_))));
        assert!(matches!(availability(0, 0), Err(Error::Domain(_))));
    }

    #[test]
    fn rows_csv_round_trips_missing_target() {
        let mut row = select_features(&raw_record()).unwrap();
        let mut missing = row.clone();
        missing.availability = f64::NAN;
        row.distance_m = 0.1 + 0.2;
        let mut buf = Vec::new();
        write_rows_csv(&mut buf, &[row.clone(), missing]).unwrap();
        let back = read_rows_csv(buf.as_slice()).unwrap();
        assert_eq!(back[0], row);
        assert!(back[1].availability.is_nan());
    }
}
