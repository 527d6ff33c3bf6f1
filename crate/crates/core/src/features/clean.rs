use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::FeatureRow;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleanReport {
    pub input_rows: usize,
    pub duplicates: usize,
    pub missing_target: usize,
    pub out_of_range: usize,
    pub output_rows: usize,
}

fn row_key(r: &FeatureRow) -> [u64; 8] {
    [
        r.distance_m.to_bits(),
        r.timestamp.timestamp_nanos_opt().unwrap_or(i64::MIN) as u64,
        r.travel_speed_kmh.to_bits(),
        u64::from(r.n_vehicles),
        u64::from(r.n_vehicles_exit),
        u64::from(r.segment_no),
        u64::from(r.total_parking_space),
        r.availability.to_bits(),
    ]
}

/// Drops rows with a missing or out-of-range target, then exact duplicates
/// (keeping the first occurrence). Order of surviving rows is preserved.
pub fn clean(rows: &[FeatureRow]) -> (Vec<FeatureRow>, CleanReport) {
    let mut report = CleanReport {
        input_rows: rows.len(),
        ..Default::default()
    };
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(rows.len());
    for r in rows {
        if r.availability.is_nan() {
            report.missing_target += 1;
        } else if !(0.0..=1.0).contains(&r.availability) {
            report.out_of_range += 1;
        } else if !seen.insert(row_key(r)) {
            report.duplicates += 1;
        } else {
            out.push(r.clone());
        }
    }
    report.output_rows = out.len();
    (out, report)
}
