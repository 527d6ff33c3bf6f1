use std::collections::BTreeMap;

use chrono::{NaiveDate, Timelike};
use serde::{Deserialize, Serialize};

use super::FeatureRow;
use crate::error::{Error, Result};
use crate::fingerprint::of_json;
use crate::linalg::{Design, Matrix};

/// Numeric model inputs, in encoded column order. The one-hot segment block follows.
pub const NUMERIC_COLUMNS: [&str; 7] = [
    "distance_m",
    "hour_of_day",
    "day_index",
    "travel_speed_kmh",
    "n_vehicles",
    "n_vehicles_exit",
    "total_parking_space",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureLayout {
    pub numeric: Vec<String>,
    /// Number of segments `G`; one-hot columns are `segment_1..segment_G`.
    pub segments: u32,
    /// Day 0 of the `day_index` column.
    pub origin_date: NaiveDate,
}

impl FeatureLayout {
    pub fn new(segments: u32, origin_date: NaiveDate) -> Self {
        Self {
            numeric: NUMERIC_COLUMNS.iter().map(|s| s.to_string()).collect(),
            segments,
            origin_date,
        }
    }

    pub fn columns(&self) -> Vec<String> {
        self.numeric
            .iter()
            .cloned()
            .chain((1..=self.segments).map(|k| format!("segment_{k}")))
            .collect()
    }

    pub fn width(&self) -> usize {
        self.numeric.len() + self.segments as usize
    }

    pub fn hash(&self) -> String {
        of_json(self)
    }
}

/// Per-column standardization fitted on training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    /// Population standard deviation; `0` marks a zero-variance column.
    pub std: Vec<f64>,
}

impl Scaler {
    pub fn fit(x: &Matrix) -> Result<Self> {
        let n = x.nrows();
        if n == 0 {
            return Err(Error::Argument("cannot fit a scaler on zero rows".into()));
        }
        let mut mean = vec![0.0; x.ncols()];
        let mut std = vec![0.0; x.ncols()];
        for c in 0..x.ncols() {
            let col = x.column(c);
            let m = col.iter().sum::<f64>() / n as f64;
            let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64;
            let s = var.sqrt();
            mean[c] = m;
            std[c] = if s <= 1e-12 * m.abs().max(1.0) {
                0.0
            } else {
                s
            };
        }
        Ok(Self { mean, std })
    }

    pub fn transform(&self, row: &mut [f64]) {
        for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
            *v = if *s == 0.0 { 0.0 } else { (*v - m) / s };
        }
    }

    /// Inverse of [`Scaler::transform`]; zero-variance columns come back as their mean.
    pub fn inverse_transform(&self, row: &mut [f64]) {
        for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
            *v = if *s == 0.0 { *m } else { *v * s + m };
        }
    }
}

/// Fitted one-hot plus standardization encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureEncoder {
    pub layout: FeatureLayout,
    pub scaler: Scaler,
}

fn sort_rows(rows: &mut [FeatureRow]) {
    rows.sort_by(|a, b| (a.timestamp, a.segment_no).cmp(&(b.timestamp, b.segment_no)));
}

impl FeatureEncoder {
    /// Fits on training rows; `day_index` counts from the earliest training date.
    pub fn fit(train: &[FeatureRow], segments: u32) -> Result<Self> {
        let origin_date = train
            .iter()
            .map(|r| r.timestamp.date_naive())
            .min()
            .ok_or_else(|| Error::Argument("training set is empty".into()))?;
        let layout = FeatureLayout::new(segments, origin_date);
        let raw: Vec<Vec<f64>> = train.iter().map(|r| raw_numeric(&layout, r)).collect();
        let scaler = Scaler::fit(&Matrix::from_rows(&raw)?)?;
        Ok(Self { layout, scaler })
    }

    pub fn encode_row(&self, row: &FeatureRow) -> Result<Vec<f64>> {
        if row.segment_no == 0 || row.segment_no > self.layout.segments {
            return Err(Error::Argument(format!(
                "segment {} outside 1..={}",
                row.segment_no, self.layout.segments
            )));
        }
        let mut out = raw_numeric(&self.layout, row);
        self.scaler.transform(&mut out);
        let mut onehot = vec![0.0; self.layout.segments as usize];
        onehot[row.segment_no as usize - 1] = 1.0;
        out.extend(onehot);
        Ok(out)
    }

    /// Encodes rows in the given order.
    pub fn encode(&self, rows: &[FeatureRow]) -> Result<Design> {
        let encoded = rows
            .iter()
            .map(|r| self.encode_row(r))
            .collect::<Result<Vec<_>>>()?;
        let x = if encoded.is_empty() {
            Matrix::zeros(0, self.layout.width())
        } else {
            Matrix::from_rows(&encoded)?
        };
        Design::with_series(
            self.layout.columns(),
            x,
            rows.iter().map(|r| r.segment_no).collect(),
        )
    }

    /// Recovers the unscaled numeric block of an encoded row.
    pub fn decode_numeric(&self, encoded: &[f64]) -> Vec<f64> {
        let mut v = encoded[..self.layout.numeric.len()].to_vec();
        self.scaler.inverse_transform(&mut v);
        v
    }
}

/// Unscaled numeric features of a row, in [`NUMERIC_COLUMNS`] order.
pub(crate) fn raw_numeric(layout: &FeatureLayout, r: &FeatureRow) -> Vec<f64> {
    let day = (r.timestamp.date_naive() - layout.origin_date).num_days() as f64;
    vec![
        r.distance_m,
        f64::from(r.timestamp.hour()),
        day,
        r.travel_speed_kmh,
        f64::from(r.n_vehicles),
        f64::from(r.n_vehicles_exit),
        f64::from(r.total_parking_space),
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataSplit {
    pub rows: Vec<FeatureRow>,
    pub design: Design,
    pub target: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub encoder: FeatureEncoder,
    pub train: DataSplit,
    pub test: DataSplit,
}

/// Fits the encoder on `train` and applies it to both splits. Each split is
/// ordered by (timestamp, segment). `G` is the largest segment number seen.
pub fn encode_and_scale(train: &[FeatureRow], test: &[FeatureRow]) -> Result<Dataset> {
    let segments = train
        .iter()
        .chain(test)
        .map(|r| r.segment_no)
        .max()
        .unwrap_or(0);
    encode_with_segments(train, test, segments)
}

pub fn encode_with_segments(
    train: &[FeatureRow],
    test: &[FeatureRow],
    segments: u32,
) -> Result<Dataset> {
    let mut train = train.to_vec();
    let mut test = test.to_vec();
    sort_rows(&mut train);
    sort_rows(&mut test);
    let encoder = FeatureEncoder::fit(&train, segments)?;
    let split = |rows: Vec<FeatureRow>| -> Result<DataSplit> {
        Ok(DataSplit {
            design: encoder.encode(&rows)?,
            target: rows.iter().map(|r| r.availability).collect(),
            rows,
        })
    };
    let train = split(train)?;
    let test = split(test)?;
    Ok(Dataset {
        encoder,
        train,
        test,
    })
}

/// JSON document persisted next to the dataset CSVs; models are served against it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSidecar {
    pub format_version: u32,
    pub layout: FeatureLayout,
    pub layout_hash: String,
    pub scaler: Scaler,
    pub train_rows: usize,
    pub test_rows: usize,
    pub provenance: BTreeMap<String, String>,
}

impl DatasetSidecar {
    pub fn new(ds: &Dataset, provenance: BTreeMap<String, String>) -> Self {
        Self {
            format_version: 1,
            layout_hash: ds.encoder.layout.hash(),
            layout: ds.encoder.layout.clone(),
            scaler: ds.encoder.scaler.clone(),
            train_rows: ds.train.rows.len(),
            test_rows: ds.test.rows.len(),
            provenance,
        }
    }

    pub fn encoder(&self) -> Result<FeatureEncoder> {
        if self.layout.hash() != self.layout_hash {
            return Err(Error::Schema(format!(
                "sidecar layout hash {} does not match its layout ({})",
                self.layout_hash,
                self.layout.hash()
            )));
        }
        Ok(FeatureEncoder {
            layout: self.layout.clone(),
            scaler: self.scaler.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{DateTime, Duration, Utc};

    fn rows(n: usize) -> Vec<FeatureRow> {
        let t0: DateTime<Utc> = "2022-09-05T07:00:00Z".parse().unwrap();
        (0..n)
            .map(|i| FeatureRow {
                distance_m: 10.0 * i as f64 + 3.0,
                timestamp: t0 + Duration::hours((i / 5) as i64),
                travel_speed_kmh: 15.0 + (i % 7) as f64,
                n_vehicles: (i % 4) as u32,
                n_vehicles_exit: (i % 3) as u32,
                segment_no: (i % 5) as u32 + 1,
                total_parking_space: 315,
                availability: 0.5,
            })
            .collect()
    }

    #[test]
    fn constant_column_scales_to_zero() {
        let ds = encode_and_scale(&rows(15), &rows(5)).unwrap();
        let c = ds
            .train
            .design
            .columns
            .iter()
            .position(|c| c == "total_parking_space")
            .unwrap();
        assert!(ds.train.design.x.column(c).iter().all(|v| *v == 0.0));
        assert!(ds.train.design.x.as_slice().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn one_hot_block() {
        let ds = encode_and_scale(&rows(10), &[]).unwrap();
        assert_eq!(ds.train.design.x.ncols(), 12);
        let r = ds
            .train
            .rows
            .iter()
            .position(|r| r.segment_no == 2)
            .unwrap();
        assert_eq!(&ds.train.design.x.row(r)[7..], &[0.0, 1.0, 0.0, 0.0, 0.0]);
        assert_eq!(ds.train.design.series[r], 2);
    }

    #[test]
    fn unscale_inverts_scale() {
        let train = rows(20);
        let enc = FeatureEncoder::fit(&train, 5).unwrap();
        for r in &train {
            let raw = raw_numeric(&enc.layout, r);
            let back = enc.decode_numeric(&enc.encode_row(r).unwrap());
            for (a, b) in raw.iter().zip(&back) {
                assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn test_rows_use_training_statistics() {
        let train = rows(10);
        let mut test = rows(10);
        for r in &mut test {
            r.distance_m += 1000.0;
        }
        let ds = encode_and_scale(&train, &test).unwrap();
        let mean: f64 = ds.test.design.x.column(0).iter().sum::<f64>() / 10.0;
        assert!(mean > 10.0);
    }

    #[test]
    fn sidecar_round_trip_checks_hash() {
        let ds = encode_and_scale(&rows(10), &rows(3)).unwrap();
        let mut side = DatasetSidecar::new(&ds, BTreeMap::new());
        let json = serde_json::to_string(&side).unwrap();
        let back: DatasetSidecar = serde_json::from_str(&json).unwrap();
        assert_eq!(back.encoder().unwrap(), ds.encoder);
        side.layout.segments = 4;
        assert!(matches!(side.encoder(), Err(Error::Schema(_))));
    }

    #[test]
    fn unknown_segment_rejected() {
        let enc = FeatureEncoder::fit(&rows(5), 5).unwrap();
        let mut r = rows(1).remove(0);
        r.segment_no = 6;
        assert!(matches!(enc.encode_row(&r), Err(Error::Argument(_))));
    }
}
