//! Sensor-free parking availability forecasting: campus geometry, spatial join,
//! hourly feature construction, four regression families, tuning and reporting.

pub mod error;
pub mod evaltune;
pub mod features;
pub mod fingerprint;
pub mod fixtures;
pub mod geodata;
pub mod linalg;
pub mod models;
pub mod spatial;
pub mod synth;

pub use error::{Error, Result, Violation};
pub use features::{Dataset, FeatureRow};
pub use geodata::{Campus, GeoPoint};
pub use linalg::{Design, Matrix};
pub use spatial::{JoinedObservation, Segment, VehicleObservation};
