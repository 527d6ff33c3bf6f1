use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ServiceError;

/// Occupancy-rate cut points: low below `low_below`, high above `high_above`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Thresholds {
    pub low_below: f64,
    pub high_above: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            low_below: 0.5,
            high_above: 0.85,
        }
    }
}

/// Local hours during which arrivals can be predicted, `[start_hour, end_hour)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Horizon {
    pub start_hour: u32,
    pub end_hour: u32,
    pub utc_offset_hours: i32,
}

impl Default for Horizon {
    fn default() -> Self {
        Self {
            start_hour: 7,
            end_hour: 15,
            utc_offset_hours: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialOccupancy {
    pub section_id: u32,
    pub occupied: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub host: String,
    pub port: u16,
    pub model_path: PathBuf,
    pub sidecar_path: PathBuf,
    pub campus_path: PathBuf,
    pub thresholds: Thresholds,
    pub horizon: Horizon,
    pub snap_threshold_m: f64,
    pub initial_occupancy: Vec<InitialOccupancy>,
    /// Allowed browser origins; empty allows any.
    pub cors_origins: Vec<String>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            host: "127.0.0.1".into(),
            port: 8080,
            model_path: PathBuf::from("model.json"),
            sidecar_path: PathBuf::from("dataset.json"),
            campus_path: PathBuf::from("campus.geojson"),
            thresholds: Thresholds::default(),
            horizon: Horizon::default(),
            snap_threshold_m: parkcast_core::geodata::DEFAULT_SNAP_THRESHOLD_M,
            initial_occupancy: Vec::new(),
            cors_origins: Vec::new(),
        }
    }
}

impl ServiceConfig {
    /// Reads a `.toml` or `.json` file.
    pub fn from_file(path: &Path) -> Result<Self, ServiceError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ServiceError::Config(format!("cannot read {}: {e}", path.display())))?;
        let parsed = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => serde_json::from_str(&text).map_err(|e| e.to_string()),
            _ => toml::from_str(&text).map_err(|e| e.to_string()),
        };
        parsed.map_err(|e| ServiceError::Config(format!("{}: {e}", path.display())))
    }

    /// Applies `PARKCAST_*` overrides.
    pub fn apply_env(
        &mut self,
        lookup: impl Fn(&str) -> Option<String>,
    ) -> Result<(), ServiceError> {
        fn parse<T: std::str::FromStr>(name: &str, v: &str) -> Result<T, ServiceError> {
            v.parse()
                .map_err(|_| ServiceError::Config(format!("{name}={v} is not valid")))
        }
        if let Some(v) = lookup("PARKCAST_HOST") {
            self.host = v;
        }
        if let Some(v) = lookup("PARKCAST_PORT") {
            self.port = parse("PARKCAST_PORT", &v)?;
        }
        if let Some(v) = lookup("PARKCAST_MODEL") {
            self.model_path = v.into();
        }
        if let Some(v) = lookup("PARKCAST_SIDECAR") {
            self.sidecar_path = v.into();
        }
        if let Some(v) = lookup("PARKCAST_CAMPUS") {
            self.campus_path = v.into();
        }
        if let Some(v) = lookup("PARKCAST_LOW_THRESHOLD") {
            self.thresholds.low_below = parse("PARKCAST_LOW_THRESHOLD", &v)?;
        }
        if let Some(v) = lookup("PARKCAST_HIGH_THRESHOLD") {
            self.thresholds.high_above = parse("PARKCAST_HIGH_THRESHOLD", &v)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ServiceError> {
        let t = self.thresholds;
        if !(0.0 <= t.low_below && t.low_below <= t.high_above && t.high_above <= 1.0) {
            return Err(ServiceError::Config(format!(
                "thresholds need 0 <= low_below <= high_above <= 1, got {} and {}",
                t.low_below, t.high_above
            )));
        }
        let h = self.horizon;
        if h.start_hour >= h.end_hour || h.end_hour > 24 || h.utc_offset_hours.abs() > 14 {
            return Err(ServiceError::Config(format!(
                "horizon [{}, {}) with offset {} is invalid",
                h.start_hour, h.end_hour, h.utc_offset_hours
            )));
        }
        if !(self.snap_threshold_m > 0.0) {
            return Err(ServiceError::Config(
                "snap_threshold_m must be positive".into(),
            ));
        }
        Ok(())
    }
}
