use std::collections::BTreeMap;
use std::path::Path;

use chrono::NaiveDate;
use parkcast_core::evaltune::{SearchSpace, SplitMode, Strategy};
use parkcast_core::models::{Family, Hyperparameters};
use parkcast_core::synth::SynthSpec;
use parkcast_service::{InitialOccupancy, ServiceConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Explicit study window; without one the window spans the observed days.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowConfig {
    pub first_day: NaiveDate,
    pub days: u32,
    #[serde(default = "default_start_hour")]
    pub start_hour: u32,
    #[serde(default = "default_end_hour")]
    pub end_hour: u32,
}

fn default_start_hour() -> u32 {
    7
}

fn default_end_hour() -> u32 {
    15
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitKind {
    #[default]
    Chronological,
    SeededRandom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    pub train_ratio: f64,
    pub mode: SplitKind,
    /// Shuffle seed for `seeded-random`; the pipeline seed when unset.
    pub seed: Option<u64>,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train_ratio: 0.7,
            mode: SplitKind::Chronological,
            seed: None,
        }
    }
}

fn split_mode(kind: SplitKind, seed: Option<u64>, fallback: u64) -> SplitMode {
    match kind {
        SplitKind::Chronological => SplitMode::Chronological,
        SplitKind::SeededRandom => SplitMode::SeededRandom {
            seed: seed.unwrap_or(fallback),
        },
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyKind {
    #[default]
    Grid,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchConfig {
    pub cv_k: usize,
    pub cv_mode: SplitKind,
    pub cv_seed: Option<u64>,
    pub strategy: StrategyKind,
    /// Draws for random search.
    pub budget: usize,
    /// Per-family search spaces replacing the built-in grids.
    pub spaces: BTreeMap<Family, SearchSpace>,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            cv_k: 3,
            cv_mode: SplitKind::Chronological,
            cv_seed: None,
            strategy: StrategyKind::Grid,
            budget: 20,
            spaces: BTreeMap::new(),
        }
    }
}

/// Settings shared by all pipeline stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub snap_threshold_m: f64,
    pub daily_start_hour: u32,
    pub daily_end_hour: u32,
    pub window: Option<WindowConfig>,
    pub initial_occupancy: Vec<InitialOccupancy>,
    pub split: SplitConfig,
    pub search: SearchConfig,
    pub families: Vec<Family>,
    /// Base hyperparameters per family; unset families use the model defaults.
    pub models: BTreeMap<Family, Hyperparameters>,
    pub vehicle_scale: Option<f64>,
    pub synth: Option<SynthSpec>,
    pub service: ServiceConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            snap_threshold_m: 30.0,
            daily_start_hour: 7,
            daily_end_hour: 15,
            window: None,
            initial_occupancy: Vec::new(),
            split: SplitConfig::default(),
            search: SearchConfig::default(),
            families: Family::ALL.to_vec(),
            models: BTreeMap::new(),
            vehicle_scale: None,
            synth: None,
            service: ServiceConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// Reads TOML, or JSON when the file name ends in `.json`.
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::Validation(format!("cannot read config {}: {e}", path.display()))
        })?;
        let parsed = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| e.to_string())
        } else {
            toml::from_str(&text).map_err(|e| e.to_string())
        };
        parsed.map_err(|e| CliError::Validation(format!("config {}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Validation(m));
        if !(self.snap_threshold_m > 0.0) {
            return bad(format!(
                "snap_threshold_m must be positive, got {}",
                self.snap_threshold_m
            ));
        }
        if self.daily_start_hour >= self.daily_end_hour || self.daily_end_hour > 24 {
            return bad(format!(
                "daily hours [{}, {}) are invalid",
                self.daily_start_hour, self.daily_end_hour
            ));
        }
        if !(self.split.train_ratio > 0.0 && self.split.train_ratio < 1.0) {
            return bad(format!(
                "split.train_ratio must lie in (0, 1), got {}",
                self.split.train_ratio
            ));
        }
        if self.search.strategy == StrategyKind::Random && self.search.budget == 0 {
            return bad("search.budget must be positive for random search".into());
        }
        if self.search.cv_k < 2 {
            return bad(format!(
                "search.cv_k must be at least 2, got {}",
                self.search.cv_k
            ));
        }
        if self.families.is_empty() {
            return bad("families must name at least one model family".into());
        }
        for (family, hp) in &self.models {
            if hp.family() != *family {
                return bad(format!("models.{family} holds {} settings", hp.family()));
            }
        }
        if let Some(s) = self.vehicle_scale {
            if !(s > 0.0 && s.is_finite()) {
                return bad(format!("vehicle_scale must be positive, got {s}"));
            }
        }
        Ok(())
    }

    pub fn split_mode(&self) -> SplitMode {
        split_mode(self.split.mode, self.split.seed, self.seed)
    }

    pub fn cv_mode(&self) -> SplitMode {
        split_mode(self.search.cv_mode, self.search.cv_seed, self.seed)
    }

    pub fn strategy(&self) -> Strategy {
        match self.search.strategy {
            StrategyKind::Grid => Strategy::Grid,
            StrategyKind::Random => Strategy::Random {
                budget: self.search.budget,
            },
        }
    }

    pub fn initial_map(&self) -> BTreeMap<u32, u32> {
        self.initial_occupancy
            .iter()
            .map(|o| (o.section_id, o.occupied))
            .collect()
    }

    pub fn base(&self, family: Family) -> Hyperparameters {
        self.models
            .get(&family)
            .cloned()
            .unwrap_or_else(|| Hyperparameters::default_for(family))
    }
}
