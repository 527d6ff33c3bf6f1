//! The four regression families behind one fit/predict contract.

pub mod adam;
pub mod forest;
pub mod linear;
pub mod lstm;
pub mod svr;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use adam::{adam_update, AdamState};
pub use forest::{fit_forest, ForestConfig, ForestParams, Node, Tree};
pub use linear::{fit_linear, LinearConfig, LinearParams, Regularization};
pub use lstm::{fit_lstm, EpochLoss, LstmConfig, LstmParams};
pub use svr::{fit_svr, solve_dual, DualSolution, Kernel, SvrConfig, SvrParams};

use crate::error::{Error, Result};
use crate::fingerprint::Fingerprinter;
use crate::linalg::Design;

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Linear,
    Svr,
    Rfr,
    Lstm,
}

impl Family {
    pub const ALL: [Family; 4] = [Family::Linear, Family::Svr, Family::Lstm, Family::Rfr];

    pub fn as_str(self) -> &'static str {
        match self {
            Family::Linear => "linear",
            Family::Svr => "svr",
            Family::Rfr => "rfr",
            Family::Lstm => "lstm",
        }
    }

    /// Row label used in comparison tables.
    pub fn label(self) -> &'static str {
        match self {
            Family::Linear => "Linear Regression",
            Family::Svr => "SVR",
            Family::Rfr => "RFR",
            Family::Lstm => "LSTM",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "linear" | "lr" => Ok(Family::Linear),
            "svr" => Ok(Family::Svr),
            "rfr" | "forest" => Ok(Family::Rfr),
            "lstm" => Ok(Family::Lstm),
            other => Err(Error::Argument(format!(
                "unknown model family `{other}` (expected linear, svr, rfr or lstm)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum Hyperparameters {
    Linear(LinearConfig),
    Svr(SvrConfig),
    Rfr(ForestConfig),
    Lstm(LstmConfig),
}

impl Hyperparameters {
    pub fn default_for(family: Family) -> Self {
        match family {
            Family::Linear => Hyperparameters::Linear(LinearConfig::default()),
            Family::Svr => Hyperparameters::Svr(SvrConfig::default()),
            Family::Rfr => Hyperparameters::Rfr(ForestConfig::default()),
            Family::Lstm => Hyperparameters::Lstm(LstmConfig::default()),
        }
    }

    pub fn family(&self) -> Family {
        match self {
            Hyperparameters::Linear(_) => Family::Linear,
            Hyperparameters::Svr(_) => Family::Svr,
            Hyperparameters::Rfr(_) => Family::Rfr,
            Hyperparameters::Lstm(_) => Family::Lstm,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum Params {
    Linear(LinearParams),
    Svr(SvrParams),
    Rfr(ForestParams),
    Lstm(LstmParams),
}

/// A fitted model artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionModel {
    pub format_version: u32,
    pub family: Family,
    pub hyperparameters: Hyperparameters,
    pub params: Params,
    pub columns: Vec<String>,
    /// Hash of the dataset layout the model was trained against, if any.
    pub feature_layout_hash: Option<String>,
    pub train_fingerprint: String,
    pub seed: u64,
}

/// Hash of everything a fit depends on.
pub fn train_fingerprint(design: &Design, y: &[f64], hp: &Hyperparameters, seed: u64) -> String {
    let mut f = Fingerprinter::new();
    f.json(&design.columns)
        .u64(design.x.nrows() as u64)
        .u64(design.x.ncols() as u64)
        .f64s(design.x.as_slice())
        .json(&design.series)
        .f64s(y)
        .json(hp)
        .u64(seed);
    f.finish()
}

pub fn fit(design: &Design, y: &[f64], hp: &Hyperparameters, seed: u64) -> Result<RegressionModel> {
    fit_with_validation(design, y, hp, seed, None)
}

/// Like [`fit`]; sequence models also record per-epoch loss on `validation`.
pub fn fit_with_validation(
    design: &Design,
    y: &[f64],
    hp: &Hyperparameters,
    seed: u64,
    validation: Option<(&Design, &[f64])>,
) -> Result<RegressionModel> {
    if y.len() != design.nrows() {
        return Err(Error::Argument(format!(
            "{} targets for {} rows",
            y.len(),
            design.nrows()
        )));
    }
    if y.iter().any(|v| !v.is_finite()) || design.x.as_slice().iter().any(|v| !v.is_finite()) {
        return Err(Error::Argument(
            "training data contains non-finite values".into(),
        ));
    }
    let params = match hp {
        Hyperparameters::Linear(c) => Params::Linear(fit_linear(&design.x, y, c)?),
        Hyperparameters::Svr(c) => Params::Svr(fit_svr(&design.x, y, c)?),
        Hyperparameters::Rfr(c) => Params::Rfr(fit_forest(&design.x, y, c, seed)?),
        Hyperparameters::Lstm(c) => Params::Lstm(fit_lstm(design, y, c, seed, validation)?),
    };
    Ok(RegressionModel {
        format_version: MODEL_FORMAT_VERSION,
        family: hp.family(),
        hyperparameters: hp.clone(),
        params,
        columns: design.columns.clone(),
        feature_layout_hash: None,
        train_fingerprint: train_fingerprint(design, y, hp, seed),
        seed,
    })
}

impl RegressionModel {
    pub fn with_layout_hash(mut self, hash: impl Into<String>) -> Self {
        self.feature_layout_hash = Some(hash.into());
        self
    }

    /// Raw predictions, one per row; no clamping.
    pub fn predict(&self, design: &Design) -> Result<Vec<f64>> {
        if design.columns != self.columns {
            let missing: Vec<&str> = self
                .columns
                .iter()
                .filter(|c| !design.columns.contains(c))
                .map(String::as_str)
                .collect();
            let extra: Vec<&str> = design
                .columns
                .iter()
                .filter(|c| !self.columns.contains(c))
                .map(String::as_str)
                .collect();
            return Err(Error::Schema(if missing.is_empty() && extra.is_empty() {
                format!("columns are reordered; expected {:?}", self.columns)
            } else {
                format!(
                    "layout mismatch: missing columns {missing:?}, unexpected columns {extra:?}"
                )
            }));
        }
        let rows = || design.x.rows_iter();
        Ok(match &self.params {
            Params::Linear(p) => rows().map(|r| p.predict_row(r)).collect(),
            Params::Svr(p) => rows().map(|r| p.predict_row(r)).collect(),
            Params::Rfr(p) => rows().map(|r| p.predict_row(r)).collect(),
            Params::Lstm(p) => p.predict(design),
        })
    }

    /// Stable identity of the fitted artifact.
    pub fn fingerprint(&self) -> String {
        crate::fingerprint::of_json(self)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(s)?;
        if m.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Schema(format!(
                "model format version {} is not supported (expected {MODEL_FORMAT_VERSION})",
                m.format_version
            )));
        }
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;

    fn toy() -> (Design, Vec<f64>) {
        let rows: Vec<Vec<f64>> = (0..24)
            .map(|i| vec![i as f64 / 6.0, ((i * 5) % 7) as f64 / 7.0])
            .collect();
        let y = rows.iter().map(|r| 0.3 * r[0] - 0.2 * r[1] + 0.1).collect();
        (Design::from_matrix(Matrix::from_rows(&rows).unwrap()), y)
    }

    #[test]
    fn linear_prediction_on_known_weights() {
        let m = RegressionModel {
            format_version: 1,
            family: Family::Linear,
            hyperparameters: Hyperparameters::default_for(Family::Linear),
            params: Params::Linear(LinearParams {
                weights: vec![2.0],
                bias: 1.0,
                regularization: Regularization::None,
            }),
            columns: vec!["x0".into()],
            feature_layout_hash: None,
            train_fingerprint: String::new(),
            seed: 0,
        };
        let d = Design::from_matrix(Matrix::new(1, 1, vec![3.0]).unwrap());
        assert_eq!(m.predict(&d).unwrap(), vec![7.0]);
    }

    #[test]
    fn every_family_round_trips_and_is_deterministic() {
        let (d, y) = toy();
        for fam in Family::ALL {
            let hp = match Hyperparameters::default_for(fam) {
                Hyperparameters::Rfr(c) => Hyperparameters::Rfr(ForestConfig { n_trees: 10, ..c }),
                Hyperparameters::Lstm(c) => Hyperparameters::Lstm(LstmConfig {
                    units: 4,
                    epochs: 3,
                    ..c
                }),
                h => h,
            };
            let m = fit(&d, &y, &hp, 7).unwrap();
            let p1 = m.predict(&d).unwrap();
            assert_eq!(p1, m.predict(&d).unwrap(), "{fam}");
            let back = RegressionModel::from_json(&m.to_json().unwrap()).unwrap();
            assert_eq!(back, m, "{fam}");
            assert_eq!(back.predict(&d).unwrap(), p1, "{fam}");
            assert_eq!(fit(&d, &y, &hp, 7).unwrap(), m, "{fam}");
        }
    }

    #[test]
    fn fingerprint_tracks_inputs() {
        let (d, y) = toy();
        let hp = Hyperparameters::default_for(Family::Linear);
        let a = train_fingerprint(&d, &y, &hp, 1);
        assert_eq!(a, train_fingerprint(&d, &y, &hp, 1));
        assert_ne!(a, train_fingerprint(&d, &y, &hp, 2));
        let mut y2 = y.clone();
        y2[3] += 1e-12;
        assert_ne!(a, train_fingerprint(&d, &y2, &hp, 1));
    }

    #[test]
    fn layout_mismatch_names_columns() {
        let (d, y) = toy();
        let m = fit(&d, &y, &Hyperparameters::default_for(Family::Linear), 0).unwrap();
        let mut other = d.clone();
        other.columns[1] = "segment_9".into();
        let err = m.predict(&other).unwrap_err().to_string();
        assert!(err.contains("x1") && err.contains("segment_9"), "{err}");
    }

    #[test]
    fn family_parses() {
        assert_eq!("RFR".parse::<Family>().unwrap(), Family::Rfr);
        assert!("knn".parse::<Family>().is_err());
    }
}
