//! Splitting, cross-validation, hyperparameter search, metrics and comparison reports.

pub mod metrics;
pub mod report;
pub mod search;
pub mod split;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use metrics::{denormalize_error, mae, r2, rmse};
pub use report::{EvaluationReport, FamilyFailure, ReportEntry, TestEvaluation};
pub use search::{
    apply, cv_score, cv_table_csv, default_space, grid_search, random_search, Assignment,
    CellResult, Domain, ParamValue, SearchOptions, SearchResult, SearchSpace, SubSpace,
    DEFAULT_GRID_VERSION,
};
pub use split::{cv_pairs, kfold, train_test_split, SplitMode, SplitPlan};

use crate::error::Result;
use crate::features::{encode_and_scale, Dataset, FeatureRow};
use crate::fingerprint::Fingerprinter;
use crate::linalg::Design;
use crate::models::{fit_with_validation, Family, Hyperparameters, RegressionModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "lowercase")]
pub enum Strategy {
    Grid,
    Random { budget: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareOptions {
    pub families: Vec<Family>,
    /// Per-family search spaces; missing families use [`default_space`].
    pub spaces: BTreeMap<Family, SearchSpace>,
    /// Per-family base settings; missing families use the model defaults.
    pub base: BTreeMap<Family, Hyperparameters>,
    pub strategy: Strategy,
    pub search: SearchOptions,
    /// Vehicles per unit of availability error; no default on purpose.
    pub vehicle_scale: Option<f64>,
}

impl Default for CompareOptions {
    fn default() -> Self {
        Self {
            families: Family::ALL.to_vec(),
            spaces: BTreeMap::new(),
            base: BTreeMap::new(),
            strategy: Strategy::Grid,
            search: SearchOptions::default(),
            vehicle_scale: None,
        }
    }
}

pub struct Comparison {
    pub report: EvaluationReport,
    pub models: Vec<RegressionModel>,
    pub searches: Vec<SearchResult>,
}

pub fn design_fingerprint(design: &Design, y: &[f64]) -> String {
    let mut f = Fingerprinter::new();
    f.json(&design.columns)
        .f64s(design.x.as_slice())
        .json(&design.series)
        .f64s(y);
    f.finish()
}

pub fn dataset_fingerprint(ds: &Dataset) -> String {
    let mut f = Fingerprinter::new();
    f.str(&design_fingerprint(&ds.train.design, &ds.train.target))
        .str(&design_fingerprint(&ds.test.design, &ds.test.target));
    f.finish()
}

/// Orders rows by (hour, segment), splits them and fits the encoder on the training part.
pub fn split_dataset(
    rows: &[FeatureRow],
    train_ratio: f64,
    mode: SplitMode,
) -> Result<(Dataset, SplitPlan)> {
    let mut rows = rows.to_vec();
    rows.sort_by(|a, b| {
        a.timestamp
            .cmp(&b.timestamp)
            .then(a.segment_no.cmp(&b.segment_no))
    });
    let plan = train_test_split(rows.len(), train_ratio, mode)?;
    let pick = |idx: &[usize]| idx.iter().map(|&i| rows[i].clone()).collect::<Vec<_>>();
    Ok((
        encode_and_scale(&pick(&plan.train), &pick(&plan.test))?,
        plan,
    ))
}

fn field_of(param: &str) -> &str {
    match param {
        "C" => "c",
        "penalty" | "lambda" => "regularization",
        "gamma" => "kernel",
        other => other,
    }
}

/// `name=value` for every setting the search did not touch.
pub fn defaults_taken(hp: &Hyperparameters, searched: &[(String, ParamValue)]) -> Vec<String> {
    let touched: Vec<&str> = searched.iter().map(|(n, _)| field_of(n)).collect();
    let value = serde_json::to_value(hp).unwrap_or_default();
    let mut out = Vec::new();
    if let Some(obj) = value.as_object() {
        for (k, v) in obj {
            if k != "family" && !touched.contains(&k.as_str()) {
                out.push(format!("{k}={v}"));
            }
        }
    }
    out
}

/// Tunes each family on the training split, refits the best configuration on the
/// whole training split and scores it once on the test split.
pub fn compare_models(ds: &Dataset, opts: &CompareOptions) -> Comparison {
    let train = &ds.train;
    let test = &ds.test;
    let mut report = EvaluationReport {
        dataset_fingerprint: dataset_fingerprint(ds),
        vehicle_scale: opts.vehicle_scale,
        grid_version: Some(DEFAULT_GRID_VERSION),
        ..Default::default()
    };
    let test_fp = design_fingerprint(&test.design, &test.target);
    let mut models = Vec::new();
    let mut searches = Vec::new();
    for &family in &opts.families {
        let outcome = (|| -> Result<(ReportEntry, RegressionModel, SearchResult)> {
            let space = opts
                .spaces
                .get(&family)
                .cloned()
                .unwrap_or_else(|| default_space(family));
            let base = opts
                .base
                .get(&family)
                .cloned()
                .unwrap_or_else(|| Hyperparameters::default_for(family));
            let found = match opts.strategy {
                Strategy::Grid => {
                    grid_search(&space, &base, &train.design, &train.target, &opts.search)?
                }
                Strategy::Random { budget } => random_search(
                    &space,
                    &base,
                    budget,
                    &train.design,
                    &train.target,
                    &opts.search,
                )?,
            };
            let hp = found.best_hyperparameters.clone();
            let model =
                fit_with_validation(&train.design, &train.target, &hp, opts.search.seed, None)?
                    .with_layout_hash(ds.encoder.layout.hash());
            let pred = model.predict(&test.design)?;
            let (e_rmse, e_mae) = (rmse(&test.target, &pred)?, mae(&test.target, &pred)?);
            let scale = |v: f64| {
                opts.vehicle_scale
                    .map(|s| denormalize_error(v, s))
                    .transpose()
            };
            let entry = ReportEntry {
                model: family.label().to_string(),
                family: Some(family),
                rmse: e_rmse,
                mae: e_mae,
                r2: r2(&test.target, &pred)?,
                defaults: defaults_taken(&hp, &found.best_params),
                hyperparameters: Some(hp),
                chosen: found.best_params.clone(),
                cv_rmse: Some(found.best_score),
                rmse_vehicles: scale(e_rmse)?,
                mae_vehicles: scale(e_mae)?,
            };
            Ok((entry, model, found))
        })();
        match outcome {
            Ok((entry, model, found)) => {
                report.test_log.push(TestEvaluation {
                    family,
                    model_fingerprint: model.fingerprint(),
                    test_fingerprint: test_fp.clone(),
                    rows: test.target.len(),
                });
                report.entries.push(entry);
                models.push(model);
                searches.push(found);
            }
            Err(e) => report.failures.push(FamilyFailure {
                family,
                error: e.to_string(),
            }),
        }
    }
    report.sort();
    Comparison {
        report,
        models,
        searches,
    }
}
