use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::rmse;
use super::split::{cv_pairs, SplitMode};
use crate::error::{Error, Result};
use crate::linalg::Design;
use crate::models::{fit, Family, Hyperparameters, Kernel, Regularization};

/// A single hyperparameter value. `Null` stands for "unbounded" (e.g. tree depth).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Null,
    Int(i64),
    Float(f64),
    Text(String),
}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamValue::Null => f.write_str("none"),
            ParamValue::Int(v) => write!(f, "{v}"),
            ParamValue::Float(v) => write!(f, "{v}"),
            ParamValue::Text(s) => f.write_str(s),
        }
    }
}

impl ParamValue {
    fn as_f64(&self) -> Option<f64> {
        match *self {
            ParamValue::Int(v) => Some(v as f64),
            ParamValue::Float(v) => Some(v),
            _ => None,
        }
    }

    fn as_usize(&self) -> Option<usize> {
        match *self {
            ParamValue::Int(v) if v >= 0 => Some(v as usize),
            ParamValue::Float(v) if v >= 0.0 && v.fract() == 0.0 => Some(v as usize),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Domain {
    Values { values: Vec<ParamValue> },
    Uniform { low: f64, high: f64 },
    LogUniform { low: f64, high: f64 },
    IntRange { low: i64, high: i64 },
}

impl Domain {
    pub fn values<I: IntoIterator<Item = ParamValue>>(v: I) -> Self {
        Domain::Values {
            values: v.into_iter().collect(),
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> ParamValue {
        match self {
            Domain::Values { values } => values[rng.random_range(0..values.len())].clone(),
            Domain::Uniform { low, high } => ParamValue::Float(rng.random_range(*low..=*high)),
            Domain::LogUniform { low, high } => {
                ParamValue::Float(rng.random_range(low.ln()..=high.ln()).exp())
            }
            Domain::IntRange { low, high } => ParamValue::Int(rng.random_range(*low..=*high)),
        }
    }

    fn check(&self, name: &str) -> Result<()> {
        let ok = match self {
            Domain::Values { values } => !values.is_empty(),
            Domain::Uniform { low, high } => low <= high && low.is_finite() && high.is_finite(),
            Domain::LogUniform { low, high } => *low > 0.0 && low <= high && high.is_finite(),
            Domain::IntRange { low, high } => low <= high,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Argument(format!(
                "empty or invalid domain for `{name}`"
            )))
        }
    }
}

/// A named list of axes; the search space is a union of such blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubSpace {
    pub axes: Vec<(String, Domain)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub family: Family,
    pub subspaces: Vec<SubSpace>,
}

pub type Assignment = Vec<(String, ParamValue)>;

impl SearchSpace {
    pub fn grid(family: Family, axes: Vec<(&str, Vec<ParamValue>)>) -> Self {
        Self {
            family,
            subspaces: vec![SubSpace {
                axes: axes
                    .into_iter()
                    .map(|(n, v)| (n.to_string(), Domain::values(v)))
                    .collect(),
            }],
        }
    }

    /// Every grid cell, in lexicographic order with the first axis outermost;
    /// subspaces follow one another.
    pub fn cells(&self) -> Result<Vec<Assignment>> {
        if self.subspaces.is_empty() {
            return Err(Error::Argument("search space is empty".into()));
        }
        let mut out = Vec::new();
        for sub in &self.subspaces {
            let mut cells: Vec<Assignment> = vec![Vec::new()];
            for (name, dom) in &sub.axes {
                dom.check(name)?;
                let Domain::Values { values } = dom else {
                    return Err(Error::Argument(format!(
                        "axis `{name}` is a range, not a grid"
                    )));
                };
                cells = cells
                    .into_iter()
                    .flat_map(|c| {
                        values.iter().map(move |v| {
                            let mut c = c.clone();
                            c.push((name.clone(), v.clone()));
                            c
                        })
                    })
                    .collect();
            }
            out.extend(cells);
        }
        Ok(out)
    }

    /// `budget` draws: a subspace uniformly, then each axis from its domain.
    pub fn sample(&self, budget: usize, seed: u64) -> Result<Vec<Assignment>> {
        if budget == 0 {
            return Err(Error::Argument(
                "random search budget must be at least 1".into(),
            ));
        }
        if self.subspaces.is_empty() {
            return Err(Error::Argument("search space is empty".into()));
        }
        for sub in &self.subspaces {
            for (name, dom) in &sub.axes {
                dom.check(name)?;
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok((0..budget)
            .map(|_| {
                let sub = &self.subspaces[rng.random_range(0..self.subspaces.len())];
                sub.axes
                    .iter()
                    .map(|(n, d)| (n.clone(), d.sample(&mut rng)))
                    .collect()
            })
            .collect())
    }
}

fn bad(name: &str, v: &ParamValue) -> Error {
    Error::Argument(format!("invalid value `{v}` for hyperparameter `{name}`"))
}

/// Applies an assignment on top of `base`.
pub fn apply(base: &Hyperparameters, cell: &[(String, ParamValue)]) -> Result<Hyperparameters> {
    let mut hp = base.clone();
    for (name, v) in cell {
        let f = || v.as_f64().ok_or_else(|| bad(name, v));
        let u = || v.as_usize().ok_or_else(|| bad(name, v));
        match (&mut hp, name.as_str()) {
            (Hyperparameters::Linear(c), "penalty") => {
                let lambda = match c.regularization {
                    Regularization::None => 0.0,
                    Regularization::L1 { lambda } | Regularization::L2 { lambda } => lambda,
                };
                c.regularization = match v {
                    ParamValue::Text(s) if s == "none" => Regularization::None,
                    ParamValue::Null => Regularization::None,
                    ParamValue::Text(s) if s == "l1" => Regularization::L1 { lambda },
                    ParamValue::Text(s) if s == "l2" => Regularization::L2 { lambda },
                    _ => return Err(bad(name, v)),
                };
            }
            (Hyperparameters::Linear(c), "lambda") => {
                let l = f()?;
                c.regularization = match c.regularization {
                    Regularization::L1 { .. } => Regularization::L1 { lambda: l },
                    _ => Regularization::L2 { lambda: l },
                };
            }
            (Hyperparameters::Svr(c), "C") => c.c = f()?,
            (Hyperparameters::Svr(c), "epsilon") => c.epsilon = f()?,
            (Hyperparameters::Svr(c), "kernel") => {
                c.kernel = match v {
                    ParamValue::Text(s) if s == "linear" => Kernel::Linear,
                    ParamValue::Text(s) if s == "rbf" => match c.kernel {
                        Kernel::Rbf { gamma } => Kernel::Rbf { gamma },
                        Kernel::Linear => Kernel::Rbf { gamma: None },
                    },
                    _ => return Err(bad(name, v)),
                }
            }
            (Hyperparameters::Svr(c), "gamma") => {
                let g = match v {
                    ParamValue::Null => None,
                    _ => Some(f()?),
                };
                c.kernel = Kernel::Rbf { gamma: g };
            }
            (Hyperparameters::Rfr(c), "n_trees") => c.n_trees = u()?,
            (Hyperparameters::Rfr(c), "max_depth") => {
                c.max_depth = match v {
                    ParamValue::Null => None,
                    _ => Some(u()?),
                }
            }
            (Hyperparameters::Rfr(c), "min_samples_leaf") => c.min_samples_leaf = u()?,
            (Hyperparameters::Rfr(c), "max_features") => {
                c.max_features = match v {
                    ParamValue::Null => None,
                    _ => Some(u()?),
                }
            }
            (Hyperparameters::Lstm(c), "lookback") => c.lookback = u()?,
            (Hyperparameters::Lstm(c), "learning_rate") => c.learning_rate = f()?,
            (Hyperparameters::Lstm(c), "units") => c.units = u()?,
            (Hyperparameters::Lstm(c), "epochs") => c.epochs = u()?,
            (Hyperparameters::Lstm(c), "batch_size") => c.batch_size = u()?,
            (hp, _) => {
                return Err(Error::Argument(format!(
                    "unknown hyperparameter `{name}` for family {}",
                    hp.family()
                )))
            }
        }
    }
    Ok(hp)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub index: usize,
    pub params: Assignment,
    pub fold_rmse: Vec<f64>,
    pub mean_rmse: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub family: Family,
    pub best_index: usize,
    pub best_params: Assignment,
    pub best_hyperparameters: Hyperparameters,
    pub best_score: f64,
    pub table: Vec<CellResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOptions {
    pub cv_k: usize,
    pub mode: SplitMode,
    pub seed: u64,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self {
            cv_k: 3,
            mode: SplitMode::Chronological,
            seed: 0,
        }
    }
}

/// Mean validation RMSE of one configuration over the CV pairs.
pub fn cv_score(
    design: &Design,
    y: &[f64],
    hp: &Hyperparameters,
    pairs: &[(Vec<usize>, Vec<usize>)],
    seed: u64,
) -> Result<Vec<f64>> {
    pairs
        .iter()
        .map(|(tr, va)| {
            let ytr: Vec<f64> = tr.iter().map(|&i| y[i]).collect();
            let yva: Vec<f64> = va.iter().map(|&i| y[i]).collect();
            let model = fit(&design.select(tr), &ytr, hp, seed)?;
            let pred = model.predict(&design.select(va))?;
            if pred.iter().any(|p| !p.is_finite()) {
                return Err(Error::Search("non-finite validation prediction".into()));
            }
            rmse(&yva, &pred)
        })
        .collect()
}

fn evaluate(
    space: &SearchSpace,
    base: &Hyperparameters,
    cells: Vec<Assignment>,
    design: &Design,
    y: &[f64],
    opts: &SearchOptions,
) -> Result<SearchResult> {
    if base.family() != space.family {
        return Err(Error::Argument(format!(
            "base hyperparameters are for {}, space is for {}",
            base.family(),
            space.family
        )));
    }
    let pairs = cv_pairs(design.nrows(), opts.cv_k, opts.mode)?;
    let table: Vec<CellResult> = cells
        .into_par_iter()
        .enumerate()
        .map(|(index, params)| {
            let scored =
                apply(base, &params).and_then(|hp| cv_score(design, y, &hp, &pairs, opts.seed));
            match scored {
                Ok(fold_rmse) => {
                    let mean = fold_rmse.iter().sum::<f64>() / fold_rmse.len() as f64;
                    CellResult {
                        index,
                        params,
                        fold_rmse,
                        mean_rmse: Some(mean),
                        error: None,
                    }
                }
                Err(e) => CellResult {
                    index,
                    params,
                    fold_rmse: Vec::new(),
                    mean_rmse: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    let mut best: Option<(usize, f64)> = None;
    for c in &table {
        if let Some(s) = c.mean_rmse {
            if best.is_none_or(|(_, b)| s < b) {
                best = Some((c.index, s));
            }
        }
    }
    let Some((best_index, best_score)) = best else {
        let first = table
            .first()
            .and_then(|c| c.error.clone())
            .unwrap_or_default();
        return Err(Error::Search(format!(
            "all {} cells failed for {} (first error: {first})",
            table.len(),
            space.family
        )));
    };
    let best_params = table[best_index].params.clone();
    Ok(SearchResult {
        family: space.family,
        best_hyperparameters: apply(base, &best_params)?,
        best_index,
        best_params,
        best_score,
        table,
    })
}

/// Exhaustive search over the Cartesian product; ties go to the earliest cell.
pub fn grid_search(
    space: &SearchSpace,
    base: &Hyperparameters,
    design: &Design,
    y: &[f64],
    opts: &SearchOptions,
) -> Result<SearchResult> {
    let cells = space.cells()?;
    evaluate(space, base, cells, design, y, opts)
}

/// `budget` seeded draws from the space, scored like [`grid_search`].
pub fn random_search(
    space: &SearchSpace,
    base: &Hyperparameters,
    budget: usize,
    design: &Design,
    y: &[f64],
    opts: &SearchOptions,
) -> Result<SearchResult> {
    let cells = space.sample(budget, opts.seed)?;
    evaluate(space, base, cells, design, y, opts)
}

/// Renders the CV table as CSV: index, parameters, per-fold RMSE, mean, error.
pub fn cv_table_csv(result: &SearchResult) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["index", "params", "fold_rmse", "mean_rmse", "error"])?;
    for c in &result.table {
        let params = c
            .params
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(";");
        let folds = c
            .fold_rmse
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(";");
        w.write_record([
            c.index.to_string(),
            params,
            folds,
            c.mean_rmse.map(|v| v.to_string()).unwrap_or_default(),
            c.error.clone().unwrap_or_default(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn floats(v: &[f64]) -> Vec<ParamValue> {
    v.iter().map(|&x| ParamValue::Float(x)).collect()
}

fn text(s: &str) -> ParamValue {
    ParamValue::Text(s.to_string())
}

/// Version tag of [`default_space`].
pub const DEFAULT_GRID_VERSION: u32 = 1;

/// Default grids per family.
pub fn default_space(family: Family) -> SearchSpace {
    let sub = |axes: Vec<(&str, Vec<ParamValue>)>| SubSpace {
        axes: axes
            .into_iter()
            .map(|(n, v)| (n.to_string(), Domain::values(v)))
            .collect(),
    };
    let subspaces = match family {
        Family::Linear => vec![
            sub(vec![
                ("penalty", vec![text("l2")]),
                ("lambda", floats(&[0.0, 0.01, 0.1, 1.0])),
            ]),
            sub(vec![
                ("penalty", vec![text("l1")]),
                ("lambda", floats(&[0.001, 0.01, 0.1])),
            ]),
        ],
        Family::Svr => vec![
            sub(vec![
                ("kernel", vec![text("linear")]),
                ("C", floats(&[0.1, 1.0, 10.0])),
                ("epsilon", floats(&[0.01, 0.1])),
            ]),
            sub(vec![
                ("kernel", vec![text("rbf")]),
                ("C", floats(&[0.1, 1.0, 10.0])),
                ("epsilon", floats(&[0.01, 0.1])),
                ("gamma", floats(&[0.1, 1.0])),
            ]),
        ],
        Family::Rfr => vec![sub(vec![
            (
                "max_depth",
                vec![ParamValue::Int(4), ParamValue::Int(8), ParamValue::Null],
            ),
            (
                "min_samples_leaf",
                vec![ParamValue::Int(1), ParamValue::Int(2), ParamValue::Int(5)],
            ),
        ])],
        Family::Lstm => vec![sub(vec![
            (
                "lookback",
                vec![ParamValue::Int(2), ParamValue::Int(3), ParamValue::Int(4)],
            ),
            ("learning_rate", floats(&[1e-3, 1e-2])),
        ])],
    };
    SearchSpace { family, subspaces }
}
