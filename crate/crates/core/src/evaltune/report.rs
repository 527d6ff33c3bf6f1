use serde::{Deserialize, Serialize};

use super::search::Assignment;
use crate::error::Result;
use crate::models::{Family, Hyperparameters};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportEntry {
    pub model: String,
    pub family: Option<Family>,
    pub rmse: f64,
    pub mae: f64,
    pub r2: f64,
    pub hyperparameters: Option<Hyperparameters>,
    /// Values picked by the search.
    pub chosen: Assignment,
    /// Settings not covered by the search, as `name=value`.
    pub defaults: Vec<String>,
    pub cv_rmse: Option<f64>,
    pub rmse_vehicles: Option<f64>,
    pub mae_vehicles: Option<f64>,
}

impl ReportEntry {
    /// A bare metrics row.
    pub fn metrics(model: impl Into<String>, rmse: f64, mae: f64, r2: f64) -> Self {
        Self {
            model: model.into(),
            family: None,
            rmse,
            mae,
            r2,
            hyperparameters: None,
            chosen: Vec::new(),
            defaults: Vec::new(),
            cv_rmse: None,
            rmse_vehicles: None,
            mae_vehicles: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyFailure {
    pub family: Family,
    pub error: String,
}

/// One test-set evaluation; the log proves each family was scored once.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestEvaluation {
    pub family: Family,
    pub model_fingerprint: String,
    pub test_fingerprint: String,
    pub rows: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub dataset_fingerprint: String,
    pub entries: Vec<ReportEntry>,
    pub failures: Vec<FamilyFailure>,
    pub vehicle_scale: Option<f64>,
    pub grid_version: Option<u32>,
    pub test_log: Vec<TestEvaluation>,
}

impl EvaluationReport {
    pub fn from_entries(entries: Vec<ReportEntry>) -> Self {
        let mut r = Self {
            entries,
            ..Default::default()
        };
        r.sort();
        r
    }

    /// Worst RMSE first, so the best model closes the table.
    pub fn sort(&mut self) {
        self.entries.sort_by(|a, b| {
            b.rmse
                .total_cmp(&a.rmse)
                .then_with(|| a.model.cmp(&b.model))
        });
    }

    /// Aligned `Model | RMSE | MAE | R²` table with three decimals.
    pub fn render_text(&self) -> String {
        let header = ["Model", "RMSE", "MAE", "R²"];
        let mut entries: Vec<&ReportEntry> = self.entries.iter().collect();
        entries.sort_by(|a, b| {
            b.rmse
                .total_cmp(&a.rmse)
                .then_with(|| a.model.cmp(&b.model))
        });
        let rows: Vec<[String; 4]> = entries
            .iter()
            .map(|e| {
                [
                    e.model.clone(),
                    format!("{:.3}", e.rmse),
                    format!("{:.3}", e.mae),
                    format!("{:.3}", e.r2),
                ]
            })
            .collect();
        let mut widths = header.map(|h| h.chars().count());
        for r in &rows {
            for (w, cell) in widths.iter_mut().zip(r) {
                *w = (*w).max(cell.chars().count());
            }
        }
        let line = |cells: [&str; 4]| {
            let s = format!(
                "{:<w0$} | {:>w1$} | {:>w2$} | {:>w3$}",
                cells[0],
                cells[1],
                cells[2],
                cells[3],
                w0 = widths[0],
                w1 = widths[1],
                w2 = widths[2],
                w3 = widths[3],
            );
            s.trim_end().to_string()
        };
        let mut out = String::new();
        out.push_str(&line(header));
        out.push('\n');
        let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
        out.push_str(&format!(
            "{}-+-{}-+-{}-+-{}",
            rule[0], rule[1], rule[2], rule[3]
        ));
        out.push('\n');
        for r in &rows {
            out.push_str(&line([&r[0], &r[1], &r[2], &r[3]]));
            out.push('\n');
        }
        out
    }

    pub fn render_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}
