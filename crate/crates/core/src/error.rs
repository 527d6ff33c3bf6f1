use std::fmt;

/// A single broken invariant found while validating campus geometry.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Violation {
    /// Path of the offending field, e.g. `sections[2]`.
    pub field: String,
    /// Short rule name, e.g. `capacity sum`.
    pub rule: String,
    pub detail: String,
}

impl Violation {
    pub fn new(
        field: impl Into<String>,
        rule: impl Into<String>,
        detail: impl Into<String>,
    ) -> Self {
        Self {
            field: field.into(),
            rule: rule.into(),
            detail: detail.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {} ({})", self.field, self.rule, self.detail)
    }
}

fn join_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("validation failed: {}", join_violations(.0))]
    Validation(Vec<Violation>),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("gates {first} and {second} project to the same boundary position")]
    DegenerateGate { first: u32, second: u32 },

    #[error("point lies inside overlapping sections {0:?}")]
    AmbiguousSection(Vec<u32>),

    #[error("unknown {kind} id {id}")]
    Lookup { kind: &'static str, id: u32 },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("rank deficient system: {0}")]
    Rank(String),

    #[error("solver did not converge after {iterations} iterations (max KKT violation {max_violation:.3e})")]
    Convergence {
        iterations: usize,
        max_violation: f64,
    },

    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Divergence { epoch: usize },

    #[error("search failed: {0}")]
    Search(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
