use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub variable_pair: (String, String),
    pub n: usize,
    pub r: f64,
    pub rho: f64,
    /// Two-sided p-value of `rho`.
    pub p_value: f64,
}

fn check_pair(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::Argument(format!(
            "length mismatch: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 3 {
        return Err(Error::UndefinedCorrelation(format!(
            "need n >= 3, got {}",
            x.len()
        )));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::Argument("non-finite input".into()));
    }
    Ok(())
}

/// Pearson product-moment correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("constant input".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// 1-based ranks; tied values share the mean of the ranks they span.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Two-sided p-value for a rank correlation through the Student-t approximation
/// with `n - 2` degrees of freedom.
pub fn spearman_p_value(rho: f64, n: usize) -> Result<f64> {
    if n < 3 {
        return Err(Error::UndefinedCorrelation(format!("need n >= 3, got {n}")));
    }
    let df = (n - 2) as f64;
    let r2 = rho * rho;
    if r2 >= 1.0 {
        return Ok(f64::MIN_POSITIVE);
    }
    let t2 = r2 * df / (1.0 - r2);
    let p = beta_reg(df / 2.0, 0.5, df / (df + t2));
    Ok(p.clamp(f64::MIN_POSITIVE, 1.0))
}

/// Spearman rank correlation and its two-sided p-value.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    check_pair(x, y)?;
    let rho = pearson(&average_ranks(x), &average_ranks(y))?;
    Ok((rho, spearman_p_value(rho, x.len())?))
}

pub fn correlate(x_name: &str, x: &[f64], y_name: &str, y: &[f64]) -> Result<CorrelationReport> {
    let r = pearson(x, y)?;
    let (rho, p_value) = spearman(x, y)?;
    Ok(CorrelationReport {
        variable_pair: (x_name.to_string(), y_name.to_string()),
        n: x.len(),
        r,
        rho,
        p_value,
    })
}
