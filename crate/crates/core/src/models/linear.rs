use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky_solve, dot, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Regularization {
    None,
    L1 { lambda: f64 },
    L2 { lambda: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearConfig {
    pub regularization: Regularization,
    /// Lasso stopping tolerance on the duality gap of the per-sample objective.
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for LinearConfig {
    fn default() -> Self {
        Self {
            regularization: Regularization::L2 { lambda: 0.01 },
            tol: 1e-8,
            max_sweeps: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearParams {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub regularization: Regularization,
}

impl LinearParams {
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        dot(&self.weights, x) + self.bias
    }
}

struct Centered {
    xc: Matrix,
    yc: Vec<f64>,
    x_mean: Vec<f64>,
    y_mean: f64,
}

fn center(x: &Matrix, y: &[f64]) -> Centered {
    let (n, p) = (x.nrows(), x.ncols());
    let x_mean: Vec<f64> = (0..p)
        .map(|j| x.column(j).iter().sum::<f64>() / n as f64)
        .collect();
    let y_mean = y.iter().sum::<f64>() / n as f64;
    let mut xc = x.clone();
    for r in 0..n {
        for (v, m) in xc.row_mut(r).iter_mut().zip(&x_mean) {
            *v -= m;
        }
    }
    Centered {
        xc,
        yc: y.iter().map(|v| v - y_mean).collect(),
        x_mean,
        y_mean,
    }
}

/// Least squares with optional L1 or L2 penalty; the intercept is never penalized.
///
/// Penalized objectives: `(1/2n)|r|^2 + lambda |w|_1` for L1 and
/// `|r|^2 + lambda |w|^2` for L2.
pub fn fit_linear(x: &Matrix, y: &[f64], cfg: &LinearConfig) -> Result<LinearParams> {
    let n = x.nrows();
    if n < 2 {
        return Err(Error::Argument(format!(
            "linear fit needs at least 2 rows, got {n}"
        )));
    }
    if y.len() != n {
        return Err(Error::Argument(format!("{} targets for {n} rows", y.len())));
    }
    let c = center(x, y);
    let weights = match cfg.regularization {
        Regularization::None => normal_equations(&c, 0.0)?,
        Regularization::L2 { lambda } => {
            if lambda < 0.0 || !lambda.is_finite() {
                return Err(Error::Argument(format!(
                    "L2 lambda must be >= 0, got {lambda}"
                )));
            }
            normal_equations(&c, lambda)?
        }
        Regularization::L1 { lambda } => {
            if lambda < 0.0 || !lambda.is_finite() {
                return Err(Error::Argument(format!(
                    "L1 lambda must be >= 0, got {lambda}"
                )));
            }
            lasso(&c.xc, &c.yc, lambda, cfg.tol, cfg.max_sweeps)?
        }
    };
    let bias = c.y_mean - dot(&c.x_mean, &weights);
    if weights.iter().any(|w| !w.is_finite()) || !bias.is_finite() {
        return Err(Error::Rank("non-finite weights".into()));
    }
    Ok(LinearParams {
        weights,
        bias,
        regularization: cfg.regularization,
    })
}

fn normal_equations(c: &Centered, lambda: f64) -> Result<Vec<f64>> {
    let p = c.xc.ncols();
    let mut a = Matrix::zeros(p, p);
    let mut b = vec![0.0; p];
    for (row, yv) in c.xc.rows_iter().zip(&c.yc) {
        for i in 0..p {
            b[i] += row[i] * yv;
            for j in i..p {
                let v = a.get(i, j) + row[i] * row[j];
                a.set(i, j, v);
            }
        }
    }
    for i in 0..p {
        for j in 0..i {
            a.set(i, j, a.get(j, i));
        }
        a.set(i, i, a.get(i, i) + lambda);
    }
    cholesky_solve(&a, &b).ok_or_else(|| {
        Error::Rank(format!(
            "normal equations are singular (lambda = {lambda}); add an L2 penalty or drop collinear columns"
        ))
    })
}

fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

/// Duality gap of `(1/2n)|y - Xw|^2 + lambda |w|_1` at `w` with residual `r`.
pub(crate) fn lasso_gap(x: &Matrix, y: &[f64], w: &[f64], r: &[f64], lambda: f64) -> f64 {
    let n = x.nrows() as f64;
    let alpha = lambda * n;
    let xtr_inf = (0..x.ncols())
        .map(|j| {
            x.rows_iter()
                .zip(r)
                .map(|(row, ri)| row[j] * ri)
                .sum::<f64>()
                .abs()
        })
        .fold(0.0, f64::max);
    let r2 = dot(r, r);
    let (scale, gap) = if xtr_inf > alpha {
        let s = alpha / xtr_inf;
        (s, 0.5 * (r2 + r2 * s * s))
    } else {
        (1.0, r2)
    };
    let l1: f64 = w.iter().map(|v| v.abs()).sum();
    (gap + alpha * l1 - scale * dot(r, y)) / n
}

fn lasso(x: &Matrix, y: &[f64], lambda: f64, tol: f64, max_sweeps: usize) -> Result<Vec<f64>> {
    let (n, p) = (x.nrows(), x.ncols());
    let cols: Vec<Vec<f64>> = (0..p).map(|j| x.column(j)).collect();
    let norms: Vec<f64> = cols.iter().map(|c| dot(c, c)).collect();
    let alpha = lambda * n as f64;
    let mut w = vec![0.0; p];
    let mut r = y.to_vec();
    let mut gap = f64::INFINITY;
    for _ in 0..max_sweeps {
        for j in 0..p {
            if norms[j] == 0.0 {
                continue;
            }
            let old = w[j];
            let rho = dot(&cols[j], &r) + norms[j] * old;
            let new = soft_threshold(rho, alpha) / norms[j];
            if new != old {
                let d = new - old;
                for (ri, xi) in r.iter_mut().zip(&cols[j]) {
                    *ri -= d * xi;
                }
                w[j] = new;
            }
        }
        gap = lasso_gap(x, y, &w, &r, lambda);
        if gap <= tol {
            return Ok(w);
        }
    }
    Err(Error::Convergence {
        iterations: max_sweeps,
        max_violation: gap,
    })
}
