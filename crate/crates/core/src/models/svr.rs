use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Kernel {
    Linear,
    /// `exp(-gamma |a - b|^2)`; `None` means `1 / (p * var(X))` from the training matrix.
    Rbf {
        gamma: Option<f64>,
    },
}

impl Kernel {
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Kernel::Linear => dot(a, b),
            Kernel::Rbf { gamma } => {
                let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                (-gamma.unwrap_or(1.0) * d2).exp()
            }
        }
    }

    /// Fills in the default `gamma` from the training matrix.
    pub fn resolve(self, x: &Matrix) -> Kernel {
        match self {
            Kernel::Rbf { gamma: None } => {
                let data = x.as_slice();
                let n = data.len().max(1) as f64;
                let m = data.iter().sum::<f64>() / n;
                let var = data.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
                let g = if var > 0.0 {
                    1.0 / (x.ncols() as f64 * var)
                } else {
                    1.0
                };
                Kernel::Rbf { gamma: Some(g) }
            }
            k => k,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvrConfig {
    pub c: f64,
    pub epsilon: f64,
    pub kernel: Kernel,
    /// Stopping tolerance on the maximal KKT violating pair.
    pub tol: f64,
    /// The solver gives up after `max_sweeps * n` pair updates.
    pub max_sweeps: usize,
}

impl Default for SvrConfig {
    fn default() -> Self {
        Self {
            c: 1.0,
            epsilon: 0.1,
            kernel: Kernel::Rbf { gamma: None },
            tol: 1e-3,
            max_sweeps: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvrParams {
    pub support_indices: Vec<usize>,
    pub support_vectors: Matrix,
    /// `alpha_i - alpha_i*` per support vector.
    pub dual_coef: Vec<f64>,
    pub bias: f64,
    pub kernel: Kernel,
    pub c: f64,
    pub epsilon: f64,
}

impl SvrParams {
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        self.support_vectors
            .rows_iter()
            .zip(&self.dual_coef)
            .map(|(sv, a)| a * self.kernel.eval(sv, x))
            .sum::<f64>()
            + self.bias
    }

    /// Explicit primal weights; only meaningful for the linear kernel.
    pub fn linear_weights(&self) -> Option<Vec<f64>> {
        if self.kernel != Kernel::Linear {
            return None;
        }
        let mut w = vec![0.0; self.support_vectors.ncols()];
        for (sv, a) in self.support_vectors.rows_iter().zip(&self.dual_coef) {
            for (wj, xj) in w.iter_mut().zip(sv) {
                *wj += a * xj;
            }
        }
        Some(w)
    }
}

/// Solution of the epsilon-SVR dual
/// `min 1/2 (a - a*)^T K (a - a*) + eps sum(a + a*) - y^T (a - a*)`
/// subject to `sum(a - a*) = 0`, `0 <= a, a* <= C`.
#[derive(Debug, Clone, PartialEq)]
pub struct DualSolution {
    pub alpha: Vec<f64>,
    pub alpha_star: Vec<f64>,
    pub bias: f64,
    pub objective: f64,
    pub iterations: usize,
    pub max_violation: f64,
}

const TAU: f64 = 1e-12;

/// SMO with second-order working set selection on the stacked `2n` formulation.
pub fn solve_dual(
    k: &Matrix,
    y: &[f64],
    c: f64,
    epsilon: f64,
    tol: f64,
    max_iter: usize,
) -> Result<DualSolution> {
    let n = y.len();
    if k.nrows() != n || k.ncols() != n {
        return Err(Error::Argument(format!(
            "kernel matrix {}x{} for {n} targets",
            k.nrows(),
            k.ncols()
        )));
    }
    if !(c > 0.0) || !(epsilon >= 0.0) {
        return Err(Error::Argument(format!(
            "need C > 0 and epsilon >= 0, got C = {c}, epsilon = {epsilon}"
        )));
    }
    let l = 2 * n;
    let sign = |t: usize| if t < n { 1.0 } else { -1.0 };
    let q = |s: usize, t: usize| sign(s) * sign(t) * k.get(s % n, t % n);
    let p: Vec<f64> = (0..l)
        .map(|t| {
            if t < n {
                epsilon - y[t]
            } else {
                epsilon + y[t - n]
            }
        })
        .collect();
    let mut beta = vec![0.0; l];
    let mut grad = p.clone();
    let up = |t: usize, b: f64| if sign(t) > 0.0 { b < c } else { b > 0.0 };
    let low = |t: usize, b: f64| if sign(t) > 0.0 { b > 0.0 } else { b < c };

    let mut iter = 0;
    let mut violation;
    loop {
        let mut gmax = f64::NEG_INFINITY;
        let mut i = usize::MAX;
        for t in 0..l {
            if up(t, beta[t]) {
                let v = -sign(t) * grad[t];
                if v >= gmax {
                    gmax = v;
                    i = t;
                }
            }
        }
        let mut gmin = f64::INFINITY;
        let mut j = usize::MAX;
        let mut best = f64::INFINITY;
        for t in 0..l {
            if !low(t, beta[t]) {
                continue;
            }
            let v = -sign(t) * grad[t];
            gmin = gmin.min(v);
            if i != usize::MAX && v < gmax {
                let b = gmax - v;
                let mut a = q(i, i) + q(t, t) - 2.0 * sign(i) * sign(t) * q(i, t);
                if a <= 0.0 {
                    a = TAU;
                }
                let score = -(b * b) / a;
                if score <= best {
                    best = score;
                    j = t;
                }
            }
        }
        violation = (gmax - gmin).max(0.0);
        if i == usize::MAX || j == usize::MAX || gmax - gmin < tol {
            break;
        }
        if iter >= max_iter {
            return Err(Error::Convergence {
                iterations: iter,
                max_violation: violation,
            });
        }
        iter += 1;

        let (old_i, old_j) = (beta[i], beta[j]);
        let (qii, qjj, qij) = (q(i, i), q(j, j), q(i, j));
        if sign(i) != sign(j) {
            let quad = (qii + qjj + 2.0 * qij).max(TAU);
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = beta[i] - beta[j];
            beta[i] += delta;
            beta[j] += delta;
            if diff > 0.0 {
                if beta[j] < 0.0 {
                    beta[j] = 0.0;
                    beta[i] = diff;
                }
            } else if beta[i] < 0.0 {
                beta[i] = 0.0;
                beta[j] = -diff;
            }
            if diff > 0.0 {
                if beta[i] > c {
                    beta[i] = c;
                    beta[j] = c - diff;
                }
            } else if beta[j] > c {
                beta[j] = c;
                beta[i] = c + diff;
            }
        } else {
            let quad = (qii + qjj - 2.0 * qij).max(TAU);
            let delta = (grad[i] - grad[j]) / quad;
            let sum = beta[i] + beta[j];
            beta[i] -= delta;
            beta[j] += delta;
            if sum > c {
                if beta[i] > c {
                    beta[i] = c;
                    beta[j] = sum - c;
                }
            } else if beta[j] < 0.0 {
                beta[j] = 0.0;
                beta[i] = sum;
            }
            if sum > c {
                if beta[j] > c {
                    beta[j] = c;
                    beta[i] = sum - c;
                }
            } else if beta[i] < 0.0 {
                beta[i] = 0.0;
                beta[j] = sum;
            }
        }
        let (di, dj) = (beta[i] - old_i, beta[j] - old_j);
        for t in 0..l {
            grad[t] += q(t, i) * di + q(t, j) * dj;
        }
    }

    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut free_sum, mut free_n) = (0.0, 0usize);
    for t in 0..l {
        let yg = sign(t) * grad[t];
        if beta[t] >= c {
            if sign(t) < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if beta[t] <= 0.0 {
            if sign(t) > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            free_sum += yg;
            free_n += 1;
        }
    }
    let rho = if free_n > 0 {
        free_sum / free_n as f64
    } else {
        (ub + lb) / 2.0
    };
    let objective = (0..l).map(|t| beta[t] * (grad[t] + p[t])).sum::<f64>() / 2.0;
    Ok(DualSolution {
        alpha: beta[..n].to_vec(),
        alpha_star: beta[n..].to_vec(),
        bias: -rho,
        objective,
        iterations: iter,
        max_violation: violation,
    })
}

pub fn kernel_matrix(x: &Matrix, kernel: &Kernel) -> Matrix {
    let n = x.nrows();
    let mut k = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = kernel.eval(x.row(i), x.row(j));
            k.set(i, j, v);
            k.set(j, i, v);
        }
    }
    k
}

pub fn fit_svr(x: &Matrix, y: &[f64], cfg: &SvrConfig) -> Result<SvrParams> {
    let n = x.nrows();
    if y.len() != n || n == 0 {
        return Err(Error::Argument(format!("{} targets for {n} rows", y.len())));
    }
    let kernel = cfg.kernel.resolve(x);
    let k = kernel_matrix(x, &kernel);
    let max_iter = cfg.max_sweeps.saturating_mul(n);
    let sol = solve_dual(&k, y, cfg.c, cfg.epsilon, cfg.tol, max_iter)?;
    let mut support_indices = Vec::new();
    let mut dual_coef = Vec::new();
    for i in 0..n {
        let d = sol.alpha[i] - sol.alpha_star[i];
        if d != 0.0 {
            support_indices.push(i);
            dual_coef.push(d);
        }
    }
    Ok(SvrParams {
        support_vectors: x.select_rows(&support_indices),
        support_indices,
        dual_coef,
        bias: sol.bias,
        kernel,
        c: cfg.c,
        epsilon: cfg.epsilon,
    })
}
