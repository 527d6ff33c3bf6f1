use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_update, AdamState};
use crate::error::{Error, Result};
use crate::linalg::Design;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmConfig {
    pub units: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lookback: usize,
    pub learning_rate: f64,
}

impl Default for LstmConfig {
    fn default() -> Self {
        Self {
            units: 50,
            epochs: 50,
            batch_size: 72,
            lookback: 3,
            learning_rate: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train_mse: f64,
    pub validation_mse: Option<f64>,
}

/// Single-layer LSTM with a dense scalar head.
///
/// `params` is laid out as `Wx (4U x p) | Wh (4U x U) | b (4U) | w_out (U) | b_out`,
/// gate blocks in the order input, forget, candidate, output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmParams {
    pub inputs: usize,
    pub units: usize,
    pub lookback: usize,
    pub params: Vec<f64>,
    pub history: Vec<EpochLoss>,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

struct Offsets {
    wx: usize,
    wh: usize,
    b: usize,
    w_out: usize,
    b_out: usize,
    len: usize,
}

fn offsets(p: usize, u: usize) -> Offsets {
    let wx = 0;
    let wh = wx + 4 * u * p;
    let b = wh + 4 * u * u;
    let w_out = b + 4 * u;
    let b_out = w_out + u;
    Offsets {
        wx,
        wh,
        b,
        w_out,
        b_out,
        len: b_out + 1,
    }
}

/// Activations of one time step.
pub struct Step {
    pub i: Vec<f64>,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub o: Vec<f64>,
    pub c: Vec<f64>,
    pub h: Vec<f64>,
}

impl LstmParams {
    pub fn init(inputs: usize, units: usize, lookback: usize, seed: u64) -> Self {
        let o = offsets(inputs, units);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gate_bound = 1.0 / ((inputs + units) as f64).sqrt();
        let out_bound = 1.0 / (units as f64).sqrt();
        let params = (0..o.len)
            .map(|k| {
                let bound = if k < o.w_out { gate_bound } else { out_bound };
                rng.random_range(-bound..=bound)
            })
            .collect();
        Self {
            inputs,
            units,
            lookback,
            params,
            history: Vec::new(),
        }
    }

    /// Runs the cell over `window` (oldest first) and returns every step's activations.
    pub fn forward(&self, window: &[&[f64]]) -> Vec<Step> {
        let (p, u) = (self.inputs, self.units);
        let o = offsets(p, u);
        let w = &self.params;
        let mut h = vec![0.0; u];
        let mut c = vec![0.0; u];
        let mut steps = Vec::with_capacity(window.len());
        let mut z = vec![0.0; 4 * u];
        for x in window {
            for r in 0..4 * u {
                let mut acc = w[o.b + r];
                let wx = &w[o.wx + r * p..o.wx + (r + 1) * p];
                acc += wx.iter().zip(x.iter()).map(|(a, b)| a * b).sum::<f64>();
                let wh = &w[o.wh + r * u..o.wh + (r + 1) * u];
                acc += wh.iter().zip(&h).map(|(a, b)| a * b).sum::<f64>();
                z[r] = acc;
            }
            let i: Vec<f64> = z[..u].iter().map(|&v| sigmoid(v)).collect();
            let f: Vec<f64> = z[u..2 * u].iter().map(|&v| sigmoid(v)).collect();
            let g: Vec<f64> = z[2 * u..3 * u].iter().map(|&v| v.tanh()).collect();
            let og: Vec<f64> = z[3 * u..].iter().map(|&v| sigmoid(v)).collect();
            for k in 0..u {
                c[k] = f[k] * c[k] + i[k] * g[k];
                h[k] = og[k] * c[k].tanh();
            }
            steps.push(Step {
                i,
                f,
                g,
                o: og,
                c: c.clone(),
                h: h.clone(),
            });
        }
        steps
    }

    pub fn predict_window(&self, window: &[&[f64]]) -> f64 {
        let o = offsets(self.inputs, self.units);
        let steps = self.forward(window);
        let h = &steps.last().expect("window is non-empty").h;
        let w_out = &self.params[o.w_out..o.w_out + self.units];
        w_out.iter().zip(h).map(|(a, b)| a * b).sum::<f64>() + self.params[o.b_out]
    }

    /// Mean squared error over `samples` and its gradient with respect to `params`.
    pub fn loss_and_grad(&self, samples: &[(Vec<&[f64]>, f64)]) -> (f64, Vec<f64>) {
        let (p, u) = (self.inputs, self.units);
        let o = offsets(p, u);
        let w = &self.params;
        let mut grad = vec![0.0; o.len];
        let mut loss = 0.0;
        let scale = 1.0 / samples.len() as f64;
        for (window, target) in samples {
            let steps = self.forward(window);
            let last = &steps[steps.len() - 1];
            let yhat = w[o.w_out..o.w_out + u]
                .iter()
                .zip(&last.h)
                .map(|(a, b)| a * b)
                .sum::<f64>()
                + w[o.b_out];
            let err = yhat - target;
            loss += err * err * scale;
            let dy = 2.0 * err * scale;
            grad[o.b_out] += dy;
            for k in 0..u {
                grad[o.w_out + k] += dy * last.h[k];
            }
            let mut dh: Vec<f64> = (0..u).map(|k| dy * w[o.w_out + k]).collect();
            let mut dc = vec![0.0; u];
            let mut dz = vec![0.0; 4 * u];
            for t in (0..steps.len()).rev() {
                let s = &steps[t];
                let zeros = vec![0.0; u];
                let (c_prev, h_prev) = if t > 0 {
                    (&steps[t - 1].c, &steps[t - 1].h)
                } else {
                    (&zeros, &zeros)
                };
                for k in 0..u {
                    let tc = s.c[k].tanh();
                    let d_o = dh[k] * tc;
                    dc[k] += dh[k] * s.o[k] * (1.0 - tc * tc);
                    let d_i = dc[k] * s.g[k];
                    let d_g = dc[k] * s.i[k];
                    let d_f = dc[k] * c_prev[k];
                    dz[k] = d_i * s.i[k] * (1.0 - s.i[k]);
                    dz[u + k] = d_f * s.f[k] * (1.0 - s.f[k]);
                    dz[2 * u + k] = d_g * (1.0 - s.g[k] * s.g[k]);
                    dz[3 * u + k] = d_o * s.o[k] * (1.0 - s.o[k]);
                    dc[k] *= s.f[k];
                }
                let x = window[t];
                let mut dh_prev = vec![0.0; u];
                for r in 0..4 * u {
                    let d = dz[r];
                    if d == 0.0 {
                        continue;
                    }
                    grad[o.b + r] += d;
                    for j in 0..p {
                        grad[o.wx + r * p + j] += d * x[j];
                    }
                    for j in 0..u {
                        grad[o.wh + r * u + j] += d * h_prev[j];
                        dh_prev[j] += d * w[o.wh + r * u + j];
                    }
                }
                dh = dh_prev;
            }
        }
        (loss, grad)
    }
}

/// Lookback windows for every row of `design`: the row itself preceded by up to
/// `lookback - 1` earlier rows of the same series, left-padded with the series'
/// first row.
pub fn windows(design: &Design, lookback: usize) -> Vec<Vec<&[f64]>> {
    let mut seen: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    let mut out = Vec::with_capacity(design.nrows());
    for r in 0..design.nrows() {
        let hist = seen.entry(design.series[r]).or_default();
        hist.push(r);
        let k = hist.len() - 1;
        let win = (0..lookback)
            .map(|back| {
                let pos = (k + back + 1).saturating_sub(lookback);
                design.x.row(hist[pos])
            })
            .collect();
        out.push(win);
    }
    out
}

fn mse(model: &LstmParams, design: &Design, y: &[f64]) -> f64 {
    let w = windows(design, model.lookback);
    w.iter()
        .zip(y)
        .map(|(win, t)| {
            let e = model.predict_window(win) - t;
            e * e
        })
        .sum::<f64>()
        / y.len().max(1) as f64
}

pub fn fit_lstm(
    design: &Design,
    y: &[f64],
    cfg: &LstmConfig,
    seed: u64,
    validation: Option<(&Design, &[f64])>,
) -> Result<LstmParams> {
    let n = design.nrows();
    if y.len() != n || n == 0 {
        return Err(Error::Argument(format!("{} targets for {n} rows", y.len())));
    }
    if !(1..=8).contains(&cfg.lookback) {
        return Err(Error::Argument(format!(
            "lookback must be in 1..=8, got {}",
            cfg.lookback
        )));
    }
    if cfg.units == 0 || cfg.batch_size == 0 {
        return Err(Error::Argument(
            "units and batch_size must be positive".into(),
        ));
    }
    if !(cfg.learning_rate > 0.0) {
        return Err(Error::Argument(format!(
            "learning rate must be positive, got {}",
            cfg.learning_rate
        )));
    }
    let mut model = LstmParams::init(design.x.ncols(), cfg.units, cfg.lookback, seed);
    let mut adam = AdamState::with_lr(model.params.len(), cfg.learning_rate);
    let wins = windows(design, cfg.lookback);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let samples: Vec<(Vec<&[f64]>, f64)> =
                batch.iter().map(|&i| (wins[i].clone(), y[i])).collect();
            let (loss, grad) = model.loss_and_grad(&samples);
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Divergence { epoch });
            }
            adam_update(&mut model.params, &grad, &mut adam);
        }
        let train_mse = mse(&model, design, y);
        if !train_mse.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        model.history.push(EpochLoss {
            epoch,
            train_mse,
            validation_mse: validation.map(|(d, t)| mse(&model, d, t)),
        });
    }
    Ok(model)
}

impl LstmParams {
    pub fn predict(&self, design: &Design) -> Vec<f64> {
        windows(design, self.lookback)
            .iter()
            .map(|w| self.predict_window(w))
            .collect()
    }
}
