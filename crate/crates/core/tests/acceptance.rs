//! Acceptance suite: one PASS/FAIL line per criterion, each checked against
//! test-side oracles written independently of the library code.

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use parkcast_core::evaltune::{
    compare_models, cv_pairs, denormalize_error, grid_search, kfold, mae, r2, rmse, split_dataset,
    CompareOptions, EvaluationReport, ParamValue, ReportEntry, SearchOptions, SearchSpace,
    SplitMode,
};
use parkcast_core::features::{
    aggregate_hourly, clean, pearson, spearman, spearman_p_value, AggregationOptions,
};
use parkcast_core::geodata::{polyline_length, GeoPoint, ParkingSection, EARTH_RADIUS_M};
use parkcast_core::models::{
    fit_forest, solve_dual, Family, ForestConfig, Hyperparameters, LinearConfig, LstmParams,
};
use parkcast_core::spatial::{
    point_in_section, ring_contains, segment_roads, snap_to_segment, spatial_join, Segment,
};
use parkcast_core::{fixtures, synth, Design, Matrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------- metrics

fn oracle_mae(y: &[f64], p: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..y.len() {
        s += (y[i] - p[i]).abs();
    }
    s / y.len() as f64
}

fn oracle_rmse(y: &[f64], p: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..y.len() {
        s += (y[i] - p[i]) * (y[i] - p[i]);
    }
    (s / y.len() as f64).sqrt()
}

fn oracle_r2(y: &[f64], p: &[f64]) -> f64 {
    let m = y.iter().sum::<f64>() / y.len() as f64;
    let (mut res, mut tot) = (0.0, 0.0);
    for i in 0..y.len() {
        res += (y[i] - p[i]).powi(2);
        tot += (y[i] - m).powi(2);
    }
    1.0 - res / tot
}

fn metric_oracles() -> Outcome {
    let mut r = rng(101);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = r.random_range(2..300);
        let y: Vec<f64> = (0..n).map(|_| r.random_range(0.0..1.0)).collect();
        let p: Vec<f64> = (0..n).map(|_| r.random_range(-0.2..1.2)).collect();
        for (got, want) in [
            (mae(&y, &p).map_err(|e| e.to_string())?, oracle_mae(&y, &p)),
            (
                rmse(&y, &p).map_err(|e| e.to_string())?,
                oracle_rmse(&y, &p),
            ),
            (r2(&y, &p).map_err(|e| e.to_string())?, oracle_r2(&y, &p)),
        ] {
            worst = worst.max((got - want).abs());
        }
    }
    ensure(worst <= 1e-12, || format!("max deviation {worst:e}"))?;
    let (y, p) = ([0.5, 0.7], [0.6, 0.4]);
    let (m, e) = (mae(&y, &p).unwrap(), rmse(&y, &p).unwrap());
    // Decimal inputs are not representable, so "exact" means agreement to double rounding.
    ensure((m - 0.2).abs() <= 1e-15, || format!("mae hand case {m}"))?;
    ensure((e - 0.05_f64.sqrt()).abs() <= 1e-15, || {
        format!("rmse hand case {e}")
    })?;
    Ok(format!(
        "100 vectors, max deviation {worst:.1e}; mae={m:.15}, rmse={e:.15}"
    ))
}

// ------------------------------------------------------------ correlation

fn oracle_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for i in 0..x.len() {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    sxy / (sxx * syy).sqrt()
}

/// Mid-rank of each value, counted directly.
fn oracle_ranks(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&v| {
            let below = x.iter().filter(|&&w| w < v).count() as f64;
            let equal = x.iter().filter(|&&w| w == v).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect()
}

fn correlation_oracles() -> Outcome {
    let mut r = rng(202);
    let mut worst: f64 = 0.0;
    for k in 0..100 {
        let n = r.random_range(5..150);
        let mut x: Vec<f64> = (0..n).map(|_| r.random_range(-3.0..3.0)).collect();
        let mut y: Vec<f64> = x
            .iter()
            .map(|v| v * r.random_range(-1.0..2.0) + r.random_range(-1.0..1.0))
            .collect();
        if k % 3 == 0 {
            x.iter_mut().for_each(|v| *v = (*v * 2.0).round());
            y.iter_mut().for_each(|v| *v = v.round());
        }
        if oracle_ranks(&x).windows(2).all(|w| w[0] == w[1])
            || oracle_ranks(&y).windows(2).all(|w| w[0] == w[1])
        {
            continue;
        }
        let rp = pearson(&x, &y).map_err(|e| e.to_string())?;
        let (rs, _) = spearman(&x, &y).map_err(|e| e.to_string())?;
        worst = worst
            .max((rp - oracle_pearson(&x, &y)).abs())
            .max((rs - oracle_pearson(&oracle_ranks(&x), &oracle_ranks(&y))).abs());
    }
    ensure(worst <= 1e-12, || format!("max deviation {worst:e}"))?;
    let (rho, _) = spearman(&[1.0, 2.0, 3.0], &[3.0, 1.0, 2.0]).map_err(|e| e.to_string())?;
    ensure(rho == -0.5, || format!("spearman hand case {rho}"))?;
    let p = spearman_p_value(0.54, 180).map_err(|e| e.to_string())?;
    ensure((1e-17..=1e-13).contains(&p), || {
        format!("p-value {p:e} outside [1e-17, 1e-13]")
    })?;
    Ok(format!(
        "100 pairs, max deviation {worst:.1e}; rho=-0.5; p(0.54, 180)={p:.3e}"
    ))
}

// --------------------------------------------------------------- geometry

fn oracle_haversine(a: GeoPoint, b: GeoPoint) -> f64 {
    let (p1, p2) = (a.lat.to_radians(), b.lat.to_radians());
    let dp = p2 - p1;
    let dl = (b.lon - a.lon).to_radians();
    let h = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

/// Exhaustive nearest segment: every segment, every edge.
fn oracle_snap(p: GeoPoint, segments: &[Segment], threshold: f64) -> Option<(u32, f64, f64)> {
    let k = std::f64::consts::PI / 180.0 * EARTH_RADIUS_M;
    let cos = p.lat.to_radians().cos();
    let mut best: Option<(u32, f64, f64)> = None;
    let mut ids: Vec<usize> = (0..segments.len()).collect();
    ids.sort_by_key(|&i| segments[i].id);
    for i in ids {
        let seg = &segments[i];
        let mut along = 0.0;
        for e in seg.polyline.windows(2) {
            let (ax, ay) = ((e[0].lon - p.lon) * cos * k, (e[0].lat - p.lat) * k);
            let (bx, by) = ((e[1].lon - p.lon) * cos * k, (e[1].lat - p.lat) * k);
            let (dx, dy) = (bx - ax, by - ay);
            let len2 = dx * dx + dy * dy;
            let t = if len2 > 0.0 {
                (-(ax * dx + ay * dy) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let q = GeoPoint {
                lon: e[0].lon + t * (e[1].lon - e[0].lon),
                lat: e[0].lat + t * (e[1].lat - e[0].lat),
            };
            let d = oracle_haversine(p, q);
            let len = oracle_haversine(e[0], e[1]);
            if best.is_none_or(|b| d < b.2) {
                best = Some((seg.id, (along + t * len).clamp(0.0, seg.length_m), d));
            }
            along += len;
        }
    }
    best.filter(|b| b.2 <= threshold)
}

fn is_left(a: GeoPoint, b: GeoPoint, p: GeoPoint) -> f64 {
    (b.lon - a.lon) * (p.lat - a.lat) - (p.lon - a.lon) * (b.lat - a.lat)
}

fn winding_number(ring: &[GeoPoint], p: GeoPoint) -> i32 {
    let mut wn = 0;
    for e in ring.windows(2) {
        if e[0].lat <= p.lat {
            if e[1].lat > p.lat && is_left(e[0], e[1], p) > 0.0 {
                wn += 1;
            }
        } else if e[1].lat <= p.lat && is_left(e[0], e[1], p) < 0.0 {
            wn -= 1;
        }
    }
    wn
}

fn concave_ring() -> Vec<GeoPoint> {
    let pts = [
        (55.4800, 25.2800),
        (55.4880, 25.2800),
        (55.4880, 25.2815),
        (55.4830, 25.2822),
        (55.4885, 25.2838),
        (55.4880, 25.2855),
        (55.4810, 25.2850),
        (55.4825, 25.2830),
        (55.4800, 25.2800),
    ];
    pts.iter()
        .map(|&(lon, lat)| GeoPoint { lon, lat })
        .collect()
}

fn geometry_oracles() -> Outcome {
    let campus = fixtures::campus();
    let segments = segment_roads(&campus).map_err(|e| e.to_string())?;
    let mut r = rng(303);
    let (lon0, lon1, lat0, lat1) = (55.4794, 55.4886, 25.2794, 25.2861);
    let mut snapped = 0;
    for _ in 0..10_000 {
        let p = GeoPoint {
            lon: r.random_range(lon0..lon1),
            lat: r.random_range(lat0..lat1),
        };
        let got = snap_to_segment(p, &segments, 30.0);
        let want = oracle_snap(p, &segments, 30.0);
        match (got, want) {
            (None, None) => {}
            (Some(g), Some((id, off, d))) => {
                snapped += 1;
                ensure(
                    g.segment_id == id
                        && (g.offset_m - off).abs() < 1e-6
                        && (g.distance_m - d).abs() < 1e-6,
                    || format!("point {p:?}: got {g:?}, oracle ({id}, {off}, {d})"),
                )?;
            }
            _ => return Err(format!("point {p:?}: got {got:?}, oracle {want:?}")),
        }
    }
    let ring = concave_ring();
    let concave = [ParkingSection {
        id: 1,
        name: "concave".into(),
        polygon: ring.clone(),
        capacity: 1,
    }];
    let mut inside = 0;
    for _ in 0..10_000 {
        let p = GeoPoint {
            lon: r.random_range(lon0..lon1),
            lat: r.random_range(lat0..lat1),
        };
        let want = winding_number(&ring, p) != 0;
        ensure(ring_contains(&ring, p) == want, || {
            format!("concave ring disagrees at {p:?}")
        })?;
        let got = point_in_section(p, &concave).map_err(|e| e.to_string())?;
        ensure(got.is_some() == want, || {
            format!("point_in_section disagrees at {p:?}")
        })?;
        inside += usize::from(want);
        let fixture = point_in_section(p, &campus.sections).map_err(|e| e.to_string())?;
        let oracle: Vec<u32> = campus
            .sections
            .iter()
            .filter(|s| winding_number(&s.polygon, p) != 0)
            .map(|s| s.id)
            .collect();
        ensure(fixture.into_iter().collect::<Vec<_>>() == oracle, || {
            format!("fixture sections disagree at {p:?}")
        })?;
    }
    let total: f64 = segments.iter().map(|s| s.length_m).sum();
    let loop_len = polyline_length(&campus.boundary);
    let rel = (total - loop_len).abs() / loop_len;
    ensure(rel < 1e-6, || format!("partition length error {rel:e}"))?;
    for s in &segments {
        let own = polyline_length(&s.polyline);
        ensure((own - s.length_m).abs() / own < 1e-6, || {
            format!("segment {} length mismatch", s.id)
        })?;
    }
    ensure(snapped > 500 && inside > 500, || {
        format!("weak sample: {snapped} snapped, {inside} inside")
    })?;
    Ok(format!(
        "10^4 snaps ({snapped} within threshold) and 10^4 containment tests agree; partition error {rel:.1e}"
    ))
}

// ------------------------------------------------------------------- LSTM

fn lstm_gradient() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..5 {
        let mut r = rng(400 + seed);
        let net = LstmParams::init(3, 2, 3, seed);
        let rows: Vec<Vec<f64>> = (0..18)
            .map(|_| (0..3).map(|_| r.random_range(-1.5..1.5)).collect())
            .collect();
        let targets: Vec<f64> = (0..6).map(|_| r.random_range(-1.0..1.0)).collect();
        let samples: Vec<(Vec<&[f64]>, f64)> = (0..6)
            .map(|s| {
                (
                    (0..3).map(|t| rows[s * 3 + t].as_slice()).collect(),
                    targets[s],
                )
            })
            .collect();
        let (_, grad) = net.loss_and_grad(&samples);
        ensure(grad.len() == net.params.len(), || "gradient length".into())?;
        let h = 1e-6;
        for k in 0..net.params.len() {
            let mut plus = net.clone();
            plus.params[k] += h;
            let mut minus = net.clone();
            minus.params[k] -= h;
            let fd = (plus.loss_and_grad(&samples).0 - minus.loss_and_grad(&samples).0) / (2.0 * h);
            let rel = (fd - grad[k]).abs() / fd.abs().max(grad[k].abs()).max(1e-8);
            worst = worst.max(rel);
        }
    }
    ensure(worst < 1e-4, || format!("max relative error {worst:e}"))?;
    Ok(format!(
        "5 networks (2 units, lookback 3), max relative error {worst:.1e}"
    ))
}

// -------------------------------------------------------------------- SVR

fn gram(x: &[Vec<f64>], kernel: impl Fn(&[f64], &[f64]) -> f64) -> Matrix {
    let n = x.len();
    let mut k = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            k.set(i, j, kernel(&x[i], &x[j]));
        }
    }
    k
}

fn dual_objective(k: &Matrix, y: &[f64], eps: f64, a: &[f64], a_star: &[f64]) -> f64 {
    let n = y.len();
    let b: Vec<f64> = (0..n).map(|i| a[i] - a_star[i]).collect();
    let mut quad = 0.0;
    for i in 0..n {
        for j in 0..n {
            quad += b[i] * b[j] * k.get(i, j);
        }
    }
    0.5 * quad + eps * (0..n).map(|i| a[i] + a_star[i]).sum::<f64>()
        - (0..n).map(|i| y[i] * b[i]).sum::<f64>()
}

/// Worst KKT residual of an ε-SVR dual point with decision `f = K(α - α*) + b`.
fn kkt_residual(
    k: &Matrix,
    y: &[f64],
    c: f64,
    eps: f64,
    a: &[f64],
    a_star: &[f64],
    bias: f64,
) -> f64 {
    let n = y.len();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        let f: f64 = (0..n)
            .map(|j| (a[j] - a_star[j]) * k.get(i, j))
            .sum::<f64>()
            + bias;
        let up = y[i] - f;
        if a[i] > 0.0 {
            worst = worst.max(eps - up);
        }
        if a[i] < c {
            worst = worst.max(up - eps);
        }
        if a_star[i] > 0.0 {
            worst = worst.max(eps + up);
        }
        if a_star[i] < c {
            worst = worst.max(-up - eps);
        }
        worst = worst
            .max(-a[i])
            .max(a[i] - c)
            .max(-a_star[i])
            .max(a_star[i] - c);
    }
    let balance: f64 = (0..n).map(|i| a[i] - a_star[i]).sum();
    worst.max(balance.abs())
}

/// Projected gradient on the box intersected with the balance hyperplane.
fn qp_oracle(k: &Matrix, y: &[f64], c: f64, eps: f64) -> f64 {
    let n = y.len();
    let mut z = vec![0.0; 2 * n];
    let lmax = 2.0 * (0..n).map(|i| k.get(i, i)).sum::<f64>();
    let step = 1.0 / lmax;
    let project = |v: &[f64]| -> Vec<f64> {
        let sum_at = |mu: f64| -> f64 {
            (0..n)
                .map(|i| (v[i] - mu).clamp(0.0, c) - (v[n + i] + mu).clamp(0.0, c))
                .sum()
        };
        let (mut lo, mut hi) = (-1e6, 1e6);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if sum_at(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let mu = 0.5 * (lo + hi);
        (0..2 * n)
            .map(|t| {
                if t < n {
                    (v[t] - mu).clamp(0.0, c)
                } else {
                    (v[t] + mu).clamp(0.0, c)
                }
            })
            .collect()
    };
    for _ in 0..200_000 {
        let beta: Vec<f64> = (0..n).map(|i| z[i] - z[n + i]).collect();
        let kb: Vec<f64> = (0..n)
            .map(|i| (0..n).map(|j| k.get(i, j) * beta[j]).sum())
            .collect();
        let v: Vec<f64> = (0..2 * n)
            .map(|t| {
                let g = if t < n {
                    kb[t] + eps - y[t]
                } else {
                    -kb[t - n] + eps + y[t - n]
                };
                z[t] - step * g
            })
            .collect();
        let next = project(&v);
        let moved = next
            .iter()
            .zip(&z)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        z = next;
        if moved < 1e-15 {
            break;
        }
    }
    dual_objective(k, y, eps, &z[..n], &z[n..])
}

fn svr_correctness() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut fits = 0;
    for seed in 0..8u64 {
        let mut r = rng(500 + seed);
        let n = 40;
        let x: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..3).map(|_| r.random_range(-2.0..2.0)).collect())
            .collect();
        let y: Vec<f64> = x
            .iter()
            .map(|v| {
                (v[0] * 1.3).sin() + 0.4 * v[1] - 0.2 * v[2] * v[2] + r.random_range(-0.1..0.1)
            })
            .collect();
        let gamma = 0.3;
        let kernels = [
            gram(&x, |a, b| a.iter().zip(b).map(|(p, q)| p * q).sum()),
            gram(&x, |a, b| {
                (-gamma * a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum::<f64>()).exp()
            }),
        ];
        for k in &kernels {
            for (c, eps) in [(0.5, 0.05), (10.0, 0.1), (1.0, 0.01)] {
                let sol = solve_dual(k, &y, c, eps, 1e-3, 1_000_000).map_err(|e| e.to_string())?;
                worst = worst.max(kkt_residual(
                    k,
                    &y,
                    c,
                    eps,
                    &sol.alpha,
                    &sol.alpha_star,
                    sol.bias,
                ));
                fits += 1;
            }
        }
    }
    ensure(worst <= 1e-3, || format!("max KKT residual {worst:e}"))?;
    let xs = [0.0, 1.0, 2.0, 3.0, 4.0];
    let ys = [0.1, 0.9, 2.3, 2.8, 4.2];
    let k = gram(&xs.iter().map(|v| vec![*v]).collect::<Vec<_>>(), |a, b| {
        a[0] * b[0]
    });
    let sol = solve_dual(&k, &ys, 1.0, 0.1, 1e-9, 1_000_000).map_err(|e| e.to_string())?;
    let got = dual_objective(&k, &ys, 0.1, &sol.alpha, &sol.alpha_star);
    let oracle = qp_oracle(&k, &ys, 1.0, 0.1);
    ensure((got - oracle).abs() <= 1e-6, || {
        format!("toy objective {got} vs oracle {oracle}")
    })?;
    ensure((sol.objective - got).abs() <= 1e-9, || {
        format!("reported objective {} vs {got}", sol.objective)
    })?;
    Ok(format!(
        "{fits} fits, max KKT residual {worst:.1e}; toy objective {got:.9} vs oracle {oracle:.9}"
    ))
}

// ----------------------------------------------------------------- forest

fn forest_determinism() -> Outcome {
    for seed in 0..50u64 {
        let mut r = rng(600 + seed);
        let n = r.random_range(20..80);
        let p = r.random_range(1..6);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..p).map(|_| r.random_range(-1.0..1.0)).collect())
            .collect();
        let y: Vec<f64> = rows
            .iter()
            .map(|v| (3.0 * v[0]).sin() + v.iter().sum::<f64>() + r.random_range(-0.3..0.3))
            .collect();
        let x = Matrix::from_rows(&rows).map_err(|e| e.to_string())?;
        let cfg = ForestConfig {
            n_trees: r.random_range(5..30),
            max_depth: [None, Some(2), Some(5)][seed as usize % 3],
            min_samples_leaf: 1 + seed as usize % 4,
            max_features: None,
            bootstrap: seed % 5 != 0,
        };
        let a = fit_forest(&x, &y, &cfg, seed).map_err(|e| e.to_string())?;
        let b = fit_forest(&x, &y, &cfg, seed).map_err(|e| e.to_string())?;
        ensure(
            serde_json::to_string(&a).unwrap() == serde_json::to_string(&b).unwrap(),
            || format!("fixture {seed}: refit differs"),
        )?;
        let leaves: Vec<f64> = a
            .trees
            .iter()
            .flat_map(|t| t.leaves().map(|(v, _)| v))
            .collect();
        let lo = leaves.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = leaves.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for _ in 0..200 {
            let q: Vec<f64> = (0..p).map(|_| r.random_range(-3.0..3.0)).collect();
            let (pa, pb) = (a.predict_row(&q), b.predict_row(&q));
            ensure(pa.to_bits() == pb.to_bits(), || {
                format!("fixture {seed}: predictions differ")
            })?;
            ensure((lo..=hi).contains(&pa), || {
                format!("fixture {seed}: {pa} outside [{lo}, {hi}]")
            })?;
        }
    }
    Ok("50 fixtures: bit-identical refits, predictions inside leaf range".into())
}

// ------------------------------------------------------------- CV/search

fn oracle_ridge(x: &[Vec<f64>], y: &[f64], lambda: f64) -> (Vec<f64>, f64) {
    let (n, p) = (x.len(), x[0].len());
    let xm: Vec<f64> = (0..p)
        .map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n as f64)
        .collect();
    let ym = y.iter().sum::<f64>() / n as f64;
    let mut a = vec![vec![0.0; p + 1]; p];
    for i in 0..p {
        for j in 0..p {
            a[i][j] = (0..n)
                .map(|r| (x[r][i] - xm[i]) * (x[r][j] - xm[j]))
                .sum::<f64>();
        }
        a[i][i] += lambda;
        a[i][p] = (0..n).map(|r| (x[r][i] - xm[i]) * (y[r] - ym)).sum::<f64>();
    }
    for col in 0..p {
        let piv = (col..p)
            .max_by(|&s, &t| a[s][col].abs().total_cmp(&a[t][col].abs()))
            .unwrap();
        a.swap(col, piv);
        for row in 0..p {
            if row != col {
                let f = a[row][col] / a[col][col];
                for c in col..=p {
                    a[row][c] -= f * a[col][c];
                }
            }
        }
    }
    let w: Vec<f64> = (0..p).map(|i| a[i][p] / a[i][i]).collect();
    let b = ym - w.iter().zip(&xm).map(|(w, m)| w * m).sum::<f64>();
    (w, b)
}

fn cv_search_laws() -> Outcome {
    for n in 3..80 {
        for mode in [
            SplitMode::Chronological,
            SplitMode::SeededRandom { seed: n as u64 },
        ] {
            let folds = kfold(n, 3, mode).map_err(|e| e.to_string())?;
            let mut all: Vec<usize> = folds.concat();
            all.sort_unstable();
            ensure(all == (0..n).collect::<Vec<_>>(), || {
                format!("n={n}: folds not a partition")
            })?;
            let sizes: Vec<usize> = folds.iter().map(Vec::len).collect();
            let spread = sizes.iter().max().unwrap() - sizes.iter().min().unwrap();
            ensure(folds.len() == 3 && spread <= 1, || {
                format!("n={n}: sizes {sizes:?}")
            })?;
        }
    }

    let mut r = rng(700);
    let rows: Vec<Vec<f64>> = (0..45)
        .map(|_| (0..3).map(|_| r.random_range(-1.0..1.0)).collect())
        .collect();
    let y: Vec<f64> = rows
        .iter()
        .map(|v| (2.0 * v[0]).sin() + v[1] * v[2] + r.random_range(-0.1..0.1))
        .collect();
    let design = Design::from_matrix(Matrix::from_rows(&rows).map_err(|e| e.to_string())?);
    let axes = [
        ("n_trees", vec![ParamValue::Int(5), ParamValue::Int(12)]),
        (
            "max_depth",
            vec![ParamValue::Int(2), ParamValue::Int(4), ParamValue::Null],
        ),
        (
            "min_samples_leaf",
            vec![ParamValue::Int(1), ParamValue::Int(3)],
        ),
    ];
    let space = SearchSpace::grid(Family::Rfr, axes.to_vec());
    let opts = SearchOptions::default();
    let base = Hyperparameters::default_for(Family::Rfr);
    let res = grid_search(&space, &base, &design, &y, &opts).map_err(|e| e.to_string())?;
    let mut product = BTreeSet::new();
    for a in &axes[0].1 {
        for b in &axes[1].1 {
            for c in &axes[2].1 {
                product.insert(format!("{a}|{b}|{c}"));
            }
        }
    }
    let seen: Vec<String> = res
        .table
        .iter()
        .map(|c| {
            c.params
                .iter()
                .map(|(_, v)| v.to_string())
                .collect::<Vec<_>>()
                .join("|")
        })
        .collect();
    ensure(
        seen.len() == 12 && seen.iter().cloned().collect::<BTreeSet<_>>() == product,
        || format!("evaluated cells {seen:?}"),
    )?;
    let argmin = res
        .table
        .iter()
        .filter_map(|c| c.mean_rmse.map(|m| (c.index, m)))
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
        .ok_or("no scored cell")?;
    ensure(
        res.best_index == argmin.0 && res.best_score == argmin.1,
        || {
            format!(
                "best {} ({}) vs table argmin {argmin:?}",
                res.best_index, res.best_score
            )
        },
    )?;

    // Planted ridge fixture: few noisy rows, many weak features.
    let (n, p) = (36, 12);
    let mut r = rng(701);
    let w: Vec<f64> = (0..p).map(|_| r.random_range(-0.3..0.3)).collect();
    let x: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..p).map(|_| r.random_range(-1.0..1.0)).collect())
        .collect();
    let y: Vec<f64> = x
        .iter()
        .map(|v| v.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + r.random_range(-1.0..1.0))
        .collect();
    let lambdas = [1e-3, 1e-2, 0.1, 0.3, 1.0, 3.0, 10.0, 30.0, 100.0, 1e3, 1e4];
    let mode = SplitMode::SeededRandom { seed: 9 };
    let pairs = cv_pairs(n, 3, mode).map_err(|e| e.to_string())?;
    let scores: Vec<f64> = lambdas
        .iter()
        .map(|&l| {
            pairs
                .iter()
                .map(|(tr, va)| {
                    let xt: Vec<Vec<f64>> = tr.iter().map(|&i| x[i].clone()).collect();
                    let yt: Vec<f64> = tr.iter().map(|&i| y[i]).collect();
                    let (wf, b) = oracle_ridge(&xt, &yt, l);
                    let se: f64 = va
                        .iter()
                        .map(|&i| {
                            (y[i] - b - x[i].iter().zip(&wf).map(|(a, c)| a * c).sum::<f64>())
                                .powi(2)
                        })
                        .sum();
                    (se / va.len() as f64).sqrt()
                })
                .sum::<f64>()
                / pairs.len() as f64
        })
        .collect();
    let best = (0..lambdas.len())
        .min_by(|&a, &b| scores[a].total_cmp(&scores[b]))
        .unwrap();
    ensure(best > 0 && best + 1 < lambdas.len(), || {
        format!("planted optimum not interior: {scores:?}")
    })?;
    let space = SearchSpace::grid(
        Family::Linear,
        vec![
            ("penalty", vec![ParamValue::Text("l2".into())]),
            (
                "lambda",
                lambdas.iter().map(|&l| ParamValue::Float(l)).collect(),
            ),
        ],
    );
    let design = Design::from_matrix(Matrix::from_rows(&x).map_err(|e| e.to_string())?);
    let opts = SearchOptions {
        cv_k: 3,
        mode,
        seed: 0,
    };
    let base = Hyperparameters::Linear(LinearConfig::default());
    let res = grid_search(&space, &base, &design, &y, &opts).map_err(|e| e.to_string())?;
    ensure(res.best_index == best, || {
        format!(
            "search chose cell {}, oracle lambda {}",
            res.best_index, lambdas[best]
        )
    })?;
    for (cell, want) in res.table.iter().zip(&scores) {
        let got = cell.mean_rmse.ok_or("ridge cell failed")?;
        ensure((got - want).abs() < 1e-8, || {
            format!("cell {} cv rmse {got} vs oracle {want}", cell.index)
        })?;
    }
    Ok(format!(
        "folds partition n=3..79; 12-cell product evaluated, argmin returned; planted lambda {} recovered",
        lambdas[best]
    ))
}

// ------------------------------------------------------------ directional

fn benchmark_rows(
    seed: u64,
    sigma: f64,
) -> Result<(Vec<parkcast_core::FeatureRow>, synth::SynthOutput), String> {
    let campus = fixtures::campus();
    let gates: Vec<u32> = campus.gates.iter().map(|g| g.id).collect();
    let mut spec = synth::SynthSpec::benchmark(&gates);
    spec.noise_sigma_m = sigma;
    let out = synth::generate(&spec, &campus, seed).map_err(|e| e.to_string())?;
    let joined = spatial_join(&out.observations, &campus, spec.snap_threshold_m)
        .map_err(|e| e.to_string())?;
    let window = spec.window().map_err(|e| e.to_string())?;
    let agg = aggregate_hourly(&joined, &campus, &window, &AggregationOptions::default())
        .map_err(|e| e.to_string())?;
    Ok((agg.rows, out))
}

fn directional() -> Outcome {
    let mut wins = 0;
    let mut detail = Vec::new();
    for seed in 0..10 {
        let (rows, _) = benchmark_rows(seed, 2.0)?;
        ensure(rows.len() == 120, || {
            format!("seed {seed}: {} rows", rows.len())
        })?;
        let (rows, _) = clean(&rows);
        let (ds, _) =
            split_dataset(&rows, 0.7, SplitMode::Chronological).map_err(|e| e.to_string())?;
        let opts = CompareOptions {
            families: vec![Family::Linear, Family::Rfr],
            search: SearchOptions {
                seed,
                ..Default::default()
            },
            ..Default::default()
        };
        let report = compare_models(&ds, &opts).report;
        ensure(report.failures.is_empty(), || {
            format!("seed {seed}: {:?}", report.failures)
        })?;
        let score = |f: Family| {
            report
                .entries
                .iter()
                .find(|e| e.family == Some(f))
                .map(|e| e.rmse)
                .unwrap()
        };
        let (lr, rf) = (score(Family::Linear), score(Family::Rfr));
        wins += usize::from(rf < lr);
        detail.push(format!("{rf:.3}/{lr:.3}"));
    }
    ensure(wins >= 9, || {
        format!("RFR better in {wins}/10 seeds: {}", detail.join(" "))
    })?;
    Ok(format!(
        "RFR better in {wins}/10 seeds (RFR/LR RMSE: {})",
        detail.join(" ")
    ))
}

// ----------------------------------------------------------------- report

fn report_fidelity() -> Outcome {
    let report = EvaluationReport::from_entries(vec![
        ReportEntry::metrics("RFR", 0.142, 0.112, 0.582),
        ReportEntry::metrics("Linear Regression", 0.208, 0.178, 0.051),
        ReportEntry::metrics("LSTM", 0.149, 0.139, 0.457),
        ReportEntry::metrics("SVR", 0.173, 0.135, 0.353),
    ]);
    let golden = include_str!("golden/table1.txt");
    let text = report.render_text();
    ensure(text == golden, || {
        format!("rendered table differs:\n{text}")
    })?;
    let mae_v = denormalize_error(0.112, 94.5).map_err(|e| e.to_string())?;
    let rmse_v = denormalize_error(0.142, 94.5).map_err(|e| e.to_string())?;
    ensure(
        (mae_v - 10.584).abs() < 1e-9 && (rmse_v - 13.419).abs() < 1e-9,
        || format!("{mae_v} {rmse_v}"),
    )?;
    ensure(
        format!("{mae_v:.1}") == "10.6" && format!("{rmse_v:.1}") == "13.4",
        || "rounding".into(),
    )?;
    Ok(format!(
        "table matches golden byte-for-byte; {mae_v:.3} -> 10.6, {rmse_v:.3} -> 13.4"
    ))
}

// -------------------------------------------------------------- inversion

fn pipeline_inversion() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..3 {
        let (rows, out) = benchmark_rows(100 + seed, 0.0)?;
        let (rows, report) = clean(&rows);
        ensure(report.output_rows == 120, || {
            format!("{} rows after cleaning", report.output_rows)
        })?;
        let (ds, _) =
            split_dataset(&rows, 0.7, SplitMode::Chronological).map_err(|e| e.to_string())?;
        let mut recovered = Vec::new();
        for split in [&ds.train, &ds.test] {
            for (i, row) in split.rows.iter().enumerate() {
                let raw = ds.encoder.decode_numeric(split.design.x.row(i));
                recovered.push((
                    row.timestamp,
                    row.segment_no,
                    split.target[i],
                    raw[4],
                    raw[5],
                ));
            }
        }
        recovered.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)));
        ensure(recovered.len() == out.truth.len(), || {
            "row count differs from ground truth".into()
        })?;
        for (got, t) in recovered.iter().zip(&out.truth) {
            ensure((got.0, got.1) == (t.timestamp, t.segment_no), || {
                format!("row key {:?}", (got.0, got.1))
            })?;
            worst = worst
                .max((got.2 - t.availability).abs())
                .max((got.3 - f64::from(t.arrivals)).abs())
                .max((got.4 - f64::from(t.departures)).abs());
        }
    }
    ensure(worst < 1e-9, || format!("max error {worst:e}"))?;
    Ok(format!("3 seeds x 120 rows, max error {worst:.1e}"))
}

fn main() {
    let criteria: [(&str, Duration, fn() -> Outcome); 10] = [
        ("metric oracles", Duration::from_secs(1), metric_oracles),
        (
            "correlation oracles",
            Duration::from_secs(1),
            correlation_oracles,
        ),
        (
            "geometry oracles",
            Duration::from_secs(10),
            geometry_oracles,
        ),
        ("LSTM gradient check", Duration::from_secs(5), lstm_gradient),
        ("SVR correctness", Duration::from_secs(10), svr_correctness),
        (
            "forest determinism and bounds",
            Duration::from_secs(30),
            forest_determinism,
        ),
        ("CV/search laws", Duration::from_secs(30), cv_search_laws),
        (
            "directional RFR < LR",
            Duration::from_secs(180),
            directional,
        ),
        ("report fidelity", Duration::from_secs(1), report_fidelity),
        (
            "pipeline inversion",
            Duration::from_secs(30),
            pipeline_inversion,
        ),
    ];
    let total = Instant::now();
    let mut failed = 0;
    for (name, budget, check) in criteria {
        let start = Instant::now();
        let outcome =
            catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|_| Err("panicked".into()));
        let took = start.elapsed();
        let outcome = outcome.and_then(|d| {
            if took <= budget {
                Ok(d)
            } else {
                Err(format!("{d}; over budget {budget:?}"))
            }
        });
        match outcome {
            Ok(d) => println!("PASS {name} [{:.2?}]: {d}", took),
            Err(d) => {
                failed += 1;
                println!("FAIL {name} [{:.2?}]: {d}", took);
            }
        }
    }
    let took = total.elapsed();
    let within = took <= Duration::from_secs(300);
    println!("{} of 10 criteria passed in {took:.2?}", 10 - failed);
    if failed > 0 || !within {
        std::process::exit(1);
    }
}
