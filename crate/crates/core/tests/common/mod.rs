//! Independent reference implementations used by the integration tests.
//!
//! Everything here is written from first principles on top of `nalgebra` and
//! deliberately avoids the library's own covariance assembly, factorization and
//! pooling so that agreement is meaningful.

#![allow(dead_code)]

use mfgp_search::field_model::{FidelityLevel, FidelityModel, GridDomain, Location};
use mfgp_search::inference::{SampleLog, SampleRecord};
use mfgp_search::router::{path_length, Point3};
use nalgebra::{DMatrix, DVector};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Squared-exponential kernel written out directly.
pub fn se(v: f64, l: f64, a: Location, b: Location) -> f64 {
    let d2 = (a.x - b.x).powi(2) + (a.y - b.y).powi(2);
    v * v * (-d2 / (2.0 * l * l)).exp()
}

/// A random model with `levels` levels obeying the amplitude, length-scale and altitude ordering.
pub fn random_model(rng: &mut ChaCha8Rng, levels: usize) -> FidelityModel {
    let mut v = rng.random_range(0.4..1.0);
    let mut l = rng.random_range(2.0..4.0);
    let mut z = 12.0;
    let mut out = Vec::with_capacity(levels);
    for _ in 0..levels {
        out.push(FidelityLevel {
            mean: rng.random_range(-0.2..0.3),
            amplitude: v,
            length_scale: l,
            noise_std: rng.random_range(0.02..0.2),
            altitude: z,
        });
        v *= rng.random_range(0.4..0.8);
        l *= rng.random_range(0.4..0.8);
        z *= 0.5;
    }
    FidelityModel::new(out).expect("ordered random model")
}

/// `n` records with non-decreasing fidelities on `domain`; roughly one in four repeats an
/// earlier (cell, fidelity) pair so that repeated measurements are exercised.
pub fn random_log(rng: &mut ChaCha8Rng, domain: &GridDomain, levels: usize, n: usize) -> SampleLog {
    let mut fids: Vec<usize> = (0..n).map(|_| rng.random_range(1..=levels)).collect();
    fids.sort_unstable();
    let mut records: Vec<SampleRecord> = Vec::with_capacity(n);
    for &m in &fids {
        let repeat = records.iter().filter(|r| r.fidelity == m).map(|r| r.cell).collect::<Vec<_>>();
        let cell = if !repeat.is_empty() && rng.random_bool(0.25) {
            *repeat.choose(rng).unwrap()
        } else {
            rng.random_range(0..domain.len())
        };
        let value = rng.random_range(-0.5..1.5);
        records.push(SampleRecord::at_cell(domain, cell, value, m));
    }
    SampleLog::from_records(records).expect("valid log")
}

/// Posterior of `f` on the grid by conditioning the stacked latent layers
/// `[h^1(cells); ...; h^M(cells)]` on the records directly.
pub fn joint_conditioning(log: &SampleLog, domain: &GridDomain, model: &FidelityModel) -> (Vec<f64>, Vec<f64>) {
    let cells = domain.cells();
    let g = cells.len();
    let levels = model.levels();
    let big_m = levels.len();
    let dim = g * big_m;

    let mut cov_h = DMatrix::<f64>::zeros(dim, dim);
    let mut mean_h = DVector::<f64>::zeros(dim);
    for (m, lvl) in levels.iter().enumerate() {
        for i in 0..g {
            mean_h[m * g + i] = lvl.mean;
            for j in 0..g {
                cov_h[(m * g + i, m * g + j)] = se(lvl.amplitude, lvl.length_scale, cells[i], cells[j]);
            }
        }
    }
    let recs = log.records();
    let n = recs.len();
    let mut a = DMatrix::<f64>::zeros(n, dim);
    let mut noise = DMatrix::<f64>::zeros(n, n);
    let mut y = DVector::<f64>::zeros(n);
    for (k, r) in recs.iter().enumerate() {
        for m in 0..r.fidelity {
            a[(k, m * g + r.cell)] = 1.0;
        }
        noise[(k, k)] = levels[r.fidelity - 1].noise_std.powi(2);
        y[k] = r.value;
    }
    let mut b = DMatrix::<f64>::zeros(g, dim);
    for i in 0..g {
        for m in 0..big_m {
            b[(i, m * g + i)] = 1.0;
        }
    }
    let prior_f = &b * &mean_h;
    let cov_ff = &b * &cov_h * b.transpose();
    if n == 0 {
        return (prior_f.iter().copied().collect(), cov_ff.diagonal().iter().copied().collect());
    }
    let cov_yy = &a * &cov_h * a.transpose() + noise;
    let cov_fy = &b * &cov_h * a.transpose();
    let inv = cov_yy.lu().try_inverse().expect("observation covariance is invertible");
    let gain = &cov_fy * inv;
    let mean = prior_f + &gain * (y - &a * &mean_h);
    let cov = cov_ff - &gain * cov_fy.transpose();
    (mean.iter().copied().collect(), cov.diagonal().iter().copied().collect())
}

/// Textbook single-output GP regression with a squared-exponential kernel.
pub fn textbook_gp(
    xs: &[Location],
    ys: &[f64],
    query: &[Location],
    mean: f64,
    v: f64,
    l: f64,
    s: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = xs.len();
    let k = DMatrix::from_fn(n, n, |i, j| se(v, l, xs[i], xs[j]) + if i == j { s * s } else { 0.0 });
    let chol = k.cholesky().expect("positive definite");
    let resid = DVector::from_iterator(n, ys.iter().map(|y| y - mean));
    let alpha = chol.solve(&resid);
    let mut mu = Vec::with_capacity(query.len());
    let mut var = Vec::with_capacity(query.len());
    for &q in query {
        let kq = DVector::from_iterator(n, xs.iter().map(|&x| se(v, l, x, q)));
        mu.push(mean + kq.dot(&alpha));
        let w = chol.l().solve_lower_triangular(&kq).expect("triangular solve");
        var.push(v * v - w.dot(&w));
    }
    (mu, var)
}

/// `0.5 log det(I + s^-2 K)` for a single-level design.
pub fn mutual_information(xs: &[Location], v: f64, l: f64, s: f64) -> f64 {
    let n = xs.len();
    let m = DMatrix::from_fn(n, n, |i, j| se(v, l, xs[i], xs[j]) / (s * s) + if i == j { 1.0 } else { 0.0 });
    let chol = m.cholesky().expect("positive definite");
    chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

/// Gaussian log density of the records under the stacked-layer model, via nalgebra.
pub fn log_evidence(log: &SampleLog, model: &FidelityModel) -> f64 {
    let recs = log.records();
    let n = recs.len();
    let levels = model.levels();
    let cov = DMatrix::from_fn(n, n, |i, j| {
        let shared = recs[i].fidelity.min(recs[j].fidelity);
        let mut k: f64 = levels[..shared]
            .iter()
            .map(|lv| se(lv.amplitude, lv.length_scale, recs[i].location, recs[j].location))
            .sum();
        if i == j {
            k += levels[recs[i].fidelity - 1].noise_std.powi(2);
        }
        k
    });
    let mean = DVector::from_iterator(
        n,
        recs.iter().map(|r| levels[..r.fidelity].iter().map(|lv| lv.mean).sum::<f64>()),
    );
    let y = DVector::from_iterator(n, recs.iter().map(|r| r.value));
    let chol = cov.cholesky().expect("positive definite");
    let r = &y - &mean;
    let alpha = chol.solve(&r);
    let logdet = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    -0.5 * (n as f64 * (2.0 * std::f64::consts::PI).ln() + logdet) - 0.5 * r.dot(&alpha)
}

/// Shortest open tour from `start` through all `points` by exhaustive search.
pub fn brute_force_tour(start: Point3, points: &[Point3]) -> f64 {
    fn permute(k: usize, order: &mut Vec<usize>, start: Point3, points: &[Point3], best: &mut f64) {
        if k == order.len() {
            let wps: Vec<Point3> = order.iter().map(|&i| points[i]).collect();
            *best = best.min(path_length(start, &wps));
            return;
        }
        for i in k..order.len() {
            order.swap(k, i);
            permute(k + 1, order, start, points, best);
            order.swap(k, i);
        }
    }
    let mut order: Vec<usize> = (0..points.len()).collect();
    let mut best = f64::INFINITY;
    permute(0, &mut order, start, points, &mut best);
    best
}

/// Largest entrywise relative error `max|a - b| / max|b|`.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let scale = b.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let diff = a.iter().zip(b).fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()));
    if scale > 0.0 {
        diff / scale
    } else {
        diff
    }
}

/// Largest absolute difference.
pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()))
}
