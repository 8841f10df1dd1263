//! Exact multi-fidelity GP inference.
//!
//! A fidelity-`m` record observes `f^m(x) + eps_m`. Two records of fidelities
//! `m` and `m'` covary through the shared layers `1..=min(m, m')`, and a record
//! covaries with the ground truth `f = f^M` through layers `1..=m`. The
//! posterior of `f` on the grid is obtained from one Cholesky factorization of
//! `K + Theta`; each cell keeps its whitened cross-covariance `L^{-1} k(x)` so
//! that hypothetical samples can be appended by extending the factor by one row.
//!
//! Repeated records at the same location and fidelity are pooled into one site
//! carrying their average value and noise variance `s_m^2 / k`. The average is
//! a sufficient statistic for the repeats, so the posterior is unchanged while
//! the factorization size is bounded by the number of distinct sites.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field_model::{FidelityModel, GridDomain, Location};
use crate::linalg::{dot, LowerFactor};

/// Negative posterior variances down to this value are rounding noise and are clamped to zero.
pub const NEGATIVE_VARIANCE_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub cell: usize,
    pub location: Location,
    pub value: f64,
    /// 1-based fidelity level.
    pub fidelity: usize,
}

impl SampleRecord {
    pub fn at_cell(domain: &GridDomain, cell: usize, value: f64, fidelity: usize) -> Self {
        SampleRecord {
            cell,
            location: domain.cell(cell),
            value,
            fidelity,
        }
    }
}

/// Ordered location-score-fidelity records collected during a mission.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SampleLog {
    records: Vec<SampleRecord>,
}

impl SampleLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_records(records: Vec<SampleRecord>) -> Result<Self> {
        let mut log = SampleLog::new();
        for r in records {
            log.push(r)?;
        }
        Ok(log)
    }

    /// Appends a record. Fidelities must be non-decreasing along the log.
    pub fn push(&mut self, record: SampleRecord) -> Result<()> {
        if record.fidelity == 0 {
            return Err(Error::invalid("fidelity levels are 1-based"));
        }
        if let Some(last) = self.records.last() {
            if record.fidelity < last.fidelity {
                return Err(Error::invalid(format!(
                    "fidelity sequence must be non-decreasing: {} after {}",
                    record.fidelity, last.fidelity
                )));
            }
        }
        if !record.value.is_finite() {
            return Err(Error::invalid("sample value must be finite"));
        }
        self.records.push(record);
        Ok(())
    }

    pub fn records(&self) -> &[SampleRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Positions of the records collected at fidelity `m` (the set `P_n^m`).
    pub fn fidelity_indices(&self, m: usize) -> Vec<usize> {
        self.records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.fidelity == m)
            .map(|(i, _)| i)
            .collect()
    }

    fn check_against(&self, model: &FidelityModel) -> Result<()> {
        for r in &self.records {
            model.check_fidelity(r.fidelity)?;
        }
        Ok(())
    }
}

/// Prior covariance `K`, noise `Theta` and prior means `nu` of the observations.
#[derive(Debug, Clone, PartialEq)]
pub struct JointCovariance {
    n: usize,
    kernel: Vec<f64>,
    noise: Vec<f64>,
    prior_means: Vec<f64>,
}

impl JointCovariance {
    pub fn build(log: &SampleLog, model: &FidelityModel) -> Result<Self> {
        log.check_against(model)?;
        let recs = log.records();
        let n = recs.len();
        let mut kernel = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let shared = recs[i].fidelity.min(recs[j].fidelity);
                let k = model.cumulative_kernel(shared, recs[i].location.dist2(&recs[j].location));
                kernel[i * n + j] = k;
                kernel[j * n + i] = k;
            }
        }
        let noise = recs.iter().map(|r| model.noise_variance(r.fidelity)).collect();
        let prior_means = recs.iter().map(|r| model.mean_upto(r.fidelity)).collect();
        Ok(JointCovariance {
            n,
            kernel,
            noise,
            prior_means,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// `K` (row-major).
    pub fn kernel(&self) -> &[f64] {
        &self.kernel
    }

    /// Diagonal of `Theta`.
    pub fn noise(&self) -> &[f64] {
        &self.noise
    }

    /// `nu_n`.
    pub fn prior_means(&self) -> &[f64] {
        &self.prior_means
    }

    /// `K + Theta` (row-major).
    pub fn with_noise(&self) -> Vec<f64> {
        let mut a = self.kernel.clone();
        for (i, s2) in self.noise.iter().enumerate() {
            a[i * self.n + i] += s2;
        }
        a
    }

    fn factorize(&self, context: &str) -> Result<LowerFactor> {
        LowerFactor::factorize(&self.with_noise(), self.n, 0.0, context)
    }
}

/// `Cov(y_j, f(x))` for every record `j`: `sum_{i <= m_j} k^i(x_j, x)`.
pub fn cross_covariance(x: Location, log: &SampleLog, model: &FidelityModel) -> Vec<f64> {
    log.records()
        .iter()
        .map(|r| model.cumulative_kernel(r.fidelity, r.location.dist2(&x)))
        .collect()
}

/// A conditioning site: a distinct (location, fidelity) pair and its effective noise variance.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Site {
    location: Location,
    fidelity: usize,
    noise: f64,
}

/// Pools repeated records into sites; returns the sites and their averaged values, in order of
/// first appearance.
fn pool_records(log: &SampleLog, model: &FidelityModel) -> (Vec<Site>, Vec<f64>) {
    let mut index = std::collections::HashMap::new();
    let mut sums: Vec<(f64, usize)> = Vec::new();
    let mut sites: Vec<Site> = Vec::new();
    for r in log.records() {
        let key = (r.location.x.to_bits(), r.location.y.to_bits(), r.fidelity);
        let i = *index.entry(key).or_insert_with(|| {
            sites.push(Site { location: r.location, fidelity: r.fidelity, noise: 0.0 });
            sums.push((0.0, 0));
            sites.len() - 1
        });
        sums[i].0 += r.value;
        sums[i].1 += 1;
    }
    let values = sums.iter().map(|(sum, k)| sum / *k as f64).collect();
    for (site, (_, k)) in sites.iter_mut().zip(&sums) {
        site.noise = model.noise_variance(site.fidelity) / *k as f64;
    }
    (sites, values)
}

/// Cholesky factor of `K + Theta` over the sites.
fn factorize_sites(sites: &[Site], model: &FidelityModel, context: &str) -> Result<LowerFactor> {
    let n = sites.len();
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let shared = sites[i].fidelity.min(sites[j].fidelity);
            let k = model.cumulative_kernel(shared, sites[i].location.dist2(&sites[j].location));
            a[i * n + j] = k;
            a[j * n + i] = k;
        }
        a[i * n + i] += sites[i].noise;
    }
    LowerFactor::factorize(&a, n, 0.0, context)
}

/// Posterior mean and variance of `f` over a fixed set of points.
///
/// Snapshots are immutable from the outside: [`PosteriorField::append_sample_variance_only`]
/// returns a new field. The mean only reflects records with observed values;
/// appended hypothetical samples change the variance alone.
#[derive(Debug, Clone)]
pub struct PosteriorField {
    model: FidelityModel,
    points: Vec<Location>,
    mean: Vec<f64>,
    variance: Vec<f64>,
    design: Vec<Site>,
    samples: usize,
    observed: usize,
    factor: LowerFactor,
    projections: Vec<Vec<f64>>,
}

impl PosteriorField {
    /// Prior field over `points` (no samples).
    pub fn prior_over(points: Vec<Location>, model: &FidelityModel) -> Self {
        let n = points.len();
        PosteriorField {
            model: model.clone(),
            mean: vec![model.prior_mean(); n],
            variance: vec![model.prior_variance(); n],
            projections: vec![Vec::new(); n],
            points,
            design: Vec::new(),
            samples: 0,
            observed: 0,
            factor: LowerFactor::default(),
        }
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn variance(&self) -> &[f64] {
        &self.variance
    }

    pub fn sigma(&self, cell: usize) -> f64 {
        self.variance[cell].sqrt()
    }

    pub fn points(&self) -> &[Location] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn model(&self) -> &FidelityModel {
        &self.model
    }

    /// Number of samples (observed and hypothetical) conditioned on.
    pub fn num_samples(&self) -> usize {
        self.samples
    }

    /// Number of conditioning sites. Repeated observed records at one location and
    /// fidelity share a site; every hypothetical append adds one.
    pub fn num_sites(&self) -> usize {
        self.design.len()
    }

    /// Number of samples whose observed values enter the mean.
    pub fn num_observed(&self) -> usize {
        self.observed
    }

    /// Largest variance over all points, or over the points where `mask` is true.
    pub fn max_variance(&self, mask: Option<&[bool]>) -> Option<f64> {
        let it = self.variance.iter().enumerate();
        match mask {
            Some(m) => it.filter(|(i, _)| m[*i]).map(|(_, v)| *v).reduce(f64::max),
            None => self.variance.iter().copied().reduce(f64::max),
        }
    }

    /// Adds a hypothetical sample at `(location, fidelity)`; returns a new snapshot.
    pub fn append_sample_variance_only(&self, location: Location, fidelity: usize) -> Result<Self> {
        let mut next = self.clone();
        next.append_in_place(location, fidelity)?;
        Ok(next)
    }

    /// In-place form of [`Self::append_sample_variance_only`], used by the planner.
    pub fn append_in_place(&mut self, location: Location, fidelity: usize) -> Result<()> {
        self.model.check_fidelity(fidelity)?;
        let mut cross: Vec<f64> = self
            .design
            .iter()
            .map(|s| self.model.cumulative_kernel(s.fidelity.min(fidelity), s.location.dist2(&location)))
            .collect();
        self.factor.forward_solve(&mut cross);
        let noise = self.model.noise_variance(fidelity);
        let prior = self.model.variance_upto(fidelity) + noise;
        let pivot = prior - dot(&cross, &cross);
        let floor = crate::linalg::RELATIVE_PIVOT_FLOOR * prior;
        if !(pivot > floor) {
            return self.refactorize_with(Site { location, fidelity, noise });
        }
        let diag = pivot.sqrt();
        let model = &self.model;
        self.points
            .iter()
            .zip(self.projections.iter_mut())
            .zip(self.variance.iter_mut())
            .for_each(|((x, proj), var)| {
                let k = model.cumulative_kernel(fidelity, location.dist2(x));
                let w = (k - dot(&cross, proj)) / diag;
                proj.push(w);
                *var = (*var - w * w).max(0.0);
            });
        self.factor.push_row(cross, diag);
        self.design.push(Site { location, fidelity, noise });
        self.samples += 1;
        Ok(())
    }

    fn refactorize_with(&mut self, site: Site) -> Result<()> {
        let mut design = self.design.clone();
        design.push(site);
        let rebuilt = variance_only(self.points.clone(), &design, &self.model)?;
        self.variance = rebuilt.variance;
        self.projections = rebuilt.projections;
        self.factor = rebuilt.factor;
        self.design = design;
        self.samples += 1;
        Ok(())
    }
}

/// Exact posterior of `f` on every grid cell given the sample log.
pub fn posterior(log: &SampleLog, domain: &GridDomain, model: &FidelityModel) -> Result<PosteriorField> {
    for r in log.records() {
        if r.cell >= domain.len() || domain.cell(r.cell) != r.location {
            return Err(Error::invalid(format!(
                "record at ({}, {}) is not the center of cell {}",
                r.location.x, r.location.y, r.cell
            )));
        }
    }
    posterior_at(log, domain.cells(), model)
}

/// Exact posterior of `f` at arbitrary points.
pub fn posterior_at(log: &SampleLog, points: Vec<Location>, model: &FidelityModel) -> Result<PosteriorField> {
    log.check_against(model)?;
    let (design, values) = pool_records(log, model);
    let factor = factorize_sites(&design, model, "posterior inference")?;
    let mut residual: Vec<f64> = design
        .iter()
        .zip(&values)
        .map(|(s, y)| y - model.mean_upto(s.fidelity))
        .collect();
    factor.forward_solve(&mut residual);

    let (projections, variance) = project_points(&points, &design, &factor, model)?;
    let prior_mean = model.prior_mean();
    let mean = projections.iter().map(|w| prior_mean + dot(w, &residual)).collect();
    Ok(PosteriorField {
        model: model.clone(),
        points,
        mean,
        variance,
        samples: log.len(),
        observed: log.len(),
        design,
        factor,
        projections,
    })
}

/// Posterior over `points` for a design without observed values.
fn variance_only(points: Vec<Location>, design: &[Site], model: &FidelityModel) -> Result<PosteriorField> {
    let factor = factorize_sites(design, model, "variance refactorization")?;
    let (projections, variance) = project_points(&points, design, &factor, model)?;
    Ok(PosteriorField {
        model: model.clone(),
        mean: vec![model.prior_mean(); points.len()],
        points,
        variance,
        samples: design.len(),
        observed: 0,
        design: design.to_vec(),
        factor,
        projections,
    })
}

type Projections = (Vec<Vec<f64>>, Vec<f64>);

fn project_points(
    points: &[Location],
    design: &[Site],
    factor: &LowerFactor,
    model: &FidelityModel,
) -> Result<Projections> {
    let prior_var = model.prior_variance();
    let per_point: Vec<(Vec<f64>, f64)> = points
        .par_iter()
        .map(|x| {
            let mut w: Vec<f64> = design
                .iter()
                .map(|s| model.cumulative_kernel(s.fidelity, s.location.dist2(x)))
                .collect();
            factor.forward_solve(&mut w);
            let var = prior_var - dot(&w, &w);
            (w, var)
        })
        .collect();
    let mut projections = Vec::with_capacity(points.len());
    let mut variance = Vec::with_capacity(points.len());
    for (i, (w, var)) in per_point.into_iter().enumerate() {
        if var < -NEGATIVE_VARIANCE_TOLERANCE {
            return Err(Error::NumericalFailure {
                context: format!("posterior variance at point {i}"),
                pivot: i,
                value: var,
                jitter: 0.0,
            });
        }
        projections.push(w);
        variance.push(var.max(0.0));
    }
    Ok((projections, variance))
}

/// One term of the information-gain chain rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InfoGainTerm {
    /// Posterior variance of `f` at the record location before the record.
    pub sigma2_before: f64,
    /// `0.5 * ln(1 + sigma2_before / s^2)` in nats.
    pub increment: f64,
}

/// Chain-rule terms `0.5 ln(1 + s_{m_i}^{-2} sigma_{i-1}^2(x_i))` in log order.
pub fn info_gain_terms(log: &SampleLog, model: &FidelityModel) -> Result<Vec<InfoGainTerm>> {
    log.check_against(model)?;
    let points: Vec<Location> = log.records().iter().map(|r| r.location).collect();
    let mut state = PosteriorField::prior_over(points, model);
    let mut terms = Vec::with_capacity(log.len());
    for (i, r) in log.records().iter().enumerate() {
        let sigma2_before = state.variance()[i];
        let s2 = model.noise_variance(r.fidelity);
        let increment = 0.5 * (sigma2_before / s2).ln_1p();
        terms.push(InfoGainTerm { sigma2_before, increment });
        state.append_in_place(r.location, r.fidelity)?;
    }
    Ok(terms)
}

/// Information gain of the log in nats, accumulated in log order.
pub fn greedy_info_gain(log: &SampleLog, model: &FidelityModel) -> Result<f64> {
    Ok(info_gain_terms(log, model)?.iter().map(|t| t.increment).sum())
}

/// `-0.5 log det(2 pi (K + Theta)) - 0.5 (y - nu)^T (K + Theta)^{-1} (y - nu)`.
pub fn log_marginal_likelihood(log: &SampleLog, model: &FidelityModel) -> Result<f64> {
    let joint = JointCovariance::build(log, model)?;
    let factor = joint.factorize("marginal likelihood")?;
    let mut r: Vec<f64> = log
        .records()
        .iter()
        .zip(joint.prior_means())
        .map(|(rec, nu)| rec.value - nu)
        .collect();
    factor.forward_solve(&mut r);
    let n = log.len() as f64;
    Ok(-0.5 * (n * (2.0 * std::f64::consts::PI).ln() + factor.log_det()) - 0.5 * dot(&r, &r))
}
