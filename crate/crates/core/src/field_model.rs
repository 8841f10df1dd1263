//! Search domain, multi-fidelity prior and the synthetic environment.
//!
//! The score field at fidelity `m` is the autoregressive sum
//! `f^m = f^{m-1} + h^m` with `f^0 = 0`, where every bias layer `h^m` is an
//! independent GP with constant mean `mu_m` and squared-exponential kernel
//! `v_m^2 exp(-|x - x'|^2 / (2 l_m^2))`. Level `M` is the ground truth.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::LowerFactor;

/// Largest grid (in cells) for which an exact joint prior draw is attempted.
pub const MAX_JOINT_DRAW_CELLS: usize = 10_000;

/// Diagonal jitter, relative to the largest diagonal entry, added before
/// factorizing a prior covariance for sampling.
pub const PRIOR_JITTER: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Location {
    pub x: f64,
    pub y: f64,
}

impl Location {
    pub const fn new(x: f64, y: f64) -> Self {
        Location { x, y }
    }

    #[inline]
    pub fn dist2(&self, other: &Location) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }

    pub fn dist(&self, other: &Location) -> f64 {
        self.dist2(other).sqrt()
    }
}

/// Axis-aligned rectangle discretized into `resolution x resolution` cells.
///
/// Cells are numbered row-major: index `row * resolution + col`, with `col`
/// along x and `row` along y.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridDomain {
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
    resolution: usize,
}

impl GridDomain {
    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64, resolution: usize) -> Result<Self> {
        let finite = [x_min, x_max, y_min, y_max].iter().all(|v| v.is_finite());
        if !finite || x_max <= x_min || y_max <= y_min {
            return Err(Error::invalid(format!(
                "domain bounds must satisfy x_max > x_min and y_max > y_min, got x=[{x_min}, {x_max}] y=[{y_min}, {y_max}]"
            )));
        }
        if resolution == 0 {
            return Err(Error::invalid("grid resolution must be positive"));
        }
        Ok(GridDomain {
            x_min,
            x_max,
            y_min,
            y_max,
            resolution,
        })
    }

    /// Square domain `[0, side]^2`.
    pub fn square(side: f64, resolution: usize) -> Result<Self> {
        Self::new(0.0, side, 0.0, side, resolution)
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }
    pub fn x_max(&self) -> f64 {
        self.x_max
    }
    pub fn y_min(&self) -> f64 {
        self.y_min
    }
    pub fn y_max(&self) -> f64 {
        self.y_max
    }
    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn len(&self) -> usize {
        self.resolution * self.resolution
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell_width(&self) -> f64 {
        (self.x_max - self.x_min) / self.resolution as f64
    }

    pub fn cell_height(&self) -> f64 {
        (self.y_max - self.y_min) / self.resolution as f64
    }

    /// Center of cell `index`. Panics when out of range.
    pub fn cell(&self, index: usize) -> Location {
        assert!(index < self.len(), "cell index {index} out of range");
        let row = index / self.resolution;
        let col = index % self.resolution;
        Location::new(
            self.x_min + (col as f64 + 0.5) * self.cell_width(),
            self.y_min + (row as f64 + 0.5) * self.cell_height(),
        )
    }

    pub fn cells(&self) -> Vec<Location> {
        (0..self.len()).map(|i| self.cell(i)).collect()
    }

    /// Index of the cell containing `loc`, if inside the domain.
    pub fn cell_index(&self, loc: Location) -> Option<usize> {
        if !self.contains(loc) {
            return None;
        }
        let col = (((loc.x - self.x_min) / self.cell_width()) as usize).min(self.resolution - 1);
        let row = (((loc.y - self.y_min) / self.cell_height()) as usize).min(self.resolution - 1);
        Some(row * self.resolution + col)
    }

    pub fn contains(&self, loc: Location) -> bool {
        loc.x >= self.x_min && loc.x <= self.x_max && loc.y >= self.y_min && loc.y <= self.y_max
    }

    /// Length of the longer side.
    pub fn side(&self) -> f64 {
        (self.x_max - self.x_min).max(self.y_max - self.y_min)
    }
}

/// Hyperparameters of one fidelity level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FidelityLevel {
    /// Prior mean of the bias layer.
    pub mean: f64,
    /// Kernel amplitude `v_m`.
    pub amplitude: f64,
    /// Kernel length scale `l_m` in meters.
    pub length_scale: f64,
    /// Observation noise standard deviation `s_m`.
    pub noise_std: f64,
    /// Sensing altitude `z_m` in meters.
    pub altitude: f64,
}

/// Autoregressive stack of fidelity levels, lowest fidelity (highest altitude) first.
///
/// Fidelity indices in the public API are 1-based, matching `m = 1..=M`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityModel {
    levels: Vec<FidelityLevel>,
}

impl FidelityModel {
    /// Checks the level orderings. Zero noise is accepted here so that
    /// noiseless limits can be studied; missions require `s_m > 0`.
    pub fn new(levels: Vec<FidelityLevel>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::invalid("fidelity model needs at least one level"));
        }
        for (i, lvl) in levels.iter().enumerate() {
            let m = i + 1;
            let vals = [lvl.mean, lvl.amplitude, lvl.length_scale, lvl.noise_std, lvl.altitude];
            if vals.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("level {m}: hyperparameters must be finite")));
            }
            if lvl.amplitude <= 0.0 {
                return Err(Error::invalid(format!("level {m}: v_{m} must be positive")));
            }
            if lvl.length_scale <= 0.0 {
                return Err(Error::invalid(format!("level {m}: l_{m} must be positive")));
            }
            if lvl.altitude <= 0.0 {
                return Err(Error::invalid(format!("level {m}: z_{m} must be positive")));
            }
            if lvl.noise_std < 0.0 {
                return Err(Error::invalid(format!("level {m}: s_{m} must be non-negative")));
            }
        }
        for (i, pair) in levels.windows(2).enumerate() {
            let (m, n) = (i + 1, i + 2);
            if pair[1].amplitude >= pair[0].amplitude {
                return Err(Error::invalid(format!(
                    "amplitudes must be strictly decreasing: v_{n} = {} >= v_{m} = {}",
                    pair[1].amplitude, pair[0].amplitude
                )));
            }
            if pair[1].length_scale >= pair[0].length_scale {
                return Err(Error::invalid(format!(
                    "length scales must be strictly decreasing: l_{n} = {} >= l_{m} = {}",
                    pair[1].length_scale, pair[0].length_scale
                )));
            }
            if pair[1].altitude >= pair[0].altitude {
                return Err(Error::invalid(format!(
                    "altitudes must be strictly decreasing: z_{n} = {} >= z_{m} = {}",
                    pair[1].altitude, pair[0].altitude
                )));
            }
        }
        Ok(FidelityModel { levels })
    }

    /// Mission-level check: every level must be observed with positive noise.
    pub fn require_positive_noise(&self) -> Result<()> {
        for (i, lvl) in self.levels.iter().enumerate() {
            if lvl.noise_std <= 0.0 {
                return Err(Error::invalid(format!("level {}: s_{} must be positive", i + 1, i + 1)));
            }
        }
        Ok(())
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn levels(&self) -> &[FidelityLevel] {
        &self.levels
    }

    /// Level `m` (1-based).
    pub fn level(&self, m: usize) -> Result<&FidelityLevel> {
        self.check_fidelity(m)?;
        Ok(&self.levels[m - 1])
    }

    pub fn check_fidelity(&self, m: usize) -> Result<()> {
        if m == 0 || m > self.levels.len() {
            return Err(Error::invalid(format!(
                "fidelity index {m} outside 1..={}",
                self.levels.len()
            )));
        }
        Ok(())
    }

    /// Kernel `k^m(a, b)` of bias layer `m`.
    pub fn kernel_eval(&self, m: usize, a: Location, b: Location) -> Result<f64> {
        self.check_fidelity(m)?;
        Ok(self.kernel_unchecked(m - 1, a.dist2(&b)))
    }

    #[inline]
    pub(crate) fn kernel_unchecked(&self, level0: usize, dist2: f64) -> f64 {
        let lvl = &self.levels[level0];
        lvl.amplitude * lvl.amplitude * (-dist2 / (2.0 * lvl.length_scale * lvl.length_scale)).exp()
    }

    /// `Cov(f^m(a), f^{m'}(b))` for `min(m, m') = upto`, i.e. `sum_{i <= upto} k^i(a, b)`.
    #[inline]
    pub(crate) fn cumulative_kernel(&self, upto: usize, dist2: f64) -> f64 {
        (0..upto).map(|i| self.kernel_unchecked(i, dist2)).sum()
    }

    /// Prior mean and covariance of the ground-truth field `f = f^M`.
    pub fn prior_moments(&self, a: Location, b: Location) -> (f64, f64) {
        (self.prior_mean(), self.cumulative_kernel(self.levels.len(), a.dist2(&b)))
    }

    /// `sum_m mu_m`.
    pub fn prior_mean(&self) -> f64 {
        self.levels.iter().map(|l| l.mean).sum()
    }

    /// Prior mean of a fidelity-`m` observation, `sum_{i <= m} mu_i`.
    pub fn mean_upto(&self, m: usize) -> f64 {
        self.levels[..m].iter().map(|l| l.mean).sum()
    }

    /// `sum_m v_m^2`.
    pub fn prior_variance(&self) -> f64 {
        self.variance_upto(self.levels.len())
    }

    /// Prior variance of `f^m`, `sum_{i <= m} v_i^2`.
    pub fn variance_upto(&self, m: usize) -> f64 {
        self.levels[..m].iter().map(|l| l.amplitude * l.amplitude).sum()
    }

    /// Inaccessible uncertainty `xi_m = sum_{i > m} v_i^2`.
    pub fn inaccessible_uncertainty(&self, m: usize) -> f64 {
        self.levels[m..].iter().map(|l| l.amplitude * l.amplitude).sum()
    }

    /// Switching threshold `tau_m = (l_{m+1}^2 / l_m^2) v_{m+1}^2`; `None` at the top level.
    pub fn switch_threshold(&self, m: usize) -> Option<f64> {
        if m == 0 || m >= self.levels.len() {
            return None;
        }
        let cur = &self.levels[m - 1];
        let next = &self.levels[m];
        let ratio = (next.length_scale * next.length_scale) / (cur.length_scale * cur.length_scale);
        Some(ratio * next.amplitude * next.amplitude)
    }

    pub fn noise_variance(&self, m: usize) -> f64 {
        let s = self.levels[m - 1].noise_std;
        s * s
    }

    pub fn altitude(&self, m: usize) -> f64 {
        self.levels[m - 1].altitude
    }
}

/// One radial bump of a planted field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub center: Location,
    pub amplitude: f64,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedField {
    pub background: f64,
    pub bumps: Vec<Bump>,
    /// Blur standard deviation of level `m < M` is `blur_scale * l_m`.
    pub blur_scale: f64,
}

impl PlantedField {
    pub fn value_at(&self, loc: Location) -> f64 {
        self.background
            + self
                .bumps
                .iter()
                .map(|b| b.amplitude * (-loc.dist2(&b.center) / (2.0 * b.radius * b.radius)).exp())
                .sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum TruthMode {
    PriorDraw,
    Planted(PlantedField),
}

/// Synthetic ground truth: every fidelity layer evaluated on the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    domain: GridDomain,
    threshold: f64,
    /// `layers[m - 1]` holds `f^m`.
    layers: Vec<Vec<f64>>,
    /// `increments[m - 1]` holds `h^m = f^m - f^{m-1}`.
    increments: Vec<Vec<f64>>,
    target_mask: Vec<bool>,
}

impl GroundTruth {
    /// Builds a ground truth from the stacked layers `f^1..f^M`.
    pub fn from_layers(domain: GridDomain, layers: Vec<Vec<f64>>, threshold: f64) -> Result<Self> {
        if layers.is_empty() || layers.iter().any(|l| l.len() != domain.len()) {
            return Err(Error::invalid("every layer must cover the grid"));
        }
        let mut increments = Vec::with_capacity(layers.len());
        for (m, layer) in layers.iter().enumerate() {
            let inc = if m == 0 {
                layer.clone()
            } else {
                layer.iter().zip(&layers[m - 1]).map(|(a, b)| a - b).collect()
            };
            increments.push(inc);
        }
        let target_mask = layers
            .last()
            .map(|f| f.iter().map(|&v| v >= threshold).collect())
            .unwrap_or_default();
        Ok(GroundTruth {
            domain,
            threshold,
            layers,
            increments,
            target_mask,
        })
    }

    pub fn domain(&self) -> &GridDomain {
        &self.domain
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn num_levels(&self) -> usize {
        self.layers.len()
    }

    /// `f^m` on the grid (1-based `m`).
    pub fn layer(&self, m: usize) -> &[f64] {
        &self.layers[m - 1]
    }

    /// `h^m` on the grid (1-based `m`).
    pub fn increment(&self, m: usize) -> &[f64] {
        &self.increments[m - 1]
    }

    /// Ground-truth score `f = f^M`.
    pub fn field(&self) -> &[f64] {
        self.layers.last().expect("at least one layer")
    }

    pub fn target_mask(&self) -> &[bool] {
        &self.target_mask
    }

    /// Noisy observation `f^m(x) + eps`, `eps ~ N(0, s_m^2)`, at cell `cell`.
    pub fn measure<R: Rng + ?Sized>(
        &self,
        model: &FidelityModel,
        cell: usize,
        m: usize,
        rng: &mut R,
    ) -> Result<f64> {
        model.check_fidelity(m)?;
        if m > self.layers.len() || cell >= self.domain.len() {
            return Err(Error::invalid(format!("no ground truth for cell {cell} at fidelity {m}")));
        }
        let s = model.levels()[m - 1].noise_std;
        let eps: f64 = if s > 0.0 {
            Normal::new(0.0, s)
                .map_err(|e| Error::invalid(e.to_string()))?
                .sample(rng)
        } else {
            0.0
        };
        Ok(self.layers[m - 1][cell] + eps)
    }
}

/// Generates a deterministic synthetic ground truth.
pub fn sample_ground_truth(
    domain: &GridDomain,
    model: &FidelityModel,
    seed: u64,
    mode: &TruthMode,
    threshold: f64,
) -> Result<GroundTruth> {
    let layers = match mode {
        TruthMode::PriorDraw => PriorSampler::new(domain, model)?.draw_layers(seed),
        TruthMode::Planted(planted) => planted_layers(domain, model, planted),
    };
    GroundTruth::from_layers(domain.clone(), layers, threshold)
}

/// Exact joint sampler for the prior layers over a grid.
///
/// The per-level factorizations are computed once, so repeated draws only cost
/// a triangular matrix-vector product per level.
#[derive(Debug, Clone)]
pub struct PriorSampler {
    means: Vec<f64>,
    factors: Vec<LowerFactor>,
}

impl PriorSampler {
    pub fn new(domain: &GridDomain, model: &FidelityModel) -> Result<Self> {
        let n = domain.len();
        if n > MAX_JOINT_DRAW_CELLS {
            return Err(Error::invalid(format!(
                "exact prior draw over {n} cells exceeds the {MAX_JOINT_DRAW_CELLS}-cell limit"
            )));
        }
        let cells = domain.cells();
        let mut cov = vec![0.0; n * n];
        let mut factors = Vec::with_capacity(model.num_levels());
        for (level0, lvl) in model.levels().iter().enumerate() {
            for i in 0..n {
                for j in 0..=i {
                    let k = model.kernel_unchecked(level0, cells[i].dist2(&cells[j]));
                    cov[i * n + j] = k;
                    cov[j * n + i] = k;
                }
            }
            let jitter = PRIOR_JITTER * lvl.amplitude * lvl.amplitude;
            let context = format!("prior draw of level {}", level0 + 1);
            factors.push(LowerFactor::factorize(&cov, n, jitter, &context)?);
        }
        Ok(PriorSampler {
            means: model.levels().iter().map(|l| l.mean).collect(),
            factors,
        })
    }

    /// Draws `f^1..f^M` (accumulated) with a generator seeded by `seed`.
    pub fn draw_layers(&self, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers: Vec<Vec<f64>> = Vec::with_capacity(self.factors.len());
        for (factor, mean) in self.factors.iter().zip(&self.means) {
            let n = factor.dim();
            let z: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
            let prev = layers.last();
            let layer: Vec<f64> = (0..n)
                .map(|i| {
                    let h = mean + crate::linalg::dot(factor.row(i), &z[..=i]);
                    prev.map_or(0.0, |p| p[i]) + h
                })
                .collect();
            layers.push(layer);
        }
        layers
    }
}

fn planted_layers(domain: &GridDomain, model: &FidelityModel, planted: &PlantedField) -> Vec<Vec<f64>> {
    let cells = domain.cells();
    let top: Vec<f64> = cells.iter().map(|&c| planted.value_at(c)).collect();
    let num = model.num_levels();
    let mut layers: Vec<Vec<f64>> = model.levels()[..num - 1]
        .iter()
        .map(|lvl| gaussian_blur(&cells, &top, planted.blur_scale * lvl.length_scale))
        .collect();
    layers.push(top);
    layers
}

/// Normalized Gaussian smoothing of grid values, truncated at four standard deviations.
fn gaussian_blur(cells: &[Location], values: &[f64], sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return values.to_vec();
    }
    let cutoff2 = (4.0 * sigma).powi(2);
    cells
        .iter()
        .map(|c| {
            let (mut num, mut den) = (0.0, 0.0);
            for (other, v) in cells.iter().zip(values) {
                let d2 = c.dist2(other);
                if d2 <= cutoff2 {
                    let w = (-d2 / (2.0 * sigma * sigma)).exp();
                    num += w * v;
                    den += w;
                }
            }
            num / den
        })
        .collect()
}
