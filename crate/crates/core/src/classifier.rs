//! Confidence-bound classification with region elimination.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::PosteriorField;

/// Fraction of classified cells at which a mission is complete.
pub const TERMINATION_FRACTION: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Uncertain,
    Empty,
    Target,
}

impl Label {
    pub fn as_str(&self) -> &'static str {
        match self {
            Label::Uncertain => "uncertain",
            Label::Empty => "empty",
            Label::Target => "target",
        }
    }
}

/// `c(eps) = sqrt(2 ln(1 / (2 eps)))`, defined for `0 < eps < 1/2`.
pub fn confidence_multiplier(epsilon: f64) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon < 0.5) {
        return Err(Error::invalid(format!("confidence level {epsilon} outside (0, 1/2)")));
    }
    Ok((2.0 * (1.0 / (2.0 * epsilon)).ln()).sqrt())
}

/// `(mu - c(eps) sigma, mu + c(eps) sigma)`.
pub fn confidence_interval(mu: f64, sigma: f64, epsilon: f64) -> Result<(f64, f64)> {
    if sigma < 0.0 || !sigma.is_finite() {
        return Err(Error::invalid(format!("standard deviation {sigma} must be finite and non-negative")));
    }
    let c = confidence_multiplier(epsilon)?;
    Ok((mu - c * sigma, mu + c * sigma))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceParams {
    delta: f64,
    threshold: f64,
}

impl ConfidenceParams {
    pub fn new(delta: f64, threshold: f64) -> Result<Self> {
        if !(delta > 0.0 && delta < 0.5) {
            return Err(Error::invalid(format!("δ = {delta} must lie in (0, 1/2)")));
        }
        if !threshold.is_finite() {
            return Err(Error::invalid("detection threshold must be finite"));
        }
        Ok(ConfidenceParams { delta, threshold })
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    /// `eps_j = delta / 2^j` for epoch `j >= 1`.
    pub fn epsilon(&self, epoch: usize) -> f64 {
        self.delta / 2f64.powi(epoch as i32)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellState {
    pub label: Label,
    /// Epoch in which the label was assigned.
    pub epoch: Option<usize>,
    /// Mission clock at classification.
    pub time: Option<f64>,
    /// Bounds from the latest evaluation (frozen once classified).
    pub lower: f64,
    pub upper: f64,
}

impl Default for CellState {
    fn default() -> Self {
        CellState {
            label: Label::Uncertain,
            epoch: None,
            time: None,
            lower: f64::NEG_INFINITY,
            upper: f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMap {
    cells: Vec<CellState>,
}

impl ClassificationMap {
    pub fn new(len: usize) -> Self {
        ClassificationMap {
            cells: vec![CellState::default(); len],
        }
    }

    pub fn cells(&self) -> &[CellState] {
        &self.cells
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn label(&self, cell: usize) -> Label {
        self.cells[cell].label
    }

    pub fn count(&self, label: Label) -> usize {
        self.cells.iter().filter(|c| c.label == label).count()
    }

    pub fn classified_fraction(&self) -> f64 {
        if self.cells.is_empty() {
            return 1.0;
        }
        (self.cells.len() - self.count(Label::Uncertain)) as f64 / self.cells.len() as f64
    }

    /// Cells still open for sampling: everything not classified empty.
    pub fn candidates(&self) -> Vec<bool> {
        self.cells.iter().map(|c| c.label != Label::Empty).collect()
    }
}

/// Classifies every uncertain cell at the end of `epoch` with `eps = delta / 2^epoch`.
/// Returns the updated map; labels already assigned are kept.
pub fn classify_epoch(
    posterior: &PosteriorField,
    map: &ClassificationMap,
    params: &ConfidenceParams,
    epoch: usize,
    time: f64,
) -> Result<ClassificationMap> {
    if epoch == 0 {
        return Err(Error::invalid("epochs are numbered from 1"));
    }
    if posterior.len() != map.len() {
        return Err(Error::invalid("posterior and classification map sizes differ"));
    }
    let eps = params.epsilon(epoch);
    let c = confidence_multiplier(eps)?;
    let th = params.threshold();
    let cells = map
        .cells
        .iter()
        .enumerate()
        .map(|(i, state)| {
            if state.label != Label::Uncertain {
                return *state;
            }
            let sigma = posterior.sigma(i);
            let mu = posterior.mean()[i];
            let (lower, upper) = (mu - c * sigma, mu + c * sigma);
            let label = if lower >= th {
                Label::Target
            } else if upper < th {
                Label::Empty
            } else {
                Label::Uncertain
            };
            let done = label != Label::Uncertain;
            CellState {
                label,
                epoch: done.then_some(epoch),
                time: done.then_some(time),
                lower,
                upper,
            }
        })
        .collect();
    Ok(ClassificationMap { cells })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    Continue,
    /// At least 99% of the cells are classified.
    Done,
    /// The epoch cap was reached first.
    EpochCap,
}

pub fn check_termination(map: &ClassificationMap, epoch: usize, max_epochs: usize) -> Termination {
    if map.classified_fraction() >= TERMINATION_FRACTION {
        Termination::Done
    } else if epoch >= max_epochs {
        Termination::EpochCap
    } else {
        Termination::Continue
    }
}
