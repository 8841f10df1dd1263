//! Epoch planning: greedy max-variance selection with fidelity switching.
//!
//! Posterior variances do not depend on observed values, so a whole epoch is
//! planned by appending hypothetical samples to a copy of the posterior until
//! the largest standard deviation over the candidate cells has shrunk by the
//! epoch ratio.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field_model::{FidelityModel, Location};
use crate::inference::PosteriorField;

pub const DEFAULT_EPOCH_RATIO: f64 = 0.75;
pub const DEFAULT_MAX_SAMPLES_PER_EPOCH: usize = 200;

/// Current fidelity level and its switching quantities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FidelityState {
    level: usize,
    num_levels: usize,
}

impl FidelityState {
    /// Mission start: the lowest fidelity.
    pub fn lowest(model: &FidelityModel) -> Self {
        FidelityState {
            level: 1,
            num_levels: model.num_levels(),
        }
    }

    /// Single-fidelity baseline: pinned to the top level.
    pub fn highest(model: &FidelityModel) -> Self {
        FidelityState {
            level: model.num_levels(),
            num_levels: model.num_levels(),
        }
    }

    pub fn at_level(model: &FidelityModel, level: usize) -> Result<Self> {
        model.check_fidelity(level)?;
        Ok(FidelityState {
            level,
            num_levels: model.num_levels(),
        })
    }

    pub fn level(&self) -> usize {
        self.level
    }

    pub fn is_top(&self) -> bool {
        self.level == self.num_levels
    }

    /// `xi_m`, the prior variance no fidelity-`m` sample can remove.
    pub fn inaccessible_uncertainty(&self, model: &FidelityModel) -> f64 {
        model.inaccessible_uncertainty(self.level)
    }

    /// `tau_m`; `None` at the top level.
    pub fn switch_threshold(&self, model: &FidelityModel) -> Option<f64> {
        model.switch_threshold(self.level)
    }

    /// Accessible uncertainty `r^m = max sigma^2 - xi_m`.
    pub fn accessible_uncertainty(&self, model: &FidelityModel, max_variance: f64) -> f64 {
        max_variance - self.inaccessible_uncertainty(model)
    }

    /// Advances the level while `r^m <= tau_m`. Never decreases.
    pub fn update(self, model: &FidelityModel, max_variance: f64) -> Self {
        let mut next = self;
        while let Some(tau) = next.switch_threshold(model) {
            if next.accessible_uncertainty(model, max_variance) <= tau {
                next.level += 1;
            } else {
                break;
            }
        }
        next
    }
}

/// Applies the switching rule using the largest variance over the candidate cells.
pub fn update_fidelity(
    state: FidelityState,
    model: &FidelityModel,
    posterior: &PosteriorField,
    candidates: &[bool],
) -> FidelityState {
    match posterior.max_variance(Some(candidates)) {
        Some(max_var) => state.update(model, max_var),
        None => state,
    }
}

/// Most uncertain candidate cell; ties go to the lowest index. `None` means
/// there is nothing left to plan.
pub fn select_next_point(posterior: &PosteriorField, candidates: &[bool]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in posterior.variance().iter().enumerate() {
        if !candidates[i] {
            continue;
        }
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanLimits {
    /// Required `max sigma after / max sigma before`.
    pub ratio: f64,
    pub max_samples: usize,
}

impl Default for PlanLimits {
    fn default() -> Self {
        PlanLimits {
            ratio: DEFAULT_EPOCH_RATIO,
            max_samples: DEFAULT_MAX_SAMPLES_PER_EPOCH,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlannedPoint {
    pub cell: usize,
    pub location: Location,
    pub fidelity: usize,
    /// Predicted posterior standard deviation at the point just before sampling it.
    pub sigma_before: f64,
    /// Predicted largest candidate variance after the sample.
    pub max_variance_after: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochPlan {
    pub epoch: usize,
    /// Samples collected before the epoch (`n_j`).
    pub samples_before: usize,
    pub points: Vec<PlannedPoint>,
    pub max_sigma_before: f64,
    pub predicted_max_sigma_after: f64,
    /// The sample cap was hit before the ratio was met.
    pub capped: bool,
    pub final_state: FidelityState,
}

impl EpochPlan {
    pub fn predicted_ratio(&self) -> f64 {
        if self.max_sigma_before > 0.0 {
            self.predicted_max_sigma_after / self.max_sigma_before
        } else {
            0.0
        }
    }

    /// Consecutive runs of points sharing a fidelity, lowest first.
    pub fn fidelity_groups(&self) -> Vec<(usize, Vec<PlannedPoint>)> {
        let mut groups: Vec<(usize, Vec<PlannedPoint>)> = Vec::new();
        for p in &self.points {
            match groups.last_mut() {
                Some((m, pts)) if *m == p.fidelity => pts.push(*p),
                _ => groups.push((p.fidelity, vec![*p])),
            }
        }
        groups
    }
}

/// Plans one epoch from the posterior at its start.
///
/// Returns the plan and the predicted posterior after all planned samples.
pub fn plan_epoch(
    posterior: &PosteriorField,
    state: FidelityState,
    candidates: &[bool],
    limits: &PlanLimits,
    epoch: usize,
) -> Result<(EpochPlan, PosteriorField)> {
    if candidates.len() != posterior.len() {
        return Err(Error::invalid("candidate mask does not match the posterior grid"));
    }
    if !(limits.ratio > 0.0 && limits.ratio <= 1.0) || limits.max_samples == 0 {
        return Err(Error::invalid("epoch ratio must lie in (0, 1] and the sample cap must be positive"));
    }
    let model = posterior.model().clone();
    let max_var_before = posterior
        .max_variance(Some(candidates))
        .ok_or_else(|| Error::invalid("no uneliminated cell to plan over"))?;
    let max_sigma_before = max_var_before.sqrt();
    let mut state = state.update(&model, max_var_before);
    let mut field = posterior.clone();
    let mut points = Vec::new();
    let mut max_var = max_var_before;
    let mut capped = false;
    loop {
        if points.len() >= limits.max_samples {
            capped = true;
            break;
        }
        let Some(cell) = select_next_point(&field, candidates) else {
            break;
        };
        let location = field.points()[cell];
        let fidelity = state.level();
        let sigma_before = field.sigma(cell);
        field.append_in_place(location, fidelity)?;
        max_var = field.max_variance(Some(candidates)).unwrap_or(0.0);
        points.push(PlannedPoint {
            cell,
            location,
            fidelity,
            sigma_before,
            max_variance_after: max_var,
        });
        state = state.update(&model, max_var);
        if max_var.sqrt() <= limits.ratio * max_sigma_before {
            break;
        }
    }
    let plan = EpochPlan {
        epoch,
        samples_before: posterior.num_samples(),
        points,
        max_sigma_before,
        predicted_max_sigma_after: max_var.sqrt(),
        capped,
        final_state: state,
    };
    Ok((plan, field))
}
