//! End-to-end search loop and the studies built on it.
//!
//! One epoch is: plan (variance only) -> route -> execute -> exact inference ->
//! classify -> eliminate empty cells -> check termination.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{
    check_termination, classify_epoch, ClassificationMap, ConfidenceParams, Label, Termination,
};
use crate::error::{Error, Result};
use crate::field_model::{sample_ground_truth, FidelityLevel, FidelityModel, GridDomain, TruthMode};
use crate::inference::{posterior, PosteriorField, SampleLog};
use crate::planner::{plan_epoch, select_next_point, EpochPlan, FidelityState, PlanLimits};
use crate::router::{execute_epoch, plan_tours, Clock, Point3, Visit, DEFAULT_SAMPLING_TIME};

pub const REPORT_SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_MAX_EPOCHS: usize = 30;

/// Cells whose true score is this close to the threshold are left out of
/// misclassification accounting.
pub const BOUNDARY_BAND: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FidelityPolicy {
    /// Start at level 1 and switch upwards by the accessible-uncertainty rule.
    MultiFidelity,
    /// Sample only at the top level from the start.
    SingleFidelity,
}

impl FidelityPolicy {
    pub fn initial_state(&self, model: &FidelityModel) -> FidelityState {
        match self {
            FidelityPolicy::MultiFidelity => FidelityState::lowest(model),
            FidelityPolicy::SingleFidelity => FidelityState::highest(model),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissionConfig {
    pub domain: GridDomain,
    pub model: FidelityModel,
    pub delta: f64,
    pub threshold: f64,
    pub limits: PlanLimits,
    pub max_epochs: usize,
    pub sampling_time: f64,
    pub seed: u64,
    pub truth: TruthMode,
    pub policy: FidelityPolicy,
}

impl MissionConfig {
    /// 20 m x 20 m floor on a 20 x 20 grid, two fidelity levels at 11 m and 5 m.
    pub fn desk() -> Self {
        let model = FidelityModel::new(vec![
            FidelityLevel { mean: 0.1, amplitude: 0.5, length_scale: 4.0, noise_std: 0.1, altitude: 11.0 },
            FidelityLevel { mean: 0.05, amplitude: 0.3, length_scale: 2.0, noise_std: 0.05, altitude: 5.0 },
        ])
        .expect("desk model is valid");
        MissionConfig {
            domain: GridDomain::square(20.0, 20).expect("desk domain is valid"),
            model,
            delta: 0.1,
            threshold: 0.5,
            limits: PlanLimits::default(),
            max_epochs: DEFAULT_MAX_EPOCHS,
            sampling_time: DEFAULT_SAMPLING_TIME,
            seed: 0,
            truth: TruthMode::PriorDraw,
            policy: FidelityPolicy::MultiFidelity,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.require_positive_noise()?;
        ConfidenceParams::new(self.delta, self.threshold)?;
        if self.limits.max_samples == 0 || self.max_epochs == 0 {
            return Err(Error::invalid("sample and epoch caps must be positive"));
        }
        if !(self.limits.ratio > 0.0 && self.limits.ratio <= 1.0) {
            return Err(Error::invalid("epoch ratio must lie in (0, 1]"));
        }
        if !(self.sampling_time >= 0.0 && self.sampling_time.is_finite()) {
            return Err(Error::invalid("sampling time must be finite and non-negative"));
        }
        if matches!(self.truth, TruthMode::PriorDraw) && self.domain.len() > crate::field_model::MAX_JOINT_DRAW_CELLS {
            return Err(Error::invalid(format!(
                "prior-draw mode supports at most {} cells, grid has {}",
                crate::field_model::MAX_JOINT_DRAW_CELLS,
                self.domain.len()
            )));
        }
        if let TruthMode::Planted(p) = &self.truth {
            if p.bumps.iter().any(|b| !(b.radius > 0.0)) || !(p.blur_scale >= 0.0) {
                return Err(Error::invalid("planted bumps need positive radii and a non-negative blur scale"));
            }
        }
        Ok(())
    }

    pub fn start_position(&self) -> Point3 {
        let m = self.policy.initial_state(&self.model).level();
        Point3::new(self.domain.x_min(), self.domain.y_min(), self.model.altitude(m))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub samples_before: usize,
    pub samples: usize,
    pub fidelities: Vec<usize>,
    pub epsilon: f64,
    /// Largest posterior standard deviation over the epoch's candidate cells.
    pub max_sigma_before: f64,
    pub predicted_max_sigma_after: f64,
    pub max_sigma_after: f64,
    pub capped: bool,
    pub altitude_changes: usize,
    pub newly_target: usize,
    pub newly_empty: usize,
    pub classified_fraction: f64,
    pub clock: f64,
}

impl EpochRecord {
    pub fn ratio(&self) -> f64 {
        if self.max_sigma_before > 0.0 {
            self.max_sigma_after / self.max_sigma_before
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub cell: usize,
    pub x: f64,
    pub y: f64,
    pub label: Label,
    pub truth_label: Label,
    pub truth_value: f64,
    /// `|f(x) - th|`.
    pub gap: f64,
    pub epoch: Option<usize>,
    /// Mission clock at classification, `t(x, delta)`.
    pub detection_time: Option<f64>,
    pub lower: f64,
    pub upper: f64,
}

impl CellReport {
    pub fn is_boundary(&self) -> bool {
        self.gap <= BOUNDARY_BAND
    }

    pub fn is_misclassified(&self) -> bool {
        self.label != Label::Uncertain && self.label != self.truth_label
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayPoint {
    pub n: usize,
    pub max_variance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleDiagnostic {
    pub n: usize,
    pub epoch: usize,
    pub cell: usize,
    pub x: f64,
    pub y: f64,
    pub fidelity: usize,
    pub value: f64,
    pub sigma2_before: f64,
    pub info_gain: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Misclassification {
    /// Classified cells outside the boundary band.
    pub classified: usize,
    pub misclassified: usize,
    pub false_targets: usize,
    pub missed_targets: usize,
    pub boundary_excluded: usize,
}

impl Misclassification {
    pub fn from_cells(cells: &[CellReport]) -> Self {
        let mut out = Misclassification::default();
        for c in cells {
            if c.label == Label::Uncertain {
                continue;
            }
            if c.is_boundary() {
                out.boundary_excluded += 1;
                continue;
            }
            out.classified += 1;
            if c.is_misclassified() {
                out.misclassified += 1;
                match c.label {
                    Label::Target => out.false_targets += 1,
                    _ => out.missed_targets += 1,
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanRow {
    pub epoch: usize,
    pub order: usize,
    pub cell: usize,
    pub x: f64,
    pub y: f64,
    pub fidelity: usize,
    pub sigma_before: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissionReport {
    pub schema_version: u32,
    pub config: MissionConfig,
    pub termination: Termination,
    pub epochs: Vec<EpochRecord>,
    pub total_samples: usize,
    pub final_clock: f64,
    pub travel: f64,
    pub classified_fraction: f64,
    pub fidelity_trace: Vec<usize>,
    pub misclassification: Misclassification,
    pub decay: Vec<DecayPoint>,
    pub cells: Vec<CellReport>,
    pub plan: Vec<PlanRow>,
    pub visits: Vec<Visit>,
    pub samples: Vec<SampleDiagnostic>,
    pub final_mean: Vec<f64>,
    pub final_variance: Vec<f64>,
}

/// Runs the search loop until 99% of the cells are classified or the epoch cap.
pub fn run_mission(config: &MissionConfig) -> Result<MissionReport> {
    config.validate()?;
    let params = ConfidenceParams::new(config.delta, config.threshold)?;
    let domain = &config.domain;
    let model = &config.model;
    let truth = sample_ground_truth(domain, model, config.seed, &config.truth, config.threshold)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);

    let mut log = SampleLog::new();
    let mut field = posterior(&log, domain, model)?;
    let mut state = config.policy.initial_state(model);
    let mut map = ClassificationMap::new(domain.len());
    let mut position = config.start_position();
    let mut clock = Clock::default();
    let mut epochs = Vec::new();
    let mut decay = vec![DecayPoint { n: 0, max_variance: model.prior_variance() }];
    let mut plan_rows = Vec::new();
    let mut visits = Vec::new();
    let mut samples = Vec::new();
    let mut termination = Termination::Continue;

    for epoch in 1..=config.max_epochs {
        let candidates = map.candidates();
        if !candidates.iter().any(|&c| c) {
            termination = check_termination(&map, epoch, config.max_epochs);
            break;
        }
        let step = run_epoch(
            config,
            &truth,
            &params,
            EpochInput { field: &field, state, map: &map, candidates: &candidates, epoch },
            &mut position,
            &mut clock,
            &mut log,
            &mut rng,
        )
        .map_err(|e| e.in_epoch(epoch))?;

        for (k, p) in step.plan.points.iter().enumerate() {
            let n = step.plan.samples_before + k + 1;
            decay.push(DecayPoint { n, max_variance: p.max_variance_after });
            plan_rows.push(PlanRow {
                epoch,
                order: k,
                cell: p.cell,
                x: p.location.x,
                y: p.location.y,
                fidelity: p.fidelity,
                sigma_before: p.sigma_before,
            });
            let s2 = model.noise_variance(p.fidelity);
            let sigma2_before = p.sigma_before * p.sigma_before;
            samples.push(SampleDiagnostic {
                n,
                epoch,
                cell: p.cell,
                x: p.location.x,
                y: p.location.y,
                fidelity: p.fidelity,
                value: f64::NAN,
                sigma2_before,
                info_gain: 0.5 * (sigma2_before / s2).ln_1p(),
            });
        }
        visits.extend(step.visits.iter().copied());
        state = step.plan.final_state;
        field = step.field;
        map = step.map;
        epochs.push(step.record);
        termination = check_termination(&map, epoch, config.max_epochs);
        if termination != Termination::Continue {
            break;
        }
    }
    // Diagnostics follow the planned order; fill in the values observed on tour.
    let mut observed = std::collections::HashMap::new();
    for v in &visits {
        observed.entry((v.epoch, v.cell)).or_insert_with(Vec::new).push(v.value);
    }
    for s in samples.iter_mut() {
        if let Some(vals) = observed.get_mut(&(s.epoch, s.cell)) {
            if !vals.is_empty() {
                s.value = vals.remove(0);
            }
        }
    }

    let cells: Vec<CellReport> = (0..domain.len())
        .map(|i| {
            let loc = domain.cell(i);
            let st = map.cells()[i];
            let f = truth.field()[i];
            CellReport {
                cell: i,
                x: loc.x,
                y: loc.y,
                label: st.label,
                truth_label: if truth.target_mask()[i] { Label::Target } else { Label::Empty },
                truth_value: f,
                gap: (f - config.threshold).abs(),
                epoch: st.epoch,
                detection_time: st.time,
                lower: st.lower,
                upper: st.upper,
            }
        })
        .collect();

    let mut fidelity_trace: Vec<usize> = Vec::new();
    for r in log.records() {
        if fidelity_trace.last() != Some(&r.fidelity) {
            fidelity_trace.push(r.fidelity);
        }
    }

    Ok(MissionReport {
        schema_version: REPORT_SCHEMA_VERSION,
        config: config.clone(),
        termination,
        total_samples: log.len(),
        final_clock: clock.time,
        travel: clock.travel,
        classified_fraction: map.classified_fraction(),
        fidelity_trace,
        misclassification: Misclassification::from_cells(&cells),
        epochs,
        decay,
        cells,
        plan: plan_rows,
        visits,
        samples,
        final_mean: field.mean().to_vec(),
        final_variance: field.variance().to_vec(),
    })
}

struct EpochInput<'a> {
    field: &'a PosteriorField,
    state: FidelityState,
    map: &'a ClassificationMap,
    candidates: &'a [bool],
    epoch: usize,
}

struct EpochOutput {
    plan: EpochPlan,
    field: PosteriorField,
    map: ClassificationMap,
    visits: Vec<Visit>,
    record: EpochRecord,
}

#[allow(clippy::too_many_arguments)]
fn run_epoch(
    config: &MissionConfig,
    truth: &crate::field_model::GroundTruth,
    params: &ConfidenceParams,
    input: EpochInput<'_>,
    position: &mut Point3,
    clock: &mut Clock,
    log: &mut SampleLog,
    rng: &mut ChaCha8Rng,
) -> Result<EpochOutput> {
    let model = &config.model;
    let EpochInput { field, state, map, candidates, epoch } = input;
    let (plan, _) = plan_epoch(field, state, candidates, &config.limits, epoch)?;
    let tours = plan_tours(&plan, model, *position)?;
    let exec = execute_epoch(&plan, &tours, truth, model, position, clock, log, config.sampling_time, rng)?;
    let next = posterior(log, &config.domain, model)?;
    let max_sigma_after = next.max_variance(Some(candidates)).unwrap_or(0.0).sqrt();
    let next_map = classify_epoch(&next, map, params, epoch, clock.time)?;
    let newly = |label: Label| {
        (0..map.len())
            .filter(|&i| map.label(i) == Label::Uncertain && next_map.label(i) == label)
            .count()
    };
    let mut fidelities: Vec<usize> = plan.points.iter().map(|p| p.fidelity).collect();
    fidelities.dedup();
    let record = EpochRecord {
        epoch,
        samples_before: plan.samples_before,
        samples: plan.points.len(),
        fidelities,
        epsilon: params.epsilon(epoch),
        max_sigma_before: plan.max_sigma_before,
        predicted_max_sigma_after: plan.predicted_max_sigma_after,
        max_sigma_after,
        capped: plan.capped,
        altitude_changes: exec.altitude_changes,
        newly_target: newly(Label::Target),
        newly_empty: newly(Label::Empty),
        classified_fraction: next_map.classified_fraction(),
        clock: clock.time,
    };
    Ok(EpochOutput {
        plan,
        field: next,
        map: next_map,
        visits: exec.visits,
        record,
    })
}

/// Runs one mission per seed in parallel; results are in seed order.
pub fn run_missions(config: &MissionConfig, seeds: &[u64]) -> Result<Vec<MissionReport>> {
    seeds
        .par_iter()
        .map(|&seed| {
            let mut cfg = config.clone();
            cfg.seed = seed;
            run_mission(&cfg)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayComparison {
    pub multi_fidelity: Vec<DecayPoint>,
    pub single_fidelity: Vec<DecayPoint>,
}

/// Greedy variance-only sampling over the whole grid for `n_samples` steps,
/// once with fidelity switching and once pinned to the top level.
pub fn compare_decay(config: &MissionConfig, n_samples: usize) -> Result<DecayComparison> {
    if config.model.num_levels() < 2 {
        return Err(Error::invalid("decay comparison needs at least two fidelity levels"));
    }
    let run = |policy: FidelityPolicy| -> Result<Vec<DecayPoint>> {
        let model = &config.model;
        let mut field = posterior(&SampleLog::new(), &config.domain, model)?;
        let mask = vec![true; config.domain.len()];
        let mut state = policy.initial_state(model);
        let mut curve = Vec::with_capacity(n_samples + 1);
        let mut max_var = field.max_variance(None).unwrap_or(0.0);
        curve.push(DecayPoint { n: 0, max_variance: max_var });
        for n in 1..=n_samples {
            state = state.update(model, max_var);
            let cell = select_next_point(&field, &mask).expect("grid is non-empty");
            let loc = field.points()[cell];
            field.append_in_place(loc, state.level())?;
            max_var = field.max_variance(None).unwrap_or(0.0);
            curve.push(DecayPoint { n, max_variance: max_var });
        }
        Ok(curve)
    };
    Ok(DecayComparison {
        multi_fidelity: run(FidelityPolicy::MultiFidelity)?,
        single_fidelity: run(FidelityPolicy::SingleFidelity)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionBin {
    pub gap_lower: f64,
    pub gap_upper: f64,
    pub mean_time: Option<f64>,
    pub classified: usize,
    /// Cells still uncertain when their mission stopped.
    pub censored: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionTimeTable {
    pub seeds: Vec<u64>,
    pub delta: f64,
    pub bins: Vec<DetectionBin>,
}

/// Bins cells by `|f(x) - th|` (equal-count bins over all pooled cells) and
/// averages the classification time of each bin over missions.
pub fn detection_time_study(config: &MissionConfig, seeds: &[u64], num_bins: usize) -> Result<DetectionTimeTable> {
    if !matches!(config.truth, TruthMode::PriorDraw) {
        return Err(Error::invalid("detection-time study requires prior-draw ground truth"));
    }
    if num_bins == 0 || seeds.is_empty() {
        return Err(Error::invalid("detection-time study needs at least one bin and one seed"));
    }
    let reports = run_missions(config, seeds)?;
    Ok(detection_time_table(config.delta, seeds, &reports, num_bins))
}

/// Detection-time table from already computed missions.
pub fn detection_time_table(delta: f64, seeds: &[u64], reports: &[MissionReport], num_bins: usize) -> DetectionTimeTable {
    let pooled: Vec<(f64, Option<f64>)> = reports
        .iter()
        .flat_map(|r| r.cells.iter().map(|c| (c.gap, c.detection_time)))
        .collect();
    let mut gaps: Vec<f64> = pooled.iter().map(|p| p.0).collect();
    gaps.sort_by(f64::total_cmp);
    let edges: Vec<f64> = (0..=num_bins)
        .map(|k| {
            if k == num_bins {
                f64::INFINITY
            } else {
                gaps.get(k * gaps.len() / num_bins).copied().unwrap_or(0.0)
            }
        })
        .collect();
    let bins = (0..num_bins)
        .map(|k| {
            let (lo, hi) = (edges[k], edges[k + 1]);
            let lo_incl = if k == 0 { f64::NEG_INFINITY } else { lo };
            let members = pooled.iter().filter(|(g, _)| *g >= lo_incl && *g < hi);
            let (mut sum, mut classified, mut censored) = (0.0, 0usize, 0usize);
            for (_, t) in members {
                match t {
                    Some(t) => {
                        sum += t;
                        classified += 1;
                    }
                    None => censored += 1,
                }
            }
            DetectionBin {
                gap_lower: lo,
                gap_upper: hi,
                mean_time: (classified > 0).then(|| sum / classified as f64),
                classified,
                censored,
            }
        })
        .collect();
    DetectionTimeTable {
        seeds: seeds.to_vec(),
        delta,
        bins,
    }
}
