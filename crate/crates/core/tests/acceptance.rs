//! Acceptance suite: twelve end-to-end criteria, one PASS/FAIL line each.
//!
//! Runs as a plain binary (no libtest harness) so that every line is printed
//! regardless of output capturing. The process exits non-zero if any criterion
//! fails.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use mfgp_search::classifier::{confidence_interval, Label, Termination};
use mfgp_search::export::to_json;
use mfgp_search::field_model::{Bump, FidelityLevel, FidelityModel, GridDomain, Location, PlantedField, TruthMode};
use mfgp_search::inference::{greedy_info_gain, info_gain_terms, posterior, SampleLog, SampleRecord};
use mfgp_search::mission::{
    compare_decay, detection_time_table, run_mission, run_missions, MissionConfig, MissionReport, Misclassification,
};
use mfgp_search::planner::{select_next_point, FidelityState};
use mfgp_search::router::{build_tour, nearest_neighbor_order, path_length, Point3};
use rand::Rng;
use rayon::prelude::*;
use rand_distr::{Distribution, StandardNormal};
use statrs::distribution::{Binomial, DiscreteCDF};

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Outcome { pass, detail: detail.into() }
    }
}

fn secs(d: Duration) -> String {
    format!("{:.2}s", d.as_secs_f64())
}

/// Criterion 1: grid posterior equals direct conditioning of the stacked latent layers.
fn inference_oracle() -> Outcome {
    let start = Instant::now();
    let domain = GridDomain::square(10.0, 10).unwrap();
    let (mut worst_mean, mut worst_var) = (0.0_f64, 0.0_f64);
    for design in 0..50u64 {
        let mut rng = common::rng(1000 + design);
        let levels = 1 + (design % 3) as usize;
        let model = common::random_model(&mut rng, levels);
        let n = rng.random_range(1..=15);
        let log = common::random_log(&mut rng, &domain, levels, n);
        let post = posterior(&log, &domain, &model).unwrap();
        let (mean, var) = common::joint_conditioning(&log, &domain, &model);
        worst_mean = worst_mean.max(common::relative_error(post.mean(), &mean));
        worst_var = worst_var.max(common::relative_error(post.variance(), &var));
    }
    let elapsed = start.elapsed();
    Outcome::new(
        worst_mean <= 1e-8 && worst_var <= 1e-8 && elapsed < Duration::from_secs(10),
        format!(
            "50 designs, max relative error mean {worst_mean:.2e}, variance {worst_var:.2e} (tol 1e-8), {}",
            secs(elapsed)
        ),
    )
}

/// Criterion 2: a single-level model reproduces textbook GP regression.
fn single_fidelity_reduction() -> Outcome {
    let domain = GridDomain::square(10.0, 10).unwrap();
    let mut worst = 0.0_f64;
    for case in 0..20u64 {
        let mut rng = common::rng(2000 + case);
        let model = common::random_model(&mut rng, 1);
        let lvl = model.levels()[0];
        let n = rng.random_range(1..=20);
        let log = common::random_log(&mut rng, &domain, 1, n);
        let post = posterior(&log, &domain, &model).unwrap();
        let xs: Vec<Location> = log.records().iter().map(|r| r.location).collect();
        let ys: Vec<f64> = log.records().iter().map(|r| r.value).collect();
        let (mean, var) =
            common::textbook_gp(&xs, &ys, &domain.cells(), lvl.mean, lvl.amplitude, lvl.length_scale, lvl.noise_std);
        worst = worst.max(common::max_abs_diff(post.mean(), &mean));
        worst = worst.max(common::max_abs_diff(post.variance(), &var));
    }
    Outcome::new(worst <= 1e-10, format!("20 cases, max abs difference {worst:.2e} (tol 1e-10)"))
}

/// Criterion 3: chain-rule information gain equals `0.5 log det(I + s^-2 K)`.
fn mutual_information_identity() -> Outcome {
    let mut worst = 0.0_f64;
    for n in 1..=20usize {
        for rep in 0..3u64 {
            let mut rng = common::rng(3000 + 10 * n as u64 + rep);
            let (v, l, s) = (rng.random_range(0.3..1.0), rng.random_range(0.5..4.0), rng.random_range(0.05..0.5));
            let model = FidelityModel::new(vec![FidelityLevel {
                mean: 0.0,
                amplitude: v,
                length_scale: l,
                noise_std: s,
                altitude: 5.0,
            }])
            .unwrap();
            let records: Vec<SampleRecord> = (0..n)
                .map(|_| SampleRecord {
                    cell: 0,
                    location: Location::new(rng.random_range(0.0..10.0), rng.random_range(0.0..10.0)),
                    value: 0.0,
                    fidelity: 1,
                })
                .collect();
            let xs: Vec<Location> = records.iter().map(|r| r.location).collect();
            let log = SampleLog::from_records(records).unwrap();
            let ig = greedy_info_gain(&log, &model).unwrap();
            worst = worst.max((ig - common::mutual_information(&xs, v, l, s)).abs());
        }
    }
    Outcome::new(worst <= 1e-8, format!("60 designs with n <= 20, max abs difference {worst:.2e} (tol 1e-8)"))
}

/// Criterion 4: greedy max-variance sampling obeys the information-gain bound.
fn uncertainty_reduction_bound() -> Outcome {
    let start = Instant::now();
    let domain = GridDomain::square(20.0, 20).unwrap();
    let s = 0.1;
    let single = FidelityModel::new(vec![FidelityLevel {
        mean: 0.1,
        amplitude: 0.6,
        length_scale: 2.0,
        noise_std: s,
        altitude: 5.0,
    }])
    .unwrap();
    let mut multi_levels = MissionConfig::desk().model.levels().to_vec();
    for lvl in multi_levels.iter_mut() {
        lvl.noise_std = s;
    }
    let multi = FidelityModel::new(multi_levels).unwrap();

    let mut pass = true;
    let mut details = Vec::new();
    for (name, model) in [("single-level", &single), ("two-level", &multi)] {
        let mask = vec![true; domain.len()];
        let mut field = posterior(&SampleLog::new(), &domain, model).unwrap();
        let mut state = FidelityState::lowest(model);
        let mut log = SampleLog::new();
        let mut max_var = Vec::with_capacity(100);
        for _ in 0..100 {
            state = state.update(model, field.max_variance(None).unwrap());
            let cell = select_next_point(&field, &mask).unwrap();
            field.append_in_place(domain.cell(cell), state.level()).unwrap();
            log.push(SampleRecord::at_cell(&domain, cell, 0.0, state.level())).unwrap();
            max_var.push(field.max_variance(None).unwrap());
        }
        let terms = info_gain_terms(&log, model).unwrap();
        let sigma0 = model.prior_variance();
        let c = 2.0 * sigma0 / (sigma0 / (s * s)).ln_1p();
        let mut gain = 0.0;
        let mut min_slack = f64::INFINITY;
        for (i, t) in terms.iter().enumerate() {
            gain += t.increment;
            let n = (i + 1) as f64;
            min_slack = min_slack.min(c * gain / n - max_var[i]);
        }
        pass &= min_slack >= 0.0;
        details.push(format!("{name} min slack {min_slack:.3e}"));
    }
    let elapsed = start.elapsed();
    pass &= elapsed < Duration::from_secs(60);
    Outcome::new(pass, format!("n <= 100 on 20x20: {}, {}", details.join(", "), secs(elapsed)))
}

/// Criterion 5: Monte Carlo tail mass beyond the confidence bounds.
fn confidence_coverage() -> Outcome {
    let draws = 1_000_000usize;
    let (mu, sigma) = (0.3, 0.7);
    let mut rng = common::rng(5000);
    let z: Vec<f64> = (0..draws).map(|_| StandardNormal.sample(&mut rng)).collect();
    let mut pass = true;
    let mut parts = Vec::new();
    for eps in [0.01, 0.05, 0.1] {
        let (lo, hi) = confidence_interval(mu, sigma, eps).unwrap();
        let above = z.iter().filter(|&&z| mu + sigma * z > hi).count() as f64 / draws as f64;
        let below = z.iter().filter(|&&z| mu + sigma * z < lo).count() as f64 / draws as f64;
        let limit = eps + 3.0 * (eps * (1.0 - eps) / draws as f64).sqrt();
        pass &= above <= limit && below <= limit;
        parts.push(format!("eps {eps}: above {above:.4}, below {below:.4} (limit {limit:.4})"));
    }
    Outcome::new(pass, format!("10^6 draws; {}", parts.join("; ")))
}

/// Criterion 6: pooled misclassification rate over prior-draw missions.
fn misclassification_guarantee(reports: &[MissionReport], elapsed: Duration) -> Outcome {
    let mut pooled = Misclassification::default();
    for r in reports {
        pooled.classified += r.misclassification.classified;
        pooled.misclassified += r.misclassification.misclassified;
        pooled.boundary_excluded += r.misclassification.boundary_excluded;
    }
    let n = pooled.classified as u64;
    let k = pooled.misclassified as u64;
    // One-sided test of H0: rate <= 0.1 against rate > 0.1; reject when P(X >= k) < 0.05.
    let p_value = if k == 0 { 1.0 } else { Binomial::new(0.1, n).unwrap().sf(k - 1) };
    let rate = k as f64 / n.max(1) as f64;
    Outcome::new(
        n > 0 && p_value >= 0.05 && elapsed < Duration::from_secs(600),
        format!(
            "{} missions, {k}/{n} misclassified (rate {rate:.4}), p-value {p_value:.3} vs 0.05, {} boundary cells excluded, {}",
            reports.len(),
            pooled.boundary_excluded,
            secs(elapsed)
        ),
    )
}

fn three_level_config() -> MissionConfig {
    let mut cfg = MissionConfig::desk();
    cfg.model = FidelityModel::new(vec![
        FidelityLevel { mean: 0.1, amplitude: 0.5, length_scale: 4.0, noise_std: 0.1, altitude: 11.0 },
        FidelityLevel { mean: 0.05, amplitude: 0.3, length_scale: 2.0, noise_std: 0.05, altitude: 5.0 },
        FidelityLevel { mean: 0.02, amplitude: 0.15, length_scale: 1.0, noise_std: 0.03, altitude: 2.0 },
    ])
    .unwrap();
    cfg
}

/// Criterion 7: uncapped epochs meet the ratio; levels are visited in order.
fn epoch_contract(groups: &[(&str, &[MissionReport])]) -> Outcome {
    let mut checked = 0usize;
    let mut worst_ratio = 0.0_f64;
    let mut ratio_violations = 0usize;
    let mut trace_violations = 0usize;
    let mut top_reached = 0usize;
    let mut missions = 0usize;
    for (_, reports) in groups {
        for r in reports.iter() {
            missions += 1;
            for e in r.epochs.iter().filter(|e| !e.capped) {
                checked += 1;
                worst_ratio = worst_ratio.max(e.ratio());
                if e.ratio() > 0.75 + 1e-6 {
                    ratio_violations += 1;
                }
            }
            let in_order = r.fidelity_trace.first() == Some(&1)
                && r.fidelity_trace.windows(2).all(|w| w[1] == w[0] + 1);
            let flat: Vec<usize> = r.epochs.iter().flat_map(|e| e.fidelities.iter().copied()).collect();
            let monotone = flat.windows(2).all(|w| w[0] <= w[1]);
            if !(in_order && monotone) {
                trace_violations += 1;
            }
            if r.fidelity_trace.last() == Some(&r.config.model.num_levels()) {
                top_reached += 1;
            }
        }
    }
    let names: Vec<&str> = groups.iter().map(|g| g.0).collect();
    Outcome::new(
        checked > 0 && ratio_violations == 0 && trace_violations == 0,
        format!(
            "{missions} missions ({}), {checked} uncapped epochs, worst ratio {worst_ratio:.6} (limit 0.750001), \
             {ratio_violations} ratio and {trace_violations} trace violations, top level reached in {top_reached}",
            names.join(", ")
        ),
    )
}

/// Criterion 8: multi-fidelity decay at or below single-fidelity over the first quarter.
fn multi_fidelity_speedup() -> Outcome {
    let n_samples = 100;
    let prefix = n_samples / 4;
    let mut passing = 0usize;
    let mut violations: Vec<usize> = Vec::new();
    let mut ahead = 0usize;
    for seed in 1..=20u64 {
        let mut cfg = MissionConfig::desk();
        cfg.seed = seed;
        let cmp = compare_decay(&cfg, n_samples).unwrap();
        let bad: Vec<usize> = (0..=prefix)
            .filter(|&n| cmp.multi_fidelity[n].max_variance > cmp.single_fidelity[n].max_variance)
            .collect();
        ahead = (0..=prefix)
            .filter(|&n| cmp.multi_fidelity[n].max_variance < cmp.single_fidelity[n].max_variance)
            .count();
        if bad.is_empty() {
            passing += 1;
        }
        violations = bad;
    }
    let shown: Vec<String> = violations.iter().map(|n| n.to_string()).collect();
    Outcome::new(
        passing * 10 >= 20 * 8,
        format!(
            "{passing}/20 seeds dominate on n = 0..={prefix} (need 16); multi-fidelity strictly lower at {ahead} of {} \
             indices, above at n = [{}]",
            prefix + 1,
            shown.join(", ")
        ),
    )
}

/// Criterion 9: 2-opt tour quality against exhaustive search and nearest neighbour.
fn tsp_quality() -> Outcome {
    let z = 5.0;
    let mut worst_ratio = 0.0_f64;
    let mut nn_violations = 0usize;
    let mut instances = 0usize;
    let mut check_nn = |points: &[Location], start: Point3, len: f64| {
        let p3: Vec<Point3> = points.iter().map(|&p| Point3::at(p, z)).collect();
        let nn = nearest_neighbor_order(&p3, start);
        let nn_len = path_length(start, &nn.iter().map(|&i| p3[i]).collect::<Vec<_>>());
        instances += 1;
        usize::from(len > nn_len)
    };
    for inst in 0..20u64 {
        let mut rng = common::rng(9000 + inst);
        let pts: Vec<Location> =
            (0..7).map(|_| Location::new(rng.random_range(0.0..20.0), rng.random_range(0.0..20.0))).collect();
        let start = Point3::new(rng.random_range(0.0..20.0), rng.random_range(0.0..20.0), z);
        let tour = build_tour(&pts, z, start).unwrap();
        let p3: Vec<Point3> = pts.iter().map(|&p| Point3::at(p, z)).collect();
        let opt = common::brute_force_tour(start, &p3);
        worst_ratio = worst_ratio.max(tour.length / opt);
        nn_violations += check_nn(&pts, start, tour.length);
    }
    for inst in 0..20u64 {
        let mut rng = common::rng(9500 + inst);
        let n = rng.random_range(8..40);
        let pts: Vec<Location> =
            (0..n).map(|_| Location::new(rng.random_range(0.0..20.0), rng.random_range(0.0..20.0))).collect();
        let start = Point3::new(0.0, 0.0, z);
        let tour = build_tour(&pts, z, start).unwrap();
        nn_violations += check_nn(&pts, start, tour.length);
    }
    Outcome::new(
        worst_ratio <= 1.05 && nn_violations == 0,
        format!(
            "20 seven-point instances, worst 2-opt/optimum {worst_ratio:.4} (limit 1.05); 2-opt longer than \
             nearest neighbour on {nn_violations}/{instances} instances"
        ),
    )
}

/// A planted desk configuration with three well separated targets placed from `seed`.
/// With `on_cells` the target centers sit on cell centers, so every cell value is a
/// fixed distance from the threshold; otherwise they are placed anywhere.
fn planted_config(seed: u64, on_cells: bool) -> MissionConfig {
    let mut rng = common::rng(10_000 + seed);
    let mut bumps: Vec<Bump> = Vec::new();
    while bumps.len() < 3 {
        let mut c = Location::new(rng.random_range(3.0..17.0), rng.random_range(3.0..17.0));
        if on_cells {
            c = Location::new(c.x.floor() + 0.5, c.y.floor() + 0.5);
        }
        if bumps.iter().all(|b| b.center.dist(&c) >= 6.0) {
            bumps.push(Bump { center: c, amplitude: 1.0, radius: 1.5 });
        }
    }
    let mut cfg = MissionConfig::desk();
    cfg.seed = seed;
    cfg.truth = TruthMode::Planted(PlantedField { background: 0.0, bumps, blur_scale: 0.5 });
    cfg
}

fn run_each(configs: &[MissionConfig]) -> Vec<MissionReport> {
    configs.par_iter().map(|c| run_mission(c).unwrap()).collect()
}

fn finished_with_targets(r: &MissionReport) -> bool {
    let targets_found = r.cells.iter().filter(|c| c.truth_label == Label::Target).all(|c| c.label == Label::Target);
    r.termination == Termination::Done && r.classified_fraction >= 0.99 && targets_found
}

/// Criterion 10: planted missions finish classified with every target cell found.
fn termination_structure(reports: &[MissionReport], off_cell: &[MissionReport]) -> Outcome {
    let mut good = 0usize;
    let mut non_monotone = 0usize;
    let mut epochs = Vec::new();
    for r in reports.iter().chain(off_cell) {
        let fractions: Vec<f64> = r.epochs.iter().map(|e| e.classified_fraction).collect();
        if fractions.windows(2).any(|w| w[1] < w[0]) {
            non_monotone += 1;
        }
    }
    for r in reports {
        if finished_with_targets(r) {
            good += 1;
        }
        epochs.push(r.epochs.len());
    }
    let off_good = off_cell.iter().filter(|r| finished_with_targets(r)).count();
    let mean_epochs = epochs.iter().sum::<usize>() as f64 / epochs.len().max(1) as f64;
    Outcome::new(
        good * 10 >= reports.len() * 9 && non_monotone == 0,
        format!(
            "{good}/{} cell-centered planted missions reach >= 99% with all targets labeled (need 90%), mean \
             {mean_epochs:.1} epochs, {non_monotone} with a decreasing classified fraction; info: off-center \
             placement {off_good}/{}",
            reports.len(),
            off_cell.len()
        ),
    )
}

/// Criterion 11: repeated workloads serialize to identical bytes.
fn determinism() -> Outcome {
    let mut desk = MissionConfig::desk();
    desk.seed = 11;
    type Workload<'a> = (&'a str, Box<dyn Fn() -> String>);
    let workloads: Vec<Workload> = vec![
        ("prior-draw mission", Box::new(move || to_json(&run_missions(&desk, &[11]).unwrap()).unwrap())),
        ("planted mission", Box::new(|| to_json(&run_each(&[planted_config(3, true)])).unwrap())),
        ("three-level mission", Box::new(|| to_json(&run_missions(&three_level_config(), &[5]).unwrap()).unwrap())),
        ("decay comparison", Box::new(|| to_json(&compare_decay(&MissionConfig::desk(), 100).unwrap()).unwrap())),
        (
            "tour",
            Box::new(|| {
                let pts: Vec<Location> = (0..30).map(|i| Location::new((i * 7 % 20) as f64, (i * 13 % 20) as f64)).collect();
                to_json(&build_tour(&pts, 5.0, Point3::new(0.0, 0.0, 11.0)).unwrap()).unwrap()
            }),
        ),
    ];
    let mut differing = Vec::new();
    for (name, run) in &workloads {
        if run() != run() {
            differing.push(*name);
        }
    }
    Outcome::new(
        differing.is_empty(),
        format!("{} workloads run twice, differing: [{}]", workloads.len(), differing.join(", ")),
    )
}

/// Criterion 12: mean detection time decreases with the gap to the threshold.
fn detection_time_trend(config: &MissionConfig, seeds: &[u64], reports: &[MissionReport]) -> Outcome {
    let table = detection_time_table(config.delta, seeds, reports, 3);
    let means: Vec<Option<f64>> = table.bins.iter().map(|b| b.mean_time).collect();
    let decreasing = means.iter().all(Option::is_some)
        && means.windows(2).all(|w| w[1].unwrap() < w[0].unwrap());
    let parts: Vec<String> = table
        .bins
        .iter()
        .map(|b| {
            format!(
                "[{:.3}, {:.3}): {} ({} classified, {} censored)",
                b.gap_lower,
                b.gap_upper,
                b.mean_time.map_or("n/a".into(), |t| format!("{t:.1}")),
                b.classified,
                b.censored
            )
        })
        .collect();
    Outcome::new(
        seeds.len() >= 30 && decreasing,
        format!("{} seeds; mean t by gap bin: {}", seeds.len(), parts.join("; ")),
    )
}

fn main() -> ExitCode {
    let total = Instant::now();
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut report = |id: usize, name: &'static str, outcome: Outcome| {
        println!("criterion {id:>2} {} {name}: {}", if outcome.pass { "PASS" } else { "FAIL" }, outcome.detail);
        results.push((id, name, outcome));
    };

    report(1, "inference oracle equivalence", inference_oracle());
    report(2, "single-fidelity reduction", single_fidelity_reduction());
    report(3, "mutual-information identity", mutual_information_identity());
    report(4, "uncertainty-reduction bound", uncertainty_reduction_bound());
    report(5, "confidence coverage", confidence_coverage());

    let desk = MissionConfig::desk();
    let seeds: Vec<u64> = (1..=50).collect();
    let started = Instant::now();
    let desk_reports = run_missions(&desk, &seeds).unwrap();
    let desk_elapsed = started.elapsed();
    report(6, "misclassification guarantee", misclassification_guarantee(&desk_reports, desk_elapsed));

    let three_level = run_missions(&three_level_config(), &(1..=10).collect::<Vec<u64>>()).unwrap();
    let planted = run_each(&(1..=20).map(|s| planted_config(s, true)).collect::<Vec<_>>());
    let planted_off_cell = run_each(&(1..=20).map(|s| planted_config(s, false)).collect::<Vec<_>>());
    report(
        7,
        "epoch contract",
        epoch_contract(&[
            ("two-level prior draws", &desk_reports),
            ("three-level prior draws", &three_level),
            ("planted", &planted),
            ("off-center planted", &planted_off_cell),
        ]),
    );
    report(8, "multi-fidelity speedup", multi_fidelity_speedup());
    report(9, "tour quality", tsp_quality());
    report(10, "termination structure", termination_structure(&planted, &planted_off_cell));
    report(11, "determinism", determinism());
    report(12, "detection-time trend", detection_time_trend(&desk, &seeds, &desk_reports));

    let failed: Vec<usize> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    println!(
        "acceptance: {}/{} criteria passed in {}{}",
        results.len() - failed.len(),
        results.len(),
        secs(total.elapsed()),
        if failed.is_empty() {
            String::new()
        } else {
            format!("; failed: {failed:?}")
        }
    );
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
