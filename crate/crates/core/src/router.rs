//! Measurement tours and mission-time accounting.
//!
//! Each fidelity group of an epoch is visited along an open tour built by
//! nearest-neighbor construction and improved with first-improvement 2-opt.
//! The vehicle moves at unit speed, so time and distance share units.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field_model::{FidelityModel, GroundTruth, Location};
use crate::inference::{SampleLog, SampleRecord};
use crate::planner::{EpochPlan, PlannedPoint};

/// Smallest length decrease accepted as a 2-opt improvement.
const TWO_OPT_EPS: f64 = 1e-12;

pub const DEFAULT_SAMPLING_TIME: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Point3 { x, y, z }
    }

    pub fn at(loc: Location, z: f64) -> Self {
        Point3::new(loc.x, loc.y, z)
    }

    pub fn dist(&self, o: &Point3) -> f64 {
        ((self.x - o.x).powi(2) + (self.y - o.y).powi(2) + (self.z - o.z).powi(2)).sqrt()
    }

    pub fn horizontal(&self) -> Location {
        Location::new(self.x, self.y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tour {
    pub start: Point3,
    /// Visiting order as indices into the input point list.
    pub order: Vec<usize>,
    pub waypoints: Vec<Point3>,
    pub length: f64,
}

impl Tour {
    pub fn end(&self) -> Point3 {
        self.waypoints.last().copied().unwrap_or(self.start)
    }
}

/// Length of the open path `start -> waypoints[0] -> ... -> waypoints[last]`.
pub fn path_length(start: Point3, waypoints: &[Point3]) -> f64 {
    let mut prev = start;
    let mut total = 0.0;
    for w in waypoints {
        total += prev.dist(w);
        prev = *w;
    }
    total
}

/// Nearest-neighbor visiting order from `start`; ties go to the lowest index.
pub fn nearest_neighbor_order(points: &[Point3], start: Point3) -> Vec<usize> {
    let mut visited = vec![false; points.len()];
    let mut order = Vec::with_capacity(points.len());
    let mut cur = start;
    for _ in 0..points.len() {
        let mut best: Option<(usize, f64)> = None;
        for (i, p) in points.iter().enumerate() {
            if visited[i] {
                continue;
            }
            let d = cur.dist(p);
            if best.is_none_or(|(_, b)| d < b) {
                best = Some((i, d));
            }
        }
        let (i, _) = best.expect("unvisited point remains");
        visited[i] = true;
        order.push(i);
        cur = points[i];
    }
    order
}

/// Improves an open path with a fixed start by segment reversals until no
/// reversal shortens it. Scans `(i, j)` in lexicographic order and applies the
/// first improving move.
pub fn two_opt(points: &[Point3], start: Point3, order: &mut [usize]) {
    let n = order.len();
    if n < 2 {
        return;
    }
    let node = |order: &[usize], k: usize| -> Point3 {
        if k == 0 {
            start
        } else {
            points[order[k - 1]]
        }
    };
    // Path positions 0..=n: position 0 is the start, position k >= 1 is order[k - 1].
    'improve: loop {
        for i in 1..n {
            for j in (i + 1)..=n {
                let a = node(order, i - 1);
                let b = node(order, i);
                let c = node(order, j);
                let removed = a.dist(&b) + if j < n { c.dist(&node(order, j + 1)) } else { 0.0 };
                let added = a.dist(&c) + if j < n { b.dist(&node(order, j + 1)) } else { 0.0 };
                if added < removed - TWO_OPT_EPS {
                    order[i - 1..j].reverse();
                    continue 'improve;
                }
            }
        }
        break;
    }
}

/// Open tour through `points` at `altitude`, starting from `start`.
pub fn build_tour(points: &[Location], altitude: f64, start: Point3) -> Result<Tour> {
    if points.is_empty() {
        return Err(Error::invalid("cannot build a tour through zero points"));
    }
    let pts: Vec<Point3> = points.iter().map(|&p| Point3::at(p, altitude)).collect();
    let mut order = nearest_neighbor_order(&pts, start);
    two_opt(&pts, start, &mut order);
    let waypoints: Vec<Point3> = order.iter().map(|&i| pts[i]).collect();
    let length = path_length(start, &waypoints);
    Ok(Tour {
        start,
        order,
        waypoints,
        length,
    })
}

/// Mission clock: travel distance plus sampling time.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Clock {
    pub time: f64,
    pub travel: f64,
    pub samples: usize,
}

impl Clock {
    fn travel(&mut self, d: f64) {
        self.travel += d;
        self.time += d;
    }

    fn sample(&mut self, sampling_time: f64) {
        self.samples += 1;
        self.time += sampling_time;
    }
}

/// One executed measurement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Visit {
    pub epoch: usize,
    pub order: usize,
    pub cell: usize,
    pub position: Point3,
    pub fidelity: usize,
    pub value: f64,
    /// Clock after the sample.
    pub time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochExecution {
    pub visits: Vec<Visit>,
    pub tours: Vec<(usize, Tour)>,
    pub altitude_changes: usize,
}

/// Builds one tour per fidelity group of `plan`, starting from `position`.
/// A change of altitude is flown vertically before the group's tour.
pub fn plan_tours(plan: &EpochPlan, model: &FidelityModel, position: Point3) -> Result<Vec<(usize, Tour)>> {
    let mut tours = Vec::new();
    let mut pos = position;
    for (m, group) in plan.fidelity_groups() {
        let z = model.level(m)?.altitude;
        let start = Point3::new(pos.x, pos.y, z);
        let locs: Vec<Location> = group.iter().map(|p| p.location).collect();
        let tour = build_tour(&locs, z, start)?;
        pos = tour.end();
        tours.push((m, tour));
    }
    Ok(tours)
}

/// Flies the tours, taking one measurement per waypoint.
#[allow(clippy::too_many_arguments)]
pub fn execute_epoch<R: Rng + ?Sized>(
    plan: &EpochPlan,
    tours: &[(usize, Tour)],
    truth: &GroundTruth,
    model: &FidelityModel,
    position: &mut Point3,
    clock: &mut Clock,
    log: &mut SampleLog,
    sampling_time: f64,
    rng: &mut R,
) -> Result<EpochExecution> {
    let groups = plan.fidelity_groups();
    if groups.len() != tours.len() {
        return Err(Error::invalid("tours do not match the plan's fidelity groups"));
    }
    let mut visits = Vec::with_capacity(plan.points.len());
    let mut altitude_changes = 0;
    for ((m, group), (tour_m, tour)) in groups.iter().zip(tours) {
        if m != tour_m || group.len() != tour.order.len() {
            return Err(Error::invalid(format!("tour for fidelity {tour_m} does not cover its group")));
        }
        let z = model.level(*m)?.altitude;
        if (position.z - z).abs() > 0.0 {
            clock.travel((position.z - z).abs());
            position.z = z;
            altitude_changes += 1;
        }
        for &idx in &tour.order {
            let point: &PlannedPoint = &group[idx];
            let target = Point3::at(point.location, z);
            clock.travel(position.dist(&target));
            *position = target;
            let value = truth.measure(model, point.cell, *m, rng)?;
            clock.sample(sampling_time);
            log.push(SampleRecord {
                cell: point.cell,
                location: point.location,
                value,
                fidelity: *m,
            })?;
            visits.push(Visit {
                epoch: plan.epoch,
                order: visits.len(),
                cell: point.cell,
                position: target,
                fidelity: *m,
                value,
                time: clock.time,
            });
        }
    }
    Ok(EpochExecution {
        visits,
        tours: tours.to_vec(),
        altitude_changes,
    })
}
