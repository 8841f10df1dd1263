//! Flat `key = value` configuration files with dotted sections.
//!
//! ```text
//! # comment
//! seed = 7
//! delta = 0.1
//! model.levels = 2
//! model.v_1 = 0.5
//! truth.mode = planted
//! truth.target_1 = 4.5, 4.5, 1.0, 1.0
//! ```
//!
//! Every key is optional; missing keys fall back to the desk scenario.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::export::num;
use crate::field_model::{Bump, FidelityLevel, FidelityModel, GridDomain, Location, PlantedField, TruthMode};
use crate::mission::{FidelityPolicy, MissionConfig};
use crate::planner::PlanLimits;

pub const DEFAULT_BENCH_SEEDS: usize = 30;
pub const DEFAULT_DECAY_SAMPLES: usize = 100;
pub const DEFAULT_DETECTION_BINS: usize = 3;

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    value: String,
    location: String,
}

/// Raw key-value pairs with their source locations.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigFile {
    entries: BTreeMap<String, Entry>,
    overrides: Vec<(String, String)>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut cfg = ConfigFile::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let location = format!("{source}:{}", lineno + 1);
            let (key, value) = split_pair(line).ok_or_else(|| Error::Config {
                key: line.to_string(),
                location: location.clone(),
                message: "expected `key = value`".into(),
            })?;
            if cfg.entries.contains_key(&key) {
                return Err(Error::Config { key, location, message: "duplicate key".into() });
            }
            cfg.entries.insert(key, Entry { value, location });
        }
        Ok(cfg)
    }

    /// Applies a `key=value` override (from `--set`).
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let index = self.overrides.len() + 1;
        let location = format!("--set #{index}");
        let (key, value) = split_pair(assignment).ok_or_else(|| Error::Config {
            key: assignment.to_string(),
            location: location.clone(),
            message: "expected `key=value`".into(),
        })?;
        self.overrides.push((key.clone(), value.clone()));
        self.entries.insert(key, Entry { value, location });
        Ok(())
    }

    pub fn overrides(&self) -> &[(String, String)] {
        &self.overrides
    }

    fn get(&self, key: &str) -> Option<&Entry> {
        self.entries.get(key)
    }

    fn parse_value<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.get(key) {
            None => Ok(None),
            Some(e) => e.value.parse::<T>().map(Some).map_err(|_| Error::Config {
                key: key.to_string(),
                location: e.location.clone(),
                message: format!("cannot parse `{}`", e.value),
            }),
        }
    }

    fn error(&self, key: &str, message: impl Into<String>) -> Error {
        Error::Config {
            key: key.to_string(),
            location: self.get(key).map_or_else(|| "<defaults>".to_string(), |e| e.location.clone()),
            message: message.into(),
        }
    }

    /// Resolves the file into a mission configuration and bench settings.
    pub fn resolve(&self) -> Result<ResolvedConfig> {
        self.check_known_keys()?;
        let desk = MissionConfig::desk();

        let d = &desk.domain;
        let x_min = self.parse_value("domain.x_min")?.unwrap_or(d.x_min());
        let x_max = self.parse_value("domain.x_max")?.unwrap_or(d.x_max());
        let y_min = self.parse_value("domain.y_min")?.unwrap_or(d.y_min());
        let y_max = self.parse_value("domain.y_max")?.unwrap_or(d.y_max());
        let resolution = self.parse_value("domain.resolution")?.unwrap_or(d.resolution());
        let domain = GridDomain::new(x_min, x_max, y_min, y_max, resolution)
            .map_err(|e| self.error("domain", e.to_string()))?;

        let num_levels: usize = self.parse_value("model.levels")?.unwrap_or(desk.model.num_levels());
        if num_levels == 0 {
            return Err(self.error("model.levels", "at least one fidelity level is required"));
        }
        let mut levels = Vec::with_capacity(num_levels);
        for m in 1..=num_levels {
            let default = desk.model.levels().get(m - 1).copied();
            let field = |name: &str, pick: fn(&FidelityLevel) -> f64| -> Result<f64> {
                let key = format!("model.{name}_{m}");
                match self.parse_value::<f64>(&key)? {
                    Some(v) => Ok(v),
                    None => default
                        .as_ref()
                        .map(pick)
                        .ok_or_else(|| self.error(&key, "missing value for a level without defaults")),
                }
            };
            levels.push(FidelityLevel {
                mean: field("mu", |l| l.mean)?,
                amplitude: field("v", |l| l.amplitude)?,
                length_scale: field("l", |l| l.length_scale)?,
                noise_std: field("s", |l| l.noise_std)?,
                altitude: field("z", |l| l.altitude)?,
            });
        }
        for key in self.entries.keys() {
            if let Some(m) = level_suffix(key) {
                if m == 0 || m > num_levels {
                    return Err(self.error(key, format!("level index outside 1..={num_levels}")));
                }
            }
        }
        let model = FidelityModel::new(levels).map_err(|e| self.error("model", e.to_string()))?;

        let limits = PlanLimits {
            ratio: self.parse_value("search.epoch_ratio")?.unwrap_or(desk.limits.ratio),
            max_samples: self.parse_value("search.max_samples_per_epoch")?.unwrap_or(desk.limits.max_samples),
        };
        let policy = match self.get("search.fidelity_policy").map(|e| e.value.as_str()) {
            None | Some("multi") => FidelityPolicy::MultiFidelity,
            Some("single") => FidelityPolicy::SingleFidelity,
            Some(_) => return Err(self.error("search.fidelity_policy", "expected `multi` or `single`")),
        };

        let truth = match self.get("truth.mode").map(|e| e.value.as_str()) {
            None | Some("prior-draw") => TruthMode::PriorDraw,
            Some("planted") => TruthMode::Planted(self.planted()?),
            Some(_) => return Err(self.error("truth.mode", "expected `prior-draw` or `planted`")),
        };

        let mission = MissionConfig {
            domain,
            model,
            delta: self.parse_value("delta")?.unwrap_or(desk.delta),
            threshold: self.parse_value("threshold")?.unwrap_or(desk.threshold),
            limits,
            max_epochs: self.parse_value("search.max_epochs")?.unwrap_or(desk.max_epochs),
            sampling_time: self.parse_value("search.sampling_time")?.unwrap_or(desk.sampling_time),
            seed: self.parse_value("seed")?.unwrap_or(desk.seed),
            truth,
            policy,
        };
        let bench = BenchConfig {
            seeds: self.parse_value("bench.seeds")?.unwrap_or(DEFAULT_BENCH_SEEDS),
            decay_samples: self.parse_value("bench.decay_samples")?.unwrap_or(DEFAULT_DECAY_SAMPLES),
            bins: self.parse_value("bench.bins")?.unwrap_or(DEFAULT_DETECTION_BINS),
        };
        if bench.seeds == 0 || bench.bins == 0 {
            return Err(self.error("bench", "seed count and bin count must be positive"));
        }
        Ok(ResolvedConfig { mission, bench })
    }

    fn planted(&self) -> Result<PlantedField> {
        let background = self.parse_value("truth.background")?.unwrap_or(0.0);
        let blur_scale = self.parse_value("truth.blur_scale")?.unwrap_or(0.5);
        let count: usize = self.parse_value("truth.targets")?.unwrap_or(0);
        let mut bumps = Vec::with_capacity(count);
        for k in 1..=count {
            let key = format!("truth.target_{k}");
            let entry = self.get(&key).ok_or_else(|| self.error(&key, "missing planted target"))?;
            let parts: Vec<f64> = entry
                .value
                .split(',')
                .map(|p| p.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| self.error(&key, "expected `x, y, amplitude, radius`"))?;
            let [x, y, amplitude, radius] = parts[..] else {
                return Err(self.error(&key, "expected `x, y, amplitude, radius`"));
            };
            bumps.push(Bump { center: Location::new(x, y), amplitude, radius });
        }
        for key in self.entries.keys() {
            if let Some(k) = key.strip_prefix("truth.target_").and_then(|s| s.parse::<usize>().ok()) {
                if k == 0 || k > count {
                    return Err(self.error(key, format!("target index outside 1..={count} (set truth.targets)")));
                }
            }
        }
        Ok(PlantedField { background, bumps, blur_scale })
    }

    fn check_known_keys(&self) -> Result<()> {
        const FIXED: &[&str] = &[
            "seed",
            "delta",
            "threshold",
            "domain.x_min",
            "domain.x_max",
            "domain.y_min",
            "domain.y_max",
            "domain.resolution",
            "model.levels",
            "search.epoch_ratio",
            "search.max_samples_per_epoch",
            "search.max_epochs",
            "search.sampling_time",
            "search.fidelity_policy",
            "truth.mode",
            "truth.background",
            "truth.blur_scale",
            "truth.targets",
            "bench.seeds",
            "bench.decay_samples",
            "bench.bins",
        ];
        for key in self.entries.keys() {
            let known = FIXED.contains(&key.as_str())
                || key.starts_with("manifest.")
                || level_suffix(key).is_some()
                || key
                    .strip_prefix("truth.target_")
                    .is_some_and(|s| s.parse::<usize>().is_ok());
            if !known {
                return Err(self.error(key, "unknown key"));
            }
        }
        Ok(())
    }
}

fn split_pair(line: &str) -> Option<(String, String)> {
    let (k, v) = line.split_once('=')?;
    let k = k.trim();
    if k.is_empty() {
        return None;
    }
    Some((k.to_string(), v.trim().to_string()))
}

fn level_suffix(key: &str) -> Option<usize> {
    let rest = key.strip_prefix("model.")?;
    let (name, idx) = rest.split_once('_')?;
    if !matches!(name, "mu" | "v" | "l" | "s" | "z") {
        return None;
    }
    idx.parse().ok()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BenchConfig {
    pub seeds: usize,
    pub decay_samples: usize,
    pub bins: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedConfig {
    pub mission: MissionConfig,
    pub bench: BenchConfig,
}

impl ResolvedConfig {
    /// Canonical text form; parsing it back yields the same configuration.
    pub fn render(&self) -> String {
        let c = &self.mission;
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        put("seed", c.seed.to_string());
        put("delta", num(c.delta));
        put("threshold", num(c.threshold));
        put("domain.x_min", num(c.domain.x_min()));
        put("domain.x_max", num(c.domain.x_max()));
        put("domain.y_min", num(c.domain.y_min()));
        put("domain.y_max", num(c.domain.y_max()));
        put("domain.resolution", c.domain.resolution().to_string());
        put("model.levels", c.model.num_levels().to_string());
        for (i, l) in c.model.levels().iter().enumerate() {
            let m = i + 1;
            put(&format!("model.mu_{m}"), num(l.mean));
            put(&format!("model.v_{m}"), num(l.amplitude));
            put(&format!("model.l_{m}"), num(l.length_scale));
            put(&format!("model.s_{m}"), num(l.noise_std));
            put(&format!("model.z_{m}"), num(l.altitude));
        }
        put("search.epoch_ratio", num(c.limits.ratio));
        put("search.max_samples_per_epoch", c.limits.max_samples.to_string());
        put("search.max_epochs", c.max_epochs.to_string());
        put("search.sampling_time", num(c.sampling_time));
        put(
            "search.fidelity_policy",
            match c.policy {
                FidelityPolicy::MultiFidelity => "multi",
                FidelityPolicy::SingleFidelity => "single",
            }
            .to_string(),
        );
        match &c.truth {
            TruthMode::PriorDraw => put("truth.mode", "prior-draw".into()),
            TruthMode::Planted(p) => {
                put("truth.mode", "planted".into());
                put("truth.background", num(p.background));
                put("truth.blur_scale", num(p.blur_scale));
                put("truth.targets", p.bumps.len().to_string());
                for (k, b) in p.bumps.iter().enumerate() {
                    put(
                        &format!("truth.target_{}", k + 1),
                        format!("{}, {}, {}, {}", num(b.center.x), num(b.center.y), num(b.amplitude), num(b.radius)),
                    );
                }
            }
        }
        put("bench.seeds", self.bench.seeds.to_string());
        put("bench.decay_samples", self.bench.decay_samples.to_string());
        put("bench.bins", self.bench.bins.to_string());
        out
    }
}
