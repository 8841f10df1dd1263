//! CSV, PGM and JSON writers. Floating-point output always uses 17
//! significant digits so files diff cleanly and round-trip exactly.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use serde::Serialize;

use crate::classifier::Label;
use crate::error::{Error, Result};
use crate::field_model::GridDomain;
use crate::mission::{DecayComparison, DecayPoint, DetectionTimeTable, MissionReport};

/// `v` with 17 significant digits.
pub fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        v.to_string()
    }
}

fn opt_num(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Row-major `x,y,value` grid.
pub fn grid_csv(domain: &GridDomain, values: &[f64]) -> String {
    let mut out = String::from("x,y,value\n");
    for (i, v) in values.iter().enumerate() {
        let c = domain.cell(i);
        let _ = writeln!(out, "{},{},{}", num(c.x), num(c.y), num(*v));
    }
    out
}

/// Plain PGM (P2) with values scaled linearly to 0..=255. The first image row
/// is the grid's top row (largest y).
pub fn grid_pgm(domain: &GridDomain, values: &[f64]) -> String {
    let finite = values.iter().copied().filter(|v| v.is_finite());
    let lo = finite.clone().fold(f64::INFINITY, f64::min);
    let hi = finite.fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let levels: Vec<u8> = values
        .iter()
        .map(|v| if v.is_finite() { (((v - lo) / span) * 255.0).round() as u8 } else { 0 })
        .collect();
    pgm(domain.resolution(), &levels)
}

fn pgm(res: usize, levels: &[u8]) -> String {
    let mut out = format!("P2\n{res} {res}\n255\n");
    for row in (0..res).rev() {
        let line: Vec<String> = (0..res).map(|col| levels[row * res + col].to_string()).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

pub fn label_level(label: Label) -> u8 {
    match label {
        Label::Empty => 0,
        Label::Uncertain => 128,
        Label::Target => 255,
    }
}

/// Tri-level occupancy image: empty black, uncertain gray, target white.
pub fn occupancy_pgm(report: &MissionReport) -> String {
    let levels: Vec<u8> = report.cells.iter().map(|c| label_level(c.label)).collect();
    pgm(report.config.domain.resolution(), &levels)
}

pub fn occupancy_csv(report: &MissionReport) -> String {
    let mut out = String::from("x,y,label,epoch,time\n");
    for c in &report.cells {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            num(c.x),
            num(c.y),
            c.label.as_str(),
            c.epoch.map(|e| e.to_string()).unwrap_or_default(),
            opt_num(c.detection_time)
        );
    }
    out
}

pub fn plan_csv(report: &MissionReport) -> String {
    let mut out = String::from("epoch,order,x,y,fidelity,sigma_before\n");
    for p in &report.plan {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            p.epoch,
            p.order,
            num(p.x),
            num(p.y),
            p.fidelity,
            num(p.sigma_before)
        );
    }
    out
}

pub fn tours_csv(report: &MissionReport) -> String {
    let mut out = String::from("epoch,order,x,y,z,time\n");
    for v in &report.visits {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            v.epoch,
            v.order,
            num(v.position.x),
            num(v.position.y),
            num(v.position.z),
            num(v.time)
        );
    }
    out
}

/// One line per sample: `sample n=.. epoch=.. x=.. y=.. m=.. sigma2_before=.. info_gain=..`.
pub fn diagnostics_log(report: &MissionReport) -> String {
    let mut out = String::new();
    for s in &report.samples {
        let _ = writeln!(
            out,
            "sample n={} epoch={} cell={} x={} y={} m={} value={} sigma2_before={} info_gain={}",
            s.n,
            s.epoch,
            s.cell,
            num(s.x),
            num(s.y),
            s.fidelity,
            num(s.value),
            num(s.sigma2_before),
            num(s.info_gain)
        );
    }
    out
}

fn decay_rows(out: &mut String, series: &str, points: &[DecayPoint]) {
    for p in points {
        let _ = writeln!(out, "{series},{},{}", p.n, num(p.max_variance));
    }
}

pub fn mission_decay_csv(report: &MissionReport) -> String {
    let mut out = String::from("series,n,max_variance\n");
    decay_rows(&mut out, "mission", &report.decay);
    out
}

pub fn decay_csv(cmp: &DecayComparison) -> String {
    let mut out = String::from("series,n,max_variance\n");
    decay_rows(&mut out, "multi-fidelity", &cmp.multi_fidelity);
    decay_rows(&mut out, "single-fidelity", &cmp.single_fidelity);
    out
}

pub fn detection_time_csv(table: &DetectionTimeTable) -> String {
    let mut out = String::from("bin,gap_lower,gap_upper,mean_time,classified,censored\n");
    for (k, b) in table.bins.iter().enumerate() {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            k,
            num(b.gap_lower),
            num(b.gap_upper),
            opt_num(b.mean_time),
            b.classified,
            b.censored
        );
    }
    out
}

struct FixedDigits;

impl serde_json::ser::Formatter for FixedDigits {
    fn write_f64<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        write!(writer, "{:.16e}", value as f64)
    }
}

/// JSON with every float written with 17 significant digits. Non-finite values become `null`.
pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, FixedDigits);
    value
        .serialize(&mut ser)
        .map_err(|e| Error::invalid(format!("JSON serialization failed: {e}")))?;
    buf.push(b'\n');
    String::from_utf8(buf).map_err(|e| Error::invalid(e.to_string()))
}
