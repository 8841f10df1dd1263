//! `mfgp-search` command line: `run`, `bench` and `validate`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::classifier::Termination;
use crate::config::{ConfigFile, ResolvedConfig};
use crate::error::{Error, Result};
use crate::export;
use crate::field_model::{sample_ground_truth, TruthMode};
use crate::mission::{compare_decay, detection_time_study, run_mission};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_EPOCH_CAP: i32 = 2;

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "MFGP_SEARCH_THREADS";

/// Fewer seeds than this make the detection-time averages unreliable.
pub const MIN_STUDY_SEEDS: usize = 30;

#[derive(Debug, Parser)]
#[command(name = "mfgp-search", version, about = "Multi-fidelity GP target search simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one mission and write the report, maps and grids.
    Run(CommonArgs),
    /// Compare decay curves and run the detection-time study.
    Bench(CommonArgs),
    /// Check a configuration and print its normalized form.
    Validate(CommonArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Configuration file (flat `key = value`).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Overrides `seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// `key=value` override, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

/// Parses `args` (including the program name) and runs the command.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
        }
    };
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Validate(a) => cmd_validate(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}

fn load(args: &CommonArgs) -> Result<(ConfigFile, ResolvedConfig)> {
    let mut file = ConfigFile::load(&args.config)?;
    if let Some(seed) = args.seed {
        file.set(&format!("seed={seed}"))?;
    }
    for s in &args.set {
        file.set(s)?;
    }
    let resolved = file.resolve()?;
    Ok((file, resolved))
}

fn manifest(args: &CommonArgs, file: &ConfigFile, resolved: &ResolvedConfig, command: &str) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# run manifest; `{command} --config <this file>` reproduces the outputs");
    let _ = writeln!(out, "manifest.tool_version = {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(out, "manifest.command = {command}");
    let _ = writeln!(out, "manifest.config_path = {}", args.config.display());
    let _ = writeln!(out, "manifest.output_dir = {}", args.out.display());
    for (i, (k, v)) in file.overrides().iter().enumerate() {
        let _ = writeln!(out, "manifest.override_{} = {k}={v}", i + 1);
    }
    out.push_str(&resolved.render());
    out
}

fn prepare_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn cmd_run(args: &CommonArgs) -> Result<i32> {
    let (file, resolved) = load(args)?;
    resolved.mission.validate()?;
    prepare_out(&args.out)?;
    let out = &args.out;
    export::write_text(&out.join("manifest.cfg"), &manifest(args, &file, &resolved, "run"))?;

    let config = &resolved.mission;
    let report = run_mission(config)?;
    let domain = &config.domain;
    export::write_text(&out.join("report.json"), &export::to_json(&report)?)?;
    export::write_text(&out.join("occupancy.csv"), &export::occupancy_csv(&report))?;
    export::write_text(&out.join("occupancy.pgm"), &export::occupancy_pgm(&report))?;
    export::write_text(&out.join("variance.csv"), &export::grid_csv(domain, &report.final_variance))?;
    export::write_text(&out.join("variance.pgm"), &export::grid_pgm(domain, &report.final_variance))?;
    export::write_text(&out.join("mean.csv"), &export::grid_csv(domain, &report.final_mean))?;
    export::write_text(&out.join("plan.csv"), &export::plan_csv(&report))?;
    export::write_text(&out.join("tours.csv"), &export::tours_csv(&report))?;
    export::write_text(&out.join("diagnostics.log"), &export::diagnostics_log(&report))?;
    export::write_text(&out.join("decay.csv"), &export::mission_decay_csv(&report))?;

    let truth = sample_ground_truth(domain, &config.model, config.seed, &config.truth, config.threshold)?;
    for m in 1..=truth.num_levels() {
        export::write_text(&out.join(format!("truth_f{m}.csv")), &export::grid_csv(domain, truth.layer(m)))?;
    }
    export::write_text(&out.join("truth.pgm"), &export::grid_pgm(domain, truth.field()))?;

    println!(
        "{}: {} epochs, {} samples, clock {:.3}, classified {:.2}%, misclassified {}/{}",
        match report.termination {
            Termination::Done => "done",
            Termination::EpochCap => "epoch cap reached",
            Termination::Continue => "stopped",
        },
        report.epochs.len(),
        report.total_samples,
        report.final_clock,
        100.0 * report.classified_fraction,
        report.misclassification.misclassified,
        report.misclassification.classified,
    );
    Ok(match report.termination {
        Termination::Done => EXIT_OK,
        _ => EXIT_EPOCH_CAP,
    })
}

pub fn cmd_bench(args: &CommonArgs) -> Result<i32> {
    let (file, resolved) = load(args)?;
    let config = &resolved.mission;
    config.validate()?;
    if config.model.num_levels() < 2 {
        return Err(Error::invalid(
            "bench compares multi- and single-fidelity sampling and needs at least two fidelity levels (model.levels >= 2)",
        ));
    }
    if !matches!(config.truth, TruthMode::PriorDraw) {
        return Err(Error::invalid("bench's detection-time study requires truth.mode = prior-draw"));
    }
    let bench = resolved.bench;
    if bench.seeds < MIN_STUDY_SEEDS {
        eprintln!(
            "warning: detection-time study with {} seed(s); at least {MIN_STUDY_SEEDS} are recommended",
            bench.seeds
        );
    }
    prepare_out(&args.out)?;
    let out = &args.out;
    export::write_text(&out.join("manifest.cfg"), &manifest(args, &file, &resolved, "bench"))?;

    let decay = compare_decay(config, bench.decay_samples)?;
    export::write_text(&out.join("decay.csv"), &export::decay_csv(&decay))?;
    let seeds: Vec<u64> = (0..bench.seeds as u64).map(|k| config.seed + k).collect();
    let table = detection_time_study(config, &seeds, bench.bins)?;
    export::write_text(&out.join("detection_time.csv"), &export::detection_time_csv(&table))?;
    export::write_text(&out.join("bench.json"), &export::to_json(&(&decay, &table))?)?;
    println!(
        "decay curves over {} samples and detection times over {} seeds written to {}",
        bench.decay_samples,
        seeds.len(),
        out.display()
    );
    Ok(EXIT_OK)
}

pub fn cmd_validate(args: &CommonArgs) -> Result<i32> {
    let (_, resolved) = load(args)?;
    resolved.mission.validate()?;
    print!("{}", resolved.render());
    Ok(EXIT_OK)
}
