//! `floodgate` command-line front end.

mod plot;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use floodgate::experiment::{
    calibrate, run_experiment, sweep, CalibrationError, CalibrationOptions,
};
use floodgate::io;
use floodgate::scenario::{ConfigError, ScenarioConfig};
use floodgate::sim::FaultInjection;
use floodgate::traffic::build_default_scenario;
use floodgate::validate::{validate, ValidationConfig};

const EXIT_OTHER: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_CALIBRATION: u8 = 3;
const EXIT_VALIDATION: u8 = 4;

#[derive(Parser)]
#[command(
    name = "floodgate",
    version,
    about = "Single-server queue simulator and UDP flood detector"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario and write metrics, alarms, loss table and report.
    Run(RunArgs),
    /// Search the flood rate that produces a target CBR loss during floods.
    Calibrate(CalibrateArgs),
    /// Check the simulator against queueing oracles and trace properties.
    Validate(ValidateArgs),
    /// Run a scenario over many seeds and aggregate detection scores.
    Sweep(SweepArgs),
    /// Print or save the built-in three-flood scenario.
    EmitDefaultScenario {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario JSON; the built-in default scenario when omitted.
    scenario: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Window width in seconds.
    #[arg(long)]
    window: Option<f64>,
    /// Drop the attack schedule.
    #[arg(long)]
    no_attack: bool,
}

impl ScenarioArgs {
    fn load(&self) -> Result<ScenarioConfig> {
        let mut s = match &self.scenario {
            Some(path) => ScenarioConfig::load(path)?,
            None => build_default_scenario(),
        };
        if let Some(seed) = self.seed {
            s.seed = seed;
        }
        if let Some(w) = self.window {
            s.window_s = w;
        }
        if self.no_attack {
            s = s.without_attack();
        }
        s.validate()?;
        Ok(s)
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Also write the full event trace as trace.csv.
    #[arg(long)]
    trace: bool,
    /// Also render SVG line charts of the metric and alarm series.
    #[arg(long)]
    plot: bool,
}

#[derive(Args)]
struct CalibrateArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Target CBR loss during floods, in percent.
    #[arg(long, default_value_t = 36.0)]
    target: f64,
    /// Where to write the calibrated scenario; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = CalibrationOptions::default().seeds)]
    seeds: u32,
    #[arg(long, default_value_t = CalibrationOptions::default().min_rate_pps)]
    min_rate: f64,
    #[arg(long, default_value_t = CalibrationOptions::default().max_rate_pps)]
    max_rate: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum Fault {
    None,
    BufferOffByOne,
}

#[derive(Args)]
struct ValidateArgs {
    /// Arrival rate of the infinite-buffer M/M/1 check.
    #[arg(long, default_value_t = 5.0)]
    lambda: f64,
    /// Service rate of the infinite-buffer M/M/1 check.
    #[arg(long, default_value_t = 10.0)]
    mu: f64,
    #[arg(long)]
    seed: Option<u64>,
    /// Write the check results as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Deliberately break the engine to confirm the checks catch it.
    #[arg(long, value_enum, default_value = "none", hide = true)]
    inject_fault: Fault,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long, default_value_t = 20)]
    seeds: u32,
    /// Where to write the aggregate JSON; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("FLOODGATE_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(&args),
        Command::Calibrate(args) => cmd_calibrate(&args),
        Command::Validate(args) => cmd_validate(&args),
        Command::Sweep(args) => cmd_sweep(&args),
        Command::EmitDefaultScenario { out } => {
            emit(out.as_deref(), &build_default_scenario().to_json())
        }
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(exit_code_for(&e))
        }
    }
}

/// The error chain, skipping causes already quoted by their parent.
fn describe(e: &anyhow::Error) -> String {
    let mut text = String::new();
    for cause in e.chain() {
        let msg = cause.to_string();
        if !text.contains(&msg) {
            if !text.is_empty() {
                text.push_str(": ");
            }
            text.push_str(&msg);
        }
    }
    text
}

fn exit_code_for(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.is::<ConfigError>() {
            return EXIT_CONFIG;
        }
        if let Some(err) = cause.downcast_ref::<floodgate::Error>() {
            return match err {
                floodgate::Error::Config(_) | floodgate::Error::Analytics(_) => EXIT_CONFIG,
                _ => EXIT_OTHER,
            };
        }
        if let Some(err) = cause.downcast_ref::<CalibrationError>() {
            return match err {
                CalibrationError::Run(floodgate::Error::Config(_)) => EXIT_CONFIG,
                _ => EXIT_CALIBRATION,
            };
        }
    }
    EXIT_OTHER
}

fn emit(out: Option<&Path>, text: &str) -> Result<u8> {
    match out {
        Some(path) => fs::write(path, format!("{text}\n"))
            .with_context(|| format!("writing {}", path.display()))?,
        None => println!("{text}"),
    }
    Ok(0)
}

fn cmd_run(args: &RunArgs) -> Result<u8> {
    let scenario = args.scenario.load()?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let exp = run_experiment(&scenario, args.trace)?;
    let out = &args.out;
    io::write_metrics(&out.join("metrics.csv"), &exp.windows)?;
    io::write_alarms(&out.join("alarms.csv"), &exp.signals)?;
    io::write_loss(&out.join("loss.csv"), &exp.loss.rows)?;
    if let Some(trace) = &exp.trace {
        io::write_trace(&out.join("trace.csv"), &trace.events)?;
    }
    fs::write(
        out.join("report.json"),
        serde_json::to_string_pretty(&exp.report)? + "\n",
    )?;
    if args.plot {
        plot::write_all(out, &exp.windows, &exp.signals)?;
    }
    for note in &exp.loss.notes {
        info!("loss table: {note}");
    }
    let c = &exp.report.classification;
    println!(
        "seed {}: {} windows, accuracy {:.3}, {} alarm windows in {} runs, outputs in {}",
        scenario.seed,
        c.windows,
        c.accuracy,
        c.alarm_windows,
        exp.report.alarm_runs.len(),
        out.display()
    );
    Ok(0)
}

fn cmd_calibrate(args: &CalibrateArgs) -> Result<u8> {
    if args.scenario.no_attack {
        bail!(CalibrationError::NoFloods);
    }
    let scenario = args.scenario.load()?;
    let opts = CalibrationOptions {
        seeds: args.seeds,
        min_rate_pps: args.min_rate,
        max_rate_pps: args.max_rate,
        ..CalibrationOptions::default()
    };
    let c = calibrate(&scenario, args.target, &opts)?;
    eprintln!(
        "flood rate {:.1} pps gives {:.2}% CBR loss during floods (target {}%) after {} evaluations",
        c.rate_pps,
        c.cbr_flood_loss_pct,
        c.target_pct,
        c.evaluations.len()
    );
    emit(args.out.as_deref(), &c.scenario.to_json())
}

fn cmd_validate(args: &ValidateArgs) -> Result<u8> {
    let defaults = ValidationConfig::default();
    let cfg = ValidationConfig {
        lambda: args.lambda,
        mu: args.mu,
        seed: args.seed.unwrap_or(defaults.seed),
        fault: match args.inject_fault {
            Fault::None => FaultInjection::None,
            Fault::BufferOffByOne => FaultInjection::BufferOffByOne,
        },
        ..defaults
    };
    let report = validate(&cfg)?;
    for c in &report.checks {
        println!(
            "{} {}: {}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.detail
        );
    }
    if let Some(path) = &args.out {
        fs::write(path, serde_json::to_string_pretty(&report)? + "\n")?;
    }
    if report.all_passed() {
        Ok(0)
    } else {
        let failed: Vec<&str> = report.failures().map(|c| c.name.as_str()).collect();
        eprintln!("validation failed: {}", failed.join(", "));
        Ok(EXIT_VALIDATION)
    }
}

fn cmd_sweep(args: &SweepArgs) -> Result<u8> {
    let scenario = args.scenario.load()?;
    let report = sweep(&scenario, args.seeds)?;
    eprintln!(
        "{} seeds: mean accuracy {:.4}, min {:.4}, false-alarm rate {}",
        report.seeds,
        report.mean_accuracy,
        report.min_accuracy,
        report
            .false_alarm_rate
            .map_or("n/a".to_string(), |r| format!("{r:.4}"))
    );
    emit(args.out.as_deref(), &serde_json::to_string_pretty(&report)?)
}
