//! `ghostdiff`: run scenarios, parameter sweeps and the oracle suite.
//!
//! Exit codes: 0 all assertions pass, 1 an assertion failed, 2 bad
//! configuration or usage, 3 a guard (precondition) was violated.

mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use ghostdiff::experiments::{run_scenario, RunOptions, ScenarioReport};
use ghostdiff::io::Table;
use ghostdiff::scenario::{is_numeric_key, parse_length, parse_override, ScenarioConfig};
use ghostdiff::{Error, Result};
use log::info;

use output::{prepare_dir, OutputDir, CONFIG};

/// Frames used by `oracle --quick`.
const QUICK_FRAMES: u64 = 1000;

#[derive(Parser)]
#[command(name = "ghostdiff", version, about = "Ghost diffraction with pseudo-thermal speckle")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario file.
    Run {
        scenario: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run a scenario once per value of a numeric key.
    Sweep {
        scenario: PathBuf,
        /// Dotted key, e.g. `source.D0`.
        key: String,
        /// Values with optional units, e.g. `10mm 1mm 0.1mm` or `10mm,1mm`.
        values: Vec<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Compare Monte Carlo, quadrature and Gaussian-moment correlations on the built-in small grid.
    Oracle {
        /// Reduced statistics with relaxed tolerances.
        #[arg(long)]
        quick: bool,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    frames: Option<u64>,
    /// Worker threads for frame generation.
    #[arg(long, env = "GHOSTDIFF_WORKERS")]
    workers: Option<usize>,
    /// Output directory (default: `runs/<scenario name>`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write into an existing non-empty output directory.
    #[arg(long)]
    force: bool,
    /// Override a scenario key, e.g. `--set source.D0=0.1mm` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Common {
    fn overrides(&self) -> Result<Vec<(String, String)>> {
        let mut o = self.set.iter().map(|s| parse_override(s)).collect::<Result<Vec<_>>>()?;
        if let Some(s) = self.seed {
            o.push(("seed".into(), s.to_string()));
        }
        if let Some(f) = self.frames {
            o.push(("frames".into(), f.to_string()));
        }
        Ok(o)
    }

    fn options(&self) -> Result<RunOptions> {
        let mut opts = RunOptions::default();
        if let Some(w) = self.workers {
            if w == 0 {
                return Err(Error::Config {
                    key: "--workers".into(),
                    message: "must be at least 1".into(),
                });
            }
            opts.workers = w;
        }
        Ok(opts)
    }

    fn out_dir(&self, name: &str) -> PathBuf {
        self.out.clone().unwrap_or_else(|| Path::new("runs").join(name))
    }
}

fn exit_code(e: &Error) -> u8 {
    if e.is_guard() {
        return 3;
    }
    match e {
        Error::Config { .. }
        | Error::Parse(_)
        | Error::InvalidParameter { .. }
        | Error::InvalidGrid(_)
        | Error::Io(_) => 2,
        _ => 1,
    }
}

fn print_report(report: &ScenarioReport) {
    for a in &report.assertions {
        let bound = match a.upper {
            Some(hi) => format!("[{}, {}]", a.threshold, hi),
            None => format!("{}", a.threshold),
        };
        println!(
            "{} {} = {:.6} ({} {})",
            if a.passed { "PASS" } else { "FAIL" },
            a.name,
            a.value,
            a.op,
            bound
        );
    }
    for n in &report.notes {
        println!("note: {n}");
    }
}

/// Run `cfg` and write its artifacts into `dir`.
fn execute(cfg: &ScenarioConfig, opts: &RunOptions, dir: &Path) -> Result<ScenarioReport> {
    let start = Instant::now();
    info!(
        "running {} ({}, {} frames, {} workers)",
        cfg.name,
        cfg.experiment.name(),
        cfg.frames,
        opts.workers
    );
    let report = run_scenario(cfg, opts)?;
    let mut out = OutputDir::new(dir);
    out.text(CONFIG, cfg.effective_toml())?;
    out.report(&report)?;
    out.manifest(&report, cfg.effective_toml(), opts.workers, start.elapsed())?;
    info!("wrote {} files to {}", out.files().len(), dir.display());
    Ok(report)
}

fn verdict(report: &ScenarioReport) -> u8 {
    if report.passed() {
        0
    } else {
        1
    }
}

fn cmd_run(path: &Path, common: &Common) -> Result<u8> {
    let cfg = ScenarioConfig::from_file(path, &common.overrides()?)?;
    let opts = common.options()?;
    let dir = common.out_dir(&cfg.name);
    prepare_dir(&dir, common.force)?;
    let report = execute(&cfg, &opts, &dir)?;
    print_report(&report);
    Ok(verdict(&report))
}

fn split_values(values: &[String]) -> Vec<String> {
    values
        .iter()
        .flat_map(|v| v.split(','))
        .map(|v| v.trim().to_string())
        .filter(|v| !v.is_empty())
        .collect()
}

fn cmd_sweep(path: &Path, key: &str, values: &[String], common: &Common) -> Result<u8> {
    if !is_numeric_key(key) {
        return Err(Error::Config {
            key: key.to_string(),
            message: "not a numeric scenario key".into(),
        });
    }
    let values = split_values(values);
    if values.is_empty() {
        return Err(Error::Config {
            key: key.to_string(),
            message: "no sweep values given".into(),
        });
    }
    let base = common.overrides()?;
    // Validate every point before running any of them.
    let mut configs = Vec::with_capacity(values.len());
    for v in &values {
        let numeric = parse_length(v).map_err(|message| Error::Config {
            key: key.to_string(),
            message,
        })?;
        let mut o = base.clone();
        o.push((key.to_string(), v.clone()));
        configs.push((numeric, ScenarioConfig::from_file(path, &o)?));
    }
    let opts = common.options()?;
    let dir = common.out_dir(&format!("{}_sweep", configs[0].1.name));
    prepare_dir(&dir, common.force)?;

    let start = Instant::now();
    let mut aggregate = Table::new(&["value", "n_sp", "visibility", "speckle_size"]).with_meta("key", key);
    let mut out = OutputDir::new(&dir);
    let mut code = 0;
    let mut last: Option<ScenarioReport> = None;
    let mut assertions = Vec::new();
    for (i, (value, cfg)) in configs.iter().enumerate() {
        let sub = format!("point{i}");
        let sub_dir = dir.join(&sub);
        prepare_dir(&sub_dir, common.force)?;
        println!("{key} = {}", values[i]);
        let report = execute(cfg, &opts, &sub_dir)?;
        print_report(&report);
        out.adopt(format!("{sub}/{}", output::MANIFEST));
        aggregate.push(vec![
            *value,
            report.summary.n_sp,
            report.summary.visibility,
            report.summary.speckle_size,
        ]);
        code = code.max(verdict(&report));
        assertions.extend(report.assertions.iter().cloned().map(|mut a| {
            a.name = format!("{sub}.{}", a.name);
            a
        }));
        last = Some(report);
    }
    out.table("sweep", &aggregate)?;
    if let Some(mut report) = last {
        // The sweep manifest summarizes all points.
        report.name = format!("{} sweep over {key}", configs[0].1.name);
        report.frames = configs.iter().map(|(_, c)| c.frames).sum();
        report.assertions = assertions;
        out.manifest(&report, configs[0].1.effective_toml(), opts.workers, start.elapsed())?;
    }
    Ok(code)
}

fn cmd_oracle(quick: bool, common: &Common) -> Result<u8> {
    let mut overrides = Vec::new();
    if quick {
        overrides.push(("frames".to_string(), QUICK_FRAMES.to_string()));
        overrides.push(("analysis.quick".to_string(), "true".to_string()));
    }
    overrides.extend(common.overrides()?);
    let cfg = ScenarioConfig::oracle_with(&overrides)?;
    let opts = common.options()?;
    let dir = common.out_dir(&cfg.name);
    prepare_dir(&dir, common.force)?;
    let report = execute(&cfg, &opts, &dir)?;
    print_report(&report);
    Ok(verdict(&report))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { scenario, common } => cmd_run(scenario, common),
        Command::Sweep {
            scenario,
            key,
            values,
            common,
        } => cmd_sweep(scenario, key, values, common),
        Command::Oracle { quick, common } => cmd_oracle(*quick, common),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
