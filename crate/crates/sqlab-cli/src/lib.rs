//! Command-line orchestration for the `sqlab` verification laboratory.
//!
//! Exit codes: 0 when every check passes, 2 on any violation, 1 on usage or
//! configuration errors.

pub mod config;
pub mod runs;
pub mod table;

use std::io::Write;
use std::path::PathBuf;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use clap::Parser;

pub use config::{Command, Dyadic, Geometry, Occupancy, RunConfig};
pub use runs::run_config;
pub use table::{Cell, Table};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_VIOLATION: i32 = 2;

const COMMANDS: [&str; 9] = ["cover", "biortho", "overlap", "ends", "rescale", "ratio", "kakeya", "complex", "sweep"];

/// Dyadic values may be written as `2^-n`, lists as `a,b` or `a..b`, counts as `1e5`.
#[derive(Parser, Debug)]
#[command(name = "sqlab", version, about = "Square function verification laboratory")]
struct Cli {
    #[arg(value_parser = COMMANDS)]
    command: String,
    /// key=value file applied before the flags
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    k: Option<String>,
    #[arg(long)]
    delta: Option<String>,
    #[arg(long)]
    r: Option<String>,
    #[arg(long)]
    sigma: Option<String>,
    /// Sector locations for `rescale`
    #[arg(long = "M")]
    m: Option<String>,
    #[arg(long)]
    step: Option<String>,
    #[arg(long)]
    grid: Option<String>,
    #[arg(long)]
    samples: Option<String>,
    #[arg(long)]
    trials: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    c0: Option<String>,
    #[arg(long = "D")]
    d: Option<String>,
    #[arg(long = "S")]
    s: Option<String>,
    #[arg(long)]
    tol: Option<String>,
    #[arg(long)]
    c: Option<String>,
    /// Fraction of blocks kept, or `single`
    #[arg(long)]
    occupancy: Option<String>,
    /// curve, cone or complex
    #[arg(long)]
    geometry: Option<String>,
    #[arg(long)]
    configs: Option<String>,
    #[arg(long)]
    attempts: Option<String>,
    #[arg(long)]
    per_plank: Option<String>,
    #[arg(long)]
    max_mult: Option<String>,
    #[arg(long)]
    bound: Option<String>,
    /// Target command of `sweep`
    #[arg(long)]
    of: Option<String>,
    /// Output directory
    #[arg(long)]
    out: Option<String>,
    #[arg(long)]
    emit_plot: bool,
    #[arg(long)]
    scan_c0: bool,
}

impl Cli {
    fn overrides(&self) -> Vec<(&'static str, &str)> {
        let pairs: [(&'static str, &Option<String>); 24] = [
            ("k", &self.k),
            ("delta", &self.delta),
            ("r", &self.r),
            ("sigma", &self.sigma),
            ("m", &self.m),
            ("step", &self.step),
            ("grid", &self.grid),
            ("samples", &self.samples),
            ("trials", &self.trials),
            ("seed", &self.seed),
            ("c0", &self.c0),
            ("D", &self.d),
            ("S", &self.s),
            ("tol", &self.tol),
            ("c", &self.c),
            ("occupancy", &self.occupancy),
            ("geometry", &self.geometry),
            ("configs", &self.configs),
            ("attempts", &self.attempts),
            ("per_plank", &self.per_plank),
            ("max_mult", &self.max_mult),
            ("bound", &self.bound),
            ("of", &self.of),
            ("out", &self.out),
        ];
        pairs.into_iter().filter_map(|(k, v)| v.as_deref().map(|v| (k, v))).collect()
    }
}

/// Builds the configuration: defaults, then the config file, then flags.
pub fn parse_config<I, S>(args: I) -> std::result::Result<RunConfig, String>
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    use clap::CommandFactory;
    let cli = Cli::try_parse_from(args).map_err(|e| e.render().to_string())?;
    let usage = || Cli::command().render_usage().to_string();
    let mut cfg = RunConfig::default();
    if let Some(p) = &cli.config {
        let text = std::fs::read_to_string(p).map_err(|e| format!("cannot read {}: {e}\n{}", p.display(), usage()))?;
        cfg.apply_kv(&text).map_err(|e| format!("{}: {e:#}\n{}", p.display(), usage()))?;
    }
    cfg.command = cli.command.parse().map_err(|e| format!("{e}"))?;
    for (k, v) in cli.overrides() {
        cfg.set(k, v).map_err(|e| format!("--{k}: {e:#}\n{}", usage()))?;
    }
    if cli.emit_plot {
        cfg.emit_plot = true;
    }
    if cli.scan_c0 {
        cfg.scan_c0 = true;
    }
    Ok(cfg)
}

/// Runs `cfg` and writes its reports; returns the table.
pub fn execute(cfg: &RunConfig) -> Result<Table> {
    let started = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let clock = Instant::now();
    let t = run_config(cfg).with_context(|| format!("{} failed", cfg.command.name()))?;
    table::write_outputs(&t, cfg, started, clock.elapsed().as_secs_f64(), &cfg.out)?;
    Ok(t)
}

/// Entry point: `args` includes the program name.
pub fn run<I, S>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let args: Vec<std::ffi::OsString> = args.into_iter().map(Into::into).collect();
    let wants_help = args.iter().any(|a| a == "--help" || a == "-h" || a == "--version" || a == "-V");
    let cfg = match parse_config(args) {
        Ok(c) => c,
        Err(msg) if wants_help => {
            let _ = write!(out, "{msg}");
            return EXIT_PASS;
        }
        Err(msg) => {
            let _ = writeln!(err, "{}", msg.trim_end());
            return EXIT_USAGE;
        }
    };
    let t = match execute(&cfg) {
        Ok(t) => t,
        Err(e) => {
            let _ = writeln!(err, "error: {e:#}");
            return EXIT_USAGE;
        }
    };
    if let Ok(body) = t.csv() {
        let _ = out.write_all(&body);
    }
    for (name, ok) in &t.checks {
        let _ = writeln!(out, "# check {}: {name}", if *ok { "pass" } else { "FAIL" });
    }
    let _ = writeln!(
        out,
        "# {} rows, {} violations, reports in {}",
        t.rows.len(),
        t.violations(),
        cfg.out.display()
    );
    if t.pass() {
        EXIT_PASS
    } else {
        EXIT_VIOLATION
    }
}
