//! Command-line entry point.
//!
//! Every subcommand starts from an [`ExperimentConfig`] (read from `--config`
//! or built from defaults), applies its flags on top, runs the engine and
//! writes `report.json` plus CSV artifacts to the output directory.
//!
//! Exit codes: 0 when the run passes, 2 when a check fails, 1 for usage or
//! configuration errors.

mod config;
mod engines;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::{
    CertifySection, CheckSection, DualitySection, Engine, ExperimentConfig, GeomGrid, ModelSource, MomentSection,
    SimulateSection, SuperhedgeSection, ValueSection, WeakDualitySection, DEFAULT_SEED,
};
pub use engines::{execute, CONDITIONS};

use crate::error::{Error, Result};
use crate::report::Report;

/// Output directory used when neither `--out` nor the config names one.
pub const OUTPUT_ENV: &str = "RSL_OUTPUT_DIR";
const DEFAULT_OUTPUT: &str = "rsl-output";
const VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), " (report schema rsl/1)");

#[derive(Debug, Parser)]
#[command(name = "rsl", version = VERSION, about = "Robust semimartingale laboratory")]
struct Cli {
    /// Experiment config (TOML); flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Model config (TOML).
    #[arg(long, global = true, value_name = "FILE")]
    model: Option<PathBuf>,
    /// RNG seed (default 42).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (falls back to $RSL_OUTPUT_DIR, then ./rsl-output).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,
    /// Print the effective config as TOML and exit.
    #[arg(long, global = true)]
    dump_config: bool,
    /// Optional when `--config` holds an engine section.
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Certify growth, convexity, market price of risk and ellipticity.
    Check(CheckArgs),
    /// Simulate paths and check the Girsanov density.
    Simulate(SimulateArgs),
    /// Superhedging price and hedge on the trinomial lattice.
    Superhedge(SuperhedgeArgs),
    /// Robust primal (and optionally dual) utility values.
    Value(ValueArgs),
    /// Primal and dual values with conjugacy and weak-duality checks.
    Duality(DualityArgs),
}

#[derive(Debug, Args)]
struct LatticeArgs {
    /// Time steps.
    #[arg(long)]
    steps: Option<usize>,
    /// Parameter grid points per dimension.
    #[arg(long)]
    param_grid: Option<usize>,
    /// Wealth grid nodes.
    #[arg(long)]
    wealth_nodes: Option<usize>,
}

impl LatticeArgs {
    fn apply(&self, l: &mut crate::value::LatticeConfig) {
        if let Some(n) = self.steps {
            l.n_steps = n;
        }
        if let Some(n) = self.param_grid {
            l.param_grid_per_dim = n;
        }
        if let Some(n) = self.wealth_nodes {
            l.wealth_grid.nodes = n;
        }
    }
}

#[derive(Debug, Args)]
struct CheckArgs {
    /// Samples per certifier.
    #[arg(long)]
    budget: Option<usize>,
    /// Conditions that must pass (default: all).
    #[arg(long, value_delimiter = ',')]
    require: Option<Vec<String>>,
    /// Utilities for the applicability table.
    #[arg(long, value_delimiter = ',')]
    utility: Option<Vec<String>>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Monte Carlo paths.
    #[arg(long)]
    paths: Option<usize>,
    /// Time steps.
    #[arg(long)]
    steps: Option<usize>,
    /// `constant:f=..`, `feedback:<name>` or `adversarial:<csv>`.
    #[arg(long)]
    selector: Option<String>,
    /// One constant selector per corner of the parameter box.
    #[arg(long)]
    corners: bool,
    /// Write every path to `paths.csv`.
    #[arg(long)]
    dump: bool,
    /// Moment orders for the moment-stability check.
    #[arg(long, value_delimiter = ',')]
    moments: Option<Vec<f64>>,
    /// Step counts for the moment-stability check.
    #[arg(long, value_delimiter = ',')]
    moment_steps: Option<Vec<usize>>,
    /// Paths for the moment-stability check.
    #[arg(long)]
    moment_paths: Option<usize>,
}

#[derive(Debug, Args)]
struct SuperhedgeArgs {
    /// Payoff in `X` and `max_X`.
    #[arg(long)]
    payoff: Option<String>,
    #[command(flatten)]
    lattice: LatticeArgs,
    /// Adversarial paths in the hedge audit.
    #[arg(long)]
    verify_paths: Option<usize>,
    /// `c` in the audit slack `c·dt`.
    #[arg(long)]
    slack: Option<f64>,
    /// Steps of the exhaustively audited tree (0 skips).
    #[arg(long)]
    exhaustive_steps: Option<usize>,
    /// Skip the doubled-resolution run.
    #[arg(long)]
    no_refine: bool,
    /// Write every time slice to the CSV.
    #[arg(long)]
    all_times: bool,
}

#[derive(Debug, Args)]
struct ValueArgs {
    /// `log`, `power:<p>` or `exp:<lambda>`.
    #[arg(long)]
    utility: Option<String>,
    /// Wealths at which `u` is reported.
    #[arg(long, value_delimiter = ',')]
    x: Option<Vec<f64>>,
    /// Dual arguments; enables the dual recursion.
    #[arg(long, value_delimiter = ',')]
    y: Option<Vec<f64>>,
    #[command(flatten)]
    lattice: LatticeArgs,
    /// Wealth-scaling factor for the power-utility invariance check.
    #[arg(long)]
    scaling: Option<f64>,
    /// Skip the doubled-resolution run.
    #[arg(long)]
    no_refine: bool,
    /// Write every time slice to the CSVs.
    #[arg(long)]
    all_times: bool,
}

#[derive(Debug, Args)]
struct DualityArgs {
    /// `log`, `power:<p>` or `exp:<lambda>`.
    #[arg(long)]
    utility: Option<String>,
    /// `lo:hi:n`, geometric.
    #[arg(long, value_parser = parse_grid)]
    x_grid: Option<GeomGrid>,
    /// `lo:hi:n`, geometric.
    #[arg(long, value_parser = parse_grid)]
    y_grid: Option<GeomGrid>,
    /// Absolute gap tolerance.
    #[arg(long)]
    tolerance: Option<f64>,
    #[command(flatten)]
    lattice: LatticeArgs,
    /// Also run the Monte Carlo weak-duality bound with default settings.
    #[arg(long)]
    weak_duality: bool,
    /// Write `conjugacy_u.csv` and `conjugacy_v.csv`.
    #[arg(long)]
    dump: bool,
}

fn parse_grid(s: &str) -> std::result::Result<GeomGrid, String> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 3 {
        return Err(format!("expected lo:hi:n, got `{s}`"));
    }
    let num = |p: &str| p.trim().parse::<f64>().map_err(|e| format!("`{p}`: {e}"));
    Ok(GeomGrid {
        lo: num(parts[0])?,
        hi: num(parts[1])?,
        n: parts[2].trim().parse().map_err(|e| format!("`{}`: {e}", parts[2]))?,
    })
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

/// Take the config's section for `name`, or a default one; any other engine
/// section is an error.
fn section<T: Default + Clone>(cfg: &ExperimentConfig, name: &str, own: &Option<T>) -> Result<T> {
    let other = cfg.engine().ok().map(|e| e.name()).filter(|n| *n != name);
    if let Some(other) = other {
        return Err(Error::config(other, format!("config holds a `{other}` section but `{name}` was requested")));
    }
    Ok(own.clone().unwrap_or_default())
}

fn build_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::from_file(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(m) = &cli.model {
        cfg.model = Some(ModelSource::File(m.clone()));
    }
    set(&mut cfg.seed, cli.seed);
    if cli.out.is_some() {
        cfg.output = cli.out.clone();
    }
    let Some(command) = &cli.command else {
        if cli.config.is_none() {
            return Err(Error::config("command", "give a subcommand or a --config with an engine section"));
        }
        cfg.engine()?;
        return Ok(cfg);
    };
    match command {
        Command::Check(a) => {
            let mut s = section(&cfg, "check", &cfg.check)?;
            set(&mut s.certify.budget, a.budget);
            set(&mut s.conditions, a.require.clone());
            set(&mut s.utilities, a.utility.clone());
            cfg.check = Some(s);
        }
        Command::Simulate(a) => {
            let mut s = section(&cfg, "simulate", &cfg.simulate)?;
            set(&mut s.paths, a.paths);
            set(&mut s.steps, a.steps);
            set(&mut s.selector, a.selector.clone());
            s.corners |= a.corners;
            s.dump |= a.dump;
            if a.moments.is_some() || a.moment_steps.is_some() || a.moment_paths.is_some() {
                let mut m = s.moments.take().unwrap_or_default();
                set(&mut m.p, a.moments.clone());
                set(&mut m.steps, a.moment_steps.clone());
                set(&mut m.paths, a.moment_paths);
                s.moments = Some(m);
            }
            cfg.simulate = Some(s);
        }
        Command::Superhedge(a) => {
            let mut s = section(&cfg, "superhedge", &cfg.superhedge)?;
            set(&mut s.payoff, a.payoff.clone());
            a.lattice.apply(&mut s.lattice);
            set(&mut s.verify_paths, a.verify_paths);
            set(&mut s.slack_const, a.slack);
            set(&mut s.exhaustive_steps, a.exhaustive_steps);
            s.refine &= !a.no_refine;
            s.dump_all_times |= a.all_times;
            cfg.superhedge = Some(s);
        }
        Command::Value(a) => {
            let mut s = section(&cfg, "value", &cfg.value)?;
            set(&mut s.utility, a.utility.clone());
            set(&mut s.x, a.x.clone());
            set(&mut s.y, a.y.clone());
            a.lattice.apply(&mut s.lattice);
            if a.scaling.is_some() {
                s.scaling = a.scaling;
            }
            s.refine &= !a.no_refine;
            s.dump_all_times |= a.all_times;
            cfg.value = Some(s);
        }
        Command::Duality(a) => {
            let mut s = section(&cfg, "duality", &cfg.duality)?;
            set(&mut s.utility, a.utility.clone());
            set(&mut s.x_grid, a.x_grid);
            set(&mut s.y_grid, a.y_grid);
            if a.tolerance.is_some() {
                s.tolerance = a.tolerance;
            }
            a.lattice.apply(&mut s.lattice);
            if a.weak_duality && s.weak_duality.is_none() {
                s.weak_duality = Some(WeakDualitySection::default());
            }
            s.dump |= a.dump;
            cfg.duality = Some(s);
        }
    }
    Ok(cfg)
}

/// Errors caused by the invocation rather than by a failed check.
fn is_usage_error(e: &Error) -> bool {
    matches!(
        e,
        Error::Config { .. }
            | Error::Expr(_)
            | Error::Io { .. }
            | Error::Domain(_)
            | Error::DomainMismatch(_)
            | Error::Unsupported(_)
            | Error::ParamOutOfBox { .. }
            | Error::BadFamilyParams { .. }
    )
}

/// Run the engine on a pool of `threads` workers (the global pool if `None`).
pub fn execute_with_threads(
    cfg: &ExperimentConfig,
    out: Option<&std::path::Path>,
    threads: Option<usize>,
) -> Result<Report> {
    match threads {
        None => execute(cfg, out),
        Some(n) => {
            if n == 0 {
                return Err(Error::config("threads", "must be >= 1"));
            }
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::config("threads", e.to_string()))?;
            pool.install(|| execute(cfg, out))
        }
    }
}

/// Parse `args` (including the program name), run, and return the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let mut cfg = match build_config(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    if cli.dump_config {
        return match cfg.inline_model().and_then(|_| cfg.to_toml()) {
            Ok(text) => {
                print!("{text}");
                0
            }
            Err(e) => {
                eprintln!("error: {e}");
                1
            }
        };
    }
    let out = cfg
        .output
        .clone()
        .or_else(|| std::env::var_os(OUTPUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT));
    let created = !out.exists();
    if let Err(e) = std::fs::create_dir_all(&out) {
        eprintln!("error: creating {}: {e}", out.display());
        return 1;
    }
    let report = match execute_with_threads(&cfg, Some(&out), cli.threads) {
        Ok(r) => r,
        Err(e) if is_usage_error(&e) => {
            eprintln!("error: {e}");
            if created {
                // Only succeeds while still empty.
                let _ = std::fs::remove_dir(&out);
            }
            return 1;
        }
        Err(e) => {
            eprintln!("check failed: {e}");
            let name = cfg.engine().map(|e| e.name()).unwrap_or("unknown");
            Report::new(name, cfg.seed, false, serde_json::json!({ "error": e.to_string() }))
        }
    };
    if let Err(e) = report.write(&out) {
        eprintln!("error: {e}");
        return 1;
    }
    println!("{}: {} ({})", report.command, if report.pass { "pass" } else { "fail" }, out.join("report.json").display());
    if report.pass {
        0
    } else {
        2
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn version_names_the_report_schema() {
        assert!(VERSION.ends_with(&format!("(report schema {})", crate::report::SCHEMA)));
    }

    #[test]
    fn flags_override_config_values() {
        let cli = Cli::try_parse_from(["rsl", "--seed", "7", "value", "--utility", "power:0.5", "--steps", "8"]).unwrap();
        let cfg = build_config(&cli).unwrap();
        assert_eq!(cfg.seed, 7);
        let v = cfg.value.unwrap();
        assert_eq!(v.utility, "power:0.5");
        assert_eq!(v.lattice.n_steps, 8);
    }

    #[test]
    fn grid_flag_parses() {
        assert_eq!(parse_grid("0.25:4:9").unwrap(), GeomGrid { lo: 0.25, hi: 4.0, n: 9 });
        assert!(parse_grid("1:2").is_err());
    }
}
