//! `cocycle`: Lyapunov exponents, holonomies, trivializations and
//! projective measures for SL(2,R) cocycles from the command line.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numeric failure,
//! 4 points not on a common leaf, 5 cocycle not fiber-bunched.

mod commands;
mod config;
mod output;

use std::io::Write;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::CliError;
use config::{Config, ConfigError};
use output::{Format, Record};

#[derive(Parser, Debug)]
#[command(name = "cocycle", version, about = "Numerical laboratory for SL(2,R) linear cocycles")]
#[command(after_help = "Exit codes: 2 config error, 3 numeric failure, 4 not on leaf, 5 not fiber-bunched.\n\
Keys not covered by flags are given as key=value arguments or in the --config file, e.g.\n  \
cocycle lyapunov --seed 1 base.kind=rotation cocycle.kind=diagonal cocycle.constant=0.5")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Flat key=value configuration file.
    #[arg(long, global = true)]
    config: Option<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    iterations: Option<u64>,
    #[arg(long, global = true)]
    orbits: Option<u64>,
    #[arg(long = "burn-in", global = true)]
    burn_in: Option<u64>,
    #[arg(long, global = true)]
    tol: Option<f64>,
    #[arg(long, global = true)]
    bins: Option<usize>,
    /// jsonl or csv
    #[arg(long, global = true)]
    format: Option<String>,
    /// Cap on worker threads.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Two-column numeric output for plotting.
    #[arg(long = "gnuplot-friendly", global = true)]
    gnuplot_friendly: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Top and bottom Lyapunov exponents.
    Lyapunov {
        #[arg(allow_negative_numbers = true)]
        overrides: Vec<String>,
    },
    /// Stable or unstable holonomy between two points on a leaf.
    Holonomy {
        #[arg(allow_negative_numbers = true)]
        overrides: Vec<String>,
    },
    /// Trace trichotomy of an SL(2,R) matrix given as a b c d.
    Classify {
        #[arg(allow_negative_numbers = true)]
        args: Vec<String>,
    },
    /// Empirical fiber measure and its atoms.
    Measure {
        #[arg(allow_negative_numbers = true)]
        overrides: Vec<String>,
    },
    /// Conjugate a loop-trivial cocycle to a constant.
    Trivialize {
        #[arg(allow_negative_numbers = true)]
        overrides: Vec<String>,
    },
    /// Named constructions: theorem-b, random-product.
    Example {
        name: String,
        #[arg(allow_negative_numbers = true)]
        overrides: Vec<String>,
    },
    /// Fiber- and center-bunching report.
    CheckBunching {
        #[arg(allow_negative_numbers = true)]
        overrides: Vec<String>,
    },
}

fn build_config(cli: &Cli, overrides: &[String]) -> Result<Config, ConfigError> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| ConfigError::File { path: path.clone(), message: e.to_string() })?;
            Config::parse_text(&text, path)?
        }
        None => Config::default(),
    };
    for o in overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| ConfigError::invalid(o, "expected key=value"))?;
        cfg.set(k.trim(), v.trim());
    }
    let flags: [(&str, Option<String>); 8] = [
        ("seed", cli.seed.map(|v| v.to_string())),
        ("iterations", cli.iterations.map(|v| v.to_string())),
        ("orbits", cli.orbits.map(|v| v.to_string())),
        ("burn_in", cli.burn_in.map(|v| v.to_string())),
        ("tol", cli.tol.map(|v| v.to_string())),
        ("bins", cli.bins.map(|v| v.to_string())),
        ("format", cli.format.clone()),
        ("workers", cli.workers.map(|v| v.to_string())),
    ];
    for (k, v) in flags {
        if let Some(v) = v {
            cfg.set(k, &v);
        }
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<String, CliError> {
    let (name, overrides, entries): (&str, Vec<String>, Vec<f64>) = match &cli.command {
        Command::Classify { args } => {
            let (nums, keys): (Vec<&String>, Vec<&String>) = args.iter().partition(|a| a.parse::<f64>().is_ok());
            ("classify", keys.into_iter().cloned().collect(), nums.iter().map(|a| a.parse().unwrap()).collect())
        }
        Command::Lyapunov { overrides } => ("lyapunov", overrides.clone(), vec![]),
        Command::Holonomy { overrides } => ("holonomy", overrides.clone(), vec![]),
        Command::Measure { overrides } => ("measure", overrides.clone(), vec![]),
        Command::Trivialize { overrides } => ("trivialize", overrides.clone(), vec![]),
        Command::Example { overrides, .. } => ("example", overrides.clone(), vec![]),
        Command::CheckBunching { overrides } => ("check-bunching", overrides.clone(), vec![]),
    };
    let cfg = build_config(cli, &overrides)?;
    let format: Format = cfg
        .string_or("format", "jsonl")
        .parse()
        .map_err(|m: String| ConfigError::invalid("format", m))?;
    if let Some(w) = cfg.opt_string("workers") {
        let w: usize = w.parse().ok().filter(|w| *w > 0).ok_or_else(|| ConfigError::invalid("workers", "must be a positive integer"))?;
        // a second build only fails if a pool already exists, which is harmless
        let _ = rayon::ThreadPoolBuilder::new().num_threads(w).build_global();
    }
    let (result, columns) = match &cli.command {
        Command::Lyapunov { .. } => commands::lyapunov(&cfg)?,
        Command::Holonomy { .. } => commands::holonomy(&cfg)?,
        Command::Classify { .. } => commands::classify_cmd(&cfg, &entries)?,
        Command::Measure { .. } => commands::measure(&cfg)?,
        Command::Trivialize { .. } => commands::trivialize_cmd(&cfg)?,
        Command::Example { name, .. } => {
            cfg.string_or("example", name);
            commands::example(&cfg, name)?
        }
        Command::CheckBunching { .. } => commands::check_bunching(&cfg)?,
    };
    cfg.check_unused()?;
    let record = Record { command: name, config: cfg.resolved(), result };
    let gnuplot = cli.gnuplot_friendly.then(|| columns.unwrap_or_default());
    Ok(output::render(&record, format, gnuplot.as_ref()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(out) => {
            let mut stdout = std::io::stdout().lock();
            if stdout.write_all(out.as_bytes()).and_then(|_| stdout.flush()).is_err() {
                return ExitCode::from(1);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
