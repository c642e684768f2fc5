use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use memctl::config::{ConfigError, ExperimentConfig, ExperimentKind};
use memctl::experiments;

#[derive(Parser)]
#[command(name = "memctl", version, about = "Experiments for optimal control with memory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config.
    Run {
        config: PathBuf,
        /// Directory for `<kind>.csv` and `<kind>_summary.json`.
        #[arg(long)]
        output_dir: Option<PathBuf>,
        /// Seed for sampled checks, overrides the config.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, short)]
        verbose: bool,
    },
    /// Describe the experiment kinds.
    List,
}

const EXIT_CHECK_FAILED: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;
const EXIT_IO: u8 = 4;

fn describe(kind: ExperimentKind) -> (&'static str, &'static str) {
    match kind {
        ExperimentKind::Simulate => (
            "problem, discretization.h, [simulate]",
            "unique solution of the state equation by contraction in the weighted sup norm E_theta",
        ),
        ExperimentKind::Value => (
            "problem, discretization.h, [value].intervals",
            "v(x, z) = inf_u int_0^inf e^{-lambda t} L(y(t), u(t)) dt",
        ),
        ExperimentKind::Dpp => (
            "problem, discretization.h, [dpp].split, [dpp].intervals",
            "dynamic programming principle v(alpha) = inf_u { int_0^t e^{-lambda s} L ds + e^{-lambda t} v(alpha_t) }",
        ),
        ExperimentKind::Bop => (
            "discretization.h_z, initial",
            "B = (I + T*T)^{-1}, ||alpha||_B^2 = <B alpha, alpha>, <T B alpha, alpha> >= 0",
        ),
        ExperimentKind::Hjb2d => (
            "problem (kernel e^{-delta s}), [hjb2d].x_range, y_range, nx, ny, dt",
            "two-dimensional HJB lambda w + H(x, y, w_x, w_y) = 0 with y' = x - delta y",
        ),
        ExperimentKind::Xval => (
            "problem (kernel e^{-delta s}), [xval].x_range, y_range, levels",
            "v(x, z) = w(x, y(z)) with y(z) = int_0^inf e^{-delta s} z(s) ds",
        ),
    }
}

fn list() -> String {
    let mut out = format!("{:<8} | {:<68} | {}\n", "kind", "required", "anchor");
    for kind in ExperimentKind::ALL {
        let (req, anchor) = describe(kind);
        out.push_str(&format!("{:<8} | {:<68} | {}\n", kind.name(), req, anchor));
    }
    out
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), ExitCode> {
    std::fs::write(path, bytes).map_err(|e| {
        eprintln!("error: cannot write {}: {e}", path.display());
        ExitCode::from(EXIT_IO)
    })
}

fn run(config: &Path, output_dir: Option<PathBuf>, seed: Option<u64>, verbose: bool) -> Result<ExitCode, ExitCode> {
    let cfg = ExperimentConfig::load(config).map_err(|e| {
        eprintln!("error: {e}");
        ExitCode::from(match e {
            ConfigError::Io(_) => EXIT_IO,
            _ => EXIT_CONFIG,
        })
    })?;
    let seed = seed.or(cfg.seed).unwrap_or(0);
    let dir = output_dir.or_else(|| cfg.output_dir.clone()).unwrap_or_else(|| PathBuf::from("."));
    let mut log = |line: String| {
        if verbose {
            eprintln!("{line}");
        }
    };
    let outcome = experiments::run(&cfg, seed, &mut log).map_err(|e| {
        eprintln!("error: {e}");
        eprintln!("{}", serde_json::to_string(&e).unwrap_or_default());
        ExitCode::from(EXIT_NUMERICAL)
    })?;
    std::fs::create_dir_all(&dir).map_err(|e| {
        eprintln!("error: cannot create {}: {e}", dir.display());
        ExitCode::from(EXIT_IO)
    })?;
    let name = cfg.kind.name();
    write(&dir.join(format!("{name}.csv")), &outcome.csv)?;
    let summary = serde_json::to_string_pretty(&outcome.summary(&cfg, seed)).unwrap_or_default();
    write(&dir.join(format!("{name}_summary.json")), summary.as_bytes())?;
    for c in &outcome.checks {
        log(format!("{} {}: {:e} (limit {:e})", if c.pass { "PASS" } else { "FAIL" }, c.name, c.value, c.limit));
    }
    if outcome.pass() {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("error: at least one check failed, see {name}_summary.json");
        Ok(ExitCode::from(EXIT_CHECK_FAILED))
    }
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::List => {
            print!("{}", list());
            ExitCode::SUCCESS
        }
        Command::Run { config, output_dir, seed, verbose } => run(&config, output_dir, seed, verbose).unwrap_or_else(|c| c),
    }
}
