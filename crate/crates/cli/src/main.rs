use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use kickcgl::config::{parse_config, ConfigError, RunConfig};
use kickcgl::kicks::RunStatus;
use kickcgl::suites::{run_suite, simulate_run, RunManifest, Suite};

const EXIT_GATE: u8 = 2;
const EXIT_CONFIG: u8 = 3;
const EXIT_DIVERGENCE: u8 = 4;

/// Kicked complex Ginzburg-Landau experiments.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// JSON configuration file; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides experiment.seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides experiment.replicas.
    #[arg(long, global = true)]
    replicas: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one kicked trajectory from zero.
    Simulate,
    /// Run the coupling suite: maximal coupling, squeezing, survival, ell.
    Couple,
    /// Run the mixing suite.
    Mix,
    /// Run the stationary-measure suite: Khasminskii relation and drift.
    Stationary,
    /// Run verification suites and write a manifest.
    Verify {
        #[arg(long, default_value = "all")]
        suite: Suite,
    },
}

impl Command {
    fn suite(&self) -> Option<Suite> {
        match self {
            Command::Simulate => None,
            Command::Couple => Some(Suite::Coupling),
            Command::Mix => Some(Suite::Mixing),
            Command::Stationary => Some(Suite::Stationary),
            Command::Verify { suite } => Some(*suite),
        }
    }
}

fn load(common: &Common, needs_coupling: bool) -> Result<RunConfig, ConfigError> {
    let mut cfg = match &common.config {
        Some(path) => parse_config(path, needs_coupling)?,
        None => RunConfig::from_value(serde_json::json!({}), std::env::vars(), needs_coupling)?,
    };
    if let Some(s) = common.seed {
        cfg.experiment.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.output = o.clone();
    }
    if let Some(r) = common.replicas {
        cfg.experiment.replicas = r;
    }
    let v = cfg.violations(needs_coupling);
    if v.is_empty() {
        Ok(cfg)
    } else {
        Err(ConfigError::Invalid(v))
    }
}

fn report(m: &RunManifest) {
    for s in &m.suites {
        println!("{:<11} {}", s.suite.name(), if s.passed { "PASS" } else { "FAIL" });
        for c in &s.checks {
            println!("  {:<20} {} {}", c.name, if c.passed { "pass" } else { "FAIL" }, c.detail);
        }
        if let Some(e) = &s.error {
            println!("  error: {e}");
        }
        if s.diverged > 0 {
            println!("  diverged replicas: {} of {}", s.diverged, s.replicas);
        }
    }
    println!("wall time {:.1}s, config {}", m.wall_time_s, &m.config_hash[..12]);
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let suite = cli.command.suite();
    let cfg = match load(&cli.common, suite.is_some_and(Suite::needs_coupling)) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    match suite {
        None => match simulate_run(&cfg) {
            Ok((status, files)) => {
                for f in files {
                    println!("{}", cfg.output.join(f).display());
                }
                match status {
                    RunStatus::Completed => ExitCode::SUCCESS,
                    RunStatus::Diverged { time, norm } => {
                        eprintln!("diverged at t = {time} (H1 norm {norm:e})");
                        ExitCode::from(EXIT_DIVERGENCE)
                    }
                }
            }
            Err(e) => {
                eprintln!("{e}");
                ExitCode::from(if e.is_divergence() { EXIT_DIVERGENCE } else { EXIT_GATE })
            }
        },
        Some(s) => match run_suite(s, &cfg) {
            Ok(m) => {
                report(&m);
                match m.exit_code() {
                    0 => ExitCode::SUCCESS,
                    4 => ExitCode::from(EXIT_DIVERGENCE),
                    _ => ExitCode::from(EXIT_GATE),
                }
            }
            Err(e) => {
                eprintln!("{e}");
                ExitCode::from(EXIT_GATE)
            }
        },
    }
}
