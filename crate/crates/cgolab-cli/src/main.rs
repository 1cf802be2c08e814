use cgolab_cli::commands::{output_dir, plan, run, CliError};
use cgolab_cli::config::{parse_config, ExperimentConfig};
use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "cgolab", version, about = "CGO experiments, estimate scans and DtN maps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// key=value config file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// Validate the config and print the execution plan
    #[arg(long)]
    dry_run: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Multiplier regularisation and forward-operator residual
    MultiplierCheck(Common),
    /// Corrector norms along a schedule of s
    DecayScan(Common),
    /// One Born solve, with its iteration trace and corrector field
    BornSolve(Common),
    /// Both sides of an estimate over a schedule of s
    RatioScan(Common),
    /// Frame averages of |K^|^p against their bound
    AvgEstimate(Common),
    /// Dyadic shell profile of a potential
    ShellSelect(Common),
    /// Frame averages of E(q, xi)
    Energy(Common),
    /// Finite-difference DtN matrix
    DtnAssemble(Common),
    /// Boundary determination of a conductivity difference
    BoundaryProbe(Common),
    /// End-to-end uniqueness experiment
    UniquenessRun(Common),
    /// Run the acceptance suite
    Accept(Common),
}

impl Command {
    fn split(&self) -> (&'static str, &Common) {
        match self {
            Command::MultiplierCheck(c) => ("multiplier-check", c),
            Command::DecayScan(c) => ("decay-scan", c),
            Command::BornSolve(c) => ("born-solve", c),
            Command::RatioScan(c) => ("ratio-scan", c),
            Command::AvgEstimate(c) => ("avg-estimate", c),
            Command::ShellSelect(c) => ("shell-select", c),
            Command::Energy(c) => ("energy", c),
            Command::DtnAssemble(c) => ("dtn-assemble", c),
            Command::BoundaryProbe(c) => ("boundary-probe", c),
            Command::UniquenessRun(c) => ("uniqueness-run", c),
            Command::Accept(c) => ("accept", c),
        }
    }
}

fn load(name: &str, common: &Common) -> Result<ExperimentConfig, CliError> {
    let cfg = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            let cfg = parse_config(&text).map_err(CliError::Config)?;
            if cfg.command != name {
                return Err(CliError::Usage(format!(
                    "config is for '{}', not '{name}'",
                    cfg.command
                )));
            }
            cfg
        }
        None => ExperimentConfig::for_command(name).map_err(CliError::Config)?,
    };
    match common.seed {
        Some(seed) => cfg.with("seed", &seed.to_string()).map_err(CliError::Config),
        None => Ok(cfg),
    }
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("CGOLAB_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| CliError::Usage(format!("CGOLAB_THREADS must be a positive integer, got '{v}'")))?;
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    #[cfg(not(feature = "parallel"))]
    let _ = n;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (name, common) = cli.command.split();
    let result = configure_threads().and_then(|_| load(name, common)).and_then(|cfg| {
        if common.dry_run {
            println!("{}", plan(&cfg));
            return Ok(true);
        }
        let out = output_dir(&cfg, common.out.clone());
        let report = run(&cfg, &out)?;
        for c in &report.checks {
            eprintln!("[{}] {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
        }
        eprintln!("outputs in {}", out.display());
        Ok(report.passed())
    });
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
