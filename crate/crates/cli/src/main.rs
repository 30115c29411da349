use std::path::PathBuf;
use std::process::ExitCode;

use clap::{CommandFactory, Parser, ValueEnum};
use pstab_core::config::{load_config, K0Setting};
use pstab_core::Error;

mod commands;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Command {
    /// Spectrum and eigenbasis export.
    Eig,
    /// K-approximate periodic solve (head size from `solve.k`).
    Periodic,
    /// Global finite-dimensional control.
    Stabilize,
    /// Control localized to ω × E.
    StabilizeLocal,
    /// Gram matrix of the first K0 eigenfunctions on ω.
    Gram,
    /// The resonant one-dimensional example: bound, dichotomy, control.
    Example3,
    /// Perturbation-size and m(E) scaling studies.
    Sweep,
}

/// Periodic stabilization experiments driven by a TOML config.
#[derive(Debug, Parser)]
#[command(name = "pstab", version)]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// Config file, or `preset:NAME` for a built-in preset.
    #[arg(long)]
    config: PathBuf,
    /// Output base directory; results go to `<out>/<name>/`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    steps: Option<usize>,
    /// Replaces `perturbation.scale`.
    #[arg(long)]
    scale: Option<f64>,
    /// `auto` or a fixed head size.
    #[arg(long = "K0", value_parser = parse_k0)]
    k0: Option<K0Setting>,
}

fn parse_k0(s: &str) -> Result<K0Setting, String> {
    K0Setting::parse(s).map_err(|e| e.to_string())
}

/// Exit status for each failure class.
fn exit_code(err: &Error) -> u8 {
    match err {
        Error::InvalidDomain(_)
        | Error::GridTooCoarse { .. }
        | Error::EllipticityViolation { .. }
        | Error::DimensionMismatch { .. }
        | Error::EmptySubdomain
        | Error::InvalidTimeGrid(_)
        | Error::NonFiniteField { .. }
        | Error::Parse(_)
        | Error::Eval(_)
        | Error::BadExponent { .. }
        | Error::InvalidLocalization(_)
        | Error::Config { .. } => 2,
        Error::PerturbationTooLarge { .. } | Error::NearSingular { .. } => 3,
        Error::ResidualCheckFailed { .. } => 4,
        Error::Io(_) => 5,
        Error::ConvergenceFailure | Error::SingularStep { .. } => 6,
        Error::NoAdmissibleK => 7,
        Error::DegenerateGram { .. } => 8,
        Error::BoundViolated { .. } => 9,
        Error::ResonantTail { .. } => 10,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let _ = err.print();
            if err.use_stderr() && !err.to_string().contains("Usage:") {
                eprintln!("\n{}", Cli::command().render_usage());
            }
            return ExitCode::from(if err.use_stderr() { 2 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(dir) => {
            println!("wrote {}", dir.display());
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("pstab: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn run(cli: &Cli) -> pstab_core::Result<PathBuf> {
    let mut cfg = load_config(&cli.config)?;
    cfg.apply_overrides(cli.steps, cli.scale, cli.k0.clone())?;
    let dir = cfg.output_dir(cli.out.as_deref());
    match cli.command {
        Command::Eig => commands::eig(&cfg, &dir)?,
        Command::Periodic => commands::periodic(&cfg, &dir)?,
        Command::Stabilize => commands::stabilize(&cfg, &dir, false)?,
        Command::StabilizeLocal => commands::stabilize(&cfg, &dir, true)?,
        Command::Gram => commands::gram(&cfg, &dir)?,
        Command::Example3 => commands::example3(&cfg, &dir)?,
        Command::Sweep => commands::sweep(&cfg, &dir)?,
    }
    Ok(dir)
}
