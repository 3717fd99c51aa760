//! `finsler` command-line driver.
//!
//! Exit codes: 0 success or pass, 1 usage or input error, 2 numerical
//! failure, 3 criterion fail.

mod commands;
mod point;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use finsler::config::CATALOG;
use finsler::{Convention, Error, HamiltonianSystem, MapKind, ModelConfig, RunReport};

use commands::Outcome;

const EXIT_USAGE: u8 = 1;
const EXIT_NUMERICAL: u8 = 2;
const EXIT_CRITERION: u8 = 3;

#[derive(Parser)]
#[command(name = "finsler", version, about = "Finsler geometry and Jacobi-curve curvature numerics")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Config file, or the name of a bundled catalog model.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<String>,
    /// Write the report here instead of stdout.
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Emit the command's table as CSV instead of the JSON report.
    #[arg(long, global = true)]
    csv: bool,
    #[arg(long = "tol-override", global = true, value_name = "KEY=VAL")]
    tol_override: Vec<String>,
    /// Record the wall-clock time in the report.
    #[arg(long, global = true)]
    timestamp: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Reduced,
    Nonreduced,
    Both,
}

impl KindArg {
    fn kinds(self) -> Vec<MapKind> {
        match self {
            KindArg::Reduced => vec![MapKind::Reduced],
            KindArg::Nonreduced => vec![MapKind::Nonreduced],
            KindArg::Both => vec![MapKind::Nonreduced, MapKind::Reduced],
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ConventionArg {
    A,
    B,
    Both,
}

#[derive(Subcommand)]
enum Command {
    /// Sampled homogeneity, convexity and reversibility checks.
    Validate {
        #[arg(long, default_value_t = finsler::config::VALIDATION_SAMPLES)]
        samples: usize,
    },
    /// Fundamental tensor, Cartan tensor, spray and connections at a point.
    Tensors {
        #[arg(long, value_name = "POINT")]
        at: String,
    },
    /// Curvature map at a point.
    Curvature {
        #[arg(long, value_name = "POINT")]
        at: String,
        #[arg(long, conflicts_with = "nonreduced")]
        reduced: bool,
        #[arg(long)]
        nonreduced: bool,
        /// Include the separate curvature, Hessian, Chern and gradient terms.
        #[arg(long)]
        breakdown: bool,
    },
    /// Integrate the Hamiltonian flow.
    Flow {
        #[arg(long, value_name = "POINT")]
        from: String,
        #[arg(long, allow_negative_numbers = true)]
        time: f64,
        #[arg(long, default_value_t = 1e-3)]
        dt: f64,
        /// Also integrate the variational equation and report its symplecticity.
        #[arg(long)]
        monodromy: bool,
    },
    /// Compare the closed-form curvature map with the Schwarzian oracle.
    JacobiVerify {
        #[arg(long, value_enum, default_value = "both")]
        kind: KindArg,
        /// A single state; otherwise unit-speed states are sampled.
        #[arg(long, value_name = "POINT")]
        at: Option<String>,
        #[arg(long, default_value_t = 20)]
        samples: usize,
        #[arg(long, default_value_t = 0x5eed_0003)]
        seed: u64,
    },
    /// Conjugate times along the extremal through a point.
    Conjugate {
        #[arg(long, value_name = "POINT")]
        from: String,
        #[arg(long)]
        time: f64,
        #[arg(long, value_enum, default_value = "nonreduced")]
        kind: KindArg,
        #[arg(long, default_value_t = 1e-3)]
        dt: f64,
    },
    /// Negativity scan of the reduced curvature map on an energy level.
    Scan {
        #[arg(long, allow_negative_numbers = true)]
        energy: f64,
        #[arg(long, default_value_t = 8)]
        grid: usize,
        /// Also estimate the top Lyapunov exponent over this time.
        #[arg(long, num_args = 0..=1, default_missing_value = "10", value_name = "T")]
        lyapunov: Option<f64>,
    },
    /// Sampled Anosov-type sufficient condition on an energy level.
    Anosov {
        #[arg(long, allow_negative_numbers = true)]
        energy: f64,
        #[arg(long, default_value_t = 8)]
        grid: usize,
        #[arg(long, value_enum, default_value = "both")]
        convention: ConventionArg,
        /// Upper flag-curvature bound; sampled when omitted.
        #[arg(long, allow_negative_numbers = true)]
        k: Option<f64>,
        /// Also evaluate the Riemannian corollary.
        #[arg(long)]
        corollary: bool,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Validate { .. } => "validate",
            Command::Tensors { .. } => "tensors",
            Command::Curvature { .. } => "curvature",
            Command::Flow { .. } => "flow",
            Command::JacobiVerify { .. } => "jacobi-verify",
            Command::Conjugate { .. } => "conjugate",
            Command::Scan { .. } => "scan",
            Command::Anosov { .. } => "anosov",
        }
    }
}

fn resolve_config(common: &Common) -> Result<ModelConfig> {
    let path = common
        .config
        .as_deref()
        .ok_or_else(|| anyhow!(Error::InvalidInput("--config is required".into())))?;
    let mut cfg = if Path::new(path).is_file() {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {path}"))?;
        finsler::parse_config(&text)?
    } else if CATALOG.contains(&path) {
        ModelConfig::catalog(path)?
    } else {
        return Err(Error::Io(format!("{path}: no such file or catalog entry")).into());
    };
    for spec in &common.tol_override {
        cfg.override_tolerance(spec)?;
    }
    Ok(cfg)
}

fn run(command: &Command, cfg: &ModelConfig) -> Result<Outcome> {
    if let Command::Validate { samples } = command {
        return commands::validate(&cfg.model()?, *samples);
    }
    let sys = HamiltonianSystem::new(cfg.validated_model()?);
    let model = sys.model();
    match command {
        Command::Validate { .. } => unreachable!("handled above"),
        Command::Tensors { at } => commands::tensors(model, at),
        Command::Curvature {
            at,
            reduced,
            breakdown,
            ..
        } => {
            let kind = if *reduced { MapKind::Reduced } else { MapKind::Nonreduced };
            commands::curvature(model, at, kind, *breakdown)
        }
        Command::Flow {
            from,
            time,
            dt,
            monodromy,
        } => commands::flow(&sys, from, *time, *dt, *monodromy),
        Command::JacobiVerify { kind, at, samples, seed } => {
            commands::jacobi_verify(&sys, cfg, at.as_deref(), &kind.kinds(), *samples, *seed)
        }
        Command::Conjugate { from, time, kind, dt } => {
            let kind = match kind {
                KindArg::Reduced => MapKind::Reduced,
                KindArg::Nonreduced => MapKind::Nonreduced,
                KindArg::Both => return Err(Error::InvalidInput("conjugate takes a single kind".into()).into()),
            };
            commands::conjugate(&sys, from, *time, kind, *dt)
        }
        Command::Scan { energy, grid, lyapunov } => commands::scan(&sys, *energy, *grid, *lyapunov),
        Command::Anosov {
            energy,
            grid,
            convention,
            k,
            corollary,
        } => {
            let conventions = match convention {
                ConventionArg::A => vec![Convention::A],
                ConventionArg::B => vec![Convention::B],
                ConventionArg::Both => vec![Convention::A, Convention::B],
            };
            commands::anosov(&sys, *energy, *grid, &conventions, *k, *corollary)
        }
    }
}

fn exit_code_for(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Expr(_) | Error::Config { .. } | Error::InvalidInput(_) | Error::Io(_)) => EXIT_USAGE,
        Some(_) => EXIT_NUMERICAL,
        None => EXIT_USAGE,
    }
}

fn emit(common: &Common, text: &str) -> Result<()> {
    match &common.out {
        Some(path) => std::fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => match std::io::stdout().lock().write_all(text.as_bytes()) {
            Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e).context("writing stdout"),
            _ => Ok(()),
        },
    }
}

fn timestamp() -> String {
    let secs = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    format!("unix:{secs}")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let name = cli.command.name();
    let (cfg, outcome) = match resolve_config(&cli.common) {
        Ok(c) => {
            let out = run(&cli.command, &c);
            (Some(c), out)
        }
        Err(e) => (None, Err(e)),
    };
    let mut report = RunReport::new(name, cfg.as_ref());
    if cli.common.timestamp {
        report.timestamp = Some(timestamp());
    }
    let (code, text) = match outcome {
        Ok(out) => {
            report.status = if out.pass { "pass" } else { "fail" }.into();
            report.result = out.result;
            let code = if out.pass { 0 } else { EXIT_CRITERION };
            let text = match (out.table, cli.common.csv) {
                (Some(table), true) => table,
                (None, true) => {
                    eprintln!("error: `{name}` has no tabular output for --csv");
                    return ExitCode::from(EXIT_USAGE);
                }
                (_, false) => format!("{}\n", report.to_json()),
            };
            (code, text)
        }
        Err(err) => {
            eprintln!("error: {err:#}");
            report.status = "error".into();
            report.error = Some(format!("{err:#}"));
            (exit_code_for(&err), format!("{}\n", report.to_json()))
        }
    };
    if let Err(e) = emit(&cli.common, &text) {
        eprintln!("error: {e:#}");
        return ExitCode::from(EXIT_USAGE);
    }
    ExitCode::from(code)
}
