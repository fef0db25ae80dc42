//! `carnotlab` — config-driven batch runner for the library's experiments.
//!
//! Three subcommands: `run` executes one experiment described by a JSON
//! config and writes CSV results plus a hashing manifest; `validate`
//! checks a config without running anything; `list-builtins` prints the
//! available groups, metric kinds, and experiment kinds.
//!
//! Exit codes: 0 success, 2 invalid configuration, 3 solver failure or
//! (in strict mode) nonconvergence, 4 I/O failure.

mod config;
mod experiments;
mod output;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("solver: {0}")]
    Solver(String),
    #[error("i/o: {0}")]
    Io(#[source] std::io::Error),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Solver(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

/// Environment variable naming the default output directory.
const OUT_ENV: &str = "CARNOTLAB_OUT";

#[derive(Parser)]
#[command(
    name = "carnotlab",
    version,
    about = "Batch experiments on sub-Finsler Carnot groups"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Execute the experiment described by a JSON config file.
    Run {
        /// Path to the configuration document.
        config: PathBuf,
        /// Output directory (overrides the config and CARNOTLAB_OUT).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads for parallel solves (default: all cores).
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Parse and cross-check a config without running it.
    Validate {
        /// Path to the configuration document.
        config: PathBuf,
    },
    /// Print the builtin groups, metric kinds, and experiment kinds.
    ListBuiltins,
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Run {
            config,
            out,
            threads,
        } => cmd_run(&config, out, threads),
        Cmd::Validate { config } => cmd_validate(&config),
        Cmd::ListBuiltins => {
            cmd_list_builtins();
            Ok(())
        }
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

fn load(path: &Path) -> Result<(Vec<u8>, config::Prepared), CliError> {
    let bytes = std::fs::read(path).map_err(CliError::Io)?;
    let text = String::from_utf8(bytes.clone())
        .map_err(|_| CliError::Config("config file is not UTF-8".into()))?;
    let parsed = config::parse(&text)?;
    let dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let prepared = config::prepare(parsed, &dir)?;
    Ok((bytes, prepared))
}

fn cmd_run(
    path: &Path,
    out: Option<PathBuf>,
    threads: Option<usize>,
) -> Result<(), CliError> {
    if let Some(n) = threads {
        if n == 0 {
            return Err(CliError::Config("--threads: must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("--threads: {e}")))?;
    }
    let (bytes, prepared) = load(path)?;

    let out_dir = out
        .or_else(|| prepared.config.output_dir.clone())
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));

    let outcome = experiments::run(&prepared)?;
    let written = output::write_outputs(
        &out_dir,
        &bytes,
        prepared.config.seed,
        &prepared.config.experiment,
        outcome.tables,
    )?;
    for path in &written {
        println!("wrote {}", path.display());
    }
    if prepared.config.strict && !outcome.all_converged {
        return Err(CliError::Solver(
            "nonconvergence under strict mode (see the status columns)".into(),
        ));
    }
    println!(
        "ok: {} | {} file(s) | seed {}",
        prepared.config.experiment,
        written.len(),
        prepared.config.seed
    );
    Ok(())
}

fn cmd_validate(path: &Path) -> Result<(), CliError> {
    let (_, prepared) = load(path)?;
    // Constructing the gamma family exercises its metric configs too.
    if let Some(block) = &prepared.config.gamma {
        experiments::build_family(&block.family, &prepared.group)?;
    }
    println!(
        "ok: {} on {} ({} queries)",
        prepared.config.experiment,
        prepared.group.name(),
        prepared.pairs.len()
    );
    Ok(())
}

fn cmd_list_builtins() {
    println!("groups:");
    for name in carnotlab::group::builtin_names() {
        let spec = carnotlab::group::builtin(name).expect("registry is consistent");
        let group = carnotlab::CarnotGroup::new(spec).expect("builtins are valid");
        println!(
            "  {name}  dim={} horizontal={} step={}",
            group.dim(),
            group.horizontal_dim(),
            group.step()
        );
    }
    println!(
        "metrics: euclidean, elliptic, elliptic-oscillating, polyhedral, lp, checkerboard, \
         two-phase, min-of-norms"
    );
    println!("experiments: {}", config::Kind::all().join(", "));
}
