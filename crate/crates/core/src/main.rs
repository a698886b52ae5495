use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{error, info};

use symecho::runner::{parse_config_for, run_experiment, ExperimentKind, RunOptions, MANIFEST_FILE};
use symecho::{Error, Result};

/// Fidelity decay simulations for kicked tops and random unitary ensembles.
#[derive(Parser)]
#[command(version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Averaged fidelity curves and decay fits.
    Fidelity(RunArgs),
    /// Averaged local density of states and line-shape fits.
    Ldos(RunArgs),
    /// Eigenangle spacing statistics of an ensemble.
    EnsembleStats(RunArgs),
    /// Dimension and checks for a parity sector.
    SectorInfo(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory, overriding `output_dir`.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Worker threads.
    #[arg(long)]
    threads: Option<usize>,
    /// Master seed, overriding `trials.master_seed`.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, short)]
    verbose: bool,
}

fn run(kind: ExperimentKind, args: RunArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.config).map_err(|source| Error::Io {
        path: args.config.clone(),
        source,
    })?;
    let mut config = parse_config_for(&text, Some(kind))?;
    if let Some(seed) = args.seed {
        // re-resolve so seed-derived defaults follow the override
        let mut table = config.to_table();
        if let Some(p) = table.get_mut("perturbation").and_then(|v| v.as_table_mut()) {
            if !text_has_basis_seed(&text) {
                p.remove("basis_seed");
            }
        }
        table["trials"]
            .as_table_mut()
            .expect("trials table")
            .insert("master_seed".into(), toml::Value::Integer(seed as i64));
        config = parse_config_for(&toml::to_string(&table).expect("table serialises"), Some(kind))?;
    }
    if let Some(dir) = args.output {
        config.output_dir = dir;
    }
    if args.threads == Some(0) {
        return Err(Error::Config {
            key: "--threads".into(),
            reason: "must be at least 1".into(),
        });
    }
    let manifest = run_experiment(&config, &RunOptions { threads: args.threads })?;
    for (name, digest) in &manifest.outputs {
        info!("{name} {digest}");
    }
    println!(
        "wrote {} files and {} to {} in {:.1} s",
        manifest.outputs.len(),
        MANIFEST_FILE,
        config.output_dir.display(),
        manifest.wall_clock_seconds
    );
    Ok(())
}

fn text_has_basis_seed(text: &str) -> bool {
    text.parse::<toml::Table>()
        .ok()
        .and_then(|t| t.get("perturbation")?.get("basis_seed").cloned())
        .is_some()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, args) = match cli.command {
        Command::Fidelity(a) => (ExperimentKind::Fidelity, a),
        Command::Ldos(a) => (ExperimentKind::Ldos, a),
        Command::EnsembleStats(a) => (ExperimentKind::EnsembleStats, a),
        Command::SectorInfo(a) => (ExperimentKind::SectorInfo, a),
    };
    let level = if args.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(kind, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                error!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::FAILURE
        }
    }
}
