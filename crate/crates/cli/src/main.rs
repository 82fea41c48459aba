mod commands;
mod config;
mod error;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::ExperimentConfig;
use crate::error::CliError;
use crate::manifest::Manifest;

#[derive(Debug, Parser)]
#[command(name = "homest", version, about = "Multiscale Darcy forward models, homogenization and estimation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Harmonic-mean coefficient and cell corrector.
    Homogenize(RunArgs),
    /// Pressure and flux for one coefficient.
    Forward(RunArgs),
    /// Homogenization error table over a list of scales.
    Converge(RunArgs),
    /// Particle path errors against the homogenized flow.
    Transport(RunArgs),
    /// Scalar estimator consistency, single-scale and multiscale.
    EstimateScalar(RunArgs),
    /// Fluctuation central-limit diagnostic.
    Clt(RunArgs),
    /// One MAP fit of the macroscale coefficient.
    Map(RunArgs),
    /// Replicated variance comparison of the two MAP estimators.
    Study(RunArgs),
    /// Posterior density, Hellinger sweep and small-ball ratios.
    Posterior(RunArgs),
    /// Repeat a run recorded in a manifest.
    Rerun(RerunArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `master_seed` from the config.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, default_value = "runs")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct RerunArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, default_value = "runs")]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(dir) => {
            println!("{}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("homest: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(command: Command) -> Result<PathBuf, CliError> {
    let (expected, args) = match command {
        Command::Rerun(r) => {
            let m = manifest::read(&r.manifest)?;
            set_threads(r.threads)?;
            return execute(m.config, &r.out);
        }
        Command::Homogenize(a) => ("homogenize", a),
        Command::Forward(a) => ("forward", a),
        Command::Converge(a) => ("converge", a),
        Command::Transport(a) => ("transport", a),
        Command::EstimateScalar(a) => ("estimate-scalar", a),
        Command::Clt(a) => ("clt", a),
        Command::Map(a) => ("map", a),
        Command::Study(a) => ("study", a),
        Command::Posterior(a) => ("posterior", a),
    };
    let mut config = config::load(&args.config)?;
    if config.experiment.name() != expected {
        return Err(CliError::Config(format!(
            "config describes a `{}` experiment, not `{expected}`",
            config.experiment.name()
        )));
    }
    if let Some(seed) = args.seed {
        config.master_seed = seed;
    }
    set_threads(args.threads)?;
    execute(config, &args.out)
}

fn set_threads(threads: Option<usize>) -> Result<(), CliError> {
    if let Some(n) = threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    Ok(())
}

fn valid_run_id(id: &str) -> bool {
    !id.is_empty() && id != "." && id != ".." && id.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c))
}

fn execute(config: ExperimentConfig, out: &Path) -> Result<PathBuf, CliError> {
    let hash = manifest::config_hash(&config);
    let run_id = match &config.run_id {
        Some(id) if valid_run_id(id) => id.clone(),
        Some(id) => return Err(CliError::Config(format!("run_id `{id}` must be a plain file name"))),
        None => format!("{}-{}", config.experiment.name(), &hash[..12]),
    };
    let dir = out.join(&run_id);
    let outcome = match commands::run(&config.experiment, config.master_seed) {
        Ok(o) => o,
        Err(e) => {
            if e.exit_code() == 3 {
                std::fs::create_dir_all(&dir)?;
                std::fs::write(dir.join("error.txt"), format!("{e}\n"))?;
            }
            return Err(e);
        }
    };
    std::fs::create_dir_all(&dir)?;
    for (name, bytes) in &outcome.tables {
        std::fs::write(dir.join(name), bytes)?;
    }
    let m = Manifest {
        run_id,
        subcommand: config.experiment.name().to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        master_seed: config.master_seed,
        config_sha256: hash,
        tables: outcome.tables.iter().map(|(n, _)| n.clone()).collect(),
        config,
    };
    let json = serde_json::to_string_pretty(&m).expect("manifest serializes");
    std::fs::write(dir.join("manifest.json"), json + "\n")?;
    if let Some(reason) = outcome.flagged {
        std::fs::write(dir.join("error.txt"), format!("{reason}\n"))?;
        return Err(CliError::Flagged(reason));
    }
    Ok(dir)
}
