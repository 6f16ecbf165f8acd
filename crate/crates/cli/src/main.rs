use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use eki_core::runner::{self, ExperimentConfig};
use eki_core::Error;

#[derive(Parser)]
#[command(name = "eki", version, about = "Ensemble Kalman inversion subsampling campaigns")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a campaign from a TOML config file or a preset name
    Run {
        target: String,
        /// Override the master seed
        #[arg(long)]
        seed: Option<u64>,
        /// Override the number of runs
        #[arg(long)]
        runs: Option<usize>,
        /// Output directory (default: the config's output_dir, else runs/<name>)
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Override the final time
        #[arg(long)]
        t_end: Option<f64>,
    },
    /// Rebuild aggregate.csv from the run files of a campaign directory
    Aggregate { dir: PathBuf },
    /// Print the available preset names
    ListPresets,
    /// Check a config file or preset without running it
    Validate { target: String },
    /// Print a preset as TOML
    Show { preset: String },
}

fn resolve(target: &str) -> Result<ExperimentConfig, Error> {
    let path = Path::new(target);
    if path.is_file() {
        return ExperimentConfig::load(path);
    }
    runner::preset(target)
        .ok_or_else(|| Error::Config(format!("{target:?} is neither a config file nor a preset (see list-presets)")))
}

fn exec(cmd: Command) -> Result<(), Error> {
    match cmd {
        Command::Run { target, seed, runs, out, jobs, t_end } => {
            let mut cfg = resolve(&target)?;
            if let Some(s) = seed {
                cfg.master_seed = s;
            }
            if let Some(n) = runs {
                cfg.n_runs = n;
            }
            if let Some(t) = t_end {
                cfg.t_end = t;
            }
            cfg.validate()?;
            let dir = out.or_else(|| cfg.output_dir.clone()).unwrap_or_else(|| Path::new("runs").join(&cfg.name));
            let start = Instant::now();
            let manifest = runner::run_experiment(&cfg, &dir, jobs)?;
            let jumps: u64 = manifest.runs.iter().map(|r| r.jumps).sum();
            println!(
                "{}: {} runs ({} failed), {} jumps, {:.1}s -> {}",
                cfg.name,
                manifest.n_runs,
                manifest.n_failed,
                jumps,
                start.elapsed().as_secs_f64(),
                dir.display()
            );
            for r in manifest.runs.iter().filter(|r| r.error.is_some()) {
                eprintln!("run {}: {}", r.run, r.error.as_deref().unwrap_or_default());
            }
        }
        Command::Aggregate { dir } => {
            let (path, rows) = runner::aggregate(&dir)?;
            println!("{} rows -> {}", rows.len(), path.display());
        }
        Command::ListPresets => {
            for name in runner::list_presets() {
                println!("{name}");
            }
        }
        Command::Validate { target } => {
            let cfg = resolve(&target)?;
            cfg.validate()?;
            println!("{}: ok ({:?}, {:?}, {} runs, t_end {})", cfg.name, cfg.method, cfg.flow.variant, cfg.n_runs, cfg.t_end);
        }
        Command::Show { preset } => {
            let cfg = runner::preset(&preset).ok_or_else(|| Error::Config(format!("unknown preset {preset:?}")))?;
            print!("{}", cfg.to_toml()?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match exec(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => ExitCode::from(2),
                _ => ExitCode::from(3),
            }
        }
    }
}
