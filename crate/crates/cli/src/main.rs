use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sublaplacian::jobs::{self, exit, JobConfig};
use sublaplacian::Result;

/// Sub-Laplacian spectra and eigenvalue inequality checks.
#[derive(Parser)]
#[command(name = "sublab", version)]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute the lowest eigenpairs of the job's operator.
    Solve {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        vectors: Option<PathBuf>,
    },
    /// Run the job's inequality checks on a spectrum file.
    Check {
        config: PathBuf,
        /// Defaults to the job's output.spectrum.
        #[arg(long)]
        spectrum: Option<PathBuf>,
        #[arg(long)]
        vectors: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Tension diagnostics for the job's map.
    Tension {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve and check over a sequence of refined grids.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        levels: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Randomized check of the commutator inequality on symmetric matrices.
    LemmaLab {
        #[arg(long, default_value_t = 12)]
        dim: usize,
        #[arg(long, default_value_t = 200)]
        trials: usize,
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.5, 1.0, 2.0, 3.0])]
        p: Vec<f64>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
        #[arg(long, default_value = "lemma_lab.json")]
        out: PathBuf,
    },
}

fn cwd_relative(p: PathBuf) -> PathBuf {
    if p.is_absolute() {
        p
    } else {
        std::env::current_dir().map(|d| d.join(&p)).unwrap_or(p)
    }
}

fn load(config: &Path) -> Result<JobConfig> {
    JobConfig::load(config)
}

fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Solve { config, seed, out, vectors } => {
            let mut job = load(&config)?;
            if let Some(s) = seed {
                job.solver.seed = s;
            }
            if let Some(o) = out {
                job.output.spectrum = cwd_relative(o);
            }
            if let Some(v) = vectors {
                job.output.eigenvectors = Some(cwd_relative(v));
            }
            jobs::cmd_solve(&job)
        }
        Command::Check { config, spectrum, vectors, report } => {
            let mut job = load(&config)?;
            if let Some(r) = report {
                let r = cwd_relative(r);
                job.output.report_csv = r.with_extension("csv");
                job.output.report = r;
            }
            let spectrum = spectrum.map(cwd_relative).unwrap_or_else(|| job.resolve(&job.output.spectrum));
            let vectors = vectors
                .map(cwd_relative)
                .or_else(|| job.output.eigenvectors.as_ref().map(|v| job.resolve(v)).filter(|v| v.exists()));
            jobs::cmd_check(&job, &spectrum, vectors.as_deref())
        }
        Command::Tension { config, out } => {
            let mut job = load(&config)?;
            if let Some(o) = out {
                job.output.tension = cwd_relative(o);
            }
            jobs::cmd_tension(&job)
        }
        Command::Sweep { config, levels, seed } => {
            let mut job = load(&config)?;
            if let Some(s) = seed {
                job.solver.seed = s;
            }
            jobs::cmd_sweep(&job, levels)
        }
        Command::LemmaLab { dim, trials, p, seed, tol, out } => jobs::cmd_lemma_lab(dim, trials, &p, seed, tol, &out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let code = match run(cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            jobs::exit_code(&e)
        }
    };
    if code == exit::CHECK_FAILED {
        eprintln!("one or more checks failed");
    }
    ExitCode::from(code as u8)
}
