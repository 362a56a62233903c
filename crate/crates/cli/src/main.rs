use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dyndiff::sampler::Algorithm;
use dyndiff::tasks::TaskFamily;
use dyndiff_cli::{CliError, Overrides, Profile, RunConfig};

#[derive(Parser)]
#[command(name = "dyndiff", version, about = "Dynamics-aware trajectory diffusion for LTI systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the training set, test set and recorded experiment.
    GenData(Common),
    /// Train the denoiser on the generated dataset.
    Train(Common),
    /// Sample trajectories for every test condition.
    Sample {
        #[command(flatten)]
        common: Common,
        /// Algorithm to run; defaults to every algorithm in the config.
        #[arg(long, value_parser = parse_algorithm)]
        algorithm: Option<Algorithm>,
    },
    /// Compute error curves, residuals and diagnostics from sample dumps.
    Eval(Common),
    /// Run every stage end to end.
    Repro(Common),
}

#[derive(Args, Clone)]
struct Common {
    /// JSON run configuration; missing keys take profile defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    profile: Option<Profile>,
    #[arg(long, value_parser = parse_family)]
    family: Option<TaskFamily>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output root.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, env = "DYNDIFF_THREADS")]
    threads: Option<usize>,
    /// Train one denoiser per algorithm instead of a shared one.
    #[arg(long)]
    per_algorithm_training: bool,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            config: self.config.clone(),
            profile: self.profile,
            family: self.family,
            seed: self.seed,
            out: self.out.clone(),
            threads: self.threads,
            per_algorithm_training: self.per_algorithm_training,
        }
    }
}

fn parse_algorithm(s: &str) -> Result<Algorithm, String> {
    s.parse().map_err(|e: dyndiff::Error| e.to_string())
}

fn parse_family(s: &str) -> Result<TaskFamily, String> {
    match s {
        "lqr" => Ok(TaskFamily::Lqr),
        "waypoint" => Ok(TaskFamily::Waypoint),
        other => Err(format!("unknown family {other:?}; expected lqr or waypoint")),
    }
}

fn set_threads(threads: Option<usize>) -> Result<(), CliError> {
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::usage(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    let common = match &cli.command {
        Command::GenData(c) | Command::Train(c) | Command::Eval(c) | Command::Repro(c) => c,
        Command::Sample { common, .. } => common,
    };
    let ov = common.overrides();
    let cfg = RunConfig::load(&ov)?;
    set_threads(cfg.threads)?;
    match cli.command {
        Command::GenData(_) => dyndiff_cli::gen_data(&cfg),
        Command::Train(_) => dyndiff_cli::train(&cfg),
        Command::Sample { algorithm, .. } => match algorithm {
            Some(alg) => dyndiff_cli::sample(&cfg, alg),
            None => cfg.sampler.algorithms.iter().try_for_each(|&alg| dyndiff_cli::sample(&cfg, alg)),
        },
        Command::Eval(_) => dyndiff_cli::eval(&cfg),
        Command::Repro(_) => dyndiff_cli::repro(&ov).map(|_| ()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("dyndiff: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
