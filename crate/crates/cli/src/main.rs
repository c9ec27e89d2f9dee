//! `sketchnewton`: experiment harness for the parallel sketched Newton method.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{FileConfig, Policy, Task};

#[derive(Parser, Debug)]
#[command(
    name = "sketchnewton",
    version,
    about = "Parallel sketched Newton experiments"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand. Precedence: flag, then `--config`
/// file, then the subcommand's default.
#[derive(Args, Debug, Clone, Default)]
struct GlobalArgs {
    /// Master seed; every command is deterministic given it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// CSV output path (stdout when omitted).
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    /// Flat TOML file with any of the run-configuration keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Use reduced problem sizes (d = 2000 for table1).
    #[arg(long, global = true)]
    scale: bool,
    /// gaussian | rademacher | sparse-rademacher[:p]
    #[arg(long, global = true)]
    sketch: Option<String>,
    /// Number of workers.
    #[arg(long, global = true)]
    q: Option<usize>,
    /// Starting sketch size of the doubling search.
    #[arg(long, global = true)]
    m0: Option<usize>,
    /// Ridge parameter.
    #[arg(long, global = true, allow_hyphen_values = true)]
    lambda: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sketch-size search on power-law spectra.
    ///
    /// CSV columns: alpha,sketch,d_eff,trial,m_hat,success
    Table1 {
        /// Dimension (default 10000, or 2000 with --scale).
        #[arg(long)]
        d: Option<usize>,
        #[arg(long)]
        trials: Option<usize>,
        /// Run Gaussian, Rademacher and sparse Rademacher sketches.
        #[arg(long)]
        all_sketches: bool,
    },
    /// Run the sketched Newton solver and report optimality gaps.
    ///
    /// CSV columns: method,iteration,value,gap,grad_norm,alpha,m_hat,mean_lambda_hat
    Solve(SolveArgs),
    /// Bias proxy of corrected vs uncorrected estimators over sketch sizes.
    ///
    /// CSV columns: experiment,m,q,trial,metric,value
    BiasCurve {
        #[arg(long, value_enum, default_value = "l")]
        ensemble: EnsembleArg,
        #[arg(long, default_value_t = 500)]
        d: usize,
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Empirical Stieltjes transform and resolvent bilinear form against
    /// their Marchenko-Pastur deterministic equivalents.
    ///
    /// CSV columns: experiment,m,q,trial,metric,value
    DetEquiv {
        #[arg(long, default_value_t = 800)]
        d: usize,
        #[arg(long, default_value_t = 400)]
        m: usize,
        #[arg(long, default_value_t = -1.0, allow_hyphen_values = true)]
        z: f64,
        #[arg(long)]
        trials: Option<usize>,
        /// Power-law exponent of the spectrum; identity when omitted.
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// `‖W̄ − I‖` for `H = 0` across worker counts.
    ///
    /// CSV columns: experiment,m,q,trial,metric,value
    Wishart {
        #[arg(long, default_value_t = 200)]
        d: usize,
        #[arg(long, default_value_t = 50)]
        m: usize,
        /// Comma-separated worker counts (overrides --q).
        #[arg(long, value_delimiter = ',')]
        qs: Option<Vec<usize>>,
        #[arg(long)]
        trials: Option<usize>,
    },
}

#[derive(Args, Debug, Clone)]
struct SolveArgs {
    #[arg(long, value_enum)]
    task: Option<Task>,
    /// libsvm file; synthetic data when omitted.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    noise_sd: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long, value_enum)]
    policy: Option<Policy>,
    /// Also run the uncorrected (λ̂ = λ) solver and exact Newton.
    #[arg(long)]
    baselines: bool,
    /// Where to write the JSON run summary (default: `<output>.summary.json`,
    /// or stderr when writing CSV to stdout).
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
enum EnsembleArg {
    L,
    R,
    /// `H = 0`; both curves coincide.
    Zero,
}

impl GlobalArgs {
    fn as_file_config(&self) -> FileConfig {
        FileConfig {
            seed: self.seed,
            output: self.output.clone(),
            sketch: self.sketch.clone(),
            q: self.q,
            m0: self.m0,
            lambda: self.lambda,
            scale: self.scale.then_some(true),
            ..FileConfig::default()
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let file = match &cli.global.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    let mut merged = cli.global.as_file_config();
    if let Command::Solve(args) = &cli.command {
        merged = FileConfig {
            task: args.task,
            data: args.data.clone(),
            n: args.n,
            d: args.d,
            noise_sd: args.noise_sd,
            max_iters: args.max_iters,
            policy: args.policy,
            ..merged
        };
    }
    let cfg = merged.or(file);
    match cli.command {
        Command::Table1 {
            d,
            trials,
            all_sketches,
        } => commands::table1(&cfg, d, trials, all_sketches),
        Command::Solve(args) => commands::solve(cfg, args.baselines, args.summary),
        Command::BiasCurve {
            ensemble,
            d,
            trials,
        } => commands::bias_curve(&cfg, ensemble, d, trials),
        Command::DetEquiv {
            d,
            m,
            z,
            trials,
            alpha,
        } => commands::det_equiv(&cfg, d, m, z, trials, alpha),
        Command::Wishart { d, m, qs, trials } => commands::wishart(&cfg, d, m, qs, trials),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
