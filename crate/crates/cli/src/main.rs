use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lmc_cli::config::ConfigError;
use lmc_cli::{
    cmd_ensemble, cmd_interpolate, cmd_report, cmd_sweep, cmd_train, cmd_verify, ExperimentConfig,
    RunOptions,
};
use log::{error, info};

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(
    name = "lmc",
    version,
    about = "Linear mode connectivity experiments under data shift"
)]
struct Cli {
    /// Worker threads; more than one also runs repeat seeds concurrently.
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Experiment definition (TOML).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,

    /// Results root; overrides `output.dir` from the config.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Comma-separated repeat seeds; overrides `seeds` from the config.
    #[arg(long, value_name = "SEEDS", value_delimiter = ',')]
    seed_list: Option<Vec<u64>>,
}

#[derive(Subcommand)]
enum Command {
    /// Train the endpoint models of every repeat seed.
    Train(ExperimentArgs),
    /// Interpolate endpoint pairs and compute barriers (trains missing endpoints).
    Interpolate {
        #[command(flatten)]
        exp: ExperimentArgs,
        /// Interpolate these two checkpoint files instead of the seed pairs.
        #[arg(long, num_args = 2, value_names = ["A", "B"])]
        pair: Option<Vec<PathBuf>>,
    },
    /// Rerun the experiment over the configured batch-size x learning-rate grid.
    Sweep(ExperimentArgs),
    /// Compare interpolated-model and different-initialization ensembles.
    Ensemble(ExperimentArgs),
    /// Render SVG figures and a summary table from result CSVs.
    Report {
        #[arg(long, value_name = "DIR", default_value = "results")]
        results: PathBuf,
        /// Report directory (default: RESULTS/report).
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Recompute the hash of every artifact in the manifest.
    Verify {
        #[arg(long, value_name = "DIR", default_value = "results")]
        results: PathBuf,
    },
}

enum Failure {
    Config(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        match e.downcast_ref::<ConfigError>() {
            Some(c) => Failure::Config(c.to_string()),
            None => Failure::Runtime(e),
        }
    }
}

fn load(args: &ExperimentArgs) -> Result<(ExperimentConfig, RunOptions), Failure> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| Failure::Config(format!("cannot read {}: {e}", args.config.display())))?;
    let mut cfg = ExperimentConfig::from_toml(&text)
        .map_err(|e| Failure::Config(format!("{}: {e}", args.config.display())))?;
    if let Some(seeds) = &args.seed_list {
        cfg.seeds = seeds.clone();
    }
    if let Some(out) = &args.out {
        cfg.output.dir = out.clone();
    }
    cfg.validate()
        .map_err(|e| Failure::Config(format!("{}: {e}", args.config.display())))?;
    let opts = RunOptions::new(cfg.output.dir.clone());
    Ok((cfg, opts))
}

fn run(cli: Cli) -> Result<(), Failure> {
    let jobs = cli.jobs.unwrap_or(0);
    #[cfg(feature = "parallel")]
    if jobs > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| Failure::Runtime(e.into()))?;
    }
    let with_jobs = |mut opts: RunOptions| {
        opts.parallel_seeds = jobs > 1;
        opts
    };
    match cli.command {
        Command::Train(args) => {
            let (cfg, opts) = load(&args)?;
            cmd_train(&cfg, &with_jobs(opts))?;
        }
        Command::Interpolate { exp, pair } => {
            let (cfg, opts) = load(&exp)?;
            let pair = pair.as_deref().map(|p| (p[0].as_path(), p[1].as_path()));
            cmd_interpolate(&cfg, &with_jobs(opts), pair)?;
        }
        Command::Sweep(args) => {
            let (cfg, opts) = load(&args)?;
            if cfg.sweep.is_none() {
                return Err(Failure::Config(format!(
                    "{}: sweep: section is required",
                    args.config.display()
                )));
            }
            for c in cmd_sweep(&cfg, &with_jobs(opts))? {
                println!(
                    "B={:<5} lr={:<8e} g={:<10.4} median {} barrier ({}) {:.4}  median Δ {:+.4}",
                    c.batch_size,
                    c.learning_rate,
                    c.noise_scale,
                    c.variant.label(),
                    c.set,
                    c.median_barrier,
                    c.median_delta
                );
            }
        }
        Command::Ensemble(args) => {
            let (cfg, opts) = load(&args)?;
            if cfg.ensemble.is_none() {
                return Err(Failure::Config(format!(
                    "{}: ensemble: section is required",
                    args.config.display()
                )));
            }
            for o in cmd_ensemble(&cfg, &with_jobs(opts))? {
                println!(
                    "seed {}: WA lmc {:.4} seeds {:.4} (Δ {:+.4}); majority acc lmc {:.4} seeds {:.4}",
                    o.seed, o.lmc.wa_mean, o.seeds.wa_mean, o.comparison.d_wa, o.lmc.acc_majority, o.seeds.acc_majority
                );
            }
        }
        Command::Report { results, out } => {
            let out = out.unwrap_or_else(|| results.join("report"));
            let summary = cmd_report(&results, &out)?;
            info!(
                "{} runs, {} files written to {}",
                summary.runs,
                summary.files.len(),
                out.display()
            );
            println!("{}", out.join("summary.md").display());
        }
        Command::Verify { results } => verify(&results)?,
    }
    Ok(())
}

fn verify(results: &Path) -> Result<(), Failure> {
    let report = cmd_verify(results)?;
    for p in &report.problems {
        println!("FAIL {p}");
    }
    println!(
        "{} artifacts checked, {} problems",
        report.checked,
        report.problems.len()
    );
    if report.problems.is_empty() {
        Ok(())
    } else {
        Err(Failure::Runtime(anyhow::anyhow!(
            "manifest verification failed"
        )))
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            error!("config error: {msg}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Runtime(e)) => {
            error!("{e:#}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
