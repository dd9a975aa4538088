//! The `top` command line: extraction, simulation, labeling, evaluation,
//! statistics, and loss checks over sequences on disk.

pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;

use std::ffi::OsString;
use std::io::Write;
use std::panic::{self, AssertUnwindSafe};
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use config::{parse_bounds, Overrides, RunConfig};
use error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "top", version, about = "Temporal overlapping points for LiDAR sequences")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Crop box as x0,x1,y0,y1,z0,z1.
    #[arg(long, global = true, value_parser = parse_bounds, allow_hyphen_values = true)]
    pub bounds: Option<[f64; 6]>,
    /// Adjacent scans on each side of the current scan.
    #[arg(long, global = true)]
    pub n: Option<u32>,
    /// Beam divergence angle in radians.
    #[arg(long, global = true)]
    pub divergence: Option<f64>,
    /// Confidence threshold of the occupied band.
    #[arg(long = "lambda-occ", global = true)]
    pub lambda_occ: Option<f64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write overlap and reconstruction files for every eligible scan.
    Extract {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate a dataset from a scene and a sensor trajectory.
    Simulate {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        trajectory: PathBuf,
        /// Spinning LiDAR description (default: 32 channels, 1024 azimuths).
        #[arg(long)]
        lidar: Option<PathBuf>,
        /// Override the azimuth count per sweep.
        #[arg(long)]
        azimuths: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Label points as static, moving, or unknown from tracked boxes.
    Label {
        #[arg(long)]
        dataset: PathBuf,
        /// Label directory (default: <dataset>/labels).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate binary moving predictions.
    Eval {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Write the JSON report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Size distribution of moving objects.
    Stats {
        #[arg(long, conflicts_with = "counts")]
        dataset: Option<PathBuf>,
        /// Whitespace-separated per-object point counts.
        #[arg(long)]
        counts: Option<PathBuf>,
        /// Object percentiles to report.
        #[arg(long, value_delimiter = ',', default_values_t = [25.0, 50.0, 75.0, 90.0])]
        quantiles: Vec<f64>,
        /// Also write the curve as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Compute reference losses for stored labels and given probabilities.
    LossCheck {
        #[arg(long)]
        overlap: Option<PathBuf>,
        /// One "free occupied unknown" probability triple per overlap record.
        #[arg(long = "overlap-pred")]
        overlap_pred: Option<PathBuf>,
        #[arg(long)]
        recon: Option<PathBuf>,
        #[arg(long = "recon-pred")]
        recon_pred: Option<PathBuf>,
        /// Samples per beam in the recon file (default: from config).
        #[arg(long = "per-beam")]
        per_beam: Option<usize>,
    },
}

impl Cli {
    fn overrides(&self) -> Overrides {
        Overrides {
            threads: self.threads,
            seed: self.seed,
            bounds: self.bounds,
            n: self.n,
            divergence: self.divergence,
            lambda_occ: self.lambda_occ,
        }
    }
}

fn dispatch(cli: &Cli, cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    match &cli.command {
        Command::Extract { dataset, out: dir } => commands::extract(cfg, dataset, dir, out),
        Command::Simulate {
            scene,
            trajectory,
            lidar,
            azimuths,
            out: dir,
        } => commands::simulate(
            cfg,
            &commands::SimulateArgs {
                scene,
                trajectory,
                lidar: lidar.as_deref(),
                azimuths: *azimuths,
                out_dir: dir,
            },
            out,
        ),
        Command::Label { dataset, out: dir } => commands::label(cfg, dataset, dir.as_deref(), out),
        Command::Eval {
            dataset,
            predictions,
            labels,
            out: report,
        } => commands::evaluate(
            cfg,
            &commands::EvalArgs {
                dataset,
                predictions: predictions.as_deref(),
                labels: labels.as_deref(),
                report: report.as_deref(),
            },
            out,
        ),
        Command::Stats {
            dataset,
            counts,
            quantiles,
            csv,
        } => commands::stats(
            cfg,
            &commands::StatsArgs {
                dataset: dataset.as_deref(),
                counts: counts.as_deref(),
                quantiles,
                csv: csv.as_deref(),
            },
            out,
        ),
        Command::LossCheck {
            overlap,
            overlap_pred,
            recon,
            recon_pred,
            per_beam,
        } => commands::loss_check(
            cfg,
            &commands::LossArgs {
                overlap: overlap.as_deref(),
                overlap_predictions: overlap_pred.as_deref(),
                recon: recon.as_deref(),
                recon_predictions: recon_pred.as_deref(),
                per_beam: *per_beam,
            },
            out,
        ),
    }
}

/// Runs a parsed command on a pool of `threads` workers when requested.
pub fn execute(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    let cfg = RunConfig::resolve(cli.config.as_deref(), &cli.overrides())?;
    match cfg.threads {
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .map_err(|e| CliError::Internal(format!("thread pool: {e}")))?;
            // Output is buffered because the caller's writer need not be Send.
            let mut buf = Vec::new();
            let r = pool.install(|| dispatch(cli, &cfg, &mut buf));
            out.write_all(&buf)
                .map_err(|e| CliError::Internal(format!("stdout: {e}")))?;
            r
        }
        None => dispatch(cli, &cfg, out),
    }
}

/// Parses `args` (including the program name), runs the command, and
/// returns the process exit code. Errors are reported on stderr.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = panic::catch_unwind(AssertUnwindSafe(|| execute(&cli, out)));
    match result {
        Ok(Ok(())) => 0,
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            eprintln!("error: internal: {msg}");
            CliError::Internal(msg).exit_code()
        }
    }
}

/// Logging controlled by `TOP_LOG` (e.g. `TOP_LOG=info`).
pub fn init_logging() {
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter_or("TOP_LOG", "warn")).try_init();
}
