//! Batch front end for the origin-destination-time factorization library.
//!
//! Exit codes: 0 success, 2 input or configuration error, 3 solver failure.

mod commands;
mod config;

use clap::{Args, Parser, Subcommand};
use commands::{
    cmd_analyze, cmd_complete, cmd_factorize, cmd_ingest, cmd_sequence, cmd_sweep, cmd_synth,
    AnalyzeArgs, CompleteArgs, FactorizeArgs, IngestArgs, SequenceArgs, SweepArgs, SynthArgs,
};
use config::RunConfig;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "odtf", version, about = "Origin-destination-time tensor factorization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonOpts {
    /// JSON run configuration; flags override its fields
    #[arg(long)]
    config: Option<PathBuf>,
    /// Random seed override
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (also settable via ODTF_OUT_DIR)
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Build tensor, context, and graph artifacts from raw CSVs
    Ingest {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        trips: PathBuf,
        #[arg(long)]
        poi: PathBuf,
        #[arg(long)]
        adjacency: PathBuf,
        #[arg(long)]
        zones: usize,
        #[arg(long)]
        slices: usize,
    },
    /// Factorize a tensor into a checkpoint and report
    Factorize {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        tensor: PathBuf,
        #[arg(long)]
        context: PathBuf,
        #[arg(long)]
        graph: Option<PathBuf>,
        /// Disable the neighboring-regularization pass
        #[arg(long)]
        no_nr: bool,
    },
    /// Masked completion protocol across sampling rates
    Complete {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        tensor: PathBuf,
        #[arg(long)]
        context: PathBuf,
        #[arg(long)]
        graph: PathBuf,
        /// Sampling rates; defaults to 0.5 0.6 0.7 0.8 0.9
        #[arg(long, num_args = 1.., value_delimiter = ',')]
        rates: Vec<f64>,
    },
    /// Multi-year sequence solve from a manifest
    Sequence {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        graph: Option<PathBuf>,
    },
    /// RMSE sweeps over pattern dimensionality
    Sweep {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        tensor: PathBuf,
        #[arg(long)]
        context: PathBuf,
        #[arg(long, num_args = 1.., value_delimiter = ',', default_values_t = vec![2, 4, 6])]
        spatial_dims: Vec<usize>,
        #[arg(long, num_args = 1.., value_delimiter = ',', default_values_t = vec![2, 3, 4])]
        temporal_dims: Vec<usize>,
    },
    /// Generate a planted synthetic city
    Synth {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long, default_value_t = 6)]
        grid_width: usize,
        #[arg(long, default_value_t = 5)]
        grid_height: usize,
        #[arg(long, default_value_t = 12)]
        slices: usize,
        #[arg(long, default_value_t = 4)]
        dim_i: usize,
        #[arg(long, default_value_t = 4)]
        dim_j: usize,
        #[arg(long, default_value_t = 3)]
        dim_k: usize,
        #[arg(long, default_value_t = 0.01)]
        noise: f64,
        /// Number of fixture trips to emit alongside the planted tensor
        #[arg(long, default_value_t = 1000)]
        trips: usize,
    },
    /// Interpretation reports from a checkpoint
    Analyze {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

fn load_config(common: &CommonOpts) -> anyhow::Result<RunConfig> {
    let mut config = RunConfig::load(common.config.as_deref())?;
    if let Some(seed) = common.seed {
        config.seed = Some(seed);
    }
    Ok(config)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Ingest {
            common,
            trips,
            poi,
            adjacency,
            zones,
            slices,
        } => {
            let config = load_config(&common)?;
            cmd_ingest(
                &IngestArgs {
                    trips,
                    poi,
                    adjacency,
                    zones,
                    slices,
                },
                &config,
                common.out_dir.as_deref(),
            )
        }
        Command::Factorize {
            common,
            tensor,
            context,
            graph,
            no_nr,
        } => {
            let config = load_config(&common)?;
            cmd_factorize(
                &FactorizeArgs {
                    tensor,
                    context,
                    graph,
                    no_nr,
                },
                &config,
                common.out_dir.as_deref(),
            )
        }
        Command::Complete {
            common,
            tensor,
            context,
            graph,
            rates,
        } => {
            let config = load_config(&common)?;
            cmd_complete(
                &CompleteArgs {
                    tensor,
                    context,
                    graph,
                    rates,
                },
                &config,
                common.out_dir.as_deref(),
            )
        }
        Command::Sequence {
            common,
            manifest,
            graph,
        } => {
            let config = load_config(&common)?;
            cmd_sequence(&SequenceArgs { manifest, graph }, &config, common.out_dir.as_deref())
        }
        Command::Sweep {
            common,
            tensor,
            context,
            spatial_dims,
            temporal_dims,
        } => {
            let config = load_config(&common)?;
            cmd_sweep(
                &SweepArgs {
                    tensor,
                    context,
                    spatial_dims,
                    temporal_dims,
                },
                &config,
                common.out_dir.as_deref(),
            )
        }
        Command::Synth {
            common,
            grid_width,
            grid_height,
            slices,
            dim_i,
            dim_j,
            dim_k,
            noise,
            trips,
        } => {
            let config = load_config(&common)?;
            cmd_synth(
                &SynthArgs {
                    grid_width,
                    grid_height,
                    slices,
                    dim_i,
                    dim_j,
                    dim_k,
                    noise,
                    trips,
                },
                &config,
                common.out_dir.as_deref(),
            )
        }
        Command::Analyze { common, checkpoint } => {
            let config = load_config(&common)?;
            cmd_analyze(&AnalyzeArgs { checkpoint }, &config, common.out_dir.as_deref())
        }
    }
}

fn is_solver_failure(err: &anyhow::Error) -> bool {
    err.chain()
        .any(|cause| matches!(cause.downcast_ref::<odtf_core::Error>(), Some(odtf_core::Error::Solver(_))))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            if is_solver_failure(&err) {
                ExitCode::from(3)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
