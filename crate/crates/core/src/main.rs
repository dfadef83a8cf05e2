use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use clickqc::fusion::FusionMethod;
use clickqc::pipeline::{self, exit, PipelineError};
use clickqc::regressor::ForestParams;
use clickqc::simulator::{ArchetypeMix, DatasetConfig};

#[derive(Parser)]
#[command(name = "clickqc", version, about = "Clickstream-based segmentation quality control")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset directory.
    Simulate {
        #[arg(long, default_value_t = 20)]
        images: usize,
        /// Workers per crew.
        #[arg(long, default_value_t = 20)]
        workers: usize,
        #[arg(long, default_value = "diligent=0.4,sloppy=0.2,spammer=0.25,bounding-box=0.1,inverted=0.05")]
        mix: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Image i is annotated by crew i mod CREWS.
        #[arg(long, default_value_t = 10)]
        crews: usize,
        #[arg(long, default_value_t = 128)]
        size: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute the feature table of a dataset.
    Extract {
        #[arg(long)]
        dataset: PathBuf,
        /// Gaussian scale of the gradient, in pixels.
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the quality regressor on labeled feature rows.
    Train {
        #[arg(long)]
        features: PathBuf,
        #[arg(long, default_value_t = 500)]
        trees: usize,
        #[arg(long, default_value_t = 3)]
        min_leaf: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict segmentation quality for feature rows.
    Estimate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fuse each image's annotations into one mask and report DSC.
    Fuse {
        #[arg(long, default_value = "cw-mv")]
        method: FusionMethod,
        #[arg(long, default_value_t = 3)]
        lambda: usize,
        #[arg(long, default_value_t = 0.9)]
        epsilon_t: f64,
        #[arg(long)]
        dataset: PathBuf,
        /// Required by cw-mv and staple-qc.
        #[arg(long)]
        estimates: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print campaign cost against the number of required results.
    Cost {
        #[arg(long)]
        params: PathBuf,
        #[arg(long, default_value_t = 10000)]
        max_a: u64,
        #[arg(long, default_value_t = 500)]
        step: u64,
        /// Price of one annotation task.
        #[arg(long, default_value_t = 1.0)]
        unit_cost: f64,
    },
    /// Run a full simulated experiment from a TOML config.
    Experiment {
        #[arg(long)]
        config: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    match cli.command {
        Command::Simulate { images, workers, mix, seed, crews, size, out } => {
            let mix: ArchetypeMix = mix.parse()?;
            let cfg = DatasetConfig { n_images: images, n_workers: workers, mix, seed, crews, size };
            let d = pipeline::cmd_simulate(&cfg, &out)?;
            println!("wrote {} annotations on {} images to {}", d.annotations.len(), d.images.len(), out.display());
        }
        Command::Extract { dataset, sigma, out } => {
            let rows = pipeline::cmd_extract(&dataset, sigma, &out)?;
            println!("wrote {} feature rows to {}", rows.len(), out.display());
        }
        Command::Train { features, trees, min_leaf, seed, out } => {
            if trees == 0 || min_leaf == 0 {
                return Err(PipelineError::Config("--trees and --min-leaf must be positive".into()));
            }
            let params = ForestParams { n_trees: trees, min_samples_leaf: min_leaf, max_depth: None };
            pipeline::cmd_train(&features, &params, seed, &out)?;
            println!("wrote model to {}", out.display());
        }
        Command::Estimate { model, features, out } => {
            let est = pipeline::cmd_estimate(&model, &features, &out)?;
            println!("wrote {} estimates to {}", est.len(), out.display());
        }
        Command::Fuse { method, lambda, epsilon_t, dataset, estimates, seed, out } => {
            let recs = pipeline::cmd_fuse(&dataset, estimates.as_deref(), method, lambda, epsilon_t, seed, &out)?;
            print!("{}", pipeline::write_fusion_summary(&pipeline::summarize_fusion(&recs)));
        }
        Command::Cost { params, max_a, step, unit_cost } => {
            if step == 0 {
                return Err(PipelineError::Config("--step must be positive".into()));
            }
            print!("{}", pipeline::cmd_cost(&params, max_a, step, unit_cost)?);
        }
        Command::Experiment { config } => {
            let report = pipeline::cmd_experiment(&config)?;
            let (m, sd) = report.cv.mean_std_r2();
            println!("grouped CV R2 = {m:.4} +- {sd:.4}");
            print!("{}", pipeline::write_fusion_summary(&report.fusion));
            print!("{}", pipeline::write_sweep(&report.sweep));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::from(exit::OK as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
