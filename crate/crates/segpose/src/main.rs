use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use segpose::commands::{self, Overrides};
use segpose::formats::to_json;
use segpose::PipelineConfig;

#[derive(Parser)]
#[command(name = "segpose", version, about = "Segmentation-driven 6D pose pipeline on synthetic scenes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Config file plus the flags that override it.
#[derive(Args, Debug, Default)]
struct ConfigArgs {
    /// Pipeline config (JSON). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed; derives every per-stage seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of scenes.
    #[arg(long)]
    scenes: Option<usize>,
    /// `zero` or `default`.
    #[arg(long)]
    noise_profile: Option<String>,
    /// Comma separated: nf, hc, bn, bnN, oracle.
    #[arg(long, value_delimiter = ',')]
    strategies: Option<Vec<String>>,
    #[arg(long)]
    best_n: Option<usize>,
    /// Clustering link distance in pixels.
    #[arg(long)]
    threshold_px: Option<f64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl ConfigArgs {
    fn load(&self) -> segpose::Result<PipelineConfig> {
        let overrides = Overrides {
            seed: self.seed,
            scenes: self.scenes,
            noise_profile: self.noise_profile.clone(),
            strategies: self.strategies.clone(),
            best_n: self.best_n,
            threshold_px: self.threshold_px,
            output_dir: self.out.clone(),
        };
        commands::load_config(self.config.as_deref(), &overrides)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Sample models and scenes, then synthesize prediction and ground-truth grids.
    Simulate(ConfigArgs),
    /// Synthesize grids for existing models and scenes.
    Synth {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        scene_file: PathBuf,
    },
    /// Cluster predictions and select correspondences per strategy.
    Fuse {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        ground_truth: PathBuf,
    },
    /// RANSAC-EPnP on every correspondence set.
    Solve {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        scene_file: PathBuf,
        #[arg(long)]
        correspondences: PathBuf,
    },
    /// Score solutions and write the accuracy table.
    Evaluate {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        scene_file: PathBuf,
        #[arg(long)]
        correspondences: PathBuf,
        #[arg(long)]
        solutions: PathBuf,
    },
    /// Every stage end to end.
    Run(ConfigArgs),
    /// Finite-difference check of the loss gradients on random problems.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        configs: usize,
        #[arg(long, default_value_t = 1e-6)]
        step: f64,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
    /// Single-threaded fuse + solve time per object.
    Bench(ConfigArgs),
    /// Render a stored table.json as text.
    Report {
        #[arg(long)]
        table: PathBuf,
        /// Marks symmetric objects when given.
        #[arg(long)]
        models: Option<PathBuf>,
    },
}

fn execute(command: Command) -> segpose::Result<()> {
    match command {
        Command::Simulate(args) => {
            let dir = commands::simulate(&args.load()?)?;
            println!("{}", dir.display());
        }
        Command::Synth { config, models, scene_file } => {
            let dir = commands::synth(&config.load()?, &models, &scene_file)?;
            println!("{}", dir.display());
        }
        Command::Fuse { config, models, predictions, ground_truth } => {
            let dir = commands::fuse(&config.load()?, &models, &predictions, &ground_truth)?;
            println!("{}", dir.display());
        }
        Command::Solve { config, scene_file, correspondences } => {
            let dir = commands::solve(&config.load()?, &scene_file, &correspondences)?;
            println!("{}", dir.display());
        }
        Command::Evaluate { config, models, scene_file, correspondences, solutions } => {
            let config = config.load()?;
            commands::evaluate(&config, &models, &scene_file, &correspondences, &solutions)?;
            let dir = config.paths.output_dir.expect("validated by evaluate");
            print!("{}", commands::report(&dir.join("table.json"), Some(&models))?);
        }
        Command::Run(args) => {
            let config = args.load()?;
            commands::run(&config)?;
            let dir = config.paths.output_dir.expect("validated by run");
            print!("{}", commands::report(&dir.join("table.json"), Some(&dir.join("models.json")))?);
        }
        Command::Gradcheck { seed, configs, step, tolerance } => {
            print!("{}", to_json(&commands::gradcheck(seed, configs, step, tolerance)?, true))
        }
        Command::Bench(args) => print!("{}", to_json(&commands::bench(&args.load()?)?, true)),
        Command::Report { table, models } => print!("{}", commands::report(&table, models.as_deref())?),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
