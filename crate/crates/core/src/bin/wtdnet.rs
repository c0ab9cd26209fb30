use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use wtdnet::config::RunConfig;
use wtdnet::metrics::render_report_table;
use wtdnet::pipeline::{self, Overrides};
use wtdnet::preprocess::SplitSet;
use wtdnet::{ModelKind, Result};

/// Water-table depth forecasting with TDC-LSTM and TDC-UnPWaveNet ensembles.
#[derive(Parser)]
#[command(name = "wtdnet", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic weather stack, target series and run.toml.
    Synth {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 520)]
        weeks: usize,
        #[arg(long, default_value_t = 8)]
        side: usize,
        /// Input window in weeks written to run.toml.
        #[arg(long, default_value_t = 104)]
        window: usize,
        #[arg(long, default_value = "synthetic")]
        out: PathBuf,
    },
    /// Train an ensemble and write checkpoints, manifest and loss curves.
    Train(RunArgs),
    /// Score the ensemble mean on one split.
    Evaluate(EvalArgs),
    /// Write per-date ensemble mean and standard deviation.
    Predict(EvalArgs),
    /// Draw observed depth, ensemble mean and the two-sigma band.
    Plot(EvalArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    model: Option<ModelKind>,
    #[arg(long)]
    sensor: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    ensemble_size: Option<usize>,
    /// Output directory; run files go to <out>/<sensor>/<model>.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Defaults to the run directory.
    #[arg(long)]
    checkpoint_dir: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    split: SplitSet,
}

impl RunArgs {
    fn load(&self) -> Result<RunConfig> {
        let overrides = Overrides {
            model: self.model,
            sensor: self.sensor.clone(),
            seed: self.seed,
            ensemble_size: self.ensemble_size,
            out: self.out.clone(),
        };
        overrides.apply(RunConfig::load(&self.config)?)
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth {
            seed,
            weeks,
            side,
            window,
            out,
        } => {
            let o = pipeline::synth(&out, seed, weeks, side, window)?;
            println!("weather: {}", o.weather_dir.display());
            println!("target:  {}", o.target_path.display());
            println!("config:  {}", o.config_path.display());
        }
        Command::Train(args) => {
            let cfg = args.load()?;
            let t = cfg.train_config();
            eprintln!(
                "training {} x{} on {} (lr {}, l2 {})",
                cfg.model.kind,
                t.seeds.len(),
                cfg.data.sensor,
                t.learning_rate,
                t.l2
            );
            let o = pipeline::train(&cfg)?;
            println!(
                "{} members, {} parameters each, {:.1} s",
                o.checkpoints.len(),
                o.manifest.parameter_count.total,
                o.manifest.wall_clock_seconds
            );
            println!("run directory: {}", o.run_dir.display());
        }
        Command::Evaluate(args) => {
            let cfg = args.run.load()?;
            let o = pipeline::evaluate(&cfg, args.checkpoint_dir.as_deref(), args.split)?;
            print!("{}", render_report_table(std::slice::from_ref(&o.report)));
            println!("report: {}", o.table_path.display());
        }
        Command::Predict(args) => {
            let cfg = args.run.load()?;
            let path = pipeline::predict(&cfg, args.checkpoint_dir.as_deref(), args.split)?;
            println!("predictions: {}", path.display());
        }
        Command::Plot(args) => {
            let cfg = args.run.load()?;
            let (csv, svg) = pipeline::plot(&cfg, args.checkpoint_dir.as_deref(), args.split)?;
            println!("predictions: {}", csv.display());
            println!("figure: {}", svg.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
