//! Experiment runner and reporting tool.
//!
//! Subcommands: `sweep`, `train`, `eval`, `replay`, `validate-schedule`,
//! `config`. Everything is seed-driven; rerunning a command with the same
//! config reproduces its output files byte for byte.

mod config;
mod run;

use std::path::PathBuf;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};

use config::FileConfig;

#[derive(Parser)]
#[command(
    name = "vdsim",
    version,
    about = "Roadside RF sensing simulator and classifier"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ClassesArg {
    /// Vehicle present versus none.
    Binary,
    /// N/S/M/L with overlapped windows dropped.
    Four,
    /// N/S/M/L plus the mixed-occupancy classes.
    Seven,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured sweep axis and write per-point results.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides the config).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Base seed (overrides the config's seed list with this one seed).
        #[arg(long)]
        seed: Option<u64>,
        /// Parallel sweep-point workers.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Measurement-phase layout (overrides the config).
        #[arg(long, value_parser = ["pg", "mpg", "dmpg"])]
        strategy: Option<String>,
    },
    /// Train a classifier on feature CSVs and report held-out accuracy.
    Train {
        /// Feature CSV files (unioned).
        #[arg(long, required = true, num_args = 1..)]
        data: Vec<PathBuf>,
        #[arg(long, value_enum, default_value = "four")]
        classes: ClassesArg,
        #[arg(long, default_value_t = 0.8)]
        split: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        model_out: PathBuf,
        #[arg(long)]
        report_out: Option<PathBuf>,
        /// Override inverse-frequency class weighting.
        #[arg(long)]
        balanced: Option<bool>,
        /// Use the linear kernel instead of RBF.
        #[arg(long, default_value_t = false)]
        linear: bool,
        #[arg(long, default_value_t = 1.0)]
        c: f64,
    },
    /// Evaluate a trained model on a feature CSV.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Score seven-class predictions in four-class space.
        #[arg(long, default_value_t = false)]
        project_four_class: bool,
        #[arg(long)]
        report_out: Option<PathBuf>,
    },
    /// Rebuild feature rows from a per-instance trace and a ground-truth log.
    Replay {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        ground_truth: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "seven")]
        classes: ClassesArg,
        #[arg(long, default_value_t = 0.2)]
        corridor_width_m: f64,
        /// Aggregate per measurement window (default) or emit one row per
        /// instance.
        #[arg(long, value_parser = ["window", "instance"], default_value = "window")]
        granularity: String,
    },
    /// Check the configured schedule against the timing constraint chain.
    ValidateSchedule {
        #[arg(long)]
        config: PathBuf,
    },
    /// Print configuration handling helpers.
    Config {
        /// Print the default experiment file.
        #[arg(long, default_value_t = false)]
        print_defaults: bool,
    },
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Sweep {
            config,
            out,
            seed,
            jobs,
            strategy,
        } => {
            let mut cfg = FileConfig::load(&config)?;
            if let Some(out) = out {
                cfg.experiment.out = out;
            }
            if let Some(seed) = seed {
                cfg.experiment.seeds = vec![seed];
            }
            if let Some(strategy) = strategy {
                cfg.schedule.0.strategy = strategy.parse().context("bad strategy")?;
            }
            run::sweep(&cfg, jobs)
        }
        Command::Train {
            data,
            classes,
            split,
            seed,
            model_out,
            report_out,
            balanced,
            linear,
            c,
        } => run::train(
            &data,
            classes,
            split,
            seed,
            &model_out,
            report_out.as_deref(),
            balanced,
            linear,
            c,
        ),
        Command::Eval {
            model,
            data,
            project_four_class,
            report_out,
        } => run::eval(&model, &data, project_four_class, report_out.as_deref()),
        Command::Replay {
            trace,
            ground_truth,
            out,
            classes,
            corridor_width_m,
            granularity,
        } => run::replay(
            &trace,
            &ground_truth,
            &out,
            classes,
            corridor_width_m,
            granularity == "instance",
        ),
        Command::ValidateSchedule { config } => {
            let cfg = FileConfig::load(&config)?;
            let report = cfg.schedule.0.validate();
            println!("{report}");
            if !report.is_ok() {
                // Violations are data, not faults; signal them distinctly.
                std::process::exit(4);
            }
            Ok(())
        }
        Command::Config { print_defaults } => {
            if print_defaults {
                print!("{}", FileConfig::default().to_toml());
            } else {
                println!("use --print-defaults to emit the default experiment file");
            }
            Ok(())
        }
    }
}
