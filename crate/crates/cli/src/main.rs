//! `dualode`: graph construction, synthetic data, simulation, training and
//! evaluation from the command line.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "dualode", version, about = "Hybrid physics / Neural ODE air-quality forecasting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the geospatial station graph and write graph.json.
    BuildGraph {
        #[arg(long)]
        stations: PathBuf,
        /// Plain-text elevation raster; flat terrain when omitted.
        #[arg(long)]
        elevation: Option<PathBuf>,
        /// Distance threshold in km.
        #[arg(long)]
        d_theta: f64,
        /// Ridge threshold in metres (`inf` disables the terrain check).
        #[arg(long)]
        m_theta: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a seeded synthetic dataset from a JSON spec.
    GenSynthetic {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the seed in the spec file.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Integrate the physics system with fixed parameters.
    Simulate {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        params: PathBuf,
        /// CSV with header `station_id,value`.
        #[arg(long)]
        x0: PathBuf,
        #[arg(long)]
        hours: f64,
        #[arg(long)]
        out: PathBuf,
        /// Spacing of the written trajectory, in hours.
        #[arg(long, default_value_t = 0.25)]
        output_step: f64,
        #[arg(long, default_value_t = 1e-9)]
        rtol: f64,
        #[arg(long, default_value_t = 1e-9)]
        atol: f64,
    },
    /// Train a model; writes metrics.jsonl, checkpoint.json and splits.json.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Forecast the horizon after the last complete history window.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score the checkpoint on the test split recorded in it.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        report: PathBuf,
        /// Writes the observation timestamps that were loaded.
        #[arg(long)]
        access_log: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::BuildGraph {
            stations,
            elevation,
            d_theta,
            m_theta,
            out,
        } => commands::build_graph(&stations, elevation.as_deref(), d_theta, m_theta, &out),
        Command::GenSynthetic { spec, out, seed } => commands::gen_synthetic(&spec, &out, seed),
        Command::Simulate {
            graph,
            params,
            x0,
            hours,
            out,
            output_step,
            rtol,
            atol,
        } => commands::simulate(&commands::SimulateArgs {
            graph,
            params,
            x0,
            hours,
            out,
            output_step,
            rtol,
            atol,
        }),
        Command::Train { config, data, out } => commands::train(&config, &data, &out),
        Command::Predict { checkpoint, data, out } => commands::predict(&checkpoint, &data, &out),
        Command::Evaluate {
            checkpoint,
            data,
            report,
            access_log,
        } => commands::evaluate(&checkpoint, &data, &report, access_log.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
