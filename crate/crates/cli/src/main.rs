//! `milg`: slide pipeline from raw images to graph-level predictions.
//!
//! Exit codes: 0 on success, 1 for usage errors and bad input (missing
//! artifacts, malformed files, invalid settings), 2 for internal failures
//! such as non-finite values during training.

mod cli;
mod commands;
mod layout;
mod manifest;

use std::process::ExitCode;

use clap::Parser;
use log::error;

use milg_core::Exec;

use cli::{Cli, Command};
use commands::Context;
use layout::Workspace;

/// Environment variable overriding the worker thread count.
const THREADS_VAR: &str = "MILG_THREADS";

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();

    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return if usage {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };

    if let Err(msg) = configure_threads() {
        error!("{msg}");
        return ExitCode::from(1);
    }

    let ctx = Context {
        ws: Workspace::new(&cli.global.out),
        global: cli.global,
        exec: Exec::Parallel,
    };
    let result = match &cli.command {
        Command::Synth(a) => commands::synth(&ctx, a),
        Command::Tile(a) => commands::tile_slides(&ctx, a),
        Command::TrainAe(a) => commands::train_ae(&ctx, a),
        Command::Featurize(a) => commands::featurize_slides(&ctx, a),
        Command::TrainMil(a) => commands::train_mil_model(&ctx, a),
        Command::Score(a) => commands::score(&ctx, a),
        Command::BuildGraph(a) => commands::build_graphs(&ctx, a),
        Command::TrainGcn(a) => commands::train_gcn_model(&ctx, a),
        Command::Eval(a) => commands::eval(&ctx, a),
        Command::Sweep(a) => commands::run_sweep(&ctx, a),
        Command::Heatmap(a) => commands::heatmaps(&ctx, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::from(if e.is_user_error() { 1 } else { 2 })
        }
    }
}

fn configure_threads() -> Result<(), String> {
    let Ok(value) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let n: usize = value
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("{THREADS_VAR} must be a positive integer, got {value:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| format!("cannot size the thread pool: {e}"))
}
