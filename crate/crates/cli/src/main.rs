//! `ramia`: command-line front end for range membership inference runs.
//!
//! Outputs land in `<out-dir>/<config hash>/`; a subcommand whose outputs are
//! already present does nothing unless `--force` is given.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use commands::{Command, Run};
use config::Config;
use ramia_core::Error;

#[derive(Debug, Parser)]
#[command(name = "ramia", version, about = "Range membership inference attacks and evaluation")]
struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "runs")]
    out_dir: PathBuf,
    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Recompute outputs even if they exist.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

const EXIT_PIPELINE: u8 = 1;
const EXIT_USAGE: u8 = 2;

fn fail(kind: &str, message: impl ToString, code: u8) -> ExitCode {
    let err = serde_json::json!({ "error": kind, "message": message.to_string() });
    eprintln!("{err}");
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();

    let Some(config_path) = cli.config else {
        return fail("usage", "--config is required", EXIT_USAGE);
    };
    let mut cfg = match Config::load(&config_path) {
        Ok(cfg) => cfg,
        Err(msg) => return fail("config", msg, EXIT_USAGE),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Err(msg) = cfg.validate() {
        return fail("config", msg, EXIT_USAGE);
    }
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return fail("usage", "--jobs must be at least 1", EXIT_USAGE);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            return fail("usage", e, EXIT_USAGE);
        }
    }

    let dir = cli.out_dir.join(cfg.hash());
    if let Err(e) = std::fs::create_dir_all(&dir) {
        return fail("io", format!("{}: {e}", dir.display()), EXIT_PIPELINE);
    }
    let config_copy = dir.join("config.json");
    if !config_copy.exists() {
        let text = serde_json::to_string_pretty(&cfg).expect("config serializes") + "\n";
        if let Err(e) = std::fs::write(&config_copy, text) {
            return fail("io", format!("{}: {e}", config_copy.display()), EXIT_PIPELINE);
        }
    }

    let run = Run { cfg, dir, force: cli.force };
    match commands::execute(&run, cli.command) {
        Ok(()) => {
            println!("{}", run.dir.display());
            ExitCode::SUCCESS
        }
        Err(e @ Error::Config(_)) => fail(e.kind(), e, EXIT_USAGE),
        Err(e) => fail(e.kind(), e, EXIT_PIPELINE),
    }
}
